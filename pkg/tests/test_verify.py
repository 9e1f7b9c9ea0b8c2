import numpy as np
import pytest

from hkflow import flow
from hkflow import geometry as geo
from hkflow import grid as gs
from hkflow import verify
from hkflow.errors import ConfigInvalid

PI = np.pi


def run(eps, N=32, dt=5e-4, T=0.4, every=20, n=1):
    g = gs.make_grid(n, N)
    pb = flow.make_problem(geo.constant_metric(g))
    if n == 1:
        phi0 = eps * np.cos(2 * PI * g.x(0))
        psi0 = eps * np.cos(2 * PI * g.y(0))
    else:
        phi0 = gs.fourier_mode(g, (1, 0, 0, 0), eps) + gs.fourier_mode(g, (0, 0, 0, 1), eps)
        psi0 = gs.fourier_mode(g, (0, 1, 0, 0), eps) + gs.fourier_mode(g, (0, 0, 1, 0), eps, "sin")
    s0 = flow.initial_state(pb, phi0, psi0)
    return flow.integrate_flow(pb, s0, dt, T, snapshot_every=every, record_series=False)


@pytest.fixture(scope="module")
def nonlinear():
    return run(0.02)


@pytest.fixture(scope="module")
def linear():
    return run(1e-4)


def test_static_flat_trajectory_is_exact():
    tr = run(0.0, T=1.2, dt=5e-3, every=10)
    reports = verify.verify_trajectory(tr)
    assert [r.name for r in reports] == list(verify.IDENTITY_ORDER)
    for r in reports:
        assert r.exact and r.passed and max(r.residual_max) <= 1e-12, r.name


def test_nonlinear_suite_converges_at_second_order(nonlinear):
    reports = verify.verify_trajectory(nonlinear, centers=[0.12, 0.2, 0.28])
    for r in reports:
        assert r.passed, (r.name, r.order, r.residual_max)
        assert 1.8 <= r.order <= 2.2


def test_halving_ratio(linear):
    coarse = verify.residual_riemann_evolution(linear.every(2), centers=[0.2])
    fine = verify.residual_riemann_evolution(linear, centers=[0.2])
    assert 3.5 <= coarse.residual_max[0] / fine.residual_max[0] <= 4.5
    assert fine.residual_max[0] < 1e-4


def test_single_level_wrappers(linear):
    reps = verify.residual_inverse_metric(linear, centers=[0.2])
    assert {r.name for r in reps} == {"inverse_metric_first", "inverse_metric_second"}
    for fn in (verify.residual_ricci_evolution, verify.residual_scalar_evolution):
        assert fn(linear, centers=[0.2]).residual_max[0] < 1e-4
    cv = verify.residual_christoffel_volume(linear, centers=[0.2])
    assert {r.name for r in cv} == {"christoffel", "volume_form"}
    ints = verify.residual_integrals(linear, centers=[0.2])
    assert all(r.residual_max[0] < 1e-6 for r in ints)
    assert abs(ints[0].gauge["integral_R"][0]) < 1e-10


def test_ricci_potential_gauge_is_fitted(linear):
    rep = verify.residual_ricci_potential(linear, centers=[0.2])
    assert rep.residual_max[0] < 1e-4
    assert "c" in rep.gauge


def test_ricci_potential_ignores_constant_shifts(linear, monkeypatch):
    base = verify.residual_ricci_potential(linear, centers=[0.2]).residual_max[0]
    shifts = iter([0.3, -1.7, 2.5])
    orig = geo.ricci_potential
    monkeypatch.setattr(geo, "ricci_potential", lambda m: orig(m) + next(shifts))
    shifted = verify.residual_ricci_potential(linear, centers=[0.2]).residual_max[0]
    assert abs(shifted - base) < 1e-9


def test_assembly_replays_on_linear_run(linear):
    c = verify.SnapshotGeometry(linear.problem, linear.snapshots[len(linear.snapshots) // 2])
    assert verify.replay_ricci_from_riemann(c) < 1e-10
    assert verify.replay_scalar_from_ricci(c) < 1e-10


def test_frame_sanity(nonlinear):
    c = verify.SnapshotGeometry(nonlinear.problem, nonlinear.snapshots[10])
    assert max(verify.frame_sanity(c).values()) < 1e-12


def test_n2_frame_and_symmetry():
    tr = run(1e-3, N=8, dt=2.5e-3, T=0.05, every=4, n=2)
    c = verify.SnapshotGeometry(tr.problem, tr.snapshots[-1])
    assert max(verify.frame_sanity(c).values()) < 1e-12
    # frame lowering of g gives the identity and Cholesky inverts it
    lam = verify._cholesky(c.grid, c.metric.g)
    rebuilt = np.einsum("ia...,ja...->ij...", lam, np.conj(lam))
    assert np.max(np.abs(rebuilt - c.metric.g)) < 1e-14


def test_commutator_check():
    g = gs.make_grid(1, 64)
    m = geo.conformal_metric(g, 0.1 * np.cos(2 * PI * g.x(0)))
    rep = verify.commutator_check(m, gs.ddbar(g, 0.05 * np.cos(2 * PI * g.x(0))))
    assert rep.passed and rep.residual_max[0] < 1e-10


def test_dt_tensor_and_order():
    t = np.linspace(0, 1, 5)
    vals = [np.sin(x) for x in t[1:4]]
    h = t[1] - t[0]
    assert verify.dt_tensor(vals, h, 1) == pytest.approx(np.cos(0.5), rel=2e-2)
    assert verify.dt_tensor(vals, h, 2) == pytest.approx(-np.sin(0.5), rel=1e-2)
    with pytest.raises(ConfigInvalid):
        verify.dt_tensor(vals[:2], h, 1)
    with pytest.raises(ConfigInvalid):
        verify.dt_tensor(vals, h, 3)
    assert verify.convergence_order([4, 2, 1], [16, 4, 1]) == pytest.approx(2.0)


def test_judge():
    rep = verify.IdentityReport("x", [0.04, 0.02, 0.01], [1.6e-3, 4e-4, 1e-4], [0, 0, 0])
    assert verify.judge(rep).passed
    assert not verify.judge(rep, ceiling=1e-5).passed
    bad = verify.IdentityReport("x", [0.04, 0.02, 0.01], [1e-3, 5e-4, 2.5e-4], [0, 0, 0])
    assert not verify.judge(bad).passed
    zero = verify.IdentityReport("x", [0.04, 0.02], [0.0, 1e-13], [0, 0])
    assert verify.judge(zero).exact
    one = verify.IdentityReport("x", [0.01], [1e-3], [0])
    assert not verify.judge(one).passed
    nan = verify.IdentityReport("x", [0.02, 0.01], [np.nan, 1.0], [0, 0])
    assert not verify.judge(nan).passed


def test_verify_needs_two_levels(linear):
    with pytest.raises(ConfigInvalid):
        verify.verify_trajectory(linear, strides=(1,))
