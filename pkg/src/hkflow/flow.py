"""Integrators for the hyperbolic Kähler-Ricci flow on the torus.

Two independent routes are provided:

* the scalar route evolves a potential ``phi`` under the hyperbolic complex
  Monge-Ampère equation ``phi_tt = log det g(t) - log det g0 - f0`` with
  ``g(t) = g0 + d dbar phi``, stepped with kick-drift-kick leapfrog;
* the tensor route evolves ``g_{i jbar}`` directly under ``g_tt = -Ric(g)``,
  stepped with drift-kick-drift leapfrog.

Both are second order and time reversible. Using different leapfrog variants
keeps their discrepancy a genuine ``O(dt^2)`` quantity.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import geometry as geo
from . import grid as gs
from .errors import CflViolation, ConfigInvalid, MetricDegenerate, NonFinite

log = logging.getLogger(__name__)

SERIES_COLUMNS = ("t", "vol", "r", "max_abs_R", "min_eig_g", "mean_phi")


@dataclass(frozen=True, eq=False)
class FlowProblem:
    """Fixed data of a potential-flow run: background metric and its Ricci potential."""

    g0: geo.MetricField
    f0: np.ndarray
    dealias: bool = True

    @property
    def grid(self):
        return self.g0.grid

    @property
    def logdet0(self):
        return np.log(self.g0.det)


def make_problem(g0, dealias=True):
    return FlowProblem(g0, f0_of_initial(g0), dealias)


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    phi: np.ndarray
    psi: np.ndarray
    step: int = 0
    # MA right-hand side at (t, phi), reused by the next kick.
    accel: np.ndarray | None = field(default=None, repr=False)
    min_eig: float | None = field(default=None, repr=False)

    def metric(self, problem):
        return geo.metric_from_potential(problem.g0, self.phi)

    def metric_velocity(self, grid):
        """``d g / dt = d dbar psi``, exact for the potential route."""
        return gs.ddbar(grid, self.psi)


@dataclass(frozen=True, eq=False)
class TensorFlowState:
    t: float
    g: np.ndarray
    gdot: np.ndarray
    step: int = 0


@dataclass
class SingularityReport:
    last_good_t: float
    failed_t: float
    blowup_t_estimate: float
    location: tuple | None
    min_eigenvalue: float | None
    message: str

    def as_dict(self):
        return {
            "last_good_t": self.last_good_t,
            "failed_t": self.failed_t,
            "blowup_t_estimate": self.blowup_t_estimate,
            "location": list(self.location) if self.location is not None else None,
            "min_eigenvalue": self.min_eigenvalue,
            "message": self.message,
        }


@dataclass
class Trajectory:
    """Equispaced snapshots of a run plus scalar diagnostics."""

    grid: gs.Grid
    snapshots: list
    spacing: float
    problem: FlowProblem | None = None
    series: list = field(default_factory=list)
    singularity: SingularityReport | None = None
    dt: float | None = None

    @property
    def times(self):
        return np.array([s.t for s in self.snapshots])

    def check_equispaced(self, minimum=5):
        if len(self.snapshots) < minimum:
            raise ConfigInvalid(
                f"need at least {minimum} snapshots, trajectory has {len(self.snapshots)}")
        steps = np.diff(self.times)
        if np.max(np.abs(steps - self.spacing), initial=0.0) > 1e-9 * max(1.0, abs(self.spacing)):
            raise ConfigInvalid("snapshots are not equispaced")

    def every(self, stride):
        """Coarser trajectory keeping every ``stride``-th snapshot."""
        return replace(self, snapshots=self.snapshots[::stride], spacing=self.spacing * stride,
                       series=[])

    def index_of(self, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, abs(self.spacing)):
            raise ConfigInvalid(f"no snapshot at t={t}")
        return i

    def interior(self, reach=1):
        return list(range(reach, len(self.snapshots) - reach))


def f0_of_initial(g0):
    """Mean-zero Ricci potential of the initial metric."""
    return geo.ricci_potential(g0)


def ma_rhs(problem, phi, metric=None):
    """``log det g(t) - log det g0 - f0`` for ``g(t) = g0 + d dbar phi``."""
    m = metric if metric is not None else geo.metric_from_potential(problem.g0, phi)
    rhs = np.log(m.det) - problem.logdet0 - problem.f0
    if problem.dealias:
        rhs = gs.dealias(problem.grid, rhs)
    if not np.all(np.isfinite(rhs)):
        raise NonFinite("Monge-Ampère right-hand side is not finite")
    return rhs


def cfl_dt(m, h, safety=0.5):
    """Explicit step bound ``safety * h / c_max``.

    ``c_max`` is half the square root of the largest eigenvalue of the
    inverse metric (the 1/4 of ``d dbar = Laplacian / 4``), times
    ``sqrt(n)`` for the number of complex directions.
    """
    if not safety > 0:
        raise ConfigInvalid(f"CFL safety factor must be positive, got {safety}")
    lam = np.min(geo.min_eigenvalue(m.grid, m.g))
    if lam <= geo.DELTA_PD:
        raise MetricDegenerate(f"metric not positive definite (min eigenvalue {lam:.3g})")
    c_max = 0.5 * np.sqrt(m.grid.n / lam)
    return safety * h / c_max


def _with_time(err, t):
    err.t = t
    return err


def _accelerate(problem, phi, t):
    try:
        m = geo.metric_from_potential(problem.g0, phi)
    except MetricDegenerate as err:
        raise _with_time(err, t)
    lam = float(np.min(geo.min_eigenvalue(m.grid, m.g)))
    return ma_rhs(problem, phi, m), lam


def step_leapfrog(problem, state, dt, check_cfl=True):
    """One kick-drift-kick step of the Monge-Ampère system. ``dt`` may be negative."""
    grid = problem.grid
    accel, lam = state.accel, state.min_eig
    if accel is None or lam is None:
        accel, lam = _accelerate(problem, state.phi, state.t)
    if check_cfl and abs(dt) > grid.h / (0.5 * np.sqrt(grid.n / lam)):
        raise CflViolation(f"|dt|={abs(dt):.3g} exceeds the stability bound at t={state.t}")
    psi_half = state.psi + 0.5 * dt * accel
    phi = state.phi + dt * psi_half
    t = state.t + dt
    accel, lam = _accelerate(problem, phi, t)
    psi = psi_half + 0.5 * dt * accel
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
        raise NonFinite(f"non-finite potential at t={t}")
    return FlowState(t, phi, psi, state.step + 1, accel, lam)


def initial_state(problem, phi0, psi0, t=0.0):
    """Initial data, projected onto the dealiased band when dealiasing is on.

    Raises MetricDegenerate if ``g0 + d dbar phi0`` is not positive definite.
    """
    grid = problem.grid
    phi0 = np.real(np.asarray(phi0, dtype=complex))
    psi0 = np.real(np.asarray(psi0, dtype=complex))
    grid.check(phi0)
    grid.check(psi0)
    if problem.dealias:
        phi0, psi0 = gs.dealias(grid, phi0), gs.dealias(grid, psi0)
    accel, lam = _accelerate(problem, phi0, float(t))
    return FlowState(float(t), phi0, psi0, 0, accel, lam)


def restore_state(problem, phi, psi, t, step):
    """State from stored arrays, taken as is (no projection), for resuming."""
    grid = problem.grid
    grid.check(phi)
    grid.check(psi)
    accel, lam = _accelerate(problem, phi, float(t))
    return FlowState(float(t), phi, psi, int(step), accel, lam)


def diagnostics(problem, state):
    """One row of the scalar time series for a potential-flow state."""
    m = state.metric(problem)
    R = geo.scalar_curvature(m, geo.ricci(m))
    _, vol, r = geo.volume_and_average(m, R)
    return (state.t, vol, r, float(np.max(np.abs(R))),
            float(np.min(geo.min_eigenvalue(m.grid, m.g))),
            float(gs.mean(m.grid, state.phi)))


def integrate_flow(problem, state, dt, T, snapshot_every=1, record_series=True,
                   check_cfl=True):
    """Advance ``state`` to time ``T`` and collect equispaced snapshots.

    Metric breakdown does not raise: the partial trajectory is returned with
    ``singularity`` filled in.
    """
    if not dt > 0 or T < state.t:
        raise ConfigInvalid(f"need dt > 0 and T >= t0, got dt={dt}, T={T}")
    if snapshot_every < 1:
        raise ConfigInvalid("snapshot cadence must be >= 1 step")
    nsteps = int(round((T - state.t) / dt))
    traj = Trajectory(problem.grid, [state], dt * snapshot_every, problem, dt=dt)
    if record_series:
        traj.series.append(diagnostics(problem, state))
    last_lam = traj.series[-1][4] if record_series else None
    for _ in range(nsteps):
        try:
            state = step_leapfrog(problem, state, dt, check_cfl)
        except MetricDegenerate as err:
            traj.singularity = _singularity(state, dt, last_lam, err)
            log.warning("flow breakdown: %s", err)
            return traj
        if state.step % snapshot_every == 0:
            traj.snapshots.append(state)
            if record_series:
                row = diagnostics(problem, state)
                traj.series.append(row)
                last_lam = row[4]
    return traj


def _singularity(state, dt, last_lam, err):
    failed_t = err.t if err.t is not None else state.t + dt
    estimate = failed_t
    if last_lam is not None and err.value is not None and last_lam > err.value:
        estimate = state.t + (failed_t - state.t) * last_lam / (last_lam - err.value)
    return SingularityReport(state.t, failed_t, float(estimate), err.location, err.value, str(err))


def singularity_at_start(err, t=0.0):
    return SingularityReport(t, t, t, err.location, err.value, str(err))


# tensor route


def tensor_ricci(grid, g, dealias=True):
    m = geo.make_metric(grid, g)
    ric = geo.ricci(m)
    if dealias:
        ric = gs.dealias(grid, ric)
    return ric


def tensor_flow_step(grid, state, dt, dealias=True):
    """Drift-kick-drift leapfrog for ``g_tt = -Ric(g)``."""
    g_half = state.g + 0.5 * dt * state.gdot
    try:
        ric = tensor_ricci(grid, g_half, dealias)
    except MetricDegenerate as err:
        raise _with_time(err, state.t + 0.5 * dt)
    gdot = state.gdot - dt * ric
    g = g_half + 0.5 * dt * gdot
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(gdot))):
        raise NonFinite(f"non-finite metric at t={state.t + dt}")
    return TensorFlowState(state.t + dt, g, gdot, state.step + 1)


def integrate_tensor_flow(grid, g0, gdot0, dt, T, snapshot_every=1, dealias=True):
    """Tensor-level integration from ``(g0, gdot0)``; returns a Trajectory.

    ``gdot0`` must have vanishing spatial mean in every component so that the
    Kähler class of the velocity is zero.
    """
    g0 = np.asarray(g0, dtype=complex)
    gdot0 = np.asarray(gdot0, dtype=complex)
    geo.make_metric(grid, g0)
    if np.max(np.abs(gs.mean(grid, gdot0))) > 1e-12:
        raise ConfigInvalid("initial velocity must have zero Kähler class (zero mean)")
    if not dt > 0:
        raise ConfigInvalid("dt must be positive")
    state = TensorFlowState(0.0, g0, gdot0)
    traj = Trajectory(grid, [state], dt * snapshot_every, dt=dt)
    for k in range(int(round(T / dt))):
        state = tensor_flow_step(grid, state, dt, dealias)
        if (k + 1) % snapshot_every == 0:
            traj.snapshots.append(state)
    return traj


def metric_trajectory(problem, traj):
    """Metric components ``g0 + d dbar phi`` at every snapshot of a potential run."""
    return [problem.g0.g + gs.ddbar(problem.grid, s.phi) for s in traj.snapshots]


def dual_discrepancy(problem, phi0, psi0, dt, T, snapshot_every=1):
    """Max-norm gap between potential-route and tensor-route metrics over ``[0, T]``."""
    grid = problem.grid
    s0 = initial_state(problem, phi0, psi0)
    pot = integrate_flow(problem, s0, dt, T, snapshot_every, record_series=False)
    g0 = problem.g0.g + gs.ddbar(grid, s0.phi)
    gdot0 = gs.ddbar(grid, s0.psi)
    ten = integrate_tensor_flow(grid, g0, gdot0, dt, T, snapshot_every, problem.dealias)
    gp = metric_trajectory(problem, pot)
    gap = max(float(np.max(np.abs(a - b.g))) for a, b in zip(gp, ten.snapshots))
    return gap, pot, ten


# residual checks on the scalar route


def centered_second(values, spacing):
    """Three-point second difference over consecutive samples."""
    return (values[2] - 2 * values[1] + values[0]) / spacing**2


def v_wave_residual(traj, centers=None):
    """Max-norm of ``D_tt v - Laplacian_g(t) v`` with ``v = -d phi / dt``.

    Returns ``(times, residuals)`` evaluated at the interior snapshots (or
    at the requested ``centers``).
    """
    traj.check_equispaced(3)
    problem = traj.problem
    idx = traj.interior() if centers is None else [traj.index_of(t) for t in centers]
    times, res = [], []
    for i in idx:
        s = traj.snapshots
        v = [-s[j].psi for j in (i - 1, i, i + 1)]
        m = s[i].metric(problem)
        r = centered_second(v, traj.spacing) - geo.laplacian_fn(m, v[1]).real
        times.append(s[i].t)
        res.append(float(np.max(np.abs(r))))
    return np.array(times), np.array(res)


@dataclass
class NormalizationRecord:
    t: np.ndarray
    scale: np.ndarray
    t_tilde: np.ndarray
    a: np.ndarray
    b: np.ndarray
    volume: np.ndarray
    normalized_volume: np.ndarray
    residual_times: np.ndarray
    residual: np.ndarray
    ricci_invariance: float
    scalar_scaling: float


def _nonuniform_derivatives(t, f):
    """First and second derivatives at the middle of three unevenly spaced samples."""
    h1, h2 = t[1] - t[0], t[2] - t[1]
    denom = h1 * h2 * (h1 + h2)
    d1 = (-h2 * h2 * f[0] + (h2 * h2 - h1 * h1) * f[1] + h1 * h1 * f[2]) / denom
    d2 = 2.0 * (h2 * f[0] - (h1 + h2) * f[1] + h1 * f[2]) / denom
    return d1, d2


def normalize_flow(traj, centers=None):
    """Volume-normalized flow ``g~ = s^2 g`` in the time ``t~ = int s dt``.

    ``s(t) = Vol^{-1/(2n)}``. The residual of
    ``g~_t~t~ = -Ric~ + a g~_t~ + b g~`` is measured with finite differences
    in ``t~`` at interior samples.
    """
    traj.check_equispaced(5)
    problem, grid = traj.problem, traj.grid
    n = grid.n
    metrics = [s.metric(problem) for s in traj.snapshots]
    t = traj.times
    vol = np.array([gs.integrate(grid, m.det).real for m in metrics])
    if not np.all(np.isfinite(vol)):
        raise NonFinite("non-finite volume series")
    s = vol ** (-1.0 / (2 * n))
    t_tilde = cumulative_trapezoid(s, t, initial=0.0)
    h = traj.spacing
    ds = np.full_like(s, np.nan)
    dds = np.full_like(s, np.nan)
    ds[1:-1] = (s[2:] - s[:-2]) / (2 * h)
    dds[1:-1] = (s[2:] - 2 * s[1:-1] + s[:-2]) / h**2
    a = 3.0 * ds / s**2
    b = 2.0 / s**2 * (dds / s - 3.0 * (ds / s) ** 2)
    norm_vol = np.array([gs.integrate(grid, (si ** (2 * n)) * m.det).real
                         for si, m in zip(s, metrics)])

    idx = traj.interior() if centers is None else [traj.index_of(c) for c in centers]
    res_t, res, ric_err, r_err = [], [], 0.0, 0.0
    for i in idx:
        gt = [s[j] ** 2 * metrics[j].g for j in (i - 1, i, i + 1)]
        d1, d2 = _nonuniform_derivatives(t_tilde[i - 1:i + 2], gt)
        ric = geo.ricci(metrics[i])
        scaled = geo.make_metric(grid, gt[1])
        ric_tilde = geo.ricci(scaled)
        ric_err = max(ric_err, float(np.max(np.abs(ric_tilde - ric))))
        R = geo.scalar_curvature(metrics[i], ric)
        R_tilde = geo.scalar_curvature(scaled, ric_tilde)
        r_err = max(r_err, float(np.max(np.abs(R_tilde - R / s[i] ** 2))))
        r = d2 + ric_tilde - a[i] * d1 - b[i] * gt[1]
        res_t.append(t[i])
        res.append(float(np.max(np.abs(r))))
    return NormalizationRecord(t, s, t_tilde, a, b, vol, norm_vol, np.array(res_t),
                               np.array(res), ric_err, r_err)
