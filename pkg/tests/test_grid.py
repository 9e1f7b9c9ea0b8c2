import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hkflow import grid as gs
from hkflow.errors import ConfigInvalid, ShapeMismatch


@pytest.fixture
def g1():
    return gs.make_grid(1, 32)


@pytest.mark.parametrize("n,N,L", [(3, 32, 1.0), (1, 12, 1.0), (1, 4, 1.0), (1, 32, 0.0), (1, 32, -1.0)])
def test_make_grid_rejects_bad_parameters(n, N, L):
    with pytest.raises(ConfigInvalid):
        gs.make_grid(n, N, L)


def test_grid_geometry():
    g = gs.make_grid(2, 8, 2.0)
    assert g.h == 0.25
    assert g.shape == (8, 8, 8, 8)
    assert g.size == 8**4
    assert g.x(1).shape == g.shape
    assert g.x(0)[3, 0, 0, 0] == pytest.approx(0.75)
    assert g.y(1)[0, 0, 0, 5] == pytest.approx(1.25)


def test_check_rejects_wrong_shape(g1):
    with pytest.raises(ShapeMismatch):
        g1.check(np.zeros((16, 16)))


def test_holomorphic_derivatives_of_a_mode(g1):
    x, y = g1.x(0), g1.y(0)
    w = 2 * np.pi
    f = np.cos(w * x) * np.sin(2 * w * y)
    fx = -w * np.sin(w * x) * np.sin(2 * w * y)
    fy = 2 * w * np.cos(w * x) * np.cos(2 * w * y)
    assert np.max(np.abs(gs.d_dz(g1, f, 0) - 0.5 * (fx - 1j * fy))) < 1e-12
    assert np.max(np.abs(gs.d_dzbar(g1, f, 0) - 0.5 * (fx + 1j * fy))) < 1e-12


def test_ddbar_is_quarter_laplacian(g1):
    f = gs.fourier_mode(g1, (2, 1), 0.3)
    lap = -0.3 * (2 * np.pi) ** 2 * 5 * f / 0.3
    assert np.max(np.abs(gs.ddbar(g1, f)[0, 0] - 0.25 * lap)) < 1e-11


def test_ddbar_mixed_components_n2():
    g = gs.make_grid(2, 8)
    f = np.cos(2 * np.pi * (g.x(0) + g.x(1)))
    h = gs.ddbar(g, f)
    # d_{z1} d_{zbar2} cos(2pi(x1+x2)) = -(pi^2) cos(...)
    assert np.max(np.abs(h[0, 1] + np.pi**2 * f)) < 1e-11
    assert np.max(np.abs(h[0, 1] - np.conj(h[1, 0]))) < 1e-12


def test_gradient_index_position():
    g = gs.make_grid(2, 8)
    t = np.zeros((2, 3) + g.shape)
    assert gs.gradient(g, t).shape == (2, 3, 2) + g.shape


def test_integrate_and_mean(g1):
    assert gs.integrate(g1, np.ones(g1.shape)) == pytest.approx(1.0)
    f = 1.0 + np.cos(2 * np.pi * g1.x(0)) ** 2
    assert gs.integrate(g1, f) == pytest.approx(1.5, abs=1e-14)
    assert gs.mean(g1, f) == pytest.approx(1.5, abs=1e-14)


def test_dealias_keeps_low_and_drops_high(g1):
    low = gs.fourier_mode(g1, (3, 2))
    high = gs.fourier_mode(g1, (12, 0))
    out = gs.dealias(g1, low + high)
    assert np.isrealobj(out)
    assert np.max(np.abs(out - low)) < 1e-13


def test_fourier_mode_rejects_bad_input(g1):
    with pytest.raises(ConfigInvalid):
        gs.fourier_mode(g1, (1, 0, 0))
    with pytest.raises(ConfigInvalid):
        gs.fourier_mode(g1, (1, 0), kind="tan")


def test_threads_do_not_change_results(g1):
    rng = np.random.default_rng(1)
    f = rng.standard_normal(g1.shape)
    try:
        gs.set_threads(1)
        a = gs.ddbar(g1, f)
        gs.set_threads(2)
        b = gs.ddbar(g1, f)
    finally:
        gs.set_threads(1)
    assert np.array_equal(a, b)
    with pytest.raises(ConfigInvalid):
        gs.set_threads(0)


small = st.floats(-1.0, 1.0, allow_nan=False)


@settings(max_examples=25, deadline=None)
@given(a=small, b=small, kx=st.integers(-5, 5), ky=st.integers(-5, 5))
def test_derivatives_integrate_to_zero(a, b, kx, ky):
    g = gs.make_grid(1, 16)
    f = a * gs.fourier_mode(g, (kx, ky)) + b * gs.fourier_mode(g, (ky, kx), kind="sin")
    assert abs(gs.integrate(g, gs.d_dz(g, f, 0))) < 1e-12
    assert abs(gs.integrate(g, gs.ddbar(g, f)[0, 0])) < 1e-12


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_dealias_is_a_projection(seed):
    g = gs.make_grid(1, 16)
    f = np.random.default_rng(seed).standard_normal(g.shape)
    once = gs.dealias(g, f)
    assert np.max(np.abs(gs.dealias(g, once) - once)) < 1e-13


@settings(max_examples=25, deadline=None)
@given(a=small, b=small, seed=st.integers(0, 1000))
def test_derivatives_are_linear(a, b, seed):
    g = gs.make_grid(1, 16)
    rng = np.random.default_rng(seed)
    f, h = rng.standard_normal((2,) + g.shape)
    lhs = gs.d_dzbar(g, a * f + b * h, 0)
    rhs = a * gs.d_dzbar(g, f, 0) + b * gs.d_dzbar(g, h, 0)
    assert np.max(np.abs(lhs - rhs)) < 1e-11
