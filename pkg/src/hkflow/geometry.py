"""Kähler geometry of metrics sampled on a periodic grid.

Index conventions (leading array axes, grid axes trail):

* Hermitian fields ``a[i, j] = a_{i jbar}``; the metric ``g[i, j] = g_{i jbar}``.
* The inverse ``inv[k, l] = g^{k lbar}`` with ``g^{k lbar} g_{j lbar} = delta``.
* Christoffel symbols ``gamma[k, i, j] = Gamma^k_{ij} = g^{k lbar} d_j g_{i lbar}``.
* Curvature ``rm[i, j, k, l] = R_{i jbar k lbar}``.

Covariant derivatives take a signature string with one character per slot:
``h`` holomorphic lower, ``a`` antiholomorphic lower, ``H`` holomorphic upper,
``A`` antiholomorphic upper.
"""

from dataclasses import dataclass

import numpy as np

from . import grid as gs
from .errors import ConfigInvalid, MetricDegenerate, ShapeMismatch

DELTA_PD = 1e-8
_LETTERS = "bcdefgkmnopqrs"


@dataclass(frozen=True, eq=False)
class MetricField:
    grid: gs.Grid
    g: np.ndarray
    inv: np.ndarray
    det: np.ndarray

    @property
    def n(self):
        return self.grid.n

    def scaled(self, factor):
        """Metric ``factor * g`` for a positive constant ``factor``."""
        return make_metric(self.grid, factor * self.g)


def _hermitian_shape(grid, a):
    grid.check(a)
    if a.shape[: -grid.ndim] != (grid.n, grid.n):
        raise ShapeMismatch(f"expected ({grid.n}, {grid.n}) components, got {a.shape}")


def min_eigenvalue(grid, a):
    """Pointwise smallest eigenvalue of a Hermitian field (closed form, n <= 2)."""
    _hermitian_shape(grid, a)
    if grid.n == 1:
        return a[0, 0].real
    tr = 0.5 * (a[0, 0].real + a[1, 1].real)
    det = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]).real
    return tr - np.sqrt(np.maximum(tr * tr - det, 0.0))


def inverse_det(grid, a):
    """Pointwise inverse (in the ``g^{k lbar}`` convention) and determinant."""
    _hermitian_shape(grid, a)
    if grid.n == 1:
        det = a[0, 0].real
        _check_det(det)
        inv = (1.0 / det)[None, None].astype(complex)
        return inv, det
    det = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]).real
    _check_det(det)
    # inv = (a^T)^{-1}
    inv = np.empty_like(a, dtype=complex)
    inv[0, 0] = a[1, 1] / det
    inv[1, 1] = a[0, 0] / det
    inv[0, 1] = -a[1, 0] / det
    inv[1, 0] = -a[0, 1] / det
    return inv, det


def _check_det(det):
    if not np.all(np.isfinite(det)):
        raise MetricDegenerate("non-finite metric determinant")
    worst = tuple(int(i) for i in np.unravel_index(np.argmin(np.abs(det)), det.shape))
    if abs(det[worst]) <= DELTA_PD:
        raise MetricDegenerate(
            f"metric determinant {det[worst]:.3e} at {worst}",
            location=worst, value=float(det[worst]))


def make_metric(grid, g):
    """Validate positive definiteness and cache inverse and determinant."""
    g = np.asarray(g, dtype=complex)
    _hermitian_shape(grid, g)
    lam = min_eigenvalue(grid, g)
    if not np.all(np.isfinite(lam)):
        raise MetricDegenerate("non-finite metric components")
    worst = tuple(int(i) for i in np.unravel_index(np.argmin(lam), lam.shape))
    if lam[worst] <= DELTA_PD:
        raise MetricDegenerate(
            f"metric not positive definite: min eigenvalue {lam[worst]:.4g} at {worst}",
            location=worst, value=float(lam[worst]))
    inv, det = inverse_det(grid, g)
    return MetricField(grid, g, inv, det)


def constant_metric(grid, matrix=None):
    """Flat metric with constant components (identity by default)."""
    m = np.eye(grid.n) if matrix is None else np.asarray(matrix, dtype=complex)
    g = np.broadcast_to(m.reshape((grid.n, grid.n) + (1,) * grid.ndim),
                        (grid.n, grid.n) + grid.shape).astype(complex)
    return make_metric(grid, g)


def conformal_metric(grid, u):
    """``g = exp(u) * identity``; Kähler only for n = 1."""
    if grid.n != 1:
        raise ConfigInvalid("conformal metrics are Kähler only in complex dimension 1")
    grid.check(u)
    return make_metric(grid, np.exp(u)[None, None])


def conformal_curvature_exact(grid, modes):
    """Closed-form curvature of ``exp(u) dz dzbar`` for a mode sum ``u`` (n = 1).

    ``modes`` holds ``(k, amplitude, kind)`` with ``kind`` ``"cos"`` or ``"sin"``.
    """
    if grid.n != 1:
        raise ConfigInvalid("conformal metrics are Kähler only in complex dimension 1")
    w = 2 * np.pi / grid.L
    u, ux, uy, lap = (np.zeros(grid.shape) for _ in range(4))
    for k, a, kind in modes:
        theta = w * (k[0] * grid.x(0) + k[1] * grid.y(0))
        c, s = np.cos(theta), np.sin(theta)
        f, df = (c, -s) if kind == "cos" else (s, c)
        u += a * f
        ux += a * w * k[0] * df
        uy += a * w * k[1] * df
        lap -= a * w**2 * (k[0] ** 2 + k[1] ** 2) * f
    r11 = -0.25 * lap
    return {"christoffel": (0.5 * (ux - 1j * uy))[None, None, None],
            "ricci": r11[None, None].astype(complex),
            "riemann": (np.exp(u) * r11)[None, None, None, None].astype(complex),
            "scalar": np.exp(-u) * r11}


def metric_from_potential(g0, phi):
    """``g0 + d dbar phi``. Raises MetricDegenerate if positivity is lost."""
    if np.iscomplexobj(phi) and np.max(np.abs(np.imag(phi)), initial=0.0) > 1e-12:
        raise ConfigInvalid("potential must be real-valued")
    phi = np.real(phi)
    return make_metric(g0.grid, g0.g + gs.ddbar(g0.grid, phi))


def christoffel(m):
    dg = gs.gradient(m.grid, m.g)  # [i, l, j] = d_j g_{i lbar}
    return np.einsum("kl...,ilj...->kij...", m.inv, dg)


def riemann(m):
    grid = m.grid
    dg = gs.gradient(grid, m.g)  # [i, q, k]
    dbg = gs.gradient(grid, m.g, holomorphic=False)  # [p, j, l]
    ddg = gs.gradient(grid, dbg)  # [i, j, l, k] = d_k dbar_l g_{i jbar}
    rm = -np.swapaxes(ddg, 2, 3)
    rm += np.einsum("pq...,iqk...,pjl...->ijkl...", m.inv, dg, dbg, optimize=True)
    return rm


def ricci(m):
    """``R_{i jbar} = -d_i dbar_j log det g``."""
    return -gs.ddbar(m.grid, np.log(m.det))


def ricci_from_riemann(m, rm):
    return np.einsum("kl...,ijkl...->ij...", m.inv, rm)


def scalar_curvature(m, ric):
    _hermitian_shape(m.grid, ric)
    return np.einsum("ij...,ij...->...", m.inv, ric).real


def volume_and_average(m, scalar=None):
    """Density, total volume and average scalar curvature.

    The density is ``det g`` in the fixed real coordinates; constant
    Jacobian factors cancel in every ratio used downstream.
    """
    if scalar is None:
        scalar = scalar_curvature(m, ricci(m))
    vol = gs.integrate(m.grid, m.det).real
    r = gs.integrate(m.grid, scalar, m.det).real / vol
    return m.det, vol, r


def ricci_potential(m):
    """Mean-zero ``f`` with ``d dbar f = Ric``."""
    logdet = np.log(m.det)
    return -(logdet - gs.mean(m.grid, logdet))


def laplacian_fn(m, f):
    """``g^{a bbar} d_a dbar_b f``; leading axes of ``f`` are treated as a stack."""
    grid = m.grid
    grid.check(f)
    lead = np.shape(f)[: -grid.ndim]
    flat = np.reshape(f, (-1,) + grid.shape)
    out = np.stack([np.einsum("ab...,ab...->...", m.inv, gs.ddbar(grid, fi)) for fi in flat])
    return out.reshape(lead + grid.shape)


def _check_signature(grid, t, signature):
    if not isinstance(signature, str) or any(c not in "haHA" for c in signature):
        raise ConfigInvalid(f"unsupported index signature {signature!r}")
    if len(signature) > len(_LETTERS) - 1:
        raise ConfigInvalid(f"rank {len(signature)} is too large")
    grid.check(t)
    if t.shape[: -grid.ndim] != (grid.n,) * len(signature):
        raise ShapeMismatch(f"tensor of shape {t.shape} does not match signature {signature!r}")


def covariant_derivative(grid, t, signature, gamma, holomorphic=True):
    """Covariant derivative along every holomorphic (or antiholomorphic) axis.

    Returns a tensor with one extra lower index appended after the existing
    ones: ``out[..., a] = nabla_a t`` (or ``nabla_abar t``).
    """
    _check_signature(grid, t, signature)
    out = gs.gradient(grid, t, holomorphic=holomorphic)
    r = len(signature)
    idx = _LETTERS[:r]
    gam = gamma if holomorphic else np.conj(gamma)
    lower, upper = ("h", "H") if holomorphic else ("a", "A")
    for s, kind in enumerate(signature):
        if kind not in (lower, upper):
            continue
        summed = idx[:s] + "y" + idx[s + 1:]
        if kind == lower:
            # - Gamma^y_{z s} t_{..y..}
            expr = f"yz{idx[s]}...,{summed}...->{idx}z..."
            out -= np.einsum(expr, gam, t, optimize=True)
        else:
            # + Gamma^s_{z y} t^{..y..}
            expr = f"{idx[s]}zy...,{summed}...->{idx}z..."
            out += np.einsum(expr, gam, t, optimize=True)
    return out


def laplacian_R(m, gamma, t, signature):
    """``1/2 g^{b cbar} (nabla_b nabla_cbar + nabla_cbar nabla_b) t``."""
    grid = m.grid
    d_bar = covariant_derivative(grid, t, signature, gamma, holomorphic=False)
    dd1 = covariant_derivative(grid, d_bar, signature + "a", gamma)  # [..., c, b]
    d_hol = covariant_derivative(grid, t, signature, gamma)
    dd2 = covariant_derivative(grid, d_hol, signature + "h", gamma, holomorphic=False)  # [..., b, c]
    idx = _LETTERS[: len(signature)]
    return 0.5 * (np.einsum(f"bc...,{idx}cb...->{idx}...", m.inv, dd1, optimize=True)
                  + np.einsum(f"bc...,{idx}bc...->{idx}...", m.inv, dd2, optimize=True))


def kahler_residual(grid, g):
    """Max of ``|d_k g_{i jbar} - d_i g_{k jbar}|`` over all components."""
    dg = gs.gradient(grid, g)  # [i, j, k]
    return float(np.max(np.abs(dg - np.swapaxes(dg, 0, 2)), initial=0.0))


def curvature_symmetry_residuals(rm):
    """Pair symmetry and conjugate symmetry defects of a curvature field."""
    pair = np.max(np.abs(rm - np.transpose(rm, (2, 3, 0, 1) + tuple(range(4, rm.ndim)))))
    conj = np.max(np.abs(rm - np.conj(np.transpose(rm, (1, 0, 3, 2) + tuple(range(4, rm.ndim))))))
    return float(pair), float(conj)


def hermitian_residual(a):
    return float(np.max(np.abs(a - np.conj(np.swapaxes(a, 0, 1)))))


def commutator_residual(m, eta, gamma=None, rm=None):
    """Curvature commutation relation for a (1,1)-form ``eta``.

    Compares ``(nabla_bbar nabla_a - nabla_a nabla_bbar) eta_{c dbar}``
    built from covariant derivatives with the curvature action
    ``g^{e sbar} R_{c sbar a bbar} eta_{e dbar} - g^{s ebar} R_{s dbar a bbar} eta_{c ebar}``.
    Returns the max-norm of the difference.
    """
    grid = m.grid
    if gamma is None:
        gamma = christoffel(m)
    if rm is None:
        rm = riemann(m)
    d_a = covariant_derivative(grid, eta, "ha", gamma)  # [c, d, a]
    bar_a = covariant_derivative(grid, d_a, "hah", gamma, holomorphic=False)  # [c, d, a, b]
    d_b = covariant_derivative(grid, eta, "ha", gamma, holomorphic=False)  # [c, d, b]
    a_bar = covariant_derivative(grid, d_b, "haa", gamma)  # [c, d, b, a]
    lhs = bar_a - np.swapaxes(a_bar, 2, 3)
    rhs = (np.einsum("es...,csab...,ed...->cdab...", m.inv, rm, eta, optimize=True)
           - np.einsum("se...,sdab...,ce...->cdab...", m.inv, rm, eta, optimize=True))
    return float(np.max(np.abs(lhs - rhs)))
