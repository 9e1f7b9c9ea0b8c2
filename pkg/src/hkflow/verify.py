"""Residual checks of the curvature evolution identities along computed flows.

Every identity is evaluated at snapshot centres with centred time
differences over a spacing ``dts``. Sums that the identities write without
metric factors are evaluated literally in a pointwise unitary frame built
from the Cholesky factor of ``g``. The metric velocity is always taken
exactly as ``d dbar psi``; only genuine time derivatives of curvature
quantities use finite differences, so each residual decays like ``dts**2``.
"""

from dataclasses import dataclass, field

import numpy as np

from . import flow
from . import geometry as geo
from . import grid as gs
from .errors import ConfigInvalid

DEFAULT_ORDER_RANGE = (1.8, 2.2)
EXACT_FLOOR = 1e-12
# sanity bound on the finest residual; the order test does the real work
DEFAULT_CEILING = 1.0


@dataclass
class IdentityReport:
    name: str
    spacings: list
    residual_max: list
    residual_l2: list
    order: float | None = None
    passed: bool = False
    exact: bool = False
    ceiling: float | None = None
    gauge: dict = field(default_factory=dict)
    note: str = ""

    def as_dict(self):
        return {
            "name": self.name,
            "spacings": list(self.spacings),
            "residual_max": list(self.residual_max),
            "residual_l2": list(self.residual_l2),
            "order": self.order,
            "passed": self.passed,
            "exact": self.exact,
            "ceiling": self.ceiling,
            "gauge": self.gauge,
            "note": self.note,
        }


def convergence_order(spacings, errors):
    """Least-squares slope of ``log(error)`` against ``log(spacing)``."""
    h = np.log(np.asarray(spacings, dtype=float))
    e = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(h, e, 1)[0])


def judge(report, floor=EXACT_FLOOR, order_range=DEFAULT_ORDER_RANGE, ceiling=DEFAULT_CEILING):
    """Fill in order and pass/fail from the per-level residuals."""
    res = np.asarray(report.residual_max, dtype=float)
    report.ceiling = ceiling
    if not np.all(np.isfinite(res)):
        report.passed = False
        report.note = "non-finite residual"
        return report
    if np.max(res) <= floor:
        report.exact, report.passed = True, True
        report.order = None
        return report
    if len(res) >= 2:
        report.order = convergence_order(report.spacings, res)
        lo, hi = order_range
        report.passed = bool(lo <= report.order <= hi and res[-1] <= ceiling)
    else:
        report.passed = False
        report.note = "fewer than two refinement levels"
    return report


# pointwise geometry


def cholesky_inverse(grid, g):
    """``P = L^{-1}`` with ``g = L L^*`` (lower triangular ``L``), pointwise."""
    if grid.n == 1:
        return (1.0 / np.sqrt(g[0, 0].real))[None, None].astype(complex)
    a = np.sqrt(g[0, 0].real)
    c = g[1, 0] / a
    d = np.sqrt(g[1, 1].real - np.abs(c) ** 2)
    p = np.zeros_like(g, dtype=complex)
    p[0, 0] = 1.0 / a
    p[1, 1] = 1.0 / d
    p[1, 0] = -c / (a * d)
    return p


@dataclass(eq=False)
class FramePointData:
    """Unitary frame at every grid point.

    Lower holomorphic slots transform with ``p``, lower antiholomorphic
    slots with ``conj(p)``; the metric becomes the identity.
    """

    p: np.ndarray

    def lower(self, t, signature):
        """Frame components of a tensor with lower slots only (``h``/``a``)."""
        if any(c not in "ha" for c in signature):
            raise ConfigInvalid(f"frame transform supports lower slots only, got {signature!r}")
        out = t
        pc = np.conj(self.p)
        for s, kind in enumerate(signature):
            mat = self.p if kind == "h" else pc
            out = np.moveaxis(np.einsum("ai...,i...->a...", mat, np.moveaxis(out, s, 0)), 0, s)
        return out


class SnapshotGeometry:
    """Lazily computed geometric quantities of one potential-flow snapshot."""

    def __init__(self, problem, state):
        self.problem = problem
        self.grid = problem.grid
        self.state = state
        self._cache = {}

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def metric(self):
        return self._get("metric", lambda: self.state.metric(self.problem))

    @property
    def gdot(self):
        return self._get("gdot", lambda: gs.ddbar(self.grid, self.state.psi))

    @property
    def gamma(self):
        return self._get("gamma", lambda: geo.christoffel(self.metric))

    @property
    def rm(self):
        return self._get("rm", lambda: geo.riemann(self.metric))

    @property
    def ric(self):
        return self._get("ric", lambda: geo.ricci(self.metric))

    @property
    def scalar(self):
        return self._get("scalar", lambda: geo.scalar_curvature(self.metric, self.ric))

    @property
    def inv(self):
        return self.metric.inv

    @property
    def det(self):
        return self.metric.det

    @property
    def dinv(self):
        """Exact ``d/dt g^{k lbar} = -g^{k sbar} gdot_{r sbar} g^{r lbar}``."""
        return self._get("dinv", lambda: -np.einsum(
            "ks...,rs...,rl...->kl...", self.inv, self.gdot, self.inv, optimize=True))

    @property
    def trace_gdot(self):
        return self._get("trgdot", lambda: np.einsum("ab...,ab...->...", self.inv, self.gdot))

    @property
    def ddet(self):
        """Exact ``d/dt det g``."""
        return self.det * self.trace_gdot

    @property
    def frame(self):
        return self._get("frame", lambda: FramePointData(cholesky_inverse(self.grid, self.metric.g)))

    @property
    def gdot_frame(self):
        return self._get("gdotf", lambda: self.frame.lower(self.gdot, "ha"))

    @property
    def gdot_sq(self):
        """``|gdot|^2`` as a frame index sum."""
        return self._get("gsq", lambda: np.sum(np.abs(self.gdot_frame) ** 2, axis=(0, 1)))

    @property
    def rm_frame(self):
        return self._get("rmf", lambda: self.frame.lower(self.rm, "haha"))

    @property
    def ric_frame(self):
        return self._get("ricf", lambda: self.frame.lower(self.ric, "ha"))

    @property
    def nabla_gdot(self):
        """``nabla_k gdot_{i qbar}`` stored as ``[i, q, k]``."""
        return self._get("ngd", lambda: geo.covariant_derivative(self.grid, self.gdot, "ha", self.gamma))

    @property
    def nabla_bar_gdot(self):
        """``nabla_lbar gdot_{p jbar}`` stored as ``[p, j, l]``."""
        return self._get("nbgd", lambda: geo.covariant_derivative(
            self.grid, self.gdot, "ha", self.gamma, holomorphic=False))

    @property
    def gdot_gdot(self):
        """Frame ``(gdot gdot)[l, k] = sum_m gdot_{l mbar} gdot_{m kbar}``."""
        return self._get("gg", lambda: np.einsum("lm...,mk...->lk...", self.gdot_frame, self.gdot_frame))

    def inverse_second_rhs(self):
        """``R_{r sbar} g^{k sbar} g^{r lbar} + 2 gdot gdot g g g`` in coordinates."""
        inv, gd = self.inv, self.gdot
        a = np.einsum("rs...,ks...,rl...->kl...", self.ric, inv, inv, optimize=True)
        b = np.einsum("nm...,rs...,ks...,rm...,nl...->kl...", gd, gd, inv, inv, inv, optimize=True)
        return a + 2 * b

    def d_riemann_exact(self):
        """Exact time derivative of the discrete curvature given ``gdot``."""
        def build():
            grid, g, gd = self.grid, self.metric.g, self.gdot
            dg = gs.gradient(grid, g)
            dbg = gs.gradient(grid, g, holomorphic=False)
            dgd = gs.gradient(grid, gd)
            dbgd = gs.gradient(grid, gd, holomorphic=False)
            ddgd = gs.gradient(grid, dbgd)
            out = -np.swapaxes(ddgd, 2, 3)
            out += np.einsum("pq...,iqk...,pjl...->ijkl...", self.dinv, dg, dbg, optimize=True)
            out += np.einsum("pq...,iqk...,pjl...->ijkl...", self.inv, dgd, dbg, optimize=True)
            out += np.einsum("pq...,iqk...,pjl...->ijkl...", self.inv, dg, dbgd, optimize=True)
            return out
        return self._get("drm_exact", build)

    def d_ricci_exact(self):
        return self._get("dric_exact", lambda: -gs.ddbar(self.grid, self.trace_gdot.real))

    def traced(self):
        """Copy whose Ricci form is the contraction of the computed curvature.

        The log-det Ricci form and the contracted curvature agree only to
        discretization error; assembly replays need one discrete Ricci.
        """
        out = SnapshotGeometry(self.problem, self.state)
        out._cache = {k: self._cache[k] for k in ("metric", "gdot", "gamma", "rm", "dinv")
                      if k in self._cache}
        out._cache["ric"] = geo.ricci_from_riemann(out.metric, out.rm)
        drm = out.d_riemann_exact()
        out._cache["dric_exact"] = (np.einsum("kl...,ijkl...->ij...", out.dinv, out.rm)
                                    + np.einsum("kl...,ijkl...->ij...", out.inv, drm))
        return out


class GeometryCache:
    """Shares per-snapshot geometry between identities and refinement levels."""

    def __init__(self, problem):
        self.problem = problem
        self._store = {}

    def __call__(self, state):
        key = id(state)
        if key not in self._store:
            self._store[key] = (state, SnapshotGeometry(self.problem, state))
        return self._store[key][1]


def dt_tensor(values, spacing, order):
    """Centred time derivative at the middle sample.

    ``order=1`` takes three samples ``(f-, f0, f+)`` and returns
    ``(f+ - f-) / (2 dt)``; ``order=2`` accepts three or five samples and
    returns the three-point second difference at the middle.
    """
    k = len(values)
    if order == 1:
        if k < 3 or k % 2 == 0:
            raise ConfigInvalid("first derivative needs an odd number (>= 3) of samples")
        c = k // 2
        return (values[c + 1] - values[c - 1]) / (2 * spacing)
    if order == 2:
        if k < 3 or k % 2 == 0:
            raise ConfigInvalid("second derivative needs an odd number (>= 3) of samples")
        c = k // 2
        return (values[c + 1] - 2 * values[c] + values[c - 1]) / spacing**2
    raise ConfigInvalid(f"unsupported derivative order {order}")


def _norms(grid, r):
    r = np.asarray(r)
    lead = tuple(range(r.ndim - grid.ndim))
    mx = float(np.max(np.abs(r)))
    dens = np.sum(np.abs(r) ** 2, axis=lead) if lead else np.abs(r) ** 2
    l2 = float(np.sqrt(np.real(gs.integrate(grid, dens))))
    return mx, l2


def _window(traj, cache, t):
    i = traj.index_of(t)
    if i < 1 or i > len(traj.snapshots) - 2:
        raise ConfigInvalid(f"centre t={t} has no neighbours at spacing {traj.spacing}")
    return [cache(traj.snapshots[j]) for j in (i - 1, i, i + 1)]


def _centres(traj, centers):
    if centers is None:
        return [traj.snapshots[i].t for i in traj.interior()]
    return list(centers)


# individual identities; each returns {name: (residual fields per centre)}


def _inverse_metric(w, dts):
    lhs1 = dt_tensor([x.inv for x in w], dts, 1)
    lhs2 = dt_tensor([x.inv for x in w], dts, 2)
    c = w[1]
    return {"inverse_metric_first": lhs1 - c.dinv,
            "inverse_metric_second": lhs2 - c.inverse_second_rhs()}


def riemann_rhs(c):
    """Right-hand side of the curvature wave equation, in the unitary frame."""
    lap = c.frame.lower(geo.laplacian_R(c.metric, c.gamma, c.rm, "haha"), "haha")
    R, ric = c.rm_frame, c.ric_frame
    quad = (np.einsum("iabl...,ajkb...->ijkl...", R, R, optimize=True)
            - np.einsum("iakb...,ajbl...->ijkl...", R, R, optimize=True)
            + np.einsum("ijba...,abkl...->ijkl...", R, R, optimize=True))
    ricci_terms = (np.einsum("ia...,ajkl...->ijkl...", ric, R, optimize=True)
                   + np.einsum("aj...,iakl...->ijkl...", ric, R, optimize=True)
                   + np.einsum("ka...,ijal...->ijkl...", ric, R, optimize=True)
                   + np.einsum("al...,ijka...->ijkl...", ric, R, optimize=True))
    a = c.frame.lower(c.nabla_gdot, "hah")  # [i, q, k]
    b = c.frame.lower(c.nabla_bar_gdot, "haa")  # [p, j, l]
    vel = np.einsum("ipk...,pjl...->ijkl...", a, b, optimize=True)
    return lap + quad - 0.5 * ricci_terms + 2 * vel


def ricci_rhs(c, d_rm_frame):
    """Right-hand side of the Ricci wave equation in the unitary frame.

    ``d_rm_frame`` is the frame form of the first time derivative of the
    curvature tensor (finite difference or exact).
    """
    lap = c.frame.lower(geo.laplacian_R(c.metric, c.gamma, c.ric, "ha"), "ha")
    R, ric, gf = c.rm_frame, c.ric_frame, c.gdot_frame
    out = lap
    out = out + np.einsum("ijkl...,lk...->ij...", R, ric, optimize=True)
    out = out - np.einsum("ik...,kj...->ij...", ric, ric, optimize=True)
    out = out - 2 * np.einsum("kl...,ijkl...->ij...", np.conj(gf), d_rm_frame, optimize=True)
    out = out + 2 * np.einsum("ijkl...,lk...->ij...", R, c.gdot_gdot, optimize=True)
    a = c.frame.lower(c.nabla_gdot, "hah")
    b = c.frame.lower(c.nabla_bar_gdot, "haa")
    out = out + 2 * np.einsum("ipk...,pjk...->ij...", a, b, optimize=True)
    return out


def scalar_rhs(c, d_ric_frame):
    """Right-hand side of the scalar curvature wave equation."""
    m = c.metric
    ric, gf = c.ric_frame, c.gdot_frame
    out = geo.laplacian_fn(m, c.scalar).real
    out = out + np.sum(np.abs(ric) ** 2, axis=(0, 1))
    out = out + geo.laplacian_fn(m, c.gdot_sq).real
    out = out - 2 * np.einsum("ab...,ab...->...", np.conj(gf), d_ric_frame)
    out = out + 2 * np.einsum("kl...,lk...->...", ric, c.gdot_gdot)
    return out


def _riemann(w, dts):
    c = w[1]
    lhs = c.frame.lower(dt_tensor([x.rm for x in w], dts, 2), "haha")
    return {"riemann": lhs - riemann_rhs(c)}


def _ricci(w, dts):
    c = w[1]
    lhs = c.frame.lower(dt_tensor([x.ric for x in w], dts, 2), "ha")
    d_rm = c.frame.lower(dt_tensor([x.rm for x in w], dts, 1), "haha")
    return {"ricci": lhs - ricci_rhs(c, d_rm)}


def _scalar(w, dts):
    c = w[1]
    lhs = dt_tensor([x.scalar for x in w], dts, 2)
    d_ric = c.frame.lower(dt_tensor([x.ric for x in w], dts, 1), "ha")
    return {"scalar": lhs - scalar_rhs(c, d_ric)}


def _christoffel_volume(w, dts):
    c = w[1]
    lhs = dt_tensor([x.gamma for x in w], dts, 2)  # [g, a, b]
    nric = geo.covariant_derivative(c.grid, c.ric, "ha", c.gamma)  # [b, d, a]
    rhs = (-np.einsum("gd...,bda...->gab...", c.inv, nric, optimize=True)
           + 2 * np.einsum("gd...,bda...->gab...", c.dinv, c.nabla_gdot, optimize=True))
    vlhs = dt_tensor([x.det for x in w], dts, 2)
    tr = c.trace_gdot
    vrhs = (-c.scalar + tr * tr - c.gdot_sq) * c.det
    return {"christoffel": lhs - rhs, "volume_form": vlhs - vrhs}


def _ricci_potential(w, dts):
    c = w[1]
    f = [geo.ricci_potential(x.metric) for x in w]
    raw = dt_tensor(f, dts, 2) - geo.laplacian_fn(c.metric, f[1]).real - c.gdot_sq
    const = gs.mean(c.grid, raw).real
    return {"ricci_potential": raw - const}, {"c": float(const)}


def _integral_terms(w, dts):
    """Pieces of the total scalar curvature identities at the centre."""
    grid = w[1].grid
    c = w[1]
    total = [gs.integrate(grid, x.scalar, x.det).real for x in w]
    vol = [gs.integrate(grid, x.det).real for x in w]
    dR = dt_tensor([x.scalar for x in w], dts, 1)
    d_ric = c.frame.lower(dt_tensor([x.ric for x in w], dts, 1), "ha")
    tr = c.trace_gdot
    quad = (tr * tr - c.gdot_sq).real
    pairing = np.einsum("ab...,ab...->...", np.conj(c.gdot_frame), d_ric).real
    cubic = np.einsum("kl...,lk...->...", c.ric_frame, c.gdot_gdot).real
    ddet = c.ddet.real
    I2 = (gs.integrate(grid, c.scalar * quad, c.det)
          + 2 * gs.integrate(grid, dR * ddet)
          - 2 * gs.integrate(grid, pairing, c.det)
          + 2 * gs.integrate(grid, cubic, c.det)).real
    I1 = (gs.integrate(grid, dR, c.det) + gs.integrate(grid, c.scalar * ddet)).real
    V1 = gs.integrate(grid, ddet).real
    Q = gs.integrate(grid, quad, c.det).real
    return total, vol, I2, I1, V1, Q


def _integrals(w, dts):
    total, vol, I2, I1, V1, Q = _integral_terms(w, dts)
    I, V = total[1], vol[1]
    r = [a / b for a, b in zip(total, vol)]
    lhs_total = dt_tensor(total, dts, 2)
    lhs_r = dt_tensor(r, dts, 2)
    rhs_r = (r[1] ** 2 + I2 / V + 2 * V1**2 * I / V**3 - (I * Q + 2 * I1 * V1) / V**2)
    return ({"total_scalar_curvature": np.array(lhs_total - I2),
             "average_scalar_curvature": np.array(lhs_r - rhs_r)},
            {"integral_R": float(I), "r": float(r[1])})


_CHECKS = {
    "inverse_metric": _inverse_metric,
    "riemann": _riemann,
    "ricci": _ricci,
    "scalar": _scalar,
    "christoffel_volume": _christoffel_volume,
    "ricci_potential": _ricci_potential,
    "integrals": _integrals,
}


def _run_check(key, traj, centers, cache):
    cache = cache or GeometryCache(traj.problem)
    traj.check_equispaced(3)
    fn = _CHECKS[key]
    out = {}
    for t in _centres(traj, centers):
        w = _window(traj, cache, t)
        res = fn(w, traj.spacing)
        gauge = {}
        if isinstance(res, tuple):
            res, gauge = res
        for name, r in res.items():
            mx, l2 = (float(np.max(np.abs(r))), float(abs(r))) if np.ndim(r) == 0 else _norms(traj.grid, r)
            entry = out.setdefault(name, {"max": 0.0, "l2": 0.0, "gauge": {}})
            entry["max"] = max(entry["max"], mx)
            entry["l2"] = max(entry["l2"], l2)
            for k, v in gauge.items():
                entry["gauge"].setdefault(k, []).append(v)
    return out


def _single_level(key, traj, centers=None, cache=None):
    out = _run_check(key, traj, centers, cache)
    return [IdentityReport(name, [traj.spacing], [v["max"]], [v["l2"]], gauge=v["gauge"])
            for name, v in out.items()]


def residual_inverse_metric(traj, centers=None, cache=None):
    """Time derivatives of the inverse metric (first and second)."""
    return _single_level("inverse_metric", traj, centers, cache)


def residual_riemann_evolution(traj, centers=None, cache=None):
    return _single_level("riemann", traj, centers, cache)[0]


def residual_ricci_evolution(traj, centers=None, cache=None):
    return _single_level("ricci", traj, centers, cache)[0]


def residual_scalar_evolution(traj, centers=None, cache=None):
    return _single_level("scalar", traj, centers, cache)[0]


def residual_christoffel_volume(traj, centers=None, cache=None):
    return _single_level("christoffel_volume", traj, centers, cache)


def residual_ricci_potential(traj, centers=None, cache=None):
    return _single_level("ricci_potential", traj, centers, cache)[0]


def residual_integrals(traj, centers=None, cache=None):
    return _single_level("integrals", traj, centers, cache)


def commutator_check(g, eta):
    """Curvature commutation relation for the closed (1,1)-form ``eta``."""
    res = geo.commutator_residual(g, eta)
    rep = IdentityReport("commutator", [], [res], [res])
    rep.passed = res <= 1e-10
    rep.exact = True
    return rep


# derivation replays


def replay_ricci_from_riemann(c, d_rm_frame=None):
    """Trace of the curvature equation plus inverse-metric terms, minus the Ricci RHS.

    Checks the verifier's own assembly; returns the max-norm of the gap.
    """
    c = c.traced()
    if d_rm_frame is None:
        d_rm_frame = c.frame.lower(c.d_riemann_exact(), "haha")
    rhs41 = riemann_rhs(c)
    traced = np.einsum("ijkk...->ij...", rhs41)
    ddinv = c.inverse_second_rhs()
    extra = np.einsum("ijkl...,kl...->ij...", c.rm, ddinv, optimize=True)
    d_rm = _frame_to_coords(c, d_rm_frame)
    extra = extra + 2 * np.einsum("kl...,ijkl...->ij...", c.dinv, d_rm, optimize=True)
    replay = traced + c.frame.lower(extra, "ha")
    return float(np.max(np.abs(replay - ricci_rhs(c, d_rm_frame))))


def replay_scalar_from_ricci(c):
    """g-trace of the Ricci RHS plus inverse-metric terms, minus the scalar RHS.

    Uses the exact first time derivatives of the curvature so that the
    comparison is free of finite-difference error.
    """
    c = c.traced()
    d_rm_frame = c.frame.lower(c.d_riemann_exact(), "haha")
    d_ric = c.d_ricci_exact()
    rhs44 = ricci_rhs(c, d_rm_frame)
    traced = np.einsum("ii...->...", rhs44)
    extra = (np.einsum("ij...,ij...->...", c.ric, c.inverse_second_rhs())
             + 2 * np.einsum("ij...,ij...->...", c.dinv, d_ric))
    replay = traced + extra
    return float(np.max(np.abs(replay - scalar_rhs(c, c.frame.lower(d_ric, "ha")))))


def _frame_to_coords(c, tf):
    """Inverse of the lower-index frame transform for a (2,2) tensor."""
    lam = _cholesky(c.grid, c.metric.g)
    lamc = np.conj(lam)
    # t_{i jbar k lbar} = L[i, a] conj(L[j, b]) L[k, c] conj(L[l, d]) tf[a, b, c, d]
    return np.einsum("ia...,jb...,kc...,ld...,abcd...->ijkl...", lam, lamc, lam, lamc, tf,
                     optimize=True)


def _cholesky(grid, g):
    if grid.n == 1:
        return np.sqrt(g[0, 0].real)[None, None].astype(complex)
    a = np.sqrt(g[0, 0].real)
    c = g[1, 0] / a
    d = np.sqrt(g[1, 1].real - np.abs(c) ** 2)
    out = np.zeros_like(g, dtype=complex)
    out[0, 0], out[1, 0], out[1, 1] = a, c, d
    return out


# suites


IDENTITY_ORDER = (
    "inverse_metric_first", "inverse_metric_second", "riemann", "ricci", "scalar",
    "christoffel", "volume_form", "ricci_potential", "total_scalar_curvature",
    "average_scalar_curvature", "v_wave", "normalized_flow",
)


def verify_trajectory(traj, strides=(4, 2, 1), centers=None, floor=EXACT_FLOOR,
                      order_range=DEFAULT_ORDER_RANGE, ceiling=DEFAULT_CEILING):
    """Run every identity at several snapshot spacings and judge convergence.

    ``traj`` holds snapshots at the finest spacing; level ``s`` uses every
    ``s``-th snapshot. ``centers`` default to interior times of the
    coarsest level.
    """
    strides = sorted(set(int(s) for s in strides), reverse=True)
    if len(strides) < 2 or strides[-1] < 1:
        raise ConfigInvalid("need at least two distinct positive strides")
    coarse = traj.every(strides[0])
    coarse.check_equispaced(3)
    if centers is None:
        centers = [coarse.snapshots[i].t for i in coarse.interior()]
    cache = GeometryCache(traj.problem)
    levels = {}
    for s in strides:
        sub = traj.every(s)
        per = {}
        for key in _CHECKS:
            for name, v in _run_check(key, sub, centers, cache).items():
                per[name] = v
        _, vw = flow.v_wave_residual(sub, centers)
        per["v_wave"] = {"max": float(np.max(vw)), "l2": float(np.max(vw)), "gauge": {}}
        levels[s] = (sub.spacing, per)
    norm = _normalized_levels(traj, strides, centers)
    reports = []
    for name in IDENTITY_ORDER:
        if name == "normalized_flow":
            rep = norm
        else:
            rep = IdentityReport(name, [], [], [])
            for s in strides:
                spacing, per = levels[s]
                rep.spacings.append(spacing)
                rep.residual_max.append(per[name]["max"])
                rep.residual_l2.append(per[name]["l2"])
                if per[name]["gauge"]:
                    rep.gauge[f"{spacing:g}"] = per[name]["gauge"]
        reports.append(judge(rep, floor, order_range, ceiling))
    return reports


def _normalized_levels(traj, strides, centers):
    rep = IdentityReport("normalized_flow", [], [], [])
    extra = []
    for s in strides:
        sub = traj.every(s)
        if len(sub.snapshots) >= 5:
            rec = flow.normalize_flow(sub, centers)
            worst = float(np.max(rec.residual))
            extra.append(max(rec.ricci_invariance, abs(np.max(np.abs(rec.normalized_volume - 1.0)))))
        else:
            worst = float("nan")
        rep.spacings.append(sub.spacing)
        rep.residual_max.append(worst)
        rep.residual_l2.append(worst)
    rep.gauge["scaling_checks"] = extra
    return rep


def frame_sanity(c):
    """Coordinate versus frame evaluation of scalar invariants (max gaps)."""
    inv = c.inv
    R_coord = c.scalar
    R_frame = np.einsum("aa...->...", c.ric_frame).real
    gsq_coord = np.einsum("ji...,jk...,lk...,li...->...", inv, c.gdot, inv, c.gdot, optimize=True).real
    eye = c.frame.lower(c.metric.g, "ha")
    ident = np.eye(c.grid.n).reshape((c.grid.n, c.grid.n) + (1,) * c.grid.ndim)
    return {
        "scalar_curvature": float(np.max(np.abs(R_coord - R_frame))),
        "gdot_norm": float(np.max(np.abs(gsq_coord - c.gdot_sq))),
        "metric_identity": float(np.max(np.abs(eye - ident))),
    }
