"""Run configuration, snapshot files and tabular output.

Configs are JSON objects with an explicit ``schema_version``; unknown keys
are rejected at every nesting level. Snapshots are little-endian binary
files (magic ``HKRF``) with a JSON sidecar holding the config and a
SHA-256 of the binary payload.
"""

import csv
import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import flow
from . import geometry as geo
from . import grid as gs
from .errors import ConfigInvalid

SCHEMA_VERSION = 1
SNAPSHOT_MAGIC = b"HKRF"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIId")

CSV_HEADER = "# columns: t, Vol, r, max|R|, min-eig g, mean phi"


@dataclass
class Mode:
    k: list
    amplitude: float
    kind: str = "cos"


@dataclass
class MetricSpec:
    """Initial metric: ``flat`` (constant ``matrix``), ``potential`` (identity
    plus ``d dbar`` of the mode sum) or ``conformal`` (``exp(u)`` with ``u``
    the mode sum, n = 1 only)."""

    kind: str = "flat"
    matrix: list | None = None
    modes: list = field(default_factory=list)


@dataclass
class RandomModes:
    count: int = 2
    amplitude: float = 1e-3
    kmax: int = 2


@dataclass
class Tolerances:
    floor: float = 1e-12
    order_min: float = 1.8
    order_max: float = 2.2
    ceiling: float = 1.0


@dataclass
class Ladder:
    dt: list = field(default_factory=list)
    N: list = field(default_factory=list)


@dataclass
class VerifySpec:
    strides: list = field(default_factory=lambda: [4, 2, 1])
    centers: list | None = None


@dataclass
class RunConfig:
    schema_version: int = SCHEMA_VERSION
    n: int = 1
    N: int = 32
    L: float = 1.0
    metric: MetricSpec = field(default_factory=MetricSpec)
    phi0: list = field(default_factory=list)
    phi1: list = field(default_factory=list)
    dt: float | None = None
    cfl_safety: float | None = None
    T: float = 1.0
    snapshot_every: int = 10
    dealias: bool = True
    tolerances: Tolerances = field(default_factory=Tolerances)
    output_dir: str | None = None
    seed: int | None = None
    random_modes: RandomModes | None = None
    ladder: Ladder = field(default_factory=Ladder)
    verify: VerifySpec = field(default_factory=VerifySpec)
    plots: bool = True

    def as_dict(self):
        return dataclasses.asdict(self)

    def physics_dict(self):
        """Fields that fix the trajectory; used to match a resumed run."""
        d = self.as_dict()
        for key in ("T", "output_dir", "tolerances", "ladder", "verify", "plots"):
            d.pop(key)
        return d


_NESTED = {"metric": MetricSpec, "tolerances": Tolerances, "ladder": Ladder,
           "verify": VerifySpec, "random_modes": RandomModes}


def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{where}: expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigInvalid(f"{where}: unknown keys {unknown}")
    return data


def _modes(items, where):
    if not isinstance(items, list):
        raise ConfigInvalid(f"{where}: expected a list of modes")
    out = []
    for i, m in enumerate(items):
        _strict(Mode, m, f"{where}[{i}]")
        if "k" not in m or "amplitude" not in m:
            raise ConfigInvalid(f"{where}[{i}]: mode needs 'k' and 'amplitude'")
        amp = m["amplitude"]
        if isinstance(amp, (complex, bool)) or not isinstance(amp, (int, float)):
            raise ConfigInvalid(f"{where}[{i}]: amplitude must be a real number")
        if not all(isinstance(k, int) and not isinstance(k, bool) for k in m["k"]):
            raise ConfigInvalid(f"{where}[{i}]: wavevector entries must be integers")
        out.append(Mode(list(m["k"]), float(amp), m.get("kind", "cos")))
    return out


def config_from_dict(data):
    """Validate and build a RunConfig. Raises ConfigInvalid on any problem."""
    _strict(RunConfig, data, "config")
    if data.get("schema_version") != SCHEMA_VERSION:
        raise ConfigInvalid(f"schema_version must be {SCHEMA_VERSION}, got {data.get('schema_version')!r}")
    kw = dict(data)
    for key, cls in _NESTED.items():
        if kw.get(key) is not None:
            kw[key] = cls(**_strict(cls, kw[key], key))
    if isinstance(kw.get("metric"), MetricSpec):
        kw["metric"].modes = _modes(kw["metric"].modes, "metric.modes")
    kw["phi0"] = _modes(kw.get("phi0", []), "phi0")
    kw["phi1"] = _modes(kw.get("phi1", []), "phi1")
    try:
        cfg = RunConfig(**kw)
    except TypeError as err:
        raise ConfigInvalid(str(err)) from None
    validate(cfg)
    return cfg


def validate(cfg):
    gs.make_grid(cfg.n, cfg.N, cfg.L)
    if cfg.metric.kind not in ("flat", "potential", "conformal"):
        raise ConfigInvalid(f"unknown metric kind {cfg.metric.kind!r}")
    if (cfg.dt is None) == (cfg.cfl_safety is None):
        raise ConfigInvalid("give exactly one of dt and cfl_safety")
    if cfg.dt is not None and not cfg.dt > 0:
        raise ConfigInvalid("dt must be positive")
    if cfg.cfl_safety is not None and not cfg.cfl_safety > 0:
        raise ConfigInvalid("cfl_safety must be positive")
    if not cfg.T >= 0:
        raise ConfigInvalid("T must be non-negative")
    if not isinstance(cfg.snapshot_every, int) or cfg.snapshot_every < 1:
        raise ConfigInvalid("snapshot_every must be a positive integer")
    for m in cfg.metric.modes + cfg.phi0 + cfg.phi1:
        if len(m.k) != 2 * cfg.n:
            raise ConfigInvalid(f"wavevector {m.k} needs {2 * cfg.n} entries")
        if m.kind not in ("cos", "sin"):
            raise ConfigInvalid(f"unknown mode kind {m.kind!r}")
    if cfg.random_modes is not None and cfg.seed is None:
        raise ConfigInvalid("random_modes requires a seed")
    return cfg


def load_config(path):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigInvalid(f"config file {path} not found") from None
    except json.JSONDecodeError as err:
        raise ConfigInvalid(f"{path}: not valid JSON ({err})") from None
    return config_from_dict(data)


def save_config(cfg, path):
    Path(path).write_text(json.dumps(cfg.as_dict(), indent=2, sort_keys=True) + "\n")


# building problems from configs


def mode_sum(grid, modes):
    out = np.zeros(grid.shape)
    for m in modes:
        out = out + gs.fourier_mode(grid, m.k, m.amplitude, m.kind)
    return out


def random_modes(cfg):
    """Modes drawn from ``numpy.random.default_rng(seed)``; empty without a seed."""
    if cfg.random_modes is None:
        return []
    ms = cfg.random_modes
    rng = np.random.default_rng(cfg.seed)
    out = []
    for _ in range(ms.count):
        k = rng.integers(-ms.kmax, ms.kmax + 1, size=2 * cfg.n)
        if not np.any(k):
            k[0] = 1
        out.append(Mode([int(v) for v in k], float(ms.amplitude * rng.uniform(-1, 1)),
                        str(rng.choice(["cos", "sin"]))))
    return out


def build_grid(cfg, N=None):
    return gs.make_grid(cfg.n, cfg.N if N is None else N, cfg.L)


def build_metric(cfg, grid=None):
    grid = grid or build_grid(cfg)
    ms = cfg.metric
    if ms.kind == "flat":
        if ms.modes:
            raise ConfigInvalid("flat metrics take no modes")
        matrix = None if ms.matrix is None else np.asarray(ms.matrix, dtype=complex)
        if matrix is not None and matrix.shape != (cfg.n, cfg.n):
            raise ConfigInvalid(f"metric matrix must be {cfg.n}x{cfg.n}")
        if matrix is not None and np.max(np.abs(matrix - matrix.conj().T)) > 0:
            raise ConfigInvalid("metric matrix must be Hermitian")
        return geo.constant_metric(grid, matrix)
    if ms.matrix is not None:
        raise ConfigInvalid(f"{ms.kind} metrics take no matrix")
    u = mode_sum(grid, ms.modes)
    if ms.kind == "conformal":
        return geo.conformal_metric(grid, u)
    return geo.metric_from_potential(geo.constant_metric(grid), u)


def build_problem(cfg, grid=None):
    return flow.make_problem(build_metric(cfg, grid), cfg.dealias)


def initial_data(cfg, grid):
    phi0 = mode_sum(grid, cfg.phi0 + random_modes(cfg))
    psi0 = mode_sum(grid, cfg.phi1)
    return phi0, psi0


def time_step(cfg, problem, state):
    if cfg.dt is not None:
        return cfg.dt
    return flow.cfl_dt(state.metric(problem), problem.grid.h, cfg.cfl_safety)


# snapshots


def snapshot_name(step):
    return f"snap_{step:07d}.hkrf"


def encode_snapshot(grid, state):
    head = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, grid.n, grid.N, float(state.t))
    phi = np.ascontiguousarray(state.phi, dtype="<c16")
    psi = np.ascontiguousarray(state.psi, dtype="<c16")
    return head + phi.tobytes() + psi.tobytes()


def decode_snapshot(blob):
    """Inverse of encode_snapshot: ``(n, N, t, phi, psi)`` with real arrays."""
    if len(blob) < _HEADER.size:
        raise ConfigInvalid("snapshot file too short")
    magic, version, n, N, t = _HEADER.unpack_from(blob)
    if magic != SNAPSHOT_MAGIC:
        raise ConfigInvalid("not a snapshot file (bad magic)")
    if version != SNAPSHOT_VERSION:
        raise ConfigInvalid(f"unsupported snapshot version {version}")
    size = N ** (2 * n)
    if len(blob) != _HEADER.size + 2 * 16 * size:
        raise ConfigInvalid("snapshot payload has the wrong length")
    arr = np.frombuffer(blob, dtype="<c16", offset=_HEADER.size).reshape((2,) + (N,) * (2 * n))
    if np.any(arr.imag != 0):
        raise ConfigInvalid("snapshot potentials must be real")
    return n, N, t, arr[0].real.astype(float), arr[1].real.astype(float)


def save_snapshot(directory, grid, state, cfg, dt):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    blob = encode_snapshot(grid, state)
    path = directory / snapshot_name(state.step)
    path.write_bytes(blob)
    meta = {"config": cfg.as_dict(), "sha256": hashlib.sha256(blob).hexdigest(),
            "step": int(state.step), "t": float(state.t), "dt": float(dt),
            "format_version": SNAPSHOT_VERSION}
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def load_snapshot(path):
    """Read and integrity-check a snapshot. Returns ``(cfg, meta, n, N, t, phi, psi)``."""
    path = Path(path)
    try:
        blob = path.read_bytes()
        meta = json.loads(path.with_suffix(".json").read_text())
    except FileNotFoundError as err:
        raise ConfigInvalid(f"missing snapshot file {err.filename}") from None
    except json.JSONDecodeError:
        raise ConfigInvalid(f"corrupt sidecar for {path}") from None
    if hashlib.sha256(blob).hexdigest() != meta.get("sha256"):
        raise ConfigInvalid(f"{path}: integrity hash mismatch")
    cfg = config_from_dict(meta["config"])
    n, N, t, phi, psi = decode_snapshot(blob)
    if (n, N) != (cfg.n, cfg.N):
        raise ConfigInvalid(f"{path}: header disagrees with its config")
    return cfg, meta, n, N, t, phi, psi


def restore(path, problem=None):
    """Snapshot as a FlowState plus its config and step size."""
    cfg, meta, _, _, t, phi, psi = load_snapshot(path)
    problem = problem or build_problem(cfg)
    state = flow.restore_state(problem, phi, psi, t, meta["step"])
    return cfg, problem, state, meta["dt"]


def load_trajectory(directory):
    """Trajectory from every snapshot in ``directory`` (sorted by step)."""
    directory = Path(directory)
    if (directory / "snapshots").is_dir():
        directory = directory / "snapshots"
    paths = sorted(directory.glob("snap_*.hkrf"))
    if len(paths) < 3:
        raise ConfigInvalid(f"{directory}: need at least three snapshots")
    cfg, problem, first, dt = restore(paths[0])
    states = [first]
    for p in paths[1:]:
        other, _, state, other_dt = restore(p, problem)
        if other.physics_dict() != cfg.physics_dict() or other_dt != dt:
            raise ConfigInvalid(f"{p} belongs to a different run")
        states.append(state)
    steps = np.diff([s.step for s in states])
    if np.any(steps != steps[0]):
        raise ConfigInvalid("snapshots are not equispaced")
    traj = flow.Trajectory(problem.grid, states, dt * int(steps[0]), problem, dt=dt)
    traj.check_equispaced(3)
    return cfg, traj


# tables


def write_series(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        w = csv.writer(fh)
        w.writerow(flow.SERIES_COLUMNS)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])


def read_series(path):
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    rows = [[float(v) for v in r] for r in reader]
    return header, np.array(rows).reshape(-1, len(header))


def write_table(path, header, rows, comment=None):
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def write_json(path, obj):
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def _plain(obj):
    """Numpy scalars to Python; non-finite floats to None so output stays NaN-free."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj

