"""Command line front end: ``hkflow run|verify|converge|curvature``.

Exit status: 0 success, 1 an identity failed verification, 2 invalid
configuration, 3 metric degeneration (singularity), 4 non-finite numerics.
"""

import argparse
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from . import flow
from . import geometry as geo
from . import grid as gs
from . import io
from . import verify
from .errors import ConfigInvalid, HKFlowError, MetricDegenerate

log = logging.getLogger("hkflow")

EXIT_OK, EXIT_FAILED, EXIT_SINGULAR = 0, 1, 3


@contextmanager
def locked(out):
    out.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(out / ".hkflow.lock"), timeout=0)
    try:
        lock.acquire()
    except Timeout:
        raise ConfigInvalid(f"output directory {out} is in use by another hkflow process") from None
    try:
        yield out
    finally:
        lock.release()


def _plot(fn, *args, **kw):
    """Plotting is best effort and never changes the exit status."""
    try:
        fn(*args, **kw)
    except Exception as err:  # noqa: BLE001
        log.warning("plot %s skipped: %s", args[-1] if args else "", err)


def _background(cfg, grid=None):
    try:
        return io.build_problem(cfg, grid)
    except MetricDegenerate as err:
        raise ConfigInvalid(f"initial background metric is not positive definite: {err}") from None


# run


def cmd_run(cfg, out, resume=None):
    started = time.perf_counter()
    if resume is not None:
        rcfg, problem, state, dt = io.restore(resume)
        if rcfg.physics_dict() != cfg.physics_dict():
            raise ConfigInvalid("snapshot was produced by a different configuration")
        log.info("resuming from %s at t=%g (step %d)", resume, state.t, state.step)
    else:
        grid = io.build_grid(cfg)
        problem = _background(cfg, grid)
        phi0, psi0 = io.initial_data(cfg, grid)
        try:
            state = flow.initial_state(problem, phi0, psi0)
        except MetricDegenerate as err:
            report = flow.singularity_at_start(err)
            io.write_json(out / "singularity.json", report.as_dict())
            io.write_json(out / "summary.json", {"status": "singular", "config": cfg.as_dict(),
                                                 "singularity": report.as_dict()})
            log.error("initial metric degenerate: %s", err)
            return EXIT_SINGULAR
        dt = io.time_step(cfg, problem, state)
    if cfg.T < state.t:
        raise ConfigInvalid(f"T={cfg.T} is before the snapshot time {state.t}")

    traj = flow.integrate_flow(problem, state, dt, cfg.T, cfg.snapshot_every)
    snaps = out / "snapshots"
    for s in traj.snapshots:
        io.save_snapshot(snaps, problem.grid, s, cfg, dt)
    io.write_series(out / "series.csv", traj.series)
    series = np.array(traj.series)
    last = traj.snapshots[-1]
    summary = {
        "status": "singular" if traj.singularity else "ok",
        "config": cfg.as_dict(),
        "dt": dt,
        "steps": last.step,
        "t_final": last.t,
        "snapshots": len(traj.snapshots),
        "final": dict(zip(flow.SERIES_COLUMNS, series[-1])),
        "max_abs_r": float(np.max(np.abs(series[:, 2]))),
        "max_abs_phi": float(np.max(np.abs(last.phi))),
        "min_eig_g": float(np.min(series[:, 4])),
        "singularity": traj.singularity.as_dict() if traj.singularity else None,
    }
    io.write_json(out / "summary.json", summary)
    if cfg.plots:
        from . import plots
        _plot(plots.series_figure, list(flow.SERIES_COLUMNS), series, out / "series.svg")
    log.info("run finished in %.2f s, %d steps", time.perf_counter() - started, last.step)
    if traj.singularity:
        io.write_json(out / "singularity.json", traj.singularity.as_dict())
        log.error("flow broke down: %s", traj.singularity.message)
        return EXIT_SINGULAR
    return EXIT_OK


# verify


def _trajectory_for(source):
    path = Path(source)
    if path.is_dir():
        return io.load_trajectory(path)
    cfg = io.load_config(path)
    grid = io.build_grid(cfg)
    problem = _background(cfg, grid)
    phi0, psi0 = io.initial_data(cfg, grid)
    state = flow.initial_state(problem, phi0, psi0)
    dt = io.time_step(cfg, problem, state)
    traj = flow.integrate_flow(problem, state, dt, cfg.T, cfg.snapshot_every, record_series=False)
    if traj.singularity:
        raise MetricDegenerate(traj.singularity.message, traj.singularity.location,
                               traj.singularity.min_eigenvalue, traj.singularity.failed_t)
    return cfg, traj


def consistency_checks(traj):
    """Assembly replays and frame sanity at the middle snapshot."""
    c = verify.SnapshotGeometry(traj.problem, traj.snapshots[len(traj.snapshots) // 2])
    out = {"t": c.state.t,
           "replay_ricci_from_riemann": verify.replay_ricci_from_riemann(c),
           "replay_scalar_from_ricci": verify.replay_scalar_from_ricci(c)}
    out.update({f"frame_{k}": v for k, v in verify.frame_sanity(c).items()})
    return out


def format_table(reports):
    lines = [f"{'identity':26s} {'finest max':>11s} {'order':>7s}  result"]
    for r in reports:
        order = "exact" if r.exact else ("-" if r.order is None else f"{r.order:.3f}")
        lines.append(f"{r.name:26s} {r.residual_max[-1]:11.3e} {order:>7s}  "
                     f"{'pass' if r.passed else 'FAIL'}")
    return "\n".join(lines)


def cmd_verify(source, out):
    started = time.perf_counter()
    cfg, traj = _trajectory_for(source)
    tol = cfg.tolerances
    reports = verify.verify_trajectory(
        traj, strides=cfg.verify.strides, centers=cfg.verify.centers, floor=tol.floor,
        order_range=(tol.order_min, tol.order_max), ceiling=tol.ceiling)
    ok = all(r.passed for r in reports)
    doc = {"passed": ok, "identities": [r.as_dict() for r in reports],
           "consistency": consistency_checks(traj), "config": cfg.as_dict()}
    io.write_json(out / "verify.json", doc)
    table = format_table(reports)
    (out / "verify.txt").write_text(table + "\n")
    print(table)
    if cfg.plots:
        from . import plots
        _plot(plots.identity_figure, reports, out / "identities.svg")
    log.info("verify finished in %.2f s", time.perf_counter() - started)
    return EXIT_OK if ok else EXIT_FAILED


# converge


def _final_phi(cfg, problem, dt):
    grid = problem.grid
    phi0, psi0 = io.initial_data(cfg, grid)
    state = flow.initial_state(problem, phi0, psi0)
    nsteps = cfg.T / dt
    if abs(nsteps - round(nsteps)) > 1e-9 * max(1.0, nsteps):
        raise ConfigInvalid(f"T={cfg.T} is not a whole number of steps of {dt}")
    traj = flow.integrate_flow(problem, state, dt, cfg.T, snapshot_every=int(round(nsteps)) or 1,
                               record_series=False)
    if traj.singularity:
        raise MetricDegenerate(traj.singularity.message, traj.singularity.location,
                               traj.singularity.min_eigenvalue, traj.singularity.failed_t)
    return traj.snapshots[-1].phi


def dt_ladder(cfg, dts):
    """Errors of ``phi(T)`` against a run at a quarter of the smallest step."""
    problem = _background(cfg)
    ref = _final_phi(cfg, problem, min(dts) / 4)
    errors = [float(np.max(np.abs(_final_phi(cfg, problem, dt) - ref))) for dt in dts]
    return errors, verify.convergence_order(dts, errors)


def _curvature_fields(cfg, N):
    grid = io.build_grid(cfg, N)
    m = io.build_metric(cfg, grid)
    ric = geo.ricci(m)
    return grid, {"christoffel": geo.christoffel(m), "riemann": geo.riemann(m), "ricci": ric,
                  "scalar": geo.scalar_curvature(m, ric)}


def n_ladder(cfg, Ns):
    """Curvature errors per resolution.

    Conformal metrics (n = 1) are compared with their closed-form curvature;
    other metrics with a run at twice the finest resolution, sampled on the
    coarse grid points.
    """
    errors = []
    if cfg.metric.kind == "conformal":
        oracle = "analytic"
        for N in Ns:
            grid, got = _curvature_fields(cfg, N)
            exact = geo.conformal_curvature_exact(
                grid, [(m.k, m.amplitude, m.kind) for m in cfg.metric.modes])
            errors.append(max(float(np.max(np.abs(got[k] - exact[k]))) for k in exact))
        return errors, oracle
    oracle = "self"
    top = 2 * max(Ns)
    _, ref = _curvature_fields(cfg, top)
    for N in Ns:
        grid, got = _curvature_fields(cfg, N)
        sl = (Ellipsis,) + (slice(None, None, top // N),) * grid.ndim
        errors.append(max(float(np.max(np.abs(got[k] - ref[k][sl]))) for k in got))
    return errors, oracle


def cmd_converge(cfg, out):
    lad = cfg.ladder
    if not lad.dt and not lad.N:
        raise ConfigInvalid("converge needs a dt or N ladder")
    for name, levels in (("dt", lad.dt), ("N", lad.N)):
        if levels and len(set(levels)) < 3:
            raise ConfigInvalid(f"{name} ladder needs at least three distinct levels, got {levels}")
    doc = {"config": cfg.as_dict()}
    rows = []
    if lad.dt:
        dts = sorted(set(float(v) for v in lad.dt), reverse=True)
        errors, slope = dt_ladder(cfg, dts)
        doc["dt"] = {"levels": dts, "errors": errors, "slope": slope, "reference_dt": min(dts) / 4}
        rows += [("dt", h, e) for h, e in zip(dts, errors)]
        print(f"dt ladder: slope {slope:.3f}")
    if lad.N:
        Ns = sorted(set(int(v) for v in lad.N))
        errors, oracle = n_ladder(cfg, Ns)
        doc["N"] = {"levels": Ns, "errors": errors, "oracle": oracle,
                    "slope": verify.convergence_order(Ns, np.maximum(errors, 1e-300))}
        rows += [("N", h, e) for h, e in zip(Ns, errors)]
        print("N ladder: " + ", ".join(f"N={n}: {e:.2e}" for n, e in zip(Ns, errors)))
    io.write_table(out / "converge.csv", ("ladder", "level", "error"),
                   [(a, repr(b), repr(c)) for a, b, c in rows],
                   comment="columns: ladder (dt or N), level, max-norm error")
    io.write_json(out / "converge.json", doc)
    if cfg.plots:
        from . import plots
        if lad.dt:
            _plot(plots.ladder_figure, doc["dt"]["levels"], doc["dt"]["errors"],
                  out / "converge_dt.svg", xlabel="dt", slope=doc["dt"]["slope"])
        if lad.N:
            _plot(plots.ladder_figure, doc["N"]["levels"], doc["N"]["errors"],
                  out / "converge_N.svg", xlabel="N")
    return EXIT_OK


# curvature


def curvature_report(cfg):
    grid = io.build_grid(cfg)
    g0 = io.build_metric(cfg, grid)
    phi0, _ = io.initial_data(cfg, grid)
    m = geo.metric_from_potential(g0, phi0)
    ric = geo.ricci(m)
    rm = geo.riemann(m)
    R = geo.scalar_curvature(m, ric)
    _, vol, r = geo.volume_and_average(m, R)
    frame = verify.FramePointData(verify.cholesky_inverse(grid, m.g))
    ric_f = np.moveaxis(frame.lower(ric, "ha"), (0, 1), (-2, -1))
    eig = np.linalg.eigvalsh(ric_f)
    imax, imin = np.unravel_index(np.argmax(R), R.shape), np.unravel_index(np.argmin(R), R.shape)
    pair, conj = geo.curvature_symmetry_residuals(rm)
    return {
        "R_max": float(R[imax]),
        "R_max_at": [float(c[imax]) for c in grid.coords],
        "R_min": float(R[imin]),
        "R_min_at": [float(c[imin]) for c in grid.coords],
        "ricci_eigenvalue_min": float(eig.min()),
        "ricci_eigenvalue_max": float(eig.max()),
        "vol": float(vol),
        "r": float(r),
        "integral_R": float(gs.integrate(grid, R, m.det).real),
        "kahler_residual": geo.kahler_residual(grid, m.g),
        "symmetry_pair": pair,
        "symmetry_conjugate": conj,
        "ricci_route_gap": float(np.max(np.abs(geo.ricci_from_riemann(m, rm) - ric))),
    }


def cmd_curvature(cfg, out):
    rep = curvature_report(cfg)
    io.write_json(out / "curvature.json", rep)
    for k, v in rep.items():
        print(f"{k:22s} {v}")
    return EXIT_OK


# entry point


def threads_from(arg):
    if arg is not None:
        return arg
    env = os.environ.get("HKFLOW_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigInvalid(f"HKFLOW_THREADS must be an integer, got {env!r}") from None
    return 1


def build_parser():
    p = argparse.ArgumentParser(prog="hkflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "verify", "converge", "curvature"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True,
                       help="config JSON (verify also takes a snapshot directory)")
        s.add_argument("--out", help="output directory (default: config output_dir or ./hkflow_out)")
        s.add_argument("--threads", type=int, help="FFT worker threads (env HKFLOW_THREADS)")
        s.add_argument("-v", "--verbose", action="store_true")
        if name == "run":
            s.add_argument("--resume", help="snapshot file to continue from")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        gs.set_threads(threads_from(args.threads))
        source = Path(args.config)
        cfg = None if (args.command == "verify" and source.is_dir()) else io.load_config(source)
        out = Path(args.out or (cfg and cfg.output_dir) or "hkflow_out")
        with locked(out):
            if args.command == "run":
                return cmd_run(cfg, out, args.resume)
            if args.command == "verify":
                return cmd_verify(source, out)
            if args.command == "converge":
                return cmd_converge(cfg, out)
            return cmd_curvature(cfg, out)
    except HKFlowError as err:
        print(f"hkflow: {type(err).__name__}: {err}", file=sys.stderr)
        return err.exit_status


if __name__ == "__main__":
    sys.exit(main())
