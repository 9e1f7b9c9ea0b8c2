import json
import math

import numpy as np
import pytest
from filelock import FileLock
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hkflow import cli, flow, io
from hkflow import grid as gs
from hkflow.errors import ConfigInvalid

FLAT = {"schema_version": 1, "n": 1, "N": 16, "dt": 5e-3, "T": 0.5, "snapshot_every": 20}
LINEAR = {"schema_version": 1, "n": 1, "N": 16, "dt": 1e-3, "T": 0.2, "snapshot_every": 20,
          "phi0": [{"k": [1, 0], "amplitude": 1e-3}],
          "phi1": [{"k": [0, 1], "amplitude": 1e-3, "kind": "sin"}]}
MEXP = {"schema_version": 1, "n": 1, "N": 64, "dt": 1e-3, "T": 0.0,
        "metric": {"kind": "conformal", "modes": [{"k": [1, 0], "amplitude": 0.1}]}}


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return p


def no_nan_files(root):
    for p in root.rglob("*"):
        if p.suffix in (".json", ".csv"):
            text = p.read_text()
            assert "NaN" not in text and "nan" not in text and "Infinity" not in text, p


# config


def test_config_defaults_and_round_trip(tmp_path):
    cfg = io.config_from_dict(LINEAR)
    assert cfg.phi0[0].k == [1, 0] and cfg.phi1[0].kind == "sin"
    io.save_config(cfg, tmp_path / "c.json")
    again = io.load_config(tmp_path / "c.json")
    assert again == cfg


@pytest.mark.parametrize("patch", [
    {"bogus": 1},
    {"schema_version": 2},
    {"metric": {"kind": "flat", "colour": "red"}},
    {"phi0": [{"k": [1, 0], "amplitude": 0.1, "phase": 0}]},
    {"phi0": [{"k": [1, 0, 0, 0], "amplitude": 0.1}]},
    {"phi0": [{"k": [1.5, 0], "amplitude": 0.1}]},
    {"phi0": [{"k": [1, 0], "amplitude": "big"}]},
    {"N": 12},
    {"n": 3},
    {"cfl_safety": 0.5},
    {"dt": -1.0},
    {"snapshot_every": 0},
    {"metric": {"kind": "hyperbolic"}},
    {"random_modes": {"count": 2}},
])
def test_config_rejections(patch):
    with pytest.raises(ConfigInvalid):
        io.config_from_dict({**LINEAR, **patch})


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigInvalid):
        io.load_config(tmp_path / "missing.json")
    (tmp_path / "broken.json").write_text("{")
    with pytest.raises(ConfigInvalid):
        io.load_config(tmp_path / "broken.json")


def test_random_modes_are_seeded():
    cfg = io.config_from_dict({**LINEAR, "seed": 7, "random_modes": {"count": 3, "amplitude": 1e-3}})
    a, b = io.random_modes(cfg), io.random_modes(cfg)
    assert a == b and len(a) == 3
    other = io.config_from_dict({**LINEAR, "seed": 8, "random_modes": {"count": 3, "amplitude": 1e-3}})
    assert io.random_modes(other) != a


def test_metric_kinds():
    flat = io.build_metric(io.config_from_dict({**FLAT, "n": 2, "N": 8,
                                                 "metric": {"kind": "flat", "matrix": [[2, 0], [0, 1]]}}))
    assert np.allclose(flat.det, 2.0)
    pot = io.build_metric(io.config_from_dict(
        {**FLAT, "metric": {"kind": "potential", "modes": [{"k": [1, 1], "amplitude": 0.01}]}}))
    assert gs.integrate(pot.grid, pot.det).real == pytest.approx(1.0)
    with pytest.raises(ConfigInvalid):
        io.build_metric(io.config_from_dict({**FLAT, "metric": {"kind": "flat", "matrix": [[1, 1j], [1j, 1]]}}))


# snapshots


@settings(max_examples=20, deadline=None)
@given(phi=arrays(np.float64, (8, 8), elements=st.floats(allow_nan=False, allow_infinity=False, width=64)),
       psi=arrays(np.float64, (8, 8), elements=st.floats(allow_nan=False, allow_infinity=False, width=64)),
       t=st.floats(0, 1e6))
def test_snapshot_encoding_is_bit_exact(phi, psi, t):
    g = gs.make_grid(1, 8)
    state = flow.FlowState(t, phi, psi)
    n, N, t2, phi2, psi2 = io.decode_snapshot(io.encode_snapshot(g, state))
    assert (n, N) == (1, 8) and t2 == t
    assert phi2.tobytes() == phi.astype(float).tobytes()
    assert psi2.tobytes() == psi.astype(float).tobytes()


def test_snapshot_layout(tmp_path):
    g = gs.make_grid(1, 8)
    phi = np.arange(64.0).reshape(8, 8)
    blob = io.encode_snapshot(g, flow.FlowState(0.5, phi, -phi))
    assert blob[:4] == b"HKRF"
    assert int.from_bytes(blob[4:8], "little") == 1
    assert int.from_bytes(blob[12:16], "little") == 8
    assert np.frombuffer(blob[16:24], dtype="<f8")[0] == 0.5
    body = np.frombuffer(blob[24:], dtype="<f8")
    assert body[2] == 1.0 and body[3] == 0.0  # (real, imag) pairs
    with pytest.raises(ConfigInvalid):
        io.decode_snapshot(b"XXXX" + blob[4:])
    with pytest.raises(ConfigInvalid):
        io.decode_snapshot(blob[:-8])


def test_snapshot_hash_mismatch(tmp_path):
    cfg = io.config_from_dict(LINEAR)
    pb = io.build_problem(cfg)
    phi0, psi0 = io.initial_data(cfg, pb.grid)
    state = flow.initial_state(pb, phi0, psi0)
    path = io.save_snapshot(tmp_path, pb.grid, state, cfg, cfg.dt)
    _, _, restored, dt = io.restore(path)
    assert np.array_equal(restored.phi, state.phi) and dt == cfg.dt
    blob = bytearray(path.read_bytes())
    blob[-1] ^= 0x10
    path.write_bytes(bytes(blob))
    with pytest.raises(ConfigInvalid, match="hash"):
        io.load_snapshot(path)


# command line


def test_run_flat_static(tmp_path):
    cfg = write(tmp_path, "flat.json", FLAT)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    out = tmp_path / "o"
    assert (out / "series.csv").read_text().startswith("# columns: t, Vol, r, max|R|")
    header, data = io.read_series(out / "series.csv")
    assert header == list(flow.SERIES_COLUMNS)
    assert np.max(np.abs(data[:, 1] - 1.0)) < 1e-14
    assert np.max(data[:, 3]) <= 1e-12
    summary = json.loads((out / "summary.json").read_text())
    assert summary["status"] == "ok" and summary["steps"] == 100
    assert (out / "series.svg").exists()
    assert len(list((out / "snapshots").glob("*.hkrf"))) == 6


def test_run_is_deterministic(tmp_path):
    cfg = write(tmp_path, "lin.json", LINEAR)
    for name in ("a", "b"):
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / name)]) == 0
    for f in ("series.csv", "summary.json", "series.svg", "snapshots/snap_0000200.hkrf"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_singular_run_exits_3(tmp_path):
    cfg = write(tmp_path, "s.json", {**FLAT, "N": 32, "phi0": [{"k": [1, 0], "amplitude": 0.2}]})
    out = tmp_path / "s"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 3
    rep = json.loads((out / "singularity.json").read_text())
    assert rep["failed_t"] == 0.0 and rep["location"] == [0, 0]
    assert rep["min_eigenvalue"] == pytest.approx(1 - 0.2 * math.pi**2)
    no_nan_files(out)


def test_mid_run_breakdown_exits_3(tmp_path):
    cfg = write(tmp_path, "b.json", {**FLAT, "T": 2.0, "dt": 1e-3, "snapshot_every": 50,
                                     "phi1": [{"k": [1, 0], "amplitude": 0.5}]})
    out = tmp_path / "b"
    assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 3
    rep = json.loads((out / "singularity.json").read_text())
    assert 0 < rep["last_good_t"] < rep["failed_t"]
    no_nan_files(out)


def test_resume_is_bit_exact(tmp_path):
    full = write(tmp_path, "full.json", LINEAR)
    half = write(tmp_path, "half.json", {**LINEAR, "T": 0.1})
    assert cli.main(["run", "--config", str(full), "--out", str(tmp_path / "full")]) == 0
    assert cli.main(["run", "--config", str(half), "--out", str(tmp_path / "half")]) == 0
    snap = tmp_path / "half" / "snapshots" / "snap_0000100.hkrf"
    assert cli.main(["run", "--config", str(full), "--out", str(tmp_path / "res"),
                     "--resume", str(snap)]) == 0
    for name in ("snap_0000160.hkrf", "snap_0000200.hkrf"):
        a = (tmp_path / "full" / "snapshots" / name).read_bytes()
        b = (tmp_path / "res" / "snapshots" / name).read_bytes()
        assert a == b
    other = write(tmp_path, "other.json", {**LINEAR, "N": 32})
    assert cli.main(["run", "--config", str(other), "--out", str(tmp_path / "x"),
                     "--resume", str(snap)]) == 2


def test_verify_from_config_and_snapshot_dir(tmp_path, capsys):
    cfg = write(tmp_path, "nl.json", {"schema_version": 1, "n": 1, "N": 32, "dt": 5e-4, "T": 0.4,
                                      "snapshot_every": 20,
                                      "phi0": [{"k": [1, 0], "amplitude": 0.02}],
                                      "phi1": [{"k": [0, 1], "amplitude": 0.02}],
                                      "verify": {"strides": [4, 2, 1], "centers": [0.12, 0.2, 0.28]}})
    assert cli.main(["verify", "--config", str(cfg), "--out", str(tmp_path / "v")]) == 0
    doc = json.loads((tmp_path / "v" / "verify.json").read_text())
    assert doc["passed"] and len(doc["identities"]) == 12
    assert "riemann" in capsys.readouterr().out
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    assert cli.main(["verify", "--config", str(tmp_path / "r"), "--out", str(tmp_path / "v2")]) == 0
    doc2 = json.loads((tmp_path / "v2" / "verify.json").read_text())
    assert doc2["identities"] == doc["identities"]


def test_verify_reports_failure_with_status_1(tmp_path):
    strict = {**LINEAR, "tolerances": {"ceiling": 1e-12}}
    cfg = write(tmp_path, "strict.json", strict)
    assert cli.main(["verify", "--config", str(cfg), "--out", str(tmp_path / "v")]) == 1


def test_verify_rejects_corrupted_snapshot(tmp_path):
    cfg = write(tmp_path, "lin.json", LINEAR)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0
    snap = tmp_path / "r" / "snapshots" / "snap_0000100.hkrf"
    blob = bytearray(snap.read_bytes())
    blob[64] ^= 1
    snap.write_bytes(bytes(blob))
    assert cli.main(["verify", "--config", str(tmp_path / "r"), "--out", str(tmp_path / "v")]) == 2


def test_converge(tmp_path):
    cfg = write(tmp_path, "c.json", {**LINEAR, "T": 0.4, "ladder": {"dt": [4e-3, 2e-3, 1e-3]}})
    assert cli.main(["converge", "--config", str(cfg), "--out", str(tmp_path / "c")]) == 0
    doc = json.loads((tmp_path / "c" / "converge.json").read_text())
    assert 1.8 <= doc["dt"]["slope"] <= 2.2
    mexp = write(tmp_path, "m.json", {**MEXP, "ladder": {"N": [16, 32, 64]}})
    assert cli.main(["converge", "--config", str(mexp), "--out", str(tmp_path / "m")]) == 0
    doc = json.loads((tmp_path / "m" / "converge.json").read_text())
    assert doc["N"]["oracle"] == "analytic" and doc["N"]["errors"][1] <= 1e-11
    single = write(tmp_path, "s.json", {**LINEAR, "ladder": {"dt": [1e-3]}})
    assert cli.main(["converge", "--config", str(single), "--out", str(tmp_path / "s")]) == 2


def test_curvature_report(tmp_path):
    cfg = write(tmp_path, "m.json", MEXP)
    assert cli.main(["curvature", "--config", str(cfg), "--out", str(tmp_path / "k")]) == 0
    rep = json.loads((tmp_path / "k" / "curvature.json").read_text())
    assert rep["R_max"] == pytest.approx(0.1 * math.pi**2 * math.exp(-0.1), abs=1e-11)
    assert rep["R_max_at"] == [0.0, 0.0]
    assert abs(rep["r"]) < 1e-12 and abs(rep["integral_R"]) < 1e-10
    flat = write(tmp_path, "f.json", FLAT)
    assert cli.main(["curvature", "--config", str(flat), "--out", str(tmp_path / "f")]) == 0
    rep = json.loads((tmp_path / "f" / "curvature.json").read_text())
    assert rep["R_max"] == 0 and rep["vol"] == pytest.approx(1.0)


def test_lockfile_blocks_concurrent_use(tmp_path):
    cfg = write(tmp_path, "flat.json", FLAT)
    out = tmp_path / "o"
    out.mkdir()
    with FileLock(str(out / ".hkflow.lock")):
        assert cli.main(["run", "--config", str(cfg), "--out", str(out)]) == 2


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("HKFLOW_THREADS", "3")
    assert cli.threads_from(None) == 3
    assert cli.threads_from(2) == 2
    monkeypatch.setenv("HKFLOW_THREADS", "many")
    with pytest.raises(ConfigInvalid):
        cli.threads_from(None)


def test_bad_config_exits_2(tmp_path):
    cfg = write(tmp_path, "bad.json", {**FLAT, "extra": True})
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
