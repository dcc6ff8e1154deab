import json
import subprocess
import sys

import numpy as np
import pytest

from cfmsim import io
from cfmsim.cli import main


def run(*args):
    return main([str(a) for a in args])


def test_phantom_zero_spikes(tmp_path):
    out = tmp_path / "z.cfm1"
    assert run("phantom", "--kind", "spikes", "--count", 0, "--width", 8, "--height", 4, "--out", out) == 0
    data = out.read_bytes()
    assert data == b"CFM1 8 4 1\n" + bytes(8 * 32)


def test_end_to_end_raster_identity(tmp_path):
    scene, pats, meas, est = (tmp_path / n for n in ("s.cfm1", "p.cfmp1", "y.csv", "x.cfm1"))
    assert run("phantom", "--kind", "blobs", "--count", 5, "--seed", 7, "--width", 16, "--height", 16,
               "--sigma-min", 0.8, "--sigma-max", 1.5, "--out", scene) == 0
    assert run("patterns", "--ensemble", "raster", "--m", 256, "--n", 256, "--out", pats) == 0
    assert run("acquire", "--scene", scene, "--patterns", pats, "--noise", "noiseless", "--out", meas) == 0
    assert run("reconstruct", "--measurements", meas, "--patterns", pats, "--solver", "l1",
               "--lambda", 0, "--width", 16, "--height", 16, "--out", est) == 0
    truth = io.read_cfm1(scene).values
    np.testing.assert_allclose(io.read_cfm1(est).values, truth, atol=1e-8, rtol=0)
    diag = (tmp_path / "x.cfm1.diag.csv").read_text().splitlines()
    assert diag[0] == "iter,objective,residual" and len(diag) > 1
    summary = json.loads((tmp_path / "x.cfm1.diag.csv.json").read_text())
    assert summary["lambda"] == [0.0] and summary["converged"] == [True]


def test_outputs_are_deterministic(tmp_path):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        d.mkdir()
        run("phantom", "--kind", "spikes", "--count", 6, "--seed", 3, "--width", 16, "--height", 16, "--out", d / "s")
        run("patterns", "--ensemble", "bernoulli_binary", "--m", 48, "--n", 256, "--seed", 5, "--differential",
            "--out", d / "p")
        run("acquire", "--scene", d / "s", "--patterns", d / "p", "--noise", "poisson", "--budget", 1e4,
            "--seed", 2, "--out", d / "y.csv")
        run("reconstruct", "--measurements", d / "y.csv", "--patterns", d / "p", "--out", d / "x")
        outs.append([(d / n).read_bytes() for n in ("s", "p", "y.csv", "y.csv.json", "x", "x.diag.csv")])
    assert outs[0] == outs[1]
    summary = json.loads((tmp_path / "0" / "x.diag.csv.json").read_text())
    assert summary["lambda_rule"] == "auto" and summary["lambda"][0] > 0


@pytest.mark.parametrize("solver", ["l1", "tv"])
def test_reconstruct_recovers_sparse_scene(tmp_path, solver):
    run("phantom", "--kind", "beads", "--count", 1, "--radius", 3, "--seed", 1, "--width", 16, "--height", 16,
        "--out", tmp_path / "s")
    run("patterns", "--ensemble", "bernoulli_binary", "--m", 96, "--n", 256, "--seed", 2, "--differential",
        "--out", tmp_path / "p")
    run("acquire", "--scene", tmp_path / "s", "--patterns", tmp_path / "p", "--out", tmp_path / "y.csv")
    assert run("reconstruct", "--measurements", tmp_path / "y.csv", "--patterns", tmp_path / "p",
               "--solver", solver, "--lambda", 1e-3, "--tol", 1e-9, "--out", tmp_path / "x") == 0
    truth = io.read_cfm1(tmp_path / "s").values
    est = io.read_cfm1(tmp_path / "x").values
    assert np.linalg.norm(est - truth) / np.linalg.norm(truth) < 0.05


def test_joint_cube_pipeline(tmp_path):
    run("phantom", "--kind", "spikes", "--count", 3, "--seed", 4, "--width", 8, "--height", 8, "--channels", 3,
        "--out", tmp_path / "c")
    pats = []
    for c in range(3):
        pats.append(tmp_path / f"p{c}")
        run("patterns", "--ensemble", "bernoulli_binary", "--m", 20, "--n", 64, "--seed", 10 + c,
            "--differential", "--out", pats[-1])
    # acquire takes one pattern file; use it for every channel here
    run("acquire", "--scene", tmp_path / "c", "--patterns", pats[0], "--out", tmp_path / "y.csv")
    assert run("reconstruct", "--measurements", tmp_path / "y.csv", "--patterns", pats[0], "--solver", "joint",
               "--tol", 1e-9, "--out", tmp_path / "x") == 0
    truth = io.read_cfm1(tmp_path / "c")
    est = io.read_cfm1(tmp_path / "x")
    assert est.channels == 3
    assert np.linalg.norm(est.values - truth.values) / np.linalg.norm(truth.values) < 1e-2
    # per-channel pattern files that do not match the record hashes are rejected
    assert run("reconstruct", "--measurements", tmp_path / "y.csv", "--patterns", *pats, "--solver", "joint",
               "--out", tmp_path / "x2") == 5


def test_sweep_subcommand(tmp_path, capsys):
    spec = {
        "phantom": {"kind": "spikes", "count": 2},
        "width": 8, "height": 8, "ratios": [2, 4], "trials": 2,
        "noise": [{"kind": "noiseless"}],
        "solver": {"tol": 1e-8},
    }
    (tmp_path / "spec.json").write_text(json.dumps(spec))
    assert run("sweep", "--spec", tmp_path / "spec.json", "--no-timing") == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("ratio,noise_kind") and len(lines) == 5
    assert run("sweep", "--spec", tmp_path / "spec.json", "--no-timing", "--workers", 2,
               "--out", tmp_path / "r.csv") == 0
    assert (tmp_path / "r.csv").read_text().splitlines() == lines


def _category(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return err[0].split(":")[1]


def test_exit_codes(tmp_path, capsys):
    missing = tmp_path / "missing.cfm1"
    assert run("acquire", "--scene", missing, "--patterns", missing, "--out", tmp_path / "y") == 3
    assert _category(capsys) == "io"

    (tmp_path / "bad.cfm1").write_bytes(b"CFM9 1 1 1\n" + bytes(8))
    run("patterns", "--ensemble", "raster", "--m", 4, "--n", 16, "--out", tmp_path / "p")
    assert run("acquire", "--scene", tmp_path / "bad.cfm1", "--patterns", tmp_path / "p", "--out", tmp_path / "y") == 4
    assert _category(capsys) == "format"

    run("phantom", "--kind", "spikes", "--count", 1, "--width", 8, "--height", 8, "--out", tmp_path / "s")
    assert run("acquire", "--scene", tmp_path / "s", "--patterns", tmp_path / "p", "--out", tmp_path / "y") == 5
    assert _category(capsys) == "dimension"

    assert run("patterns", "--ensemble", "hadamard_rows", "--m", 32, "--n", 16, "--out", tmp_path / "h") == 6
    assert _category(capsys) == "config"

    (tmp_path / "y.csv").write_text("index,value\n0,nan\n1,1.0\n2,0.0\n3,0.0\n")
    p16 = io.read_cfmp1(tmp_path / "p")
    io.sidecar_path(tmp_path / "y.csv").write_text(json.dumps({
        "format": io.MEASUREMENT_FORMAT, "channels": 1, "m": 4, "physical_m": 4, "combined": False,
        "noise": {"kind": "noiseless"}, "pattern_hashes": [f"0x{p16.content_hash:016x}"], "photon_scales": [None],
    }))
    assert run("reconstruct", "--measurements", tmp_path / "y.csv", "--patterns", tmp_path / "p",
               "--out", tmp_path / "x") == 7
    assert _category(capsys) == "solver"


def test_usage_error_and_help():
    with pytest.raises(SystemExit) as exc:
        main(["phantom", "--kind", "stars"])
    assert exc.value.code == 2
    out = subprocess.run([sys.executable, "-m", "cfmsim", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for code in ("3  io", "4  format", "5  dimension", "6  config", "7  solver"):
        assert code in out.stdout
