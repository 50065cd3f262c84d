import json
import subprocess
import sys

import numpy as np
import pytest

from ptyhybrid.cli import BENCH_COLUMNS, main
from ptyhybrid.ptyio import Bundle, read_bundle, read_trace, write_bundle


def run(*args):
    try:
        return main([str(a) for a in args])
    except SystemExit as exc:
        return exc.code


SMALL = ("--object-size", 64, 64, "--probe-size", 16, "--spokes", 16, "--step", 8,
         "--jitter", 2, "--probe-chirp", 8)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "ds"
    assert run("simulate", *SMALL, "--seed", 3, "--out", out) == 0
    return out


def test_simulate_desk_grid(tmp_path, capsys):
    out = tmp_path / "ds"
    assert run("simulate", "--phantom", "siemens", "--object-size", 256, 256,
               "--probe-size", 64, "--step", 16, "--jitter", 2, "--seed", 1,
               "--out", out) == 0
    assert "n=169" in capsys.readouterr().out
    b = read_bundle(out)
    assert b.arrays["d"].shape == (169, 64, 64)
    manifest = json.loads((out / "run.json").read_text())
    assert manifest["config"]["sim"]["seed"] == 1 and manifest["seeds"] == {"seed": 1}
    assert {"command", "version", "started", "finished"} <= set(manifest)


def test_simulate_usage_errors(tmp_path, capsys):
    assert run("simulate", "--probe-size", 64, "--step", 64, "--out", tmp_path / "x") == 2
    assert "no overlap" in capsys.readouterr().err
    assert run("simulate", "--probe-size", 64) == 2
    assert run("simulate", "--photons", 0, "--out", tmp_path / "y") == 2
    assert run() == 2


def test_simulate_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("simulate", *SMALL, "--out", blocker / "ds") == 3


def test_reconstruct_one_vs_two_workers(tmp_path, data_dir):
    assert run("reconstruct", "--data", data_dir, "--workers", 1, "--iters", 2,
               "--out", tmp_path / "r1") == 0
    assert run("reconstruct", "--data", data_dir, "--workers", 2, "--iters", 2,
               "--consistency-check", "--out", tmp_path / "r2") == 0
    a = read_bundle(tmp_path / "r1").arrays["psi"]
    b = read_bundle(tmp_path / "r2").arrays["psi"]
    assert np.linalg.norm(a - b) <= 1e-5 * np.linalg.norm(a)
    rows = read_trace(tmp_path / "r2.trace.csv")
    assert [r["iter"] for r in rows] == [0, 1] and rows[0]["bytes_border"] > 0
    manifest = json.loads((tmp_path / "r2" / "run.json").read_text())
    assert manifest["partition"]["workers"] == 2
    assert manifest["config"]["solver"]["gamma0"] == 1.0


def test_reconstruct_env_workers(tmp_path, data_dir, monkeypatch):
    monkeypatch.setenv("PTYGER_WORKERS", "2")
    assert run("reconstruct", "--data", data_dir, "--iters", 1, "--out", tmp_path / "r") == 0
    assert json.loads((tmp_path / "r" / "run.json").read_text())["config"]["workers"] == 2
    monkeypatch.setenv("PTYGER_WORKERS", "two")
    assert run("reconstruct", "--data", data_dir, "--iters", 1, "--out", tmp_path / "s") == 2


def test_reconstruct_usage_errors(tmp_path, data_dir):
    base = ("reconstruct", "--data", data_dir, "--out", tmp_path / "r", "--iters", 1)
    assert run(*base, "--workers", 0) == 2
    assert run(*base, "--solver", "gd") == 2
    assert run(*base, "--tau", 1.5) == 2
    assert run(*base, "--workers", 8) == 2  # 64 rows cannot hold 8 strips of 16


def test_reconstruct_gd(tmp_path, data_dir):
    assert run("reconstruct", "--data", data_dir, "--solver", "gd", "--gd-gamma", 1e-3,
               "--iters", 2, "--out", tmp_path / "g", "--trace", tmp_path / "g.csv") == 0
    assert [r["gamma"] for r in read_trace(tmp_path / "g.csv")] == [1e-3, 1e-3]


def test_reconstruct_data_errors(tmp_path, data_dir):
    assert run("reconstruct", "--data", tmp_path / "nope", "--iters", 1,
               "--out", tmp_path / "r") == 3
    broken = tmp_path / "broken"
    b = read_bundle(data_dir)
    b.arrays["d"] = b.arrays["d"].copy()
    b.arrays["d"][0, 0, 0] = -1
    write_bundle(b, broken)
    assert run("reconstruct", "--data", broken, "--iters", 1, "--out", tmp_path / "r") == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_reconstruct_numerical_failure(tmp_path, data_dir, capsys):
    assert run("reconstruct", "--data", data_dir, "--iters", 2, "--gamma0", 1e38,
               "--out", tmp_path / "r") == 4
    err = capsys.readouterr().err
    assert "stage=ls" in err and "iteration=0" in err


def test_evaluate(tmp_path, data_dir, capsys):
    ref = read_bundle(data_dir).arrays["psi_ref"]
    write_bundle(Bundle({"psi": ref * np.complex64(np.exp(0.7j))}), tmp_path / "rot")
    assert run("evaluate", "--rec", data_dir, "--ref", data_dir,
               "--out", tmp_path / "m.csv") == 0
    header, row = (tmp_path / "m.csv").read_text().splitlines()
    assert header == "ssim,psnr_db,channel,crop,phase_shift"
    fields = row.split(",")
    assert float(fields[0]) == pytest.approx(1.0, abs=1e-9) and fields[1] == "inf"
    capsys.readouterr()
    assert run("evaluate", "--rec", tmp_path / "rot", "--ref", data_dir) == 0
    fields = capsys.readouterr().out.splitlines()[1].split(",")
    assert float(fields[0]) == pytest.approx(1.0, abs=1e-6)
    assert float(fields[4]) == pytest.approx(0.7, abs=1e-6)


def test_evaluate_shape_mismatch(tmp_path, data_dir):
    write_bundle(Bundle({"psi": np.ones((32, 32), np.complex64)}), tmp_path / "small")
    assert run("evaluate", "--rec", tmp_path / "small", "--ref", data_dir) == 3


def test_bench(tmp_path, data_dir):
    out = tmp_path / "bench.csv"
    assert run("bench", "--data", data_dir, "--workers", "1,2", "--iters", 2,
               "--repeat", 3, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0].split(",") == list(BENCH_COLUMNS)
    rows = [dict(zip(BENCH_COLUMNS, line.split(","))) for line in lines[1:]]
    assert [int(r["workers"]) for r in rows] == [1, 1, 1, 2, 2, 2]
    for r in rows:
        if r["workers"] == "1":
            assert float(r["comm_wait_s"]) == 0
        assert float(r["reconcile"]) <= 0.05
    manifest = json.loads((tmp_path / "bench.manifest.json").read_text())
    assert len(manifest["seeds"]) == 6


def test_bench_usage_errors(data_dir):
    assert run("bench", "--data", data_dir, "--workers", "1,x") == 2
    assert run("bench", "--data", data_dir, "--workers", "0") == 2


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ptyhybrid", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "reconstruct" in proc.stdout
