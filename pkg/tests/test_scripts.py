"""Smoke tests: every experiment script runs end to end at reduced size."""

import os
import subprocess
import sys

SCRIPTS = os.path.join(os.path.dirname(__file__), "..", "scripts")


def _run(args):
    proc = subprocess.run(
        [sys.executable, *args],
        capture_output=True,
        text=True,
        cwd=os.path.join(SCRIPTS, ".."),
    )
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


def test_oracle_equivalence_script(tmp_path):
    out = str(tmp_path / "oracle")
    stdout = _run(
        [os.path.join(SCRIPTS, "run_oracle_equivalence.py"),
         "--out", out, "--seeds", "0", "--iterations", "5"]
    )
    assert "oracle" in stdout
    assert os.path.exists(os.path.join(out, "oracle_equivalence.csv"))
    assert os.path.exists(os.path.join(out, "summary.json"))


def test_sphere_benchmark_script(tmp_path):
    out = str(tmp_path / "bench")
    stdout = _run(
        [os.path.join(SCRIPTS, "run_sphere_benchmark.py"),
         "--out", out, "--methods", "nn", "sh", "--n-obs", "8", "--seeds", "0"]
    )
    assert "nn" in stdout and "sh" in stdout
    rows = open(os.path.join(out, "benchmark.csv")).read().strip().splitlines()
    assert rows[0].startswith("method,n_obs,seed")
    assert len(rows) == 3


def test_beampattern_demo_script(tmp_path):
    out = str(tmp_path / "patterns")
    stdout = _run(
        [os.path.join(SCRIPTS, "run_beampattern_demo.py"),
         "--out", out, "--n-obs", "8", "--iterations", "5",
         "--look-azimuths-deg", "0"]
    )
    assert "suppression" in stdout
    assert os.path.exists(os.path.join(out, "pattern_model_az0.csv"))
    assert os.path.exists(os.path.join(out, "pattern_oracle_az0.csv"))
