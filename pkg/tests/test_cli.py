import csv
import json
import subprocess
from pathlib import Path

import pytest

from viscofrac import io
from viscofrac.cli import EXIT_INVALID, EXIT_OK, main

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"

SMALL = """
[domain]
vertices = 0 0; 1 0; 1 1; 0 1
labels = N N N N

[crack]
mouth = 0 0.5
direction = 1 0
a0 = -0.3
r = 0.1
L = 1e4

[material]
elastic = 1 1
viscous = 0.25 0.5

[evolution]
times = 0 0.25 0.5
eta = 0.25
mu = 0.45
M = 1000
angles = 0
speeds = 0 0.225
shapes = linear
depth = 1

[solver]
h = 0.25
dt = 0.05

[output]
snapshot_stride = 2
"""


@pytest.fixture
def small(tmp_path):
    f = tmp_path / "small.ini"
    f.write_text(SMALL)
    return f


def run(*argv):
    return main([str(a) for a in argv])


class TestValidate:
    def test_valid_scenario(self, capsys):
        assert run("validate", SCENARIOS / "growth.ini") == EXIT_OK
        out = capsys.readouterr().out
        assert "scenario ok: 2 windows" in out and "initial_path" in out

    def test_speed_gate(self, capsys):
        assert run("validate", SCENARIOS / "speed_gate.ini") == EXIT_INVALID
        err = capsys.readouterr().err
        assert "SpeedGateError" in err and "sqrt(lambda)/2" in err


class TestRun:
    def test_quiescent_outputs(self, small, tmp_path, capsys):
        out = tmp_path / "out"
        assert run("run", small, "-o", out) == EXIT_OK
        assert "done: 2 windows" in capsys.readouterr().out
        for name in ("profile.csv", "ledger.csv", "audit.csv", "trajectory.csv", "crack.txt",
                     "manifest.json", "checkpoint.pkl"):
            assert (out / name).exists(), name
        rows = list(csv.DictReader((out / "profile.csv").open()))
        t = [float(r["t"]) for r in rows]
        assert t[0] == 0.0 and t[-1] == 0.5 and {float(r["s"]) for r in rows} == {0.0}
        assert 0.25 in t
        assert len(list((out / "snapshots").glob("*.vtk"))) == (len(rows) - 1) // 2 + 1
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["status"] == "complete" and len(manifest["config_sha256"]) == 64

    def test_invalid_scenario_writes_error(self, tmp_path):
        out = tmp_path / "out"
        assert run("run", SCENARIOS / "speed_gate.ini", "-o", out) == EXIT_INVALID
        err = json.loads((out / "error.json").read_text())
        assert err["exit_code"] == EXIT_INVALID and err["error"] == "SpeedGateError"

    def test_restart_matches_direct_run(self, small, tmp_path):
        direct, split = tmp_path / "direct", tmp_path / "split"
        assert run("run", small, "-o", direct, "--snapshot-stride", "0") == EXIT_OK
        assert run("run", small, "-o", split, "--stop-after", "1", "--snapshot-stride", "0") == EXIT_OK
        assert json.loads((split / "manifest.json").read_text())["status"] == "partial"
        assert run("run", small, "-o", split, "--resume", split / "checkpoint.pkl",
                   "--snapshot-stride", "0") == EXIT_OK
        for name in ("profile.csv", "ledger.csv", "audit.csv", "trajectory.csv", "crack.txt"):
            assert (direct / name).read_bytes() == (split / name).read_bytes(), name

    def test_resume_with_other_scenario_rejected(self, small, tmp_path):
        out = tmp_path / "out"
        assert run("run", small, "-o", out, "--stop-after", "1") == EXIT_OK
        other = tmp_path / "other.ini"
        other.write_text(SMALL.replace("eta = 0.25", "eta = 0.3"))
        assert run("run", other, "-o", out, "--resume", out / "checkpoint.pkl") == EXIT_INVALID


class TestAudit:
    def test_rescore_agrees(self, small, tmp_path, capsys):
        out = tmp_path / "out"
        run("run", small, "-o", out)
        capsys.readouterr()
        assert run("audit", out / "audit.csv", "--strict") == EXIT_OK
        lines = capsys.readouterr().out.splitlines()
        assert lines == ["window 0: angle 0, speed 0, constant, score 0",
                         "window 1: angle 0, speed 0, constant, score 0"]

    def test_strict_mismatch(self, growth_run, tmp_path, capsys):
        _, ev = growth_run
        f = tmp_path / "audit.csv"
        io.write_audit_csv(ev, f)
        assert run("audit", f, "--tol", "0") == EXIT_OK
        assert "differs from the logged choice" in capsys.readouterr().out
        assert run("audit", f, "--tol", "0", "--strict") == EXIT_INVALID

    def test_missing_file(self, tmp_path):
        assert run("audit", tmp_path / "nope.csv") == EXIT_INVALID


class TestCheckAlternative:
    @pytest.fixture
    def evolution(self, small, tmp_path):
        out = tmp_path / "out"
        run("run", small, "-o", out, "--snapshot-stride", "0")
        return out / "checkpoint.pkl"

    def test_constant_alternative_is_not_a_violation(self, small, evolution, tmp_path, capsys):
        alt = tmp_path / "alt.ini"
        alt.write_text("[alternative]\ntau0 = 0.25\ntau1 = 0.5\nshape = constant\n")
        code = run("check-alternative", small, "--evolution", evolution, "--alternative", alt)
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "M3 False" in out and "maximal: no violation witnessed" in out

    def test_unbalanced_alternative_rejected(self, small, evolution, tmp_path, capsys):
        alt = tmp_path / "alt.ini"
        alt.write_text("[alternative]\ntau0 = 0\ntau1 = 0.5\nshape = linear\nrate = 0.225\n")
        code = run("check-alternative", small, "--evolution", evolution, "--alternative", alt)
        assert code == EXIT_INVALID
        assert "not balanced" in capsys.readouterr().err

    def test_malformed_alternative(self, small, evolution, tmp_path):
        alt = tmp_path / "alt.ini"
        alt.write_text("[alternative]\ntau1 = 0.5\n")
        assert run("check-alternative", small, "--evolution", evolution,
                   "--alternative", alt) == EXIT_INVALID


def test_console_script_installed():
    res = subprocess.run(["viscofrac", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("validate", "run", "audit", "check-alternative"):
        assert cmd in res.stdout
