import json
import subprocess
import sys

import pytest

from lpvcert.cli import run_command

DATA = "tests/data"


def run(args, tmp_path, name="out.json"):
    out = tmp_path / name
    code = run_command(list(args) + ["-o", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None)


def test_validate_ok(tmp_path):
    code, rep = run(["validate", f"{DATA}/double_integrator.json"], tmp_path)
    assert code == 0
    assert rep["result"]["n"] == 2 and rep["result"]["valid"]


def test_validate_missing_field(capsys):
    assert run_command(["validate", f"{DATA}/missing_input.json"]) == 3
    assert "famB" in capsys.readouterr().err


def test_analyze_certified(tmp_path):
    code, rep = run(["analyze", f"{DATA}/double_integrator.json"], tmp_path)
    assert code == 0
    assert rep["result"]["verdict"] == "certified"
    assert rep["exit_code"] == 0


def test_analyze_violated(tmp_path):
    code, rep = run(["analyze", f"{DATA}/uncontrollable_mode.json"], tmp_path)
    assert code == 1
    assert rep["result"]["witnesses"]


def test_analyze_stabilizability_and_certify(tmp_path):
    code, rep = run(["analyze", f"{DATA}/uncontrollable_mode.json", "--property", "stabilizability", "--certify"],
                    tmp_path)
    assert code == 0
    assert rep["result"]["method"] == "cover"


def test_analyze_inline_domain(tmp_path):
    code, rep = run(["analyze", f"{DATA}/uncontrollable_mode.json", "--domain", '{"A": [[0.5, 1]]}'], tmp_path)
    assert code == 1
    assert rep["result"]["domain"]["A"][0][0] == [0.5, 1.0]


def test_delay_inconclusive(tmp_path):
    code, rep = run(["delay-analyze", f"{DATA}/lifted_spurious.json", "--property", "stabilizability"], tmp_path)
    assert code == 2
    assert rep["result"]["extra"]["spurious"]


def test_delay_dependent(tmp_path):
    code, rep = run(["delay-analyze", f"{DATA}/scalar_delay.json", "--mode", "dependent", "--delays", "1;2"],
                    tmp_path)
    assert code == 0
    assert rep["result"]["extra"]["delays"] == {"internal": [1.0], "external": [2.0]}


def test_delay_dependent_requires_delays(tmp_path):
    assert run(["delay-analyze", f"{DATA}/scalar_delay.json", "--mode", "dependent"], tmp_path)[0] == 3


def test_delay_out_of_range(tmp_path):
    code, _ = run(["delay-analyze", f"{DATA}/scalar_delay.json", "--mode", "dependent", "--delays", "1;5"],
                  tmp_path)
    assert code == 3


def test_analyze_refuses_delay_systems(tmp_path):
    assert run(["analyze", f"{DATA}/scalar_delay.json"], tmp_path)[0] == 3


def test_radius_and_attack(tmp_path):
    code, rep = run(["radius", f"{DATA}/diag_attack.json", "--verify", "20"], tmp_path)
    assert code == 0
    assert rep["result"]["soundness"]["counterexamples"] == 0
    bound = rep["result"]["radius"]["block_bound"]
    code, rep = run(["attack", f"{DATA}/diag_attack.json"], tmp_path, "attack.json")
    assert code == 0
    assert rep["result"]["witness"]["norm"] > bound


def test_radius_nominal_failure(tmp_path):
    code, rep = run(["radius", f"{DATA}/uncontrollable_mode.json"], tmp_path)
    assert code == 1
    assert rep["result"]["error"] == "nominal_property_fails"


def test_usage_errors(capsys):
    with pytest.raises(SystemExit) as exc:
        run_command(["analyze"])
    assert exc.value.code == 3
    with pytest.raises(SystemExit) as exc:
        run_command(["frobnicate", "x.json"])
    assert exc.value.code == 3
    assert run_command(["analyze", f"{DATA}/double_integrator.json", "--property", "bogus"]) == 3
    assert run_command(["validate", "does/not/exist.json"]) == 3


def test_reports_are_deterministic(tmp_path):
    for args in (["analyze", f"{DATA}/uncontrollable_mode.json"],
                 ["radius", f"{DATA}/diag_attack.json", "--verify", "10", "--seed", "7"]):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        run_command(args + ["-o", str(a)])
        run_command(args + ["-o", str(b), "--jobs", "1"])
        assert a.read_bytes() == b.read_bytes()


def test_timing_only_on_request(tmp_path):
    _, rep = run(["validate", f"{DATA}/double_integrator.json"], tmp_path)
    assert "wall_clock_s" not in rep
    _, rep = run(["validate", f"{DATA}/double_integrator.json", "--timing"], tmp_path, "t.json")
    assert rep["wall_clock_s"] >= 0


def test_report_rendering(tmp_path, capsys):
    out = tmp_path / "r.json"
    run_command(["analyze", f"{DATA}/double_integrator.json", "-o", str(out)])
    assert run_command(["report", str(out), "--format", "text"]) == 0
    assert 'verdict: "certified"' in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lpvcert", "validate", f"{DATA}/missing_input.json"],
                          capture_output=True, text=True)
    assert proc.returncode == 3
    assert "famB" in proc.stderr
