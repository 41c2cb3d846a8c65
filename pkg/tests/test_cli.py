import json
import zipfile
from pathlib import Path

import pytest

from flowlab import cli
from flowlab.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from flowlab.errors import NumericalFailure

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "config" / "scenarios"

SHORT_WARPED = """\
[scenario]
name = short-warped
system = warped
seed = 3

[grid]
dim = 2
points = 16

[initial]
preset = sin-bump
amplitude = 0.2

[flow]
normalized = false

[stepper]
t_end = 0.05
record_every = 2

[monitors]
margin = 1e-3
"""


@pytest.fixture
def scenario_file(tmp_path):
    path = tmp_path / "short.ini"
    path.write_text(SHORT_WARPED)
    return path


def test_simulate_writes_a_run_directory(tmp_path, scenario_file):
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(scenario_file), "--out", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok"
    assert manifest["monitors_passed"] is True
    assert manifest["t_final"] == pytest.approx(0.05)
    for name in ("trajectory.csv", "monitor_sandwich.csv", "monitor_gradient_decay.csv",
                 "final_g.txt", "final_phi.txt"):
        assert (out / name).exists()
        assert name in manifest["files"]


def test_seed_override_changes_the_hash(tmp_path, scenario_file):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", str(scenario_file), "--out", str(a)])
    main(["simulate", "--config", str(scenario_file), "--out", str(b), "--seed", "9"])
    ma = json.loads((a / "manifest.json").read_text())
    mb = json.loads((b / "manifest.json").read_text())
    assert mb["seed"] == 9
    assert ma["scenario_hash"] != mb["scenario_hash"]


def test_numerical_failure_exit_code(tmp_path, scenario_file, monkeypatch):
    def failing(state, params, stepper, monitors=()):
        raise NumericalFailure("non-finite values", time=0.01, last_state=state)

    monkeypatch.setattr(cli, "run_flow", failing)
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(scenario_file), "--out", str(out)]) == EXIT_NUMERICAL
    assert json.loads((out / "failure.json").read_text())["time"] == 0.01
    assert (out / "failure_state.npz").exists()
    assert json.loads((out / "manifest.json").read_text())["status"] == "failed"


def test_config_errors_exit_with_two(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[grid]\nbogus = 1\n")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "run")]) == EXIT_CONFIG
    assert main(["simulate", "--config", str(tmp_path / "missing.ini")]) == EXIT_CONFIG
    assert main(["verify", "--suite", "bogus", "--out", str(tmp_path / "verify")]) == EXIT_CONFIG


def test_unknown_command_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["integrate"])
    assert info.value.code == 2


def test_spectrum_command(tmp_path, capsys):
    out = tmp_path / "spectrum"
    code = main(["spectrum", "--config", str(SCENARIO_DIR / "circle_spectrum.ini"), "--out", str(out)])
    assert code == EXIT_OK
    assert "verdict = weak(1)" in capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["verdict"] == "weak(1)"
    assert manifest["top"] == pytest.approx(0.0, abs=1e-8)
    assert (out / "spectrum.csv").exists()


def test_verify_identities(tmp_path):
    out = tmp_path / "verify"
    assert main(["verify", "--suite", "identities", "--out", str(out)]) == EXIT_OK
    payload = json.loads((out / "verify.json").read_text())
    assert payload["passed"] is True
    assert payload["failures"] == []


def test_report_bundles_a_run(tmp_path, scenario_file):
    out = tmp_path / "run"
    main(["simulate", "--config", str(scenario_file), "--out", str(out)])
    assert main(["report", "--out", str(out)]) == EXIT_OK
    assert (out / "lab_report.pdf").read_bytes().startswith(b"%PDF")
    with zipfile.ZipFile(out / "lab_bundle.zip") as bundle:
        names = set(bundle.namelist())
    assert {"lab_report.pdf", "manifest.json", "trajectory.csv", "figures/trajectory.png"} <= names


def test_report_needs_a_manifest(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == EXIT_CONFIG
