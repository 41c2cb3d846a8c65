import json

import numpy as np

from flowlab.errors import NumericalFailure
from flowlab.flows import FlowParams, StepperConfig, WarpedState, run_flow
from flowlab.grid_core import Grid, ScalarField, SymTensor2Field, load_field
from flowlab.outputs import RunDirectory, load_run_tables, read_manifest
from flowlab.scenario import default_scenario


def _short_run():
    grid = Grid.uniform(2, 8)
    x, _ = grid.coordinates()
    st = WarpedState(SymTensor2Field.identity(grid), ScalarField(grid, 0.1 * np.sin(x)))
    return run_flow(st, FlowParams(normalized=False), StepperConfig(dt=0.01, t_end=0.03))


def test_manifest_lists_written_files(tmp_path, settings):
    cfg = default_scenario(settings)
    out = RunDirectory(tmp_path / "run")
    traj = _short_run()
    out.write_trajectory(traj)
    out.write_final_state(traj.states[-1])
    out.write_manifest(cfg, "simulate", extra={"status": "ok"})

    manifest = read_manifest(tmp_path / "run")
    assert manifest["files"] == ["final_g.txt", "final_phi.txt", "trajectory.csv"]
    assert manifest["scenario_hash"] == cfg.config_hash()
    assert manifest["seed"] == cfg.seed
    assert manifest["status"] == "ok"
    assert {"flowlab", "numpy", "scipy", "pandas"} <= set(manifest["versions"])

    tables = load_run_tables(tmp_path / "run")
    assert list(tables["trajectory"]["checksum"]) == [r.checksum for r in traj.records]
    phi = load_field(tmp_path / "run" / "final_phi.txt")
    assert np.array_equal(phi.values, traj.states[-1].phi.values)


def test_failure_dump_keeps_the_last_good_state(tmp_path):
    traj = _short_run()
    last = traj.states[-1]
    out = RunDirectory(tmp_path)
    out.write_failure(NumericalFailure("blow-up", time=last.t + 0.01, last_state=last))
    payload = json.loads((tmp_path / "failure.json").read_text())
    assert payload["checksum"] == last.checksum()
    assert payload["last_good_time"] == last.t
    with np.load(tmp_path / "failure_state.npz") as data:
        assert np.array_equal(data["phi"], last.phi.values)
