"""Run directories: CSV tables, the manifest and the failure dump."""
from __future__ import annotations

import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Iterable

import numpy as np
import pandas as pd
import scipy

import flowlab
from flowlab.errors import NumericalFailure
from flowlab.estimates import BoundMonitor
from flowlab.flows import FlowState, Trajectory
from flowlab.grid_core import Field, save_field
from flowlab.scenario import ScenarioConfig
from flowlab.stability import SpectrumReport

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.15g"


class RunDirectory:
    """Collects the files written for one CLI command and lists them in manifest.json."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def _register(self, name: str) -> Path:
        if name not in self.files:
            self.files.append(name)
        return self.path / name

    def write_frame(self, name: str, df: pd.DataFrame) -> Path:
        target = self._register(name)
        df.to_csv(target, index=False, float_format=CSV_FLOAT_FORMAT)
        return target

    def write_text(self, name: str, text: str) -> Path:
        target = self._register(name)
        target.write_text(text)
        return target

    def write_json(self, name: str, payload: dict) -> Path:
        return self.write_text(name, json.dumps(payload, indent=2, sort_keys=True) + "\n")

    def write_trajectory(self, traj: Trajectory) -> Path:
        return self.write_frame("trajectory.csv", traj.to_frame())

    def write_monitors(self, monitors: Iterable[BoundMonitor]) -> list[Path]:
        return [self.write_frame(f"monitor_{m.name}.csv", m.to_frame()) for m in monitors]

    def write_spectrum(self, report: SpectrumReport) -> list[Path]:
        return [self.write_text("spectrum.txt", report.to_text()),
                self.write_frame("spectrum.csv", report.to_frame())]

    def write_final_state(self, st: FlowState) -> list[Path]:
        """Field snapshots of the last state, one text file per component."""
        written = []
        for key in st.components():
            value = getattr(st, key)
            if isinstance(value, Field):
                target = self._register(f"final_{key}.txt")
                save_field(target, value)
                written.append(target)
        return written

    def write_failure(self, exc: NumericalFailure) -> list[Path]:
        payload = {"message": str(exc), "time": exc.time, "system": None, "checksum": None}
        written = []
        st = exc.last_state
        if st is not None:
            payload["system"] = st.system
            payload["checksum"] = st.checksum()
            payload["last_good_time"] = st.t
            target = self._register("failure_state.npz")
            np.savez(target, t=np.array(st.t), **st.components())
            written.append(target)
        written.append(self.write_json("failure.json", payload))
        logger.error("wrote failure dump to %s", self.path)
        return written

    def write_manifest(self, cfg: ScenarioConfig | None, command: str, seed: int | None = None,
                       extra: dict | None = None) -> Path:
        manifest = {
            "command": command,
            "created": datetime.now().isoformat(timespec="seconds"),
            "scenario": cfg.name if cfg is not None else None,
            "system": cfg.system if cfg is not None else None,
            "scenario_hash": cfg.config_hash() if cfg is not None else None,
            "seed": seed if seed is not None else (cfg.seed if cfg is not None else None),
            "versions": library_versions(),
            "files": sorted(self.files),
        }
        manifest.update(extra or {})
        target = self.path / "manifest.json"
        target.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        logger.info("wrote %d files to %s", len(self.files) + 1, self.path)
        return target


def library_versions() -> dict[str, str]:
    return {
        "flowlab": flowlab.__version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


def read_manifest(path: str | Path) -> dict:
    with open(Path(path) / "manifest.json", "r") as f:
        return json.load(f)


def load_run_tables(path: str | Path) -> dict[str, pd.DataFrame]:
    """Every CSV table of a run directory, keyed by file stem."""
    path = Path(path)
    return {csv.stem: pd.read_csv(csv) for csv in sorted(path.glob("*.csv"))}
