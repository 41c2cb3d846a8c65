import zipfile

import pytest

from flowlab.errors import ConfigError
from flowlab.geometry import build_metric_state
from flowlab.grid_core import Grid, SymTensor2Field
from flowlab.outputs import RunDirectory
from flowlab.report import _latin1, build_figures, bundle_bytes, generate_lab_report
from flowlab.stability import assemble_operator, spectrum
from flowlab.verify import CheckResult, VerifyReport


def _spectrum_run(path):
    m = build_metric_state(SymTensor2Field.identity(Grid.uniform(1, 16)))
    report = spectrum(assemble_operator("L1_map", m, lam=0.0), k=4)
    out = RunDirectory(path)
    out.write_spectrum(report)
    verify = VerifyReport([CheckResult("spectra", "circle_spectrum", 1e-4, 1e-3, True, "λ ≈ 0")])
    out.write_frame("verify.csv", verify.to_frame())
    out.write_manifest(None, "spectrum", extra={"verdict": report.verdict})
    return path


def test_latin1_replaces_unsupported_glyphs():
    assert _latin1("|dφ|² ≤ C") == "|d?|² ? C"


def test_figures_for_a_spectrum_run(tmp_path):
    run = _spectrum_run(tmp_path / "run")
    figures = build_figures(run)
    assert [title for title, _ in figures] == ["Spectrum"]
    assert (run / "figures" / "spectrum.png").exists()


def test_report_and_bundle(tmp_path):
    run = _spectrum_run(tmp_path / "run")
    pdf = generate_lab_report(run)
    assert pdf.read_bytes().startswith(b"%PDF")
    with zipfile.ZipFile(bundle_bytes(run, pdf)) as bundle:
        names = set(bundle.namelist())
    assert {"lab_report.pdf", "manifest.json", "spectrum.txt", "spectrum.csv", "verify.csv",
            "figures/spectrum.png"} <= names


def test_report_outside_a_run_directory(tmp_path):
    with pytest.raises(ConfigError):
        generate_lab_report(tmp_path)
