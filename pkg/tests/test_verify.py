import math

import pytest

from flowlab import verify
from flowlab.errors import ConfigError, SamplingError
from flowlab.verify import SUITES, resolve_suites, run_suite


def test_resolve_suites():
    assert resolve_suites("all") == SUITES
    assert resolve_suites("spectra") == ("spectra",)
    with pytest.raises(ConfigError):
        resolve_suites("everything")


def test_linearization_suite_passes(settings):
    report = run_suite("linearization", settings=settings)
    assert report.passed, report.to_frame()
    assert len(report.results) == 6


def test_estimates_suite_passes(settings):
    report = run_suite("estimates", settings=settings)
    assert report.passed, report.to_frame()


@pytest.mark.slow
def test_spectra_suite_passes(settings):
    report = run_suite("spectra", settings=settings)
    assert report.passed, report.to_frame()


def test_errors_inside_a_check_are_recorded(settings, monkeypatch):
    def broken(settings, rng):
        raise SamplingError("not enough samples")

    def fine(settings, rng):
        return 0.0, 1e-12, "ok"

    monkeypatch.setitem(verify.SUITE_CHECKS, "spectra", {"broken": broken, "fine": fine})
    report = run_suite("spectra", seed=5, settings=settings)
    assert not report.passed
    assert [r.name for r in report.failures] == ["broken"]
    assert math.isnan(report.failures[0].value)
    assert "SamplingError" in report.failures[0].detail
    payload = report.to_json()
    assert payload["checks"] == 2
    assert payload["failures"] == ["broken"]
    assert list(report.to_frame().columns) == ["suite", "name", "value", "tol", "passed", "detail"]
