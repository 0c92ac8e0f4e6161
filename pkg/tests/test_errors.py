import pytest

from privlens.errors import (AttackError, ConfigError, DatasetError, NumericalError, OptimizationDiverged,
                             ShapeMismatchError, UnitsError, summarize_exception)


def test_attack_error():
    exc = AttackError("wiener", "sample error")
    assert str(exc) == "AttackError: method='wiener', message='sample error'"


def test_shape_mismatch_error():
    exc = ShapeMismatchError("heatmaps", (4, 4), (4, 5))
    assert str(exc) == "ShapeMismatchError: heatmaps: (4, 4) != (4, 5)"
    assert isinstance(exc, ValueError)
    assert exc.exit_code == 2


def test_optimization_diverged_keeps_trace():
    trace = ["record"]
    exc = OptimizationDiverged(7, trace)
    assert exc.trace is trace
    assert exc.iteration == 7
    assert exc.exit_code == 4
    assert "iteration=7" in str(exc)


@pytest.mark.parametrize("exception, code", [
    (ConfigError("x"), 2),
    (UnitsError("x"), 2),
    (DatasetError("x"), 3),
    (NumericalError("x"), 4),
])
def test_exit_codes(exception, code):
    assert exception.exit_code == code


@pytest.mark.parametrize("exception, message", [
    (AttackError("wiener", "lens has no PSF"), "/attack/wiener"),
    (AttackError("regularized_inverse", "other"), "/attack/regularized_inverse"),
    (OptimizationDiverged(3, []), "/numerical/OptimizationDiverged"),
    (NumericalError("boom"), "/numerical/NumericalError"),
    (DatasetError("Unreadable image: a.png"), "/io/unreadable"),
    (ValueError("Value Error"), "/rest/ValueError"),
    (TypeError("Type Error"), "/rest/TypeError"),
])
def test_summarize_exception(exception, message):
    assert summarize_exception(exception) == message
