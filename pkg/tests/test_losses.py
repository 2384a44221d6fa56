import numpy as np
import pytest

from pyqmutools.errors import ValidationError
from pyqmutools.losses import LossSpec


def test_unknown_kind_is_rejected():
    with pytest.raises(ValidationError) as excinfo:
        LossSpec("hinge")
    assert excinfo.value.field == "kind"


@pytest.mark.parametrize("kind", ["mse", "logistic", "expectation"])
def test_derivative_matches_finite_difference(kind):
    loss = LossSpec(kind)
    h = 1e-6
    for f in (-0.7, 0.0, 0.4):
        for y in (-1, 1):
            numeric = (loss.value(f + h, y) - loss.value(f - h, y)) / (2 * h)
            assert loss.derivative(f, y) == pytest.approx(numeric, rel=1e-5)


def test_logistic_probability_is_floored():
    loss = LossSpec("logistic")
    assert np.isfinite(loss.value(-1.0, 1))
    assert np.isfinite(loss.derivative(1.0, -1))


def test_mean_over_batch():
    loss = LossSpec("mse")
    assert loss.mean([1.0, -1.0], [1, 1]) == pytest.approx(2.0)
