import numpy as np
import pytest

from pyqmutools.errors import ValidationError
from pyqmutools.privacy import (
    DPConfig,
    PrivacyLedger,
    add_noise,
    calibrate,
    clip,
    compose,
    gaussian_sigma,
)


def test_clip_scales_only_long_vectors():
    np.testing.assert_allclose(clip([3.0, 4.0], 1.0), [0.6, 0.8])
    np.testing.assert_allclose(clip([0.3, 0.4], 1.0), [0.3, 0.4])
    with pytest.raises(ValidationError) as excinfo:
        clip([1.0], 0.0)
    assert excinfo.value.field == "C"


def test_gaussian_sigma_closed_form():
    assert gaussian_sigma(1.0, 1.0, 1e-5) == pytest.approx(4.8448, abs=5e-4)
    assert gaussian_sigma(2.0, 0.5, 1e-5) == pytest.approx(
        4 * gaussian_sigma(1.0, 1.0, 1e-5)
    )


def test_calibrate_flags_large_epsilon(caplog):
    _, flagged = calibrate(1.0, 0.5, 1e-5)
    assert not flagged
    with caplog.at_level("WARNING"):
        _, flagged = calibrate(1.0, 2.0, 1e-5)
    assert flagged
    assert "proof regime" in caplog.text


@pytest.mark.parametrize(
    "kwargs, field",
    [
        ({"C": 1.0, "epsilon": 0.0, "delta": 1e-5}, "epsilon"),
        ({"C": 1.0, "epsilon": 0.5, "delta": 1.0}, "delta"),
    ],
)
def test_calibrate_rejects_out_of_range(kwargs, field):
    with pytest.raises(ValidationError) as excinfo:
        calibrate(**kwargs)
    assert excinfo.value.field == field


def test_add_noise_is_reproducible_and_zero_sigma_is_exact():
    g = np.array([1.0, -1.0])
    a = add_noise(g, 0.5, np.random.default_rng(3))
    b = add_noise(g, 0.5, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(add_noise(g, 0.0, None), g)


def test_dp_config_needs_exactly_one_noise_setting():
    with pytest.raises(ValidationError):
        DPConfig()
    with pytest.raises(ValidationError):
        DPConfig(epsilon=0.5, sigma=1.0)
    assert DPConfig(sigma=2.0).resolve() == (2.0, False)
    sigma, flagged = DPConfig(epsilon=0.5).resolve()
    assert sigma == pytest.approx(gaussian_sigma(1.0, 0.5, 1e-5))
    assert not flagged


def test_ledger_epsilon_grows_with_rounds():
    ledger = PrivacyLedger(delta=1e-5)
    previous = 0.0
    for _ in range(5):
        ledger.record(4.0, 1.0)
        current = ledger.epsilon()
        assert current > previous
        previous = current


def test_rdp_composition_beats_the_naive_sum():
    ledger = PrivacyLedger(delta=1e-5)
    for _ in range(20):
        ledger.record(5.0, 1.0)
    summary = compose(ledger)
    assert summary["rounds"] == 20
    assert summary["epsilon"] < summary["naive_epsilon"]
    assert summary["order"] is not None


def test_single_round_matches_the_rdp_conversion():
    ledger = PrivacyLedger(delta=1e-5)
    ledger.record(2.0, 1.0)
    orders = np.array([1.25 + 0.25 * i for i in range(252)])
    expected = np.min(orders / 8.0 + np.log(1e5) / (orders - 1.0))
    assert ledger.epsilon() == pytest.approx(expected)


def test_compose_prefix_and_empty_ledger():
    ledger = PrivacyLedger()
    assert compose(ledger)["epsilon"] == 0.0
    ledger.record(3.0, 1.0)
    ledger.record(3.0, 1.0)
    assert compose(ledger, rounds=1)["epsilon"] < ledger.epsilon()


def test_zero_sigma_round_has_no_guarantee():
    ledger = PrivacyLedger()
    ledger.record(0.0, 1.0)
    assert ledger.epsilon() == np.inf
    assert ledger.to_dict()["entries"][0]["sigma"] == 0.0


def test_unknown_mechanism_is_rejected():
    with pytest.raises(ValidationError) as excinfo:
        PrivacyLedger().record(1.0, 1.0, mechanism="laplace")
    assert excinfo.value.field == "mechanism"
