import numpy as np
import pytest

from pyqmutools.errors import ValidationError
from pyqmutools.geo import (
    QFIM,
    damped_inverse,
    effective_dimension,
    f_norm_squared,
    finite_diff_gradient,
    natural_step,
    parameter_shift_gradient,
    precondition,
    qfi_spectrum,
    qfim,
    qfim_batch,
    readout_gradient,
)
from pyqmutools.losses import LossSpec
from pyqmutools.pqc import (
    CircuitTemplate,
    GateSpec,
    _simulate_vector,
    build_layered_ansatz,
    predict,
)
from pyqmutools.qcore import Observable


def single_ry():
    return CircuitTemplate(
        n_qubits=1,
        gates=(GateSpec("RY", (0,), "trainable", 0),),
        n_params=1,
        n_features=1,
        readout=Observable.z(0, 1),
    )


def random_instance(seed, max_qubits=4, max_depth=6):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, max_qubits + 1))
    depth = int(rng.integers(1, max_depth + 1))
    entangler = "ring" if rng.random() < 0.5 else "linear"
    t = build_layered_ansatz(n, depth, entangler)
    theta = rng.uniform(-np.pi, np.pi, t.n_params)
    X = rng.uniform(-np.pi, np.pi, (3, n))
    y = rng.choice([-1, 1], 3)
    return t, theta, X, y


def test_readout_gradient_of_single_ry():
    t = single_ry()
    for angle in (-1.0, 0.3, 2.0):
        assert readout_gradient(t, [angle], [0.0])[0] == pytest.approx(
            -np.sin(angle)
        )


def test_shared_parameter_sums_both_occurrences():
    t = CircuitTemplate(
        n_qubits=1,
        gates=(
            GateSpec("RY", (0,), "trainable", 0),
            GateSpec("RY", (0,), "trainable", 0),
        ),
        n_params=1,
        n_features=1,
        readout=Observable.z(0, 1),
    )
    # <Z> = cos(2 theta)
    assert readout_gradient(t, [0.4], [0.0])[0] == pytest.approx(
        -2 * np.sin(0.8)
    )


def test_parameter_shift_agrees_with_finite_differences():
    loss = LossSpec("mse")
    for seed in range(50):
        t, theta, X, y = random_instance(seed)
        exact = parameter_shift_gradient(t, theta, X, y, loss)
        numeric = finite_diff_gradient(t, theta, X, y, loss, h=1e-5)
        assert np.max(np.abs(exact - numeric)) < 1e-6


def test_logistic_gradient_away_from_saturation():
    loss = LossSpec("logistic")
    checked = 0
    for seed in range(40):
        t, theta, X, y = random_instance(seed, max_qubits=3, max_depth=3)
        f = np.array([predict(t, theta, x) for x in X])
        if np.max(np.abs(f)) > 0.8:
            continue
        exact = parameter_shift_gradient(t, theta, X, y, loss)
        numeric = finite_diff_gradient(t, theta, X, y, loss, h=1e-5)
        assert np.max(np.abs(exact - numeric)) < 1e-6
        checked += 1
    assert checked > 0


def test_threaded_gradient_matches_serial():
    t, theta, X, y = random_instance(5)
    loss = LossSpec("mse")
    serial = parameter_shift_gradient(t, theta, X, y, loss)
    threaded = parameter_shift_gradient(t, theta, X, y, loss, workers=3)
    np.testing.assert_array_equal(serial, threaded)


def test_noisy_gradient_agrees_with_finite_differences():
    t = build_layered_ansatz(2, 2, noise=0.1)
    rng = np.random.default_rng(1)
    theta = rng.uniform(-np.pi, np.pi, t.n_params)
    X = rng.uniform(-1, 1, (2, 2))
    y = np.array([1, -1])
    loss = LossSpec("mse")
    exact = parameter_shift_gradient(t, theta, X, y, loss)
    numeric = finite_diff_gradient(t, theta, X, y, loss)
    assert np.max(np.abs(exact - numeric)) < 1e-6


def test_single_ry_qfim_is_a_quarter():
    for angle in (0.0, 0.7, -2.5):
        F = qfim(single_ry(), [angle], [0.0])
        assert F.matrix[0, 0] == pytest.approx(0.25, abs=1e-9)


def test_qfim_is_symmetric_and_psd():
    for seed in range(10):
        t, theta, X, _ = random_instance(seed, max_qubits=3, max_depth=3)
        F = qfim(t, theta, X[0]).matrix
        np.testing.assert_allclose(F, F.T, atol=1e-12)
        assert np.linalg.eigvalsh(F)[0] >= -1e-8
        QFIM(F)


def test_qfim_matches_fubini_study_overlap():
    for seed in range(50):
        rng = np.random.default_rng(100 + seed)
        t = build_layered_ansatz(2, 2)
        theta = rng.uniform(-np.pi, np.pi, t.n_params)
        x = rng.uniform(-np.pi, np.pi, 2)
        eps = rng.normal(size=t.n_params)
        eps *= 1e-4 / np.linalg.norm(eps)
        F = qfim(t, theta, x).matrix
        psi = _simulate_vector(t, theta, x)
        moved = _simulate_vector(t, theta + eps, x)
        overlap = 1.0 - abs(np.vdot(psi, moved)) ** 2
        assert overlap == pytest.approx(eps @ F @ eps, rel=1e-2)


def test_structured_modes_zero_the_right_entries():
    t, theta, X, _ = random_instance(3, max_qubits=2, max_depth=2)
    full = qfim(t, theta, X[0]).matrix
    assert qfim(t, theta, X[0], mode="diagonal").mode == "diagonal"
    diagonal = qfim(t, theta, X[0], mode="diagonal").matrix
    block = qfim(t, theta, X[0], mode="block", block_size=2).matrix
    np.testing.assert_allclose(np.diag(diagonal), np.diag(full))
    assert not np.any(diagonal[~np.eye(t.n_params, dtype=bool)])
    np.testing.assert_allclose(block[:2, :2], full[:2, :2])
    if t.n_params > 2:
        assert block[0, 2] == 0.0


def test_qfim_rejects_noisy_templates():
    t = build_layered_ansatz(2, 1, noise=0.1)
    with pytest.raises(ValidationError):
        qfim(t, np.zeros(t.n_params), [0.0, 0.0])


def test_qfim_batch_averages_samples():
    t, theta, X, _ = random_instance(8, max_qubits=2, max_depth=2)
    average = qfim_batch(t, theta, X).matrix
    expected = np.mean([qfim(t, theta, x).matrix for x in X], axis=0)
    np.testing.assert_allclose(average, expected)


def test_qfim_container_validates():
    with pytest.raises(ValidationError, match="symmetric"):
        QFIM([[1.0, 0.5], [0.0, 1.0]])
    with pytest.raises(ValidationError, match="PSD"):
        QFIM([[1.0, 0.0], [0.0, -1.0]])


def test_damped_inverse_requires_damping_for_singular_metric():
    F = np.diag([1.0, 0.0])
    with pytest.raises(ValidationError) as excinfo:
        damped_inverse(F, 0.0)
    assert excinfo.value.field == "damping"
    np.testing.assert_allclose(damped_inverse(F, 1.0), np.diag([0.5, 1.0]))


def test_precondition_diagonal_and_dense_paths_agree():
    diagonal = np.diag([0.5, 2.0])
    g = np.array([1.0, 1.0])
    np.testing.assert_allclose(
        precondition(g, diagonal, 0.5), [1.0, 1.0 / 2.5]
    )
    dense = np.array([[2.0, 1.0], [1.0, 2.0]])
    np.testing.assert_allclose(
        precondition(g, dense, 0.0), np.linalg.solve(dense, g)
    )


def test_natural_step_with_identity_metric_is_gradient_descent():
    theta = np.array([0.1, -0.2])
    g = np.array([1.0, 2.0])
    np.testing.assert_allclose(
        natural_step(theta, g, np.eye(2), 0.1, 0.0), theta - 0.1 * g
    )


def test_spectrum_and_effective_dimension():
    F = np.diag([0.0, 1.0, 3.0])
    np.testing.assert_allclose(qfi_spectrum(F), [3.0, 1.0, 0.0])
    assert effective_dimension(F, 1.0) == pytest.approx(0.5 + 0.75)
    assert effective_dimension(F, 0.0) == 2.0
    assert f_norm_squared(np.array([1.0, 1.0, 1.0]), F, 1.0) == (
        pytest.approx(7.0)
    )
