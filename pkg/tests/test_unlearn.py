import numpy as np
import pytest

from pyqmutools.datasets import generate_dataset
from pyqmutools.errors import ValidationError
from pyqmutools.geo import batch_loss, parameter_shift_gradient, qfim_batch
from pyqmutools.learn import TrainConfig, init_params, train
from pyqmutools.losses import LossSpec
from pyqmutools.pqc import build_layered_ansatz
from pyqmutools.qcore import (
    maximally_mixed,
    mutual_information,
    partial_trace,
    random_state,
)
from pyqmutools.unlearn import (
    QmuIConfig,
    client_forget,
    fisher_ranked_selection,
    fisher_step,
    forget_class,
    forget_cluster,
    forget_indices,
    influence_delta,
    qmu_i,
    reset_partial,
)


@pytest.fixture
def trained():
    data = generate_dataset("two_moons", 16, noise=0.1, seed=5)
    data = forget_indices(data, data.indices("train")[:4])
    t = build_layered_ansatz(2, 1)
    model = train(t, data, TrainConfig(epochs=2, batch_size=4, seed=2))
    return model, data


def forget_loss(model, theta, data):
    X, y = data.select("forget")
    return batch_loss(model.template, theta, X, y, LossSpec(model.loss))


def test_fisher_ranked_selection_takes_the_largest_entries():
    F = np.diag([0.1, 0.5, 0.3, 0.5])
    assert fisher_ranked_selection(F, 0.5) == (1, 3)
    assert fisher_ranked_selection(F, 0.1) == (1,)
    assert fisher_ranked_selection(F, 1.0) == (0, 1, 2, 3)
    with pytest.raises(ValidationError) as excinfo:
        fisher_ranked_selection(F, 0.0)
    assert excinfo.value.field == "fraction"


def test_qmu_i_config_validation():
    with pytest.raises(ValidationError) as excinfo:
        QmuIConfig(qfim_mode="sketch")
    assert excinfo.value.field == "qfim_mode"
    with pytest.raises(ValidationError):
        QmuIConfig(damping=0.0)
    QmuIConfig(qfim_mode="identity", damping=0.0)


def test_influence_delta_with_identity_metric_negates_gradient(trained):
    model, data = trained
    S = data.indices("forget")
    delta = influence_delta(
        model, data, S, lam=0.0, F=np.eye(model.template.n_params)
    )
    X, y = data.features[S], data.labels[S]
    g = parameter_shift_gradient(
        model.template, model.theta, X, y, LossSpec(model.loss)
    )
    np.testing.assert_allclose(delta, -g, atol=1e-12)


def test_influence_delta_rejects_empty_sample_set(trained):
    model, data = trained
    with pytest.raises(ValidationError) as excinfo:
        influence_delta(model, data, [])
    assert excinfo.value.field == "S"


def test_fisher_step_divides_the_gradient_by_the_damped_diagonal(trained):
    model, data = trained
    S = data.indices("forget")
    X, y = data.features[S], data.labels[S]
    g = parameter_shift_gradient(
        model.template, model.theta, X, y, LossSpec(model.loss)
    )
    diagonal = np.diag(
        qfim_batch(model.template, model.theta, X, "diagonal").matrix
    )
    theta = fisher_step(model, data, S, eta=1e-3, lam=1.0)
    np.testing.assert_allclose(
        theta, model.theta - 1e-3 * g / (diagonal + 1.0), atol=1e-12
    )
    assert (theta - model.theta) @ g < 0
    assert forget_loss(model, theta, data) < forget_loss(
        model, model.theta, data
    )


def test_qmu_i_degenerate_config_is_a_plain_gradient_step(trained):
    model, data = trained
    X, y = data.select("forget")
    cfg = QmuIConfig(
        step=0.05,
        clip_norm=np.inf,
        trust_radius=np.inf,
        damping=0.0,
        qfim_mode="identity",
        batch_size=X.shape[0],
        iterations=1,
        fine_tune=TrainConfig(epochs=0),
    )
    unlearned, trace = qmu_i(model, data, cfg=cfg)
    g = parameter_shift_gradient(
        model.template, model.theta, X, y, LossSpec(model.loss)
    )
    assert len(trace.snapshots) == 2
    np.testing.assert_allclose(
        unlearned.theta, model.theta - 0.05 * g, atol=1e-12
    )
    assert not trace.steps[0]["trust_scaled"]


def test_qmu_i_steps_respect_the_trust_radius(trained):
    model, data = trained
    cfg = QmuIConfig(
        step=0.1,
        iterations=3,
        trust_radius=0.05,
        fine_tune=TrainConfig(epochs=0),
    )
    _, trace = qmu_i(model, data, cfg=cfg)
    assert len(trace.steps) == 3
    for step in trace.steps:
        assert step["f_norm"] <= 0.05 + 1e-9


def test_qmu_i_is_reproducible(trained):
    model, data = trained
    cfg = QmuIConfig(
        iterations=2, batch_size=2, seed=4, fine_tune=TrainConfig(epochs=1)
    )
    first, _ = qmu_i(model, data, cfg=cfg)
    second, _ = qmu_i(model, data, cfg=cfg)
    np.testing.assert_array_equal(first.theta, second.theta)


def test_qmu_i_needs_a_forget_set(trained):
    model, data = trained
    with pytest.raises(ValidationError) as excinfo:
        qmu_i(model, data.with_forget(None))
    assert excinfo.value.field == "forget_mask"


def test_reset_partial_leaves_unselected_coordinates(trained):
    model, data = trained
    selection = (0, 3)
    cfg = TrainConfig(epochs=1, batch_size=4)
    tuned, trace = reset_partial(model, data, selection, seed=9, cfg=cfg)
    np.testing.assert_array_equal(tuned.theta[[1, 2]], model.theta[[1, 2]])
    fresh = init_params(model.template.n_params, 9)
    np.testing.assert_array_equal(trace.snapshots[1][[0, 3]], fresh[[0, 3]])
    assert len(trace.snapshots) == 3


def test_reset_partial_validates_selection(trained):
    model, data = trained
    with pytest.raises(ValidationError):
        reset_partial(model, data, [], seed=0)
    with pytest.raises(ValidationError):
        reset_partial(model, data, [model.template.n_params], seed=0)


def test_client_forget_keeps_the_other_marginal():
    rho = random_state(3, seed=21)
    out = client_forget(rho, [1])
    np.testing.assert_allclose(
        partial_trace(out, [0, 2]).matrix,
        partial_trace(rho, [0, 2]).matrix,
        atol=1e-12,
    )
    np.testing.assert_allclose(
        partial_trace(out, [1]).matrix,
        maximally_mixed(1).matrix,
        atol=1e-12,
    )
    assert mutual_information(out, [1]) == pytest.approx(0.0, abs=1e-9)


def test_client_forget_rejects_the_whole_register():
    with pytest.raises(ValidationError) as excinfo:
        client_forget(random_state(2, seed=1), [0, 1])
    assert excinfo.value.field == "client_block"


def test_forget_class_marks_only_train_rows_of_the_label():
    data = generate_dataset("blobs", 20, seed=1)
    scoped = forget_class(data, 1)
    rows = scoped.indices("forget")
    assert np.all(scoped.labels[rows] == 1)
    assert np.all(scoped.split[rows] == "train")
    expected = (data.split == "train") & (data.labels == 1)
    assert rows.size == np.count_nonzero(expected)


def test_forget_cluster_is_seeded_and_sized():
    data = generate_dataset("two_moons", 30, seed=2)
    a = forget_cluster(data, -1, 5, seed=7)
    b = forget_cluster(data, -1, 5, seed=7)
    assert a.indices("forget").tolist() == b.indices("forget").tolist()
    assert a.indices("forget").size == 5
    with pytest.raises(ValidationError) as excinfo:
        forget_cluster(data, -1, 1000, seed=7)
    assert excinfo.value.field == "size"
