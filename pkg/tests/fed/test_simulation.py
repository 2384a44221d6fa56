import numpy as np
import pytest

from pyqmutools.datasets import generate_dataset
from pyqmutools.errors import ValidationError
from pyqmutools.fed.simulation import (
    FederationSpec,
    UnlearnEvent,
    fed_round,
    init_state,
    local_update,
    run_simulation,
    shard_clients,
    unlearn_client,
)
from pyqmutools.pqc import build_layered_ansatz
from pyqmutools.privacy import DPConfig
from pyqmutools.seeds import SeedBook


@pytest.fixture
def moons():
    data = generate_dataset("two_moons", 24, noise=0.1, seed=0)
    t = build_layered_ansatz(2, 1)
    return t, data


def make_state(moons, sigma=0.0, **kwargs):
    t, data = moons
    spec = FederationSpec(**kwargs)
    return init_state(t, data, spec, DPConfig(sigma=sigma), SeedBook(9))


def test_shards_partition_the_train_split(moons):
    _, data = moons
    clients = shard_clients(data, FederationSpec(n_clients=3), seed=1)
    rows = np.concatenate([c.rows for c in clients.values()])
    assert sorted(rows.tolist()) == data.indices("train").tolist()
    assert len(set(rows.tolist())) == rows.size


def test_too_few_rows_for_the_clients(moons):
    _, data = moons
    tiny = data.subset(data.indices("train")[:2])
    with pytest.raises(ValidationError) as excinfo:
        shard_clients(tiny, FederationSpec(n_clients=3), seed=0)
    assert excinfo.value.field == "n_clients"


def test_federation_spec_validation():
    with pytest.raises(ValidationError):
        FederationSpec(n_clients=1)
    with pytest.raises(ValidationError) as excinfo:
        FederationSpec(rounds=2, unlearn_events=[{"round": 3, "client": 0}])
    assert excinfo.value.field == "unlearn_events"
    with pytest.raises(ValidationError):
        FederationSpec(unlearn_events=[{"round": 0, "client": 5}])
    spec = FederationSpec(unlearn_events=[{"round": 1, "client": 2}])
    assert spec.unlearn_events == [UnlearnEvent(1, 2)]


def test_local_update_is_clipped(moons):
    t, data = moons
    state = make_state(moons)
    client = state.clients[0]
    client.clip_norm = 1e-3
    update = local_update(client, state.theta, t, data)
    assert np.linalg.norm(update) <= 1e-3 + 1e-12


def test_round_steps_by_the_mean_update_without_noise(moons):
    state = make_state(moons, n_clients=3, learning_rate=0.2)
    before = state.theta.copy()
    updates = [
        local_update(c, before, state.template, state.data, 0.2)
        for c in state.active
    ]
    record = fed_round(state)
    expected = before - 0.2 * np.sum(updates, axis=0) / 3
    np.testing.assert_allclose(state.theta, expected, atol=1e-9)
    assert record.clients == [0, 1, 2]
    assert state.round == 1
    assert record.ledger["epsilon"] == np.inf


def test_privacy_spend_grows_every_round(moons):
    state = make_state(moons, sigma=3.0)
    spent = []
    for _ in range(3):
        spent.append(fed_round(state).ledger["epsilon"])
    assert spent[0] < spent[1] < spent[2]
    assert all(np.isfinite(spent))


def test_rounds_are_reproducible(moons):
    first = make_state(moons, sigma=1.0)
    second = make_state(moons, sigma=1.0)
    for _ in range(2):
        a, b = fed_round(first), fed_round(second)
        assert a.digest == b.digest
    np.testing.assert_array_equal(first.theta, second.theta)


def test_star_and_ring_rounds_reach_the_same_theta(moons):
    star = make_state(moons, sigma=0.5, topology="star")
    ring = make_state(moons, sigma=0.5, topology="ring")
    for _ in range(3):
        fed_round(star)
        fed_round(ring)
    np.testing.assert_array_equal(star.theta, ring.theta)


def test_gradient_subtraction_reverts_the_stored_contribution(moons):
    state = make_state(moons)
    fed_round(state)
    fed_round(state)
    contribution = state.contributions[1].copy()
    before = state.theta.copy()
    _, trace = unlearn_client(state, 1, alpha=0.5, retrain_rounds=0)
    np.testing.assert_allclose(state.theta, before - 0.5 * contribution)
    assert 1 in state.removed
    assert len(trace.snapshots) == 2
    assert state.history[-1]["kind"] == "unlearn"


def test_zero_alpha_subtraction_is_plain_retraining(moons):
    unlearned = make_state(moons, sigma=0.5)
    fed_round(unlearned)
    before = unlearned.theta.copy()
    _, trace = unlearn_client(unlearned, 0, alpha=0.0, retrain_rounds=1)
    np.testing.assert_array_equal(trace.snapshots[1], before)
    reference = make_state(moons, sigma=0.5)
    fed_round(reference)
    reference.removed.add(0)
    fed_round(reference)
    np.testing.assert_array_equal(unlearned.theta, reference.theta)


def test_removed_client_leaves_later_rounds(moons):
    state = make_state(moons)
    fed_round(state)
    _, trace = unlearn_client(state, 0, retrain_rounds=2)
    assert len(trace.snapshots) == 4
    rounds = [h for h in state.history if h["kind"] == "round"]
    assert [r["clients"] for r in rounds[1:]] == [[1, 2], [1, 2]]
    with pytest.raises(ValidationError):
        unlearn_client(state, 0)
    with pytest.raises(ValidationError):
        unlearn_client(state, 7)


def test_round_needs_two_active_clients(moons):
    state = make_state(moons, n_clients=2)
    unlearn_client(state, 0, retrain_rounds=0)
    with pytest.raises(ValidationError) as excinfo:
        fed_round(state)
    assert excinfo.value.field == "clients"


def test_channel_unlearning_decouples_the_client(moons):
    state = make_state(moons, n_clients=2)
    fed_round(state)
    _, trace = unlearn_client(state, 0, mode="channel")
    audit = trace.steps[-1]
    assert audit["block"] == [0, 1]
    assert audit["mutual_information_after"] == pytest.approx(0.0, abs=1e-8)
    assert audit["trace_distance_after"] == pytest.approx(0.0, abs=1e-9)
    assert audit["contracted"]


def test_simulation_applies_scheduled_events(moons):
    t, data = moons
    spec = FederationSpec(
        rounds=3,
        unlearn_events=[{"round": 2, "client": 1, "alpha": 0.1}],
    )
    result = run_simulation(t, data, spec, DPConfig(sigma=0.5), SeedBook(4))
    kinds = [h["kind"] for h in result["history"]]
    assert kinds == ["round", "round", "unlearn", "round"]
    assert result["history"][-1]["clients"] == [0, 2]
    assert result["ledger"]["rounds"] == 3
    assert len(result["traces"]) == 1
    again = run_simulation(t, data, spec, DPConfig(sigma=0.5), SeedBook(4))
    np.testing.assert_array_equal(result["final_theta"], again["final_theta"])
