"""Deterministic federated rounds and client-level unlearning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from ..geo import parameter_shift_gradient
from ..learn import Dataset, init_params
from ..losses import LossSpec
from ..parallel import ordered_map
from ..pqc import CircuitTemplate, model_state
from ..privacy import DPConfig, PrivacyLedger, add_noise, clip
from ..qcore import (
    DensityMatrix,
    apply_unitary,
    mutual_information,
    partial_trace,
    tensor_product,
    trace_distance,
)
from ..seeds import SeedBook
from ..unlearn import UnlearnTrace, client_forget
from .aggregation import (
    TOPOLOGIES,
    generate_masks,
    mask_updates,
    messages_digest,
    secure_aggregate,
)

logger = logging.getLogger(__name__)

UNLEARN_MODES = ("gradient_subtract", "channel")
MAX_CHANNEL_CLIENTS = 3
_CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


@dataclass
class ClientSpec:
    id: int
    rows: np.ndarray
    local_epochs: int = 1
    clip_norm: float = 1.0

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=int).reshape(-1)
        if self.local_epochs < 1:
            raise ValidationError("must be at least 1", "local_epochs")
        if not self.clip_norm > 0:
            raise ValidationError("must be positive", "clip_norm")


@dataclass
class UnlearnEvent:
    round: int
    client: int
    mode: str = "gradient_subtract"
    alpha: float | None = None

    def __post_init__(self):
        if self.mode not in UNLEARN_MODES:
            raise ValidationError(
                f"{self.mode!r} is not one of {UNLEARN_MODES}", "mode"
            )


@dataclass
class FederationSpec:
    n_clients: int = 3
    topology: str = "star"
    rounds: int = 5
    learning_rate: float = 0.1
    clip_norm: float = 1.0
    local_epochs: int = 1
    qubits_per_client: int = 2
    loss: str = "mse"
    workers: int = 1
    unlearn_events: list = field(default_factory=list)

    def __post_init__(self):
        if self.n_clients < 2:
            raise ValidationError("need at least two clients", "n_clients")
        if self.topology not in TOPOLOGIES:
            raise ValidationError(
                f"{self.topology!r} is not one of {TOPOLOGIES}", "topology"
            )
        if self.rounds < 0:
            raise ValidationError("must not be negative", "rounds")
        if not self.learning_rate > 0:
            raise ValidationError("must be positive", "learning_rate")
        LossSpec(self.loss)
        self.unlearn_events = [
            e if isinstance(e, UnlearnEvent) else UnlearnEvent(**e)
            for e in self.unlearn_events
        ]
        for event in self.unlearn_events:
            if not 0 <= event.round <= self.rounds:
                raise ValidationError(
                    f"round {event.round} outside 0..{self.rounds}",
                    "unlearn_events",
                )
            if not 0 <= event.client < self.n_clients:
                raise ValidationError(
                    f"no client {event.client}", "unlearn_events"
                )


@dataclass
class RoundRecord:
    round: int
    clients: list
    digest: str
    aggregate: list
    sigma: float
    ledger: dict
    alarm: bool = False

    def to_dict(self) -> dict:
        return {
            "kind": "round",
            "round": self.round,
            "clients": list(self.clients),
            "digest": self.digest,
            "aggregate": list(self.aggregate),
            "sigma": self.sigma,
            "ledger": dict(self.ledger),
            "alarm": self.alarm,
        }


@dataclass
class FedState:
    """Server-side state; ``contributions`` holds each client's stored
    cumulative contribution ``-sum g_i / m`` for gradient subtraction."""

    template: CircuitTemplate
    theta: np.ndarray
    data: Dataset
    clients: dict
    spec: FederationSpec
    dp: DPConfig
    ledger: PrivacyLedger
    seeds: SeedBook
    contributions: dict = field(default_factory=dict)
    removed: set = field(default_factory=set)
    history: list = field(default_factory=list)
    round: int = 0
    joint_state: DensityMatrix | None = None
    blocks: dict = field(default_factory=dict)

    @property
    def active(self):
        return [
            self.clients[i]
            for i in sorted(self.clients)
            if i not in self.removed
        ]


def shard_clients(data: Dataset, spec: FederationSpec, seed) -> dict:
    """Disjoint shards whose union is the train split."""
    rows = data.indices("train")
    if rows.size < spec.n_clients:
        raise ValidationError(
            f"{rows.size} train rows for {spec.n_clients} clients",
            "n_clients",
        )
    order = np.random.default_rng(seed).permutation(rows)
    return {
        i: ClientSpec(i, np.sort(shard), spec.local_epochs, spec.clip_norm)
        for i, shard in enumerate(np.array_split(order, spec.n_clients))
    }


def local_update(
    client: ClientSpec,
    theta,
    t: CircuitTemplate,
    data: Dataset,
    learning_rate=0.1,
    loss="mse",
    workers=1,
):
    """Clipped mean gradient of the shard, summed over local epochs."""
    if client.rows.size == 0:
        raise ValidationError(f"client {client.id} has no data", "rows")
    X, y = data.features[client.rows], data.labels[client.rows]
    spec = LossSpec(loss)
    local = np.array(theta, dtype=float)
    total = np.zeros_like(local)
    for _ in range(client.local_epochs):
        g = parameter_shift_gradient(t, local, X, y, spec, workers=workers)
        total = total + g
        local = local - learning_rate * g
    return clip(total, client.clip_norm)


def fed_round(state: FedState, rng=None) -> RoundRecord:
    """Clip, mask, aggregate, add noise, step and account for one round."""
    clients = state.active
    m = len(clients)
    if m < 2:
        raise ValidationError(f"{m} active clients; need two", "clients")
    spec, r = state.spec, state.round
    updates = ordered_map(
        lambda c: local_update(
            c,
            state.theta,
            state.template,
            state.data,
            spec.learning_rate,
            spec.loss,
        ),
        clients,
        spec.workers,
    )
    masks = generate_masks(
        m,
        state.template.n_params,
        state.seeds(f"round/{r}/masks"),
        spec.topology,
    )
    digest = messages_digest(mask_updates(updates, masks))
    G = secure_aggregate(updates, masks)
    sigma, flagged = state.dp.resolve()
    if rng is None:
        rng = np.random.default_rng(state.seeds(f"round/{r}/noise"))
    noisy = add_noise(G, sigma, rng)
    state.theta = state.theta - spec.learning_rate * noisy / m
    for client, g in zip(clients, updates):
        previous = state.contributions.get(client.id, 0.0)
        state.contributions[client.id] = previous - g / m
    clip_bound = max(c.clip_norm for c in clients)
    state.ledger.record(sigma, clip_bound, flagged=flagged)
    alarm = any(
        np.linalg.norm(g) >= c.clip_norm - 1e-12
        for c, g in zip(clients, updates)
    )
    if alarm:
        logger.warning("round %d: an update hit the clip bound", r)
    record = RoundRecord(
        round=r,
        clients=[c.id for c in clients],
        digest=digest,
        aggregate=G.tolist(),
        sigma=float(sigma),
        ledger=state.ledger.snapshot(),
        alarm=bool(alarm),
    )
    state.history.append(record.to_dict())
    state.round += 1
    logger.info(
        "round %d: %d clients, epsilon %.4g",
        r,
        m,
        record.ledger["epsilon"],
    )
    return record


def build_joint_state(state: FedState) -> DensityMatrix:
    """Per-client model states joined by CNOTs across neighbouring blocks.

    Client ``k`` owns qubits ``[k q, (k + 1) q)`` with ``q`` qubits per
    client; at most three clients take part.
    """
    q = state.spec.qubits_per_client
    clients = state.active[:MAX_CHANNEL_CLIENTS]
    t = state.template
    joint = None
    state.blocks = {}
    for k, client in enumerate(clients):
        rho = model_state(t, state.theta, state.data.features[client.rows])
        if t.n_qubits > q:
            rho = partial_trace(rho, list(range(q)))
        elif t.n_qubits < q:
            pad = np.zeros((2 ** (q - t.n_qubits),) * 2, dtype=complex)
            pad[0, 0] = 1.0
            rho = tensor_product(
                rho, DensityMatrix(q - t.n_qubits, pad, validate=False)
            )
        joint = rho if joint is None else tensor_product(joint, rho)
        state.blocks[client.id] = list(range(k * q, (k + 1) * q))
    for k in range(len(clients) - 1):
        joint = apply_unitary(joint, _CNOT, ((k + 1) * q - 1, (k + 1) * q))
    state.joint_state = joint
    return joint


def _product_reference(rho, blocks, block):
    """``I / 2^|c|`` on the client block, each other block's marginal."""
    factors = []
    for qubits in sorted(blocks.values()):
        if qubits == block:
            d = 2 ** len(qubits)
            factors.append(np.eye(d, dtype=complex) / d)
        else:
            factors.append(partial_trace(rho, qubits).matrix)
    matrix = factors[0]
    for factor in factors[1:]:
        matrix = np.kron(matrix, factor)
    return DensityMatrix(rho.n_qubits, matrix)


def _subtract(state, client_id, alpha, trace):
    contribution = state.contributions.get(client_id)
    if contribution is None:
        contribution = np.zeros_like(state.theta)
    state.theta = state.theta - alpha * np.asarray(contribution)
    trace.record(state.theta)


def _channel(state, client_id, trace):
    if state.joint_state is None or client_id not in state.blocks:
        build_joint_state(state)
    if client_id not in state.blocks:
        raise ValidationError(
            f"client {client_id} has no block in the joint state", "client"
        )
    block = state.blocks[client_id]
    before = state.joint_state
    after = client_forget(before, block)
    reference = _product_reference(before, state.blocks, block)
    audit = {
        "block": block,
        "trace_distance_before": trace_distance(before, reference),
        "trace_distance_after": trace_distance(after, reference),
        "mutual_information_before": mutual_information(before, block),
        "mutual_information_after": mutual_information(after, block),
    }
    audit["contracted"] = bool(
        audit["trace_distance_after"]
        <= audit["trace_distance_before"] + 1e-9
    )
    state.joint_state = after
    trace.steps.append(audit)
    return audit


def unlearn_client(
    state: FedState,
    client_id,
    mode="gradient_subtract",
    alpha=None,
    retrain_rounds=1,
):
    """Remove a client's influence; its shard leaves all future rounds."""
    if client_id not in state.clients or client_id in state.removed:
        raise ValidationError(f"unknown client {client_id}", "client")
    if mode not in UNLEARN_MODES:
        raise ValidationError(
            f"{mode!r} is not one of {UNLEARN_MODES}", "mode"
        )
    trace = UnlearnTrace(f"client_{mode}")
    trace.record(state.theta)
    event = {
        "kind": "unlearn",
        "round": state.round,
        "client": int(client_id),
        "mode": mode,
    }
    if mode == "gradient_subtract":
        alpha = state.spec.learning_rate if alpha is None else alpha
        _subtract(state, client_id, alpha, trace)
        event["alpha"] = float(alpha)
    else:
        event["audit"] = _channel(state, client_id, trace)
    state.removed.add(client_id)
    state.contributions.pop(client_id, None)
    state.history.append(event)
    logger.info("client %d unlearned by %s", client_id, mode)
    if mode == "gradient_subtract":
        for _ in range(retrain_rounds):
            if len(state.active) < 2:
                logger.warning("fewer than two clients left; no retraining")
                break
            fed_round(state)
            trace.record(state.theta)
    return state, trace


def init_state(
    t: CircuitTemplate,
    data: Dataset,
    spec: FederationSpec,
    dp: DPConfig,
    seeds: SeedBook,
) -> FedState:
    return FedState(
        template=t,
        theta=init_params(t.n_params, seeds("init")),
        data=data,
        clients=shard_clients(data, spec, seeds("shards")),
        spec=spec,
        dp=dp,
        ledger=PrivacyLedger(delta=dp.delta),
        seeds=seeds,
    )


def run_simulation(
    t: CircuitTemplate,
    data: Dataset,
    spec: FederationSpec,
    dp: DPConfig,
    seeds: SeedBook,
) -> dict:
    """Shard, run rounds, apply scheduled unlearn events, and summarise.

    The rounds after an event retrain on the remaining shards.
    """
    state = init_state(t, data, spec, dp, seeds)
    initial = state.theta.copy()
    events = sorted(spec.unlearn_events, key=lambda e: e.round)
    traces = []
    for r in range(spec.rounds + 1):
        for event in [e for e in events if e.round == r]:
            _, trace = unlearn_client(
                state, event.client, event.mode, event.alpha, 0
            )
            traces.append(trace)
        if r < spec.rounds:
            fed_round(state)
    return {
        "state": state,
        "initial_theta": initial,
        "final_theta": state.theta,
        "history": state.history,
        "ledger": state.ledger.to_dict(),
        "traces": traces,
        "clients": {
            i: c.rows.tolist() for i, c in sorted(state.clients.items())
        },
    }
