"""Parameterized circuit templates, their execution, and model states."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .qcore import (
    PAULI,
    DensityMatrix,
    Observable,
    PureState,
    _apply_to_matrix,
    _apply_to_vector,
    expectation,
    make_channel,
    to_density,
)

ROTATIONS = ("RX", "RY", "RZ")
ENTANGLERS = ("CNOT", "CZ")
BINDINGS = ("fixed", "trainable", "data", "none")

_CNOT = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)
_CZ = np.diag([1, 1, 1, -1]).astype(complex)
GENERATORS = {"RX": PAULI["X"], "RY": PAULI["Y"], "RZ": PAULI["Z"]}


def rotation(kind, angle):
    """``exp(-i angle G / 2)`` for the Pauli generator of ``kind``."""
    c, s = np.cos(angle / 2.0), np.sin(angle / 2.0)
    if kind == "RX":
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind == "RY":
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == "RZ":
        return np.array(
            [[np.exp(-0.5j * angle), 0], [0, np.exp(0.5j * angle)]],
            dtype=complex,
        )
    raise ValidationError(f"{kind!r} is not a rotation", "kind")


@dataclass(frozen=True)
class GateSpec:
    """One gate; ``value`` is the fixed angle, or the scale of a data gate."""

    kind: str
    targets: tuple
    binding: str = "none"
    index: int | None = None
    value: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "targets", tuple(int(q) for q in self.targets)
        )
        if self.kind in ROTATIONS:
            if len(self.targets) != 1:
                raise ValidationError(
                    f"{self.kind} takes one target, got {self.targets}",
                    "targets",
                )
            if self.binding not in ("fixed", "trainable", "data"):
                raise ValidationError(
                    f"{self.kind} needs an angle binding", "binding"
                )
            if self.binding != "fixed" and (
                self.index is None or self.index < 0
            ):
                raise ValidationError(
                    f"{self.binding} gate needs a non-negative index",
                    "index",
                )
        elif self.kind in ENTANGLERS:
            if len(self.targets) != 2 or len(set(self.targets)) != 2:
                raise ValidationError(
                    f"{self.kind} takes two distinct targets", "targets"
                )
            if self.binding != "none":
                raise ValidationError(
                    f"{self.kind} has no angle to bind", "binding"
                )
        else:
            raise ValidationError(f"unknown gate kind {self.kind!r}", "kind")

    def angle(self, theta, x):
        if self.binding == "trainable":
            return theta[self.index]
        if self.binding == "data":
            return self.value * x[self.index]
        return self.value

    def matrix(self, theta, x, shift=0.0):
        if self.kind == "CNOT":
            return _CNOT
        if self.kind == "CZ":
            return _CZ
        return rotation(self.kind, self.angle(theta, x) + shift)


@dataclass(frozen=True)
class CircuitTemplate:
    """Ordered gate list acting on ``|0...0>`` plus a readout observable.

    ``noise`` is a depolarizing probability applied to every qubit after
    each gate position listed in ``noise_after`` (the end of an entangler
    layer).  Without noise, execution returns a pure state.
    """

    n_qubits: int
    gates: tuple
    n_params: int
    n_features: int
    readout: Observable
    noise: float | None = None
    noise_after: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(
            self, "noise_after", tuple(int(i) for i in self.noise_after)
        )
        seen = set()
        for position, gate in enumerate(self.gates):
            for q in gate.targets:
                if q < 0 or q >= self.n_qubits:
                    raise ValidationError(
                        f"gate {position} targets qubit {q}", "gates"
                    )
            if gate.binding == "trainable":
                if gate.index >= self.n_params:
                    raise ValidationError(
                        f"gate {position} uses parameter {gate.index} of"
                        f" {self.n_params}",
                        "gates",
                    )
                seen.add(gate.index)
            elif gate.binding == "data" and gate.index >= self.n_features:
                raise ValidationError(
                    f"gate {position} reads feature {gate.index} of"
                    f" {self.n_features}",
                    "gates",
                )
        missing = sorted(set(range(self.n_params)) - seen)
        if missing:
            raise ValidationError(
                f"parameters {missing} are never used", "n_params"
            )
        if self.readout.n_qubits != self.n_qubits:
            raise ValidationError(
                "readout acts on a different register", "readout"
            )
        if self.noise is not None and not 0.0 <= self.noise <= 1.0:
            raise ValidationError(f"{self.noise!r} not in [0, 1]", "noise")

    @property
    def noisy(self):
        return self.noise is not None

    @cached_property
    def trainable_positions(self):
        """``(gate position, parameter index)`` for every trainable gate."""
        return tuple(
            (position, gate.index)
            for position, gate in enumerate(self.gates)
            if gate.binding == "trainable"
        )


def _ring_pairs(n_qubits, entangler):
    pairs = [(q, q + 1) for q in range(n_qubits - 1)]
    if entangler == "ring" and n_qubits > 2:
        pairs.append((n_qubits - 1, 0))
    elif entangler not in ("linear", "ring"):
        raise ValidationError(
            f"unknown entangler {entangler!r}", "entangler"
        )
    return pairs


def build_layered_ansatz(
    n_qubits,
    depth,
    entangler="linear",
    reupload=True,
    noise=None,
    n_features=None,
    scale=1.0,
    readout=None,
) -> CircuitTemplate:
    """Encoding / variational / entangler layers repeated ``depth`` times.

    Qubit ``q`` encodes feature ``q % n_features``.  Layer ``l`` owns the
    parameters ``2 * (l * n_qubits + q)`` (RY) and that index plus one (RZ).
    """
    if n_qubits < 1 or depth < 1:
        raise ValidationError("n_qubits and depth must be at least 1")
    if n_features is None:
        n_features = n_qubits
    pairs = _ring_pairs(n_qubits, entangler)
    gates = []
    noise_after = []
    for layer in range(depth):
        if reupload or layer == 0:
            for q in range(n_qubits):
                gates.append(
                    GateSpec("RY", (q,), "data", q % n_features, scale)
                )
        for q in range(n_qubits):
            base = 2 * (layer * n_qubits + q)
            gates.append(GateSpec("RY", (q,), "trainable", base))
            gates.append(GateSpec("RZ", (q,), "trainable", base + 1))
        for a, b in pairs:
            gates.append(GateSpec("CNOT", (a, b)))
        if pairs:
            noise_after.append(len(gates) - 1)
    if readout is None:
        readout = Observable.z(0, n_qubits)
    return CircuitTemplate(
        n_qubits=n_qubits,
        gates=tuple(gates),
        n_params=2 * n_qubits * depth,
        n_features=n_features,
        readout=readout,
        noise=noise,
        noise_after=tuple(noise_after),
    )


def build_encoding_map(
    n_qubits, n_features=None, layers=2, entangler="linear", scale=1.0
) -> CircuitTemplate:
    """Feature-map circuit: data RY, seeded RZ slot, CZ entanglers."""
    if n_features is None:
        n_features = n_qubits
    pairs = _ring_pairs(n_qubits, entangler)
    gates = []
    for layer in range(layers):
        for q in range(n_qubits):
            gates.append(GateSpec("RY", (q,), "data", q % n_features, scale))
            gates.append(
                GateSpec("RZ", (q,), "trainable", layer * n_qubits + q)
            )
        for a, b in pairs:
            gates.append(GateSpec("CZ", (a, b)))
    return CircuitTemplate(
        n_qubits=n_qubits,
        gates=tuple(gates),
        n_params=n_qubits * layers,
        n_features=n_features,
        readout=Observable.z(0, n_qubits),
    )


def _check_inputs(t, theta, x):
    theta = np.asarray(theta, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(-1)
    if theta.shape[0] != t.n_params:
        raise ValidationError(
            f"expected {t.n_params} parameters, got {theta.shape[0]}", "theta"
        )
    if x.shape[0] != t.n_features:
        raise ValidationError(
            f"expected {t.n_features} features, got {x.shape[0]}", "x"
        )
    if not np.all(np.isfinite(theta)):
        raise ValidationError("non-finite parameter", "theta")
    return theta, x


def _simulate_vector(t, theta, x, shift_at=None, shift=0.0, insert_at=None):
    """Noiseless run; optionally shift one gate or insert its generator."""
    n = t.n_qubits
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1.0
    for position, gate in enumerate(t.gates):
        offset = shift if position == shift_at else 0.0
        psi = _apply_to_vector(
            psi, gate.matrix(theta, x, offset), gate.targets, n
        )
        if position == insert_at:
            psi = _apply_to_vector(
                psi, -0.5j * GENERATORS[gate.kind], gate.targets, n
            )
    return psi


def _simulate_density(t, theta, x, shift_at=None, shift=0.0):
    n = t.n_qubits
    rho = np.zeros((2**n, 2**n), dtype=complex)
    rho[0, 0] = 1.0
    channel = make_channel("depolarizing", t.noise)
    noise_points = set(t.noise_after)
    for position, gate in enumerate(t.gates):
        offset = shift if position == shift_at else 0.0
        rho = _apply_to_matrix(
            rho, gate.matrix(theta, x, offset), gate.targets, n
        )
        if position in noise_points:
            for q in range(n):
                rho = sum(
                    _apply_to_matrix(rho, k, (q,), n)
                    for k in channel.kraus_ops
                )
    return rho


def execute(t: CircuitTemplate, theta, x, shift_at=None, shift=0.0):
    """Run the template; ``shift_at`` offsets the angle of one gate."""
    theta, x = _check_inputs(t, theta, x)
    if t.noisy:
        rho = _simulate_density(t, theta, x, shift_at, shift)
        return DensityMatrix(t.n_qubits, rho, validate=False)
    psi = _simulate_vector(t, theta, x, shift_at, shift)
    return PureState(t.n_qubits, psi, validate=False)


def predict(t: CircuitTemplate, theta, x, shift_at=None, shift=0.0):
    return expectation(execute(t, theta, x, shift_at, shift), t.readout)


def model_state(t: CircuitTemplate, theta, probes: Sequence) -> DensityMatrix:
    """Probe-averaged output state standing in for the model ``rho(theta)``."""
    probes = list(probes)
    if not probes:
        raise ValidationError("probe list is empty", "probes")
    total = np.zeros((2**t.n_qubits,) * 2, dtype=complex)
    for x in probes:
        state = execute(t, theta, x)
        if isinstance(state, PureState):
            state = to_density(state)
        total += state.matrix
    return DensityMatrix(t.n_qubits, total / len(probes), validate=False)


def template_to_dict(t: CircuitTemplate) -> dict:
    if t.readout.matrix is not None:
        readout = {
            "real": t.readout.matrix.real.tolist(),
            "imag": t.readout.matrix.imag.tolist(),
        }
    else:
        readout = {"terms": [[c, w] for c, w in t.readout.terms]}
    return {
        "n_qubits": t.n_qubits,
        "n_params": t.n_params,
        "n_features": t.n_features,
        "noise": t.noise,
        "noise_after": list(t.noise_after),
        "readout": readout,
        "gates": [
            {
                "kind": g.kind,
                "targets": list(g.targets),
                "binding": g.binding,
                "index": g.index,
                "value": float(g.value),
            }
            for g in t.gates
        ],
    }


def template_from_dict(data: dict) -> CircuitTemplate:
    n = int(data["n_qubits"])
    readout = data["readout"]
    if "terms" in readout:
        observable = Observable.pauli(readout["terms"], n)
    else:
        observable = Observable(
            n,
            matrix=np.asarray(readout["real"])
            + 1j * np.asarray(readout["imag"]),
        )
    return CircuitTemplate(
        n_qubits=n,
        gates=tuple(
            GateSpec(
                g["kind"],
                tuple(g["targets"]),
                g.get("binding", "none"),
                g.get("index"),
                float(g.get("value", 0.0)),
            )
            for g in data["gates"]
        ),
        n_params=int(data["n_params"]),
        n_features=int(data["n_features"]),
        readout=observable,
        noise=data.get("noise"),
        noise_after=tuple(data.get("noise_after", ())),
    )
