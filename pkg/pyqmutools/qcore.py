"""Dense linear algebra for qubit states, unitaries and CPTP channels.

Qubit 0 is the most significant bit of a basis index, so ``|10>`` is the
state with qubit 0 set.  Every state is held as a dense complex128 array;
joint registers are capped at :data:`MAX_QUBITS` qubits.
"""

from __future__ import annotations

from dataclasses import InitVar, dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import InvariantViolation, ValidationError

MAX_QUBITS = 10
ATOL = 1e-9

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _check_n_qubits(n_qubits):
    if int(n_qubits) != n_qubits or n_qubits < 1:
        raise ValidationError("must be a positive integer", "n_qubits")
    if n_qubits > MAX_QUBITS:
        raise ValidationError(
            f"dense simulation is capped at {MAX_QUBITS} qubits", "n_qubits"
        )


def _check_targets(targets, n_qubits):
    targets = tuple(int(q) for q in targets)
    if len(set(targets)) != len(targets):
        raise ValidationError(f"repeated qubit in {targets}", "targets")
    for q in targets:
        if q < 0 or q >= n_qubits:
            raise ValidationError(
                f"qubit {q} out of range for {n_qubits} qubits", "targets"
            )
    return targets


def _floor_round_off(values):
    """Zero eigenvalues in ``[-ATOL, 0)``; anything lower is an error."""
    smallest = float(np.min(values))
    if smallest < -ATOL:
        raise InvariantViolation(
            f"eigenvalue {smallest:.3g} below the PSD tolerance -{ATOL:g}"
        )
    return np.clip(values, 0.0, None)


def _psd_eigvals(matrix):
    return _floor_round_off(scipy.linalg.eigh(matrix, eigvals_only=True))


@dataclass(frozen=True, eq=False)
class PureState:
    n_qubits: int
    amplitudes: np.ndarray
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        amplitudes = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        object.__setattr__(self, "amplitudes", amplitudes)
        if not validate:
            return
        _check_n_qubits(self.n_qubits)
        if amplitudes.shape[0] != 2**self.n_qubits:
            raise ValidationError(
                f"expected {2 ** self.n_qubits} amplitudes, got"
                f" {amplitudes.shape[0]}",
                "amplitudes",
            )
        norm = np.linalg.norm(amplitudes)
        if abs(norm - 1.0) > ATOL:
            raise ValidationError(f"norm is {norm!r}, not 1", "amplitudes")

    @classmethod
    def basis(cls, bits: str) -> "PureState":
        """Computational basis state from a bit string such as ``"10"``."""
        n = len(bits)
        amplitudes = np.zeros(2**n, dtype=complex)
        amplitudes[int(bits, 2)] = 1.0
        return cls(n, amplitudes)

    @property
    def dim(self):
        return self.amplitudes.shape[0]


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    n_qubits: int
    matrix: np.ndarray
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        matrix = np.asarray(self.matrix, dtype=complex)
        object.__setattr__(self, "matrix", matrix)
        if not validate:
            return
        _check_n_qubits(self.n_qubits)
        d = 2**self.n_qubits
        if matrix.shape != (d, d):
            raise ValidationError(
                f"expected shape {(d, d)}, got {matrix.shape}", "matrix"
            )
        if np.max(np.abs(matrix - matrix.conj().T)) > ATOL:
            raise ValidationError("matrix is not Hermitian", "matrix")
        trace = np.trace(matrix).real
        if abs(trace - 1.0) > ATOL:
            raise ValidationError(f"trace is {trace!r}, not 1", "matrix")
        smallest = scipy.linalg.eigh(matrix, eigvals_only=True)[0]
        if smallest < -ATOL:
            raise ValidationError(
                f"negative eigenvalue {smallest!r}", "matrix"
            )

    @property
    def dim(self):
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class KrausChannel:
    kraus_ops: tuple
    n_qubits: int = 1
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        ops = tuple(np.asarray(k, dtype=complex) for k in self.kraus_ops)
        object.__setattr__(self, "kraus_ops", ops)
        if not validate:
            return
        _check_n_qubits(self.n_qubits)
        d = 2**self.n_qubits
        if len(ops) == 0:
            raise ValidationError("empty Kraus set", "kraus_ops")
        for k in ops:
            if k.shape != (d, d):
                raise ValidationError(
                    f"Kraus operator of shape {k.shape}, expected {(d, d)}",
                    "kraus_ops",
                )
        completeness = sum(k.conj().T @ k for k in ops)
        if np.max(np.abs(completeness - np.eye(d))) > ATOL:
            raise ValidationError(
                "Kraus operators are not trace preserving", "kraus_ops"
            )


@dataclass(frozen=True, eq=False)
class Observable:
    """Hermitian observable, either dense or a real-weighted Pauli sum.

    ``terms`` holds ``(coefficient, "XZI...")`` pairs; the string has one
    letter per qubit in qubit order.
    """

    n_qubits: int
    matrix: np.ndarray | None = None
    terms: tuple = field(default_factory=tuple)

    def __post_init__(self):
        _check_n_qubits(self.n_qubits)
        if self.matrix is None and not self.terms:
            raise ValidationError("needs a matrix or Pauli terms", "matrix")
        if self.matrix is not None:
            matrix = np.asarray(self.matrix, dtype=complex)
            object.__setattr__(self, "matrix", matrix)
            if np.max(np.abs(matrix - matrix.conj().T)) > ATOL:
                raise ValidationError("observable is not Hermitian", "matrix")
        for coefficient, word in self.terms:
            if len(word) != self.n_qubits or set(word) - set(PAULI):
                raise ValidationError(f"bad Pauli string {word!r}", "terms")
            if np.iscomplexobj(coefficient) and np.imag(coefficient) != 0:
                raise ValidationError("Pauli weights must be real", "terms")

    @classmethod
    def pauli(cls, terms, n_qubits) -> "Observable":
        return cls(
            n_qubits,
            terms=tuple((float(c), str(w).upper()) for c, w in terms),
        )

    @classmethod
    def z(cls, qubit, n_qubits) -> "Observable":
        word = ["I"] * n_qubits
        word[qubit] = "Z"
        return cls.pauli([(1.0, "".join(word))], n_qubits)

    def to_matrix(self) -> np.ndarray:
        return self.dense

    @cached_property
    def dense(self) -> np.ndarray:
        if self.matrix is not None:
            return self.matrix
        total = np.zeros((2**self.n_qubits,) * 2, dtype=complex)
        for coefficient, word in self.terms:
            term = np.array([[1.0]], dtype=complex)
            for letter in word:
                term = np.kron(term, PAULI[letter])
            total += coefficient * term
        return total

    def spectral_radius(self) -> float:
        values = scipy.linalg.eigh(self.to_matrix(), eigvals_only=True)
        return float(np.max(np.abs(values)))


def _contract(tensor, op, axes):
    """Apply ``op`` (a 2^k x 2^k matrix) to the listed axes of ``tensor``."""
    k = len(axes)
    op = op.reshape([2] * (2 * k))
    out = np.tensordot(op, tensor, axes=(list(range(k, 2 * k)), list(axes)))
    return np.moveaxis(out, list(range(k)), list(axes))


def _apply_to_vector(amplitudes, matrix, targets, n_qubits):
    tensor = amplitudes.reshape([2] * n_qubits)
    return _contract(tensor, matrix, targets).reshape(-1)


def _apply_to_matrix(rho, left, targets, n_qubits):
    """Return ``left rho left^dagger`` with ``left`` acting on ``targets``."""
    tensor = rho.reshape([2] * (2 * n_qubits))
    tensor = _contract(tensor, left, targets)
    tensor = _contract(
        tensor, left.conj(), [q + n_qubits for q in targets]
    )
    d = 2**n_qubits
    return tensor.reshape(d, d)


def to_density(psi: PureState) -> DensityMatrix:
    a = psi.amplitudes
    return DensityMatrix(psi.n_qubits, np.outer(a, a.conj()), validate=False)


def is_unitary(matrix, atol=ATOL) -> bool:
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False
    identity = np.eye(matrix.shape[0])
    return bool(np.max(np.abs(matrix.conj().T @ matrix - identity)) <= atol)


def apply_unitary(state, unitary, targets, check=True):
    """Apply ``unitary`` to ``targets`` of a pure state or density matrix."""
    unitary = np.asarray(unitary, dtype=complex)
    n = state.n_qubits
    if check:
        targets = _check_targets(targets, n)
        if unitary.shape != (2 ** len(targets),) * 2:
            raise ValidationError(
                f"matrix of shape {unitary.shape} does not act on"
                f" {len(targets)} qubits",
                "unitary",
            )
        if not is_unitary(unitary):
            raise ValidationError("matrix is not unitary", "unitary")
    if isinstance(state, PureState):
        return PureState(
            n,
            _apply_to_vector(state.amplitudes, unitary, targets, n),
            validate=False,
        )
    return DensityMatrix(
        n, _apply_to_matrix(state.matrix, unitary, targets, n), validate=False
    )


def apply_channel(
    rho: DensityMatrix, channel: KrausChannel, targets: Sequence[int]
) -> DensityMatrix:
    n = rho.n_qubits
    targets = _check_targets(targets, n)
    if len(targets) != channel.n_qubits:
        raise ValidationError(
            f"channel acts on {channel.n_qubits} qubits but {len(targets)}"
            " targets were given",
            "targets",
        )
    out = np.zeros_like(rho.matrix)
    for k in channel.kraus_ops:
        out += _apply_to_matrix(rho.matrix, k, targets, n)
    return DensityMatrix(n, out, validate=False)


def make_channel(kind: str, param: float) -> KrausChannel:
    """Standard single-qubit noise channels."""
    if not 0.0 <= param <= 1.0:
        raise ValidationError(f"{param!r} is outside [0, 1]", "param")
    if kind == "depolarizing":
        weights = [1.0 - 3.0 * param / 4.0] + [param / 4.0] * 3
        ops = [
            np.sqrt(w) * PAULI[p]
            for w, p in zip(weights, "IXYZ")
            if w > 0.0
        ]
    elif kind == "dephasing":
        ops = [
            np.sqrt(w) * PAULI[p]
            for w, p in zip([1.0 - param / 2.0, param / 2.0], "IZ")
            if w > 0.0
        ]
    elif kind == "amplitude_damping":
        ops = [np.array([[1, 0], [0, np.sqrt(1.0 - param)]], dtype=complex)]
        if param > 0.0:
            ops.append(
                np.array([[0, np.sqrt(param)], [0, 0]], dtype=complex)
            )
    else:
        raise ValidationError(f"unknown channel kind {kind!r}", "kind")
    return KrausChannel(tuple(ops), 1)


def compose_channels(first: KrausChannel, second: KrausChannel):
    """Kraus set of ``second`` applied after ``first``."""
    if first.n_qubits != second.n_qubits:
        raise ValidationError("channels act on different registers")
    ops = tuple(b @ a for a in first.kraus_ops for b in second.kraus_ops)
    return KrausChannel(ops, first.n_qubits)


def partial_trace(rho: DensityMatrix, keep: Sequence[int]) -> DensityMatrix:
    """Reduced state on ``keep``, qubits in the order ``keep`` lists them."""
    n = rho.n_qubits
    if len(keep) == 0:
        raise ValidationError("nothing to keep", "keep")
    keep = _check_targets(keep, n)
    traced = [q for q in range(n) if q not in keep]
    dk, dt = 2 ** len(keep), 2 ** len(traced)
    tensor = rho.matrix.reshape([2] * (2 * n))
    order = (
        list(keep)
        + traced
        + [q + n for q in keep]
        + [q + n for q in traced]
    )
    tensor = tensor.transpose(order).reshape(dk, dt, dk, dt)
    reduced = np.einsum("ajbj->ab", tensor)
    return DensityMatrix(len(keep), reduced, validate=False)


def tensor_product(rho_a: DensityMatrix, rho_b: DensityMatrix):
    return DensityMatrix(
        rho_a.n_qubits + rho_b.n_qubits,
        np.kron(rho_a.matrix, rho_b.matrix),
    )


def maximally_mixed(n_qubits) -> DensityMatrix:
    d = 2**n_qubits
    return DensityMatrix(n_qubits, np.eye(d, dtype=complex) / d)


def permute_qubits(rho: DensityMatrix, order: Sequence[int]):
    """Relabel qubits so that qubit ``k`` of the result is ``order[k]``."""
    n = rho.n_qubits
    if sorted(order) != list(range(n)):
        raise ValidationError(f"{order} is not a permutation", "order")
    tensor = rho.matrix.reshape([2] * (2 * n))
    axes = list(order) + [q + n for q in order]
    d = 2**n
    return DensityMatrix(
        n, tensor.transpose(axes).reshape(d, d), validate=False
    )


def _same_dim(rho, sigma):
    if rho.matrix.shape != sigma.matrix.shape:
        raise ValidationError(
            f"dimension mismatch {rho.matrix.shape} vs {sigma.matrix.shape}"
        )


def trace_distance(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    _same_dim(rho, sigma)
    values = scipy.linalg.eigh(rho.matrix - sigma.matrix, eigvals_only=True)
    return float(np.clip(0.5 * np.sum(np.abs(values)), 0.0, 1.0))


def _sqrtm_psd(matrix):
    values, vectors = scipy.linalg.eigh(matrix)
    values = _floor_round_off(values)
    return (vectors * np.sqrt(values)) @ vectors.conj().T


def fidelity(rho: DensityMatrix, sigma: DensityMatrix) -> float:
    """Squared Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2``."""
    _same_dim(rho, sigma)
    root = _sqrtm_psd(rho.matrix)
    inner = root @ sigma.matrix @ root
    inner = 0.5 * (inner + inner.conj().T)
    value = np.sum(np.sqrt(_psd_eigvals(inner))) ** 2
    return float(np.clip(value, 0.0, 1.0))


def expectation(state, observable: Observable) -> float:
    o = observable.to_matrix()
    if o.shape[0] != state.dim:
        raise ValidationError(
            f"observable of dimension {o.shape[0]} on a state of dimension"
            f" {state.dim}"
        )
    if isinstance(state, PureState):
        a = state.amplitudes
        value = np.vdot(a, o @ a)
    else:
        value = np.trace(state.matrix @ o)
    if abs(value.imag) > ATOL:
        raise InvariantViolation(
            f"expectation has imaginary part {value.imag!r}"
        )
    return float(value.real)


def von_neumann_entropy(rho: DensityMatrix) -> float:
    values = _psd_eigvals(rho.matrix)
    values = values[values > 1e-15]
    return float(-np.sum(values * np.log(values)))


def mutual_information(rho: DensityMatrix, block: Sequence[int]) -> float:
    """``S(block) + S(rest) - S(rho)``; zero when ``block`` is the register."""
    rest = [q for q in range(rho.n_qubits) if q not in block]
    if not rest or not block:
        return 0.0
    value = (
        von_neumann_entropy(partial_trace(rho, block))
        + von_neumann_entropy(partial_trace(rho, rest))
        - von_neumann_entropy(rho)
    )
    return max(value, 0.0)


def _haar_vector(rng, d):
    v = rng.normal(size=d) + 1j * rng.normal(size=d)
    return v / np.linalg.norm(v)


def random_state(n_qubits, seed) -> DensityMatrix:
    """Haar-random pure state, or a random mixture of two of them."""
    _check_n_qubits(n_qubits)
    rng = np.random.default_rng(seed)
    d = 2**n_qubits
    a = _haar_vector(rng, d)
    rho = np.outer(a, a.conj())
    if rng.random() < 0.5:
        b = _haar_vector(rng, d)
        weight = rng.random()
        rho = weight * rho + (1.0 - weight) * np.outer(b, b.conj())
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(n_qubits, rho / np.trace(rho).real)


def random_channel(n_qubits, seed, n_kraus=None) -> KrausChannel:
    """CPTP channel from the blocks of a random isometry."""
    _check_n_qubits(n_qubits)
    rng = np.random.default_rng(seed)
    d = 2**n_qubits
    if n_kraus is None:
        n_kraus = int(rng.integers(1, 5))
    raw = rng.normal(size=(d * n_kraus, d)) + 1j * rng.normal(
        size=(d * n_kraus, d)
    )
    isometry, _ = np.linalg.qr(raw)
    ops = tuple(isometry[i * d : (i + 1) * d, :] for i in range(n_kraus))
    return KrausChannel(ops, n_qubits)
