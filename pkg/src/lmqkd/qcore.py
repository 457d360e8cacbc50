"""Dense complex state-vector core.

Amplitudes are indexed by mixed-radix digits over ``dims`` with subsystem 0
the most significant digit, so a two-qubit state is ordered
``|00>, |01>, |10>, |11>`` with the first qubit on the left.

Two layers live here:

* single-state values (:class:`StateVector`, :class:`UnitaryMatrix`) with the
  plain functional API (:func:`apply_gate`, :func:`measure_bell`, ...);
* :class:`StateBatch`, a stack of equally-shaped states used by the protocol
  engine so that ``n`` Bell pairs are evolved with a handful of numpy calls.

The single-state functions are thin wrappers over the batch kernels, so both
share one code path.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import unitary_group

NORM_TOL = 1e-9
ALGEBRAIC_TOL = 1e-12

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


class Gate(Enum):
    SIGMA_Z = "sigma_z"
    SIGMA_X = "sigma_x"
    HADAMARD = "hadamard"

    @property
    def symbol(self) -> str:
        return {"sigma_z": "σz", "sigma_x": "σx", "hadamard": "H"}[self.value]


GATES: tuple[Gate, ...] = (Gate.SIGMA_Z, Gate.SIGMA_X, Gate.HADAMARD)


class BellIndex(IntEnum):
    """The four Bell states; the integer value is the row in :data:`BELL_BASIS`."""

    PHI_PLUS = 0
    PHI_MINUS = 1
    PSI_PLUS = 2
    PSI_MINUS = 3

    @property
    def symbol(self) -> str:
        return ("φ+", "φ−", "ψ+", "ψ−")[self.value]

    @property
    def parity(self) -> int:
        """0 for the φ states (even computational parity), 1 for ψ."""
        return self.value // 2


_GATE_ARRAYS = {
    Gate.SIGMA_Z: np.array([[1, 0], [0, -1]], dtype=complex),
    Gate.SIGMA_X: np.array([[0, 1], [1, 0]], dtype=complex),
    Gate.HADAMARD: _INV_SQRT2 * np.array([[1, 1], [1, -1]], dtype=complex),
}

# rows: φ+, φ−, ψ+, ψ− over |00>, |01>, |10>, |11>
BELL_BASIS = _INV_SQRT2 * np.array(
    [
        [1, 0, 0, 1],
        [1, 0, 0, -1],
        [0, 1, 1, 0],
        [0, 1, -1, 0],
    ],
    dtype=complex,
)
BELL_BASIS.setflags(write=False)
for _m in _GATE_ARRAYS.values():
    _m.setflags(write=False)


class QuantumStateError(ValueError):
    """Raised for malformed states, dimension mismatches and bad indices."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class UnitaryMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise QuantumStateError(f"unitary must be a square matrix, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise QuantumStateError("unitary has non-finite entries")
        err = np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0])))
        if err > NORM_TOL:
            raise QuantumStateError(f"matrix is not unitary (max |U†U - I| = {err:.3e})")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, dim: int) -> UnitaryMatrix:
        return cls(np.eye(dim))

    def __matmul__(self, other: UnitaryMatrix) -> UnitaryMatrix:
        return UnitaryMatrix(self.matrix @ other.matrix)

    def kron(self, other: UnitaryMatrix) -> UnitaryMatrix:
        return UnitaryMatrix(np.kron(self.matrix, other.matrix))


@dataclass(frozen=True, eq=False)
class StateVector:
    dims: tuple[int, ...]
    amps: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 2 for d in dims):
            raise QuantumStateError(f"subsystem dimensions must all be >= 2, got {dims}")
        amps = _frozen(np.ravel(self.amps))
        if amps.size != math.prod(dims):
            raise QuantumStateError(f"{amps.size} amplitudes do not match dims {dims}")
        if not np.all(np.isfinite(amps)):
            raise QuantumStateError("state has non-finite amplitudes")
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise QuantumStateError(f"state is not normalized (|psi|^2 = {norm!r})")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "amps", amps)

    @property
    def dim(self) -> int:
        return self.amps.size

    def tensor(self, other: StateVector) -> StateVector:
        return StateVector(self.dims + other.dims, np.kron(self.amps, other.amps))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    def __repr__(self):
        return f"StateVector(dims={self.dims}, amps={np.round(self.amps, 6).tolist()})"


def basis_state(index: int, dims: Sequence[int] | int = 2) -> StateVector:
    dims = (dims,) if isinstance(dims, int) else tuple(dims)
    amps = np.zeros(math.prod(dims), dtype=complex)
    amps[index] = 1.0
    return StateVector(dims, amps)


def tensor(*states: StateVector) -> StateVector:
    out = states[0]
    for s in states[1:]:
        out = out.tensor(s)
    return out


KET_0 = basis_state(0)
KET_1 = basis_state(1)
KET_PLUS = StateVector((2,), [_INV_SQRT2, _INV_SQRT2])
KET_MINUS = StateVector((2,), [_INV_SQRT2, -_INV_SQRT2])


def gate_matrix(g: Gate) -> UnitaryMatrix:
    return UnitaryMatrix(_GATE_ARRAYS[g])


def bell_state(b: BellIndex) -> StateVector:
    return StateVector((2, 2), BELL_BASIS[BellIndex(b)])


def haar_unitary(dim: int, rng: Rng) -> UnitaryMatrix:
    """Haar-distributed unitary drawn from ``rng``'s stream."""
    return UnitaryMatrix(unitary_group.rvs(dim, random_state=rng.generator))


# ---------------------------------------------------------------------------
# batch kernels: arrays of shape (batch, *dims)


def _check_subsystems(dims: tuple[int, ...], subsystems: Sequence[int]) -> tuple[int, ...]:
    subs = tuple(int(i) for i in subsystems)
    for i in subs:
        if not 0 <= i < len(dims):
            raise QuantumStateError(f"subsystem index {i} out of range for dims {dims}")
    if len(set(subs)) != len(subs):
        raise QuantumStateError(f"repeated subsystem index in {subs}")
    return subs


def _gather(tensor_: np.ndarray, subs: tuple[int, ...]) -> tuple[np.ndarray, list[int]]:
    """Move the target axes last; returns (B, rest, D) array and the axis order."""
    nsub = tensor_.ndim - 1
    others = [i for i in range(nsub) if i not in subs]
    order = [0] + [i + 1 for i in others] + [i + 1 for i in subs]
    moved = tensor_.transpose(order)
    b = tensor_.shape[0]
    d = math.prod(tensor_.shape[i + 1] for i in subs)
    return moved.reshape(b, -1, d), order


def _scatter(flat: np.ndarray, shape: tuple[int, ...], order: list[int]) -> np.ndarray:
    moved_shape = tuple(shape[i] for i in order)
    return flat.reshape(moved_shape).transpose(np.argsort(order))


def apply_local(tensor_: np.ndarray, mats: np.ndarray, subsystems: Sequence[int]) -> np.ndarray:
    """Apply ``mats`` to ``subsystems`` of every state in a ``(batch, *dims)`` array.

    ``mats`` is either one ``(D, D)`` matrix shared by the whole batch or a
    ``(batch, D, D)`` stack with one matrix per state.
    """
    dims = tensor_.shape[1:]
    subs = _check_subsystems(dims, subsystems)
    x, order = _gather(tensor_, subs)
    d = x.shape[-1]
    if mats.shape[-2:] != (d, d):
        raise QuantumStateError(
            f"operator of shape {mats.shape[-2:]} does not act on subsystems {subs} (dim {d})"
        )
    if mats.ndim == 2:
        y = x @ mats.T
    else:
        y = np.einsum("bij,brj->bri", mats, x)
    return _scatter(y, tensor_.shape, order)


def bell_components(tensor_: np.ndarray, q1: int, q2: int) -> np.ndarray:
    """Bell-basis components of qubits (q1, q2): array ``(batch, rest, 4)``."""
    dims = tensor_.shape[1:]
    if q1 == q2:
        raise QuantumStateError("Bell measurement needs two distinct qubits")
    subs = _check_subsystems(dims, (q1, q2))
    if dims[q1] != 2 or dims[q2] != 2:
        raise QuantumStateError(f"subsystems {subs} are not qubits (dims {dims})")
    x, _ = _gather(tensor_, subs)
    return x @ BELL_BASIS.conj().T


def sample_outcomes(probs: np.ndarray, rng: Rng) -> np.ndarray:
    """Sample one outcome per row of ``probs``; zero-probability outcomes never occur."""
    c = np.cumsum(probs, axis=1)
    u = rng.generator.random(probs.shape[0]) * c[:, -1]
    return (u[:, None] >= c).sum(axis=1)


# ---------------------------------------------------------------------------


class StateBatch:
    """``n`` states sharing the same subsystem layout.

    Immutable in the same sense as :class:`StateVector`: every operation
    returns a new batch.
    """

    __slots__ = ("dims", "_t")

    def __init__(self, dims: Sequence[int], tensor_: np.ndarray):
        self.dims = tuple(int(d) for d in dims)
        t = np.asarray(tensor_, dtype=complex).reshape((-1,) + self.dims)
        t.setflags(write=False)
        self._t = t

    @classmethod
    def repeat(cls, state: StateVector, n: int) -> StateBatch:
        t = np.broadcast_to(state.amps.reshape(state.dims), (n,) + state.dims)
        return cls(state.dims, np.array(t))

    @classmethod
    def from_states(cls, states: Iterable[StateVector]) -> StateBatch:
        states = list(states)
        if not states:
            raise QuantumStateError("empty batch")
        dims = states[0].dims
        if any(s.dims != dims for s in states):
            raise QuantumStateError("all states in a batch need identical dims")
        return cls(dims, np.stack([s.amps for s in states]))

    @property
    def tensor(self) -> np.ndarray:
        return self._t

    def amplitudes(self) -> np.ndarray:
        return self._t.reshape(len(self), -1)

    def __len__(self) -> int:
        return self._t.shape[0]

    def __getitem__(self, i: int) -> StateVector:
        return StateVector(self.dims, self._t[i].ravel())

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def norms(self) -> np.ndarray:
        a = self.amplitudes()
        return np.sqrt(np.einsum("bi,bi->b", a.conj(), a).real)

    def extend(self, dim: int) -> StateBatch:
        """Append a fresh subsystem of dimension ``dim`` in basis state 0."""
        if dim < 2:
            raise QuantumStateError(f"cannot append a subsystem of dimension {dim}")
        t = np.zeros(self._t.shape + (dim,), dtype=complex)
        t[..., 0] = self._t
        return StateBatch(self.dims + (dim,), t)

    def apply(self, mats: np.ndarray, subsystems: Sequence[int]) -> StateBatch:
        return StateBatch(self.dims, apply_local(self._t, np.asarray(mats, dtype=complex), subsystems))

    def apply_gates(self, gates: Sequence[Gate], subsystem: int) -> StateBatch:
        """Apply ``gates[i]`` to ``subsystem`` of state ``i``."""
        if len(gates) != len(self):
            raise QuantumStateError(f"{len(gates)} gates for a batch of {len(self)}")
        _check_subsystems(self.dims, (subsystem,))
        if self.dims[subsystem] != 2:
            raise QuantumStateError(f"subsystem {subsystem} has dimension {self.dims[subsystem]}, not 2")
        codes = np.fromiter((GATES.index(g) for g in gates), dtype=np.intp, count=len(gates))
        return self.apply_gate_codes(codes, subsystem)

    def apply_gate_codes(self, codes: np.ndarray, subsystem: int) -> StateBatch:
        """Like :meth:`apply_gates` with gates given as indices into :data:`GATES`."""
        stack = np.stack([_GATE_ARRAYS[g] for g in GATES])
        return self.apply(stack[np.asarray(codes)], (subsystem,))

    def bell_probabilities(self, q1: int, q2: int) -> np.ndarray:
        comps = bell_components(self._t, q1, q2)
        return np.sum(np.abs(comps) ** 2, axis=1)

    def measure_bell(self, q1: int, q2: int, rng: Rng) -> tuple[np.ndarray, StateBatch]:
        """Projective Bell measurement of (q1, q2) on every state.

        Returns the outcome codes (``BellIndex`` values) and the post-measurement
        batch, with the other subsystems collapsed and renormalized.
        """
        comps = bell_components(self._t, q1, q2)
        probs = np.sum(np.abs(comps) ** 2, axis=1)
        outcomes = sample_outcomes(probs, rng)
        b = np.arange(len(self))
        rest = comps[b, :, outcomes] / np.sqrt(probs[b, outcomes])[:, None]
        post = rest[:, :, None] * BELL_BASIS[outcomes][:, None, :]
        subs = (q1, q2)
        _, order = _gather(self._t, subs)
        return outcomes, StateBatch(self.dims, _scatter(post, self._t.shape, order))

    def measure_z(self, subsystem: int, rng: Rng, mask: np.ndarray | None = None) -> tuple[np.ndarray, StateBatch]:
        """Computational-basis measurement of one qubit, leaving the observed basis state.

        Only states with ``mask`` true are measured; others pass through and
        report outcome -1.
        """
        n = len(self)
        mask = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        x, order = _gather(self._t, (subsystem,))
        probs = np.sum(np.abs(x) ** 2, axis=1)
        outcomes = np.full(n, -1)
        idx = np.flatnonzero(mask)
        if idx.size:
            outcomes[idx] = sample_outcomes(probs[idx], rng)
        y = x.copy()
        for k in range(x.shape[-1]):
            hit = mask & (outcomes != k)
            y[hit, :, k] = 0.0
        scale = np.ones(n)
        scale[idx] = 1.0 / np.sqrt(probs[idx, outcomes[idx]])
        y *= scale[:, None, None]
        return outcomes, StateBatch(self.dims, _scatter(y, self._t.shape, order))


# ---------------------------------------------------------------------------
# single-state API


def apply_gate(s: StateVector, g: Gate, subsystem: int) -> StateVector:
    _check_subsystems(s.dims, (subsystem,))
    if s.dims[subsystem] != 2:
        raise QuantumStateError(f"subsystem {subsystem} has dimension {s.dims[subsystem]}, not 2")
    return StateBatch(s.dims, s.amps).apply(_GATE_ARRAYS[g], (subsystem,))[0]


def apply_unitary(s: StateVector, u: UnitaryMatrix, subsystems: Sequence[int]) -> StateVector:
    subs = _check_subsystems(s.dims, subsystems)
    d = math.prod(s.dims[i] for i in subs)
    if d != u.dim:
        raise QuantumStateError(f"unitary of dim {u.dim} does not match subsystems {subs} (dim {d})")
    return StateBatch(s.dims, s.amps).apply(u.matrix, subs)[0]


def bell_probabilities(s: StateVector, q1: int = 0, q2: int = 1) -> dict[BellIndex, float]:
    p = StateBatch(s.dims, s.amps).bell_probabilities(q1, q2)[0]
    return {b: float(p[b]) for b in BellIndex}


def measure_bell(s: StateVector, q1: int, q2: int, rng: Rng) -> tuple[BellIndex, StateVector]:
    outcomes, post = StateBatch(s.dims, s.amps).measure_bell(q1, q2, rng)
    return BellIndex(int(outcomes[0])), post[0]


def overlap(a: StateVector, b: StateVector) -> complex:
    """Inner product <a|b>."""
    if a.dims != b.dims:
        raise QuantumStateError(f"dims mismatch: {a.dims} vs {b.dims}")
    return complex(np.vdot(a.amps, b.amps))


def equal_up_to_phase(a: StateVector, b: StateVector, tol: float = NORM_TOL) -> bool:
    return a.dims == b.dims and abs(abs(overlap(a, b)) - 1.0) <= tol


# ---------------------------------------------------------------------------


_MAX_SEED = 2**64


def _stream_id(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode())
    if part < 0:
        raise ValueError(f"stream ids must be non-negative, got {part}")
    return int(part)


class Rng:
    """Counter-based (Philox) generator addressed by ``(seed, *stream)``.

    ``Rng(s).derive("alice")`` and ``Rng(s).derive("bob")`` are independent
    streams; the same address always reproduces the same draws.
    """

    def __init__(self, seed: int, stream: Sequence[int | str] = ()):
        seed = int(seed)
        if not 0 <= seed < _MAX_SEED:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = seed
        self.stream = tuple(_stream_id(p) for p in stream)
        ss = np.random.SeedSequence(seed, spawn_key=self.stream)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def derive(self, *parts: int | str) -> Rng:
        return Rng(self.seed, self.stream + tuple(_stream_id(p) for p in parts))

    def random(self) -> float:
        return float(self.generator.random())

    def choice_codes(self, weights: Sequence[float], size: int) -> np.ndarray:
        """``size`` category indices drawn with probabilities ``weights``."""
        w = np.asarray(weights, dtype=float)
        probs = np.broadcast_to(w / w.sum(), (size, w.size))
        return sample_outcomes(probs, self)

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream})"
