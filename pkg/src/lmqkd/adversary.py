"""Attack strategies and the exact attacked-evolution tools used to analyse them.

Layout of a pair's joint state while an attack is active::

    [qubit A, qubit B, E1 (if d_e1 > 1), E2 (if d_e2 > 1)]

E1 is attached right after preparation and entangled by ``u1``; E2 is
attached just before the third party's Bell measurement and entangled by
``u2``.  A register of dimension 1 is simply omitted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple, Sequence, Union

import numpy as np

from .qcore import (
    BELL_BASIS,
    GATES,
    BellIndex,
    Gate,
    QuantumStateError,
    Rng,
    StateBatch,
    StateVector,
    UnitaryMatrix,
    apply_gate,
    bell_state,
    haar_unitary,
    sample_outcomes,
)
from .transitions import (
    ALL_PAIRS,
    OpPair,
    Role,
    allowed_outcomes,
    decode_partner_op,
    key_bit,
)

if TYPE_CHECKING:
    from .protocol import SessionConfig

ANOMALOUS = frozenset({BellIndex.PHI_MINUS, BellIndex.PSI_PLUS})
LEGS = ("outbound", "inbound", "both")


@dataclass(frozen=True)
class Honest:
    tag = "honest"


@dataclass(frozen=True)
class InterceptResendZ:
    """Z-basis measure-and-resend on the selected travel qubits."""

    on_alice_leg: bool = True
    on_bob_leg: bool = True
    legs: str = "outbound"
    tag = "intercept_resend_z"

    def __post_init__(self):
        if self.legs not in LEGS:
            raise ValueError(f"legs must be one of {LEGS}, got {self.legs!r}")

    @property
    def outbound(self) -> bool:
        return self.legs in ("outbound", "both")

    @property
    def inbound(self) -> bool:
        return self.legs in ("inbound", "both")

    def qubits(self) -> tuple[int, ...]:
        return tuple(q for q, on in ((0, self.on_alice_leg), (1, self.on_bob_leg)) if on)


@dataclass(frozen=True)
class FakeMeasurementTP:
    """A third party that announces results drawn from ``distribution`` (indexed by BellIndex)."""

    distribution: tuple[float, float, float, float] = (0.5, 0.0, 0.0, 0.5)
    per_recipient_different: bool = False
    tag = "fake_measurement_tp"

    def __post_init__(self):
        d = tuple(float(p) for p in self.distribution)
        if len(d) != 4 or any(p < 0 for p in d) or abs(sum(d) - 1.0) > 1e-9:
            raise ValueError(f"announced distribution must be 4 non-negative weights summing to 1, got {d}")
        object.__setattr__(self, "distribution", d)


@dataclass(frozen=True, eq=False)
class Collective:
    u1: UnitaryMatrix
    u2: UnitaryMatrix
    d_e1: int = 4
    d_e2: int = 16
    label: str = "collective"
    tag = "collective"

    def __post_init__(self):
        if self.d_e1 < 1 or self.d_e2 < 1:
            raise ValueError("ancilla dimensions must be >= 1")
        if self.u1.dim != 4 * self.d_e1:
            raise QuantumStateError(f"u1 has dim {self.u1.dim}, expected 4*d_e1 = {4 * self.d_e1}")
        if self.u2.dim != 4 * self.d_e2:
            raise QuantumStateError(f"u2 has dim {self.u2.dim}, expected 4*d_e2 = {4 * self.d_e2}")

    @property
    def ancilla_dim(self) -> int:
        return self.d_e1 * self.d_e2


AttackModel = Union[Honest, InterceptResendZ, FakeMeasurementTP, Collective]


def identity_collective(d_e1: int = 4, d_e2: int = 16) -> Collective:
    return Collective(UnitaryMatrix.identity(4 * d_e1), UnitaryMatrix.identity(4 * d_e2), d_e1, d_e2, "identity")


def haar_collective(rng: Rng, d_e1: int = 4, d_e2: int = 16) -> Collective:
    return Collective(haar_unitary(4 * d_e1, rng), haar_unitary(4 * d_e2, rng), d_e1, d_e2, "haar_random")


def make_parity_learning_tp() -> Collective:
    """Collective attack whose E2 qubit records the Bell parity (φ vs ψ) of the pair.

    ``u2`` is the identity on span{φ+, φ−} ⊗ E2 and flips E2 on span{ψ+, ψ−}.
    In the computational basis those subspaces are span{|00>, |11>} and
    span{|01>, |10>}, so this is a parity-controlled NOT into E2.
    """
    even = np.diag([1.0, 0.0, 0.0, 1.0])
    odd = np.diag([0.0, 1.0, 1.0, 0.0])
    flip = np.array([[0.0, 1.0], [1.0, 0.0]])
    u2 = np.kron(even, np.eye(2)) + np.kron(odd, flip)
    return Collective(UnitaryMatrix.identity(4), UnitaryMatrix(u2), 1, 2, "parity_learning")


# ---------------------------------------------------------------------------
# unitary matrix files: one row per line, entries "re,im" separated by whitespace


def load_unitary(path: str | Path) -> UnitaryMatrix:
    rows = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            row = []
            for tok in line.split():
                re_, im = tok.split(",")
                row.append(complex(float(re_), float(im)))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad matrix entry ({exc})") from None
        rows.append(row)
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ValueError(f"{path}: matrix is not square")
    return UnitaryMatrix(np.array(rows))


def save_unitary(u: UnitaryMatrix, path: str | Path) -> None:
    lines = [" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row) for row in u.matrix]
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# hooks


def _as_batch(state) -> tuple[StateBatch, bool]:
    if isinstance(state, StateVector):
        return StateBatch(state.dims, state.amps), True
    return state, False


def _ret(batch: StateBatch, single: bool):
    return batch[0] if single else batch


def _intercept(batch: StateBatch, attack: InterceptResendZ, rng: Rng) -> StateBatch:
    for q in attack.qubits():
        _, batch = batch.measure_z(q, rng)
    return batch


def hook_after_prepare(state, attack: AttackModel, rng: Rng):
    """Attack step applied to freshly prepared pairs on their way to the participants."""
    batch, single = _as_batch(state)
    if isinstance(attack, Collective):
        subs: tuple[int, ...] = (0, 1)
        if attack.d_e1 > 1:
            batch = batch.extend(attack.d_e1)
            subs = (0, 1, len(batch.dims) - 1)
        batch = batch.apply(attack.u1.matrix, subs)
    elif isinstance(attack, InterceptResendZ) and attack.outbound:
        batch = _intercept(batch, attack, rng)
    return _ret(batch, single)


def hook_before_measure(state, attack: AttackModel, rng: Rng):
    """Attack step applied to the returning qubits before the Bell measurement."""
    batch, single = _as_batch(state)
    if isinstance(attack, Collective):
        subs: tuple[int, ...] = (0, 1)
        if attack.d_e2 > 1:
            batch = batch.extend(attack.d_e2)
            subs = (0, 1, len(batch.dims) - 1)
        batch = batch.apply(attack.u2.matrix, subs)
    elif isinstance(attack, InterceptResendZ) and attack.inbound:
        batch = _intercept(batch, attack, rng)
    return _ret(batch, single)


def hook_announce_mr(true_mr: np.ndarray, attack: AttackModel, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """Results as announced to (Alice, Bob)."""
    true_mr = np.asarray(true_mr)
    if not isinstance(attack, FakeMeasurementTP):
        return true_mr, true_mr
    probs = np.broadcast_to(np.asarray(attack.distribution), (true_mr.size, 4))
    to_alice = sample_outcomes(probs, rng)
    if not attack.per_recipient_different:
        return to_alice, to_alice
    to_bob = (to_alice + 1 + rng.generator.integers(0, 3, size=to_alice.size)) % 4
    return to_alice, to_bob


# ---------------------------------------------------------------------------
# exact per-pair evolution


def _apply_pair(s: StateVector, pair: OpPair) -> StateVector:
    s = apply_gate(s, pair.alice_op, 0)
    return apply_gate(s, pair.bob_op, 1)


def _z_branches(branches: list[tuple[float, StateVector]], qubits: Sequence[int]) -> list[tuple[float, StateVector]]:
    for q in qubits:
        out = []
        for w, s in branches:
            t = s.amps.reshape(s.dims)
            for k in (0, 1):
                proj = np.zeros_like(t)
                idx = [slice(None)] * t.ndim
                idx[q] = k
                proj[tuple(idx)] = t[tuple(idx)]
                p = float(np.vdot(proj, proj).real)
                if p > 0:
                    out.append((w * p, StateVector(s.dims, proj.ravel() / math.sqrt(p))))
        branches = out
    return branches


def attacked_branches(attack: AttackModel, pair: OpPair) -> list[tuple[float, StateVector]]:
    """Exact pre-measurement states of one pair as a weighted list of branches.

    Only intercept-resend produces more than one branch (one per observed
    Z outcome); the weights sum to one.
    """
    s = bell_state(BellIndex.PHI_PLUS)
    if isinstance(attack, Collective):
        return [(1.0, collective_joint_state(attack, pair))]
    branches = [(1.0, s)]
    if isinstance(attack, InterceptResendZ) and attack.outbound:
        branches = _z_branches(branches, attack.qubits())
    branches = [(w, _apply_pair(b, pair)) for w, b in branches]
    if isinstance(attack, InterceptResendZ) and attack.inbound:
        branches = _z_branches(branches, attack.qubits())
    return branches


def collective_joint_state(attack: Collective, pair: OpPair) -> StateVector:
    s = hook_after_prepare(bell_state(BellIndex.PHI_PLUS), attack, None)
    s = _apply_pair(s, pair)
    return hook_before_measure(s, attack, None)


def bell_components_exact(state: StateVector) -> np.ndarray:
    """``(ancilla_dim, 4)`` matrix whose column k is the unnormalized ancilla after outcome k."""
    t = state.amps.reshape(4, -1)
    return (BELL_BASIS.conj() @ t).T


def announced_distribution(attack: AttackModel, pair: OpPair) -> np.ndarray:
    """Exact distribution of the result announced to Alice for a pair."""
    if isinstance(attack, FakeMeasurementTP):
        return np.array(attack.distribution)
    probs = np.zeros(4)
    for w, s in attacked_branches(attack, pair):
        comps = bell_components_exact(s)
        probs += w * np.sum(np.abs(comps) ** 2, axis=0)
    return probs


def flagged_outcomes(pair: OpPair) -> frozenset[BellIndex]:
    """Results the participants flag as a detection for this pair.

    Check pairs (some H) flag anything outside the transition support; key
    pairs flag only φ− and ψ+ (a wrong-but-possible result shows up later as
    a key mismatch, not here).
    """
    if pair.has_hadamard:
        return frozenset(BellIndex) - allowed_outcomes(pair)
    return ANOMALOUS


# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CollectiveDecomposition:
    """Bell-basis expansion of the two attack unitaries.

    ``a[k]`` and ``e[k]`` give ``u1(|φ+> ⊗ |0>) = Σ a_k |bell_k> |e_k>`` with
    ``a_k >= 0`` and normalized ``e_k`` (zero vector when ``a_k == 0``).
    ``block_coeffs[j, k]`` / ``block_states[j, k]`` do the same for
    ``u2(|bell_j> ⊗ |0>)``; row j=0..3 corresponds to φ+, φ−, ψ+, ψ−.
    """

    a: np.ndarray
    e: np.ndarray
    block_coeffs: np.ndarray
    block_states: np.ndarray

    def rebuild_u1_image(self) -> np.ndarray:
        return np.einsum("k,kb,kd->bd", self.a, BELL_BASIS, self.e).ravel()

    def rebuild_u2_image(self, j: int) -> np.ndarray:
        return np.einsum("k,kb,kd->bd", self.block_coeffs[j], BELL_BASIS, self.block_states[j]).ravel()


def _expand(vec: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    comps = BELL_BASIS.conj() @ vec.reshape(4, d)
    coeffs = np.linalg.norm(comps, axis=1)
    states = np.zeros_like(comps)
    nz = coeffs > 0
    states[nz] = comps[nz] / coeffs[nz, None]
    return coeffs, states


def _fresh(d: int) -> np.ndarray:
    v = np.zeros(d, dtype=complex)
    v[0] = 1.0
    return v


def decompose_collective(attack: Collective) -> CollectiveDecomposition:
    v1 = attack.u1.matrix @ np.kron(BELL_BASIS[BellIndex.PHI_PLUS], _fresh(attack.d_e1))
    a, e = _expand(v1, attack.d_e1)
    coeffs, states = [], []
    for j in BellIndex:
        v2 = attack.u2.matrix @ np.kron(BELL_BASIS[j], _fresh(attack.d_e2))
        c, s = _expand(v2, attack.d_e2)
        coeffs.append(c)
        states.append(s)
    return CollectiveDecomposition(a, e, np.array(coeffs), np.array(states))


class ConstraintCheck(NamedTuple):
    satisfied: bool
    max_violation: float
    per_pair: dict


def zero_detection_constraints_satisfied(attack: Collective, tol: float = 1e-9) -> ConstraintCheck:
    """Check the zero-detection conditions by evolving every op pair exactly.

    The violation for a pair is the probability that the announced result
    falls outside that pair's honest transition support.
    """
    per_pair = {}
    for pair in ALL_PAIRS:
        probs = announced_distribution(attack, pair)
        allowed = allowed_outcomes(pair)
        per_pair[pair] = float(sum(probs[b] for b in BellIndex if b not in allowed))
    worst = max(per_pair.values())
    return ConstraintCheck(worst <= tol, worst, per_pair)


# ---------------------------------------------------------------------------
# ancilla views and leakage


@dataclass(frozen=True, eq=False)
class AncillaRegisterView:
    pair: OpPair
    mr: BellIndex
    probability: float
    rho: np.ndarray
    key_bit: int | None

    @property
    def announcements(self) -> tuple[str, str]:
        return tuple("H" if op is Gate.HADAMARD else "ACK" for op in self.pair)


def ancilla_views(attack: Collective, pair: OpPair, cutoff: float = 0.0) -> list[AncillaRegisterView]:
    """Normalized E1⊗E2 state for every Bell result of ``pair`` with probability > cutoff."""
    comps = bell_components_exact(collective_joint_state(attack, pair))
    views = []
    for b in BellIndex:
        v = comps[:, b]
        p = float(np.vdot(v, v).real)
        if p <= cutoff:
            continue
        rho = np.outer(v, v.conj()) / p
        kb = None if pair.has_hadamard or b in ANOMALOUS else key_bit(pair.alice_op)
        views.append(AncillaRegisterView(pair, b, p, rho, kb))
    return views


class LeakageResult(NamedTuple):
    trace_distance: float
    detection_rate: float
    key_mismatch_rate: float
    per_class: dict


def _pair_weights(op_weights, samples: int | None, rng: Rng | None) -> dict[OpPair, float]:
    w = dict(zip(GATES, np.asarray(op_weights, dtype=float) / np.sum(op_weights)))
    if samples is None:
        return {p: w[p.alice_op] * w[p.bob_op] for p in ALL_PAIRS}
    if rng is None:
        raise ValueError("sampled pair weighting needs an Rng")
    codes_a = rng.choice_codes(list(w.values()), samples)
    codes_b = rng.choice_codes(list(w.values()), samples)
    counts = np.zeros((3, 3))
    np.add.at(counts, (codes_a, codes_b), 1)
    return {OpPair(GATES[i], GATES[j]): counts[i, j] / samples for i in range(3) for j in range(3)}


def ancilla_key_leakage(
    attack: AttackModel,
    config: SessionConfig | None = None,
    samples: int | None = None,
    rng: Rng | None = None,
) -> LeakageResult:
    """How well the ancillas distinguish raw-key values, and what that costs in detections.

    The ancilla states are grouped by public class (the announced Bell result
    of a key pair; the ACK/ACK announcement is implied).  Within a class the
    states for key 0 and key 1 are compared by trace distance, and the
    result is averaged over classes with their probabilities.  Op pairs are
    weighted exactly by ``config.op_weights`` unless ``samples`` is given, in
    which case the weights are empirical frequencies of that many draws.

    ``detection_rate`` counts check-pair results outside the transition
    support plus φ−/ψ+ on key pairs.  ``key_mismatch_rate`` is the
    probability that a key pair yields different bits for the two parties.
    """
    if isinstance(attack, Honest):
        attack = Collective(UnitaryMatrix.identity(4), UnitaryMatrix.identity(4), 1, 1, "honest")
    if not isinstance(attack, Collective):
        raise TypeError(f"leakage analysis needs a collective attack, got {type(attack).__name__}")
    op_weights = (1 / 3, 1 / 3, 1 / 3) if config is None else config.op_weights
    weights = _pair_weights(op_weights, samples, rng)

    detection = 0.0
    mismatch = 0.0
    dim = attack.ancilla_dim
    sigma = {(c, k): np.zeros((dim, dim), dtype=complex) for c in (BellIndex.PHI_PLUS, BellIndex.PSI_MINUS) for k in (0, 1)}
    for pair, w in weights.items():
        if w == 0:
            continue
        comps = bell_components_exact(collective_joint_state(attack, pair))
        probs = np.sum(np.abs(comps) ** 2, axis=0)
        detection += w * sum(probs[b] for b in flagged_outcomes(pair))
        if pair.has_hadamard:
            continue
        k = key_bit(pair.alice_op)
        for c in (BellIndex.PHI_PLUS, BellIndex.PSI_MINUS):
            v = comps[:, c]
            sigma[(c, k)] += w * np.outer(v, v.conj())
            _, bob_k = decode_partner_op(Role.BOB, pair.bob_op, c)
            if bob_k != k:
                mismatch += w * probs[c]

    from .analysis import trace_distance

    total = 0.0
    acc = 0.0
    per_class = {}
    for c in (BellIndex.PHI_PLUS, BellIndex.PSI_MINUS):
        t0 = float(np.trace(sigma[(c, 0)]).real)
        t1 = float(np.trace(sigma[(c, 1)]).real)
        p = t0 + t1
        if p <= 0:
            continue
        if t0 <= 1e-15 or t1 <= 1e-15:
            # the public result alone fixes the key value
            td = 1.0
        else:
            td = trace_distance(sigma[(c, 0)] / t0, sigma[(c, 1)] / t1)
        per_class[c] = (p, td)
        total += p
        acc += p * td
    leak = acc / total if total > 0 else 0.0
    return LeakageResult(leak, float(detection), float(mismatch), per_class)
