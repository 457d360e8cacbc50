"""One LMQKD session: the third party (TP), Alice and Bob over simulated channels.

Quantum steps run on a :class:`~lmqkd.qcore.StateBatch` holding all ``n``
Bell pairs; the classical steps (announcements, grouping, checks) then walk
the per-pair transcript.  Channels are ideal, so processing the pairs as one
batch is equivalent to sending them one by one.

RNG streams are addressed as ``(master_seed, session_id, role)`` with roles
``tp``, ``alice``, ``bob``, ``eve`` and ``step6``; privacy amplification has
its own seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import toeplitz
from scipy.signal import fftconvolve

from .adversary import (
    AttackModel,
    Honest,
    hook_after_prepare,
    hook_announce_mr,
    hook_before_measure,
)
from .qcore import GATES, BellIndex, Gate, Rng, StateBatch, bell_state
from .transitions import AnomalousOutcome, OpPair, Role, allowed_outcomes, decode_partner_op

_U64 = 2**64


class ConfigError(ValueError):
    """Invalid session or privacy-amplification configuration."""


class Group(Enum):
    GROUP1 = "group1"
    GROUP2 = "group2"


class Verdict(Enum):
    OK = "ok"
    DETECTION = "detection"


class KeyRole(Enum):
    NONE = "none"
    CHECK_BIT = "check_bit"
    KEY_BIT = "key_bit"


class PAMode(Enum):
    IDENTITY = "identity"
    TOEPLITZ = "toeplitz"


def _check_seed(name: str, seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= seed < _U64:
        raise ConfigError(f"{name} must be an unsigned 64-bit integer, got {seed!r}")
    return int(seed)


@dataclass(frozen=True)
class PrivacyAmpConfig:
    mode: PAMode = PAMode.IDENTITY
    output_ratio: float = 1.0
    pa_seed: int = 0

    def __post_init__(self):
        try:
            object.__setattr__(self, "mode", PAMode(self.mode))
        except ValueError:
            raise ConfigError(f"pa.mode must be one of {[m.value for m in PAMode]}, got {self.mode!r}") from None
        if not 0 < self.output_ratio <= 1:
            raise ConfigError(f"pa.output_ratio must lie in (0, 1], got {self.output_ratio}")
        object.__setattr__(self, "pa_seed", _check_seed("pa.pa_seed", self.pa_seed))

    def output_length(self, n_in: int) -> int:
        if self.mode is PAMode.IDENTITY or n_in == 0:
            return n_in
        return max(1, math.ceil(self.output_ratio * n_in))


@dataclass(frozen=True)
class SessionConfig:
    n: int
    op_weights: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    check_fraction: float = 0.5
    error_threshold: float = 0.0
    pa: PrivacyAmpConfig = field(default_factory=PrivacyAmpConfig)
    master_seed: int = 0
    # pin both parties' operations (exhaustive per-pair runs); overrides op_weights
    forced_ops: OpPair | None = None

    def __post_init__(self):
        if isinstance(self.n, bool) or not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ConfigError(f"session.n must be a positive integer, got {self.n!r}")
        w = tuple(float(x) for x in self.op_weights)
        if len(w) != 3 or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
            raise ConfigError(f"session.op_weights must be 3 non-negative weights summing to 1, got {self.op_weights!r}")
        object.__setattr__(self, "op_weights", w)
        if not 0 < self.check_fraction < 1:
            raise ConfigError(f"session.check_fraction must lie in (0, 1), got {self.check_fraction}")
        if not 0 <= self.error_threshold < 1:
            raise ConfigError(f"session.error_threshold must lie in [0, 1), got {self.error_threshold}")
        object.__setattr__(self, "master_seed", _check_seed("session.master_seed", self.master_seed))

    def weights_for(self, role: Role) -> tuple[float, float, float]:
        if self.forced_ops is None:
            return self.op_weights
        op = self.forced_ops.alice_op if role is Role.ALICE else self.forced_ops.bob_op
        return tuple(1.0 if g is op else 0.0 for g in GATES)


@dataclass(frozen=True)
class Announcement:
    tag: str
    exact_op: Gate | None = None


@dataclass
class PairRecord:
    index: int
    alice_op: Gate
    bob_op: Gate
    mr: BellIndex
    mr_bob: BellIndex | None = None
    group: Group | None = None
    verdict: Verdict = Verdict.OK
    key_role: KeyRole = KeyRole.NONE
    alice_key: int | None = None
    bob_key: int | None = None

    @property
    def pair(self) -> OpPair:
        return OpPair(self.alice_op, self.bob_op)

    def announcements(self) -> tuple[Announcement, Announcement]:
        def one(op: Gate) -> Announcement:
            if op is Gate.HADAMARD:
                return Announcement("H")
            return Announcement("ACK", op if self.group is Group.GROUP1 else None)

        return one(self.alice_op), one(self.bob_op)

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "alice_op": self.alice_op.value,
            "bob_op": self.bob_op.value,
            "announcements": [a.tag for a in self.announcements()],
            "mr": self.mr.name.lower(),
            "mr_bob": (self.mr if self.mr_bob is None else self.mr_bob).name.lower(),
            "group": None if self.group is None else self.group.value,
            "verdict": self.verdict.value,
            "key_role": self.key_role.value,
            "alice_key": None if self.alice_key is None else str(self.alice_key),
            "bob_key": None if self.bob_key is None else str(self.bob_key),
        }


@dataclass
class SessionReport:
    session_id: int
    n: int
    transcript: list[PairRecord]
    detections: int
    aborted: bool
    abort_reason: str | None
    group2_pairs: int
    raw_bits: int
    disclosed_bits: int
    check_mismatches: int
    qber_check: float | None
    residual_mismatch: int
    final_bits: int
    alice_key: str
    bob_key: str

    @property
    def qubits_used(self) -> int:
        return 2 * self.n

    @property
    def keys_agree(self) -> bool:
        return self.alice_key == self.bob_key

    def summary(self) -> dict:
        return {
            "session_id": self.session_id,
            "n": self.n,
            "qubits_used": self.qubits_used,
            "detections": self.detections,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "group2_pairs": self.group2_pairs,
            "raw_bits": self.raw_bits,
            "disclosed_bits": self.disclosed_bits,
            "check_mismatches": self.check_mismatches,
            "qber_check": self.qber_check,
            "residual_mismatch": self.residual_mismatch,
            "final_bits": self.final_bits,
            "alice_key": self.alice_key,
            "bob_key": self.bob_key,
        }


def transcript_jsonl(records: Iterable[PairRecord]) -> str:
    return "".join(json.dumps(r.to_json(), separators=(",", ":")) + "\n" for r in records)


# ---------------------------------------------------------------------------
# quantum steps


def tp_prepare(n: int, rng: Rng | None = None) -> StateBatch:
    """Step 1: ``n`` copies of φ+.  ``rng`` is accepted for symmetry; preparation is deterministic."""
    if n < 1:
        raise ConfigError(f"need at least one Bell pair, got n={n}")
    return StateBatch.repeat(bell_state(BellIndex.PHI_PLUS), n)


def party_operate(
    states: StateBatch, role: Role, op_weights: Sequence[float], rng: Rng
) -> tuple[list[Gate], StateBatch]:
    """Step 2 for one participant: a random gate from ``op_weights`` on their own qubit of every pair."""
    codes = rng.choice_codes(op_weights, len(states))
    return [GATES[c] for c in codes], states.apply_gate_codes(codes, role.qubit)


def tp_measure(states: StateBatch, rng: Rng) -> np.ndarray:
    """Step 3: Bell measurement of the two travel qubits; returns BellIndex codes."""
    outcomes, _ = states.measure_bell(0, 1, rng)
    return outcomes


# ---------------------------------------------------------------------------
# classical steps


def announce_and_group(records: list[PairRecord]) -> list[PairRecord]:
    """Steps 4-5: ACK/H announcements split the pairs into check (Group 1) and key (Group 2) pairs."""
    for r in records:
        r.group = Group.GROUP1 if r.pair.has_hadamard else Group.GROUP2
        if r.mr_bob is not None and r.mr_bob != r.mr:
            r.verdict = Verdict.DETECTION
    return records


def group1_check(record: PairRecord) -> Verdict:
    if record.verdict is Verdict.OK and record.mr not in allowed_outcomes(record.pair):
        record.verdict = Verdict.DETECTION
    return record.verdict


def group2_extract(record: PairRecord) -> tuple[int | None, int | None]:
    """Each side decodes its key bit from its private op and the public result."""
    if record.verdict is not Verdict.OK:
        return None, None
    mr_bob = record.mr if record.mr_bob is None else record.mr_bob
    try:
        _, a = decode_partner_op(Role.ALICE, record.alice_op, record.mr)
        _, b = decode_partner_op(Role.BOB, record.bob_op, mr_bob)
    except AnomalousOutcome:
        record.verdict = Verdict.DETECTION
        return None, None
    record.alice_key, record.bob_key = a, b
    return a, b


def privacy_amplify(bits, pa: PrivacyAmpConfig) -> np.ndarray:
    """Compress the remaining raw key.

    Identity mode returns the bits unchanged.  Toeplitz mode multiplies by an
    ``m x L`` binary Toeplitz matrix over GF(2), ``m = ceil(ratio * L)``,
    whose ``m + L - 1`` defining bits come from ``pa_seed``.
    """
    x = _bits_array(bits)
    if x.size == 0:
        raise ValueError("privacy amplification needs at least one input bit")
    if pa.mode is PAMode.IDENTITY:
        return x.copy()
    m = pa.output_length(x.size)
    t = _toeplitz_seed_bits(pa, x.size, m)
    conv = np.rint(fftconvolve(t.astype(float), x.astype(float))).astype(np.int64)
    return (conv[x.size - 1 : x.size - 1 + m] % 2).astype(np.uint8)


def _toeplitz_seed_bits(pa: PrivacyAmpConfig, n_in: int, n_out: int) -> np.ndarray:
    return Rng(pa.pa_seed).derive("toeplitz").generator.integers(0, 2, size=n_in + n_out - 1, dtype=np.uint8)


def toeplitz_matrix(pa: PrivacyAmpConfig, n_in: int) -> np.ndarray:
    """The explicit ``m x n_in`` matrix used by :func:`privacy_amplify`, ``T[i, j] = t[i - j + n_in - 1]``."""
    m = pa.output_length(n_in)
    t = _toeplitz_seed_bits(pa, n_in, m)
    return toeplitz(t[n_in - 1 :], t[n_in - 1 :: -1]).astype(np.uint8)


def _bits_array(bits) -> np.ndarray:
    if isinstance(bits, str):
        if set(bits) - {"0", "1"}:
            raise ValueError("bit strings may only contain '0' and '1'")
        return np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
    x = np.asarray(bits, dtype=np.uint8).ravel()
    if np.any(x > 1):
        raise ValueError("bits must be 0 or 1")
    return x


def bits_to_str(bits) -> str:
    return "".join("1" if b else "0" for b in np.asarray(bits).ravel())


def step6_check_and_finalize(
    records: list[PairRecord],
    config: SessionConfig,
    rng: Rng,
    session_id: int = 0,
    abort_reason: str | None = None,
) -> SessionReport:
    """Step 6: disclose a random subset of the raw key, compare, then privacy-amplify the rest.

    ``abort_reason`` carries an earlier abort (Step 4 or 5); in that case no
    bits are disclosed and no key is produced.
    """
    raw = [r for r in records if r.group is Group.GROUP2 and r.verdict is Verdict.OK]
    k = len(raw)
    detections = sum(r.verdict is Verdict.DETECTION for r in records)
    group2 = sum(r.group is Group.GROUP2 for r in records)

    def report(reason, disclosed=0, mism=0, qber=None, residual=0, ka="", kb=""):
        return SessionReport(
            session_id=session_id,
            n=len(records),
            transcript=records,
            detections=detections,
            aborted=reason is not None,
            abort_reason=reason,
            group2_pairs=group2,
            raw_bits=k,
            disclosed_bits=disclosed,
            check_mismatches=mism,
            qber_check=qber,
            residual_mismatch=residual,
            final_bits=len(ka),
            alice_key=ka,
            bob_key=kb,
        )

    if abort_reason is not None:
        return report(abort_reason)

    d = math.floor(config.check_fraction * k)
    chosen = np.zeros(k, dtype=bool)
    chosen[rng.generator.choice(k, size=d, replace=False)] = True
    mism = 0
    alice_rest, bob_rest = [], []
    for r, is_check in zip(raw, chosen):
        if is_check:
            r.key_role = KeyRole.CHECK_BIT
            mism += r.alice_key != r.bob_key
        else:
            r.key_role = KeyRole.KEY_BIT
            alice_rest.append(r.alice_key)
            bob_rest.append(r.bob_key)
    qber = mism / d if d else None
    residual = sum(a != b for a, b in zip(alice_rest, bob_rest))
    if qber is not None and qber > config.error_threshold:
        return report("step6_error_rate", d, mism, qber, residual)
    if not alice_rest:
        return report("no_key_material", d, mism, qber, residual)
    ka = bits_to_str(privacy_amplify(alice_rest, config.pa))
    kb = bits_to_str(privacy_amplify(bob_rest, config.pa))
    return report(None, d, mism, qber, residual, ka, kb)


# ---------------------------------------------------------------------------


def session_rng(config: SessionConfig, session_id: int) -> Rng:
    return Rng(config.master_seed).derive(session_id)


def run_session(config: SessionConfig, attack: AttackModel | None = None, session_id: int = 0) -> SessionReport:
    """Steps 1-6 with the attack's hooks applied; aborts are reported, never raised."""
    attack = Honest() if attack is None else attack
    root = session_rng(config, session_id)
    eve = root.derive("eve")

    states = tp_prepare(config.n, root.derive("tp_prepare"))
    states = hook_after_prepare(states, attack, eve)
    alice_ops, states = party_operate(states, Role.ALICE, config.weights_for(Role.ALICE), root.derive("alice"))
    bob_ops, states = party_operate(states, Role.BOB, config.weights_for(Role.BOB), root.derive("bob"))
    states = hook_before_measure(states, attack, eve)
    true_mr = tp_measure(states, root.derive("tp"))
    mr_alice, mr_bob = hook_announce_mr(true_mr, attack, eve)

    bells = list(BellIndex)
    records = [
        PairRecord(i, a, b, bells[ma], bells[mb] if mb != ma else None)
        for i, (a, b, ma, mb) in enumerate(zip(alice_ops, bob_ops, mr_alice.tolist(), mr_bob.tolist()))
    ]
    step4_ok = bool(np.array_equal(mr_alice, mr_bob))
    announce_and_group(records)
    for r in records:
        if r.group is Group.GROUP1:
            group1_check(r)
        else:
            group2_extract(r)

    reason = None
    if not step4_ok:
        reason = "step4_mr_mismatch"
    elif any(r.verdict is Verdict.DETECTION for r in records):
        reason = "step5_detection"
    return step6_check_and_finalize(records, config, root.derive("step6"), session_id, reason)
