"""Post-processing: efficiency, QBER, trace distance, exact detection oracle, aggregation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

from .adversary import AttackModel, FakeMeasurementTP, announced_distribution, flagged_outcomes
from .protocol import SessionReport
from .transitions import OpPair

EIG_TOL = 1e-9


class DensityMatrix:
    """Validated density operator: Hermitian, unit trace, eigenvalues >= -1e-9."""

    __slots__ = ("matrix",)

    def __init__(self, matrix):
        m = np.array(matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {m.shape}")
        if np.max(np.abs(m - m.conj().T), initial=0.0) > EIG_TOL:
            raise ValueError("density matrix is not Hermitian")
        m = (m + m.conj().T) / 2
        if abs(np.trace(m).real - 1.0) > EIG_TOL:
            raise ValueError(f"density matrix has trace {np.trace(m).real!r}")
        if np.linalg.eigvalsh(m).min() < -EIG_TOL:
            raise ValueError("density matrix is not positive semidefinite")
        m.setflags(write=False)
        self.matrix = m

    @classmethod
    def pure(cls, amps) -> DensityMatrix:
        v = np.asarray(amps, dtype=complex).ravel()
        return cls(np.outer(v, v.conj()))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _as_matrix(x) -> np.ndarray:
    return x.matrix if isinstance(x, DensityMatrix) else np.asarray(x, dtype=complex)


def trace_distance(a, b) -> float:
    """½ Σ|λ_i(a − b)|, with the difference symmetrized before the Hermitian eigensolve."""
    a, b = _as_matrix(a), _as_matrix(b)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    d = (d + d.conj().T) / 2
    td = 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(d))))
    return min(max(td, 0.0), 1.0)


def qubit_efficiency(report: SessionReport) -> float | None:
    """Shared key bits per travel qubit (2 per Bell pair); None for aborted sessions."""
    if report.aborted:
        return None
    return report.final_bits / report.qubits_used


def qber(report: SessionReport) -> float | None:
    return report.qber_check


def detection_probability_oracle(attack: AttackModel, pair: OpPair) -> float:
    """Exact probability that a pair with these ops is flagged at Step 4 or 5."""
    if isinstance(attack, FakeMeasurementTP) and attack.per_recipient_different:
        return 1.0
    probs = announced_distribution(attack, pair)
    return float(sum(probs[b] for b in flagged_outcomes(pair)))


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    mean: float | None
    low: float | None
    high: float | None
    count: int

    def contains(self, x: float) -> bool:
        return self.low is not None and self.low <= x <= self.high

    @property
    def width(self) -> float | None:
        return None if self.low is None else self.high - self.low


def wilson_interval(successes: int, trials: int, confidence: float = 0.99) -> Estimate:
    if trials == 0:
        return Estimate(None, None, None, 0)
    z = float(norm.ppf(1 - (1 - confidence) / 2))
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    # the endpoints are exactly 0 / 1 at the boundaries; pin them against rounding
    low = 0.0 if successes == 0 else max(0.0, centre - half)
    high = 1.0 if successes == trials else min(1.0, centre + half)
    return Estimate(p, low, high, trials)


@dataclass(frozen=True)
class AggregateStats:
    sessions: int
    confidence: float
    detection_rate: Estimate
    abort_rate: Estimate
    qber: Estimate
    qubit_efficiency: Estimate
    group2_fraction: Estimate

    def flat(self) -> dict:
        out: dict = {"sessions": self.sessions, "confidence": self.confidence}
        for name in ("detection_rate", "abort_rate", "qber", "qubit_efficiency", "group2_fraction"):
            est = getattr(self, name)
            out[f"{name}.mean"] = est.mean
            out[f"{name}.low"] = est.low
            out[f"{name}.high"] = est.high
            out[f"{name}.count"] = est.count
        return out


def aggregate(reports: Iterable[SessionReport], confidence: float = 0.99) -> AggregateStats:
    """Pooled proportions with Wilson intervals.

    Only sums enter, so the result does not depend on report order.
    ``detection_rate`` is per pair, ``abort_rate`` per session, ``qber`` per
    disclosed bit, ``qubit_efficiency`` is final bits per travel qubit over
    completed sessions and ``group2_fraction`` is per pair.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("aggregate needs at least one report")
    pairs = sum(r.n for r in reports)
    completed = [r for r in reports if not r.aborted]
    return AggregateStats(
        sessions=len(reports),
        confidence=confidence,
        detection_rate=wilson_interval(sum(r.detections for r in reports), pairs, confidence),
        abort_rate=wilson_interval(sum(r.aborted for r in reports), len(reports), confidence),
        qber=wilson_interval(
            sum(r.check_mismatches for r in reports), sum(r.disclosed_bits for r in reports), confidence
        ),
        qubit_efficiency=wilson_interval(
            sum(r.final_bits for r in completed), sum(r.qubits_used for r in completed), confidence
        ),
        group2_fraction=wilson_interval(sum(r.group2_pairs for r in reports), pairs, confidence),
    )


def binomial_se(p: float, trials: int) -> float:
    return math.sqrt(p * (1 - p) / trials)


def abort_probability(per_pair_rate: float, n: int) -> float:
    """Chance that at least one of ``n`` independent pairs is flagged."""
    return 1.0 - (1.0 - per_pair_rate) ** n


def per_pair_detection_table(attack: AttackModel, pairs: Sequence[OpPair]) -> dict[OpPair, float]:
    return {p: detection_probability_oracle(attack, p) for p in pairs}
