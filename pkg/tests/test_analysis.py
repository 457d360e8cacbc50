import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmqkd.adversary import FakeMeasurementTP, Honest, InterceptResendZ, make_parity_learning_tp
from lmqkd.analysis import (
    DensityMatrix,
    abort_probability,
    aggregate,
    binomial_se,
    detection_probability_oracle,
    per_pair_detection_table,
    qber,
    qubit_efficiency,
    trace_distance,
    wilson_interval,
)
from lmqkd.protocol import SessionConfig, run_session
from lmqkd.qcore import Rng, haar_unitary
from lmqkd.transitions import ALL_PAIRS


def random_density(dim, seed, rank=None):
    g = np.random.default_rng(seed)
    rank = rank or dim
    a = g.normal(size=(dim, rank)) + 1j * g.normal(size=(dim, rank))
    rho = a @ a.conj().T
    return rho / np.trace(rho).real


seeds = st.integers(0, 2**32 - 1)


class TestDensityMatrix:
    def test_pure(self):
        rho = DensityMatrix.pure([1, 0])
        np.testing.assert_allclose(rho.matrix, [[1, 0], [0, 0]])
        assert rho.dim == 2

    @pytest.mark.parametrize(
        "m",
        [
            [[1, 1], [0, 0]],  # not Hermitian
            [[0.5, 0], [0, 0.4]],  # trace
            [[1.5, 0], [0, -0.5]],  # negative eigenvalue
            [[1, 0, 0]],  # not square
        ],
    )
    def test_invalid(self, m):
        with pytest.raises(ValueError):
            DensityMatrix(m)


class TestTraceDistance:
    def test_zero_vs_plus(self):
        plus = np.array([1, 1]) / math.sqrt(2)
        assert trace_distance(DensityMatrix.pure([1, 0]), DensityMatrix.pure(plus)) == pytest.approx(1 / math.sqrt(2))

    def test_orthogonal(self):
        assert trace_distance(DensityMatrix.pure([1, 0]), DensityMatrix.pure([0, 1])) == pytest.approx(1.0)

    def test_maximally_mixed_vs_pure(self):
        assert trace_distance(np.eye(2) / 2, DensityMatrix.pure([1, 0])) == pytest.approx(0.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            trace_distance(np.eye(2) / 2, np.eye(3) / 3)

    @settings(max_examples=40, deadline=None)
    @given(s1=seeds, s2=seeds)
    def test_symmetric_and_bounded(self, s1, s2):
        a, b = random_density(3, s1), random_density(3, s2)
        d = trace_distance(a, b)
        assert 0 <= d <= 1
        assert d == pytest.approx(trace_distance(b, a), abs=1e-12)
        assert trace_distance(a, a) == pytest.approx(0, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(s1=seeds, s2=seeds, s3=seeds)
    def test_triangle(self, s1, s2, s3):
        a, b, c = random_density(4, s1), random_density(4, s2), random_density(4, s3)
        assert trace_distance(a, c) <= trace_distance(a, b) + trace_distance(b, c) + 1e-12

    @settings(max_examples=30, deadline=None)
    @given(s1=seeds, s2=seeds, su=seeds)
    def test_unitary_invariance(self, s1, s2, su):
        a, b = random_density(4, s1, 2), random_density(4, s2, 1)
        u = haar_unitary(4, Rng(su)).matrix
        rot = lambda m: u @ m @ u.conj().T  # noqa: E731
        assert trace_distance(rot(a), rot(b)) == pytest.approx(trace_distance(a, b), abs=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(s1=seeds, s2=seeds)
    def test_pure_states_formula(self, s1, s2):
        g1, g2 = np.random.default_rng(s1), np.random.default_rng(s2)
        u = g1.normal(size=3) + 1j * g1.normal(size=3)
        v = g2.normal(size=3) + 1j * g2.normal(size=3)
        u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
        expected = math.sqrt(max(0.0, 1 - abs(np.vdot(u, v)) ** 2))
        # 1 - |<u|v>|^2 loses precision near 1, so allow sqrt(eps)-sized slack
        assert trace_distance(np.outer(u, u.conj()), np.outer(v, v.conj())) == pytest.approx(expected, abs=1e-7)


class TestOracle:
    @pytest.mark.parametrize("pair", ALL_PAIRS)
    def test_honest_zero(self, pair):
        assert detection_probability_oracle(Honest(), pair) == pytest.approx(0, abs=1e-15)

    @pytest.mark.parametrize("pair", ALL_PAIRS)
    def test_intercept_resend_half(self, pair):
        assert detection_probability_oracle(InterceptResendZ(), pair) == pytest.approx(0.5, abs=1e-12)

    def test_per_recipient_is_certain(self):
        assert detection_probability_oracle(FakeMeasurementTP(per_recipient_different=True), ALL_PAIRS[0]) == 1.0

    def test_fake_uniform_phi_psi(self):
        # φ+/ψ− coin: (H,H) sees ψ− half the time; key pairs never see φ−/ψ+
        table = per_pair_detection_table(FakeMeasurementTP(), ALL_PAIRS)
        hh = next(p for p in ALL_PAIRS if str(p) == "(H, H)")
        assert table[hh] == pytest.approx(0.5)
        assert all(v == 0 for p, v in table.items() if not p.has_hadamard)

    def test_parity_learning_zero(self):
        attack = make_parity_learning_tp()
        assert max(per_pair_detection_table(attack, ALL_PAIRS).values()) <= 1e-12


class TestWilson:
    def test_reference_value(self):
        # 99% Wilson score for 50/100, cross-checked against statsmodels' proportion_confint
        est = wilson_interval(50, 100)
        assert est.mean == 0.5
        assert est.low == pytest.approx(0.3752796250448398, abs=1e-12)
        assert est.high == pytest.approx(0.6247203749551602, abs=1e-12)

    def test_all_successes_reaches_one(self):
        assert wilson_interval(16, 16).high == 1.0

    def test_zero_successes(self):
        est = wilson_interval(0, 1000)
        assert est.low == 0.0 and 0 < est.high < 0.01

    def test_empty(self):
        est = wilson_interval(0, 0)
        assert est.mean is None and not est.contains(0.5) and est.width is None

    @settings(max_examples=50, deadline=None)
    @given(t=st.integers(1, 10_000), data=st.data())
    def test_contains_point_estimate(self, t, data):
        s = data.draw(st.integers(0, t))
        est = wilson_interval(s, t)
        assert est.low <= s / t <= est.high


class TestAggregate:
    def test_honest(self):
        cfg = SessionConfig(900, master_seed=2)
        reports = [run_session(cfg, None, i) for i in range(4)]
        stats = aggregate(reports)
        assert stats.sessions == 4
        assert stats.detection_rate.mean == 0 and stats.abort_rate.mean == 0
        assert stats.qber.mean == 0
        assert stats.group2_fraction.contains(4 / 9)
        assert stats.qubit_efficiency.count == 4 * 1800
        flat = stats.flat()
        assert flat["qber.mean"] == 0 and "group2_fraction.low" in flat

    def test_many_honest_reports_exclude_one_percent(self):
        rep = run_session(SessionConfig(50, master_seed=1))
        stats = aggregate([rep] * 100)
        assert stats.detection_rate.contains(0.0)
        assert not stats.detection_rate.contains(0.01)

    def test_order_independent(self):
        cfg = SessionConfig(200, master_seed=3)
        reports = [run_session(cfg, InterceptResendZ() if i % 2 else None, i) for i in range(6)]
        assert aggregate(reports) == aggregate(reports[::-1])

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_efficiency_none_when_aborted(self):
        rep = run_session(SessionConfig(30), InterceptResendZ())
        assert qubit_efficiency(rep) is None
        assert qber(rep) is None


class TestHelpers:
    def test_abort_probability(self):
        assert abort_probability(0.5, 20) == pytest.approx(1 - 2**-20)
        assert abort_probability(0.0, 100) == 0.0

    def test_binomial_se(self):
        assert binomial_se(0.5, 10_000) == pytest.approx(0.005)
