import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lmqkd.adversary import FakeMeasurementTP, Honest, InterceptResendZ
from lmqkd.qcore import BellIndex, Gate, Rng
from lmqkd.protocol import (
    ConfigError,
    Group,
    KeyRole,
    PAMode,
    PairRecord,
    PrivacyAmpConfig,
    SessionConfig,
    Verdict,
    announce_and_group,
    group1_check,
    group2_extract,
    party_operate,
    privacy_amplify,
    run_session,
    step6_check_and_finalize,
    toeplitz_matrix,
    tp_prepare,
    transcript_jsonl,
)
from lmqkd.transitions import ALL_PAIRS, KEY_PAIRS, OpPair, Role, allowed_outcomes

Z, X, H = Gate.SIGMA_Z, Gate.SIGMA_X, Gate.HADAMARD
PHI_P, PHI_M, PSI_P, PSI_M = BellIndex
TOEPLITZ = PrivacyAmpConfig(PAMode.TOEPLITZ, 0.5, 7)


class TestConfigValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n": 0},
            {"n": 10, "op_weights": (0.5, 0.5, 0.5)},
            {"n": 10, "op_weights": (1.2, -0.2, 0.0)},
            {"n": 10, "check_fraction": 0.0},
            {"n": 10, "check_fraction": 1.0},
            {"n": 10, "error_threshold": 1.0},
            {"n": 10, "master_seed": -1},
            {"n": 10, "master_seed": 2**64},
        ],
    )
    def test_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            SessionConfig(**kwargs)

    def test_pa_bounds(self):
        with pytest.raises(ConfigError):
            PrivacyAmpConfig(PAMode.TOEPLITZ, 0.0)
        with pytest.raises(ConfigError):
            PrivacyAmpConfig("sha256")

    def test_forced_ops_weights(self):
        cfg = SessionConfig(5, forced_ops=OpPair(X, H))
        assert cfg.weights_for(Role.ALICE) == (0.0, 1.0, 0.0)
        assert cfg.weights_for(Role.BOB) == (0.0, 0.0, 1.0)


class TestQuantumSteps:
    def test_prepare_batch_is_phi_plus(self):
        batch = tp_prepare(3)
        assert len(batch) == 3
        for s in batch:
            np.testing.assert_allclose(s.amps, [2**-0.5, 0, 0, 2**-0.5])

    def test_prepare_rejects_zero(self):
        with pytest.raises(ConfigError):
            tp_prepare(0)

    def test_party_operate_only_touches_own_qubit(self):
        ops, batch = party_operate(tp_prepare(4), Role.BOB, (0, 1, 0), Rng(1))
        assert ops == [X] * 4
        for s in batch:
            np.testing.assert_allclose(s.amps, [0, 2**-0.5, 2**-0.5, 0])


def _record(a, b, mr, mr_bob=None):
    return announce_and_group([PairRecord(0, a, b, mr, mr_bob)])[0]


class TestClassicalSteps:
    def test_grouping(self):
        assert _record(Z, H, PHI_P).group is Group.GROUP1
        assert _record(X, Z, PSI_M).group is Group.GROUP2

    def test_announcements_hide_exact_op_in_group2(self):
        r = _record(X, Z, PSI_M)
        assert [a.tag for a in r.announcements()] == ["ACK", "ACK"]
        assert all(a.exact_op is None for a in r.announcements())
        r = _record(X, H, PSI_M)
        assert [(a.tag, a.exact_op) for a in r.announcements()] == [("ACK", X), ("H", None)]

    @pytest.mark.parametrize("pair", [p for p in ALL_PAIRS if p.has_hadamard])
    def test_group1_verdicts(self, pair):
        for mr in BellIndex:
            r = _record(pair.alice_op, pair.bob_op, mr)
            expected = Verdict.OK if mr in allowed_outcomes(pair) else Verdict.DETECTION
            assert group1_check(r) is expected

    def test_group2_anomaly(self):
        r = _record(Z, Z, PSI_P)
        assert group2_extract(r) == (None, None)
        assert r.verdict is Verdict.DETECTION

    def test_group2_valid_but_wrong_outcome_gives_mismatch(self):
        # ψ− on (σz, σz): Alice decodes partner σx, Bob decodes partner σx; bits differ
        r = _record(Z, Z, PSI_M)
        a, b = group2_extract(r)
        assert (a, b) == (0, 1)
        assert r.verdict is Verdict.OK

    def test_step4_mismatch_flags_pair(self):
        assert _record(Z, Z, PHI_P, PSI_M).verdict is Verdict.DETECTION

    def test_transcript_is_jsonl(self):
        r = _record(Z, H, PHI_P)
        line = transcript_jsonl([r]).strip()
        obj = json.loads(line)
        assert obj["group"] == "group1" or obj["group"] == Group.GROUP1.value
        assert obj["announcements"] == ["ACK", "H"]


class TestStep6:
    def _records(self, bits_a, bits_b):
        recs = []
        for i, (a, b) in enumerate(zip(bits_a, bits_b)):
            r = _record(Z, Z, PHI_P)
            r.index, r.alice_key, r.bob_key = i, a, b
            recs.append(r)
        return recs

    def test_disclosure_size_and_roles(self):
        recs = self._records([0, 1] * 10, [0, 1] * 10)
        rep = step6_check_and_finalize(recs, SessionConfig(20, check_fraction=0.3), Rng(0))
        assert rep.disclosed_bits == 6
        assert sum(r.key_role is KeyRole.CHECK_BIT for r in recs) == 6
        assert rep.final_bits == 14 and rep.keys_agree and not rep.aborted

    def test_error_rate_abort(self):
        recs = self._records([0] * 20, [1] * 20)
        rep = step6_check_and_finalize(recs, SessionConfig(20), Rng(0))
        assert rep.aborted and rep.abort_reason == "step6_error_rate"
        assert rep.qber_check == 1.0 and rep.final_bits == 0

    def test_threshold_tolerates_errors(self):
        recs = self._records([0] * 20, [0] * 19 + [1])
        rep = step6_check_and_finalize(recs, SessionConfig(20, error_threshold=0.5), Rng(0))
        assert not rep.aborted

    def test_single_bit_is_kept(self):
        rep = step6_check_and_finalize(self._records([1], [1]), SessionConfig(1, check_fraction=0.99), Rng(0))
        assert rep.disclosed_bits == 0 and rep.alice_key == "1" and not rep.aborted

    def test_no_key_material(self):
        recs = [_record(H, H, PHI_P) for _ in range(3)]
        rep = step6_check_and_finalize(recs, SessionConfig(3), Rng(0))
        assert rep.aborted and rep.abort_reason == "no_key_material"

    def test_prior_abort_passes_through(self):
        rep = step6_check_and_finalize(self._records([0] * 4, [0] * 4), SessionConfig(4), Rng(0), 3, "step5_detection")
        assert rep.aborted and rep.abort_reason == "step5_detection" and rep.session_id == 3
        assert rep.alice_key == rep.bob_key == ""


class TestPrivacyAmplification:
    def test_identity(self):
        bits = np.array([1, 0, 1, 1, 0], dtype=np.uint8)
        np.testing.assert_array_equal(privacy_amplify(bits, PrivacyAmpConfig()), bits)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            privacy_amplify([], TOEPLITZ)

    @pytest.mark.parametrize("n,ratio,m", [(1, 0.5, 1), (10, 0.5, 5), (11, 0.5, 6), (100, 0.13, 13), (7, 1.0, 7)])
    def test_output_length(self, n, ratio, m):
        pa = PrivacyAmpConfig(PAMode.TOEPLITZ, ratio, 1)
        assert privacy_amplify(np.ones(n, dtype=np.uint8), pa).size == m

    def test_deterministic_in_seed(self):
        x = Rng(3).generator.integers(0, 2, 200)
        a = privacy_amplify(x, TOEPLITZ)
        np.testing.assert_array_equal(a, privacy_amplify(x, TOEPLITZ))
        other = privacy_amplify(x, PrivacyAmpConfig(PAMode.TOEPLITZ, 0.5, 8))
        assert not np.array_equal(a, other)

    def test_matches_explicit_matrix(self):
        g = np.random.default_rng(0)
        for n in (1, 2, 17, 300):
            x = g.integers(0, 2, n).astype(np.uint8)
            t = toeplitz_matrix(TOEPLITZ, n).astype(np.int64)
            assert t.shape == (TOEPLITZ.output_length(n), n)
            # constant diagonals
            assert all(len(set(np.diagonal(t, k))) <= 1 for k in range(-t.shape[0] + 1, n))
            np.testing.assert_array_equal(privacy_amplify(x, TOEPLITZ), (t @ x) % 2)

    @settings(max_examples=50, deadline=None)
    @given(data=st.data(), n=st.integers(1, 400))
    def test_gf2_linear(self, data, n):
        a = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)), dtype=np.uint8)
        b = np.array(data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)), dtype=np.uint8)
        lhs = privacy_amplify(a ^ b, TOEPLITZ)
        rhs = privacy_amplify(a, TOEPLITZ) ^ privacy_amplify(b, TOEPLITZ)
        np.testing.assert_array_equal(lhs, rhs)

    def test_bit_string_input(self):
        np.testing.assert_array_equal(privacy_amplify("0110", PrivacyAmpConfig()), [0, 1, 1, 0])
        with pytest.raises(ValueError):
            privacy_amplify("012", PrivacyAmpConfig())


class TestRunSession:
    def test_honest_small(self):
        rep = run_session(SessionConfig(900, master_seed=5))
        assert rep.detections == 0 and not rep.aborted and rep.keys_agree
        assert rep.final_bits == rep.raw_bits - rep.disclosed_bits

    def test_reproducible(self):
        cfg = SessionConfig(300, master_seed=9, pa=TOEPLITZ)
        a, b = run_session(cfg, None, 2), run_session(cfg, None, 2)
        assert a.summary() == b.summary()
        assert transcript_jsonl(a.transcript) == transcript_jsonl(b.transcript)
        assert run_session(cfg, None, 3).summary() != a.summary()

    @pytest.mark.parametrize("pair", KEY_PAIRS)
    def test_forced_key_pairs(self, pair):
        rep = run_session(SessionConfig(40, forced_ops=pair))
        assert rep.group2_pairs == 40 and rep.keys_agree and not rep.aborted
        (mr,) = allowed_outcomes(pair)
        assert {r.mr for r in rep.transcript} == {mr}

    def test_intercept_resend_aborts(self):
        rep = run_session(SessionConfig(50, master_seed=1), InterceptResendZ())
        assert rep.aborted and rep.abort_reason == "step5_detection" and rep.detections > 0
        assert rep.final_bits == 0

    def test_fake_tp_per_recipient_aborts_at_step4(self):
        rep = run_session(SessionConfig(20), FakeMeasurementTP(per_recipient_different=True))
        assert rep.abort_reason == "step4_mr_mismatch"
        assert rep.detections == 20

    def test_fake_tp_key_errors_caught_at_step6(self):
        # announced ψ− on (σz, σz) half the time: Bob decodes 1 while Alice holds 0
        rep = run_session(SessionConfig(2000, master_seed=3, forced_ops=OpPair(Z, Z)), FakeMeasurementTP())
        assert rep.detections == 0
        assert rep.abort_reason == "step6_error_rate"
        assert rep.qber_check == pytest.approx(0.5, abs=0.06)

    def test_honest_attack_object_equivalent_to_none(self):
        cfg = SessionConfig(100, master_seed=4)
        assert run_session(cfg, Honest()).summary() == run_session(cfg).summary()
