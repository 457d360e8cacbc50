"""Simulator and attack-analysis toolkit for lightweight mediated quantum key distribution."""

__version__ = "0.1.0"

from .adversary import (
    Collective,
    FakeMeasurementTP,
    Honest,
    InterceptResendZ,
    ancilla_key_leakage,
    decompose_collective,
    haar_collective,
    make_parity_learning_tp,
    zero_detection_constraints_satisfied,
)
from .analysis import aggregate, detection_probability_oracle, qubit_efficiency, trace_distance
from .protocol import PrivacyAmpConfig, SessionConfig, SessionReport, run_session
from .qcore import BellIndex, Gate, Rng, StateVector
from .transitions import OpPair, allowed_outcomes, bell_transition, decode_partner_op

__all__ = [
    "BellIndex",
    "Collective",
    "FakeMeasurementTP",
    "Gate",
    "Honest",
    "InterceptResendZ",
    "OpPair",
    "PrivacyAmpConfig",
    "Rng",
    "SessionConfig",
    "SessionReport",
    "StateVector",
    "aggregate",
    "allowed_outcomes",
    "ancilla_key_leakage",
    "bell_transition",
    "decode_partner_op",
    "decompose_collective",
    "detection_probability_oracle",
    "haar_collective",
    "make_parity_learning_tp",
    "qubit_efficiency",
    "run_session",
    "trace_distance",
    "zero_detection_constraints_satisfied",
]
