"""TOML run configuration.

Example::

    [session]
    n = 9000
    op_weights = [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]
    check_fraction = 0.5
    error_threshold = 0.0
    master_seed = 42

    [session.pa]
    mode = "identity"        # or "toeplitz"
    output_ratio = 1.0
    pa_seed = 0

    [attack]
    tag = "honest"           # intercept_resend_z | fake_measurement_tp | collective | parity_learning

    [run]
    sessions = 10
    parallel = false
    exact_oracle = true

    [output]
    format = "jsonl"         # csv | text
    path = "-"

Attack keys by tag:

* ``intercept_resend_z``: ``on_alice_leg``, ``on_bob_leg`` (bool), ``legs``
  (``outbound`` | ``inbound`` | ``both``)
* ``fake_measurement_tp``: ``distribution`` (4 weights in φ+, φ−, ψ+, ψ−
  order, or a table keyed ``phi_plus`` ...), ``per_recipient_different``
* ``collective``: ``constructor`` (``identity`` | ``parity_learning`` |
  ``haar_random`` | ``files``; ``parity_learning`` ignores the dimensions), ``seed``, ``d_e1``, ``d_e2``, ``u1_file``, ``u2_file``
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .adversary import (
    AttackModel,
    FakeMeasurementTP,
    Honest,
    InterceptResendZ,
    haar_collective,
    identity_collective,
    load_unitary,
    make_parity_learning_tp,
    Collective,
)
from .protocol import ConfigError, PrivacyAmpConfig, SessionConfig
from .qcore import BellIndex, Rng

FORMATS = ("jsonl", "csv", "text")

_SECTIONS = {"session", "attack", "run", "output"}
_SESSION_KEYS = {"n", "op_weights", "check_fraction", "error_threshold", "master_seed", "pa"}
_PA_KEYS = {"mode", "output_ratio", "pa_seed"}
_CONSTRUCTORS = ("identity", "parity_learning", "haar_random", "files")
_RUN_KEYS = {"sessions", "parallel", "exact_oracle"}
_OUTPUT_KEYS = {"format", "path"}
_ATTACK_KEYS = {
    "honest": set(),
    "intercept_resend_z": {"on_alice_leg", "on_bob_leg", "legs"},
    "fake_measurement_tp": {"distribution", "per_recipient_different"},
    "collective": {"constructor", "seed", "d_e1", "d_e2", "u1_file", "u2_file"},
    "parity_learning": set(),
}


@dataclass(frozen=True)
class RunOptions:
    sessions: int = 1
    parallel: bool = False
    exact_oracle: bool = True


@dataclass(frozen=True)
class OutputOptions:
    format: str = "jsonl"
    path: str = "-"


@dataclass(frozen=True)
class CliConfig:
    session: SessionConfig
    attack: AttackModel
    run: RunOptions
    output: OutputOptions
    raw: dict


def _unknown(section: str, table: dict, allowed: set) -> None:
    extra = sorted(set(table) - allowed)
    if extra:
        raise ConfigError(f"unknown key '{section + '.' if section else ''}{extra[0]}'")


def _typed(section: str, key: str, value, kind):
    ok = isinstance(value, kind) and not (kind in (int, float, (int, float)) and isinstance(value, bool))
    if not ok:
        name = kind.__name__ if isinstance(kind, type) else "number"
        raise ConfigError(f"'{section}.{key}' must be a {name}, got {value!r}")
    return value


def _table(raw: dict, key: str) -> dict:
    t = raw.get(key, {})
    if not isinstance(t, dict):
        raise ConfigError(f"'{key}' must be a table")
    return t


def parse_session(raw: dict) -> SessionConfig:
    s = _table(raw, "session")
    _unknown("session", s, _SESSION_KEYS)
    if "n" not in s:
        raise ConfigError("missing required key 'session.n'")
    pa = s.get("pa", {})
    if not isinstance(pa, dict):
        raise ConfigError("'session.pa' must be a table")
    _unknown("session.pa", pa, _PA_KEYS)
    kwargs: dict[str, Any] = {"n": _typed("session", "n", s["n"], int)}
    if "op_weights" in s:
        w = s["op_weights"]
        if not isinstance(w, list) or len(w) != 3:
            raise ConfigError(f"'session.op_weights' must be a list of 3 numbers, got {w!r}")
        kwargs["op_weights"] = tuple(_typed("session", "op_weights", x, (int, float)) for x in w)
    for key in ("check_fraction", "error_threshold"):
        if key in s:
            kwargs[key] = float(_typed("session", key, s[key], (int, float)))
    if "master_seed" in s:
        kwargs["master_seed"] = _typed("session", "master_seed", s["master_seed"], int)
    pa_kwargs: dict[str, Any] = {}
    if "mode" in pa:
        pa_kwargs["mode"] = _typed("session.pa", "mode", pa["mode"], str)
    if "output_ratio" in pa:
        pa_kwargs["output_ratio"] = float(_typed("session.pa", "output_ratio", pa["output_ratio"], (int, float)))
    if "pa_seed" in pa:
        pa_kwargs["pa_seed"] = _typed("session.pa", "pa_seed", pa["pa_seed"], int)
    kwargs["pa"] = PrivacyAmpConfig(**pa_kwargs)
    return SessionConfig(**kwargs)


def parse_attack(raw: dict, base_dir: Path | None = None) -> AttackModel:
    a = _table(raw, "attack")
    tag = a.get("tag", "honest")
    if tag not in _ATTACK_KEYS:
        raise ConfigError(f"'attack.tag' must be one of {sorted(_ATTACK_KEYS)}, got {tag!r}")
    _unknown("attack", a, _ATTACK_KEYS[tag] | {"tag"})
    try:
        if tag == "honest":
            return Honest()
        if tag == "parity_learning":
            return make_parity_learning_tp()
        if tag == "intercept_resend_z":
            return InterceptResendZ(
                on_alice_leg=_typed("attack", "on_alice_leg", a.get("on_alice_leg", True), bool),
                on_bob_leg=_typed("attack", "on_bob_leg", a.get("on_bob_leg", True), bool),
                legs=_typed("attack", "legs", a.get("legs", "outbound"), str),
            )
        if tag == "fake_measurement_tp":
            dist = a.get("distribution", [0.5, 0.0, 0.0, 0.5])
            if isinstance(dist, dict):
                names = {b.name.lower(): b for b in BellIndex}
                bad = sorted(set(dist) - set(names))
                if bad:
                    raise ConfigError(f"unknown key 'attack.distribution.{bad[0]}'")
                dist = [dist.get(name, 0.0) for name in names]
            if not isinstance(dist, list):
                raise ConfigError("'attack.distribution' must be a list of 4 weights or a table")
            return FakeMeasurementTP(
                tuple(dist),
                _typed("attack", "per_recipient_different", a.get("per_recipient_different", False), bool),
            )
        ctor = a.get("constructor", "identity")
        d1 = _typed("attack", "d_e1", a.get("d_e1", 4), int)
        d2 = _typed("attack", "d_e2", a.get("d_e2", 16), int)
        if ctor == "identity":
            return identity_collective(d1, d2)
        if ctor == "parity_learning":
            return make_parity_learning_tp()
        if ctor == "haar_random":
            seed = _typed("attack", "seed", a.get("seed", 0), int)
            return haar_collective(Rng(seed).derive("haar"), d1, d2)
        if ctor == "files":
            base = base_dir or Path(".")
            if "u1_file" not in a or "u2_file" not in a:
                raise ConfigError("missing required key 'attack.u1_file' / 'attack.u2_file'")
            u1 = load_unitary(base / a["u1_file"])
            u2 = load_unitary(base / a["u2_file"])
            return Collective(u1, u2, d1, d2, "files")
        raise ConfigError(f"'attack.constructor' must be one of {_CONSTRUCTORS}, got {ctor!r}")
    except ConfigError:
        raise
    except (ValueError, OSError) as exc:
        raise ConfigError(f"invalid 'attack' block: {exc}") from None


def parse_config(raw: dict, base_dir: Path | None = None) -> CliConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a table")
    _unknown("", raw, _SECTIONS)
    session = parse_session(raw)
    attack = parse_attack(raw, base_dir)
    r = _table(raw, "run")
    _unknown("run", r, _RUN_KEYS)
    sessions = _typed("run", "sessions", r.get("sessions", 1), int)
    if sessions < 1:
        raise ConfigError(f"'run.sessions' must be >= 1, got {sessions}")
    run = RunOptions(
        sessions,
        _typed("run", "parallel", r.get("parallel", False), bool),
        _typed("run", "exact_oracle", r.get("exact_oracle", True), bool),
    )
    o = _table(raw, "output")
    _unknown("output", o, _OUTPUT_KEYS)
    fmt = _typed("output", "format", o.get("format", "jsonl"), str)
    if fmt not in FORMATS:
        raise ConfigError(f"'output.format' must be one of {FORMATS}, got {fmt!r}")
    output = OutputOptions(fmt, _typed("output", "path", o.get("path", "-"), str))
    return CliConfig(session, attack, run, output, copy.deepcopy(raw))


def load_raw(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None


def set_dotted(raw: dict, dotted: str, value) -> dict:
    """Copy of ``raw`` with ``dotted`` (e.g. ``session.n``) set to ``value``."""
    out = copy.deepcopy(raw)
    node = out
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"'{dotted}' does not name a config key")
    node[parts[-1]] = value
    return out
