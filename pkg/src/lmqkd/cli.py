"""Command-line front end.

Exit codes: 0 success, 1 verification failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence, TextIO

from . import __version__
from .adversary import (
    Collective,
    ancilla_key_leakage,
    haar_collective,
    zero_detection_constraints_satisfied,
)
from .analysis import aggregate, detection_probability_oracle
from .config import FORMATS, CliConfig, load_raw, parse_config, set_dotted
from .protocol import ConfigError, SessionReport, run_session
from .qcore import GATES, Rng
from .transitions import ALL_PAIRS, check_bell_table, check_single_qubit_table

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

SWEEP_PARAMS = ("session.n", "session.check_fraction", "session.op_weights", "session.error_threshold")


def _dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


# ---------------------------------------------------------------------------


def cmd_verify_tables(out: TextIO | None = None, golden_single=None, golden_bell=None) -> int:
    out = sys.stdout if out is None else out
    single = check_single_qubit_table(golden_single)
    bell = check_bell_table(golden_bell)
    out.write("Single-qubit transitions (gate, input -> output)\n")
    for r in single:
        out.write(f"  {'PASS' if r.ok else 'FAIL'}  {r.label:<8} -> {r.derived:<6} (expected {r.golden})\n")
    out.write("Bell transitions from φ+ (first-qubit op, second-qubit op -> outcomes)\n")
    for r in bell:
        out.write(f"  {'PASS' if r.ok else 'FAIL'}  {r.label:<14} -> {r.derived:<22} (expected {r.golden})\n")
    failed = [r for r in single + bell if not r.ok]
    out.write(f"{len(single) + len(bell) - len(failed)}/{len(single) + len(bell)} rows match\n")
    return EXIT_OK if not failed else EXIT_FAIL


def _run_sessions(cfg: CliConfig) -> list[SessionReport]:
    ids = range(cfg.run.sessions)
    one = lambda i: run_session(cfg.session, cfg.attack, i)  # noqa: E731
    if cfg.run.parallel and cfg.run.sessions > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.run.sessions, os.cpu_count() or 1)) as pool:
            return list(pool.map(one, ids))
    return [one(i) for i in ids]


def _oracle_rate(cfg: CliConfig) -> float:
    def w(role_op, weights):
        return weights[GATES.index(role_op)]

    if cfg.session.forced_ops is not None:
        return detection_probability_oracle(cfg.attack, cfg.session.forced_ops)
    wts = cfg.session.op_weights
    return sum(w(p.alice_op, wts) * w(p.bob_op, wts) * detection_probability_oracle(cfg.attack, p) for p in ALL_PAIRS)


def _aggregate_row(cfg: CliConfig, reports: list[SessionReport]) -> dict:
    row = aggregate(reports).flat()
    row["mean_raw_bits"] = sum(r.raw_bits for r in reports) / len(reports)
    row["mean_final_bits"] = sum(r.final_bits for r in reports) / len(reports)
    if cfg.run.exact_oracle:
        row["oracle_detection_rate"] = _oracle_rate(cfg)
    return row


def _write_table(rows: list[dict], fmt: str, out: TextIO, kind: str) -> None:
    if fmt == "jsonl":
        for row in rows:
            out.write(_dumps(row) + "\n")
    elif fmt == "csv":
        keys: list[str] = []
        for row in rows:
            keys += [k for k in row if k not in keys]
        w = csv.DictWriter(out, fieldnames=keys, restval="", lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    else:
        for row in rows:
            out.write(f"[{row.get('type', kind)}]\n")
            for k, v in row.items():
                if k != "type":
                    out.write(f"  {k:<28} {v}\n")


def cmd_run(cfg: CliConfig, out: TextIO, transcript: TextIO | None = None) -> int:
    reports = _run_sessions(cfg)
    rows = [{"type": "session", **r.summary()} for r in reports]
    rows.append({"type": "aggregate", **_aggregate_row(cfg, reports)})
    _write_table(rows, cfg.output.format, out, "session")
    if transcript is not None:
        for r in reports:
            for rec in r.transcript:
                transcript.write(_dumps({"session_id": r.session_id, **rec.to_json()}) + "\n")
    return EXIT_OK


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def cmd_sweep(cfg: CliConfig, parameter: str, values: Sequence, out: TextIO, base_dir: Path | None = None) -> int:
    if parameter not in SWEEP_PARAMS and not parameter.startswith("attack."):
        raise ConfigError(f"cannot sweep '{parameter}'; choose one of {SWEEP_PARAMS} or an attack.* key")
    if parameter == "attack.tag":
        raise ConfigError("sweep over attack.tag is not supported; sweep attack parameters instead")
    if not values:
        raise ConfigError("sweep needs at least one value")
    configs = [parse_config(set_dotted(cfg.raw, parameter, v), base_dir) for v in values]
    rows = []
    for v, c in zip(values, configs):
        reports = _run_sessions(c)
        rows.append({"parameter": parameter, "value": _dumps(v), **_aggregate_row(c, reports)})
    _write_table(rows, cfg.output.format, out, "sweep")
    return EXIT_OK


def cmd_attack_analyze(cfg: CliConfig, out: TextIO, random_sweep: int = 0) -> int:
    attack = cfg.attack
    if not isinstance(attack, Collective):
        raise ConfigError(f"attack-analyze needs attack.tag = collective or parity_learning, got {attack.tag!r}")
    leak = ancilla_key_leakage(attack, cfg.session)
    check = zero_detection_constraints_satisfied(attack)
    rows = [
        {
            "type": "analysis",
            "attack": attack.label,
            "d_e1": attack.d_e1,
            "d_e2": attack.d_e2,
            "detection_rate": leak.detection_rate,
            "trace_distance": leak.trace_distance,
            "key_mismatch_rate": leak.key_mismatch_rate,
            "zero_detection": check.satisfied,
            "max_violation": check.max_violation,
            **{f"oracle {p}": detection_probability_oracle(attack, p) for p in ALL_PAIRS},
        }
    ]
    status = EXIT_OK
    if random_sweep:
        rng = Rng(cfg.session.master_seed).derive("attack_sweep")
        counterexamples = 0
        for i in range(random_sweep):
            a = haar_collective(rng, attack.d_e1, attack.d_e2)
            res = ancilla_key_leakage(a, cfg.session)
            bad = res.detection_rate <= 1e-9 and res.trace_distance >= 1e-6
            counterexamples += bad
            rows.append({"type": "random_attack", "draw": i, "detection_rate": res.detection_rate, "trace_distance": res.trace_distance, "counterexample": bad})
        rows.append({"type": "sweep_summary", "draws": random_sweep, "counterexamples": counterexamples})
        if counterexamples:
            status = EXIT_FAIL
    _write_table(rows, cfg.output.format, out, "analysis")
    return status


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="TOML config file (see lmqkd.config for keys)")
    common.add_argument("--seed", type=int, help="override session.master_seed")
    common.add_argument("--output", help="output path, '-' for stdout (default: output.path or stdout)")
    common.add_argument("--format", choices=FORMATS, help="output format (default: output.format or jsonl)")
    common.add_argument("--sessions", type=int, help="override run.sessions")
    common.add_argument("--parallel", action="store_true", default=None, help="run sessions on worker threads")

    p = argparse.ArgumentParser(prog="lmqkd", description="Lightweight mediated QKD simulator")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("verify-tables", help="derive the transition tables and compare with the golden copies")
    run = sub.add_parser("run", parents=[common], help="run sessions and report statistics")
    run.add_argument("--transcript", help="also write per-pair records (JSONL) to this path")
    sw = sub.add_parser("sweep", parents=[common], help="aggregate statistics for each value of one parameter")
    sw.add_argument("--param", required=True, help=f"one of {', '.join(SWEEP_PARAMS)} or attack.<key>")
    sw.add_argument("--values", nargs="*", default=[], help="values, each parsed as JSON (e.g. 90 900 '[1,0,0]')")
    an = sub.add_parser("attack-analyze", parents=[common], help="exact detection/leakage analysis of a collective attack")
    an.add_argument("--random-sweep", type=int, default=0, metavar="K", help="also analyse K Haar-random attacks of the same dimensions")
    return p


def _load(args) -> CliConfig:
    raw = load_raw(args.config)
    if args.seed is not None:
        raw = set_dotted(raw, "session.master_seed", args.seed)
    if args.sessions is not None:
        raw = set_dotted(raw, "run.sessions", args.sessions)
    if args.parallel:
        raw = set_dotted(raw, "run.parallel", True)
    if args.format is not None:
        raw = set_dotted(raw, "output.format", args.format)
    if args.output is not None:
        raw = set_dotted(raw, "output.path", args.output)
    return parse_config(raw, Path(args.config).resolve().parent)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "verify-tables":
        return cmd_verify_tables()
    try:
        cfg = _load(args)
        if args.command == "sweep" and "format" not in cfg.raw.get("output", {}):
            cfg = replace(cfg, output=replace(cfg.output, format="csv"))
        buf = io.StringIO()
        transcript = io.StringIO() if getattr(args, "transcript", None) else None
        if args.command == "run":
            code = cmd_run(cfg, buf, transcript)
        elif args.command == "sweep":
            code = cmd_sweep(cfg, args.param, [_parse_value(v) for v in args.values], buf, Path(args.config).resolve().parent)
        else:
            code = cmd_attack_analyze(cfg, buf, args.random_sweep)
    except ConfigError as exc:
        print(f"lmqkd: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.output.path == "-":
        sys.stdout.write(buf.getvalue())
    else:
        Path(cfg.output.path).write_text(buf.getvalue())
    if transcript is not None:
        Path(args.transcript).write_text(transcript.getvalue())
    return code


if __name__ == "__main__":
    sys.exit(main())
