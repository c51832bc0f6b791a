"""Command-line front end.

    proxeval synth     --scenario S --store DIR              synthesize triples into a store
    proxeval simulate  --scenario S --store DIR [--faults F] [--live-port P]
    proxeval ingest    --input FILE [--format jsonl|csv] --store DIR
    proxeval export    --store DIR --output FILE [--format jsonl|csv]
    proxeval evaluate  --store DIR [--out DIR] [--sensors ...] [--metrics ...]
    proxeval report    --out DIR

Errors go to stderr as a single line ``proxeval: error: <Kind>: <message>``
with exit status 1 (2 for usage errors).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import harness
from .evaluation import EVALUATIONS, evaluate
from .persistence import (ParseError, RecordStore, StoreError, export_csv, export_jsonl,
                          ingest_external, join_all, join_triples)
from .reporting import (NothingToReport, render_breakdown_table, render_eer_table,
                        render_report, summary_row, write_bundle)
from .similarity import SimilarityMetric
from .synth import ConfigError, generate_dataset, load_scenario, paper_like_scenario
from .trace_model import SensorKind

log = logging.getLogger("proxeval")

OUT_ENV = "PROXEVAL_OUT"
DEFAULT_OUT_ROOT = "proxeval-out"


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass
class RunConfig:
    command: str
    scenario: Optional[Path] = None
    store: Optional[Path] = None
    sensors: Optional[list] = None
    metrics: list = field(default_factory=lambda: list(SimilarityMetric))
    evals: list = field(default_factory=lambda: list(EVALUATIONS))
    recording_ms: float = 500.0
    seed: Optional[int] = None
    out: Optional[Path] = None
    live_port: Optional[int] = None
    faults: Optional[Path] = None
    n_transactions: Optional[int] = None

    def __post_init__(self):
        if self.recording_ms <= 0:
            raise CliError("ConfigError", "--recording-ms must be > 0")


def _split_list(text: Optional[str]) -> Optional[list[str]]:
    if text is None:
        return None
    return [t.strip() for t in text.split(",") if t.strip()]


def _config(args) -> RunConfig:
    try:
        sensors = _split_list(getattr(args, "sensors", None))
        metrics = _split_list(getattr(args, "metrics", None))
        evals = _split_list(getattr(args, "evals", None))
        cfg = RunConfig(
            command=args.command,
            scenario=Path(args.scenario) if getattr(args, "scenario", None) else None,
            store=Path(args.store) if getattr(args, "store", None) else None,
            sensors=[SensorKind.parse(s) for s in sensors] if sensors else None,
            recording_ms=getattr(args, "recording_ms", 500.0),
            seed=getattr(args, "seed", None),
            out=Path(args.out) if getattr(args, "out", None) else None,
            live_port=getattr(args, "live_port", None),
            faults=Path(args.faults) if getattr(args, "faults", None) else None,
            n_transactions=getattr(args, "n_transactions", None),
        )
        if metrics:
            cfg.metrics = [SimilarityMetric.parse(m) for m in metrics]
        if evals:
            bad = [e for e in evals if e not in EVALUATIONS]
            if bad:
                raise CliError("ConfigError", f"unknown evaluation {bad[0]!r} (expected eval1, eval2)")
            cfg.evals = evals
    except ValueError as exc:
        raise CliError("ConfigError", str(exc)) from None
    return cfg


def _scenario(cfg: RunConfig):
    scenario = load_scenario(cfg.scenario) if cfg.scenario else paper_like_scenario()
    changes = {}
    if cfg.seed is not None:
        changes["seed"] = cfg.seed
    if cfg.sensors:
        changes["sensors"] = tuple(cfg.sensors)
    if cfg.n_transactions is not None:
        changes["n_transactions"] = cfg.n_transactions
    if cfg.command == "synth":
        changes["duration_ms"] = cfg.recording_ms
    return scenario.replace(**changes) if changes else scenario


def _fresh_store(path: Optional[Path]) -> RecordStore:
    if path is None:
        raise CliError("ConfigError", "--store is required")
    if path.exists() and any(path.iterdir()):
        raise CliError("IoError", f"store directory is not empty: {path}")
    return RecordStore(path)


def _open_store(path: Optional[Path]) -> RecordStore:
    if path is None:
        raise CliError("ConfigError", "--store is required")
    if not path.is_dir():
        raise CliError("IoError", f"store directory not found: {path}")
    return RecordStore(path)


def _out_dir(cfg: RunConfig) -> Path:
    if cfg.out is not None:
        return cfg.out
    root = Path(os.environ.get(OUT_ENV, DEFAULT_OUT_ROOT))
    if cfg.store is None:
        raise CliError("ConfigError", f"--out is required (or --store with ${OUT_ENV})")
    return root / f"eval-{cfg.store.resolve().name}"


def cmd_synth(cfg: RunConfig) -> int:
    scenario = _scenario(cfg)
    store = _fresh_store(cfg.store)
    triples = generate_dataset(scenario)
    for t in triples:
        for tr in (t.tt, t.ti, t.dti):
            store.append(tr)
    per = Counter((t.sensor.label, t.location) for t in triples)
    print(f"wrote {len(triples)} transactions to {cfg.store}")
    for (sensor, location), n in sorted(per.items()):
        print(f"  {sensor:<20} {location:<14} {n}")
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    scenario = _scenario(cfg)
    store = _fresh_store(cfg.store)
    faults = harness.load_fault_schedule(cfg.faults) if cfg.faults else {}
    if cfg.live_port is not None:
        testbed = harness.live_mode_bind(cfg.live_port, scenario, store)
    else:
        testbed = harness.emulated_testbed(scenario, store)
    with testbed:
        harness.run_session(testbed, scenario.sensors, scenario.n_transactions,
                            cfg.recording_ms, faults)
    s = harness.summarize(testbed.outcomes)
    mode = f"live (port {testbed.channel.port})" if cfg.live_port is not None else "emulated"
    print(f"{mode} session: attempted={s.attempted} stored={s.stored} "
          f"discarded_inconsistent={s.discarded_inconsistent} "
          f"discarded_incomplete={s.discarded_incomplete}")
    for sensor in scenario.sensors:
        print(f"  {sensor.label:<20} joinable triples: {len(join_triples(store, sensor))}")
    return 0


def cmd_ingest(cfg: RunConfig, input_path: str, fmt: Optional[str]) -> int:
    store = _fresh_store(cfg.store)
    ingest_external(input_path, fmt, store)
    print(f"ingested {len(store)} traces into {cfg.store}")
    return 0


def cmd_export(cfg: RunConfig, output: str, fmt: Optional[str]) -> int:
    store = _open_store(cfg.store)
    fmt = (fmt or Path(output).suffix.lstrip(".") or "jsonl").lower()
    n = export_csv(store, output) if fmt == "csv" else export_jsonl(store, output)
    print(f"exported {n} traces to {output}")
    return 0


def cmd_evaluate(cfg: RunConfig) -> int:
    store = _open_store(cfg.store)
    sensors = cfg.sensors or store.sensors()
    triples = join_all(store, sensors)
    records = []
    for ev in cfg.evals:
        for sensor in sensors:
            for metric in cfg.metrics:
                records.append(evaluate(triples, sensor, metric, ev))
    out = write_bundle(records, _out_dir(cfg))
    for ev in cfg.evals:
        rows = [summary_row(r) for r in records if r.evaluation == ev and r.result is not None]
        print(render_eer_table(rows, f"{ev}: optimum thresholds and EERs"))
        print()
        if ev == "eval2":
            print(render_breakdown_table(rows, f"{ev}: TP/TN/FP/FN at the optimum threshold"))
            print()
    for r in records:
        if r.error:
            print(f"skipped {r.evaluation} {r.sensor.label} {r.metric.value}: {r.error}")
    print(f"results written to {out}")
    return 0


def cmd_report(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    if not out.is_dir():
        raise CliError("IoError", f"evaluation directory not found: {out}")
    try:
        sys.stdout.write(render_report(out))
    except NothingToReport as exc:
        raise CliError("NothingToReport", str(exc)) from None
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proxeval",
                                description="Ambient-sensor proximity and relay-attack evaluation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario=False, store=True):
        if scenario:
            sp.add_argument("--scenario", help="scenario JSON (default: shipped paper-like scenario)")
            sp.add_argument("--seed", type=int)
            sp.add_argument("--n-transactions", type=int, help="transactions per sensor")
        if store:
            sp.add_argument("--store", help="record store directory")
        sp.add_argument("--sensors", help="comma-separated sensor names")
        sp.add_argument("--recording-ms", type=float, default=500.0)

    sp = sub.add_parser("synth", help="generate a synthetic dataset into a store")
    common(sp, scenario=True)

    sp = sub.add_parser("simulate", help="run the three-device protocol harness")
    common(sp, scenario=True)
    sp.add_argument("--faults", help="fault schedule CSV (index,fault)")
    sp.add_argument("--live-port", type=int, help="run over loopback UDP with DTI on this port")

    sp = sub.add_parser("ingest", help="load an external jsonl/csv dataset into a store")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", choices=["jsonl", "csv"])

    sp = sub.add_parser("export", help="write a store as one jsonl/csv file")
    common(sp)
    sp.add_argument("--output", required=True)
    sp.add_argument("--format", choices=["jsonl", "csv"])

    sp = sub.add_parser("evaluate", help="run Evaluation 1 and 2 on a store")
    common(sp)
    sp.add_argument("--metrics", help="comma-separated: MAE,corr")
    sp.add_argument("--evals", help="comma-separated: eval1,eval2")
    sp.add_argument("--out", help=f"output directory (default: ${OUT_ENV}/eval-<store>)")

    sp = sub.add_parser("report", help="render tables from an evaluation directory")
    sp.add_argument("--out", help="evaluation output directory")
    sp.add_argument("--store", help="store whose default output directory to read")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if cfg.command == "synth":
            return cmd_synth(cfg)
        if cfg.command == "simulate":
            return cmd_simulate(cfg)
        if cfg.command == "ingest":
            return cmd_ingest(cfg, args.input, args.format)
        if cfg.command == "export":
            return cmd_export(cfg, args.output, args.format)
        if cfg.command == "evaluate":
            return cmd_evaluate(cfg)
        return cmd_report(cfg)
    except CliError as exc:
        kind, msg = exc.kind, str(exc)
    except ConfigError as exc:
        kind, msg = "ConfigError", str(exc)
    except (ParseError, StoreError, harness.HarnessError) as exc:
        kind, msg = type(exc).__name__, str(exc)
    except OSError as exc:
        kind, msg = "IoError", f"{exc.strerror or exc}: {exc.filename}" if exc.filename else str(exc)
    print(f"proxeval: error: {kind}: {' '.join(msg.split())}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
