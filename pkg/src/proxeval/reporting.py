"""Evaluation output bundles and plain-text result tables.

Bundle layout (one directory per run)::

    summary_eval1.csv, summary_eval2.csv   sensor,metric,optimum_threshold,eer,tp,tn,fp,fn
    curves/<sensor>_<metric>_<eval>.csv    threshold,fpr,fnr
    diagnostics.txt                        tab-separated exclusion bookkeeping
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .evaluation import ConfusionCounts, EvaluationRecord, SweepResult
from .similarity import SimilarityMetric
from .trace_model import SensorKind

SUMMARY_FIELDS = ["sensor", "metric", "optimum_threshold", "eer", "tp", "tn", "fp", "fn"]
CURVE_FIELDS = ["threshold", "fpr", "fnr"]
DIAG_FIELDS = ["eval", "sensor", "metric", "transactions", "attempted", "scored", "excluded",
               "too_few_samples", "degenerate", "positives", "negatives", "status"]
EVALS = ("eval1", "eval2")


@dataclass(frozen=True)
class SummaryRow:
    sensor: SensorKind
    metric: SimilarityMetric
    optimum_threshold: float
    eer: float
    counts: ConfusionCounts


def _num(x: float) -> str:
    return repr(float(x))


def curve_path(out: Path, sensor: SensorKind, metric: SimilarityMetric, evaluation: str) -> Path:
    return Path(out) / "curves" / f"{sensor.slug}_{metric.value.lower()}_{evaluation}.csv"


def write_curve(result: SweepResult, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_FIELDS)
        for t, a, b in zip(result.thresholds, result.fpr, result.fnr):
            w.writerow([_num(t), _num(a), _num(b)])


def read_curve(path: Union[str, Path]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CURVE_FIELDS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = np.array([[float(x) for x in row] for row in reader if row], dtype=float)
    return rows[:, 0], rows[:, 1], rows[:, 2]


def write_summary(rows: Iterable[SummaryRow], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            c = r.counts
            w.writerow([r.sensor.label, r.metric.value, _num(r.optimum_threshold), _num(r.eer),
                        c.tp, c.tn, c.fp, c.fn])


def read_summary(path: Union[str, Path]) -> list[SummaryRow]:
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_FIELDS:
            raise ValueError(f"{path}: header must be {','.join(SUMMARY_FIELDS)}")
        for rec in reader:
            out.append(SummaryRow(
                SensorKind.parse(rec["sensor"]), SimilarityMetric.parse(rec["metric"]),
                float(rec["optimum_threshold"]), float(rec["eer"]),
                ConfusionCounts(int(rec["tp"]), int(rec["tn"]), int(rec["fp"]), int(rec["fn"])),
            ))
    return out


def summary_row(rec: EvaluationRecord) -> SummaryRow:
    r = rec.result
    return SummaryRow(rec.sensor, rec.metric, r.optimum_threshold, r.eer, r.counts_at_optimum)


def diagnostics_rows(records: Sequence[EvaluationRecord]) -> list[dict]:
    rows = []
    for rec in records:
        e = rec.exclusions
        res = rec.result
        rows.append({
            "eval": rec.evaluation, "sensor": rec.sensor.label, "metric": rec.metric.value,
            "transactions": rec.n_transactions, "attempted": e.attempted, "scored": e.scored,
            "excluded": e.excluded, "too_few_samples": e.too_few_samples, "degenerate": e.degenerate,
            "positives": res.n_positive if res else 0, "negatives": res.n_negative if res else 0,
            "status": "ok" if rec.error is None else rec.error.replace("\t", " "),
        })
    return rows


def write_diagnostics(records: Sequence[EvaluationRecord], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=DIAG_FIELDS, delimiter="\t", lineterminator="\n")
        w.writeheader()
        w.writerows(diagnostics_rows(records))


def read_diagnostics(path: Union[str, Path]) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def write_bundle(records: Sequence[EvaluationRecord], out: Union[str, Path]) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for ev in EVALS:
        done = [r for r in records if r.evaluation == ev and r.result is not None]
        if not any(r.evaluation == ev for r in records):
            continue
        write_summary([summary_row(r) for r in done], out / f"summary_{ev}.csv")
        for r in done:
            write_curve(r.result, curve_path(out, r.sensor, r.metric, ev))
    write_diagnostics(records, out / "diagnostics.txt")
    return out


# ---------------------------------------------------------------------------
# text rendering
# ---------------------------------------------------------------------------

def format_threshold(x: float) -> str:
    """Threshold formatting used in the tables: 88.12, 0.389, 3.02e-08."""
    if x == 0:
        return "0.000"
    a = abs(x)
    if a >= 1:
        return f"{x:.4g}"
    if a >= 1e-3:
        return f"{x:.3f}"
    return f"{x:.2e}"


def format_rate(x: float) -> str:
    return f"{x:.3f}"


def _numeric(cell) -> bool:
    try:
        float(cell)
    except ValueError:
        return cell == "-"
    return True


def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Plain aligned columns: numbers right-justified, text left-justified."""
    cols = list(zip(header, *rows))
    widths = [max(len(str(c)) for c in col) for col in cols]
    right = [k > 0 and bool(rows) and all(_numeric(str(c)) for c in col[1:]) for k, col in enumerate(cols)]
    lines = []
    for k, row in enumerate([header, *rows]):
        cells = [str(c).rjust(w) if r else str(c).ljust(w) for c, w, r in zip(row, widths, right)]
        lines.append("  ".join(cells).rstrip())
        if k == 0:
            lines.append("-" * len(lines[0]))
    return "\n".join(lines)


def _by_sensor(rows: Iterable[SummaryRow]) -> dict:
    table: dict = {}
    for r in rows:
        table.setdefault(r.sensor, {})[r.metric] = r
    return {s: table[s] for s in SensorKind if s in table}


def render_eer_table(rows: Iterable[SummaryRow], title: str = "") -> str:
    """Optimum thresholds and EERs, one line per sensor, MAE then correlation."""
    header = ["Sensor", "Threshold_MAE", "EER_MAE", "Threshold_corr", "EER_corr"]
    body = []
    for sensor, per in _by_sensor(rows).items():
        line = [sensor.label]
        for m in (SimilarityMetric.MAE, SimilarityMetric.PEARSON):
            r = per.get(m)
            line += [format_threshold(r.optimum_threshold), format_rate(r.eer)] if r else ["-", "-"]
        body.append(line)
    text = _table(header, body)
    return f"{title}\n{text}" if title else text


def render_breakdown_table(rows: Iterable[SummaryRow], title: str = "") -> str:
    """TP/TN/FP/FN at the optimum threshold, MAE block then correlation block."""
    header = ["Sensor", "MAE TPs", "TNs", "FPs", "FNs", "Corr TPs", "TNs", "FPs", "FNs"]
    body = []
    for sensor, per in _by_sensor(rows).items():
        line = [sensor.label]
        for m in (SimilarityMetric.MAE, SimilarityMetric.PEARSON):
            r = per.get(m)
            line += [str(r.counts.tp), str(r.counts.tn), str(r.counts.fp), str(r.counts.fn)] if r else ["-"] * 4
        body.append(line)
    text = _table(header, body)
    return f"{title}\n{text}" if title else text


def conservation_lines(rows: Iterable[SummaryRow], evaluation: str,
                       diagnostics: Optional[Sequence[dict]] = None) -> list[str]:
    """One label-conservation check per (sensor, metric): tp+fn and tn+fp vs scored label totals."""
    expected = {}
    for d in diagnostics or ():
        if d["eval"] == evaluation:
            expected[(d["sensor"], d["metric"])] = (int(d["positives"]), int(d["negatives"]))
    out = []
    for r in rows:
        c = r.counts
        line = f"{evaluation} {r.sensor.label} {r.metric.value}: tp+fn={c.positives} tn+fp={c.negatives}"
        exp = expected.get((r.sensor.label, r.metric.value))
        if exp is not None:
            ok = (c.positives, c.negatives) == exp
            line += f" expected={exp[0]}/{exp[1]} {'ok' if ok else 'MISMATCH'}"
        out.append(line)
    return out


def render_diagnostics(diagnostics: Sequence[dict]) -> str:
    header = ["Eval", "Sensor", "Metric", "Attempted", "Scored", "Excluded", "TooFew", "Degenerate", "Status"]
    body = [[d["eval"], d["sensor"], d["metric"], d["attempted"], d["scored"], d["excluded"],
             d["too_few_samples"], d["degenerate"], d["status"]] for d in diagnostics]
    return _table(header, body)


class NothingToReport(Exception):
    pass


def render_report(out: Union[str, Path]) -> str:
    out = Path(out)
    summaries = {ev: read_summary(out / f"summary_{ev}.csv") for ev in EVALS
                 if (out / f"summary_{ev}.csv").exists()}
    diag_path = out / "diagnostics.txt"
    diagnostics = read_diagnostics(diag_path) if diag_path.exists() else None
    if not summaries and not diagnostics:
        raise NothingToReport(f"nothing to report in {out}")
    parts = []
    names = {"eval1": "Evaluation 1 (proximity detection)", "eval2": "Evaluation 2 (relay inclusion)"}
    for ev, rows in summaries.items():
        parts.append(render_eer_table(rows, f"Optimum thresholds and EERs, {names[ev]}"))
        parts.append(render_breakdown_table(rows, f"TP/TN/FP/FN at the optimum threshold, {names[ev]}"))
        parts.append("Label conservation\n" + "\n".join(conservation_lines(rows, ev, diagnostics)))
    if diagnostics:
        parts.append("Exclusion diagnostics\n" + render_diagnostics(diagnostics))
    return "\n\n".join(parts) + "\n"
