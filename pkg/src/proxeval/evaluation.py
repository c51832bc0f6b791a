"""Pair scoring for both evaluations, threshold sweep and EER extraction.

Evaluation 1 scores every (TI_i, TT_j) pair of the |T| x |T| matrix, with
i == j as the genuine matches. Evaluation 2 scores (TI_i, TT_i) as genuine
against (DTI_i, TT_i) as relay pairs.

Scored pairs are kept columnar (``ScoredPairs``) because Evaluation 1 on
1000 transactions yields a million pairs. Iterating a ``ScoredPairs`` yields
``ScoredPair`` objects.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .preprocess import GRID_STEP_MS, WINDOW_MS, prepare, preprocess_pair, TooFewSamples
from .similarity import (DegenerateSeries, SimilarityMetric, SimilarityScore, score)
from .trace_model import DeviceRole, SensorKind, SensorTrace, TransactionTriple

log = logging.getLogger(__name__)

N_THRESHOLDS = 100
_CHUNK_PAIRS = 20_000


class InsufficientData(ValueError):
    pass


class DegenerateLabels(ValueError):
    """Sweep input holds only positive or only negative pairs."""


class Label(enum.IntEnum):
    GENUINE = 0  # (TI_i, TT_i)
    NON_MATCH = 1  # (TI_i, TT_j), i != j; Evaluation 1 only
    RELAY = 2  # (DTI_i, TT_i); Evaluation 2 only

    @property
    def positive(self) -> bool:
        return self is Label.GENUINE


@dataclass(frozen=True)
class ScoredPair:
    score: SimilarityScore
    label: Label

    @property
    def positive(self) -> bool:
        return self.label.positive


@dataclass
class Exclusions:
    attempted: int = 0
    too_few_samples: int = 0
    degenerate: int = 0

    @property
    def excluded(self) -> int:
        return self.too_few_samples + self.degenerate

    @property
    def scored(self) -> int:
        return self.attempted - self.excluded


@dataclass(frozen=True, eq=False)
class ScoredPairs:
    """Columnar scored-pair set.

    ``left`` indexes the TI/DTI side and ``right`` the TT side, both into
    ``transaction_ids``.
    """

    metric: SimilarityMetric
    scores: np.ndarray
    labels: np.ndarray
    left: np.ndarray
    right: np.ndarray
    transaction_ids: tuple = ()
    exclusions: Exclusions = field(default_factory=Exclusions)

    def __len__(self) -> int:
        return int(self.scores.shape[0])

    @property
    def positive(self) -> np.ndarray:
        return self.labels == Label.GENUINE

    def __iter__(self) -> Iterator[ScoredPair]:
        left_role = DeviceRole.TI
        for s, lab, i, j in zip(self.scores, self.labels, self.left, self.right):
            lab = Label(int(lab))
            ids = self.transaction_ids
            pair = None
            if ids:
                role = DeviceRole.DTI if lab is Label.RELAY else left_role
                pair = ((ids[i], role), (ids[j], DeviceRole.TT))
            yield ScoredPair(SimilarityScore(self.metric, float(s), pair), lab)

    def relabel(self, mapping: dict) -> "ScoredPairs":
        labels = self.labels.copy()
        for src, dst in mapping.items():
            labels[self.labels == src] = dst
        return ScoredPairs(self.metric, self.scores, labels, self.left, self.right,
                           self.transaction_ids, self.exclusions)

    @classmethod
    def from_pairs(cls, pairs: Iterable[ScoredPair],
                   metric: Optional[SimilarityMetric] = None) -> "ScoredPairs":
        pairs = list(pairs)
        if metric is None:
            if not pairs:
                raise ValueError("cannot infer metric from an empty pair list")
            metric = pairs[0].score.metric
        n = len(pairs)
        idx = np.arange(n)
        return cls(
            SimilarityMetric.parse(metric),
            np.array([p.score.value for p in pairs], dtype=float),
            np.array([int(p.label) for p in pairs], dtype=np.int8),
            idx, idx,
        )


def _as_scored(scored, metric=None) -> ScoredPairs:
    if isinstance(scored, ScoredPairs):
        return scored
    return ScoredPairs.from_pairs(scored, metric)


# ---------------------------------------------------------------------------
# vectorised preprocessing + scoring
# ---------------------------------------------------------------------------

class _Prepared:
    """Per-trace data from which any pair's preprocessed series can be read.

    Cross-truncating two traces to their common end and then resampling gives
    a prefix of each trace's own full resampled series: the closing sample
    lies on the trace's interpolant, and the grid stops at the common end.
    So each trace is resampled once, and a pair only needs its prefix length.
    """

    def __init__(self, traces: Sequence[SensorTrace], limit_ms: float = WINDOW_MS):
        n = len(traces)
        prepared = [prepare(tr, limit_ms) for tr in traces]
        counts = np.array([len(p) for p in prepared], dtype=int)
        width = max(1, counts.max(initial=0))
        self.t = np.full((n, width), np.inf)
        self.last = np.full(n, -np.inf)
        for k, p in enumerate(prepared):
            self.t[k, : len(p)] = p.t_ms
            if len(p):
                self.last[k] = p.t_ms[-1]
        with np.errstate(invalid="ignore"):
            full_len = np.where(counts > 0, np.floor(self.last / GRID_STEP_MS) + 1, 0).astype(int)
        self.valid = (counts >= 2) & (full_len >= 2)
        g = max(1, full_len.max(initial=0))
        self.series = np.zeros((n, g))
        run_max = np.zeros((n, g))
        run_min = np.zeros((n, g))
        grid = np.arange(g) * GRID_STEP_MS
        for k, p in enumerate(prepared):
            if not self.valid[k]:
                continue
            m = full_len[k]
            vals = np.interp(grid[:m], p.t_ms, p.values)
            self.series[k, :m] = vals
            self.series[k, m:] = vals[-1]
            run_max[k] = np.maximum.accumulate(self.series[k])
            run_min[k] = np.minimum.accumulate(self.series[k])
        self.const_prefix = run_max == run_min


def _score_index_pairs(a: _Prepared, b: _Prepared, ia: np.ndarray, jb: np.ndarray,
                       metric: SimilarityMetric):
    """Score pairs (a[ia[k]], b[jb[k]]); returns scores and the two exclusion masks."""
    m = ia.shape[0]
    scores = np.full(m, np.nan)
    too_few = np.zeros(m, dtype=bool)
    degenerate = np.zeros(m, dtype=bool)
    for lo in range(0, m, _CHUNK_PAIRS):
        hi = min(m, lo + _CHUNK_PAIRS)
        ii, jj = ia[lo:hi], jb[lo:hi]
        end = np.minimum(a.last[ii], b.last[jj])
        ka = (a.t[ii] <= end[:, None]).sum(axis=1)
        kb = (b.t[jj] <= end[:, None]).sum(axis=1)
        # a side cut short of its own end gains a closing sample at the common end
        ca = ka + ((ka > 0) & (a.last[ii] > end))
        cb = kb + ((kb > 0) & (b.last[jj] > end))
        ok = a.valid[ii] & b.valid[jj] & (ka > 0) & (kb > 0) & (ca >= 2) & (cb >= 2)
        with np.errstate(invalid="ignore"):
            n = np.where(ok, np.floor(end / GRID_STEP_MS) + 1, 0).astype(int)
        ok &= n >= 2
        too_few[lo:hi] = ~ok

        g = min(a.series.shape[1], b.series.shape[1])
        ua = a.series[ii, :g]
        ub = b.series[jj, :g]
        n = np.clip(n, 1, g)
        mask = np.arange(g)[None, :] < n[:, None]
        nf = n.astype(float)
        if metric is SimilarityMetric.MAE:
            s = np.where(mask, np.abs(ua - ub), 0.0).sum(axis=1) / nf
        else:
            const = a.const_prefix[ii, n - 1] | b.const_prefix[jj, n - 1]
            deg = ok & const
            degenerate[lo:hi] = deg
            ok &= ~const
            mu_a = np.where(mask, ua, 0.0).sum(axis=1) / nf
            mu_b = np.where(mask, ub, 0.0).sum(axis=1) / nf
            da = np.where(mask, ua - mu_a[:, None], 0.0)
            db = np.where(mask, ub - mu_b[:, None], 0.0)
            cov = (da * db).sum(axis=1) / nf
            sa = np.sqrt((da * da).sum(axis=1) / nf)
            sb = np.sqrt((db * db).sum(axis=1) / nf)
            denom = sa * sb
            zero = ok & (denom == 0)
            degenerate[lo:hi] |= zero
            ok &= ~zero
            with np.errstate(invalid="ignore", divide="ignore"):
                s = np.clip(cov / denom, -1.0, 1.0)
        scores[lo:hi] = np.where(ok, s, np.nan)
    return scores, too_few, degenerate


def _select(triples: Sequence[TransactionTriple], sensor) -> list[TransactionTriple]:
    if sensor is None:
        return list(triples)
    sensor = SensorKind.parse(sensor)
    return [t for t in triples if t.sensor is sensor]


def _assemble(metric, scores, too_few, degenerate, labels, left, right, ids) -> ScoredPairs:
    keep = ~(too_few | degenerate)
    exc = Exclusions(attempted=int(scores.shape[0]), too_few_samples=int(too_few.sum()),
                     degenerate=int(degenerate.sum()))
    if exc.excluded:
        log.debug("%s: excluded %d of %d pairs (%d too few samples, %d degenerate)",
                  metric, exc.excluded, exc.attempted, exc.too_few_samples, exc.degenerate)
    return ScoredPairs(metric, scores[keep], labels[keep].astype(np.int8),
                       left[keep], right[keep], tuple(ids), exc)


def _check(triples, a: _Prepared, b: _Prepared, what: str):
    usable = int((a.valid & b.valid).sum())
    if len(triples) < 2 or usable < 2:
        raise InsufficientData(f"{what} needs at least 2 preprocessable triples, "
                               f"got {usable} of {len(triples)}")


def score_eval1(triples: Sequence[TransactionTriple], sensor, metric,
                limit_ms: float = WINDOW_MS) -> ScoredPairs:
    metric = SimilarityMetric.parse(metric)
    triples = _select(triples, sensor)
    ti = _Prepared([t.ti for t in triples], limit_ms)
    tt = _Prepared([t.tt for t in triples], limit_ms)
    _check(triples, ti, tt, "evaluation 1")
    n = len(triples)
    ia = np.repeat(np.arange(n), n)
    jb = np.tile(np.arange(n), n)
    scores, too_few, deg = _score_index_pairs(ti, tt, ia, jb, metric)
    labels = np.where(ia == jb, Label.GENUINE, Label.NON_MATCH)
    return _assemble(metric, scores, too_few, deg, labels, ia, jb,
                     [t.transaction_id for t in triples])


def score_eval2(triples: Sequence[TransactionTriple], sensor, metric,
                limit_ms: float = WINDOW_MS) -> ScoredPairs:
    metric = SimilarityMetric.parse(metric)
    triples = _select(triples, sensor)
    ti = _Prepared([t.ti for t in triples], limit_ms)
    dti = _Prepared([t.dti for t in triples], limit_ms)
    tt = _Prepared([t.tt for t in triples], limit_ms)
    _check(triples, ti, tt, "evaluation 2")
    idx = np.arange(len(triples))
    s1, f1, d1 = _score_index_pairs(ti, tt, idx, idx, metric)
    s2, f2, d2 = _score_index_pairs(dti, tt, idx, idx, metric)
    # interleave so pair order follows transactions: genuine_0, relay_0, genuine_1, ...
    scores = np.column_stack([s1, s2]).reshape(-1)
    too_few = np.column_stack([f1, f2]).reshape(-1)
    deg = np.column_stack([d1, d2]).reshape(-1)
    labels = np.tile([Label.GENUINE, Label.RELAY], len(triples))
    pos = np.repeat(idx, 2)
    return _assemble(metric, scores, too_few, deg, labels, pos, pos,
                     [t.transaction_id for t in triples])


def score_pairs_reference(pairs: Iterable[tuple[SensorTrace, SensorTrace, Label]],
                          metric) -> ScoredPairs:
    """Slow per-pair path through ``preprocess_pair`` and the scalar metrics."""
    metric = SimilarityMetric.parse(metric)
    out: list[ScoredPair] = []
    exc = Exclusions()
    for left, right, label in pairs:
        exc.attempted += 1
        try:
            u, v = preprocess_pair(left, right)
        except TooFewSamples:
            exc.too_few_samples += 1
            continue
        try:
            s = score(metric, u, v)
        except DegenerateSeries:
            exc.degenerate += 1
            continue
        out.append(ScoredPair(s, Label(label)))
    res = ScoredPairs.from_pairs(out, metric)
    return ScoredPairs(res.metric, res.scores, res.labels, res.left, res.right, (), exc)


# ---------------------------------------------------------------------------
# threshold sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def positives(self) -> int:
        return self.tp + self.fn

    @property
    def negatives(self) -> int:
        return self.tn + self.fp


@dataclass(frozen=True, eq=False)
class SweepResult:
    metric: SimilarityMetric
    thresholds: np.ndarray
    fpr: np.ndarray
    fnr: np.ndarray
    eer: float
    optimum_threshold: float
    counts_at_optimum: ConfusionCounts
    n_positive: int
    n_negative: int


def _accept_counts(sorted_scores: np.ndarray, thresholds: np.ndarray, is_distance: bool) -> np.ndarray:
    if is_distance:
        return np.searchsorted(sorted_scores, thresholds, side="right")
    return sorted_scores.shape[0] - np.searchsorted(sorted_scores, thresholds, side="left")


def _split(scored: ScoredPairs):
    pos = np.sort(scored.scores[scored.positive])
    neg = np.sort(scored.scores[~scored.positive])
    return pos, neg


def confusion_at(scored, threshold: float, metric=None) -> ConfusionCounts:
    scored = _as_scored(scored, metric)
    metric = SimilarityMetric.parse(metric) if metric is not None else scored.metric
    pos, neg = _split(scored)
    t = np.array([float(threshold)])
    tp = int(_accept_counts(pos, t, metric.is_distance)[0])
    fp = int(_accept_counts(neg, t, metric.is_distance)[0])
    return ConfusionCounts(tp=tp, tn=neg.shape[0] - fp, fp=fp, fn=pos.shape[0] - tp)


def threshold_grid(scores: np.ndarray, metric: SimilarityMetric, n: int = N_THRESHOLDS) -> np.ndarray:
    if metric.is_distance:
        return np.linspace(float(np.min(scores)), float(np.max(scores)), n)
    return np.linspace(-1.0, 1.0, n)


def rates(scored, thresholds, metric=None) -> tuple[np.ndarray, np.ndarray]:
    """FPR and FNR at each threshold."""
    scored = _as_scored(scored, metric)
    metric = SimilarityMetric.parse(metric) if metric is not None else scored.metric
    pos, neg = _split(scored)
    thresholds = np.asarray(thresholds, dtype=float)
    tp = _accept_counts(pos, thresholds, metric.is_distance)
    fp = _accept_counts(neg, thresholds, metric.is_distance)
    tn = neg.shape[0] - fp
    fn = pos.shape[0] - tp
    tpr = tp / (tp + fn)
    tnr = tn / (tn + fp)
    return 1.0 - tnr, 1.0 - tpr


def equal_error_point(thresholds: np.ndarray, fpr: np.ndarray, fnr: np.ndarray) -> tuple[float, float]:
    """Locate the FPR/FNR crossing on a threshold grid.

    A grid point with FPR == FNR is taken as is. Otherwise, among adjacent
    grid points where FPR - FNR changes sign, the pair whose nearer end has
    the smallest |FPR - FNR| is interpolated linearly. With no crossing at
    all, the grid point with the smallest gap gives the mean of the two
    rates. Returns ``(eer, threshold)``.
    """
    d = fpr - fnr
    zero = np.flatnonzero(d == 0)
    if zero.size:
        k = int(zero[0])
        return float(fpr[k]), float(thresholds[k])
    cross = np.flatnonzero(np.sign(d[:-1]) != np.sign(d[1:]))
    if cross.size == 0:
        k = int(np.argmin(np.abs(d)))
        return float((fpr[k] + fnr[k]) / 2), float(thresholds[k])
    near = np.minimum(np.abs(d[cross]), np.abs(d[cross + 1]))
    c = int(cross[np.argmin(near)])
    k, j = (c, c + 1) if abs(d[c]) <= abs(d[c + 1]) else (c + 1, c)
    alpha = d[k] / (d[k] - d[j])
    eer = fpr[k] + alpha * (fpr[j] - fpr[k])
    thr = thresholds[k] + alpha * (thresholds[j] - thresholds[k])
    return float(eer), float(thr)


def sweep(scored, metric=None, n_thresholds: int = N_THRESHOLDS) -> SweepResult:
    scored = _as_scored(scored, metric)
    metric = SimilarityMetric.parse(metric) if metric is not None else scored.metric
    n_pos = int(scored.positive.sum())
    n_neg = len(scored) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels(f"sweep needs both labels, got {n_pos} positive and {n_neg} negative pairs")
    thresholds = threshold_grid(scored.scores, metric, n_thresholds)
    fpr, fnr = rates(scored, thresholds, metric)
    eer, thr = equal_error_point(thresholds, fpr, fnr)
    return SweepResult(metric, thresholds, fpr, fnr, eer, thr,
                       confusion_at(scored, thr, metric), n_pos, n_neg)


def curve_export(result: SweepResult) -> list[tuple[float, float, float]]:
    return [(float(t), float(a), float(b)) for t, a, b in zip(result.thresholds, result.fpr, result.fnr)]


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

EVALUATIONS = {"eval1": score_eval1, "eval2": score_eval2}


@dataclass
class EvaluationRecord:
    evaluation: str
    sensor: SensorKind
    metric: SimilarityMetric
    n_transactions: int
    exclusions: Exclusions
    result: Optional[SweepResult] = None
    error: Optional[str] = None


def evaluate(triples: Sequence[TransactionTriple], sensor, metric, evaluation: str) -> EvaluationRecord:
    sensor = SensorKind.parse(sensor)
    metric = SimilarityMetric.parse(metric)
    selected = _select(triples, sensor)
    rec = EvaluationRecord(evaluation, sensor, metric, len(selected), Exclusions())
    try:
        scored = EVALUATIONS[evaluation](selected, None, metric)
        rec.exclusions = scored.exclusions
        rec.result = sweep(scored, metric)
    except (InsufficientData, DegenerateLabels) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        log.warning("%s %s %s skipped: %s", evaluation, sensor, metric, rec.error)
    return rec
