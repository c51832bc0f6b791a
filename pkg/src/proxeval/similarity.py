"""Mean absolute error and Pearson correlation between equal-length series.

Population statistics (divide by N) are used throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np


class SimilarityError(ValueError):
    pass


class LengthMismatch(SimilarityError):
    pass


class EmptySeries(SimilarityError):
    pass


class DegenerateSeries(SimilarityError):
    """A series has zero standard deviation, so correlation is undefined."""


class SimilarityMetric(enum.Enum):
    MAE = "MAE"
    PEARSON = "corr"

    @property
    def is_distance(self) -> bool:
        # MAE: smaller is more similar, accept score <= t.
        # correlation: larger is more similar, accept score >= t.
        return self is SimilarityMetric.MAE

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, name) -> "SimilarityMetric":
        if isinstance(name, SimilarityMetric):
            return name
        key = str(name).strip().lower()
        if key == "mae":
            return cls.MAE
        if key in ("corr", "pearson", "pearsoncorrelation", "correlation"):
            return cls.PEARSON
        raise ValueError(f"unknown metric {name!r}")


@dataclass(frozen=True)
class SimilarityScore:
    metric: SimilarityMetric
    value: float
    pair: Optional[tuple] = None

    def __float__(self) -> float:
        return self.value


def _pair(u, v) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(u, dtype=float).reshape(-1)
    b = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise LengthMismatch(f"series lengths differ: {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] == 0:
        raise EmptySeries("series are empty")
    return a, b


def _origins(u, v):
    ou, ov = getattr(u, "origin", None), getattr(v, "origin", None)
    return None if ou is None and ov is None else (ou, ov)


def mae(u, v) -> SimilarityScore:
    a, b = _pair(u, v)
    return SimilarityScore(SimilarityMetric.MAE, float(np.mean(np.abs(a - b))), _origins(u, v))


def covariance(u, v) -> float:
    a, b = _pair(u, v)
    return float(np.mean((a - a.mean()) * (b - b.mean())))


def pearson(u, v) -> SimilarityScore:
    a, b = _pair(u, v)
    if a.shape[0] < 2:
        raise DegenerateSeries("correlation needs at least 2 points")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise DegenerateSeries("constant series has zero standard deviation")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.mean(da * da)), np.sqrt(np.mean(db * db))
    if sa * sb == 0:
        raise DegenerateSeries("standard deviation underflows to zero")
    r = float(np.mean(da * db) / (sa * sb))
    return SimilarityScore(SimilarityMetric.PEARSON, min(1.0, max(-1.0, r)), _origins(u, v))


def score(metric, u, v) -> SimilarityScore:
    metric = SimilarityMetric.parse(metric)
    return mae(u, v) if metric is SimilarityMetric.MAE else pearson(u, v)
