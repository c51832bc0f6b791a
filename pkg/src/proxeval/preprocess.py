"""Turn raw trace pairs into aligned scalar series on a 10 ms grid.

Pipeline per pair: scalarize -> truncate_window -> cross_truncate -> resample,
then both series are cut to the shorter length. The grid is anchored at each
trace's own recording start (t = 0). Grid points before the first sample
hold the first value; the grid never extends past the last sample.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .trace_model import DeviceRole, SensorKind, SensorMismatch, SensorTrace

GRID_STEP_MS = 10.0
WINDOW_MS = 500.0


class TooFewSamples(ValueError):
    """Fewer than two samples (or grid points) survive truncation."""


class ScalarSamples(NamedTuple):
    t_ms: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return int(self.t_ms.shape[0])


@dataclass(frozen=True, eq=False)
class ScalarSeries:
    values: np.ndarray
    origin: Optional[tuple[str, DeviceRole, SensorKind]] = None
    grid_step_ms: float = field(default=GRID_STEP_MS)

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("series values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.grid_step_ms

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScalarSeries):
            return NotImplemented
        return self.origin == other.origin and np.array_equal(self.values, other.values)


def magnitude(x: float, y: float, z: float) -> float:
    return math.sqrt(x * x + y * y + z * z)


def scalarize(trace: SensorTrace) -> ScalarSamples:
    """Collapse vector samples to their magnitude; Light passes through."""
    if trace.sensor.is_vector:
        v = np.sqrt(np.sum(trace.values * trace.values, axis=1))
    else:
        v = np.array(trace.values, dtype=float)
    return ScalarSamples(np.array(trace.t_ms, dtype=float), v)


def _as_samples(samples) -> ScalarSamples:
    if isinstance(samples, ScalarSamples):
        return samples
    t, v = samples
    return ScalarSamples(np.asarray(t, dtype=float), np.asarray(v, dtype=float))


def truncate_window(samples, limit_ms: float = WINDOW_MS) -> ScalarSamples:
    s = _as_samples(samples)
    keep = s.t_ms <= limit_ms
    return ScalarSamples(s.t_ms[keep], s.values[keep])


def _cut(s: ScalarSamples, end: float) -> ScalarSamples:
    keep = s.t_ms <= end
    t, v = s.t_ms[keep], s.values[keep]
    if len(t) and t[-1] < end:
        # close the kept span on the common end with the trace's own interpolant
        t = np.append(t, end)
        v = np.append(v, np.interp(end, s.t_ms, s.values))
    return ScalarSamples(t, v)


def cross_truncate(a, b) -> tuple[ScalarSamples, ScalarSamples]:
    """Restrict both sides to the common span ending at the earlier last sample.

    Samples recorded after the other side's last sample are dropped. A side
    that extended past the common end gets a closing sample there, read off
    its own linear interpolant, so both results end at the same instant and
    a second application changes nothing. If either side has nothing left,
    both come back empty.
    """
    a, b = _as_samples(a), _as_samples(b)
    empty = ScalarSamples(np.empty(0), np.empty(0))
    if len(a) == 0 or len(b) == 0:
        return empty, empty
    end = min(a.t_ms[-1], b.t_ms[-1])
    a2, b2 = _cut(a, end), _cut(b, end)
    if len(a2) == 0 or len(b2) == 0:
        return empty, empty
    return a2, b2


def grid_length(last_t_ms: float, step_ms: float = GRID_STEP_MS) -> int:
    """Number of grid points 0, step, ... up to the last multiple of step <= last_t_ms."""
    return int(math.floor(last_t_ms / step_ms)) + 1


def resample(samples, origin=None) -> ScalarSeries:
    s = _as_samples(samples)
    if len(s) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(s)}")
    n = grid_length(s.t_ms[-1])
    if n < 2:
        raise TooFewSamples(f"samples span {s.t_ms[-1]:g} ms, shorter than one grid step")
    grid = np.arange(n) * GRID_STEP_MS
    # np.interp holds the edge values outside the sample span
    return ScalarSeries(np.interp(grid, s.t_ms, s.values), origin=origin)


def prepare(trace: SensorTrace, limit_ms: float = WINDOW_MS) -> ScalarSamples:
    return truncate_window(scalarize(trace), limit_ms)


def preprocess_pair(a: SensorTrace, b: SensorTrace,
                    limit_ms: float = WINDOW_MS) -> tuple[ScalarSeries, ScalarSeries]:
    if a.sensor is not b.sensor:
        raise SensorMismatch(f"cannot compare {a.sensor} with {b.sensor}")
    sa, sb = cross_truncate(prepare(a, limit_ms), prepare(b, limit_ms))
    ua = resample(sa, origin=a.key)
    ub = resample(sb, origin=b.key)
    n = min(len(ua), len(ub))
    return (ScalarSeries(ua.values[:n], origin=a.key), ScalarSeries(ub.values[:n], origin=b.key))
