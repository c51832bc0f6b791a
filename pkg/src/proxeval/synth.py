"""Synthetic ambient environments and per-device observations.

The environment of one transaction is a latent signal per sensor:

    latent(t) = base + drift * t + sum of triangular pulses

with pulses arriving as a Poisson process. Devices observe the latent at
their maximum polling rate (with timing jitter), add Gaussian noise,
quantize, and deliver a sample only when the quantized value changes. That
last step reproduces the irregular, change-triggered sampling of the mobile
sensor stack.

Co-location is modelled by mixing: the terminal observes the shared latent,
the tapped instrument observes ``rho * shared + (1 - rho) * private``. The
distant instrument observes either the same kind of mixture plus a constant
per-transaction offset (``same_room_offset``) or a fully independent latent
(``different_latent``).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Optional, Union

import numpy as np

from .trace_model import (DeviceRole, SensorKind, SensorTrace, TransactionTriple,
                          format_transaction_id, validate_triple)

SAME_ROOM_OFFSET = "same_room_offset"
DIFFERENT_LATENT = "different_latent"
DTI_MODES = (SAME_ROOM_OFFSET, DIFFERENT_LATENT)

EPOCH_ORIGIN_MS = 1_500_000_000_000
TRANSACTION_SPACING_MS = 5_000

_VECTOR_AXIS = np.ones(3) / math.sqrt(3.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SensorProfile:
    """Environment and device parameters for one sensor at one location (sensor units)."""

    base_level: float
    drift_rate: float = 0.0  # units/s
    event_rate: float = 0.0  # events/s
    event_magnitude: float = 0.0
    event_duration_ms: float = 40.0
    observation_noise_sigma: float = 0.0
    quantization_step: float = 0.0
    timing_jitter_ms: float = 0.0
    room_offset_sigma: float = 0.0
    max_rate_hz: float = 100.0

    def __post_init__(self):
        for name in ("drift_rate", "event_rate", "event_magnitude", "event_duration_ms",
                     "observation_noise_sigma", "quantization_step", "timing_jitter_ms",
                     "room_offset_sigma"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.max_rate_hz <= 0:
            raise ConfigError("max_rate_hz must be > 0")


@dataclass(frozen=True)
class LocationProfile:
    name: str
    sensors: Mapping[SensorKind, SensorProfile]

    def params(self, sensor) -> SensorProfile:
        sensor = SensorKind.parse(sensor)
        try:
            return self.sensors[sensor]
        except KeyError:
            raise ConfigError(f"location {self.name!r} has no profile for {sensor}") from None

    def to_dict(self) -> dict:
        return {"name": self.name,
                "sensors": {k.label: asdict(v) for k, v in self.sensors.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "LocationProfile":
        known = {f.name for f in fields(SensorProfile)}
        sensors = {}
        for name, params in d["sensors"].items():
            extra = set(params) - known
            if extra:
                raise ConfigError(f"unknown profile fields for {name}: {sorted(extra)}")
            sensors[SensorKind.parse(name)] = SensorProfile(**params)
        return cls(str(d["name"]), sensors)


@dataclass(frozen=True)
class SynthScenario:
    n_transactions: int
    sensors: tuple
    locations: tuple
    dti_distance_mode: str = SAME_ROOM_OFFSET
    co_location_correlation: float = 1.0
    seed: int = 0
    duration_ms: float = 500.0

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(SensorKind.parse(s) for s in self.sensors))
        object.__setattr__(self, "locations", tuple(self.locations))
        if not self.sensors:
            raise ConfigError("scenario needs at least one sensor")
        if self.n_transactions < 1:
            raise ConfigError("n_transactions must be >= 1")
        if not self.locations:
            raise ConfigError("scenario needs at least one location")
        if self.dti_distance_mode not in DTI_MODES:
            raise ConfigError(f"dti_distance_mode must be one of {DTI_MODES}")
        if not 0.0 <= self.co_location_correlation <= 1.0:
            raise ConfigError("co_location_correlation must lie in [0, 1]")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.duration_ms <= 0:
            raise ConfigError("duration_ms must be > 0")
        for loc in self.locations:
            for s in self.sensors:
                loc.params(s)

    def replace(self, **changes) -> "SynthScenario":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return SynthScenario(**d)

    def to_dict(self) -> dict:
        return {
            "n_transactions": self.n_transactions,
            "sensors": [s.label for s in self.sensors],
            "locations": [loc.to_dict() for loc in self.locations],
            "dti_distance_mode": self.dti_distance_mode,
            "co_location_correlation": self.co_location_correlation,
            "seed": int(self.seed),
            "duration_ms": self.duration_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthScenario":
        try:
            return cls(
                n_transactions=int(d["n_transactions"]),
                sensors=tuple(d["sensors"]),
                locations=tuple(LocationProfile.from_dict(x) for x in d["locations"]),
                dti_distance_mode=d.get("dti_distance_mode", SAME_ROOM_OFFSET),
                co_location_correlation=float(d.get("co_location_correlation", 1.0)),
                seed=int(d.get("seed", 0)),
                duration_ms=float(d.get("duration_ms", 500.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid scenario: {exc}") from exc


def load_scenario(path: Union[str, Path]) -> SynthScenario:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"scenario file not found: {path}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return SynthScenario.from_dict(data)


def save_scenario(scenario: SynthScenario, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2, ensure_ascii=False) + "\n",
                          encoding="utf-8")


def paper_like_scenario() -> SynthScenario:
    """The shipped default scenario (``data/paper-like.json``)."""
    with resources.files("proxeval").joinpath("data/paper-like.json").open(encoding="utf-8") as fh:
        return SynthScenario.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# latent signals
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Latent:
    """Piecewise-linear latent: base + drift * t + triangular pulses."""

    sensor: SensorKind
    base: np.ndarray
    drift_per_ms: np.ndarray
    event_times: np.ndarray
    event_amps: np.ndarray
    half_width_ms: float
    duration_ms: float

    @property
    def n_events(self) -> int:
        return int(self.event_times.shape[0])

    def dynamic(self, t_ms) -> np.ndarray:
        t = np.asarray(t_ms, dtype=float).reshape(-1)
        out = t[:, None] * self.drift_per_ms[None, :]
        if self.n_events and self.half_width_ms > 0:
            w = 1.0 - np.abs(t[:, None] - self.event_times[None, :]) / self.half_width_ms
            out = out + np.clip(w, 0.0, None) @ self.event_amps
        return out

    def __call__(self, t_ms) -> np.ndarray:
        v = self.base[None, :] + self.dynamic(t_ms)
        return v if self.sensor.is_vector else v[:, 0]


@dataclass(frozen=True, eq=False)
class MixedLatent:
    """``shared_weight * shared + (1 - shared_weight) * private + offset``.

    Both parts share the location base, so mixing only blends their dynamics.
    """

    shared: Latent
    private: Latent
    shared_weight: float
    offset: np.ndarray

    @property
    def sensor(self) -> SensorKind:
        return self.shared.sensor

    def __call__(self, t_ms) -> np.ndarray:
        rho = self.shared_weight
        v = (self.shared.base[None, :] + rho * self.shared.dynamic(t_ms)
             + (1.0 - rho) * self.private.dynamic(t_ms) + self.offset[None, :])
        return v if self.sensor.is_vector else v[:, 0]


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def generate_latent(profile, sensor, duration_ms: float, seed) -> Latent:
    """Draw a latent signal over ``[0, duration_ms)``; deterministic for a fixed seed."""
    if duration_ms <= 0:
        raise ConfigError("duration_ms must be > 0")
    sensor = SensorKind.parse(sensor)
    p = profile.params(sensor) if isinstance(profile, LocationProfile) else profile
    rng = _rng(seed)
    dims = sensor.dims
    base = p.base_level * (_VECTOR_AXIS if dims == 3 else np.ones(1))
    # drift velocity per axis; drift_rate is its RMS speed in units/s
    drift = rng.standard_normal(dims) * (p.drift_rate / math.sqrt(dims) / 1000.0)
    k = rng.poisson(p.event_rate * duration_ms / 1000.0)
    times = np.sort(rng.uniform(0.0, duration_ms, size=k))
    amps = p.event_magnitude * rng.standard_normal((k, dims))
    return Latent(sensor, base, drift, times, amps, p.event_duration_ms / 2.0, float(duration_ms))


class Observation(NamedTuple):
    t_ms: np.ndarray
    values: np.ndarray

    def __len__(self) -> int:
        return int(self.t_ms.shape[0])


def observe(latent, profile, duration_ms: float, max_rate_hz: float, seed,
            start_ms: float = 0.0) -> Observation:
    """Sample a latent the way a change-triggered sensor would report it.

    Candidate instants run at ``max_rate_hz`` with uniform timing jitter;
    each candidate is noised and quantized, and only values that differ from
    the last delivered one are emitted. ``start_ms`` shifts the device's
    recording start along the latent's time axis; emitted times are relative
    to the device's own start.
    """
    if max_rate_hz <= 0:
        raise ConfigError("max_rate_hz must be > 0")
    p = profile.params(latent.sensor) if isinstance(profile, LocationProfile) else profile
    rng = _rng(seed)
    period = 1000.0 / max_rate_hz
    n = int(math.ceil(duration_ms / period))
    jitter = min(p.timing_jitter_ms, period / 2.0)
    t = np.arange(n) * period + rng.uniform(0.0, jitter, size=n) if jitter > 0 else np.arange(n) * period
    t = t[t < duration_ms]
    v = np.asarray(latent(start_ms + t), dtype=float)
    if p.observation_noise_sigma > 0:
        v = v + p.observation_noise_sigma * rng.standard_normal(v.shape)
    if p.quantization_step > 0:
        with np.errstate(over="ignore"):
            q = np.round(v / p.quantization_step) * p.quantization_step
        # steps far below the value's resolution overflow; quantizing is then a no-op
        v = np.where(np.isfinite(q), q, v)
    vv = v.reshape(len(t), -1)
    # a suppressed candidate equals the last delivered value, so comparing
    # with the previous candidate is the same as comparing with the last delivery
    keep = np.ones(len(t), dtype=bool)
    keep[1:] = np.any(vv[1:] != vv[:-1], axis=1)
    return Observation(t[keep], v[keep])


# ---------------------------------------------------------------------------
# per-transaction worlds and datasets
# ---------------------------------------------------------------------------

_STREAMS = ("id", "shared", "private_ti", "private_dti", "offset", "skew",
            "obs_tt", "obs_ti", "obs_dti")


@dataclass(frozen=True, eq=False)
class TransactionWorld:
    """The environment of one transaction, shared by all three devices."""

    index: int
    sensor: SensorKind
    location: LocationProfile
    transaction_id: str
    latents: Mapping[DeviceRole, Callable]
    seeds: Mapping[str, np.random.SeedSequence]
    span_ms: float

    def record(self, role, start_offset_ms: float = 0.0, recording_ms: float = 500.0) -> Observation:
        role = DeviceRole(role)
        p = self.location.params(self.sensor)
        return observe(self.latents[role], p, recording_ms, p.max_rate_hz,
                       self.seeds[f"obs_{role.value.lower()}"], start_ms=start_offset_ms)

    def trace(self, role, start_offset_ms: float = 0.0, recording_ms: float = 500.0,
              epoch_ms: Optional[int] = None) -> SensorTrace:
        obs = self.record(role, start_offset_ms, recording_ms)
        if epoch_ms is None:
            epoch_ms = EPOCH_ORIGIN_MS + self.index * TRANSACTION_SPACING_MS
        return SensorTrace(self.transaction_id, DeviceRole(role), self.sensor, self.location.name,
                           int(epoch_ms + round(start_offset_ms)), obs.t_ms, obs.values)

    def skew_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seeds["skew"])


def transaction_world(scenario: SynthScenario, sensor, index: int,
                      span_ms: Optional[float] = None) -> TransactionWorld:
    """Build the deterministic world for transaction ``index`` of ``sensor``.

    Every random stream comes from a seed sequence keyed on
    (scenario seed, sensor code, index), so results do not depend on the
    order or the worker in which transactions are generated.
    """
    sensor = SensorKind.parse(sensor)
    span = float(span_ms if span_ms is not None else scenario.duration_ms)
    root = np.random.SeedSequence(entropy=int(scenario.seed), spawn_key=(sensor.code, int(index)))
    seeds = dict(zip(_STREAMS, root.spawn(len(_STREAMS))))
    loc = scenario.locations[index % len(scenario.locations)]
    p = loc.params(sensor)
    tid = format_transaction_id(np.random.default_rng(seeds["id"]).bytes(7))

    shared = generate_latent(p, sensor, span, seeds["shared"])
    rho = scenario.co_location_correlation
    zero = np.zeros(sensor.dims)
    ti = MixedLatent(shared, generate_latent(p, sensor, span, seeds["private_ti"]), rho, zero)
    if scenario.dti_distance_mode == SAME_ROOM_OFFSET:
        offset = p.room_offset_sigma * np.random.default_rng(seeds["offset"]).standard_normal(sensor.dims)
        dti = MixedLatent(shared, generate_latent(p, sensor, span, seeds["private_dti"]), rho, offset)
    else:
        dti = generate_latent(p, sensor, span, seeds["private_dti"])
    latents = {DeviceRole.TT: shared, DeviceRole.TI: ti, DeviceRole.DTI: dti}
    return TransactionWorld(int(index), sensor, loc, tid, latents, seeds, span)


def generate_transaction(scenario: SynthScenario, sensor, index: int) -> TransactionTriple:
    world = transaction_world(scenario, sensor, index)
    d = scenario.duration_ms
    return validate_triple(*(world.trace(role, 0.0, d) for role in DeviceRole))


def generate_dataset(scenario: SynthScenario, workers: int = 1) -> list[TransactionTriple]:
    """All triples of the scenario, grouped by sensor in scenario order.

    ``workers > 1`` generates in a thread pool; output is identical either way.
    """
    jobs = [(s, i) for s in scenario.sensors for i in range(scenario.n_transactions)]
    if workers <= 1:
        return [generate_transaction(scenario, s, i) for s, i in jobs]
    from concurrent.futures import ThreadPoolExecutor
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: generate_transaction(scenario, *job), jobs))
