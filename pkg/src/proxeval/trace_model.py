"""Core domain types: sensors, device roles, samples, traces and transaction triples.

Traces keep their samples as read-only numpy arrays (``t_ms`` of shape ``(n,)``
and ``values`` of shape ``(n,)`` for scalar sensors or ``(n, 3)`` for vector
sensors). Everything here is immutable after construction.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Sequence, Union

import numpy as np

TRANSACTION_ID_BYTES = 7
_HEX_ID = re.compile(r"^[0-9a-f]{14}$")


class TraceError(ValueError):
    """Base class for malformed traces and triples."""


class DuplicateTimestamp(TraceError):
    pass


class IdMismatch(TraceError):
    pass


class SensorMismatch(TraceError):
    pass


class RoleError(TraceError):
    pass


class SensorKind(enum.Enum):
    """The seven ambient sensors used in the field trials.

    Each member carries ``(label, dims, unit, code)``. ``code`` is the Android
    ``Sensor.TYPE_*`` constant and doubles as the one-byte wire code.
    """

    ACCELEROMETER = ("Accelerometer", 3, "m/s²", 1)
    GRAVITY = ("Gravity", 3, "m/s²", 9)
    GYROSCOPE = ("Gyroscope", 3, "rad/s", 4)
    LIGHT = ("Light", 1, "lux", 5)
    LINEAR_ACCELERATION = ("Linear Acceleration", 3, "m/s²", 10)
    MAGNETIC_FIELD = ("Magnetic Field", 3, "µT", 2)
    ROTATION_VECTOR = ("Rotation Vector", 3, "unitless", 11)

    def __init__(self, label: str, dims: int, unit: str, code: int):
        self.label = label
        self.dims = dims
        self.unit = unit
        self.code = code

    @property
    def is_vector(self) -> bool:
        return self.dims == 3

    @property
    def slug(self) -> str:
        return self.label.lower().replace(" ", "_")

    def __str__(self) -> str:
        return self.label

    @classmethod
    def parse(cls, name: Union[str, "SensorKind"]) -> "SensorKind":
        """Accept the canonical label ("Magnetic Field"), the slug or the member name."""
        if isinstance(name, SensorKind):
            return name
        key = str(name).strip().lower().replace("-", "_").replace(" ", "_")
        for kind in cls:
            if key in (kind.slug, kind.name.lower(), kind.name.lower().replace("_", "")):
                return kind
        raise ValueError(f"unknown sensor {name!r}")

    @classmethod
    def from_code(cls, code: int) -> "SensorKind":
        for kind in cls:
            if kind.code == code:
                return kind
        raise ValueError(f"unknown sensor code {code}")


class DeviceRole(enum.Enum):
    TT = "TT"  # transaction terminal, the static reference device
    TI = "TI"  # transaction instrument, tapped against TT
    DTI = "DTI"  # distant transaction instrument, the relay endpoint

    def __str__(self) -> str:
        return self.value


Value = Union[float, tuple]


class Sample(NamedTuple):
    t_ms: float
    value: Value


def format_transaction_id(raw: Union[bytes, str]) -> str:
    """Normalise a transaction id to its 14-char lowercase hex form."""
    if isinstance(raw, (bytes, bytearray)):
        if len(raw) != TRANSACTION_ID_BYTES:
            raise ValueError(f"transaction id must be {TRANSACTION_ID_BYTES} bytes, got {len(raw)}")
        return bytes(raw).hex()
    text = str(raw).strip().lower()
    if not _HEX_ID.match(text):
        raise ValueError(f"transaction id must be 14 hex chars, got {raw!r}")
    return text


def transaction_id_bytes(tid: str) -> bytes:
    return bytes.fromhex(format_transaction_id(tid))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SensorTrace:
    """Samples recorded by one device for one sensor during one window.

    Samples are sorted by ``t_ms`` on construction; duplicate timestamps,
    negative times, non-finite values and arity mismatches are rejected.
    """

    transaction_id: str
    role: DeviceRole
    sensor: SensorKind
    location: str
    start_epoch_ms: int
    t_ms: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        set_ = object.__setattr__
        set_(self, "transaction_id", format_transaction_id(self.transaction_id))
        set_(self, "role", DeviceRole(self.role))
        set_(self, "sensor", SensorKind.parse(self.sensor))
        set_(self, "start_epoch_ms", int(self.start_epoch_ms))
        t = np.asarray(self.t_ms, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float)
        n = t.shape[0]
        if self.sensor.is_vector:
            if n == 0:
                v = v.reshape(0, 3)
            if v.shape != (n, 3):
                raise TraceError(f"{self.sensor} samples must be (x, y, z) triples, got shape {v.shape}")
        else:
            if n == 0:
                v = v.reshape(0)
            if v.shape != (n,):
                raise TraceError(f"{self.sensor} samples must be scalars, got shape {v.shape}")
        if not np.all(np.isfinite(t)) or not np.all(np.isfinite(v)):
            raise TraceError("sample times and values must be finite")
        if n and t.min() < 0:
            raise TraceError("sample times must be non-negative")
        order = np.argsort(t, kind="stable")
        t, v = t[order], v[order]
        if n > 1 and np.any(np.diff(t) == 0):
            dup = t[1:][np.diff(t) == 0][0]
            raise DuplicateTimestamp(f"duplicate sample time {dup} ms in {self.role} {self.sensor} trace")
        set_(self, "t_ms", _frozen(t))
        set_(self, "values", _frozen(v))

    @classmethod
    def from_samples(cls, transaction_id, role, sensor, location, start_epoch_ms,
                     samples: Sequence[Union[Sample, tuple]]) -> "SensorTrace":
        sensor = SensorKind.parse(sensor)
        t = [s[0] for s in samples]
        v = [s[1] for s in samples]
        return cls(transaction_id, role, sensor, location, start_epoch_ms, t, v)

    @property
    def samples(self) -> list[Sample]:
        if self.sensor.is_vector:
            return [Sample(float(t), tuple(float(c) for c in v)) for t, v in zip(self.t_ms, self.values)]
        return [Sample(float(t), float(v)) for t, v in zip(self.t_ms, self.values)]

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __len__(self) -> int:
        return int(self.t_ms.shape[0])

    @property
    def key(self) -> tuple[str, DeviceRole, SensorKind]:
        return (self.transaction_id, self.role, self.sensor)

    def replace(self, **changes) -> "SensorTrace":
        fields = dict(
            transaction_id=self.transaction_id, role=self.role, sensor=self.sensor,
            location=self.location, start_epoch_ms=self.start_epoch_ms,
            t_ms=self.t_ms, values=self.values,
        )
        fields.update(changes)
        return SensorTrace(**fields)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SensorTrace):
            return NotImplemented
        return (
            self.key == other.key
            and self.location == other.location
            and self.start_epoch_ms == other.start_epoch_ms
            and np.array_equal(self.t_ms, other.t_ms)
            and np.array_equal(self.values, other.values)
        )

    def __hash__(self) -> int:
        return hash((self.key, self.location, self.start_epoch_ms, len(self)))

    def __repr__(self) -> str:
        return (f"SensorTrace({self.transaction_id}, {self.role}, {self.sensor.label!r}, "
                f"{self.location!r}, n={len(self)})")


@dataclass(frozen=True)
class TransactionTriple:
    transaction_id: str
    sensor: SensorKind
    location: str
    tt: SensorTrace
    ti: SensorTrace
    dti: SensorTrace

    def trace(self, role: DeviceRole) -> SensorTrace:
        return {DeviceRole.TT: self.tt, DeviceRole.TI: self.ti, DeviceRole.DTI: self.dti}[DeviceRole(role)]


def validate_triple(*traces: SensorTrace) -> TransactionTriple:
    """Assemble a triple from three traces, reading roles from the traces.

    Argument order does not matter. Raises IdMismatch, SensorMismatch or
    RoleError naming the offending trace.
    """
    if len(traces) != 3:
        raise RoleError(f"a triple needs exactly three traces, got {len(traces)}")
    by_role: dict[DeviceRole, SensorTrace] = {}
    for tr in traces:
        if tr.role in by_role:
            raise RoleError(f"two traces with role {tr.role}: {by_role[tr.role]!r} and {tr!r}")
        by_role[tr.role] = tr
    reference = by_role.get(DeviceRole.TT, traces[0])
    for tr in traces:
        if tr.transaction_id != reference.transaction_id:
            raise IdMismatch(f"{tr.role} trace carries id {tr.transaction_id}, "
                             f"expected {reference.transaction_id}")
    for tr in traces:
        if tr.sensor is not reference.sensor:
            raise SensorMismatch(f"{tr.role} trace records {tr.sensor}, expected {reference.sensor}")
    tt, ti, dti = by_role[DeviceRole.TT], by_role[DeviceRole.TI], by_role[DeviceRole.DTI]
    return TransactionTriple(tt.transaction_id, tt.sensor, tt.location, tt, ti, dti)
