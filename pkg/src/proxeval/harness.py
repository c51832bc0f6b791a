"""Three-device transaction protocol simulator.

One transaction runs as follows:

1. TT draws a 7-byte transaction id and sends ``(id, sensor)`` to TI over the
   proximity link, then broadcasts the same message to DTI.
2. All three devices record the sensor for ``recording_ms``. Each device starts
   with its own clock skew.
3. TI sends the message back. TT checks that both id and sensor match.
4. On success the three traces go to the record store. On a mismatch nothing
   is stored.

Messages are 8 bytes on the wire: the 7 raw id bytes followed by the sensor's
one-byte code. The same encoding is used by the in-process channel and by
the loopback socket channel, so both modes run the same decode paths.
Recorded data comes from the synthetic environment keyed on
(seed, sensor, transaction index). Channel timing does not affect it, so
both modes store identical traces.
"""

from __future__ import annotations

import csv
import enum
import logging
import queue
import socket
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .persistence import RecordStore
from .synth import SynthScenario, TransactionWorld, transaction_world
from .trace_model import (TRANSACTION_ID_BYTES, DeviceRole, SensorKind, SensorTrace,
                          TransactionTriple, validate_triple)

log = logging.getLogger(__name__)

DEFAULT_PORT = 8888
LOOPBACK = "127.0.0.1"
MESSAGE_BYTES = TRANSACTION_ID_BYTES + 1


class HarnessError(Exception):
    pass


class ChannelError(HarnessError):
    pass


class BindError(ChannelError):
    pass


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolMessage:
    transaction_id: bytes
    sensor: SensorKind

    def __post_init__(self):
        if len(self.transaction_id) != TRANSACTION_ID_BYTES:
            raise ProtocolError(f"transaction id must be {TRANSACTION_ID_BYTES} bytes, "
                                f"got {len(self.transaction_id)}")

    def encode(self) -> bytes:
        return bytes(self.transaction_id) + bytes([self.sensor.code])

    @classmethod
    def decode(cls, payload: bytes) -> "ProtocolMessage":
        if len(payload) != MESSAGE_BYTES:
            raise ProtocolError(f"payload must be {MESSAGE_BYTES} bytes, got {len(payload)}")
        try:
            sensor = SensorKind.from_code(payload[-1])
        except ValueError as exc:
            raise ProtocolError(str(exc)) from None
        return cls(bytes(payload[:TRANSACTION_ID_BYTES]), sensor)

    @property
    def hex_id(self) -> str:
        return self.transaction_id.hex()


class Fault(enum.Enum):
    CORRUPT_RESPONSE = "corrupt_response"  # TI answers with a damaged id
    DROP_DTI = "drop_dti_broadcast"  # the broadcast never reaches DTI
    CORRUPT_DTI_PAYLOAD = "corrupt_dti_payload"  # DTI receives undecodable bytes


class Status(enum.Enum):
    STORED = "Stored"
    DISCARDED_INCONSISTENT = "DiscardedInconsistent"
    DISCARDED_INCOMPLETE = "DiscardedIncomplete"


@dataclass
class TransactionOutcome:
    status: Status
    triple: Optional[TransactionTriple] = None
    diagnostics: list = field(default_factory=list)
    transaction_id: Optional[str] = None
    index: int = -1

    def __post_init__(self):
        if (self.triple is not None) != (self.status is Status.STORED):
            raise ValueError("triple must be present exactly when the transaction is stored")


# ---------------------------------------------------------------------------
# fault schedules
# ---------------------------------------------------------------------------

def load_fault_schedule(path: Union[str, Path]) -> dict[int, Fault]:
    """Read a ``index,fault`` CSV (header required) into {transaction index: fault}."""
    schedule: dict[int, Fault] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["index", "fault"]:
            raise HarnessError(f"{path}: header must be 'index,fault'")
        for lineno, row in enumerate(reader, 2):
            if not row or not "".join(row).strip():
                continue
            try:
                schedule[int(row[0])] = Fault(row[1].strip())
            except (ValueError, IndexError) as exc:
                raise HarnessError(f"{path}:{lineno}: {exc}") from None
    return schedule


def save_fault_schedule(schedule: Mapping[int, Fault], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "fault"])
        for idx in sorted(schedule):
            w.writerow([idx, Fault(schedule[idx]).value])


def random_fault_schedule(n: int, rate: float, seed: int,
                          kinds: Sequence[Fault] = (Fault.CORRUPT_RESPONSE,)) -> dict[int, Fault]:
    rng = np.random.default_rng(seed)
    hit = np.flatnonzero(rng.random(n) < rate)
    picks = rng.integers(0, len(kinds), size=hit.shape[0])
    return {int(i): kinds[int(k)] for i, k in zip(hit, picks)}


# ---------------------------------------------------------------------------
# environment and channels
# ---------------------------------------------------------------------------

class SyntheticAmbient:
    """Ambient environment backed by a synthetic scenario.

    Device clock skews are drawn per transaction, uniform in
    ``[0, max_skew_ms)``, from the transaction's own seed stream.
    """

    def __init__(self, scenario: SynthScenario, max_skew_ms: float = 20.0):
        self.scenario = scenario
        self.max_skew_ms = float(max_skew_ms)

    def world(self, sensor: SensorKind, index: int, recording_ms: float) -> TransactionWorld:
        return transaction_world(self.scenario, sensor, index, span_ms=recording_ms + self.max_skew_ms)

    def skews(self, world: TransactionWorld) -> dict[DeviceRole, float]:
        if self.max_skew_ms <= 0:
            return {r: 0.0 for r in DeviceRole}
        draws = world.skew_rng().uniform(0.0, self.max_skew_ms, size=3)
        return dict(zip(DeviceRole, (float(x) for x in draws)))


class EmulatedChannel:
    """In-process delivery. Payloads still go through encode/decode."""

    live = False

    def exchange(self, tt_payload: bytes, dti_payload: Optional[bytes], respond):
        """Deliver to TI and DTI and collect TI's response.

        ``respond(payload) -> bytes`` plays TI. Returns (ti_payload, dti_payload, response).
        """
        return tt_payload, dti_payload, respond(tt_payload)

    def close(self) -> None:
        pass


class LoopbackChannel:
    """Real UDP datagrams on the loopback interface.

    DTI listens on ``port`` (8888 by default) for the broadcast. TI listens
    on an ephemeral port for the proximity-link message. A TI actor thread
    and a DTI actor thread receive concurrently with the TT side.
    """

    live = True

    def __init__(self, port: int = DEFAULT_PORT, timeout_s: float = 2.0):
        self.timeout_s = timeout_s
        socks = []
        try:
            self.dti_sock = self._bind(port)
            socks.append(self.dti_sock)
            self.ti_sock = self._bind(0)
            socks.append(self.ti_sock)
            self.tt_sock = self._bind(0)
        except BindError:
            for s in socks:
                s.close()
            raise
        self.port = self.dti_sock.getsockname()[1]
        for s in (self.dti_sock, self.ti_sock, self.tt_sock):
            s.settimeout(timeout_s)
        self._dti_inbox: "queue.Queue[bytes]" = queue.Queue()
        self._ti_requests: "queue.Queue" = queue.Queue()
        self._closed = threading.Event()
        self._respond = None
        self._threads = [threading.Thread(target=self._dti_actor, daemon=True, name="dti-actor"),
                         threading.Thread(target=self._ti_actor, daemon=True, name="ti-actor")]
        for t in self._threads:
            t.start()

    @staticmethod
    def _bind(port: int) -> socket.socket:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.bind((LOOPBACK, port))
        except OSError as exc:
            sock.close()
            raise BindError(f"cannot bind {LOOPBACK}:{port}: {exc.strerror or exc}") from None
        return sock

    def _dti_actor(self) -> None:
        while not self._closed.is_set():
            try:
                data, _ = self.dti_sock.recvfrom(64)
            except socket.timeout:
                continue
            except OSError:
                return
            self._dti_inbox.put(data)

    def _ti_actor(self) -> None:
        while not self._closed.is_set():
            try:
                data, addr = self.ti_sock.recvfrom(64)
            except socket.timeout:
                continue
            except OSError:
                return
            respond = self._respond
            reply = respond(data) if respond is not None else data
            try:
                self.ti_sock.sendto(reply, addr)
            except OSError:
                return

    def exchange(self, tt_payload: bytes, dti_payload: Optional[bytes], respond):
        if self._closed.is_set():
            raise ChannelError("channel is closed")
        self._respond = respond
        ti_addr = self.ti_sock.getsockname()
        try:
            self.tt_sock.sendto(tt_payload, ti_addr)
            if dti_payload is not None:
                self.tt_sock.sendto(dti_payload, (LOOPBACK, self.port))
            response, _ = self.tt_sock.recvfrom(64)
        except socket.timeout:
            raise ChannelError("timed out waiting for the TI response") from None
        except OSError as exc:
            raise ChannelError(f"socket failure: {exc}") from None
        received_dti = None
        if dti_payload is not None:
            try:
                received_dti = self._dti_inbox.get(timeout=self.timeout_s)
            except queue.Empty:
                raise ChannelError("timed out waiting for the DTI broadcast") from None
        return tt_payload, received_dti, response

    def close(self) -> None:
        self._closed.set()
        for s in (self.dti_sock, self.ti_sock, self.tt_sock):
            s.close()
        for t in self._threads:
            t.join(timeout=self.timeout_s + 1)


@dataclass
class Testbed:
    """Handle bundling environment, channel, record store and counters."""

    ambient: SyntheticAmbient
    store: RecordStore = field(default_factory=RecordStore)
    channel: object = field(default_factory=EmulatedChannel)
    next_index: int = 0
    outcomes: list = field(default_factory=list)

    __test__ = False  # not a pytest class

    def close(self) -> None:
        self.channel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def emulated_testbed(scenario: SynthScenario, store: Optional[RecordStore] = None,
                     max_skew_ms: float = 20.0) -> Testbed:
    return Testbed(SyntheticAmbient(scenario, max_skew_ms), store if store is not None else RecordStore())


def live_mode_bind(port: int = DEFAULT_PORT, scenario: Optional[SynthScenario] = None,
                   store: Optional[RecordStore] = None, max_skew_ms: float = 20.0,
                   timeout_s: float = 2.0) -> Testbed:
    """Bind the loopback channel and return a live testbed (BindError if the port is taken)."""
    if scenario is None:
        from .synth import paper_like_scenario
        scenario = paper_like_scenario()
    channel = LoopbackChannel(port, timeout_s=timeout_s)
    return Testbed(SyntheticAmbient(scenario, max_skew_ms),
                   store if store is not None else RecordStore(), channel)


# ---------------------------------------------------------------------------
# protocol
# ---------------------------------------------------------------------------

def _corrupt(payload: bytes) -> bytes:
    return bytes([payload[0] ^ 0xFF]) + payload[1:]


def run_transaction(testbed: Testbed, sensor, recording_ms: float = 500.0,
                    fault: Optional[Fault] = None) -> TransactionOutcome:
    sensor = SensorKind.parse(sensor)
    index = testbed.next_index
    testbed.next_index += 1
    world = testbed.ambient.world(sensor, index, recording_ms)
    skew = testbed.ambient.skews(world)
    msg = ProtocolMessage(bytes.fromhex(world.transaction_id), sensor)
    payload = msg.encode()
    diagnostics: list[str] = []

    dti_payload: Optional[bytes] = payload
    if fault is Fault.DROP_DTI:
        dti_payload = None
    elif fault is Fault.CORRUPT_DTI_PAYLOAD:
        dti_payload = payload[:3]

    def ti_respond(data: bytes) -> bytes:
        # TI records, then echoes the message it was given
        try:
            ProtocolMessage.decode(data)
        except ProtocolError:
            return b""
        return _corrupt(data) if fault is Fault.CORRUPT_RESPONSE else data

    ti_in, dti_in, response = testbed.channel.exchange(payload, dti_payload, ti_respond)

    # each device records the sensor named in the message it received
    received = {DeviceRole.TT: msg, DeviceRole.TI: ProtocolMessage.decode(ti_in)}
    if dti_in is None:
        diagnostics.append("DTI never received the broadcast")
    else:
        try:
            received[DeviceRole.DTI] = ProtocolMessage.decode(dti_in)
        except ProtocolError as exc:
            diagnostics.append(f"DTI discarded broadcast: {exc}")
    traces: dict[DeviceRole, SensorTrace] = {
        role: world.trace(role, skew[role], recording_ms)
        for role, m in received.items() if m.sensor is sensor
    }

    try:
        reply = ProtocolMessage.decode(response)
    except ProtocolError as exc:
        reply = None
        diagnostics.append(f"undecodable TI response: {exc}")
    if reply is None or reply != msg:
        if reply is not None:
            diagnostics.append(f"TI response {reply.hex_id}/{reply.sensor} does not match "
                               f"{msg.hex_id}/{msg.sensor}")
        outcome = TransactionOutcome(Status.DISCARDED_INCONSISTENT, None, diagnostics,
                                     world.transaction_id, index)
        testbed.outcomes.append(outcome)
        return outcome

    stored = [traces[r] for r in DeviceRole if traces.get(r) is not None]
    for tr in stored:
        testbed.store.append(tr)
    if len(stored) == 3:
        triple = validate_triple(*stored)
        outcome = TransactionOutcome(Status.STORED, triple, diagnostics, world.transaction_id, index)
    else:
        outcome = TransactionOutcome(Status.DISCARDED_INCOMPLETE, None, diagnostics,
                                     world.transaction_id, index)
    testbed.outcomes.append(outcome)
    return outcome


@dataclass
class SessionSummary:
    attempted: int
    stored: int
    discarded_inconsistent: int
    discarded_incomplete: int

    @property
    def discarded(self) -> int:
        return self.discarded_inconsistent + self.discarded_incomplete


def run_session(testbed: Testbed, sensors: Sequence, n_per_sensor: int,
                recording_ms: float = 500.0,
                faults: Optional[Mapping[int, Fault]] = None) -> RecordStore:
    """Run ``n_per_sensor`` rounds, switching to the next sensor after every transaction.

    ``faults`` maps session-relative transaction indices to injected faults.
    """
    if n_per_sensor < 1:
        raise ValueError("n_per_sensor must be >= 1")
    sensors = [SensorKind.parse(s) for s in sensors]
    faults = faults or {}
    k = 0
    for _ in range(n_per_sensor):
        for sensor in sensors:
            run_transaction(testbed, sensor, recording_ms, faults.get(k))
            k += 1
    return testbed.store


def summarize(outcomes: Sequence[TransactionOutcome]) -> SessionSummary:
    count = {s: 0 for s in Status}
    for o in outcomes:
        count[o.status] += 1
    return SessionSummary(len(outcomes), count[Status.STORED],
                          count[Status.DISCARDED_INCONSISTENT], count[Status.DISCARDED_INCOMPLETE])
