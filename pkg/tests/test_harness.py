import socket

import pytest

from proxeval.evaluation import evaluate
from proxeval.harness import (BindError, Fault, ProtocolError, ProtocolMessage, Status, emulated_testbed,
                              live_mode_bind, load_fault_schedule, random_fault_schedule, run_session,
                              run_transaction, save_fault_schedule, summarize)
from proxeval.persistence import RecordStore, join_triples
from proxeval.similarity import SimilarityMetric
from proxeval.trace_model import DeviceRole, SensorKind, validate_triple

from conftest import make_scenario

SCENARIO = make_scenario(sensors=(SensorKind.MAGNETIC_FIELD, SensorKind.LIGHT), n=10,
                         observation_noise_sigma=0.2, timing_jitter_ms=2.0, rho=0.7)


class TestMessage:
    def test_round_trip(self):
        msg = ProtocolMessage(bytes.fromhex("0a0b0c0d0e0f10"), SensorKind.GYROSCOPE)
        raw = msg.encode()
        assert len(raw) == 8 and raw[:7] == bytes.fromhex("0a0b0c0d0e0f10")
        assert ProtocolMessage.decode(raw) == msg
        assert msg.hex_id == "0a0b0c0d0e0f10"

    @pytest.mark.parametrize("raw", [b"", b"\x00" * 7, b"\x00" * 9, b"\x00" * 7 + b"\xee"])
    def test_malformed(self, raw):
        with pytest.raises(ProtocolError):
            ProtocolMessage.decode(raw)


class TestTransaction:
    def test_happy_path(self):
        tb = emulated_testbed(SCENARIO)
        out = run_transaction(tb, SensorKind.MAGNETIC_FIELD)
        assert out.status is Status.STORED
        assert validate_triple(out.triple.tt, out.triple.ti, out.triple.dti) == out.triple
        assert len(tb.store) == 3

    def test_corrupt_response_stores_nothing(self):
        tb = emulated_testbed(SCENARIO)
        out = run_transaction(tb, SensorKind.LIGHT, fault=Fault.CORRUPT_RESPONSE)
        assert out.status is Status.DISCARDED_INCONSISTENT
        assert out.triple is None and len(tb.store) == 0
        assert out.diagnostics

    @pytest.mark.parametrize("fault", [Fault.DROP_DTI, Fault.CORRUPT_DTI_PAYLOAD])
    def test_dti_loss_excluded_by_join(self, fault):
        tb = emulated_testbed(SCENARIO)
        out = run_transaction(tb, SensorKind.LIGHT, fault=fault)
        assert out.status is Status.DISCARDED_INCOMPLETE
        assert len(tb.store.rows("Light", DeviceRole.TT)) == 1
        assert len(tb.store.rows("Light", DeviceRole.DTI)) == 0
        assert join_triples(tb.store, "Light") == []

    def test_skew_shifts_start_epochs(self):
        tb = emulated_testbed(SCENARIO, max_skew_ms=20.0)
        t = run_transaction(tb, "Light").triple
        starts = [t.tt.start_epoch_ms, t.ti.start_epoch_ms, t.dti.start_epoch_ms]
        assert max(starts) - min(starts) <= 20


class TestSession:
    def test_two_sensors_three_each(self):
        tb = emulated_testbed(SCENARIO)
        run_session(tb, SCENARIO.sensors, 3)
        assert len(join_triples(tb.store, "Magnetic Field")) == 3
        assert len(join_triples(tb.store, "Light")) == 3

    def test_thousand_per_sensor(self):
        tb = emulated_testbed(SCENARIO)
        run_session(tb, [SensorKind.LIGHT], 1000)
        triples = join_triples(tb.store, "Light")
        assert len(triples) == 1000
        assert len({t.transaction_id for t in triples}) == 1000

    def test_ten_percent_faults_conserve_counts(self):
        faults = random_fault_schedule(500, 0.10, seed=3)
        tb = emulated_testbed(SCENARIO)
        run_session(tb, [SensorKind.LIGHT], 500, faults=faults)
        s = summarize(tb.outcomes)
        assert s.attempted == 500
        assert s.stored + s.discarded == 500
        assert s.discarded_inconsistent == len(faults)
        assert len(join_triples(tb.store, "Light")) == s.stored

    def test_fault_schedule_csv(self, tmp_path):
        sched = random_fault_schedule(100, 0.2, seed=1, kinds=list(Fault))
        save_fault_schedule(sched, tmp_path / "f.csv")
        assert load_fault_schedule(tmp_path / "f.csv") == sched


def _free_port():
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class TestLive:
    def test_bind_twice(self):
        tb = live_mode_bind(0, SCENARIO)
        try:
            with pytest.raises(BindError):
                live_mode_bind(tb.channel.port, SCENARIO)
        finally:
            tb.close()

    def test_matches_emulated(self):
        store_live, store_emu = RecordStore(), RecordStore()
        with live_mode_bind(_free_port(), SCENARIO, store_live) as tb:
            run_session(tb, [SensorKind.MAGNETIC_FIELD], 10)
        with emulated_testbed(SCENARIO, store_emu) as tb:
            run_session(tb, [SensorKind.MAGNETIC_FIELD], 10)
        live = join_triples(store_live, "Magnetic Field")
        emu = join_triples(store_emu, "Magnetic Field")
        assert len(live) == 10
        assert [(t.tt, t.ti, t.dti) for t in live] == [(t.tt, t.ti, t.dti) for t in emu]
        for ev in ("eval1", "eval2"):
            a = evaluate(live, "Magnetic Field", SimilarityMetric.MAE, ev).result
            b = evaluate(emu, "Magnetic Field", SimilarityMetric.MAE, ev).result
            assert (a.eer, a.optimum_threshold, a.counts_at_optimum) == (b.eer, b.optimum_threshold,
                                                                         b.counts_at_optimum)

    def test_corrupted_payload_session_continues(self):
        with live_mode_bind(0, SCENARIO) as tb:
            run_session(tb, [SensorKind.LIGHT], 4, faults={1: Fault.CORRUPT_DTI_PAYLOAD})
            statuses = [o.status for o in tb.outcomes]
        assert statuses == [Status.STORED, Status.DISCARDED_INCOMPLETE, Status.STORED, Status.STORED]
