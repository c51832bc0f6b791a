import numpy as np
import pytest

from proxeval.synth import LocationProfile, SensorProfile, SynthScenario
from proxeval.trace_model import DeviceRole, SensorKind, SensorTrace

TID = "0a0b0c0d0e0f10"


def make_trace(t, v, role="TT", sensor=SensorKind.LIGHT, tid=TID, location="lab", epoch=0):
    return SensorTrace(tid, DeviceRole(role), SensorKind.parse(sensor), location, epoch, t, v)


def make_profile(**kw):
    params = dict(base_level=40.0, drift_rate=2.0, event_rate=20.0, event_magnitude=1.0,
                  event_duration_ms=30.0, max_rate_hz=100.0)
    params.update(kw)
    return SensorProfile(**params)


def make_scenario(sensors=(SensorKind.MAGNETIC_FIELD,), n=8, n_locations=2, seed=7,
                  mode="same_room_offset", rho=1.0, **profile_kw):
    locations = tuple(
        LocationProfile(f"loc{k}", {SensorKind.parse(s): make_profile(base_level=30.0 + 5 * k, **profile_kw)
                                    for s in sensors})
        for k in range(n_locations)
    )
    return SynthScenario(n, tuple(sensors), locations, mode, rho, seed)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
