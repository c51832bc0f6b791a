"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line."""

import bisect
import dataclasses
import math
import time

import numpy as np
import pytest

from proxeval.evaluation import evaluate, sweep
from proxeval.harness import (Fault, Status, emulated_testbed, live_mode_bind, random_fault_schedule,
                              run_transaction, summarize)
from proxeval.persistence import RecordStore, join_triples
from proxeval.preprocess import cross_truncate, grid_length, prepare, resample
from proxeval.reporting import (conservation_lines, read_diagnostics, render_breakdown_table,
                                render_eer_table, render_report)
from proxeval.similarity import SimilarityMetric, covariance, mae, pearson
from proxeval.synth import DIFFERENT_LATENT, generate_dataset, paper_like_scenario
from proxeval.trace_model import DeviceRole, SensorKind, SensorTrace, validate_triple

from published import TABLE_EVAL2_TEXT, published_rows, write_fixture_bundle
from test_evaluation import balanced_set, midpoint_oracle, scored

MAE, CORR = SimilarityMetric.MAE, SimilarityMetric.PEARSON


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\nacceptance criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def _paper_like_without_noise(**changes):
    base = paper_like_scenario()
    locations = tuple(
        dataclasses.replace(loc, sensors={k: dataclasses.replace(v, observation_noise_sigma=0.0,
                                                                 timing_jitter_ms=0.0)
                                          for k, v in loc.sensors.items()})
        for loc in base.locations)
    return base.replace(locations=locations, **changes)


# -- direct-definition oracles (plain Python, no numpy reductions) ----------

def mae_direct(u, v):
    return math.fsum(abs(a - b) for a, b in zip(u, v)) / len(u)


def pearson_direct(u, v):
    n = len(u)
    mu, mv = math.fsum(u) / n, math.fsum(v) / n
    cov = math.fsum((a - mu) * (b - mv) for a, b in zip(u, v)) / n
    su = math.sqrt(math.fsum((a - mu) ** 2 for a in u) / n)
    sv = math.sqrt(math.fsum((b - mv) ** 2 for b in v) / n)
    return cov / (su * sv)


def cov_double_loop(u, v):
    # mean-free pairwise form: cov = sum_i sum_j (u_i - u_j)(v_i - v_j) / (2 N^2)
    n = len(u)
    return math.fsum((u[i] - u[j]) * (v[i] - v[j]) for i in range(n) for j in range(n)) / (2 * n * n)


def interpolant(t, v, x):
    if x <= t[0]:
        return v[0]
    if x >= t[-1]:
        return v[-1]
    k = bisect.bisect_right(t, x) - 1
    return v[k] + (x - t[k]) / (t[k + 1] - t[k]) * (v[k + 1] - v[k])


def test_criterion_1_metric_oracles(verdict):
    rng = np.random.default_rng(101)
    start = time.perf_counter()
    worst = {"mae": 0.0, "pearson": 0.0, "cov": 0.0}
    for _ in range(200):
        n = int(rng.integers(2, 51))
        u = rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 20), n)
        v = rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 20), n)
        lu, lv = u.tolist(), v.tolist()
        for key, got, want in (("mae", mae(u, v).value, mae_direct(lu, lv)),
                               ("pearson", pearson(u, v).value, pearson_direct(lu, lv)),
                               ("cov", covariance(u, v), cov_double_loop(lu, lv))):
            worst[key] = max(worst[key], abs(got - want) / abs(want))
    elapsed = time.perf_counter() - start
    ok = worst["mae"] <= 1e-9 and worst["pearson"] <= 1e-9 and worst["cov"] <= 1e-12 and elapsed < 5.0
    verdict(1, ok, f"max rel err mae={worst['mae']:.1e} pearson={worst['pearson']:.1e} "
                   f"cov={worst['cov']:.1e}; {elapsed:.2f}s")


def _random_corpus(rng, n=100):
    sensors = list(SensorKind)
    corpus = []
    for k in range(n):
        sensor = sensors[k % len(sensors)]
        m = int(rng.integers(2, 80))
        t = np.unique(np.round(rng.uniform(0.0, 600.0, m), 3))
        shape = (len(t), 3) if sensor.is_vector else (len(t),)
        corpus.append(SensorTrace(f"{k:014x}", DeviceRole.TT, sensor, "lab", 0, t,
                                  rng.normal(10.0, 5.0, shape)))
    return corpus


def test_criterion_2_preprocessing_oracle(verdict):
    rng = np.random.default_rng(202)
    corpus = _random_corpus(rng)
    worst, resampled = 0.0, 0
    prepared = [prepare(tr) for tr in corpus]
    for p in prepared:
        if len(p) < 2 or grid_length(p.t_ms[-1]) < 2:
            continue
        r = resample(p)
        t, v = p.t_ms.tolist(), p.values.tolist()
        expected = [interpolant(t, v, x) for x in (np.arange(len(r)) * 10.0).tolist()]
        worst = max(worst, float(np.max(np.abs(r.values - expected))))
        resampled += 1
    idempotent = symmetric = True
    for i, a in enumerate(prepared):
        for b in prepared[i:]:
            a1, b1 = cross_truncate(a, b)
            a2, b2 = cross_truncate(a1, b1)
            b3, a3 = cross_truncate(b, a)
            idempotent &= all(np.array_equal(x, y) for x, y in
                              ((a1.t_ms, a2.t_ms), (a1.values, a2.values), (b1.t_ms, b2.t_ms), (b1.values, b2.values)))
            symmetric &= all(np.array_equal(x, y) for x, y in
                             ((a1.t_ms, a3.t_ms), (a1.values, a3.values), (b1.t_ms, b3.t_ms), (b1.values, b3.values)))
    ok = worst <= 1e-12 and idempotent and symmetric and resampled >= 90
    verdict(2, ok, f"{resampled} traces resampled, max abs err {worst:.1e}; "
                   f"cross_truncate idempotent={idempotent} symmetric={symmetric} over {100 * 101 // 2} pairs")


def test_criterion_3_eer_oracle(verdict):
    rng = np.random.default_rng(303)
    worst = 0.0
    sizes = []
    for k in range(50):
        metric = MAE if k % 2 == 0 else CORR
        pos, neg = balanced_set(rng, metric)
        sizes.append(len(pos) + len(neg))
        eer = sweep(scored(pos, neg, metric)).eer
        worst = max(worst, abs(eer - midpoint_oracle(pos, neg, metric is MAE)))
    ok = worst <= 0.02 and max(sizes) <= 200
    verdict(3, ok, f"50 sets of {min(sizes)}-{max(sizes)} pairs, max |EER - oracle| = {worst:.4f}")


def test_criterion_4_separability_extremes(verdict):
    sc = _paper_like_without_noise(n_transactions=200, co_location_correlation=1.0,
                                   dti_distance_mode=DIFFERENT_LATENT)
    triples = generate_dataset(sc)
    separable = {s.label: evaluate(triples, s, MAE, "eval2").result.eer for s in SensorKind}

    dup = []
    for seed in range(10):
        data = generate_dataset(paper_like_scenario().replace(n_transactions=100, seed=seed))
        relayed = [validate_triple(t.tt, t.ti, t.ti.replace(role=DeviceRole.DTI)) for t in data]
        dup.append(np.mean([evaluate(relayed, s, m, "eval2").result.eer
                            for s in SensorKind for m in (MAE, CORR)]))
    mean_dup = float(np.mean(dup))
    ok = all(f"{e:.3f}" == "0.000" for e in separable.values()) and abs(mean_dup - 0.5) <= 0.05
    verdict(4, ok, f"separable max EER_MAE {max(separable.values()):.3f} over 7 sensors; "
                   f"duplicate-relay mean EER {mean_dup:.3f} over 10 seeds")


def test_criterion_5_published_tables(verdict, tmp_path):
    rows = published_rows()
    eer_table = render_eer_table(rows).splitlines()
    rendered = {}
    for label in TABLE_EVAL2_TEXT:
        line = next(l for l in eer_table if l.startswith(label))
        rendered[label] = " ".join(line[len(label):].split())
    header_ok = eer_table[0].split() == ["Sensor", "Threshold_MAE", "EER_MAE", "Threshold_corr", "EER_corr"]
    table_ok = rendered == TABLE_EVAL2_TEXT

    breakdown = render_breakdown_table(rows).splitlines()
    mag = next(l for l in breakdown if l.startswith("Magnetic Field"))
    breakdown_ok = mag.split()[2:6] == ["630", "618", "390", "378"]

    write_fixture_bundle(tmp_path, rows)
    checks = conservation_lines(rows, "eval2", read_diagnostics(tmp_path / "diagnostics.txt"))
    mag_check = next(c for c in checks if c.startswith("eval2 Magnetic Field MAE"))
    conservation_ok = mag_check.endswith(" ok") and "tp+fn=1008 tn+fp=1008" in mag_check
    report_ok = "Magnetic Field" in render_report(tmp_path)
    ok = header_ok and table_ok and breakdown_ok and conservation_ok and report_ok
    verdict(5, ok, f"row 'Magnetic Field {rendered['Magnetic Field']}', breakdown {mag.split()[2:6]}, "
                   f"'{mag_check}'")


def test_criterion_6_paper_like_relay_eers(verdict):
    sc = paper_like_scenario()
    triples = generate_dataset(sc)
    eers = {(s.label, m.value): evaluate(triples, s, m, "eval2").result.eer
            for s in SensorKind for m in (MAE, CORR)}
    low = min(eers, key=eers.get)
    ok = sc.n_transactions == 1000 and len(sc.locations) == 4 and all(e > 0.25 for e in eers.values())
    verdict(6, ok, f"{len(eers)} combinations, min EER {eers[low]:.3f} ({low[0]} {low[1]})")


def _session(testbed, n, faults):
    sensors = list(SensorKind)
    with testbed:
        for k in range(n):
            run_transaction(testbed, sensors[k % len(sensors)], 500.0, faults.get(k))
    return testbed


def _summaries(store):
    out = {}
    for s in SensorKind:
        triples = join_triples(store, s)
        for ev in ("eval1", "eval2"):
            for m in (MAE, CORR):
                r = evaluate(triples, s, m, ev).result
                out[(s, ev, m)] = (r.eer, r.optimum_threshold, r.counts_at_optimum)
    return out


def test_criterion_7_protocol_harness(verdict):
    sc = paper_like_scenario()
    faults = random_fault_schedule(1000, 0.10, seed=707, kinds=list(Fault))
    emu = _session(emulated_testbed(sc, RecordStore()), 1000, faults)
    live = _session(live_mode_bind(0, sc, RecordStore()), 1000, faults)
    s = summarize(emu.outcomes)
    stored = [o.triple for o in emu.outcomes if o.status is Status.STORED]
    valid = all(validate_triple(t.tt, t.ti, t.dti) == t for t in stored)
    joined = sum(len(join_triples(emu.store, k)) for k in SensorKind)
    same = _summaries(emu.store) == _summaries(live.store)
    ok = s.stored + s.discarded == 1000 and valid and joined == s.stored and same
    verdict(7, ok, f"stored={s.stored} discarded={s.discarded} ({len(faults)} faults), "
                   f"all stored triples valid={valid}, live == emulated summaries: {same}")


def test_criterion_8_performance(verdict):
    triples = generate_dataset(paper_like_scenario())
    start = time.perf_counter()
    one = evaluate(triples, SensorKind.GYROSCOPE, CORR, "eval1")
    single = time.perf_counter() - start
    start = time.perf_counter()
    for ev in ("eval1", "eval2"):
        for s in SensorKind:
            for m in (MAE, CORR):
                assert evaluate(triples, s, m, ev).result is not None
    full = time.perf_counter() - start
    ok = one.exclusions.attempted == 1_000_000 and single < 60.0 and full < 30 * 60
    verdict(8, ok, f"eval1 1000x1000 Gyroscope/corr {single:.1f}s; 7 sensors x 2 metrics x 2 evals {full:.1f}s")
