import hashlib
import re

import pytest

from proxeval import cli
from proxeval.evaluation import ConfusionCounts
from proxeval.persistence import RecordStore, join_triples
from proxeval.reporting import (NothingToReport, SummaryRow, conservation_lines, format_threshold,
                                render_breakdown_table, render_eer_table, render_report)
from proxeval.similarity import SimilarityMetric
from proxeval.synth import save_scenario
from proxeval.trace_model import SensorKind

from conftest import make_scenario
from published import (TABLE_EVAL1_TEXT, TABLE_EVAL2_TEXT, published_rows, rows_from_text,
                       write_fixture_bundle)

MAE, CORR = SimilarityMetric.MAE, SimilarityMetric.PEARSON

class TestFormatting:
    @pytest.mark.parametrize("x,text", [(88.12, "88.12"), (0.389, "0.389"), (-0.013, "-0.013"),
                                        (1.0e-06, "1.00e-06"), (3.02e-08, "3.02e-08"), (230.9, "230.9"),
                                        (2.961, "2.961"), (0.0, "0.000")])
    def test_threshold(self, x, text):
        assert format_threshold(x) == text

    def test_published_eer_table(self):
        text = render_eer_table(published_rows())
        lines = text.splitlines()
        assert lines[0].split() == ["Sensor", "Threshold_MAE", "EER_MAE", "Threshold_corr", "EER_corr"]
        for label, expected in TABLE_EVAL2_TEXT.items():
            line = next(l for l in lines if l.startswith(label))
            assert " ".join(line[len(label):].split()) == expected
        assert re.search(r"^Magnetic Field\s+88\.12\s+0\.389\s+0\.038\s+0\.512$", text, re.M)

    def test_published_proximity_table(self):
        lines = render_eer_table(rows_from_text(TABLE_EVAL1_TEXT)).splitlines()
        for label, expected in TABLE_EVAL1_TEXT.items():
            line = next(l for l in lines if l.startswith(label))
            assert " ".join(line[len(label):].split()) == expected

    def test_published_breakdown_row(self):
        text = render_breakdown_table(published_rows())
        line = next(l for l in text.splitlines() if l.startswith("Magnetic Field"))
        assert line.split()[2:] == ["630", "618", "390", "378", "511", "492", "516", "497"]

    def test_conservation_lines(self, tmp_path):
        write_fixture_bundle(tmp_path, published_rows())
        from proxeval.reporting import read_diagnostics
        lines = conservation_lines(published_rows(), "eval2", read_diagnostics(tmp_path / "diagnostics.txt"))
        assert "eval2 Magnetic Field MAE: tp+fn=1008 tn+fp=1008 expected=1008/1008 ok" in lines
        assert all(l.endswith(" ok") for l in lines)

    def test_conservation_mismatch_flagged(self):
        row = SummaryRow(SensorKind.LIGHT, MAE, 1.0, 0.5, ConfusionCounts(1, 1, 1, 1))
        diag = [{"eval": "eval2", "sensor": "Light", "metric": "MAE", "positives": "3", "negatives": "2"}]
        assert conservation_lines([row], "eval2", diag)[0].endswith("MISMATCH")

    def test_nothing_to_report(self, tmp_path):
        with pytest.raises(NothingToReport):
            render_report(tmp_path)


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def digest(directory):
    h = hashlib.sha256()
    for p in sorted(directory.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(directory).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


@pytest.fixture
def small_scenario(tmp_path):
    path = tmp_path / "scenario.json"
    save_scenario(make_scenario(sensors=(SensorKind.MAGNETIC_FIELD, SensorKind.LIGHT), n=12,
                                observation_noise_sigma=0.2, timing_jitter_ms=2.0, rho=0.6,
                                room_offset_sigma=1.0), path)
    return path


class TestCli:
    def test_report_published_fixture(self, tmp_path, capsys):
        write_fixture_bundle(tmp_path / "run", published_rows())
        code, out, _ = run(capsys, "report", "--out", tmp_path / "run")
        assert code == 0
        assert re.search(r"^Magnetic Field\s+88\.12\s+0\.389\s+0\.038\s+0\.512$", out, re.M)
        assert re.search(r"^Magnetic Field\s+630\s+618\s+390\s+378\s+511\s+492\s+516\s+497$", out, re.M)
        assert "eval2 Magnetic Field MAE: tp+fn=1008 tn+fp=1008 expected=1008/1008 ok" in out

    def test_report_empty_dir(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        code, _, err = run(capsys, "report", "--out", tmp_path / "empty")
        assert code == 1
        assert err.startswith("proxeval: error: NothingToReport:") and err.count("\n") == 1

    def test_synth_paper_like_seven_by_hundred(self, tmp_path, capsys):
        code, out, _ = run(capsys, "synth", "--store", tmp_path / "s", "--n-transactions", 100)
        assert code == 0 and "wrote 700 transactions" in out
        store = RecordStore(tmp_path / "s")
        assert sum(len(join_triples(store, s)) for s in SensorKind) == 700

    def test_synth_byte_identical(self, tmp_path, capsys, small_scenario):
        for name in ("a", "b"):
            assert run(capsys, "synth", "--scenario", small_scenario, "--store", tmp_path / name)[0] == 0
        assert digest(tmp_path / "a") == digest(tmp_path / "b")
        run(capsys, "synth", "--scenario", small_scenario, "--store", tmp_path / "c", "--seed", 99)
        assert digest(tmp_path / "a") != digest(tmp_path / "c")

    def test_missing_scenario(self, tmp_path, capsys):
        code, _, err = run(capsys, "synth", "--scenario", tmp_path / "absent.json", "--store", tmp_path / "s")
        assert code == 1
        assert "ConfigError" in err and "absent.json" in err

    def test_store_must_be_fresh(self, tmp_path, capsys, small_scenario):
        run(capsys, "synth", "--scenario", small_scenario, "--store", tmp_path / "s")
        code, _, err = run(capsys, "synth", "--scenario", small_scenario, "--store", tmp_path / "s")
        assert code == 1 and "IoError" in err

    def test_evaluate_deterministic(self, tmp_path, capsys, small_scenario):
        run(capsys, "synth", "--scenario", small_scenario, "--store", tmp_path / "s")
        for name in ("r1", "r2"):
            code, out, _ = run(capsys, "evaluate", "--store", tmp_path / "s", "--out", tmp_path / name)
            assert code == 0
        assert digest(tmp_path / "r1") == digest(tmp_path / "r2")
        files = sorted(p.relative_to(tmp_path / "r1").as_posix() for p in (tmp_path / "r1").rglob("*.*"))
        assert "summary_eval1.csv" in files and "summary_eval2.csv" in files and "diagnostics.txt" in files
        assert "curves/magnetic_field_mae_eval1.csv" in files and "curves/light_corr_eval2.csv" in files
        assert len([f for f in files if f.startswith("curves/")]) == 8

    def test_separable_store_all_zero(self, tmp_path, capsys):
        path = tmp_path / "sep.json"
        save_scenario(make_scenario(sensors=(SensorKind.MAGNETIC_FIELD, SensorKind.LIGHT), n=20,
                                    mode="different_latent", rho=1.0), path)
        run(capsys, "synth", "--scenario", path, "--store", tmp_path / "s")
        code, out, _ = run(capsys, "evaluate", "--store", tmp_path / "s", "--out", tmp_path / "r")
        assert code == 0
        checked = 0
        for line in out.splitlines():
            for label in ("Magnetic Field", "Light"):
                cells = line[len(label):].split() if line.startswith(label) else []
                if len(cells) == 4:
                    # threshold/EER rows: EER_MAE and EER_corr columns
                    assert cells[1] == cells[3] == "0.000"
                    checked += 1
        assert checked == 4

    def test_default_output_dir(self, tmp_path, capsys, small_scenario, monkeypatch):
        monkeypatch.setenv("PROXEVAL_OUT", str(tmp_path / "runs"))
        run(capsys, "synth", "--scenario", small_scenario, "--store", tmp_path / "mystore")
        assert run(capsys, "evaluate", "--store", tmp_path / "mystore", "--evals", "eval2")[0] == 0
        assert (tmp_path / "runs" / "eval-mystore" / "summary_eval2.csv").exists()
        code, out, _ = run(capsys, "report", "--store", tmp_path / "mystore")
        assert code == 0 and "Label conservation" in out

    def test_insufficient_sensor_skipped(self, tmp_path, capsys, small_scenario):
        run(capsys, "synth", "--scenario", small_scenario, "--store", tmp_path / "s", "--n-transactions", 1)
        code, out, _ = run(capsys, "evaluate", "--store", tmp_path / "s", "--out", tmp_path / "r")
        assert code == 0 and "InsufficientData" in out
        assert "InsufficientData" in (tmp_path / "r" / "diagnostics.txt").read_text()

    def test_simulate_with_faults(self, tmp_path, capsys, small_scenario):
        (tmp_path / "faults.csv").write_text("index,fault\n0,corrupt_response\n3,drop_dti_broadcast\n")
        code, out, _ = run(capsys, "simulate", "--scenario", small_scenario, "--store", tmp_path / "s",
                           "--faults", tmp_path / "faults.csv")
        assert code == 0
        assert "attempted=24 stored=22 discarded_inconsistent=1 discarded_incomplete=1" in out

    def test_simulate_live(self, tmp_path, capsys, small_scenario):
        code, out, _ = run(capsys, "simulate", "--scenario", small_scenario, "--store", tmp_path / "s",
                           "--n-transactions", 3, "--live-port", 0)
        assert code == 0 and "live (port" in out and "stored=6" in out

    @pytest.mark.parametrize("fmt", ["jsonl", "csv"])
    def test_export_ingest(self, tmp_path, capsys, small_scenario, fmt):
        run(capsys, "synth", "--scenario", small_scenario, "--store", tmp_path / "s")
        assert run(capsys, "export", "--store", tmp_path / "s", "--output", tmp_path / f"x.{fmt}")[0] == 0
        assert run(capsys, "ingest", "--input", tmp_path / f"x.{fmt}", "--store", tmp_path / "t")[0] == 0
        for s in ("Magnetic Field", "Light"):
            a = join_triples(RecordStore(tmp_path / "s"), s)
            b = join_triples(RecordStore(tmp_path / "t"), s)
            assert [(x.tt, x.ti, x.dti) for x in a] == [(x.tt, x.ti, x.dti) for x in b]

    def test_ingest_parse_error(self, tmp_path, capsys):
        (tmp_path / "bad.jsonl").write_text("{}\n")
        code, _, err = run(capsys, "ingest", "--input", tmp_path / "bad.jsonl", "--store", tmp_path / "t")
        assert code == 1 and "ParseError" in err and "bad.jsonl:1" in err

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            cli.main(["evaluate", "--bogus"])
        assert exc.value.code == 2

    def test_bad_recording_ms(self, tmp_path, capsys):
        code, _, err = run(capsys, "synth", "--store", tmp_path / "s", "--recording-ms", 0)
        assert code == 1 and "recording-ms" in err

    def test_missing_store(self, tmp_path, capsys):
        code, _, err = run(capsys, "evaluate", "--store", tmp_path / "nowhere", "--out", tmp_path / "r")
        assert code == 1 and err.startswith("proxeval: error: IoError:")
