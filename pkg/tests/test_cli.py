from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest

from tacloc.cli import main


def base_config(tmp_path: Path, **extra) -> Path:
    doc = {
        "seed": 17,
        "files": {"cam1": "cam1.evt", "cam2": "cam2.evt", "format": "bin"},
        "layout": {"grid_cols": 4, "grid_rows": 3, "repetitions": 2,
                   "grid_origin_mm": [40.0, 40.0]},
        "schedule": {"onset0_s": 5.0, "period_s": 1.5, "repetitions": 2},
        "synth": {
            "burst_events_per_press_per_camera": 2500,
            "background_rate_per_camera": 600,
        },
    }
    doc.update(extra)
    p = tmp_path / "run.json"
    p.write_text(json.dumps(doc, indent=1))
    return p


def digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfgp = base_config(tmp)
    assert main(["simulate", "--config", str(cfgp), "--out", str(tmp)]) == 0
    return tmp, cfgp


class TestSimulate:
    def test_writes_streams_and_manifest(self, sim_dir):
        tmp, _ = sim_dir
        assert (tmp / "cam1.evt").exists()
        assert (tmp / "cam2.evt").exists()
        manifest = json.loads((tmp / "truth_manifest.json").read_text())
        assert len(manifest["presses"]) == 24

    def test_deterministic_rerun(self, sim_dir, tmp_path):
        tmp, cfgp = sim_dir
        out2 = tmp_path / "again"
        assert main(["simulate", "--config", str(cfgp), "--out", str(out2)]) == 0
        assert digest(tmp / "cam1.evt") == digest(out2 / "cam1.evt")
        assert digest(tmp / "cam2.evt") == digest(out2 / "cam2.evt")

    def test_seed_override_changes_files(self, sim_dir, tmp_path):
        tmp, cfgp = sim_dir
        out2 = tmp_path / "seeded"
        assert main(["simulate", "--config", str(cfgp), "--out", str(out2),
                     "--seed", "99"]) == 0
        assert digest(tmp / "cam1.evt") != digest(out2 / "cam1.evt")

    def test_invalid_json_exit_2(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{ nope")
        assert main(["simulate", "--config", str(bad),
                     "--out", str(tmp_path)]) == 2


class TestLocalize:
    def test_reports_written(self, sim_dir, tmp_path):
        tmp, cfgp = sim_dir
        out = tmp_path / "loc"
        assert main(["localize", "--config", str(cfgp), "--out", str(out)]) == 0
        rows = (out / "localization.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 24
        rep = json.loads((out / "evaluation.json").read_text())
        assert rep["n_presses"] == 24
        assert rep["rmse_mm"] < 1.0
        assert rep["schema_version"] == 1

    def test_missing_camera_file_exit_2(self, sim_dir, tmp_path):
        # config points at files that do not exist next to it
        cfgp = base_config(tmp_path)
        assert main(["localize", "--config", str(cfgp),
                     "--out", str(tmp_path / "out")]) == 2

    def test_determinism_and_threads(self, sim_dir, tmp_path):
        tmp, cfgp = sim_dir
        outs = []
        for name, threads in (("a", "1"), ("b", "1"), ("c", "3")):
            out = tmp_path / name
            assert main(["localize", "--config", str(cfgp), "--out", str(out),
                         "--threads", threads]) == 0
            outs.append((digest(out / "localization.csv"),
                         digest(out / "evaluation.json")))
        assert outs[0] == outs[1] == outs[2]


class TestCalibrate:
    def test_calibration_run(self, sim_dir, tmp_path):
        tmp, cfgp = sim_dir
        doc = json.loads(cfgp.read_text())
        doc["cameras"] = [
            {"x_mm": 2.0, "y_mm": -1.0, "orientation_rad": 0.7853981633974483,
             "skew_rad": 0.02, "focal_px": 320.0, "u_center": 319.5, "k1": 0.0},
            {"x_mm": 99.0, "y_mm": 1.0, "orientation_rad": 2.356194490192345,
             "skew_rad": -0.02, "focal_px": 320.0, "u_center": 319.5, "k1": 0.0},
        ]
        cfg2 = tmp / "cal.json"  # next to the simulated event files
        cfg2.write_text(json.dumps(doc))
        out = tmp_path / "cal"
        assert main(["calibrate", "--config", str(cfg2), "--out", str(out)]) == 0
        fit = json.loads((out / "calibrated_models.json").read_text())
        assert fit["fit"]["rmse_mm"] < fit["fit"]["initial_rmse_mm"]
        assert len(fit["cameras"]) == 2

        # calibrated models feed back into localize
        out2 = tmp_path / "loc_cal"
        assert main(["localize", "--config", str(cfg2), "--out", str(out2),
                     "--models", str(out / "calibrated_models.json")]) == 0
        rep = json.loads((out2 / "evaluation.json").read_text())
        assert rep["rmse_mm"] < 0.5


class TestAblate:
    def test_sweep_outputs(self, sim_dir, tmp_path):
        tmp, cfgp = sim_dir
        out = tmp_path / "abl"
        assert main(["ablate", "--config", str(cfgp), "--out", str(out),
                     "--factors", "1,4", "--seeds", "0,1"]) == 0
        rows = (out / "ablation.csv").read_text().strip().splitlines()
        assert len(rows) == 1 + 4
        curve = json.loads((out / "ablation_curve.json").read_text())
        assert [c["k"] for c in curve["curve"]] == [1, 4]

    def test_rerun_identical(self, sim_dir, tmp_path):
        tmp, cfgp = sim_dir
        twice = []
        for name in ("r1", "r2"):
            out = tmp_path / name
            assert main(["ablate", "--config", str(cfgp), "--out", str(out),
                         "--factors", "1,8", "--seeds", "0", "--threads",
                         "2" if name == "r2" else "1"]) == 0
            twice.append(digest(out / "ablation.csv"))
        assert twice[0] == twice[1]


class TestLatencyCmd:
    def test_fixed_threshold(self, sim_dir, tmp_path):
        tmp, cfgp = sim_dir
        out = tmp_path / "lat"
        assert main(["latency", "--config", str(cfgp), "--out", str(out),
                     "--h", "4.0"]) == 0
        rep = json.loads((out / "latency.json").read_text())
        assert rep["n_trials"] == 24
        assert rep["tpr"] > 0.9
        assert (out / "onsets.csv").exists()
        assert (out / "roc.csv").exists()

    def test_tuned_threshold_emits_roc(self, sim_dir, tmp_path):
        tmp, cfgp = sim_dir
        out = tmp_path / "lat_tuned"
        assert main(["latency", "--config", str(cfgp), "--out", str(out),
                     "--tune"]) == 0
        roc = (out / "roc.csv").read_text().strip().splitlines()
        assert len(roc) > 10
        rep = json.loads((out / "latency.json").read_text())
        assert rep["tpr"] >= 0.95
