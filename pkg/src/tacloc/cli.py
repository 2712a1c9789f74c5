"""Command-line entry point for reproducible batch runs.

Subcommands: simulate | localize | calibrate | ablate | latency.
Exit codes: 0 ok, 2 config/input error, 3 sync failure, 4 no valid
presses, 5 calibration failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ablate as ablate_mod
from . import latency as latency_mod
from . import pipeline, synth
from .geometry import CalibrationError, CameraModel
from .ingest import (IngestError, RunConfig, SyncError, load_config,
                     read_events, write_events)
from .metrics import UndefinedMetricError

log = logging.getLogger("tacloc")

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_SYNC = 3
EXIT_NO_PRESSES = 4
EXIT_CALIBRATION = 5


@dataclass
class CommandOutcome:
    exit_code: int
    report_paths: list[str] = field(default_factory=list)
    stage_timings_s: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


class _Timer:
    def __init__(self, outcome: CommandOutcome):
        self.outcome = outcome

    def stage(self, name):
        outer = self

        class _Ctx:
            def __enter__(self_inner):
                self_inner.t0 = time.perf_counter()

            def __exit__(self_inner, *exc):
                dt = time.perf_counter() - self_inner.t0
                outer.outcome.stage_timings_s[name] = round(dt, 3)
                log.info("stage %-12s %.3fs", name, dt)
                return False

        return _Ctx()


def _write_json(path: Path, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        w = csv.DictWriter(fh, fieldnames=columns)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k))
                        for k in columns})


def _load_run_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    log.info("effective seed: %d", cfg.seed)
    return cfg


def _load_streams(cfg: RunConfig):
    if not cfg.cam1_path or not cfg.cam2_path:
        raise IngestError("config must point at both camera files")
    s1 = read_events(cfg.cam1_path, 1, cfg.file_format)
    s2 = read_events(cfg.cam2_path, 2, cfg.file_format)
    return s1, s2


def _synth_spec(cfg: RunConfig) -> synth.SynthSpec:
    return synth.spec_from_config(cfg.layout, cfg.schedule, cfg.sync,
                                  cfg.camera_models, cfg.roi, cfg.seed,
                                  cfg.synth)


def cmd_simulate(args) -> CommandOutcome:
    out = CommandOutcome(EXIT_OK)
    timer = _Timer(out)
    cfg = _load_run_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = _synth_spec(cfg)
    log.info("simulating %d presses with seed %d", len(spec.schedule), spec.seed)
    with timer.stage("generate"):
        s1, s2, manifest = synth.generate(spec)
    fmt = cfg.file_format
    suffix = ".evt" if fmt == "bin" else ".csv"
    p1 = out_dir / f"cam1{suffix}"
    p2 = out_dir / f"cam2{suffix}"
    pm = out_dir / "truth_manifest.json"
    with timer.stage("write"):
        write_events(s1, p1, fmt)
        write_events(s2, p2, fmt)
        synth.write_manifest(manifest, pm)
    out.report_paths = [str(p1), str(p2), str(pm)]
    return out


def _result_rows(results) -> list[dict]:
    rows = []
    for r in results:
        rows.append({
            "press_index": r.press_index,
            "repetition": r.repetition,
            "gt_x_mm": r.gt_x_mm, "gt_y_mm": r.gt_y_mm,
            "est_x_mm": None if not r.valid else r.est_x_mm,
            "est_y_mm": None if not r.valid else r.est_y_mm,
            "centroid_u1": None if np.isnan(r.centroid_u1) else r.centroid_u1,
            "centroid_u2": None if np.isnan(r.centroid_u2) else r.centroid_u2,
            "cluster_size1": r.cluster_size1,
            "cluster_size2": r.cluster_size2,
            "valid": int(r.valid),
            "reason": r.reason,
        })
    return rows


_RESULT_COLUMNS = ["press_index", "repetition", "gt_x_mm", "gt_y_mm",
                   "est_x_mm", "est_y_mm", "centroid_u1", "centroid_u2",
                   "cluster_size1", "cluster_size2", "valid", "reason"]


def cmd_localize(args) -> CommandOutcome:
    out = CommandOutcome(EXIT_OK)
    timer = _Timer(out)
    cfg = _load_run_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with timer.stage("read"):
        s1, s2 = _load_streams(cfg)
    with timer.stage("align"):
        prepared = pipeline.prepare_run(s1, s2, cfg)
    log.info("tap onsets: %s", [round(t, 3) for t in prepared.tap_onsets_s])
    models = _models_override(args, cfg)
    with timer.stage("localize"):
        report, results, _ = pipeline.run_localization(
            prepared, cfg, models=models, threads=args.threads)
    p_csv = out_dir / "localization.csv"
    p_json = out_dir / "evaluation.json"
    _write_csv(p_csv, _result_rows(results), _RESULT_COLUMNS)
    _write_json(p_json, report.to_json_dict())
    out.report_paths = [str(p_csv), str(p_json)]
    log.info("rmse %.3f mm, pass rate %.1f%% (%d/%d valid)", report.rmse_mm,
             report.pass_rate_percent, report.n_valid, report.n_presses)
    return out


def _models_override(args, cfg):
    path = getattr(args, "models", None)
    if not path:
        return None
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    cams = doc["cameras"] if isinstance(doc, dict) else doc
    return (CameraModel.from_dict(cams[0]), CameraModel.from_dict(cams[1]))


def cmd_calibrate(args) -> CommandOutcome:
    out = CommandOutcome(EXIT_OK)
    timer = _Timer(out)
    cfg = _load_run_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with timer.stage("read"):
        s1, s2 = _load_streams(cfg)
    with timer.stage("align"):
        prepared = pipeline.prepare_run(s1, s2, cfg)
    with timer.stage("calibrate"):
        fit, _ = pipeline.run_calibration(prepared, cfg, threads=args.threads)
    res = fit.residuals_mm
    finite = res[~np.isnan(res[:, 0])]
    norms = np.hypot(finite[:, 0], finite[:, 1]) if len(finite) else np.zeros(0)
    doc = {
        "schema_version": 1,
        "cameras": [m.to_dict() for m in fit.models],
        "fit": {
            "rmse_mm": fit.rmse_mm,
            "initial_rmse_mm": fit.initial_rmse_mm,
            "iterations": fit.iterations,
            "converged": fit.converged,
            "n_observations": int(len(res)),
            "n_degenerate": fit.n_degenerate,
            "residual_percentiles_mm": {
                "p50": float(np.percentile(norms, 50)) if len(norms) else None,
                "p90": float(np.percentile(norms, 90)) if len(norms) else None,
                "p95": float(np.percentile(norms, 95)) if len(norms) else None,
            },
        },
    }
    p = out_dir / "calibrated_models.json"
    _write_json(p, doc)
    out.report_paths = [str(p)]
    log.info("calibration rmse %.4f mm (was %.4f) in %d iterations",
             fit.rmse_mm, fit.initial_rmse_mm, fit.iterations)
    return out


def cmd_ablate(args) -> CommandOutcome:
    out = CommandOutcome(EXIT_OK)
    timer = _Timer(out)
    cfg = _load_run_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    factors = [int(x) for x in args.factors.split(",")]
    seeds = [int(x) for x in args.seeds.split(",")]
    with timer.stage("read"):
        s1, s2 = _load_streams(cfg)
    with timer.stage("align"):
        prepared = pipeline.prepare_run(s1, s2, cfg)
    models = _models_override(args, cfg) or cfg.camera_models
    with timer.stage("baseline"):
        report, _, _ = pipeline.run_localization(
            prepared, cfg, models=models, threads=args.threads)
    with timer.stage("sweep"):
        sweep = ablate_mod.run_sweep(prepared, cfg, models, factors, seeds,
                                     reference_p95_mm=report.reference_p95_mm,
                                     threads=args.threads)
    p_csv = out_dir / "ablation.csv"
    p_json = out_dir / "ablation_curve.json"
    _write_csv(p_csv, sweep.csv_rows(),
               ["k", "seed", "rmse_mm", "pass_rate_percent",
                "mean_cluster_size", "n_valid"])
    _write_json(p_json, {"schema_version": 1,
                         "reference_p95_mm": sweep.reference_p95_mm,
                         "curve": sweep.curve()})
    out.report_paths = [str(p_csv), str(p_json)]
    return out


def cmd_latency(args) -> CommandOutcome:
    out = CommandOutcome(EXIT_OK)
    timer = _Timer(out)
    cfg = _load_run_config(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with timer.stage("read"):
        s1, s2 = _load_streams(cfg)
    with timer.stage("align"):
        prepared = pipeline.prepare_run(s1, s2, cfg)
    from .segment import segment_by_schedule
    trials = segment_by_schedule(prepared.s1, prepared.s2, cfg.schedule,
                                 baseline_s=cfg.baseline_s,
                                 anchor_s=prepared.anchor_s)
    trials = [t for t in trials if not t.missing]
    params = latency_mod.CusumParams(
        **{k: v for k, v in cfg.latency.items() if k != "h"})
    snippets = latency_mod.trial_background_snippets(trials)
    roc = []
    if args.tune or args.h is None:
        with timer.stage("tune"):
            tuned = latency_mod.tune_threshold(trials, snippets, params)
        params = replace(params, h=tuned.h)
        roc = tuned.roc
        log.info("tuned h = %.4g (tpr %.1f%%)", tuned.h, 100 * tuned.tpr)
    else:
        params = replace(params, h=float(args.h))
    with timer.stage("report"):
        rep = latency_mod.latency_report(trials, params, snippets)
    p_json = out_dir / "latency.json"
    p_onsets = out_dir / "onsets.csv"
    p_roc = out_dir / "roc.csv"
    _write_json(p_json, rep.to_json_dict())
    _write_csv(p_onsets,
               [{"trial": i, "onset_rel_median_s": o}
                for i, o in enumerate(rep.onsets_rel_median_s)],
               ["trial", "onset_rel_median_s"])
    _write_csv(p_roc,
               [{"h": r.h, "tpr": r.tpr, "false_alarms_per_s": r.false_alarms_per_s}
                for r in roc],
               ["h", "tpr", "false_alarms_per_s"])
    out.report_paths = [str(p_json), str(p_onsets), str(p_roc)]
    log.info("latency width %.1f ms, tpr %.1f%%, fa %.3f/s",
             rep.latency_width_ms, 100 * rep.tpr, rep.false_alarm_rate_per_s)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="tacloc",
        description="Event-camera opto-tactile press localization pipeline")
    ap.add_argument("--log-level", default="info",
                    choices=["debug", "info", "warning", "error"])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")

    p = sub.add_parser("simulate", help="generate a synthetic recording")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("localize", help="run the localization pipeline")
    common(p)
    p.add_argument("--models", help="calibrated models JSON to use")
    p.set_defaults(func=cmd_localize)

    p = sub.add_parser("calibrate", help="fit camera models on repetition 0")
    common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("ablate", help="thinning sweep over reduction factors")
    common(p)
    p.add_argument("--models", help="calibrated models JSON to use")
    p.add_argument("--factors", default="1,2,4,8,16,32,64,128,256,512,1024")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("latency", help="CUSUM onset-latency analysis")
    common(p)
    p.add_argument("--h", type=float, default=None, help="fixed threshold")
    p.add_argument("--tune", action="store_true",
                   help="tune the threshold by ROC analysis")
    p.set_defaults(func=cmd_latency)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        outcome = args.func(args)
    except SyncError as exc:
        log.error("sync failure: %s", exc)
        return EXIT_SYNC
    except UndefinedMetricError as exc:
        log.error("no valid presses: %s", exc)
        return EXIT_NO_PRESSES
    except CalibrationError as exc:
        log.error("calibration failed: %s", exc)
        return EXIT_CALIBRATION
    except latency_mod.TuningError as exc:
        log.error("threshold tuning failed: %s", exc)
        return EXIT_OTHER
    except (IngestError, FileNotFoundError, IOError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("unexpected failure: %s", exc, exc_info=True)
        return EXIT_OTHER
    for p in outcome.report_paths:
        log.info("wrote %s", p)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
