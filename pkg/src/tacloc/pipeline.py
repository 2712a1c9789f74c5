"""End-to-end wiring of the localization stages.

Stages: align (three-tap sync) -> ROI crop -> schedule segmentation ->
per-trial DBSCAN centroids -> two-ray triangulation -> evaluation.
Per-trial work is independent; an optional thread pool processes trials
concurrently with results merged back in trial order, so the thread
count never changes any output.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cluster import DbscanParams, exclude_press, extract_centroid
from .events import EventStream, crop_roi
from .geometry import (CalibrationResult, DegenerateGeometryError,
                       calibrate, triangulate)
from .ingest import RunConfig, align_streams, detect_sync_taps
from .metrics import EvaluationReport, evaluate
from .segment import PressTrial, press_events, segment_by_schedule


@dataclass(frozen=True)
class TrialResult:
    """Localization outcome for one press trial."""

    press_index: int
    repetition: int
    gt_x_mm: float
    gt_y_mm: float
    est_x_mm: float  # nan when not localized
    est_y_mm: float
    centroid_u1: float
    centroid_u2: float
    centroid_v1: float
    centroid_v2: float
    cluster_size1: int
    cluster_size2: int
    valid: bool
    reason: str  # why the press was excluded; empty when valid


@dataclass(frozen=True)
class PreparedRun:
    """Aligned, ROI-cropped streams plus the schedule time anchor."""

    s1: EventStream
    s2: EventStream
    anchor_s: float
    tap_onsets_s: tuple[float, ...]


def prepare_run(s1: EventStream, s2: EventStream, cfg: RunConfig) -> PreparedRun:
    """Crop to the ROI, align camera 2 onto camera 1, find the tap anchor."""
    c1 = crop_roi(s1, cfg.roi[0], cfg.roi[1])
    c2 = crop_roi(s2, cfg.roi[0], cfg.roi[1])
    a1, a2 = align_streams(c1, c2, cfg.sync)
    taps = detect_sync_taps(a1, cfg.sync)
    return PreparedRun(a1, a2, float(taps[0]), tuple(float(t) for t in taps))


def cluster_params(cfg: RunConfig) -> DbscanParams:
    return DbscanParams(eps=cfg.cluster_eps_px,
                        min_samples=cfg.cluster_min_samples,
                        min_cluster_points=cfg.cluster_min_points)


def localize_trial(trial: PressTrial, models, params: DbscanParams) -> TrialResult:
    """Cluster both camera views of one trial and triangulate the press."""
    gx, gy = trial.ground_truth_mm
    if trial.missing:
        return TrialResult(trial.press_index, trial.repetition, gx, gy,
                           float("nan"), float("nan"), float("nan"),
                           float("nan"), float("nan"), float("nan"),
                           0, 0, False, "missing")
    ev1 = press_events(trial, 1)
    ev2 = press_events(trial, 2)
    r1 = extract_centroid(ev1.u, ev1.v, params)
    r2 = extract_centroid(ev2.u, ev2.v, params)
    check = exclude_press(r1, r2)
    est = (float("nan"), float("nan"))
    valid = check.passed
    reason = check.reason
    if check.passed:
        try:
            tri = triangulate(models[0], r1.centroid_u, models[1], r2.centroid_u)
            est = (tri.x_mm, tri.y_mm)
        except DegenerateGeometryError:
            valid = False
            reason = "degenerate triangulation"
    return TrialResult(trial.press_index, trial.repetition, gx, gy,
                       est[0], est[1], r1.centroid_u, r2.centroid_u,
                       r1.centroid_v, r2.centroid_v,
                       r1.largest_cluster_size, r2.largest_cluster_size,
                       valid, reason)


def localize_trials(trials, models, params: DbscanParams,
                    threads: int = 1) -> list[TrialResult]:
    if threads <= 1:
        return [localize_trial(t, models, params) for t in trials]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda t: localize_trial(t, models, params), trials))


def probed_area_mm2(cfg: RunConfig) -> float:
    """Area of the probed grid region: bounding box padded by one spacing."""
    pts = cfg.layout.grid_points
    pad = cfg.layout.grid_spacing_mm
    return float((np.ptp(pts[:, 0]) + pad) * (np.ptp(pts[:, 1]) + pad))


def evaluate_results(results: list[TrialResult], cfg: RunConfig,
                     reference_p95_mm: float | None = None) -> EvaluationReport:
    est = np.array([[r.est_x_mm, r.est_y_mm] for r in results])
    gt = np.array([[r.gt_x_mm, r.gt_y_mm] for r in results])
    valid = np.array([r.valid for r in results], dtype=bool)
    pidx = np.array([r.press_index for r in results], dtype=np.int64)
    reps = np.array([r.repetition for r in results], dtype=np.int64)
    return evaluate(est, gt, valid, pidx, reps,
                    diagonal_mm=cfg.layout.diagonal_mm,
                    full_area_mm2=cfg.layout.area_mm2,
                    probed_area_mm2=probed_area_mm2(cfg),
                    reference_p95_mm=reference_p95_mm)


def run_localization(prepared: PreparedRun, cfg: RunConfig,
                     models=None, threads: int = 1,
                     reference_p95_mm: float | None = None,
                     ) -> tuple[EvaluationReport, list[TrialResult], list[PressTrial]]:
    """Segment, localize, and score one prepared recording."""
    models = cfg.camera_models if models is None else models
    trials = segment_by_schedule(prepared.s1, prepared.s2, cfg.schedule,
                                 baseline_s=cfg.baseline_s,
                                 anchor_s=prepared.anchor_s)
    results = localize_trials(trials, models, cluster_params(cfg), threads)
    report = evaluate_results(results, cfg, reference_p95_mm)
    return report, results, trials


def calibration_observations(results: list[TrialResult], cfg: RunConfig,
                             repetition: int = 0):
    """(u1, u2, ground truth) from one repetition's valid, non-excluded trials."""
    banned = set(cfg.exclude_presses)
    rows = [r for r in results
            if r.valid and r.repetition == repetition
            and r.press_index not in banned]
    u1 = np.array([r.centroid_u1 for r in rows])
    u2 = np.array([r.centroid_u2 for r in rows])
    gt = np.array([[r.gt_x_mm, r.gt_y_mm] for r in rows])
    return u1, u2, gt


def run_calibration(prepared: PreparedRun, cfg: RunConfig,
                    threads: int = 1) -> tuple[CalibrationResult, list[TrialResult]]:
    """Fit camera parameters on repetition 0 of a prepared recording."""
    trials = segment_by_schedule(prepared.s1, prepared.s2, cfg.schedule,
                                 baseline_s=cfg.baseline_s,
                                 anchor_s=prepared.anchor_s)
    rep0 = [t for t in trials if t.repetition == 0]
    results = localize_trials(rep0, cfg.camera_models, cluster_params(cfg),
                              threads)
    u1, u2, gt = calibration_observations(results, cfg, repetition=0)
    fit = calibrate(cfg.camera_models, u1, u2, gt, free=cfg.calibration_free)
    return fit, results


def retriangulate(results: list[TrialResult], models) -> list[TrialResult]:
    """Re-run only the triangulation stage with different camera models.

    Centroids are model-independent, so sensitivity studies can reuse the
    clustering work.
    """
    out = []
    for r in results:
        if not r.valid and r.reason != "degenerate triangulation":
            out.append(r)
            continue
        try:
            tri = triangulate(models[0], r.centroid_u1, models[1], r.centroid_u2)
            out.append(TrialResult(r.press_index, r.repetition, r.gt_x_mm,
                                   r.gt_y_mm, tri.x_mm, tri.y_mm,
                                   r.centroid_u1, r.centroid_u2,
                                   r.centroid_v1, r.centroid_v2,
                                   r.cluster_size1, r.cluster_size2,
                                   True, ""))
        except DegenerateGeometryError:
            out.append(TrialResult(r.press_index, r.repetition, r.gt_x_mm,
                                   r.gt_y_mm, float("nan"), float("nan"),
                                   r.centroid_u1, r.centroid_u2,
                                   r.centroid_v1, r.centroid_v2,
                                   r.cluster_size1, r.cluster_size2,
                                   False, "degenerate triangulation"))
    return out
