"""Press-onset detection from combined-camera event rates.

Fine binning, Gaussian smoothing, per-trial baseline estimation, a
one-sided CUSUM detector, ROC threshold tuning, and the latency
distribution width (p95 - p5 of detected onsets).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .events import merge_times_s
from .segment import PressTrial, baseline_events, press_events


class TuningError(RuntimeError):
    def __init__(self, message, best_tpr=0.0, best_h=None):
        super().__init__(message)
        self.best_tpr = best_tpr
        self.best_h = best_h


class UndefinedReportError(RuntimeError):
    pass


@dataclass(frozen=True)
class CusumParams:
    bin_s: float = 0.0002
    sigma_s: float = 0.0005
    rate_multiplier: float = 4.0
    min_consecutive_bins: int = 3
    h: float = 1.0
    detect_window_s: float = 0.1
    cooldown_s: float = 0.031

    def __post_init__(self):
        if min(self.bin_s, self.sigma_s, self.rate_multiplier,
               self.detect_window_s, self.cooldown_s) <= 0:
            raise ValueError("CUSUM parameters must be positive")
        if self.min_consecutive_bins < 1:
            raise ValueError("min_consecutive_bins must be >= 1")


@dataclass(frozen=True)
class BaselineStats:
    mean: float  # events/second
    sd: float


def bin_times(times_s: np.ndarray, t0_s: float, t1_s: float,
              bin_s: float) -> np.ndarray:
    """Event counts over uniform bins covering [t0, t1)."""
    n_bins = max(1, int(math.ceil((t1_s - t0_s) / bin_s - 1e-9)))
    if not len(times_s):
        return np.zeros(n_bins, dtype=np.int64)
    sel = times_s[(times_s >= t0_s) & (times_s < t1_s)]
    idx = np.clip(((sel - t0_s) / bin_s).astype(np.int64), 0, n_bins - 1)
    return np.bincount(idx, minlength=n_bins)


def gaussian_kernel(bin_s: float, sigma_s: float) -> np.ndarray:
    """Unit-mass Gaussian taps truncated at +-4 sigma."""
    half = int(math.ceil(4.0 * sigma_s / bin_s))
    if half == 0:
        return np.ones(1)
    x = np.arange(-half, half + 1) * bin_s
    w = np.exp(-0.5 * (x / sigma_s) ** 2)
    return w / w.sum()


@dataclass(frozen=True)
class SmoothedSeries:
    """Fine-binned histogram plus its Gaussian-smoothed counts."""

    t0_s: float
    bin_s: float
    counts: np.ndarray
    smoothed: np.ndarray

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def rates(self) -> np.ndarray:
        """Smoothed bin values in events/second."""
        return self.smoothed / self.bin_s


def smoothed_rate(times_s: np.ndarray, t0_s: float, t1_s: float,
                  bin_s: float, sigma_s: float) -> SmoothedSeries:
    """Histogram of merged event times convolved with a Gaussian kernel.

    Total mass is preserved (up to edge truncation); as sigma goes to
    zero the raw histogram is recovered.
    """
    if bin_s <= 0 or sigma_s <= 0:
        raise ValueError("bin_s and sigma_s must be positive")
    counts = bin_times(times_s, t0_s, t1_s, bin_s)
    kernel = gaussian_kernel(bin_s, sigma_s)
    sm = np.convolve(counts.astype(np.float64), kernel, mode="same")
    return SmoothedSeries(t0_s, bin_s, counts, sm)


def baseline_stats(series, n_bins: int | None = None) -> BaselineStats:
    """Mean and sd of the smoothed rate over (the first n bins of) a series.

    An empty baseline falls back to one event per window; a degenerate
    zero sd falls back to the unsmoothed Poisson prediction.
    """
    r = series.rates
    if n_bins is not None:
        r = r[:n_bins]
    duration = len(r) * series.bin_s
    mu = float(r.mean()) if len(r) else 0.0
    if mu <= 0.0:
        mu = 1.0 / max(duration, series.bin_s)
    sd = float(r.std()) if len(r) else 0.0
    if sd <= 0.0:
        sd = math.sqrt(mu / series.bin_s)
    return BaselineStats(mu, sd)


def cusum_onsets(series, baseline: BaselineStats,
                 params: CusumParams) -> np.ndarray:
    """Onset times from a one-sided CUSUM on the smoothed rate.

    The statistic accumulates rate excess over the midpoint between the
    baseline mean and its target multiple; an onset is the first of
    ``min_consecutive_bins`` consecutive bins whose statistic exceeds
    h * baseline sd. After the alarm the statistic resets and nothing is
    reported for ``cooldown_s``.
    """
    x = series.rates
    mu0 = baseline.mean
    mu1 = params.rate_multiplier * mu0
    drift = 0.5 * (mu0 + mu1)
    thr = params.h * baseline.sd
    m = params.min_consecutive_bins
    cooldown_bins = max(1, int(round(params.cooldown_s / series.bin_s)))
    a = x - drift

    onsets = []
    start = 0
    n = len(a)
    while start < n:
        seg = a[start:]
        c = np.cumsum(seg)
        s = c - np.minimum.accumulate(np.minimum(c, 0.0))
        above = s > thr
        if m > 1:
            run = np.convolve(above.astype(np.int8), np.ones(m, dtype=np.int8),
                              mode="valid") == m
            hits = np.flatnonzero(run)
        else:
            hits = np.flatnonzero(above)
        if not len(hits):
            break
        onset_idx = start + int(hits[0])
        onsets.append(series.t0_s + onset_idx * series.bin_s)
        # resume after the alarm decision plus the cooldown
        start = max(onset_idx + cooldown_bins, onset_idx + m)
    return np.asarray(onsets)


def trial_onset(trial: PressTrial, params: CusumParams) -> float | None:
    """First detected onset inside the trial window, in seconds after t0."""
    base_times = merge_times_s(baseline_events(trial, 1), baseline_events(trial, 2))
    press_times = merge_times_s(press_events(trial, 1), press_events(trial, 2))
    if trial.baseline_t1_s - trial.baseline_t0_s <= 0:
        base = BaselineStats(1.0 / params.bin_s, math.sqrt(1.0 / params.bin_s))
    else:
        base_series = smoothed_rate(base_times, trial.baseline_t0_s,
                                    trial.baseline_t1_s, params.bin_s,
                                    params.sigma_s)
        base = baseline_stats(base_series)
    series = smoothed_rate(press_times, trial.t0_s, trial.t1_s,
                           params.bin_s, params.sigma_s)
    onsets = cusum_onsets(series, base, params)
    if not len(onsets):
        return None
    return float(onsets[0]) - trial.t0_s


def _tpr_at(onsets: list[float | None], window_s: float) -> tuple[float, float]:
    """(true-positive rate, median onset) under the +-window acceptance rule."""
    detected = np.array([o for o in onsets if o is not None])
    if not len(detected):
        return 0.0, math.nan
    median = float(np.median(detected))
    ok = sum(1 for o in onsets
             if o is not None and abs(o - median) <= window_s)
    return ok / len(onsets), median


@dataclass(frozen=True)
class RocPoint:
    h: float
    tpr: float
    false_alarms_per_s: float


@dataclass(frozen=True)
class TuneResult:
    h: float
    tpr: float
    roc: list[RocPoint]


def background_alarm_rate(snippets, params: CusumParams) -> float:
    """Alarms per second over background-only snippets, with cooldown.

    Each snippet provides its own baseline statistics (it contains no
    stimulus by construction).
    """
    total_alarms = 0
    total_s = 0.0
    for t0, t1, times in snippets:
        if t1 - t0 <= 0:
            continue
        series = smoothed_rate(times, t0, t1, params.bin_s, params.sigma_s)
        base = baseline_stats(series)
        total_alarms += len(cusum_onsets(series, base, params))
        total_s += t1 - t0
    return total_alarms / total_s if total_s > 0 else 0.0


def trial_background_snippets(trials) -> list[tuple[float, float, np.ndarray]]:
    """Baseline windows of a trial list as (t0, t1, merged times) tuples."""
    out = []
    for tr in trials:
        if tr.baseline_t1_s - tr.baseline_t0_s <= 0:
            continue
        times = merge_times_s(baseline_events(tr, 1), baseline_events(tr, 2))
        out.append((tr.baseline_t0_s, tr.baseline_t1_s, times))
    return out


def tune_threshold(press_trials, background_snippets, params: CusumParams,
                   h_grid=None, min_tpr: float = 0.95) -> TuneResult:
    """Largest h on a log grid keeping the true-positive rate at target.

    The TPR counts trials whose detected onset falls within the
    acceptance window of the population median onset at that h. The ROC
    (h, TPR, background false-alarm rate) is reported for every grid
    point.
    """
    if len(press_trials) < 20:
        raise ValueError("need at least 20 press trials to tune")
    if h_grid is None:
        h_grid = np.geomspace(0.1, 1000.0, 60)
    roc = []
    best = None
    for h in h_grid:
        p = replace(params, h=float(h))
        onsets = [trial_onset(t, p) for t in press_trials]
        tpr, _ = _tpr_at(onsets, p.detect_window_s)
        fa = background_alarm_rate(background_snippets, p)
        roc.append(RocPoint(float(h), tpr, fa))
        if tpr >= min_tpr:
            best = RocPoint(float(h), tpr, fa)
    if best is None:
        top = max(roc, key=lambda r: r.tpr)
        raise TuningError(
            f"no threshold reaches {min_tpr:.0%} TPR "
            f"(best {top.tpr:.1%} at h={top.h:.3g})",
            best_tpr=top.tpr, best_h=top.h)
    return TuneResult(best.h, best.tpr, roc)


@dataclass(frozen=True)
class LatencyReport:
    h_used: float
    n_trials: int
    n_detected: int
    tpr: float
    median_onset_s: float
    onsets_rel_median_s: list[float | None]
    latency_width_ms: float
    false_alarm_rate_per_s: float
    cooldown_s: float

    def to_json_dict(self) -> dict:
        return {
            "schema_version": 1,
            "h_used": self.h_used,
            "n_trials": self.n_trials,
            "n_detected": self.n_detected,
            "tpr": self.tpr,
            "median_onset_s": self.median_onset_s,
            "latency_width_ms": self.latency_width_ms,
            "false_alarm_rate_per_s": self.false_alarm_rate_per_s,
            "cooldown_s": self.cooldown_s,
        }


def latency_report(press_trials, params: CusumParams,
                   background_snippets=None) -> LatencyReport:
    """Latency-distribution width and false-alarm rate at a fixed h.

    Onset times are centered on the population median; the width is the
    p95 - p5 spread of the true positives. The false-alarm measurement
    reuses that width as the alarm cooldown.
    """
    onsets = [trial_onset(t, params) for t in press_trials]
    tpr, median = _tpr_at(onsets, params.detect_window_s)
    detected = [o for o in onsets if o is not None]
    if not detected:
        raise UndefinedReportError("no trial produced an onset")
    tp = np.array([o for o in detected if abs(o - median) <= params.detect_window_s])
    width_ms = float((np.percentile(tp, 95) - np.percentile(tp, 5)) * 1e3)
    fa = 0.0
    if background_snippets:
        cooldown = max(width_ms / 1e3, params.bin_s)
        fa = background_alarm_rate(
            background_snippets, replace(params, cooldown_s=cooldown))
    else:
        cooldown = params.cooldown_s
    return LatencyReport(
        h_used=params.h,
        n_trials=len(press_trials),
        n_detected=len(detected),
        tpr=tpr,
        median_onset_s=median,
        onsets_rel_median_s=[None if o is None else float(o - median)
                             for o in onsets],
        latency_width_ms=width_ms,
        false_alarm_rate_per_s=fa,
        cooldown_s=float(cooldown),
    )
