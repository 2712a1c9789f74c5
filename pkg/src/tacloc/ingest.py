"""Event file reading/writing, three-tap stream synchronization, and run
configuration loading.

File formats:

* CSV: header ``t_us,u,v,polarity``, one event per line, polarity 0/1.
* Binary: 16-byte header (magic ``EVT1``, version byte, 3 reserved bytes,
  little-endian uint64 event count) followed by 16-byte records
  (int64 t_us, uint16 u, uint16 v, uint8 polarity, 3 pad bytes).
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .events import (DEFAULT_ROI, US_PER_S, EventStream, SensorLayout,
                     event_rate_histogram, meander_grid)
from .geometry import CameraModel, FreeParams, default_models

log = logging.getLogger(__name__)

BINARY_MAGIC = b"EVT1"
BINARY_VERSION = 1
_RECORD_DTYPE = np.dtype([
    ("t", "<i8"), ("u", "<u2"), ("v", "<u2"), ("polarity", "u1"),
    ("pad", "u1", 3),
])


class IngestError(RuntimeError):
    pass


class FormatError(IngestError):
    pass


class SyncError(IngestError):
    """Tap-based synchronization could not find a qualifying tap triple."""

    def __init__(self, message, candidates_s=()):
        super().__init__(message)
        self.candidates_s = list(candidates_s)


@dataclass(frozen=True)
class SyncSpec:
    n_taps: int = 3
    tap_interval_s: float = 1.0
    post_pause_s: float = 3.0
    search_window_s: float = 15.0
    spacing_tolerance_s: float = 0.25
    bin_s: float = 0.010
    onset_threshold_multiple: float = 5.0

    def __post_init__(self):
        if self.n_taps < 2:
            raise ValueError("n_taps must be >= 2")
        if self.tap_interval_s <= 0:
            raise ValueError("tap_interval_s must be positive")


@dataclass(frozen=True)
class PressSchedule:
    """Nominal press timing and ground truth, relative to the first sync tap."""

    onsets_s: np.ndarray          # strictly increasing
    press_duration_s: float
    ground_truth_mm: np.ndarray   # (n, 2)
    press_index: np.ndarray       # index into the grid path
    repetition: np.ndarray

    def __post_init__(self):
        onsets = np.asarray(self.onsets_s, dtype=np.float64)
        gt = np.asarray(self.ground_truth_mm, dtype=np.float64)
        pidx = np.asarray(self.press_index, dtype=np.int64)
        rep = np.asarray(self.repetition, dtype=np.int64)
        if np.any(np.diff(onsets) <= 0):
            raise ValueError("onsets must be strictly increasing")
        if not (len(onsets) == len(gt) == len(pidx) == len(rep)):
            raise ValueError("schedule columns must have equal length")
        for arr in (onsets, gt, pidx, rep):
            arr.flags.writeable = False
        object.__setattr__(self, "onsets_s", onsets)
        object.__setattr__(self, "ground_truth_mm", gt)
        object.__setattr__(self, "press_index", pidx)
        object.__setattr__(self, "repetition", rep)

    def __len__(self) -> int:
        return len(self.onsets_s)


def make_schedule(layout: SensorLayout, onset0_s: float = 5.0,
                  period_s: float = 2.0,
                  repetitions: int | None = None) -> PressSchedule:
    """Uniform-period schedule over the grid path, repeated in order."""
    reps = layout.repetitions if repetitions is None else repetitions
    n = layout.n_presses
    idx = np.tile(np.arange(n), reps)
    rep = np.repeat(np.arange(reps), n)
    onsets = onset0_s + np.arange(n * reps) * period_s
    return PressSchedule(onsets, layout.press_duration_s,
                         layout.grid_points[idx], idx, rep)


def read_events(path, camera_id, fmt: str | None = None) -> EventStream:
    """Load an event file (format inferred from the suffix unless given).

    Malformed CSV lines are counted and logged; more than 1% malformed
    raises FormatError.
    """
    path = Path(path)
    if not path.exists():
        raise IOError(f"event file not found: {path}")
    if fmt is None:
        fmt = "bin" if path.suffix in (".bin", ".evt") else "csv"
    if fmt == "bin":
        return _read_binary(path, camera_id)
    if fmt == "csv":
        return _read_csv(path, camera_id)
    raise ValueError(f"unknown event format: {fmt}")


def _read_csv(path: Path, camera_id) -> EventStream:
    cols = [[], [], [], []]
    malformed = 0
    total = 0

    def take(line):
        nonlocal malformed, total
        total += 1
        parts = line.split(",")
        try:
            vals = [int(p) for p in parts]
        except ValueError:
            malformed += 1
            return
        if len(vals) != 4:
            malformed += 1
            return
        for c, v in zip(cols, vals):
            c.append(v)

    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
        # header line is optional; a bare data row is accepted
        if first and first != "t_us,u,v,polarity":
            take(first)
        for line in fh:
            line = line.strip()
            if line:
                take(line)
    if total and malformed / total > 0.01:
        raise FormatError(f"{path}: {malformed}/{total} malformed lines")
    if malformed:
        log.warning("%s: skipped %d malformed lines", path, malformed)
    if not total:
        log.warning("%s: empty event file", path)
    return EventStream(camera_id, cols[0], cols[1], cols[2], cols[3])


def _read_binary(path: Path, camera_id) -> EventStream:
    raw = path.read_bytes()
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header")
    magic, version, count = struct.unpack("<4sB3xQ", raw[:16])
    if magic != BINARY_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != BINARY_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    body = np.frombuffer(raw, dtype=_RECORD_DTYPE, offset=16)
    if len(body) != count:
        raise FormatError(f"{path}: header count {count} != {len(body)} records")
    if not count:
        log.warning("%s: empty event file", path)
    return EventStream(camera_id, body["t"], body["u"].astype(np.int16),
                       body["v"].astype(np.int16), body["polarity"])


def write_events(stream: EventStream, path, fmt: str = "bin") -> None:
    """Write a stream so that read_events round-trips it exactly.

    Raw timestamps are written (no alignment offset applied).
    """
    path = Path(path)
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("t_us,u,v,polarity\n")
            for t, u, v, p in zip(stream.t, stream.u, stream.v, stream.polarity):
                fh.write(f"{t},{u},{v},{p}\n")
        return
    if fmt == "bin":
        rec = np.zeros(len(stream), dtype=_RECORD_DTYPE)
        rec["t"] = stream.t
        rec["u"] = stream.u.astype(np.uint16)
        rec["v"] = stream.v.astype(np.uint16)
        rec["polarity"] = stream.polarity
        with open(path, "wb") as fh:
            fh.write(struct.pack("<4sB3xQ", BINARY_MAGIC, BINARY_VERSION,
                                 len(stream)))
            fh.write(rec.tobytes())
        return
    raise ValueError(f"unknown event format: {fmt}")


def detect_sync_taps(stream: EventStream, spec: SyncSpec = SyncSpec()) -> np.ndarray:
    """Onset times (aligned seconds) of the sync taps at the stream start.

    Peak regions are contiguous runs of 10 ms bins above a multiple of
    the search window's median bin rate; a qualifying triple must have
    consecutive spacings within the tolerance of the tap interval. Among
    qualifying triples the one with the largest total peak rate wins.
    """
    if not len(stream):
        raise SyncError("empty stream: no sync taps")
    start_s, _ = stream.extent_s()
    window = stream.slice_time_s(start_s, start_s + spec.search_window_s)
    hist = event_rate_histogram(window, spec.bin_s)
    if not len(hist):
        raise SyncError("no events in the sync search window")
    rates = hist.rates
    med = float(np.median(rates))
    # a silent background gives median 0; any active bin is then a peak
    thr = spec.onset_threshold_multiple * med
    above = rates > thr
    if not np.any(above):
        raise SyncError("no rate peaks above the sync threshold")
    # contiguous peak regions: (onset bin, peak rate)
    edges = np.flatnonzero(np.diff(np.concatenate(([0], above.view(np.int8), [0]))))
    starts, ends = edges[::2], edges[1::2]
    onsets = hist.bin_starts_s[starts]
    peak = np.array([rates[a:b].max() for a, b in zip(starts, ends)])

    n = spec.n_taps
    if len(onsets) < n:
        raise SyncError(
            f"found {len(onsets)} rate peaks, need {n}",
            candidates_s=onsets.tolist())
    best = None
    order = np.argsort(onsets)
    ot = onsets[order]
    op = peak[order]
    for combo in combinations(range(len(ot)), n):
        gaps = np.diff(ot[list(combo)])
        if np.all(np.abs(gaps - spec.tap_interval_s) <= spec.spacing_tolerance_s):
            score = op[list(combo)].sum()
            if best is None or score > best[0]:
                best = (score, combo)
    if best is None:
        raise SyncError(
            "no tap triple with the expected spacing",
            candidates_s=ot.tolist())
    return ot[list(best[1])]


def align_streams(s1: EventStream, s2: EventStream,
                  spec: SyncSpec = SyncSpec(),
                  max_residual_s: float = 0.050) -> tuple[EventStream, EventStream]:
    """Set s2's time offset so the mean tap onsets of both streams agree.

    The offset is averaged over all taps to soak up per-tap onset jitter;
    per-tap residuals beyond ``max_residual_s`` raise SyncError.
    """
    taps1 = detect_sync_taps(s1, spec)
    taps2 = detect_sync_taps(s2, spec)
    offset_s = float(np.mean(taps1) - np.mean(taps2))
    offset_us = int(round(offset_s * US_PER_S))
    out2 = s2.with_offset_us(s2.time_offset_us + offset_us)
    residual = np.abs((taps2 + offset_us / US_PER_S) - taps1)
    if np.any(residual > max_residual_s):
        raise SyncError(
            f"tap residuals after alignment exceed {max_residual_s}s: "
            f"{residual.tolist()}")
    return s1, out2


@dataclass
class RunConfig:
    """Everything a batch run needs, loadable from a single JSON document."""

    cam1_path: str = ""
    cam2_path: str = ""
    file_format: str = "bin"
    layout: SensorLayout = field(default_factory=SensorLayout)
    sync: SyncSpec = field(default_factory=SyncSpec)
    schedule: PressSchedule | None = None
    camera_models: tuple[CameraModel, CameraModel] = None
    roi: tuple[int, int] = DEFAULT_ROI
    baseline_s: float = 0.3
    cluster_eps_px: float = 10.0
    cluster_min_samples: int = 10
    cluster_min_points: int = 10
    calibration_free: FreeParams = field(default_factory=FreeParams)
    exclude_presses: tuple[int, ...] = ()
    seed: int = 0
    synth: dict = field(default_factory=dict)
    latency: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.camera_models is None:
            self.camera_models = default_models(self.layout.side_mm)
        if self.schedule is None:
            self.schedule = make_schedule(self.layout)


def _layout_from_dict(d: dict) -> SensorLayout:
    grid = None
    if "grid_points_mm" in d:
        grid = np.asarray(d["grid_points_mm"], dtype=np.float64)
    elif any(k in d for k in ("grid_cols", "grid_rows", "grid_origin_mm")):
        grid = meander_grid(
            cols=int(d.get("grid_cols", 25)),
            rows=int(d.get("grid_rows", 10)),
            spacing_mm=float(d.get("grid_spacing_mm", 4.0)),
            origin_mm=tuple(d.get("grid_origin_mm", (2.0, 32.0))),
        )
    return SensorLayout(
        side_mm=float(d.get("side_mm", 100.0)),
        thickness_mm=float(d.get("thickness_mm", 4.0)),
        grid_points=grid,
        grid_spacing_mm=float(d.get("grid_spacing_mm", 4.0)),
        repetitions=int(d.get("repetitions", 10)),
        press_duration_s=float(d.get("press_duration_s", 0.55)),
        bits_per_event=int(d.get("bits_per_event", 21)),
    )


def _schedule_from_dict(d: dict, layout: SensorLayout) -> PressSchedule:
    if "onsets_s" in d:
        return PressSchedule(
            np.asarray(d["onsets_s"], dtype=np.float64),
            float(d.get("press_duration_s", layout.press_duration_s)),
            np.asarray(d["ground_truth_mm"], dtype=np.float64),
            np.asarray(d["press_index"], dtype=np.int64),
            np.asarray(d["repetition"], dtype=np.int64),
        )
    return make_schedule(
        layout,
        onset0_s=float(d.get("onset0_s", 5.0)),
        period_s=float(d.get("period_s", 2.0)),
        repetitions=(int(d["repetitions"]) if "repetitions" in d else None),
    )


def load_config(path) -> RunConfig:
    """Parse a run-config JSON file; raises FormatError with location info."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from exc
    except OSError as exc:
        raise IOError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(doc, base_dir=path.parent)


def config_from_dict(doc: dict, base_dir: Path | None = None) -> RunConfig:
    layout = _layout_from_dict(doc.get("layout", {}))
    sync = SyncSpec(**{k: v for k, v in doc.get("sync", {}).items()})
    schedule = _schedule_from_dict(doc.get("schedule", {}), layout)
    cams = doc.get("cameras")
    if cams is not None:
        if len(cams) != 2:
            raise FormatError("config must define exactly 2 cameras")
        models = (CameraModel.from_dict(cams[0]), CameraModel.from_dict(cams[1]))
    else:
        models = default_models(layout.side_mm)
    files = doc.get("files", {})
    cam1 = files.get("cam1", "")
    cam2 = files.get("cam2", "")
    if base_dir is not None:
        cam1 = str(base_dir / cam1) if cam1 else ""
        cam2 = str(base_dir / cam2) if cam2 else ""
    clu = doc.get("cluster", {})
    cal = doc.get("calibration", {}).get("free", {})
    return RunConfig(
        cam1_path=cam1,
        cam2_path=cam2,
        file_format=files.get("format", "bin"),
        layout=layout,
        sync=sync,
        schedule=schedule,
        camera_models=models,
        roi=tuple(doc.get("roi", DEFAULT_ROI)),
        baseline_s=float(doc.get("baseline_s", 0.3)),
        cluster_eps_px=float(clu.get("eps_px", 10.0)),
        cluster_min_samples=int(clu.get("min_samples", 10)),
        cluster_min_points=int(clu.get("min_cluster_points",
                                       clu.get("min_samples", 10))),
        calibration_free=FreeParams(
            position=bool(cal.get("position", True)),
            skew=bool(cal.get("skew", True)),
            k1=bool(cal.get("k1", True)),
            focal=bool(cal.get("focal", False)),
        ),
        exclude_presses=tuple(doc.get("exclude_presses", ())),
        seed=int(doc.get("seed", 0)),
        synth=doc.get("synth", {}),
        latency=doc.get("latency", {}),
    )
