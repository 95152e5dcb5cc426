"""Real-time sliding-window inference: ingest 400 Hz frames, maintain the
predicted-AU history, reset it on stationarity, and emit a 30 fps AU
stream with overlap replacement.

Windows cover 60 label frames (15 history slots + 45 targets) and advance
by 30 frames, so each window re-predicts the previous window's trailing
15 frames; the newer values win. A frame is therefore emitted at most
twice: once provisionally, once finally. History slots are read back from
the finalized stream (or zeros after a reset).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .signal_prep import (AffineMap, ArtifactTracker, CalibrationProfile,
                          LowpassFilter, PreprocConfig, detect_stationary,
                          first_patchable_frame, fit_affine,
                          label_sample_index, normalize, remove_artifact)


class EngineError(RuntimeError):
    """Inconsistent engine configuration or buffer misuse."""


@dataclass
class InferenceConfig:
    target_len: int = 45
    history_len: int = 15
    au_reset_threshold: float = 0.25
    au_reset_duration_s: float = 1.0
    max_latency_budget_ms: float = 500.0
    cold_start_timeout_s: float = 5.0
    reset_enabled: bool = True
    remap_enabled: bool = True

    def __post_init__(self) -> None:
        if self.target_len <= self.history_len:
            raise EngineError("window step target_len - history_len must be positive")

    @property
    def window_step(self) -> int:
        return self.target_len - self.history_len

    @property
    def seq_len(self) -> int:
        return self.target_len + self.history_len


class HistoryBuffer:
    """The last `s` predicted AU vectors; zeroed on reset."""

    def __init__(self, history_len: int, au_channels: int):
        self.values = np.zeros((history_len, au_channels))
        self.epoch = 0
        self._dirty = False

    def set(self, values: np.ndarray) -> None:
        if values.shape != self.values.shape:
            raise EngineError(f"history must stay {self.values.shape}")
        self.values[...] = values
        self._dirty = bool(np.any(values != 0.0))

    def reset(self) -> None:
        """Idempotent: consecutive resets count once."""
        if self._dirty:
            self.epoch += 1
            self.values[...] = 0.0
            self._dirty = False


class RingBuffer:
    """Absolute-indexed ring over (capacity, channels) float64 samples."""

    def __init__(self, capacity: int, channels: int):
        self._buf = np.zeros((capacity, channels))
        self.capacity = capacity
        self.first = 0   # absolute index of oldest retained sample
        self.end = 0     # absolute index one past the newest

    def append(self, block: np.ndarray) -> None:
        block = np.atleast_2d(block)
        m = len(block)
        if m > self.capacity:
            raise EngineError("block larger than ring capacity")
        pos = self.end % self.capacity
        tail = min(m, self.capacity - pos)
        self._buf[pos:pos + tail] = block[:tail]
        if tail < m:
            self._buf[:m - tail] = block[tail:]
        self.end += m
        self.first = max(self.first, self.end - self.capacity)

    def view(self, a: int, b: int) -> np.ndarray:
        """Copy of absolute sample range [a, b)."""
        if a < self.first or b > self.end or a > b:
            raise EngineError(f"range [{a}, {b}) outside retained [{self.first}, {self.end})")
        idx = np.arange(a, b) % self.capacity
        return self._buf[idx]


@dataclass
class PredictionRecord:
    frame: int
    au: np.ndarray
    final: bool
    window: int
    epoch: int

    def to_json(self, fps: float) -> dict:
        return {"frame": self.frame, "t_s": round(self.frame / fps, 6),
                "au": [round(float(v), 5) for v in self.au],
                "final": self.final, "epoch": self.epoch}


class StreamingEngine:
    """Single-producer / single-consumer inference over a tri-IMU stream.

    `model` needs `.predict(patches, history) -> (B, 60, 14)` and a `.cfg`
    with the window geometry; the forecaster satisfies this, and tests can
    substitute an oracle.
    """

    def __init__(self, model, preproc: PreprocConfig, profile: CalibrationProfile,
                 stationary_threshold: np.ndarray | float,
                 infer: InferenceConfig | None = None):
        self.model = model
        self.pre = preproc
        self.profile = profile
        self.infer_cfg = infer or InferenceConfig()
        mcfg = model.cfg
        if mcfg.patch_len != preproc.patch_len:
            raise EngineError("model and preprocessing patch lengths disagree")
        if self.infer_cfg.seq_len != mcfg.history_len + mcfg.target_len:
            raise EngineError("inference window does not match the model geometry")
        self.s = self.infer_cfg.history_len
        self.threshold = stationary_threshold

        self._filters = LowpassFilter(preproc)
        self._filters.reset_stream(18)
        self._tracker = ArtifactTracker(preproc, stationary_threshold)
        self._lo, self._hi = profile.stacked_bounds()

        samples_per_window = label_sample_index(self.infer_cfg.seq_len + 2, preproc)
        capacity = int(2 ** np.ceil(np.log2(
            samples_per_window + preproc.patch_len
            + 6 * self.infer_cfg.window_step * preproc.sample_rate_hz
            / preproc.label_rate_fps)))
        self._ring = RingBuffer(capacity, 18)

        self.history = HistoryBuffer(self.s, mcfg.au_channels)
        self.predictions: dict[int, PredictionRecord] = {}
        self.emissions: list[PredictionRecord] = []
        self.window_count = 0
        self.skipped_windows = 0
        self.dropped_frames = 0
        self.stationary_resets = 0
        self.magnitude_resets = 0
        self.latencies_ms: list[float] = []

        self._k0 = first_patchable_frame(preproc)
        self._next_start: int | None = None
        self._armed = False
        self._last_t_us: int | None = None
        self._stat_buf_start = 0
        self._initial_fit_done = False

    # -- ingest -------------------------------------------------------------

    def push(self, t_us: int, left: np.ndarray, right: np.ndarray,
             reference: np.ndarray) -> list[int]:
        """Feed one 400 Hz frame; returns the starts of any windows run."""
        return self.push_block(np.array([t_us]), np.atleast_2d(left),
                               np.atleast_2d(right), np.atleast_2d(reference))

    def push_block(self, t_us: np.ndarray, left: np.ndarray, right: np.ndarray,
                   reference: np.ndarray) -> list[int]:
        t_us = np.asarray(t_us)
        keep = np.ones(len(t_us), dtype=bool)
        last = self._last_t_us
        for i, t in enumerate(t_us):
            if last is not None and t <= last:
                keep[i] = False
                self.dropped_frames += 1
            else:
                last = int(t)
        self._last_t_us = last
        if not keep.all():
            left, right, reference = left[keep], right[keep], reference[keep]
        if len(left) == 0:
            return []

        raw = np.concatenate([left, right, reference], axis=1)
        filt = self._filters.process(raw)
        self._ring.append(filt)
        if self.infer_cfg.remap_enabled:
            self._tracker.process(filt[:, 12:18], filt[:, 0:6], filt[:, 6:12])
        self._scan_stationary()
        self._maybe_initial_fit()
        return self._run_ready_windows()

    # -- preprocessing state --------------------------------------------------

    def _maybe_initial_fit(self) -> None:
        n_fit = self.pre.fit_segment_samples
        if self._initial_fit_done or self._ring.end < n_fit:
            return
        seg = self._ring.view(0, n_fit)
        self._tracker.maps = {
            "left": fit_affine(seg[:, 12:18], seg[:, 0:6]),
            "right": fit_affine(seg[:, 12:18], seg[:, 6:12]),
        }
        self._initial_fit_done = True

    def _scan_stationary(self) -> None:
        w = self.pre.stationary_window_samples
        while self._ring.end - self._stat_buf_start >= w:
            window = self._ring.view(self._stat_buf_start, self._stat_buf_start + w)
            self._stat_buf_start += w
            if detect_stationary(window[:, 12:18], self.threshold):
                self._on_stationary()

    def _on_stationary(self) -> None:
        if not self._armed:
            self._arm()
        if self.infer_cfg.reset_enabled and self.history._dirty:
            self.history.reset()
            self.stationary_resets += 1

    def _arm(self) -> None:
        self._armed = True
        frame_now = int(self._ring.end * self.pre.label_rate_fps
                        / self.pre.sample_rate_hz)
        self._next_start = max(self._k0, frame_now - self.infer_cfg.seq_len)

    def _check_cold_start(self) -> None:
        if self._armed:
            return
        elapsed_s = self._ring.end / self.pre.sample_rate_hz
        if elapsed_s >= self.infer_cfg.cold_start_timeout_s:
            self._arm()

    # -- windows --------------------------------------------------------------

    def _run_ready_windows(self) -> list[int]:
        self._check_cold_start()
        if not self._armed or not self._initial_fit_done:
            return []
        ran = []
        while True:
            start = self._next_start
            need = label_sample_index(start + self.infer_cfg.seq_len - 1, self.pre) + 1
            if self._ring.end < need:
                break
            t0 = time.perf_counter()
            ok = self._infer_window(start)
            self.latencies_ms.append((time.perf_counter() - t0) * 1e3)
            if ok:
                ran.append(start)
            self._next_start = start + self.infer_cfg.window_step
        return ran

    def _build_patches(self, start: int) -> np.ndarray:
        pre = self.pre
        seq = self.infer_cfg.seq_len
        lo_sample = label_sample_index(start, pre) - pre.patch_len + 1
        hi_sample = label_sample_index(start + seq - 1, pre) + 1
        block = self._ring.view(lo_sample, hi_sample)
        maps = self._tracker.maps
        left = remove_artifact(block[:, 0:6], block[:, 12:18], maps["left"])
        right = remove_artifact(block[:, 6:12], block[:, 12:18], maps["right"])
        stacked = normalize(np.concatenate([left, right], axis=1), self._lo, self._hi)
        ends = np.array([label_sample_index(start + j, pre) - lo_sample
                         for j in range(seq)])
        patches = np.stack([stacked[e - pre.patch_len + 1:e + 1] for e in ends])
        return patches.astype(np.float32)

    def _infer_window(self, start: int) -> bool:
        try:
            patches = self._build_patches(start)
        except Exception:
            self.skipped_windows += 1
            return False
        pred = self.model.predict(patches[None], self.history.values[None])
        pred = np.clip(np.asarray(pred[0], dtype=np.float64), 0.0, 5.0)

        s, step = self.s, self.infer_cfg.window_step
        epoch = self.history.epoch
        for j in range(s, self.infer_cfg.seq_len):
            frame = start + j
            final = j < s + step  # the trailing s frames await replacement
            rec = PredictionRecord(frame=frame, au=pred[j].copy(), final=final,
                                   window=self.window_count, epoch=epoch)
            prev = self.predictions.get(frame)
            if prev is not None and prev.final:
                continue  # never overwrite a finalized frame
            self.predictions[frame] = rec
            self.emissions.append(rec)
        # Next window's history slots are this window's finalized span.
        hist_frames = range(start + step, start + step + s)
        self.history.set(np.stack([self.predictions[f].au for f in hist_frames]))
        self.window_count += 1
        self._au_magnitude_reset(start)
        return True

    def _au_magnitude_reset(self, start: int) -> None:
        if not self.infer_cfg.reset_enabled:
            return
        span = int(round(self.infer_cfg.au_reset_duration_s * self.pre.label_rate_fps))
        last_frame = start + self.infer_cfg.seq_len - 1
        frames = range(last_frame - span + 1, last_frame + 1)
        recent = [self.predictions[f].au for f in frames if f in self.predictions]
        if len(recent) < span:
            return
        if np.all(np.abs(np.stack(recent)) < self.infer_cfg.au_reset_threshold):
            if self.history._dirty:
                self.history.reset()
                self.magnitude_resets += 1

    # -- outputs ---------------------------------------------------------------

    def final_series(self) -> tuple[np.ndarray, np.ndarray]:
        """(frames, values) using final results where available."""
        if not self.predictions:
            return np.zeros(0, dtype=int), np.zeros((0, self.history.values.shape[1]))
        frames = np.array(sorted(self.predictions))
        values = np.stack([self.predictions[f].au for f in frames])
        return frames, values

    def emission_records(self) -> list[dict]:
        return [rec.to_json(self.pre.label_rate_fps) for rec in self.emissions]


def run_stream(engine: StreamingEngine, t_us: np.ndarray, left: np.ndarray,
               right: np.ndarray, reference: np.ndarray,
               block: int = 400) -> None:
    """Push a recorded stream through the engine in block-sized chunks."""
    for lo in range(0, len(t_us), block):
        hi = lo + block
        engine.push_block(t_us[lo:hi], left[lo:hi], right[lo:hi], reference[lo:hi])


def long_horizon_eval(engine: StreamingEngine, t_us: np.ndarray, left: np.ndarray,
                      right: np.ndarray, reference: np.ndarray,
                      truth: np.ndarray, bin_s: float = 30.0) -> dict:
    """Stream the recording, then bin per-frame AU MAE over time.

    Returns the binned curve plus overall MAE and the engine's reset and
    remap counters, so mechanism on/off runs are directly comparable.
    """
    run_stream(engine, t_us, left, right, reference)
    frames, values = engine.final_series()
    fps = engine.pre.label_rate_fps
    valid = frames < len(truth)
    frames, values = frames[valid], values[valid]
    if len(frames) == 0:
        raise EngineError("stream produced no predictions to evaluate")
    err = np.abs(values - truth[frames]).mean(axis=1)
    t_s = frames / fps
    n_bins = int(np.ceil((t_s.max() + 1e-9) / bin_s))
    curve = []
    for b in range(n_bins):
        m = (t_s >= b * bin_s) & (t_s < (b + 1) * bin_s)
        curve.append({"t_start_s": b * bin_s,
                      "mae": float(err[m].mean()) if m.any() else None,
                      "frames": int(m.sum())})
    return {
        "bins": curve,
        "overall_mae": float(err.mean()),
        "first_frame": int(frames[0]),
        "stationary_resets": engine.stationary_resets,
        "magnitude_resets": engine.magnitude_resets,
        "remap_count": engine._tracker.fit_count,
        "windows": engine.window_count,
        "mean_latency_ms": float(np.mean(engine.latencies_ms)) if engine.latencies_ms else None,
    }
