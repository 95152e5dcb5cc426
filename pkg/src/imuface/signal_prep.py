"""Raw tri-IMU streams -> filtered, artifact-free, normalized, patch-
segmented model inputs.

Channel layout conventions: a six-axis sample is (ax, ay, az, gx, gy, gz)
with acceleration in g and angular rate in deg/s. A preprocessed model
sample is 12 channels: left six then right six, artifact-removed and
min-max normalized into [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal as sp_signal

from .aus import NUM_AU


class SignalError(ValueError):
    """Invalid input to a preprocessing operation."""


class CalibrationError(SignalError):
    """Calibration recordings cannot produce a valid profile."""


@dataclass
class TriImuStream:
    """A contiguous 400 Hz recording from the three IMUs (physical units)."""

    t_us: np.ndarray        # (n,) microseconds since stream start
    left: np.ndarray        # (n, 6)
    right: np.ndarray       # (n, 6)
    reference: np.ndarray   # (n, 6)

    def __post_init__(self) -> None:
        self.t_us = np.asarray(self.t_us, dtype=np.int64)
        for name in ("left", "right", "reference"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 6 or arr.shape[0] != len(self.t_us):
                raise SignalError(f"{name} must be (n, 6) aligned with t_us")
            setattr(self, name, arr)
        if len(self.t_us) > 1 and not (np.diff(self.t_us) > 0).all():
            raise SignalError("timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t_us)


@dataclass
class CalibrationAttempt:
    """Peak readings from one maximal jaw-drop repetition."""

    acc_peak: float
    gyro_peak: float
    au_peak: float


@dataclass
class CalibrationProfile:
    """Per-side normalization bounds in sensor units per full-scale AU."""

    acc_max_left: float
    acc_max_right: float
    gyro_max_left: float
    gyro_max_right: float

    def __post_init__(self) -> None:
        for name in ("acc_max_left", "acc_max_right", "gyro_max_left", "gyro_max_right"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise CalibrationError(f"{name} must be strictly positive and finite, got {v}")

    def channel_bounds(self, side: str) -> tuple[np.ndarray, np.ndarray]:
        """Symmetric (min, max) bounds for the six channels of one side."""
        acc = getattr(self, f"acc_max_{side}")
        gyro = getattr(self, f"gyro_max_{side}")
        hi = np.array([acc] * 3 + [gyro] * 3, dtype=np.float64)
        return -hi, hi

    def stacked_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounds for the 12-channel (left then right) model layout."""
        lo_l, hi_l = self.channel_bounds("left")
        lo_r, hi_r = self.channel_bounds("right")
        return np.concatenate([lo_l, lo_r]), np.concatenate([hi_l, hi_r])


@dataclass
class AffineMap:
    """6x6 matrix plus offset predicting a measurement IMU's head-motion
    component from the reference IMU."""

    R: np.ndarray
    t: np.ndarray
    residual_rms: float = 0.0
    degenerate: bool = False

    def __post_init__(self) -> None:
        self.R = np.asarray(self.R, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.R.shape != (6, 6) or self.t.shape != (6,):
            raise SignalError("affine map must be a 6x6 matrix and 6-vector")
        if not (np.isfinite(self.R).all() and np.isfinite(self.t).all()):
            raise SignalError("affine map entries must be finite")

    @classmethod
    def identity(cls) -> "AffineMap":
        return cls(R=np.eye(6), t=np.zeros(6))

    def predict(self, ref: np.ndarray) -> np.ndarray:
        """R @ ref + t for a (6,) sample or (n, 6) block."""
        ref = np.asarray(ref, dtype=np.float64)
        return ref @ self.R.T + self.t


@dataclass
class PreprocConfig:
    sample_rate_hz: float = 400.0
    label_rate_fps: float = 30.0
    lowpass_cutoff_hz: float = 10.0
    patch_len: int = 200
    stationary_threshold: np.ndarray | float | None = None  # per-channel bound
    stationary_window_s: float = 1.0
    fit_segment_s: float = 1.0

    def __post_init__(self) -> None:
        if self.lowpass_cutoff_hz >= self.sample_rate_hz / 2:
            raise SignalError("lowpass cutoff must be below Nyquist")
        if self.patch_len > self.sample_rate_hz * 0.5:
            raise SignalError("patch_len must fit a 0.5 s window")
        if self.patch_len < 1:
            raise SignalError("patch_len must be positive")

    @property
    def stationary_window_samples(self) -> int:
        return int(round(self.stationary_window_s * self.sample_rate_hz))

    @property
    def fit_segment_samples(self) -> int:
        return int(round(self.fit_segment_s * self.sample_rate_hz))


@dataclass
class Patch:
    """One model input: patch_len x 12 window ending at a label frame."""

    data: np.ndarray
    label_frame_index: int

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data)
        if self.data.ndim != 2 or self.data.shape[1] != 12:
            raise SignalError("patch must have 12 channels")


class LowpassFilter:
    """Causal second-order Butterworth low-pass, applied per channel.

    Real-time inference forbids zero-phase filtering, so the filter runs
    forward only; its DC group delay is exposed in samples. The initial
    state assumes the signal sat at its first sample forever, which keeps
    constant inputs exactly constant.
    """

    def __init__(self, cfg: PreprocConfig):
        self.cfg = cfg
        self.b, self.a = sp_signal.butter(
            2, cfg.lowpass_cutoff_hz, fs=cfg.sample_rate_hz, btype="low")
        # DC group delay in samples (constant the op reports).
        w, gd = sp_signal.group_delay((self.b, self.a), w=[1e-6], fs=cfg.sample_rate_hz)
        self.group_delay_samples = float(gd[0])
        self._zi_unit = sp_signal.lfilter_zi(self.b, self.a)
        self._state: np.ndarray | None = None

    def gain(self, freq_hz: float) -> float:
        """Analytic |H(f)| of the designed filter."""
        w, h = sp_signal.freqz(self.b, self.a, worN=[freq_hz], fs=self.cfg.sample_rate_hz)
        return float(np.abs(h[0]))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """One-shot causal filtering of an (n, c) block."""
        x = np.asarray(x, dtype=np.float64)
        if x.size == 0:
            raise SignalError("empty input")
        bad = ~np.isfinite(x)
        if bad.any():
            idx = np.argwhere(bad)[0]
            raise SignalError(f"non-finite sample at index {tuple(idx)}")
        squeeze = x.ndim == 1
        if squeeze:
            x = x[:, None]
        zi = self._zi_unit[:, None] * x[0][None, :]
        y, _ = sp_signal.lfilter(self.b, self.a, x, axis=0, zi=zi)
        return y[:, 0] if squeeze else y

    def reset_stream(self, n_channels: int) -> None:
        """Prepare stateful filtering for a live stream."""
        self._state = np.zeros((2, n_channels))
        self._fresh = True

    def process(self, x: np.ndarray) -> np.ndarray:
        """Stateful filtering of successive (n, c) blocks."""
        x = np.asarray(x, dtype=np.float64)
        if self._state is None:
            raise SignalError("call reset_stream() before process()")
        if not np.isfinite(x).all():
            idx = np.argwhere(~np.isfinite(x))[0]
            raise SignalError(f"non-finite sample at index {tuple(idx)}")
        if self._fresh and len(x):
            self._state = self._zi_unit[:, None] * x[0][None, :]
            self._fresh = False
        y, self._state = sp_signal.lfilter(self.b, self.a, x, axis=0, zi=self._state)
        return y


def lowpass_filter(x: np.ndarray, cfg: PreprocConfig) -> np.ndarray:
    """Convenience one-shot causal low-pass of an (n, c) block."""
    return LowpassFilter(cfg).apply(x)


def calibrate(left: Sequence[CalibrationAttempt],
              right: Sequence[CalibrationAttempt]) -> CalibrationProfile:
    """Average full-scale projection over the three jaw-drop attempts.

    Each attempt contributes 5 * peak / au_peak per modality; the bound is
    the mean over attempts (a plain sum would triple-scale it).
    """
    def side_max(attempts: Sequence[CalibrationAttempt]) -> tuple[float, float]:
        if len(attempts) != 3:
            raise CalibrationError(f"expected exactly 3 attempts, got {len(attempts)}")
        accs, gyros = [], []
        for att in attempts:
            if not (0 < att.au_peak <= 5):
                raise CalibrationError(f"au_peak must be in (0, 5], got {att.au_peak}")
            accs.append(5.0 * att.acc_peak / att.au_peak)
            gyros.append(5.0 * att.gyro_peak / att.au_peak)
        return float(np.mean(accs)), float(np.mean(gyros))

    acc_l, gyro_l = side_max(left)
    acc_r, gyro_r = side_max(right)
    return CalibrationProfile(acc_max_left=acc_l, acc_max_right=acc_r,
                              gyro_max_left=gyro_l, gyro_max_right=gyro_r)


def measure_attempt(samples: np.ndarray, au_peak: float) -> CalibrationAttempt:
    """Peak |acc| / |gyro| over one (n, 6) recording of a jaw-drop attempt."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[1] != 6:
        raise SignalError("expected an (n, 6) segment")
    acc_peak = float(np.abs(samples[:, :3]).max())
    gyro_peak = float(np.abs(samples[:, 3:]).max())
    return CalibrationAttempt(acc_peak=acc_peak, gyro_peak=gyro_peak, au_peak=au_peak)


def normalize(x: np.ndarray, ch_min: np.ndarray, ch_max: np.ndarray) -> np.ndarray:
    """Clamp to [ch_min, ch_max] then map affinely into [0, 1]."""
    ch_min = np.asarray(ch_min, dtype=np.float64)
    ch_max = np.asarray(ch_max, dtype=np.float64)
    if np.any(ch_max <= ch_min):
        raise SignalError("ch_max must exceed ch_min")
    x = np.asarray(x, dtype=np.float64)
    clamped = np.clip(x, ch_min, ch_max)
    return (clamped - ch_min) / (ch_max - ch_min)


def fit_affine(ref_segment: np.ndarray, meas_segment: np.ndarray,
               ridge_lambda: float = 1e-8) -> AffineMap:
    """Least-squares (R, t) minimizing ||meas - (R ref + t)||^2.

    Rank-deficient designs (e.g. a perfectly still segment) fall back to a
    ridge solve and are flagged degenerate.
    """
    ref = np.asarray(ref_segment, dtype=np.float64)
    meas = np.asarray(meas_segment, dtype=np.float64)
    if ref.shape != meas.shape or ref.ndim != 2 or ref.shape[1] != 6:
        raise SignalError("segments must share an (n, 6) shape")
    n = ref.shape[0]
    if n < 7:
        raise SignalError(f"need at least 7 samples to fit, got {n}")
    if not (np.isfinite(ref).all() and np.isfinite(meas).all()):
        raise SignalError("non-finite samples in fit segments")

    design = np.hstack([ref, np.ones((n, 1))])
    rank = np.linalg.matrix_rank(design)
    degenerate = rank < 7
    if degenerate:
        gram = design.T @ design + ridge_lambda * np.eye(7)
        coef = np.linalg.solve(gram, design.T @ meas)
    else:
        coef, *_ = np.linalg.lstsq(design, meas, rcond=None)
    R = coef[:6].T
    t = coef[6]
    resid = meas - (design @ coef)
    rms = float(np.sqrt(np.mean(resid ** 2)))
    return AffineMap(R=R, t=t, residual_rms=rms, degenerate=degenerate)


def remove_artifact(meas: np.ndarray, ref: np.ndarray, amap: AffineMap) -> np.ndarray:
    """meas - (R ref + t) for a sample or an (n, 6) block."""
    meas = np.asarray(meas, dtype=np.float64)
    if not np.isfinite(meas).all():
        raise SignalError("non-finite measurement sample")
    return meas - amap.predict(ref)


def detect_stationary(window: np.ndarray, threshold: np.ndarray | float) -> bool:
    """True iff every channel's deviation from its window mean stays
    within the per-channel threshold."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2:
        raise SignalError("expected an (n, c) window")
    dev = np.abs(window - window.mean(axis=0))
    return bool(np.all(dev <= np.asarray(threshold, dtype=np.float64)))


def estimate_stationary_threshold(still_reference: np.ndarray, k: float = 3.0,
                                  floor: float = 1e-6) -> np.ndarray:
    """Per-channel threshold: k times the still-recording noise std."""
    still = np.asarray(still_reference, dtype=np.float64)
    if still.ndim != 2:
        raise SignalError("expected an (n, c) still recording")
    return np.maximum(k * still.std(axis=0), floor)


@dataclass
class RemapEvent:
    sample_index: int
    side_residuals: dict
    accepted: bool
    reason: str = ""


class ArtifactTracker:
    """Streaming artifact-map maintenance over filtered samples.

    Scans non-overlapping stationarity windows on the reference IMU; when
    one fires, the *next* fit-segment of samples refits both side maps and
    swaps them atomically. A refit is rejected (previous map kept, event
    logged) if it fails or does not beat the current map's residual on the
    captured segment.
    """

    def __init__(self, cfg: PreprocConfig, threshold: np.ndarray | float,
                 initial_left: AffineMap | None = None,
                 initial_right: AffineMap | None = None):
        self.cfg = cfg
        self.threshold = threshold
        self.maps = {
            "left": initial_left or AffineMap.identity(),
            "right": initial_right or AffineMap.identity(),
        }
        self.fit_count = 0
        self.events: list[RemapEvent] = []
        self._win = cfg.stationary_window_samples
        self._fit_n = cfg.fit_segment_samples
        self._window_buf: list[np.ndarray] = []
        self._collecting: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._collect_active = False
        self._sample_index = 0

    def process(self, ref: np.ndarray, left: np.ndarray, right: np.ndarray) -> None:
        """Consume aligned filtered blocks of shape (n, 6)."""
        ref = np.atleast_2d(ref)
        left = np.atleast_2d(left)
        right = np.atleast_2d(right)
        for i in range(len(ref)):
            if self._collect_active:
                self._collecting.append((ref[i], left[i], right[i]))
                if len(self._collecting) == self._fit_n:
                    self._refit()
            else:
                self._window_buf.append(ref[i])
                if len(self._window_buf) == self._win:
                    window = np.stack(self._window_buf)
                    self._window_buf.clear()
                    if detect_stationary(window, self.threshold):
                        self._collect_active = True
                        self._collecting = []
            self._sample_index += 1

    def _refit(self) -> None:
        ref = np.stack([s[0] for s in self._collecting])
        sides = {"left": np.stack([s[1] for s in self._collecting]),
                 "right": np.stack([s[2] for s in self._collecting])}
        self._collecting = []
        self._collect_active = False
        residuals = {}
        new_maps = {}
        try:
            for side, meas in sides.items():
                candidate = fit_affine(ref, meas)
                old_resid = float(np.sqrt(np.mean(
                    (meas - self.maps[side].predict(ref)) ** 2)))
                residuals[side] = {"new": candidate.residual_rms, "old": old_resid}
                if candidate.residual_rms > old_resid:
                    raise SignalError(f"refit for {side} does not improve residual")
                new_maps[side] = candidate
        except SignalError as exc:
            self.events.append(RemapEvent(self._sample_index, residuals, False, str(exc)))
            return
        self.maps = new_maps  # atomic swap: readers only ever see a full pair
        self.fit_count += 1
        self.events.append(RemapEvent(self._sample_index, residuals, True))


def label_sample_index(frame: int, cfg: PreprocConfig) -> int:
    """Sample index a label frame's patch ends at: round(k * fs / fps)."""
    return int(round(frame * cfg.sample_rate_hz / cfg.label_rate_fps))


def first_patchable_frame(cfg: PreprocConfig) -> int:
    """Smallest label frame whose causal patch fits in the stream."""
    k = 0
    while label_sample_index(k, cfg) < cfg.patch_len - 1:
        k += 1
    return k


def segment(stream: np.ndarray, n_frames: int, cfg: PreprocConfig) -> list[Patch]:
    """Cut causal patch_len x 12 patches, one per label frame.

    Frame k's patch covers samples [e_k - patch_len + 1, e_k] where
    e_k = round(k * fs / fps); frames whose patch would underflow or
    overrun the stream are dropped.
    """
    stream = np.asarray(stream)
    if stream.ndim != 2 or stream.shape[1] != 12:
        raise SignalError("expected an (n, 12) preprocessed stream")
    patches: list[Patch] = []
    if len(stream) < cfg.patch_len:
        import warnings
        warnings.warn("stream shorter than one patch; returning no patches")
        return patches
    for k in range(n_frames):
        end = label_sample_index(k, cfg)
        start = end - cfg.patch_len + 1
        if start < 0 or end >= len(stream):
            continue
        patches.append(Patch(data=stream[start:end + 1], label_frame_index=k))
    return patches
