"""AU intensities -> blendshape weights -> 51-landmark faces, plus the
error metrics used to score reconstructions (landmark MAE, NME, AU MAE)
and the camera-derived placement amplitude.

The face basis is a neutral 51-point landmark set (millimetres) with one
displacement delta per AU channel at full activation. It is procedurally
generated with a fixed seed and persisted as JSON so every consumer scores
against the same geometry.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .aus import AU_CODES, AU_INDEX, NUM_AU

NUM_LANDMARKS = 51
BASIS_FORMAT_VERSION = 1

# Landmark layout: 68-point scheme minus the 17 jaw points.
BROWS = list(range(0, 10))        # right brow 0-4, left brow 5-9
NOSE = list(range(10, 19))        # bridge 10-13, base 14-18
EYES = list(range(19, 31))        # right eye 19-24, left eye 25-30
MOUTH = list(range(31, 51))       # outer 31-42, inner 43-50
OUTER_CANTHI = (19, 28)           # outer corners of right / left eye
LOWER_EYES = [23, 24, 29, 30]
CHEEKS_PROXY = LOWER_EYES + [31, 37]

_REGIONS = {
    "AU1/2": BROWS,
    "AU4": BROWS,
    "AU5": EYES,
    "AU6": CHEEKS_PROXY,
    "AU7": EYES,
    "AU9": NOSE + BROWS[3:7],
    "AU10": MOUTH[:12] + NOSE[4:],
    "AU12": MOUTH,
    "AU14": [31, 37, 34, 40],
    "AU15": [31, 37, 32, 36, 38, 42],
    "AU20": MOUTH[:12],
    "AU24": MOUTH,
    "AU25": MOUTH[12:],
    "AU26": MOUTH + NOSE[4:],
}


class FaceError(ValueError):
    """Invalid basis data or mismatched metric inputs."""


@dataclass
class FaceBasis:
    """Neutral landmarks plus per-AU full-activation displacement deltas."""

    neutral: np.ndarray            # (51, 3) mm
    deltas: np.ndarray             # (14, 51, 3) mm at weight 100
    canthus_indices: tuple[int, int]
    interocular_indices: tuple[int, int]
    seed: int = 0

    def __post_init__(self) -> None:
        self.neutral = np.asarray(self.neutral, dtype=np.float64)
        self.deltas = np.asarray(self.deltas, dtype=np.float64)
        if self.neutral.shape != (NUM_LANDMARKS, 3):
            raise FaceError(f"neutral must be ({NUM_LANDMARKS}, 3)")
        if self.deltas.shape != (NUM_AU, NUM_LANDMARKS, 3):
            raise FaceError(f"deltas must be ({NUM_AU}, {NUM_LANDMARKS}, 3)")
        if not (np.isfinite(self.neutral).all() and np.isfinite(self.deltas).all()):
            raise FaceError("basis contains non-finite values")
        if self.canthus_distance() <= 0:
            raise FaceError("outer canthus distance must be positive")

    def canthus_distance(self) -> float:
        i, j = self.canthus_indices
        return float(np.linalg.norm(self.neutral[i] - self.neutral[j]))

    def interocular_distance(self) -> float:
        i, j = self.interocular_indices
        return float(np.linalg.norm(self.neutral[i] - self.neutral[j]))

    def save(self, path: str | Path) -> None:
        doc = {
            "format_version": BASIS_FORMAT_VERSION,
            "seed": self.seed,
            "au_codes": AU_CODES,
            "neutral": self.neutral.tolist(),
            "deltas": {AU_CODES[i]: self.deltas[i].tolist() for i in range(NUM_AU)},
            "canthus_indices": list(self.canthus_indices),
            "interocular_indices": list(self.interocular_indices),
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path: str | Path) -> "FaceBasis":
        doc = json.loads(Path(path).read_text())
        if doc.get("format_version") != BASIS_FORMAT_VERSION:
            raise FaceError(f"unsupported basis format version {doc.get('format_version')}")
        deltas = np.stack([np.asarray(doc["deltas"][code]) for code in AU_CODES])
        return cls(
            neutral=np.asarray(doc["neutral"]),
            deltas=deltas,
            canthus_indices=tuple(doc["canthus_indices"]),
            interocular_indices=tuple(doc["interocular_indices"]),
            seed=int(doc.get("seed", 0)),
        )


def _neutral_landmarks() -> np.ndarray:
    """Stylized symmetric neutral face, roughly life sized (mm)."""
    pts = np.zeros((NUM_LANDMARKS, 3))
    # Brows: two arcs above the eyes.
    xs = np.linspace(-48, -12, 5)
    for k, x in enumerate(xs):
        arch = 6.0 * np.sin(np.pi * (k + 1) / 6.0)
        pts[0 + k] = [x, 38 + arch, 8.0]
        pts[5 + k] = [-x, 38 + arch, 8.0]
    # Nose bridge and base.
    for k, y in enumerate(np.linspace(28, 4, 4)):
        pts[10 + k] = [0, y, 18 + 2.5 * k]
    for k, x in enumerate(np.linspace(-12, 12, 5)):
        pts[14 + k] = [x, -4, 16 - 0.5 * abs(x)]
    # Eyes: 6-point loops, outer corner first.
    eye = np.array([
        [-45, 26, 4], [-37, 30, 5], [-29, 29, 5],
        [-23, 25, 5], [-31, 22, 5], [-39, 22, 5],
    ], dtype=float)
    pts[19:25] = eye
    left = eye.copy()
    left[:, 0] *= -1
    pts[25:31] = left
    # Mouth: outer loop of 12, inner loop of 8.
    ang = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts[31:43, 0] = 24 * np.cos(ang)
    pts[31:43, 1] = -26 + 12 * np.sin(ang)
    pts[31:43, 2] = 10.0
    ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    pts[43:51, 0] = 14 * np.cos(ang)
    pts[43:51, 1] = -26 + 6 * np.sin(ang)
    pts[43:51, 2] = 9.0
    return pts


def generate_face_basis(seed: int = 7) -> FaceBasis:
    """Procedural basis: smooth seeded deltas localized per AU region.

    Vertical motion dominates each delta (brows/lids/jaw move mostly up or
    down); magnitudes land in the low-millimetre range typical of full AU
    activation. Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    neutral = _neutral_landmarks()
    deltas = np.zeros((NUM_AU, NUM_LANDMARKS, 3))
    downward = {"AU4", "AU7", "AU15", "AU24", "AU26"}
    for i, code in enumerate(AU_CODES):
        region = _REGIONS[code]
        direction = -1.0 if code in downward else 1.0
        magnitude = rng.uniform(2.5, 6.0)
        center = neutral[region].mean(axis=0)
        for p in region:
            # Smooth falloff from the region center keeps deltas coherent.
            dist = np.linalg.norm(neutral[p] - center)
            falloff = np.exp(-((dist / 25.0) ** 2))
            jitter = rng.normal(0.0, 0.15, size=3)
            deltas[i, p] = magnitude * falloff * (np.array([0.0, direction, 0.15]) + jitter)
    # Jaw drop also translates the whole lower face slightly.
    deltas[AU_INDEX["AU26"], MOUTH, 1] -= 3.0
    return FaceBasis(
        neutral=neutral,
        deltas=deltas,
        canthus_indices=OUTER_CANTHI,
        interocular_indices=OUTER_CANTHI,
        seed=seed,
    )


BLENDSHAPE_SCALE = 20.0  # intensity 0-5 -> weight 0-100


def au_to_blendshape(au: np.ndarray) -> np.ndarray:
    """Linearly scale AU intensities ([0, 5], clamped) to weights in [0, 100]."""
    au = np.asarray(au, dtype=np.float64)
    return np.clip(au, 0.0, 5.0) * BLENDSHAPE_SCALE


def reconstruct_landmarks(weights: np.ndarray, basis: FaceBasis) -> np.ndarray:
    """neutral + sum_i (w_i / 100) * delta_i -> (51, 3) landmark set."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (NUM_AU,):
        raise FaceError(f"expected {NUM_AU} weights, got {weights.shape}")
    return basis.neutral + np.tensordot(weights / 100.0, basis.deltas, axes=1)


def landmark_mae(truth: np.ndarray, pred: np.ndarray, d_frame: float, d_real: float) -> float:
    """Mean landmark error in mm, rescaled by real/frame canthus distances."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape or truth.ndim != 2:
        raise FaceError("landmark sets must share an (n, d) shape")
    if d_frame <= 0:
        raise FaceError("frame canthus distance must be positive")
    errs = np.linalg.norm(truth - pred, axis=1)
    return float((d_real / d_frame) * errs.mean())


def nme(truth: np.ndarray, pred: np.ndarray, norm_dist: float) -> float:
    """Mean landmark error normalized by the inter-ocular distance."""
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape or truth.ndim != 2:
        raise FaceError("landmark sets must share an (n, d) shape")
    if norm_dist <= 0:
        raise FaceError("normalization distance must be positive")
    errs = np.linalg.norm(truth - pred, axis=1)
    return float(errs.mean() / norm_dist)


def au_mae(pred: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute AU error over frames; returns (overall, per-channel)."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise FaceError(f"shape mismatch {pred.shape} vs {truth.shape}")
    abs_err = np.abs(pred - truth)
    per_channel = abs_err.reshape(-1, pred.shape[-1]).mean(axis=0)
    return float(abs_err.mean()), per_channel


def placement_amplitude(x1: float, y1: float, x2: float, y2: float,
                        d1: float, d2: float, focal_px: float) -> float:
    """Movement amplitude of a facial spot between two camera observations.

    Combines the in-plane pixel displacement with the depth change
    converted to pixels: delta_d = 2 f |d1 - d2| / (d1 + d2).
    """
    if d1 <= 0 or d2 <= 0:
        raise FaceError("depths must be positive")
    delta_d = 2.0 * focal_px * abs(d1 - d2) / (d1 + d2)
    return float(np.sqrt((x1 - x2) ** 2 + (y1 - y2) ** 2 + delta_d ** 2))
