"""Synthetic ground truth: AU trajectories rendered into tri-IMU streams
with known head-motion artifacts.

The forward model is linear-plus-derivative: each side's measurement is

    meas(t) = au(t) @ S_side + au'(t) @ D_side
              + head(t) @ A_side^T + bias + drift * t + noise

and the reference IMU sees head(t) + noise. Every term is recorded in the
ground-truth bundle so downstream fits and metrics have exact oracles.
Everything is deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from .aus import (AU_CODES, AU_INDEX, AU_MAX, EXPRESSIONS, NUM_AU,
                  SINGLE_AU_ACTIONS)
from .signal_prep import TriImuStream

ACC_SIG_SCALE = 0.04      # g per unit AU (entry std)
GYRO_SIG_SCALE = 4.0      # deg/s per unit AU
ACC_DYN_SCALE = 0.006     # g per unit AU/s
GYRO_DYN_SCALE = 0.6      # deg/s per unit AU/s
GYRO_NOISE_RATIO = 100.0  # gyro noise std = ratio * acc noise std
DEFAULT_NOISE_SIGMA = 0.002  # acc noise std in g


@dataclass
class AuEvent:
    channel: int
    onset_s: float
    attack_s: float
    hold_s: float
    decay_s: float
    peak: float

    @property
    def end_s(self) -> float:
        return self.onset_s + self.attack_s + self.hold_s + self.decay_s


@dataclass
class AuTrajectory:
    fps: float
    frames: np.ndarray          # (n, 14) in [0, 5]
    events: list[AuEvent] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames, dtype=np.float64)

    @property
    def duration_s(self) -> float:
        return len(self.frames) / self.fps

    def scaled(self, factor: float) -> "AuTrajectory":
        return AuTrajectory(self.fps, self.frames * factor, self.events)


def _envelope(t: np.ndarray, ev: AuEvent) -> np.ndarray:
    """Half-cosine attack, flat hold, half-cosine decay (bounded slope)."""
    u = t - ev.onset_s
    rise = np.clip(u / max(ev.attack_s, 1e-9), 0.0, 1.0)
    fall = np.clip((u - ev.attack_s - ev.hold_s) / max(ev.decay_s, 1e-9), 0.0, 1.0)
    up = 0.5 * (1 - np.cos(np.pi * rise))
    down = 0.5 * (1 + np.cos(np.pi * fall))
    return ev.peak * np.where(u < ev.attack_s + ev.hold_s, up, down) * (u >= 0)


def default_co_activation() -> np.ndarray:
    """Identity plus the known muscle-coupling spillovers."""
    c = np.eye(NUM_AU)
    couples = [
        ("AU9", "AU7", 0.35),    # nose wrinkling tightens the lids
        ("AU12", "AU6", 0.30),   # smiling raises the cheeks
        ("AU26", "AU25", 0.40),  # a dropped jaw parts the lips
        ("AU10", "AU9", 0.20),
        ("AU20", "AU25", 0.20),
    ]
    for src, dst, w in couples:
        c[AU_INDEX[dst], AU_INDEX[src]] = w
    return c


def gen_au_trajectory(seed: int, duration_s: float, event_rate: float,
                      co_activation: np.ndarray | None = None,
                      fps: float = 30.0) -> AuTrajectory:
    """Poisson-scheduled AU events with attack/hold/decay envelopes.

    `co_activation[j, i]` is the spill of a primary event on channel i
    into channel j; the identity matrix keeps events isolated.
    """
    if duration_s < 2.0:
        raise ValueError("trajectory must cover at least 2 s")
    rng = np.random.default_rng(seed)
    n_frames = int(round(duration_s * fps))
    t = np.arange(n_frames) / fps
    events: list[AuEvent] = []
    if event_rate > 0:
        clock = rng.exponential(1.0 / event_rate)
        while clock < duration_s:
            events.append(AuEvent(
                channel=int(rng.integers(NUM_AU)),
                onset_s=float(clock),
                attack_s=float(rng.uniform(0.25, 0.6)),
                hold_s=float(rng.uniform(0.4, 1.8)),
                decay_s=float(rng.uniform(0.3, 0.9)),
                peak=float(rng.uniform(1.2, 4.8)),
            ))
            clock += rng.exponential(1.0 / event_rate)
    base = np.zeros((n_frames, NUM_AU))
    for ev in events:
        base[:, ev.channel] += _envelope(t, ev)
    mix = base if co_activation is None else base @ np.asarray(co_activation).T
    return AuTrajectory(fps=fps, frames=np.clip(mix, 0.0, AU_MAX), events=events)


def scripted_action_trajectory(targets: dict[str, float], duration_s: float,
                               seed: int, fps: float = 30.0,
                               lead_s: float = 0.5, ramp_s: float = 0.6) -> AuTrajectory:
    """One rest-ramp-hold-release-rest action segment (dataset protocol)."""
    rng = np.random.default_rng(seed)
    n_frames = int(round(duration_s * fps))
    t = np.arange(n_frames) / fps
    frames = np.zeros((n_frames, NUM_AU))
    hold = duration_s - 2 * lead_s - 2 * ramp_s
    if hold <= 0:
        raise ValueError("segment too short for the scripted envelope")
    events = []
    for code, peak in targets.items():
        jitter = float(np.clip(peak * rng.uniform(0.9, 1.05), 0.0, AU_MAX))
        ev = AuEvent(channel=AU_INDEX[code], onset_s=lead_s, attack_s=ramp_s,
                     hold_s=hold, decay_s=ramp_s, peak=jitter)
        frames[:, ev.channel] += _envelope(t, ev)
        events.append(ev)
    return AuTrajectory(fps=fps, frames=np.clip(frames, 0.0, AU_MAX), events=events)


@dataclass
class AuSignatureBank:
    """Per-AU IMU response: static (per unit intensity) and dynamic
    (per unit intensity/s) 12-vectors, left six channels then right six."""

    static: np.ndarray   # (14, 12)
    dynamic: np.ndarray  # (14, 12)
    seed: int

    def __post_init__(self) -> None:
        self.static = np.asarray(self.static, dtype=np.float64)
        self.dynamic = np.asarray(self.dynamic, dtype=np.float64)
        if self.static.shape != (NUM_AU, 12) or self.dynamic.shape != (NUM_AU, 12):
            raise ValueError("signature banks must be (14, 12)")
        if np.linalg.matrix_rank(self.static) != 12:
            raise ValueError("static signatures must span all 12 channels")


def make_signature_bank(seed: int) -> AuSignatureBank:
    """Seeded random bank; the jaw drop carries the largest amplitude."""
    rng = np.random.default_rng(seed)
    scale = np.array([ACC_SIG_SCALE] * 3 + [GYRO_SIG_SCALE] * 3
                     + [ACC_SIG_SCALE] * 3 + [GYRO_SIG_SCALE] * 3)
    dyn_scale = np.array([ACC_DYN_SCALE] * 3 + [GYRO_DYN_SCALE] * 3
                         + [ACC_DYN_SCALE] * 3 + [GYRO_DYN_SCALE] * 3)
    amp = rng.uniform(0.35, 0.8, size=NUM_AU)
    amp[AU_INDEX["AU26"]] = 1.0
    static = rng.normal(size=(NUM_AU, 12)) * scale * amp[:, None]
    dynamic = rng.normal(size=(NUM_AU, 12)) * dyn_scale * amp[:, None]
    return AuSignatureBank(static=static, dynamic=dynamic, seed=seed)


def blend_banks(base: AuSignatureBank, other: AuSignatureBank,
                alpha: float) -> AuSignatureBank:
    """Interpolated bank; models a new user with shifted skin response."""
    return AuSignatureBank(static=(1 - alpha) * base.static + alpha * other.static,
                           dynamic=(1 - alpha) * base.dynamic + alpha * other.dynamic,
                           seed=base.seed)


@dataclass
class HeadCoupling:
    """Fixed per-user hardware geometry: how reference-IMU motion couples
    into each measurement IMU, plus bias and optional slow bias drift."""

    A_left: np.ndarray
    A_right: np.ndarray
    bias_left: np.ndarray
    bias_right: np.ndarray
    drift_left: np.ndarray   # physical units per second
    drift_right: np.ndarray

    def true_map(self, side: str, t_s: float = 0.0):
        """Exact (R, t) from reference to a side at stream time t_s."""
        A = self.A_left if side == "left" else self.A_right
        b = self.bias_left if side == "left" else self.bias_right
        d = self.drift_left if side == "left" else self.drift_right
        return A, b + d * t_s


def make_head_coupling(seed: int, drift_per_s: float = 0.0) -> HeadCoupling:
    rng = np.random.default_rng(seed)

    def coupling() -> np.ndarray:
        while True:
            A = np.eye(6) + 0.25 * rng.normal(size=(6, 6)) / np.sqrt(6)
            if np.linalg.cond(A) < 50:
                return A

    def bias() -> np.ndarray:
        return np.concatenate([rng.uniform(-0.05, 0.05, 3), rng.uniform(-5, 5, 3)])

    def drift() -> np.ndarray:
        direction = rng.choice([-1.0, 1.0], size=6)
        return direction * drift_per_s * np.array([1, 1, 1,
                                                   GYRO_NOISE_RATIO,
                                                   GYRO_NOISE_RATIO,
                                                   GYRO_NOISE_RATIO])

    return HeadCoupling(A_left=coupling(), A_right=coupling(),
                        bias_left=bias(), bias_right=bias(),
                        drift_left=drift(), drift_right=drift())


@dataclass
class HeadMotionModel:
    """Band-limited random head motion: still (exactly zero), sway
    (<= 5 Hz) or walk (<= 15 Hz with a gait fundamental). Non-still modes
    alternate active bouts with near-still rests that keep a micro-motion
    floor so remapping segments stay informative."""

    mode: str
    coupling: HeadCoupling
    seed: int = 0
    macro_scale: float = 1.0
    micro_scale: float = 1.0
    lead_in_s: float = 2.5    # gentle motion at stream start for map fitting

    def __post_init__(self) -> None:
        if self.mode not in ("still", "sway", "walk"):
            raise ValueError(f"unknown head mode {self.mode!r}")
        rng = np.random.default_rng(self.seed)
        band = 5.0 if self.mode == "sway" else 15.0
        n_comp = 5
        acc_amp = (0.15 if self.mode == "sway" else 0.45) * self.macro_scale
        amp_scale = np.array([acc_amp] * 3 + [acc_amp * GYRO_NOISE_RATIO] * 3)
        self._freqs = rng.uniform(0.3, band, size=(6, n_comp))
        if self.mode == "walk":
            self._freqs[:, :2] = np.array([2.0, 4.0])  # gait fundamental
        self._phases = rng.uniform(0, 2 * np.pi, size=(6, n_comp))
        self._amps = rng.uniform(0.3, 1.0, size=(6, n_comp)) * amp_scale[:, None] / n_comp
        micro_acc = 0.01 * self.micro_scale
        micro_scale_vec = np.array([micro_acc] * 3 + [micro_acc * GYRO_NOISE_RATIO] * 3)
        self._micro_freqs = rng.uniform(0.5, 3.0, size=(6, 3))
        self._micro_phases = rng.uniform(0, 2 * np.pi, size=(6, 3))
        self._micro_amps = rng.uniform(0.3, 1.0, size=(6, 3)) * micro_scale_vec[:, None] / 3
        # Activity schedule: alternating active / rest bouts.
        self._switches = []
        clock, active = self.lead_in_s, True
        self._switches.append((0.0, True))
        for _ in range(4000):
            self._switches.append((clock, active))
            clock += rng.uniform(6, 14) if active else rng.uniform(2.5, 4.5)
            active = not active

    def _gate(self, t: np.ndarray) -> np.ndarray:
        """Smooth 0/1 activity envelope over time."""
        gate = np.zeros_like(t)
        ramp = 0.5
        for (start, active), (end, _) in zip(self._switches, self._switches[1:]):
            if start > t[-1] + ramp:
                break
            if not active:
                continue
            up = np.clip((t - start) / ramp, 0, 1)
            down = np.clip((end - t) / ramp, 0, 1)
            gate = np.maximum(gate, np.minimum(up, down))
        return gate

    def sample(self, t_s: np.ndarray) -> np.ndarray:
        """Reference-IMU motion at the given times, (n, 6)."""
        t_s = np.asarray(t_s, dtype=np.float64)
        if self.mode == "still":
            return np.zeros((len(t_s), 6))
        macro = np.zeros((len(t_s), 6))
        micro = np.zeros((len(t_s), 6))
        for c in range(6):
            macro[:, c] = np.sum(
                self._amps[c][:, None]
                * np.sin(2 * np.pi * self._freqs[c][:, None] * t_s[None, :]
                         + self._phases[c][:, None]), axis=0)
            micro[:, c] = np.sum(
                self._micro_amps[c][:, None]
                * np.sin(2 * np.pi * self._micro_freqs[c][:, None] * t_s[None, :]
                         + self._micro_phases[c][:, None]), axis=0)
        return macro * self._gate(t_s)[:, None] + micro

    def rest_windows(self, duration_s: float) -> list[tuple[float, float]]:
        """Ground-truth (start, end) rest bouts within the stream."""
        out = []
        for (start, active), (end, _) in zip(self._switches, self._switches[1:]):
            if not active and start < duration_s:
                out.append((start, min(end, duration_s)))
        return out


@dataclass
class GroundTruth:
    """Everything the generator knows; the oracle for downstream tests."""

    au_400: np.ndarray          # (n, 14) zero-order-hold labels at 400 Hz
    labels: np.ndarray          # (n_frames, 14) at 30 fps
    clean_left: np.ndarray      # (n, 6) facial component only
    clean_right: np.ndarray
    head_motion: np.ndarray     # (n, 6)
    coupling: HeadCoupling
    noise_sigma: float
    fps: float
    sample_rate_hz: float

    def noise_std_vector(self) -> np.ndarray:
        """Per-channel iid noise std (acc in g, gyro in deg/s)."""
        return self.noise_sigma * np.array([1, 1, 1] + [GYRO_NOISE_RATIO] * 3)


def render_imu(traj: AuTrajectory, bank: AuSignatureBank, head: HeadMotionModel,
               noise_sigma: float = DEFAULT_NOISE_SIGMA, seed: int = 0,
               sample_rate_hz: float = 400.0) -> tuple[TriImuStream, GroundTruth]:
    """Render a trajectory into a 400 Hz tri-IMU stream plus ground truth."""
    fps = traj.fps
    n_frames = len(traj.frames)
    n = int(round(n_frames * sample_rate_hz / fps))
    t_s = np.arange(n) / sample_rate_hz
    t_us = np.round(t_s * 1e6).astype(np.int64)

    frame_of_sample = np.minimum((t_s * fps).astype(int), n_frames - 1)
    au = traj.frames[frame_of_sample]
    au_dot = np.gradient(au, 1.0 / sample_rate_hz, axis=0)

    facial = au @ bank.static + au_dot @ bank.dynamic   # (n, 12)
    clean_left, clean_right = facial[:, :6], facial[:, 6:]

    motion = head.sample(t_s)
    cp = head.coupling
    rng = np.random.default_rng(seed)
    noise_std = noise_sigma * np.array([1, 1, 1] + [GYRO_NOISE_RATIO] * 3)

    def noisy(x: np.ndarray) -> np.ndarray:
        if noise_sigma == 0:
            return x
        return x + rng.normal(size=x.shape) * noise_std

    drift_l = t_s[:, None] * cp.drift_left
    drift_r = t_s[:, None] * cp.drift_right
    left = noisy(clean_left + motion @ cp.A_left.T + cp.bias_left + drift_l)
    right = noisy(clean_right + motion @ cp.A_right.T + cp.bias_right + drift_r)
    reference = noisy(motion)

    stream = TriImuStream(t_us=t_us, left=left, right=right, reference=reference)
    truth = GroundTruth(au_400=au, labels=traj.frames, clean_left=clean_left,
                        clean_right=clean_right, head_motion=motion, coupling=cp,
                        noise_sigma=noise_sigma, fps=fps, sample_rate_hz=sample_rate_hz)
    return stream, truth


@dataclass
class SynthConfig:
    """Dataset recipe mirroring the three-phase collection protocol, plus
    optional freeform trajectories for forecast training variety."""

    seed: int = 7
    bank_seed: int | None = None       # defaults to seed
    bank_blend_seed: int | None = None # blend toward another user's bank
    bank_blend_alpha: float = 0.5
    head_mode: str = "still"
    noise_sigma: float = DEFAULT_NOISE_SIGMA
    drift_per_s: float = 0.0
    sample_rate_hz: float = 400.0
    fps: float = 30.0
    action_duration_s: float = 4.0
    calibration_reps: int = 3
    reps_single: int = 10
    reps_expr: int = 10
    freeform_streams: int = 0
    freeform_duration_s: float = 300.0
    freeform_event_rate: float = 0.5
    co_activation: np.ndarray | None = None

    def resolved_bank_seed(self) -> int:
        return self.seed if self.bank_seed is None else self.bank_seed


def _phase_plan(cfg: SynthConfig) -> list[tuple[str, str, dict[str, float]]]:
    """(phase, action, AU targets) for every scripted segment, in order."""
    plan: list[tuple[str, str, dict[str, float]]] = []
    plan.append(("calibration", "still", {}))
    for _ in range(cfg.calibration_reps):
        plan.append(("calibration", "AU26", {"AU26": AU_MAX}))
    for code in SINGLE_AU_ACTIONS:
        for _ in range(cfg.reps_single):
            plan.append(("single_au", code, {code: 4.5}))
    for name, recipe in EXPRESSIONS.items():
        for _ in range(cfg.reps_expr):
            targets = {code: 4.0 * share for code, share in recipe.items()}
            plan.append(("expressions", name, targets))
    return plan


def make_dataset(cfg: SynthConfig, out_dir: str | Path) -> ds.DatasetManifest:
    """Generate and persist a full dataset; deterministic per config."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    bank = make_signature_bank(cfg.resolved_bank_seed())
    if cfg.bank_blend_seed is not None:
        bank = blend_banks(bank, make_signature_bank(cfg.bank_blend_seed),
                           cfg.bank_blend_alpha)
    coupling = make_head_coupling(cfg.seed + 1, drift_per_s=cfg.drift_per_s)
    seq = np.random.SeedSequence(cfg.seed)
    co = cfg.co_activation if cfg.co_activation is not None else default_co_activation()

    segments: list[ds.SegmentInfo] = []
    gt_arrays: dict[str, np.ndarray] = {
        "bank_static": bank.static, "bank_dynamic": bank.dynamic,
        "A_left": coupling.A_left, "A_right": coupling.A_right,
        "bias_left": coupling.bias_left, "bias_right": coupling.bias_right,
        "drift_left": coupling.drift_left, "drift_right": coupling.drift_right,
    }

    plan = _phase_plan(cfg)
    counters: dict[str, int] = {}
    child_seeds = seq.spawn(len(plan) + cfg.freeform_streams)

    for i, (phase, action, targets) in enumerate(plan):
        idx = counters.get(action, 0)
        counters[action] = idx + 1
        seg_seed = child_seeds[i]
        traj_seed, motion_seed, noise_seed = (int(s.generate_state(1)[0])
                                              for s in seg_seed.spawn(3))
        traj = scripted_action_trajectory(targets, cfg.action_duration_s,
                                          seed=traj_seed, fps=cfg.fps)
        head = HeadMotionModel(mode=cfg.head_mode, coupling=coupling,
                               seed=motion_seed)
        stream, truth = render_imu(traj, bank, head, noise_sigma=cfg.noise_sigma,
                                   seed=noise_seed, sample_rate_hz=cfg.sample_rate_hz)
        seg_id = f"{action.replace('/', '')}_{idx:03d}".lower()
        seg = ds.SegmentInfo(
            id=seg_id, phase=phase, action=action,
            stream_path=f"{phase}/{seg_id}.imu.bin",
            labels_path=f"{phase}/{seg_id}.labels.jsonl",
            n_samples=len(stream), n_frames=len(traj.frames),
            peak_au=float(traj.frames.max()) if targets else 0.0)
        ds.write_segment(root, seg, stream, traj.frames)
        segments.append(seg)
        gt_arrays[f"clean_{seg_id}"] = np.concatenate(
            [truth.clean_left, truth.clean_right], axis=1).astype(np.float32)
        gt_arrays[f"head_{seg_id}"] = truth.head_motion.astype(np.float32)

    for j in range(cfg.freeform_streams):
        seg_seed = child_seeds[len(plan) + j]
        traj_seed, motion_seed, noise_seed = (int(s.generate_state(1)[0])
                                              for s in seg_seed.spawn(3))
        traj = gen_au_trajectory(traj_seed, cfg.freeform_duration_s,
                                 cfg.freeform_event_rate, co, fps=cfg.fps)
        head = HeadMotionModel(mode=cfg.head_mode, coupling=coupling,
                               seed=motion_seed)
        stream, truth = render_imu(traj, bank, head, noise_sigma=cfg.noise_sigma,
                                   seed=noise_seed, sample_rate_hz=cfg.sample_rate_hz)
        seg_id = f"freeform_{j:03d}"
        seg = ds.SegmentInfo(
            id=seg_id, phase="freeform", action="freeform",
            stream_path=f"freeform/{seg_id}.imu.bin",
            labels_path=f"freeform/{seg_id}.labels.jsonl",
            n_samples=len(stream), n_frames=len(traj.frames),
            peak_au=float(traj.frames.max()))
        ds.write_segment(root, seg, stream, traj.frames)
        segments.append(seg)
        gt_arrays[f"clean_{seg_id}"] = np.concatenate(
            [truth.clean_left, truth.clean_right], axis=1).astype(np.float32)
        gt_arrays[f"head_{seg_id}"] = truth.head_motion.astype(np.float32)

    manifest = ds.DatasetManifest(
        version=ds.MANIFEST_VERSION, seed=cfg.seed,
        sample_rate_hz=cfg.sample_rate_hz, label_rate_fps=cfg.fps,
        acc_scale_g=1.0 / 4096.0, gyro_scale_dps=1.0 / 16.4,
        head_mode=cfg.head_mode, segments=segments,
        extras={"bank_seed": cfg.resolved_bank_seed(),
                "noise_sigma": cfg.noise_sigma,
                "drift_per_s": cfg.drift_per_s,
                "au_codes": AU_CODES})
    ds.save_manifest(manifest, root)
    ds.save_ground_truth(root, gt_arrays)
    return manifest
