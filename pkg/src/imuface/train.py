"""Dual-loss training: prefix-conditioned sequence forecasting for the
history-fed variants, teacher-forced next-step training for the
autoregressive baseline, SGD with a one-cycle schedule, plus the
ablation and fine-tune harnesses.

The total objective is L = lambda1 * E_cnn + lambda2 * E_former where
E_cnn supervises the CNN's auxiliary per-patch head over the whole
window and E_former supervises the sequence output (target span only
for prefix-conditioned variants).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aus import NUM_AU
from .face import au_mae
from .model import AuForecaster, ModelConfig

VAL_FRACTION = 0.2  # chronological split: first 80% train, last 20% validation


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; aborted with diagnostics."""


@dataclass
class LossConfig:
    lambda1: float = 0.5   # weight on the CNN auxiliary loss
    lambda2: float = 1.5   # weight on the sequence loss

    def __post_init__(self) -> None:
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class OptimConfig:
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 100
    warmup_fraction: float = 0.3
    max_lr_multiplier: float = 10.0

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0 < self.warmup_fraction < 1):
            raise ValueError("warmup_fraction must lie in (0, 1)")


@dataclass
class TrainWindow:
    """One supervised example: 60 consecutive patches plus AU truth."""

    patches: np.ndarray    # (60, patch_len, 12)
    au_truth: np.ndarray   # (60, 14)
    history_len: int = 15


class WindowSet:
    """Lazily materialized windows over per-segment patch arrays.

    Each source segment contributes `(first_frame, patches, au)` where
    `patches[i]` belongs to label frame `first_frame + i`. Windows are
    ordered chronologically (segment order, then start frame), which the
    80/20 split relies on.
    """

    def __init__(self, seq_len: int):
        self.seq_len = seq_len
        self._segments: list[tuple[int, np.ndarray, np.ndarray]] = []
        self.index: list[tuple[int, int]] = []  # (segment_idx, start_frame)

    def add_segment(self, first_frame: int, patches: np.ndarray, au: np.ndarray,
                    stride: int) -> None:
        if len(patches) != len(au) - first_frame:
            raise ValueError("patch array must cover frames first_frame..n_frames-1")
        seg_idx = len(self._segments)
        self._segments.append((first_frame, patches, au))
        last_start = len(au) - self.seq_len
        for start in range(first_frame, last_start + 1, stride):
            self.index.append((seg_idx, start))

    def __len__(self) -> int:
        return len(self.index)

    def gather(self, which: np.ndarray | list[int]) -> tuple[np.ndarray, np.ndarray]:
        """Materialize (B, 60, P, C) patches and (B, 60, 14) truth."""
        pats, trus = [], []
        for i in which:
            seg_idx, start = self.index[int(i)]
            first, patches, au = self._segments[seg_idx]
            pats.append(patches[start - first:start - first + self.seq_len])
            trus.append(au[start:start + self.seq_len])
        return np.stack(pats), np.stack(trus)


def cnn_aux_loss(aux_out: np.ndarray, au_truth: np.ndarray) -> float:
    """MSE between the auxiliary per-patch head and per-frame labels."""
    diff = aux_out - au_truth
    return float(np.mean(diff * diff))


def total_loss(e_cnn: float, e_former: float, cfg: LossConfig) -> float:
    return cfg.lambda1 * e_cnn + cfg.lambda2 * e_former


def one_cycle_lr(step: int, total_steps: int, cfg: OptimConfig) -> float:
    """Linear ramp 0.1*lr_max -> lr_max over the warmup fraction, then
    cosine decay to lr_max / 1000."""
    if not (0 <= step <= total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    lr_max = cfg.lr * cfg.max_lr_multiplier
    warm = cfg.warmup_fraction * total_steps
    if step <= warm:
        frac = step / warm if warm > 0 else 1.0
        return 0.1 * lr_max + 0.9 * lr_max * frac
    floor = lr_max / 1000.0
    u = (step - warm) / max(total_steps - warm, 1e-12)
    return floor + (lr_max - floor) * 0.5 * (1.0 + np.cos(np.pi * u))


def _step_gradients(model: AuForecaster, patches: np.ndarray, truth: np.ndarray,
                    loss_cfg: LossConfig) -> tuple[float, float, float]:
    """Forward + backward for one batch under the variant's objective.

    Prefix-conditioned variants receive the ground-truth history prefix
    and are supervised on the 45 target frames in one shot (no per-step
    teacher forcing inside the span); the a-transformer is teacher-forced
    next-step under its causal mask; the history-free encoder supervises
    every frame.
    """
    cfg = model.cfg
    s = cfg.history_len
    variant = cfg.variant
    if variant in ("h-c-dec", "c-enc-h"):
        out, aux = model.forward(patches, history=truth[:, :s], train=True)
        seq_pred, seq_true = out[:, s:], truth[:, s:]
    elif variant == "a-transformer":
        out, aux = model.forward(patches, au_frames=truth, train=True)
        seq_pred, seq_true = out, truth
    else:  # c-enc: no history path; every frame is supervised
        out, aux = model.forward(patches, train=True)
        seq_pred, seq_true = out, truth

    e_former = float(np.mean((seq_pred - seq_true) ** 2))
    e_cnn = cnn_aux_loss(aux, truth)
    loss = total_loss(e_cnn, e_former, loss_cfg)

    d_out = np.zeros_like(out)
    d_span = loss_cfg.lambda2 * 2.0 * (seq_pred - seq_true) / seq_pred.size
    if variant in ("h-c-dec", "c-enc-h"):
        d_out[:, s:] = d_span
    else:
        d_out[:] = d_span
    d_aux = loss_cfg.lambda1 * 2.0 * (aux - truth) / aux.size
    model.backward(d_out, d_aux)
    return e_cnn, e_former, loss


def prefix_conditioned_step(model: AuForecaster, patches: np.ndarray,
                            truth: np.ndarray, loss_cfg: LossConfig):
    if model.cfg.variant not in ("h-c-dec", "c-enc-h"):
        raise ValueError("prefix-conditioned training needs a history-fed variant")
    return _step_gradients(model, patches, truth, loss_cfg)


def autoregressive_step(model: AuForecaster, patches: np.ndarray,
                        truth: np.ndarray, loss_cfg: LossConfig):
    if model.cfg.variant != "a-transformer":
        raise ValueError("autoregressive training applies to the a-transformer")
    return _step_gradients(model, patches, truth, loss_cfg)


def sgd_update(model: AuForecaster, lr: float) -> None:
    for p in model.parameters():
        p.value -= (lr * p.grad).astype(p.value.dtype, copy=False)


@dataclass
class TrainResult:
    history: list[dict]
    best_val_loss: float
    final_train_loss: float
    initial_train_loss: float
    steps: int
    train_windows: int
    val_windows: int
    seconds: float


def _validation_loss(model: AuForecaster, windows: WindowSet,
                     idx: np.ndarray, loss_cfg: LossConfig,
                     batch_size: int) -> float:
    """Eval-mode loss under the training objective (no dropout)."""
    cfg = model.cfg
    s = cfg.history_len
    losses, weights = [], []
    for lo in range(0, len(idx), batch_size):
        part = idx[lo:lo + batch_size]
        patches, truth = windows.gather(part)
        if cfg.variant in ("h-c-dec", "c-enc-h"):
            out, aux = model.forward(patches, history=truth[:, :s],
                                     train=False, cache=False)
            e_former = float(np.mean((out[:, s:] - truth[:, s:]) ** 2))
        elif cfg.variant == "a-transformer":
            out, aux = model.forward(patches, au_frames=truth, train=False, cache=False)
            e_former = float(np.mean((out - truth) ** 2))
        else:
            out, aux = model.forward(patches, train=False, cache=False)
            e_former = float(np.mean((out - truth) ** 2))
        losses.append(total_loss(cnn_aux_loss(aux, truth), e_former, loss_cfg))
        weights.append(len(part))
    return float(np.average(losses, weights=weights))


def train(model: AuForecaster, windows: WindowSet, optim: OptimConfig,
          loss_cfg: LossConfig, seed: int = 0,
          history_path: str | Path | None = None,
          val_fraction: float = VAL_FRACTION) -> TrainResult:
    """SGD with the one-cycle schedule; deterministic per seed.

    Windows are split chronologically (first 80% train); the best
    validation parameters are restored before returning.
    """
    if len(windows) < 1:
        raise ValueError("need at least one training window")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    model.seed_dropout(seed + 1)

    n = len(windows)
    n_val = int(round(n * val_fraction))
    train_idx = np.arange(0, n - n_val)
    val_idx = np.arange(n - n_val, n)
    if len(train_idx) == 0:
        train_idx, val_idx = np.arange(n), np.arange(0)

    batches_per_epoch = int(np.ceil(len(train_idx) / optim.batch_size))
    total_steps = optim.epochs * batches_per_epoch
    history: list[dict] = []
    best_val = np.inf
    best_params = None
    step = 0
    initial_loss = None
    fh = Path(history_path).open("w") if history_path else None
    try:
        for epoch in range(optim.epochs):
            order = rng.permutation(train_idx)
            for lo in range(0, len(order), optim.batch_size):
                batch = order[lo:lo + optim.batch_size]
                patches, truth = windows.gather(batch)
                lr = one_cycle_lr(step, max(total_steps, 1), optim)
                model.zero_grad()
                e_cnn, e_former, loss = _step_gradients(model, patches, truth, loss_cfg)
                if not np.isfinite(loss):
                    raise TrainingDiverged(
                        f"non-finite loss at step {step} (epoch {epoch}): "
                        f"e_cnn={e_cnn} e_former={e_former}")
                sgd_update(model, lr)
                rec = {"step": step, "lr": lr, "e_cnn": e_cnn,
                       "e_former": e_former, "total": loss}
                history.append(rec)
                if fh:
                    fh.write(json.dumps(rec) + "\n")
                if initial_loss is None:
                    initial_loss = loss
                step += 1
            if len(val_idx):
                val = _validation_loss(model, windows, val_idx, loss_cfg,
                                       optim.batch_size)
                if val < best_val:
                    best_val = val
                    best_params = [p.value.copy() for p in model.parameters()]
    finally:
        if fh:
            fh.close()
    if best_params is not None:
        for p, v in zip(model.parameters(), best_params):
            p.value[...] = v
    return TrainResult(history=history,
                       best_val_loss=float(best_val),
                       final_train_loss=history[-1]["total"] if history else np.nan,
                       initial_train_loss=initial_loss if initial_loss is not None else np.nan,
                       steps=step, train_windows=len(train_idx),
                       val_windows=len(val_idx),
                       seconds=time.perf_counter() - t0)


def horizon_mae(model: AuForecaster, windows: WindowSet,
                idx: np.ndarray | None = None, batch_size: int = 32) -> float:
    """Target-span AU MAE given the ground-truth history prefix.

    The a-transformer self-feeds across the horizon (its deployment
    mode); the other variants predict the span in one shot.
    """
    cfg = model.cfg
    s = cfg.history_len
    if idx is None:
        idx = np.arange(len(windows))
    errs, weights = [], []
    for lo in range(0, len(idx), batch_size):
        part = idx[lo:lo + batch_size]
        patches, truth = windows.gather(part)
        pred = model.predict(patches, truth[:, :s])
        mae, _ = au_mae(np.clip(pred[:, s:], 0.0, 5.0), truth[:, s:])
        errs.append(mae)
        weights.append(len(part))
    return float(np.average(errs, weights=weights))


def val_indices(windows: WindowSet, val_fraction: float = VAL_FRACTION) -> np.ndarray:
    n = len(windows)
    n_val = int(round(n * val_fraction))
    return np.arange(n - n_val, n)


def ablation_harness(windows: WindowSet, make_config, optim: OptimConfig,
                     loss_cfg: LossConfig, seed: int = 0,
                     out_path: str | Path | None = None) -> list[dict]:
    """Train all four variants identically and report target-span MAE.

    `make_config(variant)` builds the (identically scaled) ModelConfig.
    Returns one machine-readable row per variant.
    """
    rows = []
    val_idx = val_indices(windows)
    for variant in ("c-enc", "a-transformer", "c-enc-h", "h-c-dec"):
        cfg = make_config(variant)
        model = AuForecaster(cfg)
        result = train(model, windows, optim, loss_cfg, seed=seed)
        mae = horizon_mae(model, windows, val_idx)
        rows.append({
            "variant": variant,
            "horizon_mae": mae,
            "best_val_loss": result.best_val_loss,
            "final_train_loss": result.final_train_loss,
            "param_count": model.param_count(),
            "train_seconds": round(result.seconds, 2),
        })
    if out_path:
        Path(out_path).write_text(json.dumps(rows, indent=1))
    return rows


def fine_tune(model: AuForecaster, user_windows: WindowSet, optim: OptimConfig,
              loss_cfg: LossConfig, seed: int = 0) -> TrainResult:
    """Continue training on a small user-specific shard (all windows train,
    no validation split: the shard is ~67 s of data)."""
    if optim.epochs == 0:
        return TrainResult(history=[], best_val_loss=np.nan, final_train_loss=np.nan,
                           initial_train_loss=np.nan, steps=0,
                           train_windows=len(user_windows), val_windows=0, seconds=0.0)
    return train(model, user_windows, optim, loss_cfg, seed=seed, val_fraction=0.0)
