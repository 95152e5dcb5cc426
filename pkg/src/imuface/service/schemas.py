"""Request/response models for the HTTP service; the CLI reuses them so
both surfaces validate identically. Unknown keys are rejected.
"""

from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SynthRequest(StrictModel):
    out_dir: str
    seed: int = 7
    bank_seed: int | None = None
    bank_blend_seed: int | None = None
    bank_blend_alpha: float = 0.5
    head_mode: str = "still"
    noise_sigma: float = 0.002
    drift_per_s: float = 0.0
    action_duration_s: float = 4.0
    reps_single: int = 10
    reps_expr: int = 10
    freeform_streams: int = 0
    freeform_duration_s: float = 300.0
    freeform_event_rate: float = 0.5


class SynthResponse(StrictModel):
    dataset_dir: str
    segments: int
    duration_s: float
    content_hash: str


class PreprocessRequest(StrictModel):
    dataset_dir: str
    out_dir: str
    patch_len: int = 200


class TrainRequest(StrictModel):
    dataset_dir: str
    out_dir: str
    variant: str = "h-c-dec"
    scale: str = "toy"
    epochs: int = 100
    seed: int = 0
    window_stride: int = 25
    lr: float = 0.001
    batch_size: int = 32
    lambda1: float = 0.5
    lambda2: float = 1.5
    model_overrides: dict = Field(default_factory=dict)


class TrainResponse(StrictModel):
    checkpoint: str
    history: str
    steps: int
    initial_train_loss: float
    final_train_loss: float
    best_val_loss: float
    val_horizon_mae: float
    train_windows: int
    val_windows: int
    param_count: int
    train_seconds: float


class AblateRequest(StrictModel):
    dataset_dir: str
    out_dir: str
    scale: str = "toy"
    epochs: int = 100
    seed: int = 0
    window_stride: int = 25
    lr: float = 0.001
    batch_size: int = 32
    model_overrides: dict = Field(default_factory=dict)


class AblateResponse(StrictModel):
    rows: list[dict]
    report: str


class InferRequest(StrictModel):
    checkpoint: str
    dataset_dir: str
    segment: str
    out_path: str
    reset_enabled: bool = True
    remap_enabled: bool = True


class EvalRequest(StrictModel):
    pred_path: str
    dataset_dir: str
    segment: str
    basis_path: str | None = None
    long_horizon_bin_s: float | None = None


class LongHorizonRequest(StrictModel):
    checkpoint: str
    dataset_dir: str
    segment: str
    reset_enabled: bool = True
    remap_enabled: bool = True
    bin_s: float = 30.0


class FinetuneRequest(StrictModel):
    checkpoint: str
    user_dataset_dir: str
    out_dir: str
    epochs: int = 30
    lr: float = 0.0005
    seed: int = 0
    shard_frames: int = 2016
    window_stride: int = 15
    eval_segment: str | None = None


class BenchRequest(StrictModel):
    scale: str = "full"
    checkpoint: str | None = None
    n_windows: int = 10
    seed: int = 0


class BenchResponse(StrictModel):
    scale: str
    variant: str
    param_count: int
    windows_timed: int
    mean_latency_ms: float
    p95_latency_ms: float
    window_period_ms: float
    real_time_factor: float


class ErrorBody(StrictModel):
    kind: str     # config | data | runtime
    message: str


class ErrorResponse(StrictModel):
    error: ErrorBody
