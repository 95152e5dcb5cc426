"""FastAPI service wrapping the pipeline jobs.

Handlers are plain request-model -> dict functions so the CLI can invoke
them in-process; the routes only add HTTP plumbing. Errors map to a JSON
envelope: config problems -> 422, data problems -> 400, anything else ->
500, mirroring the CLI exit codes 2/3/4.
"""

from __future__ import annotations

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from .. import pipeline
from ..dataset import DataError
from ..model import CheckpointError, ModelError
from ..synth import SynthConfig
from ..train import TrainingDiverged
from . import schemas as sc

SERVICE_VERSION = "1"


class ConfigError(ValueError):
    """Invalid request-level configuration."""


def handle_synth(req: sc.SynthRequest) -> dict:
    cfg = SynthConfig(seed=req.seed, bank_seed=req.bank_seed,
                      bank_blend_seed=req.bank_blend_seed,
                      bank_blend_alpha=req.bank_blend_alpha,
                      head_mode=req.head_mode, noise_sigma=req.noise_sigma,
                      drift_per_s=req.drift_per_s,
                      action_duration_s=req.action_duration_s,
                      reps_single=req.reps_single, reps_expr=req.reps_expr,
                      freeform_streams=req.freeform_streams,
                      freeform_duration_s=req.freeform_duration_s,
                      freeform_event_rate=req.freeform_event_rate)
    return pipeline.job_synth(cfg, req.out_dir)


def handle_preprocess(req: sc.PreprocessRequest) -> dict:
    return pipeline.job_preprocess(req.dataset_dir, req.out_dir, req.patch_len)


def handle_train(req: sc.TrainRequest) -> dict:
    return pipeline.job_train(req.dataset_dir, req.out_dir, variant=req.variant,
                              scale=req.scale, epochs=req.epochs, seed=req.seed,
                              window_stride=req.window_stride, lr=req.lr,
                              batch_size=req.batch_size, lambda1=req.lambda1,
                              lambda2=req.lambda2,
                              model_overrides=req.model_overrides)


def handle_ablate(req: sc.AblateRequest) -> dict:
    return pipeline.job_ablate(req.dataset_dir, req.out_dir, scale=req.scale,
                               epochs=req.epochs, seed=req.seed,
                               window_stride=req.window_stride, lr=req.lr,
                               batch_size=req.batch_size,
                               model_overrides=req.model_overrides)


def handle_infer(req: sc.InferRequest) -> dict:
    return pipeline.job_infer(req.checkpoint, req.dataset_dir, req.segment,
                              req.out_path, reset_enabled=req.reset_enabled,
                              remap_enabled=req.remap_enabled)


def handle_eval(req: sc.EvalRequest) -> dict:
    return pipeline.job_eval(req.pred_path, req.dataset_dir, req.segment,
                             basis_path=req.basis_path,
                             long_horizon_bin_s=req.long_horizon_bin_s)


def handle_long_horizon(req: sc.LongHorizonRequest) -> dict:
    return pipeline.job_long_horizon(req.checkpoint, req.dataset_dir, req.segment,
                                     reset_enabled=req.reset_enabled,
                                     remap_enabled=req.remap_enabled, bin_s=req.bin_s)


def handle_finetune(req: sc.FinetuneRequest) -> dict:
    return pipeline.job_finetune(req.checkpoint, req.user_dataset_dir, req.out_dir,
                                 epochs=req.epochs, lr=req.lr, seed=req.seed,
                                 shard_frames=req.shard_frames,
                                 window_stride=req.window_stride,
                                 eval_segment=req.eval_segment)


def handle_bench(req: sc.BenchRequest) -> dict:
    return pipeline.job_bench(scale=req.scale, checkpoint=req.checkpoint,
                              n_windows=req.n_windows, seed=req.seed)


HANDLERS = {
    "synth": (sc.SynthRequest, handle_synth),
    "preprocess": (sc.PreprocessRequest, handle_preprocess),
    "train": (sc.TrainRequest, handle_train),
    "ablate": (sc.AblateRequest, handle_ablate),
    "infer": (sc.InferRequest, handle_infer),
    "eval": (sc.EvalRequest, handle_eval),
    "long-horizon": (sc.LongHorizonRequest, handle_long_horizon),
    "finetune": (sc.FinetuneRequest, handle_finetune),
    "bench": (sc.BenchRequest, handle_bench),
}


def classify_error(exc: Exception) -> tuple[str, int]:
    """(kind, http status); the CLI maps kind to exit codes 2/3/4."""
    if isinstance(exc, (DataError, FileNotFoundError, CheckpointError)):
        return "data", 400
    if isinstance(exc, (ConfigError, ValueError)):
        return "config", 422
    return "runtime", 500


def make_app() -> FastAPI:
    from fastapi.exceptions import RequestValidationError

    app = FastAPI(title="imuface", version=SERVICE_VERSION)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request, exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"error": {"kind": "config", "message": str(exc)}})

    @app.exception_handler(Exception)
    async def _any_error(request, exc: Exception):
        kind, status = classify_error(exc)
        return JSONResponse(status_code=status,
                            content={"error": {"kind": kind, "message": str(exc)}})

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "version": SERVICE_VERSION}

    @app.post("/v1/synth", response_model=sc.SynthResponse)
    def synth(req: sc.SynthRequest):
        return handle_synth(req)

    @app.post("/v1/preprocess")
    def preprocess(req: sc.PreprocessRequest):
        return handle_preprocess(req)

    @app.post("/v1/train", response_model=sc.TrainResponse)
    def train(req: sc.TrainRequest):
        return handle_train(req)

    @app.post("/v1/ablate", response_model=sc.AblateResponse)
    def ablate(req: sc.AblateRequest):
        return handle_ablate(req)

    @app.post("/v1/infer")
    def infer(req: sc.InferRequest):
        return handle_infer(req)

    @app.post("/v1/eval")
    def evaluate(req: sc.EvalRequest):
        return handle_eval(req)

    @app.post("/v1/long-horizon")
    def long_horizon(req: sc.LongHorizonRequest):
        return handle_long_horizon(req)

    @app.post("/v1/finetune")
    def finetune(req: sc.FinetuneRequest):
        return handle_finetune(req)

    @app.post("/v1/bench", response_model=sc.BenchResponse)
    def bench(req: sc.BenchRequest):
        return handle_bench(req)

    return app
