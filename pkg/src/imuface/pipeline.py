"""End-to-end jobs tying the modules together: dataset synthesis,
preprocessing with artifact-removal reporting, training, ablation,
streaming inference, evaluation, fine-tuning, and latency benchmarks.

These functions are the single implementation behind both the HTTP
service and the CLI; they exchange plain dicts and filesystem paths.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import synth
from .aus import AU_CODES, AU_INDEX, NUM_AU
from .face import (FaceBasis, au_mae, au_to_blendshape, generate_face_basis,
                   landmark_mae, nme, reconstruct_landmarks)
from .model import (AuForecaster, ModelConfig, full_config, load_checkpoint,
                    save_checkpoint, toy_config)
from .signal_prep import (AffineMap, CalibrationProfile, LowpassFilter,
                          PreprocConfig, calibrate, estimate_stationary_threshold,
                          first_patchable_frame, fit_affine, measure_attempt,
                          normalize, remove_artifact, segment)
from .stream_infer import InferenceConfig, StreamingEngine, long_horizon_eval
from .train import (LossConfig, OptimConfig, WindowSet, ablation_harness,
                    fine_tune, horizon_mae, train, val_indices)


@dataclass
class CalibrationBundle:
    """Everything inference needs from a dataset's calibration phase."""

    profile: CalibrationProfile
    stationary_threshold: np.ndarray
    map_left: AffineMap
    map_right: AffineMap


def calibration_from_dataset(root: str | Path, manifest: ds.DatasetManifest,
                             pre: PreprocConfig) -> CalibrationBundle:
    """Derive normalization bounds, the stationarity threshold, and the
    initial artifact maps from the calibration recordings."""
    root = Path(root)
    still_segs = [s for s in manifest.phase("calibration") if s.action == "still"]
    jaw_segs = [s for s in manifest.phase("calibration") if s.action == "AU26"]
    if not still_segs or len(jaw_segs) != 3:
        raise ds.DataError("calibration phase needs one still and three AU26 segments")

    filt = LowpassFilter(pre)
    still, _ = ds.read_segment(root, still_segs[0])
    ref_f = filt.apply(still.reference)
    threshold = estimate_stationary_threshold(ref_f)
    map_left = fit_affine(ref_f, filt.apply(still.left))
    map_right = fit_affine(ref_f, filt.apply(still.right))

    attempts = {"left": [], "right": []}
    for seg in jaw_segs:
        stream, labels = ds.read_segment(root, seg)
        au_peak = float(labels[:, AU_INDEX["AU26"]].max())
        ref_f = filt.apply(stream.reference)
        for side, amap in (("left", map_left), ("right", map_right)):
            meas_f = filt.apply(getattr(stream, side))
            residual = remove_artifact(meas_f, ref_f, amap)
            attempts[side].append(measure_attempt(residual, au_peak))
    profile = calibrate(attempts["left"], attempts["right"])
    return CalibrationBundle(profile=profile, stationary_threshold=threshold,
                             map_left=map_left, map_right=map_right)


def preprocess_segment(stream, labels: np.ndarray, pre: PreprocConfig,
                       bundle: CalibrationBundle):
    """Filter, remove artifacts, normalize, and patch one segment.

    Returns (first_frame, patches (n, P, 12) float32, labels float32).
    """
    filt = LowpassFilter(pre)
    ref_f = filt.apply(stream.reference)
    left = remove_artifact(filt.apply(stream.left), ref_f, bundle.map_left)
    right = remove_artifact(filt.apply(stream.right), ref_f, bundle.map_right)
    lo, hi = bundle.profile.stacked_bounds()
    stacked = normalize(np.concatenate([left, right], axis=1), lo, hi)
    patches = segment(stacked, len(labels), pre)
    if not patches:
        raise ds.DataError("segment too short to produce any patches")
    first = patches[0].label_frame_index
    arr = np.stack([p.data for p in patches]).astype(np.float32)
    return first, arr, labels.astype(np.float32)


def build_windows(root: str | Path, manifest: ds.DatasetManifest,
                  pre: PreprocConfig, bundle: CalibrationBundle,
                  stride: int, phases: list[str] | None = None,
                  seq_len: int = 60, max_frames: int | None = None) -> WindowSet:
    """Preprocess every non-calibration segment into training windows."""
    windows = WindowSet(seq_len)
    frames_used = 0
    for seg in manifest.segments:
        if seg.phase == "calibration":
            continue
        if phases is not None and seg.phase not in phases:
            continue
        if max_frames is not None and frames_used >= max_frames:
            break
        stream, labels = ds.read_segment(root, seg)
        if max_frames is not None and frames_used + len(labels) > max_frames:
            n_lab = max_frames - frames_used
            if n_lab < seq_len + first_patchable_frame(pre):
                break
            labels = labels[:n_lab]
            n_samp = int(round(n_lab * pre.sample_rate_hz / pre.label_rate_fps))
            stream = type(stream)(t_us=stream.t_us[:n_samp], left=stream.left[:n_samp],
                                  right=stream.right[:n_samp],
                                  reference=stream.reference[:n_samp])
        first, arr, lab = preprocess_segment(stream, labels, pre, bundle)
        windows.add_segment(first, arr, lab, stride)
        frames_used += len(lab)
    if len(windows) == 0:
        raise ds.DataError("dataset produced no training windows")
    return windows


def _preproc_for(manifest: ds.DatasetManifest, patch_len: int) -> PreprocConfig:
    return PreprocConfig(sample_rate_hz=manifest.sample_rate_hz,
                         label_rate_fps=manifest.label_rate_fps,
                         patch_len=patch_len)


# ---------------------------------------------------------------------------
# jobs
# ---------------------------------------------------------------------------

def job_synth(cfg: synth.SynthConfig, out_dir: str | Path) -> dict:
    manifest = synth.make_dataset(cfg, out_dir)
    total_frames = sum(s.n_frames for s in manifest.segments)
    ds.write_run_record(out_dir, "synth", cfg.__dict__ | {
        "co_activation": None if cfg.co_activation is None else "custom"})
    return {
        "dataset_dir": str(out_dir),
        "segments": len(manifest.segments),
        "duration_s": total_frames / manifest.label_rate_fps,
        "content_hash": ds.content_hash(out_dir),
    }


def job_preprocess(dataset_dir: str | Path, out_dir: str | Path,
                   patch_len: int = 200) -> dict:
    """Preprocess all segments, persist patches, and report artifact power
    reduction (uses the generator's ground truth when available)."""
    root = Path(dataset_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ds.load_manifest(root)
    pre = _preproc_for(manifest, patch_len)
    bundle = calibration_from_dataset(root, manifest, pre)
    try:
        gt = ds.load_ground_truth(root)
    except ds.DataError:
        gt = None

    filt = LowpassFilter(pre)
    reports = []
    arrays = {}
    for seg in manifest.segments:
        if seg.phase == "calibration":
            continue
        stream, labels = ds.read_segment(root, seg)
        first, arr, lab = preprocess_segment(stream, labels, pre, bundle)
        arrays[f"patches_{seg.id}"] = arr
        arrays[f"labels_{seg.id}"] = lab
        rec = {"segment": seg.id, "phase": seg.phase, "patches": len(arr)}
        if gt is not None and f"clean_{seg.id}" in gt:
            clean_f = filt.apply(gt[f"clean_{seg.id}"].astype(np.float64))
            ref_f = filt.apply(stream.reference)
            db = {}
            for side, amap, cols in (("left", bundle.map_left, slice(0, 6)),
                                     ("right", bundle.map_right, slice(6, 12))):
                meas_f = filt.apply(getattr(stream, side))
                before = meas_f - clean_f[:, cols]
                after = remove_artifact(meas_f, ref_f, amap) - clean_f[:, cols]
                p_before = float(np.mean(before ** 2))
                p_after = float(np.mean(after ** 2))
                db[side] = 10.0 * np.log10(p_before / p_after) if p_after > 0 else np.inf
            rec["artifact_reduction_db"] = db
        reports.append(rec)

    np.savez_compressed(out / "patches.npz", **arrays)
    report = {
        "dataset": str(root),
        "patch_len": patch_len,
        "segments": reports,
        "stationary_threshold": bundle.stationary_threshold.tolist(),
        "acc_max": [bundle.profile.acc_max_left, bundle.profile.acc_max_right],
        "gyro_max": [bundle.profile.gyro_max_left, bundle.profile.gyro_max_right],
    }
    import json
    (out / "preprocess_report.json").write_text(json.dumps(report, indent=1))
    ds.write_run_record(out, "preprocess", {"dataset": str(root), "patch_len": patch_len},
                        {"dataset": ds.content_hash(root)})
    return report


def resolve_model_config(variant: str, scale: str, **overrides) -> ModelConfig:
    if scale == "toy":
        return toy_config(variant, **overrides)
    return full_config(variant, **overrides)


def job_train(dataset_dir: str | Path, out_dir: str | Path, variant: str = "h-c-dec",
              scale: str = "toy", epochs: int = 100, seed: int = 0,
              window_stride: int = 25, lr: float = 0.001, batch_size: int = 32,
              lambda1: float = 0.5, lambda2: float = 1.5,
              model_overrides: dict | None = None) -> dict:
    root = Path(dataset_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ds.load_manifest(root)
    cfg = resolve_model_config(variant, scale, **(model_overrides or {}))
    pre = _preproc_for(manifest, cfg.patch_len)
    bundle = calibration_from_dataset(root, manifest, pre)
    windows = build_windows(root, manifest, pre, bundle, stride=window_stride)

    model = AuForecaster(cfg)
    optim = OptimConfig(lr=lr, batch_size=batch_size, epochs=epochs)
    loss_cfg = LossConfig(lambda1=lambda1, lambda2=lambda2)
    result = train(model, windows, optim, loss_cfg, seed=seed,
                   history_path=out / "loss_history.jsonl")
    ckpt = save_checkpoint(model, out / f"{variant}_{scale}.ckpt")
    mae = horizon_mae(model, windows, val_indices(windows))
    ds.write_run_record(out, "train", {
        "dataset": str(root), "variant": variant, "scale": scale,
        "epochs": epochs, "seed": seed, "stride": window_stride,
        "lr": lr, "batch_size": batch_size},
        {"dataset": ds.content_hash(root)})
    return {
        "checkpoint": str(ckpt),
        "history": str(out / "loss_history.jsonl"),
        "steps": result.steps,
        "initial_train_loss": result.initial_train_loss,
        "final_train_loss": result.final_train_loss,
        "best_val_loss": result.best_val_loss,
        "val_horizon_mae": mae,
        "train_windows": result.train_windows,
        "val_windows": result.val_windows,
        "param_count": model.param_count(),
        "train_seconds": result.seconds,
    }


def job_ablate(dataset_dir: str | Path, out_dir: str | Path, scale: str = "toy",
               epochs: int = 100, seed: int = 0, window_stride: int = 25,
               lr: float = 0.001, batch_size: int = 32,
               model_overrides: dict | None = None) -> dict:
    root = Path(dataset_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ds.load_manifest(root)
    overrides = model_overrides or {}
    probe = resolve_model_config("h-c-dec", scale, **overrides)
    pre = _preproc_for(manifest, probe.patch_len)
    bundle = calibration_from_dataset(root, manifest, pre)
    windows = build_windows(root, manifest, pre, bundle, stride=window_stride)
    optim = OptimConfig(lr=lr, batch_size=batch_size, epochs=epochs)
    rows = ablation_harness(
        windows, lambda v: resolve_model_config(v, scale, **overrides),
        optim, LossConfig(), seed=seed, out_path=out / "ablation_report.json")
    ds.write_run_record(out, "ablate", {
        "dataset": str(root), "scale": scale, "epochs": epochs,
        "seed": seed, "stride": window_stride},
        {"dataset": ds.content_hash(root)})
    return {"rows": rows, "report": str(out / "ablation_report.json")}


def make_engine(checkpoint: str | Path, dataset_dir: str | Path,
                reset_enabled: bool = True, remap_enabled: bool = True) -> StreamingEngine:
    """Engine wired from a checkpoint plus a dataset's calibration phase."""
    model = load_checkpoint(checkpoint)
    root = Path(dataset_dir)
    manifest = ds.load_manifest(root)
    pre = _preproc_for(manifest, model.cfg.patch_len)
    bundle = calibration_from_dataset(root, manifest, pre)
    infer_cfg = InferenceConfig(target_len=model.cfg.target_len,
                                history_len=model.cfg.history_len,
                                reset_enabled=reset_enabled,
                                remap_enabled=remap_enabled)
    return StreamingEngine(model, pre, bundle.profile,
                           bundle.stationary_threshold, infer_cfg)


def job_infer(checkpoint: str | Path, dataset_dir: str | Path, segment: str,
              out_path: str | Path, reset_enabled: bool = True,
              remap_enabled: bool = True, block: int = 400) -> dict:
    """Offline streaming inference over one recorded segment."""
    root = Path(dataset_dir)
    manifest = ds.load_manifest(root)
    seg = manifest.find(segment)
    stream, labels = ds.read_segment(root, seg)
    engine = make_engine(checkpoint, root, reset_enabled, remap_enabled)
    from .stream_infer import run_stream
    run_stream(engine, stream.t_us, stream.left, stream.right,
               stream.reference, block=block)
    ds.write_prediction_stream(out_path, engine.emission_records())
    frames, values = engine.final_series()
    stats = {
        "au_stream": str(out_path),
        "windows": engine.window_count,
        "skipped_windows": engine.skipped_windows,
        "frames_predicted": len(frames),
        "stationary_resets": engine.stationary_resets,
        "magnitude_resets": engine.magnitude_resets,
        "remap_count": engine._tracker.fit_count,
        "mean_latency_ms": float(np.mean(engine.latencies_ms)) if engine.latencies_ms else None,
    }
    if len(frames):
        valid = frames < len(labels)
        mae, _ = au_mae(values[valid], labels[frames[valid]])
        stats["au_mae_vs_labels"] = mae
    return stats


def job_eval(pred_path: str | Path, dataset_dir: str | Path, segment: str,
             basis_path: str | Path | None = None,
             long_horizon_bin_s: float | None = None) -> dict:
    """Score a prediction stream against a segment's labels: AU MAE plus
    landmark MAE / NME through the reconstruction basis."""
    root = Path(dataset_dir)
    manifest = ds.load_manifest(root)
    seg = manifest.find(segment)
    labels = ds.read_labels(root / seg.labels_path)
    records = ds.read_prediction_stream(pred_path)
    if not records:
        raise ds.DataError(f"no predictions in {pred_path}")
    by_frame: dict[int, list] = {}
    for rec in records:  # last record wins: replacement semantics
        by_frame[rec["frame"]] = rec["au"]
    frames = np.array(sorted(f for f in by_frame if f < len(labels)))
    if len(frames) == 0:
        raise ds.DataError("prediction frames do not overlap the labels")
    pred = np.array([by_frame[f] for f in frames])
    truth = labels[frames]
    overall, per_channel = au_mae(pred, truth)

    basis = FaceBasis.load(basis_path) if basis_path else generate_face_basis()
    d = basis.canthus_distance()
    lm_err, nme_err = [], []
    step = max(1, len(frames) // 300)  # cap landmark evaluation work
    for i in range(0, len(frames), step):
        lm_p = reconstruct_landmarks(au_to_blendshape(pred[i]), basis)
        lm_t = reconstruct_landmarks(au_to_blendshape(truth[i]), basis)
        lm_err.append(landmark_mae(lm_t, lm_p, d_frame=d, d_real=d))
        nme_err.append(nme(lm_t, lm_p, basis.interocular_distance()))

    out = {
        "segment": segment,
        "frames_scored": int(len(frames)),
        "au_mae": overall,
        "au_mae_per_channel": {AU_CODES[i]: float(per_channel[i]) for i in range(NUM_AU)},
        "landmark_mae_mm": float(np.mean(lm_err)),
        "nme": float(np.mean(nme_err)),
    }
    if long_horizon_bin_s:
        fps = manifest.label_rate_fps
        t_s = frames / fps
        err = np.abs(pred - truth).mean(axis=1)
        n_bins = int(np.ceil((t_s.max() + 1e-9) / long_horizon_bin_s))
        out["long_horizon"] = [
            {"t_start_s": b * long_horizon_bin_s,
             "mae": (float(err[(t_s >= b * long_horizon_bin_s)
                               & (t_s < (b + 1) * long_horizon_bin_s)].mean())
                     if ((t_s >= b * long_horizon_bin_s)
                         & (t_s < (b + 1) * long_horizon_bin_s)).any() else None)}
            for b in range(n_bins)]
    return out


def job_long_horizon(checkpoint: str | Path, dataset_dir: str | Path, segment: str,
                     reset_enabled: bool, remap_enabled: bool,
                     bin_s: float = 30.0) -> dict:
    """Run the engine over a long segment and return the binned MAE curve."""
    root = Path(dataset_dir)
    manifest = ds.load_manifest(root)
    seg = manifest.find(segment)
    stream, labels = ds.read_segment(root, seg)
    engine = make_engine(checkpoint, root, reset_enabled, remap_enabled)
    return long_horizon_eval(engine, stream.t_us, stream.left, stream.right,
                             stream.reference, labels, bin_s=bin_s)


def job_finetune(checkpoint: str | Path, user_dataset_dir: str | Path,
                 out_dir: str | Path, epochs: int = 30, lr: float = 0.0005,
                 seed: int = 0, shard_frames: int = 2016,
                 window_stride: int = 15, eval_segment: str | None = None) -> dict:
    """Adapt a cross-user checkpoint on ~67 s of one user's data; report
    the long-horizon MAE before and after when an eval segment is given."""
    root = Path(user_dataset_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = ds.load_manifest(root)
    model = load_checkpoint(checkpoint)
    pre = _preproc_for(manifest, model.cfg.patch_len)
    bundle = calibration_from_dataset(root, manifest, pre)
    shard = build_windows(root, manifest, pre, bundle, stride=window_stride,
                          phases=["single_au", "expressions", "freeform"],
                          max_frames=shard_frames)

    pre_mae = post_mae = None
    if eval_segment:
        pre_mae = job_long_horizon(checkpoint, root, eval_segment,
                                   reset_enabled=True, remap_enabled=True)["overall_mae"]
    result = fine_tune(model, shard, OptimConfig(lr=lr, batch_size=16, epochs=epochs),
                       LossConfig(), seed=seed)
    ckpt = save_checkpoint(model, out / "finetuned.ckpt")
    if eval_segment:
        post_mae = job_long_horizon(ckpt, root, eval_segment,
                                    reset_enabled=True, remap_enabled=True)["overall_mae"]
    ds.write_run_record(out, "finetune", {
        "checkpoint": str(checkpoint), "user_dataset": str(root),
        "epochs": epochs, "lr": lr, "seed": seed, "shard_frames": shard_frames})
    return {
        "checkpoint": str(ckpt),
        "shard_windows": len(shard),
        "steps": result.steps,
        "pre_long_horizon_mae": pre_mae,
        "post_long_horizon_mae": post_mae,
    }


def job_live_infer(checkpoint: str | Path, dataset_dir: str | Path,
                   out_path: str | Path, listen_port: int = 0,
                   publish_port: int | None = None, idle_timeout_s: float = 5.0,
                   ready_callback=None) -> dict:
    """Live mode: accept a TCP IMU packet stream, optionally republish AU
    frames, and persist the JSON-lines output when the stream ends."""
    from . import tcp
    engine = make_engine(checkpoint, dataset_dir)
    publisher = tcp.AuPublisher(port=publish_port or 0) if publish_port is not None else None
    try:
        stats = tcp.run_live_ingest(engine, port=listen_port, publisher=publisher,
                                    idle_timeout_s=idle_timeout_s,
                                    ready_callback=ready_callback)
    finally:
        if publisher is not None:
            publisher.close()
    ds.write_prediction_stream(out_path, engine.emission_records())
    stats.update({
        "au_stream": str(out_path),
        "windows": engine.window_count,
        "frames_predicted": len(engine.predictions),
        "publish_port": publisher.port if publisher else None,
    })
    return stats


def job_bench(scale: str = "full", checkpoint: str | Path | None = None,
              n_windows: int = 10, seed: int = 0) -> dict:
    """Per-window inference latency of the deployed model on this host."""
    if checkpoint:
        model = load_checkpoint(checkpoint)
    else:
        model = AuForecaster(resolve_model_config("h-c-dec", scale))
    cfg = model.cfg
    rng = np.random.default_rng(seed)
    patches = rng.random((1, cfg.seq_len, cfg.patch_len, cfg.in_channels),
                         dtype=np.float32)
    history = rng.random((1, cfg.history_len, cfg.au_channels)).astype(np.float32)
    for _ in range(2):  # warmup
        model.predict(patches, history)
    times = []
    for _ in range(n_windows):
        t0 = time.perf_counter()
        model.predict(patches, history)
        times.append((time.perf_counter() - t0) * 1e3)
    times = np.array(times)
    window_period_ms = 1000.0 * (cfg.target_len - cfg.history_len) / 30.0
    return {
        "scale": cfg.scale,
        "variant": cfg.variant,
        "param_count": model.param_count(),
        "windows_timed": n_windows,
        "mean_latency_ms": float(times.mean()),
        "p95_latency_ms": float(np.percentile(times, 95)),
        "window_period_ms": window_period_ms,
        "real_time_factor": float(window_period_ms / times.mean()),
    }
