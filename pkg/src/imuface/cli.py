"""Command-line client for the pipeline service.

Every subcommand builds the same validated request model the HTTP API
uses and dispatches it either in-process (default) or to a running
service via --server. Flags override values from an optional JSON config
file (--config or $IMUFACE_CONFIG) holding per-command sections.

Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from pydantic import ValidationError

from .service import schemas as sc
from .service.app import HANDLERS, classify_error

EXIT_CODES = {"config": 2, "data": 3, "runtime": 4}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--server", help="base URL of a running service "
                                    "(default: run in-process)")
    p.add_argument("--config", help="JSON config file with per-command sections")


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="imuface",
                                  description=__doc__.split("\n")[0])
    sub = top.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--bank-seed", dest="bank_seed", type=int, default=S)
    p.add_argument("--bank-blend-seed", dest="bank_blend_seed", type=int, default=S)
    p.add_argument("--bank-blend-alpha", dest="bank_blend_alpha", type=float, default=S)
    p.add_argument("--head-mode", dest="head_mode",
                   choices=["still", "sway", "walk"], default=S)
    p.add_argument("--noise-sigma", dest="noise_sigma", type=float, default=S)
    p.add_argument("--drift-per-s", dest="drift_per_s", type=float, default=S)
    p.add_argument("--duration", dest="action_duration_s", type=float, default=S)
    p.add_argument("--reps-single", dest="reps_single", type=int, default=S)
    p.add_argument("--reps-expr", dest="reps_expr", type=int, default=S)
    p.add_argument("--freeform-streams", dest="freeform_streams", type=int, default=S)
    p.add_argument("--freeform-duration", dest="freeform_duration_s",
                   type=float, default=S)
    p.add_argument("--freeform-event-rate", dest="freeform_event_rate",
                   type=float, default=S)
    _add_common(p)

    p = sub.add_parser("preprocess", help="streams -> patches + artifact report")
    p.add_argument("--dataset", dest="dataset_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--patch-len", dest="patch_len", type=int, default=S)
    _add_common(p)

    p = sub.add_parser("train", help="train one model variant")
    p.add_argument("--dataset", dest="dataset_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--variant", choices=["h-c-dec", "a-transformer", "c-enc", "c-enc-h"],
                   default=S)
    p.add_argument("--scale", choices=["full", "toy"], default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--window-stride", dest="window_stride", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    p.add_argument("--lambda1", type=float, default=S)
    p.add_argument("--lambda2", type=float, default=S)
    _add_common(p)

    p = sub.add_parser("ablate", help="train all four variants and report MAE")
    p.add_argument("--dataset", dest="dataset_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--scale", choices=["full", "toy"], default=S)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--window-stride", dest="window_stride", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    _add_common(p)

    p = sub.add_parser("infer", help="streaming inference over a recorded segment "
                                     "or a live TCP packet stream")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", dest="dataset_dir", required=True,
                   help="dataset supplying calibration (and the segment in file mode)")
    p.add_argument("--segment", default=None, help="segment id (file mode)")
    p.add_argument("--out", dest="out_path", required=True)
    p.add_argument("--no-reset", dest="reset_enabled", action="store_false", default=True)
    p.add_argument("--no-remap", dest="remap_enabled", action="store_false", default=True)
    p.add_argument("--listen", type=int, default=None,
                   help="TCP port to accept live IMU packets on (live mode)")
    p.add_argument("--publish", type=int, default=None,
                   help="TCP port to publish AU packets on (live mode)")
    p.add_argument("--idle-timeout", dest="idle_timeout_s", type=float, default=5.0)
    _add_common(p)

    p = sub.add_parser("eval", help="score predictions: AU MAE, landmark MAE, NME")
    p.add_argument("--pred", dest="pred_path", required=True)
    p.add_argument("--dataset", dest="dataset_dir", required=True)
    p.add_argument("--segment", required=True)
    p.add_argument("--basis", dest="basis_path", default=S)
    p.add_argument("--bin-s", dest="long_horizon_bin_s", type=float, default=S)
    _add_common(p)

    p = sub.add_parser("long-horizon", help="binned MAE curve over a long stream")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", dest="dataset_dir", required=True)
    p.add_argument("--segment", required=True)
    p.add_argument("--no-reset", dest="reset_enabled", action="store_false", default=True)
    p.add_argument("--no-remap", dest="remap_enabled", action="store_false", default=True)
    p.add_argument("--bin-s", dest="bin_s", type=float, default=S)
    _add_common(p)

    p = sub.add_parser("finetune", help="adapt a checkpoint on one user's shard")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user-dataset", dest="user_dataset_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--epochs", type=int, default=S)
    p.add_argument("--lr", type=float, default=S)
    p.add_argument("--seed", type=int, default=S)
    p.add_argument("--shard-frames", dest="shard_frames", type=int, default=S)
    p.add_argument("--eval-segment", dest="eval_segment", default=S)
    _add_common(p)

    p = sub.add_parser("bench", help="per-window latency and real-time factor")
    p.add_argument("--scale", choices=["full", "toy"], default=S)
    p.add_argument("--checkpoint", default=S)
    p.add_argument("--windows", dest="n_windows", type=int, default=S)
    p.add_argument("--seed", type=int, default=S)
    _add_common(p)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8420)

    return top


def _merge_config(command: str, args: dict, config_path: str | None) -> dict:
    path = config_path or os.environ.get("IMUFACE_CONFIG")
    if not path:
        return args
    doc = json.loads(Path(path).read_text())
    section = doc.get(command, {})
    if not isinstance(section, dict):
        raise ValueError(f"config section {command!r} must be an object")
    merged = dict(section)
    merged.update(args)  # explicit flags win
    return merged


def _dispatch(command: str, payload: dict, server: str | None) -> dict:
    model_cls, handler = HANDLERS[command]
    request = model_cls(**payload)
    if server:
        import httpx
        resp = httpx.post(f"{server.rstrip('/')}/v1/{command}",
                          json=json.loads(request.model_dump_json()), timeout=None)
        body = resp.json()
        if resp.status_code != 200:
            kind = body.get("error", {}).get("kind", "runtime")
            raise _RemoteError(kind, body.get("error", {}).get("message", str(body)))
        return body
    return handler(request)


class _RemoteError(RuntimeError):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _fail(kind: str, message: str) -> int:
    print(json.dumps({"error": {"kind": kind, "message": message}}), file=sys.stderr)
    return EXIT_CODES.get(kind, 4)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command

    if command == "serve":
        import uvicorn
        from .service import make_app
        level = os.environ.get("IMUFACE_LOG_LEVEL", "info").lower()
        uvicorn.run(make_app(), host=args.host, port=args.port, log_level=level)
        return 0

    payload = {k: v for k, v in vars(args).items()
               if k not in ("command", "server", "config") and v is not None}
    server = getattr(args, "server", None)
    config = getattr(args, "config", None)

    try:
        if command == "infer" and payload.pop("listen", None) is not None:
            if server:
                raise ValueError("live TCP inference runs in-process only")
            from . import pipeline
            listen = args.listen
            result = pipeline.job_live_infer(
                payload["checkpoint"], payload["dataset_dir"], payload["out_path"],
                listen_port=listen, publish_port=payload.pop("publish", None),
                idle_timeout_s=payload.pop("idle_timeout_s", 5.0))
        else:
            payload.pop("publish", None)
            payload.pop("idle_timeout_s", None)
            if command == "infer" and not payload.get("segment"):
                raise ValueError("file-mode inference needs --segment")
            payload = _merge_config(command, payload, config)
            result = _dispatch(command, payload, server)
    except _RemoteError as exc:
        return _fail(exc.kind, str(exc))
    except ValidationError as exc:
        return _fail("config", str(exc))
    except Exception as exc:  # noqa: BLE001 - single CLI boundary
        kind, _ = classify_error(exc)
        return _fail(kind, f"{type(exc).__name__}: {exc}")

    print(json.dumps(result, indent=1, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
