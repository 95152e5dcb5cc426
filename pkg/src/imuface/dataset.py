"""On-disk dataset layout, manifest schema, label/prediction stream
formats, LED-based alignment, and reproducibility records.

A dataset directory holds:

    manifest.json                 - schema below, validated on load
    <phase>/<segment>.imu.bin     - back-to-back 45-byte IMU packets
    <phase>/<segment>.labels.jsonl- one {"frame": k, "au": [...]} per line
    ground_truth.npz              - optional sidecar with generator truth

Raw packet counts convert to physical units via the manifest's scale
factors. AU prediction streams reuse the JSON-lines shape with extra
`t_s` / `final` / `epoch` fields.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import wire
from .aus import NUM_AU
from .signal_prep import TriImuStream

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
GROUND_TRUTH_NAME = "ground_truth.npz"


class DataError(ValueError):
    """Corrupt, missing, or inconsistent dataset contents."""


@dataclass
class SegmentInfo:
    id: str
    phase: str
    action: str
    stream_path: str
    labels_path: str
    n_samples: int
    n_frames: int
    peak_au: float | None = None


@dataclass
class DatasetManifest:
    version: int
    seed: int
    sample_rate_hz: float
    label_rate_fps: float
    acc_scale_g: float
    gyro_scale_dps: float
    head_mode: str
    segments: list[SegmentInfo]
    extras: dict = field(default_factory=dict)

    def phase(self, name: str) -> list[SegmentInfo]:
        return [s for s in self.segments if s.phase == name]

    def find(self, seg_id: str) -> SegmentInfo:
        for s in self.segments:
            if s.id == seg_id:
                return s
        raise DataError(f"no segment {seg_id!r} in manifest")


def save_manifest(manifest: DatasetManifest, dataset_dir: str | Path) -> Path:
    path = Path(dataset_dir) / MANIFEST_NAME
    doc = asdict(manifest)
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_manifest(dataset_dir: str | Path, validate: bool = True) -> DatasetManifest:
    root = Path(dataset_dir)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"missing manifest at {path}")
    doc = json.loads(path.read_text())
    if doc.get("version") != MANIFEST_VERSION:
        raise DataError(f"unsupported manifest version {doc.get('version')}")
    segments = [SegmentInfo(**s) for s in doc.pop("segments")]
    manifest = DatasetManifest(segments=segments, **doc)
    if validate:
        validate_manifest(manifest, root)
    return manifest


def validate_manifest(manifest: DatasetManifest, root: Path) -> None:
    """Reject any referenced-file existence or size/count mismatch."""
    for seg in manifest.segments:
        stream = root / seg.stream_path
        labels = root / seg.labels_path
        if not stream.exists():
            raise DataError(f"{seg.id}: missing stream file {stream}")
        if not labels.exists():
            raise DataError(f"{seg.id}: missing labels file {labels}")
        expect = seg.n_samples * wire.IMU_PACKET_SIZE
        actual = stream.stat().st_size
        if actual != expect:
            raise DataError(
                f"{seg.id}: stream size {actual} != {seg.n_samples} packets ({expect} bytes)")
        n_lines = sum(1 for line in labels.open() if line.strip())
        if n_lines != seg.n_frames:
            raise DataError(f"{seg.id}: {n_lines} label lines != n_frames {seg.n_frames}")


def write_labels(path: str | Path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2 or labels.shape[1] != NUM_AU:
        raise DataError(f"labels must be (n, {NUM_AU})")
    with Path(path).open("w") as fh:
        for k, row in enumerate(labels):
            fh.write(json.dumps({"frame": k, "au": [round(float(v), 6) for v in row]}))
            fh.write("\n")


def read_labels(path: str | Path) -> np.ndarray:
    rows = []
    for line in Path(path).open():
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        rows.append(rec["au"])
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != NUM_AU:
        raise DataError(f"malformed labels file {path}")
    return arr


def write_segment(root: Path, seg: SegmentInfo, stream: TriImuStream,
                  labels: np.ndarray) -> None:
    """Quantize to raw counts and persist one segment's files."""
    phys = np.concatenate([stream.left, stream.right, stream.reference], axis=1)
    counts = wire.physical_to_counts(phys)
    data = wire.encode_stream(stream.t_us, counts)
    stream_path = root / seg.stream_path
    stream_path.parent.mkdir(parents=True, exist_ok=True)
    stream_path.write_bytes(data)
    write_labels(root / seg.labels_path, labels)


def read_segment(root: str | Path, seg: SegmentInfo) -> tuple[TriImuStream, np.ndarray]:
    """Load one segment back to (quantized) physical units plus labels."""
    root = Path(root)
    data = (root / seg.stream_path).read_bytes()
    t_us, counts, stats = wire.decode_stream(data)
    if stats.crc_failures or len(t_us) != seg.n_samples:
        raise DataError(f"{seg.id}: corrupt stream ({stats.crc_failures} crc failures, "
                        f"{len(t_us)}/{seg.n_samples} packets)")
    phys = wire.counts_to_physical(counts)
    stream = TriImuStream(t_us=t_us.astype(np.int64), left=phys[:, 0:6],
                          right=phys[:, 6:12], reference=phys[:, 12:18])
    labels = read_labels(root / seg.labels_path)
    if len(labels) != seg.n_frames:
        raise DataError(f"{seg.id}: label count mismatch")
    return stream, labels


def write_prediction_stream(path: str | Path, records: list[dict]) -> None:
    """Append-friendly JSON-lines AU output stream."""
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec))
            fh.write("\n")


def read_prediction_stream(path: str | Path) -> list[dict]:
    out = []
    for line in Path(path).open():
        line = line.strip()
        if line:
            out.append(json.loads(line))
    return out


def led_sync_align(labels: np.ndarray, label_fps: float,
                   led_on_frame_index: int, target_fps: float = 30.0) -> np.ndarray:
    """Re-index labels so the LED-on frame lands on IMU sample 0, then
    resample to exactly `target_fps` by nearest-frame lookup.

    Output frame j corresponds to IMU time j / target_fps after sample 0.
    """
    labels = np.asarray(labels, dtype=np.float64)
    if labels.ndim != 2:
        raise DataError("labels must be a 2-d frame array")
    n = len(labels)
    if not (0 <= led_on_frame_index < n):
        raise DataError(f"LED frame {led_on_frame_index} outside label range [0, {n})")
    out = []
    j = 0
    while True:
        src = led_on_frame_index + int(round(j * label_fps / target_fps))
        if src >= n:
            break
        out.append(labels[src])
        j += 1
    return np.asarray(out)


def content_hash(paths: list[str | Path] | str | Path) -> str:
    """sha256 over sorted relative paths and file bytes (stable dataset id)."""
    if isinstance(paths, (str, Path)):
        root = Path(paths)
        files = sorted(p for p in root.rglob("*") if p.is_file())
        rels = [(str(p.relative_to(root)), p) for p in files]
    else:
        rels = sorted((Path(p).name, Path(p)) for p in paths)
    h = hashlib.sha256()
    for rel, p in rels:
        h.update(rel.encode())
        h.update(b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()


def write_run_record(out_dir: str | Path, command: str, config: dict,
                     input_hashes: dict | None = None) -> Path:
    """Reproducibility record every pipeline run drops next to its outputs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rec = {
        "command": command,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": config,
        "input_hashes": input_hashes or {},
    }
    path = out_dir / f"run_record_{command}.json"
    path.write_text(json.dumps(rec, indent=1, default=str))
    return path


def save_ground_truth(dataset_dir: str | Path, arrays: dict) -> Path:
    path = Path(dataset_dir) / GROUND_TRUTH_NAME
    np.savez_compressed(path, **arrays)
    return path


def load_ground_truth(dataset_dir: str | Path) -> dict:
    path = Path(dataset_dir) / GROUND_TRUTH_NAME
    if not path.exists():
        raise DataError(f"no ground-truth sidecar at {path}")
    with np.load(path, allow_pickle=False) as npz:
        return {k: npz[k] for k in npz.files}
