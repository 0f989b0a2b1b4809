"""Dataset and checkpoint file formats.

Array files are little-endian binaries with a 20-byte header: an 8-byte
magic identifying the kind, then uint32 version, width, height. Payloads are
row-major: float64 for depth and weights, float64 xyz triples per pixel for
point maps, uint8 for masks. Poses are text, one line of 12 numbers, the
row-major 3x4 camera-to-world matrix. Everything round-trips bit-exactly.

A dataset directory holds ``manifest.json`` plus per-frame files; the
manifest records intrinsics, resolution, units, and the file paths per frame
(train sequences and held-out frames separately).

Checkpoints are a single JSON document (parameters included as number
lists), which keeps them byte-stable across identical runs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ._validation import check_rotation
from .geometry import Intrinsics, PixelGrid, Pose
from .losses import FrameTarget
from .optim import AdamState
from .scene import Dataset, RenderedFrame
from .trainer import ScenePredictor, TrainConfig

__all__ = [
    "write_array",
    "read_array",
    "write_pose",
    "read_pose",
    "save_dataset",
    "load_dataset",
    "save_checkpoint",
    "load_checkpoint",
    "parse_config_file",
]

FORMAT_VERSION = 1

MAGICS = {
    "depth": b"RLDEPTH\x00",
    "points": b"RLPOINTS",
    "mask": b"RLMASK\x00\x00",
    "weights": b"RLWEIGHT",
}
_KIND_BY_MAGIC = {v: k for k, v in MAGICS.items()}
_HEADER = struct.Struct("<III")


def write_array(path, kind: str, array: np.ndarray, width: int, height: int) -> None:
    """Write one per-pixel array (flat, row-major) in the binary format."""
    magic = MAGICS[kind]
    n = width * height
    if kind == "points":
        data = np.ascontiguousarray(array, dtype="<f8").reshape(n, 3)
    elif kind == "mask":
        data = np.ascontiguousarray(array, dtype=np.uint8).reshape(n)
    else:
        data = np.ascontiguousarray(array, dtype="<f8").reshape(n)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_HEADER.pack(FORMAT_VERSION, width, height))
        fh.write(data.tobytes())


def read_array(path, expected_kind: str | None = None):
    """Read a binary array file; returns (kind, array, width, height)."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 8 + _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic = raw[:8]
    kind = _KIND_BY_MAGIC.get(magic)
    if kind is None:
        raise ValueError(f"{path}: unknown magic {magic!r}")
    if expected_kind is not None and kind != expected_kind:
        raise ValueError(f"{path}: expected a {expected_kind} file, found {kind}")
    version, width, height = _HEADER.unpack_from(raw, 8)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    payload = raw[8 + _HEADER.size :]
    n = width * height
    if kind == "points":
        expect = n * 3 * 8
        arr = np.frombuffer(payload, dtype="<f8").reshape(n, 3)
    elif kind == "mask":
        expect = n
        arr = np.frombuffer(payload, dtype=np.uint8).astype(bool)
    else:
        expect = n * 8
        arr = np.frombuffer(payload, dtype="<f8")
    if len(payload) != expect:
        raise ValueError(f"{path}: payload size {len(payload)} does not match header")
    return kind, arr.copy(), width, height


def write_pose(path, pose: Pose) -> None:
    values = pose.matrix34().reshape(-1)
    Path(path).write_text(" ".join(repr(float(v)) for v in values) + "\n")


def read_pose(path) -> Pose:
    text = Path(path).read_text().split()
    if len(text) != 12:
        raise ValueError(f"{path}: expected 12 numbers, found {len(text)}")
    m = np.array([float(v) for v in text]).reshape(3, 4)
    check_rotation(m[:, :3])
    return Pose(m[:, :3], m[:, 3])


def _frame_paths(root: Path, prefix: str) -> dict:
    return {
        "pose": f"{prefix}.pose.txt",
        "depth": f"{prefix}.depth.bin",
        "points": f"{prefix}.points.bin",
        "mask": f"{prefix}.mask.bin",
    }


def _write_frame(root: Path, prefix: str, frame: RenderedFrame, width: int, height: int) -> dict:
    paths = _frame_paths(root, prefix)
    (root / paths["pose"]).parent.mkdir(parents=True, exist_ok=True)
    write_pose(root / paths["pose"], frame.target.pose)
    write_array(root / paths["depth"], "depth", frame.target.depth, width, height)
    write_array(root / paths["points"], "points", frame.target.point_map, width, height)
    write_array(root / paths["mask"], "mask", frame.target.valid_mask, width, height)
    record = {"time": frame.time}
    record.update(paths)
    return record


def save_dataset(dataset: Dataset, out_dir) -> Path:
    """Write the manifest and all per-frame files; returns the manifest path."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    width, height = dataset.grid.width, dataset.grid.height
    manifest = {
        "format_version": FORMAT_VERSION,
        "scene": dataset.name,
        "units": "meters",
        "seed": dataset.seed,
        "diameter": dataset.diameter,
        "resolution": {"width": width, "height": height},
        "intrinsics": {
            "fx": dataset.intrinsics.fx,
            "fy": dataset.intrinsics.fy,
            "cx": dataset.intrinsics.cx,
            "cy": dataset.intrinsics.cy,
        },
        "sequences": [],
        "heldout": [],
    }
    for k, seq in enumerate(dataset.sequences):
        records = []
        for frame in seq:
            prefix = f"seq{k:02d}/frame{int(frame.time):03d}"
            records.append(_write_frame(root, prefix, frame, width, height))
        manifest["sequences"].append({"frames": records})
    for j, frame in enumerate(dataset.heldout):
        prefix = f"heldout/seq{frame.sequence:02d}_mid{j:03d}"
        record = _write_frame(root, prefix, frame, width, height)
        record["sequence"] = frame.sequence
        manifest["heldout"].append(record)
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest_path


def _load_frame(root: Path, record: dict, sequence: int, grid: PixelGrid) -> RenderedFrame:
    for key in ("pose", "depth", "points", "mask"):
        if key not in record:
            raise ValueError(f"frame record missing '{key}': {record}")
        if not (root / record[key]).exists():
            raise ValueError(f"referenced file does not exist: {root / record[key]}")
    pose = read_pose(root / record["pose"])
    _, depth, w, h = read_array(root / record["depth"], "depth")
    _, points, w2, h2 = read_array(root / record["points"], "points")
    _, mask, w3, h3 = read_array(root / record["mask"], "mask")
    for w_, h_, name in ((w, h, "depth"), (w2, h2, "points"), (w3, h3, "mask")):
        if (w_, h_) != (grid.width, grid.height):
            raise ValueError(
                f"{record[name]}: shape {w_}x{h_} does not match manifest "
                f"resolution {grid.width}x{grid.height}"
            )
    target = FrameTarget(point_map=points, depth=depth, valid_mask=mask, pose=pose)
    return RenderedFrame(sequence=sequence, time=float(record["time"]), target=target)


def load_dataset(path) -> Dataset:
    """Load a dataset directory (or its manifest path) back into memory."""
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    if not manifest_path.exists():
        raise ValueError(f"no manifest found at {manifest_path}")
    root = manifest_path.parent
    manifest = json.loads(manifest_path.read_text())
    res = manifest["resolution"]
    grid = PixelGrid(int(res["width"]), int(res["height"]))
    intr = manifest["intrinsics"]
    intrinsics = Intrinsics(fx=intr["fx"], fy=intr["fy"], cx=intr["cx"], cy=intr["cy"])
    sequences = []
    for k, seq in enumerate(manifest["sequences"]):
        sequences.append(
            tuple(_load_frame(root, rec, k, grid) for rec in seq["frames"])
        )
    heldout = tuple(
        _load_frame(root, rec, int(rec["sequence"]), grid) for rec in manifest["heldout"]
    )
    return Dataset(
        name=manifest.get("scene", "unknown"),
        intrinsics=intrinsics,
        grid=grid,
        sequences=tuple(sequences),
        heldout=heldout,
        diameter=float(manifest.get("diameter", 0.0)),
        seed=int(manifest.get("seed", 0)),
        config=None,
    )


CHECKPOINT_VERSION = 1


def save_checkpoint(path, predictor: ScenePredictor, adam_state: AdamState, cfg: TrainConfig) -> None:
    doc = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "grid": {"width": predictor.grid.width, "height": predictor.grid.height},
        "intrinsics": {
            "fx": predictor.intrinsics.fx,
            "fy": predictor.intrinsics.fy,
            "cx": predictor.intrinsics.cx,
            "cy": predictor.intrinsics.cy,
        },
        "frame_keys": [[s, t] for s, t in predictor.frame_keys],
        "mean_point": predictor.mean_point.tolist(),
        "mean_depth": predictor.mean_depth,
        "params": {
            k: {"shape": list(p.shape), "data": p.reshape(-1).tolist()}
            for k, p in predictor.params.items()
        },
        "adam": {
            "step": adam_state.step,
            "m": {k: v.reshape(-1).tolist() for k, v in adam_state.m.items()},
            "v": {k: v.reshape(-1).tolist() for k, v in adam_state.v.items()},
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_checkpoint(path) -> tuple[ScenePredictor, AdamState, TrainConfig]:
    doc = json.loads(Path(path).read_text())
    if doc.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version")
    cfg = TrainConfig.from_dict(doc["config"])
    params = {
        k: np.array(spec["data"], dtype=np.float64).reshape(spec["shape"])
        for k, spec in doc["params"].items()
    }
    predictor = ScenePredictor(
        grid=PixelGrid(doc["grid"]["width"], doc["grid"]["height"]),
        intrinsics=Intrinsics(**doc["intrinsics"]),
        frame_keys=[(s, t) for s, t in doc["frame_keys"]],
        mean_point=np.array(doc["mean_point"]),
        mean_depth=doc["mean_depth"],
        hidden_sizes=cfg.hidden_sizes,
        num_frequencies=cfg.num_frequencies,
        embedding_dim=cfg.embedding_dim,
        params=params,
    )
    adam = AdamState(
        m={k: np.array(v).reshape(params[k].shape) for k, v in doc["adam"]["m"].items()},
        v={k: np.array(v).reshape(params[k].shape) for k, v in doc["adam"]["v"].items()},
        step=int(doc["adam"]["step"]),
    )
    return predictor, adam, cfg


def parse_config_file(path) -> dict:
    """Flat key=value config file; '#' starts a comment, blank lines ignored."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out
