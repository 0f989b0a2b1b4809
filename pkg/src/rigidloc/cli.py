"""Command-line interface: synth, train, eval, align.

Exit codes: 0 success, 1 validation error (bad arguments, bad files),
2 numerical failure (degenerate alignment, training divergence). The
RIGIDLOC_THREADS environment variable caps per-frame evaluation parallelism
(default 1); results are emitted in deterministic frame order regardless.

Every flag has a config-file equivalent (flat key=value files); flags win
over config-file values.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import AlignmentError, alignment_cost, alignment_cost_sq, weighted_kabsch
from .geometry import (
    Intrinsics,
    PixelGrid,
    backproject,
    rotation_angle_error,
    translation_error,
)
from . import dataio
from .scene import default_config, generate_scene
from .trainer import DivergenceError, TrainConfig, localize, median_low, train

__all__ = ["main", "EvalReport", "evaluate_split"]


@dataclass
class EvalReport:
    """Per-frame localization errors and their medians for one split."""

    split: str
    frames: list           # dicts: sequence, time, translation_error, rotation_error_deg
    failures: list         # (sequence, time) of frames whose alignment failed
    median_translation: float | None
    median_rotation_deg: float | None

    @property
    def frame_count(self) -> int:
        return len(self.frames) + len(self.failures)

    def to_json(self) -> dict:
        return {
            "split": self.split,
            "frame_count": self.frame_count,
            "failure_count": len(self.failures),
            "median_translation": self.median_translation,
            "median_rotation_deg": self.median_rotation_deg,
            "frames": self.frames,
            "failures": [list(f) for f in self.failures],
        }


def _worker_count() -> int:
    raw = os.environ.get("RIGIDLOC_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"RIGIDLOC_THREADS must be an integer, got {raw!r}")


def evaluate_split(predictor, dataset, split: str) -> EvalReport:
    """Localize every frame of a split and report errors against ground truth."""
    if split == "train":
        frames = dataset.all_train_frames()
    elif split == "heldout":
        frames = list(dataset.heldout)
    else:
        raise ValueError(f"split must be 'train' or 'heldout', got {split!r}")
    if not frames:
        raise ValueError(f"dataset has no frames in split {split!r}")

    def one(frame):
        try:
            pose = localize(predictor, frame.sequence, frame.time)
        except AlignmentError:
            return frame, None
        return frame, pose

    workers = _worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, frames))
    else:
        results = [one(f) for f in frames]

    records, failures = [], []
    for frame, pose in results:
        if pose is None:
            failures.append((frame.sequence, frame.time))
            continue
        gt = frame.target.pose
        records.append(
            {
                "sequence": frame.sequence,
                "time": frame.time,
                "translation_error": translation_error(gt.translation, pose.translation),
                "rotation_error_deg": math.degrees(
                    rotation_angle_error(gt.rotation, pose.rotation)
                ),
            }
        )
    t_med = median_low([r["translation_error"] for r in records]) if records else None
    r_med = median_low([r["rotation_error_deg"] for r in records]) if records else None
    return EvalReport(
        split=split,
        frames=records,
        failures=failures,
        median_translation=t_med,
        median_rotation_deg=r_med,
    )


def _print_report(report: EvalReport) -> None:
    print(f"{'frame':<16}{'trans err':>12}{'rot err (deg)':>15}")
    for r in report.frames:
        name = f"seq{r['sequence']}/t{r['time']:g}"
        print(f"{name:<16}{r['translation_error']:>12.6f}{r['rotation_error_deg']:>15.4f}")
    for seq, t in report.failures:
        print(f"{f'seq{seq}/t{t:g}':<16}{'FAILED':>12}{'':>15}")
    print(
        f"median over {len(report.frames)} frames "
        f"({len(report.failures)} failures): "
        f"{report.median_translation if report.median_translation is not None else 'n/a'} , "
        f"{report.median_rotation_deg if report.median_rotation_deg is not None else 'n/a'} deg"
    )


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the documented code for validation is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rigidloc", description="Camera relocalization toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", parents=[], help="generate a synthetic dataset")
    p_synth.add_argument("--config", help="key=value config file")
    p_synth.add_argument("--seed", type=int)
    p_synth.add_argument("--out", default="dataset", help="output directory")

    p_train = sub.add_parser("train", help="train a localizer on a dataset")
    p_train.add_argument("dataset", help="dataset directory or manifest path")
    p_train.add_argument("--config", help="key=value config file")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--sparsity", type=float, help="fraction of GT kept per frame")
    p_train.add_argument(
        "--disable",
        action="append",
        default=None,
        metavar="TERM",
        help="disable a loss term (repeatable): l3d, l_depth, l_pose, l_along, l_across",
    )
    p_train.add_argument("--epochs", type=int)
    p_train.add_argument("--out", help="output directory for checkpoint and metrics")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("dataset")
    p_eval.add_argument("--split", choices=["train", "heldout"], default="train")
    p_eval.add_argument("--out", help="write the JSON report here")

    p_align = sub.add_parser("align", help="one weighted rigid alignment of two maps")
    p_align.add_argument("--points", required=True, help="global point-map file")
    p_align.add_argument("--depth", required=True, help="depth file")
    p_align.add_argument("--intrinsics", required=True, metavar="FX,FY,CX,CY")
    p_align.add_argument("--weights", help="optional weight file")
    p_align.add_argument("--mask", help="optional validity mask file")

    return parser


def _merge_config(file_values: dict, **flag_values) -> dict:
    merged = dict(file_values)
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    return merged


def _cmd_synth(args) -> int:
    values = dataio.parse_config_file(args.config) if args.config else {}
    merged = _merge_config(values, seed=args.seed)
    cfg = default_config(
        seed=int(merged.get("seed", 0)),
        num_sequences=int(merged.get("sequences", 2)),
        frames_per_sequence=int(merged.get("frames", 8)),
        resolution=(int(merged.get("width", 32)), int(merged.get("height", 32))),
        overlap=float(merged.get("overlap", 0.7)),
        name=str(merged.get("name", "desk")),
    )
    if cfg.num_sequences < 2:
        print("warning: across-sequence constraints need at least 2 sequences", file=sys.stderr)
    dataset = generate_scene(cfg)
    manifest = dataio.save_dataset(dataset, args.out)
    n = sum(len(s) for s in dataset.sequences)
    print(
        f"wrote {n} train frames + {len(dataset.heldout)} held-out frames "
        f"({dataset.grid.width}x{dataset.grid.height}) to {manifest.parent}"
    )
    return 0


_CONFIG_ALIASES = {"lr": "learning_rate", "disable": "disabled_terms"}


def _train_config_from(merged: dict) -> TrainConfig:
    kwargs = {}
    for key, raw in merged.items():
        key = _CONFIG_ALIASES.get(key, key)
        if key == "disabled_terms":
            if isinstance(raw, str):
                raw = tuple(t.strip() for t in raw.split(",") if t.strip())
            kwargs[key] = tuple(raw)
        elif key == "hidden_sizes":
            if isinstance(raw, str):
                raw = tuple(int(v) for v in raw.split(",") if v.strip())
            kwargs[key] = tuple(raw)
        elif key in ("epochs", "sequences_per_batch", "frames_per_sequence", "seed",
                     "num_frequencies", "embedding_dim", "eval_every"):
            kwargs[key] = int(raw)
        elif key in ("sparsity", "learning_rate", "beta1", "beta2", "eps",
                     "weight_decay", "clip_norm"):
            kwargs[key] = float(raw)
        else:
            raise ValueError(f"unknown training config key: {key}")
    return TrainConfig(**kwargs)


def _cmd_train(args) -> int:
    dataset = dataio.load_dataset(args.dataset)
    values = dataio.parse_config_file(args.config) if args.config else {}
    merged = _merge_config(
        values,
        seed=args.seed,
        sparsity=args.sparsity,
        disable=tuple(args.disable) if args.disable else None,
        epochs=args.epochs,
    )
    cfg = _train_config_from(merged)
    if dataset.num_sequences < 2 and "l_across" in cfg.enabled_terms:
        print("warning: across-sequence loss needs at least 2 sequences", file=sys.stderr)

    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)

    try:
        result = train(dataset, cfg)
    except DivergenceError as err:
        if err.predictor is not None:
            path = (out_dir / "checkpoint.json") if out_dir else Path("checkpoint.json")
            dataio.save_checkpoint(path, err.predictor, err.adam_state, cfg)
            print(f"divergence: saved last good checkpoint to {path}", file=sys.stderr)
        print(f"error: {err}", file=sys.stderr)
        return 2

    lines = [json.dumps(m, sort_keys=True) for m in result.metrics]
    if out_dir:
        ckpt = out_dir / "checkpoint.json"
        (out_dir / "metrics.jsonl").write_text("\n".join(lines) + "\n")
    else:
        ckpt = Path("checkpoint.json")
        for line in lines:
            print(line)
    dataio.save_checkpoint(ckpt, result.predictor, result.adam_state, cfg)
    print(f"checkpoint written to {ckpt}", file=sys.stderr)
    return 0


def _cmd_eval(args) -> int:
    predictor, _, _ = dataio.load_checkpoint(args.checkpoint)
    dataset = dataio.load_dataset(args.dataset)
    report = evaluate_split(predictor, dataset, args.split)
    _print_report(report)
    doc = json.dumps(report.to_json(), sort_keys=True)
    if args.out:
        Path(args.out).write_text(doc + "\n")
    else:
        print(doc)
    return 0


def _cmd_align(args) -> int:
    try:
        fx, fy, cx, cy = (float(v) for v in args.intrinsics.split(","))
    except ValueError:
        raise ValueError("--intrinsics expects four comma-separated numbers fx,fy,cx,cy")
    intrinsics = Intrinsics(fx=fx, fy=fy, cx=cx, cy=cy)
    _, points, w, h = dataio.read_array(args.points, "points")
    _, depth, w2, h2 = dataio.read_array(args.depth, "depth")
    if (w, h) != (w2, h2):
        raise ValueError(f"point map is {w}x{h} but depth is {w2}x{h2}")
    grid = PixelGrid(w, h)
    if args.mask:
        _, mask, w3, h3 = dataio.read_array(args.mask, "mask")
        if (w3, h3) != (w, h):
            raise ValueError(f"mask is {w3}x{h3} but maps are {w}x{h}")
    else:
        mask = np.ones(grid.n_pixels, dtype=bool)
    if args.weights:
        _, weights, w4, h4 = dataio.read_array(args.weights, "weights")
        if (w4, h4) != (w, h):
            raise ValueError(f"weights are {w4}x{h4} but maps are {w}x{h}")
        weights = weights[mask]
    else:
        weights = None
    if not mask.any():
        raise AlignmentError("no effective correspondences (mask is empty)")
    x = points[mask]
    y = backproject(depth, intrinsics, grid, mask)
    pose = weighted_kabsch(x, y, weights)
    for row in pose.matrix34():
        print(" ".join(f"{v: .12f}" for v in row))
    print(f"cost    {alignment_cost(x, y, weights, pose):.9f}")
    print(f"cost_sq {alignment_cost_sq(x, y, weights, pose):.9f}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "align":
            return _cmd_align(args)
        raise ValueError(f"unknown command {args.command!r}")
    except SystemExit:
        raise
    except AlignmentError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
