"""Command-line front end: analysis, building, training, decoding, evaluation,
and verification behind one executable.

Exit status is 0 on success, 1 on a domain error (bad data, failed check),
and 2 on a usage error.  Every verb accepts --kv for line-delimited
``key=value`` output with stable keys; reports are reproducible given seeds.
The RSN_SEED environment variable overrides the default --seed of any verb.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace

import numpy as np

from .analysis import block_rf_row, cost_of_network
from .arch.blocks import prm_graph, rsb_graph
from .arch.calibrate import calibrate, match_variant_flops
from .arch.config import (PRESET_NAMES, RSBConfig, load_network_config, parse_input_size,
                          save_network_config, with_input_size)
from .arch.network import build_network
from .codec import (HeatmapStack, KeypointSet, decode, load_heatmaps, load_skeleton,
                    pose_score)
from .data import AugmentConfig, DiskDataset, load_coco_annotations, synth_generate
from .engine import Tensor, check_function, grad_check, ops
from .errors import ConfigError, DataError, RSNError
from .metrics import PosePrediction, average_precision, pckh
from .train import TrainConfig, format_record, train

logger = logging.getLogger(__name__)

BLOCK_TEMPLATES = ("resnet", "osnet", "res2net", "rsn")
FUSION_MODES = ("rsn", "baseline1", "baseline2")


def _env_seed() -> int:
    raw = os.environ.get("RSN_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(f"RSN_SEED must be an integer, got {raw!r}") from exc


def _seed_of(args) -> int:
    return args.seed if args.seed is not None else _env_seed()


def _emit(args, text_lines, kv_pairs) -> None:
    """Print the human rendering, or stable key=value lines under --kv."""
    if args.kv:
        for key, value in kv_pairs:
            print(f"{key}={value}")
    else:
        for line in text_lines:
            print(line)


def _group(n: int) -> str:
    return f"{n:,}"


# --- analyze -------------------------------------------------------------------


def _rf_lines(block: str, branches: int):
    rows = block_rf_row(block, branches)
    text = [f"y{i}: {rf}" for i, rf in enumerate(rows, start=1)]
    pairs = [(f"y{i}", str(rf)) for i, rf in enumerate(rows, start=1)]
    return text, pairs


def cmd_analyze(args) -> int:
    if args.table:
        text, pairs = [], []
        for block in BLOCK_TEMPLATES:
            rows, row_pairs = _rf_lines(block, args.branches)
            text.append(f"{block}:")
            text.extend(f"  {line}" for line in rows)
            pairs.extend((f"{block}.{key}", value) for key, value in row_pairs)
        _emit(args, text, pairs)
        return 0
    text, pairs = _rf_lines(args.block, args.branches)
    _emit(args, text, [("block", args.block), ("branches", args.branches)] + pairs)
    return 0


# --- count ---------------------------------------------------------------------


def _load_config(args):
    cfg = load_network_config(args.config)
    if getattr(args, "input", None):
        cfg = with_input_size(cfg, *parse_input_size(args.input))
    return cfg


def cmd_count(args) -> int:
    cfg = _load_config(args)
    report = cost_of_network(cfg)
    text = [
        f"config: {args.config}  input: {cfg.input_h}x{cfg.input_w}  stages: {cfg.stages}",
        f"params: {_group(report.params)} ({report.mparams:.3f} M)",
        f"macs: {_group(report.macs)} ({report.gflops:.3f} GFLOPs; 1 MAC = 1 FLOP,"
        " elementwise/pool/resize not counted)",
    ]
    pairs = [("config", args.config), ("input", f"{cfg.input_h}x{cfg.input_w}"),
             ("params", report.params), ("macs", report.macs),
             ("gflops", repr(report.gflops))]
    _emit(args, text, pairs)
    return 0


# --- calibrate -------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    if args.branches is not None or args.fusion is not None:
        variant, err = match_variant_flops(cfg, branches=args.branches,
                                           fusion_mode=args.fusion)
        macs = cost_of_network(variant).macs
        text = [
            f"variant: branches={variant.branches} fusion={variant.fusion_mode}"
            f" width_mult={variant.width_mult}",
            f"macs: {_group(macs)} ({err:+.2%} vs base)",
        ]
        pairs = [("branches", variant.branches), ("fusion", variant.fusion_mode),
                 ("width_mult", repr(variant.width_mult)), ("macs", macs),
                 ("macs_err", repr(err))]
        result_cfg = variant
    else:
        result = calibrate(cfg, int(args.params_target), int(args.macs_target))
        text = [
            f"width_mult: {result.config.width_mult}",
            f"upsample_channels: {result.config.upsample_channels}",
            f"params: {_group(result.params)} (target {_group(result.params_target)},"
            f" {result.params_err:+.2%})",
            f"macs: {_group(result.macs)} (target {_group(result.macs_target)},"
            f" {result.macs_err:+.2%})",
        ]
        pairs = [("width_mult", repr(result.config.width_mult)),
                 ("upsample_channels", result.config.upsample_channels),
                 ("params", result.params), ("params_err", repr(result.params_err)),
                 ("macs", result.macs), ("macs_err", repr(result.macs_err))]
        result_cfg = result.config
    if args.out:
        save_network_config(result_cfg, args.out)
        text.append(f"wrote {args.out}")
        pairs.append(("out", args.out))
    _emit(args, text, pairs)
    return 0


# --- synth ---------------------------------------------------------------------


def cmd_synth(args) -> int:
    dataset = synth_generate(_seed_of(args), args.count,
                             canvas=parse_input_size(args.canvas),
                             joint_count=args.joints)
    path = dataset.write(args.out)
    _emit(args, [f"wrote {args.count} samples under {args.out}"],
          [("count", args.count), ("seed", dataset.seed), ("annotations", path)])
    return 0


# --- train ---------------------------------------------------------------------


def _open_dataset(spec: str, seed: int, count: int, canvas: str):
    if spec == "synth":
        return synth_generate(seed, count, canvas=parse_input_size(canvas))
    if os.path.isdir(spec):
        return DiskDataset.open(spec)
    raise DataError(f"--data wants 'synth' or a dataset directory, got {spec!r}")


def _augment_for(cfg, dataset, kind: str) -> AugmentConfig:
    size = (cfg.input_h, cfg.input_w)
    if kind == "none":
        return AugmentConfig(input_size=size, rotation=0.0,
                             scale_range=(1.0, 1.0), flip_prob=0.0)
    skeleton = load_skeleton("coco")
    _, annotation = dataset.sample(0)
    joints = annotation.keypoints.K
    pairs = tuple(p for p in skeleton.flip_pairs if max(p) < joints)
    return AugmentConfig(input_size=size, flip_pairs=pairs)


def cmd_train(args) -> int:
    seed = _seed_of(args)
    cfg = _load_config(args)
    dataset = _open_dataset(args.data, seed, args.count, args.canvas)
    train_cfg = TrainConfig(epochs=args.epochs, steps_per_epoch=args.steps,
                            batch_size=args.batch, base_lr=args.lr,
                            final_lr=args.final_lr, weight_decay=args.weight_decay,
                            seed=seed)
    graph = build_network(cfg, seed=seed)
    result = train(graph, cfg, dataset, train_cfg,
                   augment_cfg=_augment_for(cfg, dataset, args.augment),
                   out_dir=args.out, resume=args.resume,
                   on_record=lambda record: print(format_record(record), flush=True))
    summary = {"kind": "done", "steps": len(result.steps),
               "initial_loss": result.initial_loss, "final_loss": result.final_loss}
    if result.epochs:
        summary["pck"] = result.epochs[-1]["pck"]
    if result.checkpoint_path:
        summary["checkpoint"] = result.checkpoint_path
    print(format_record(summary), flush=True)
    return 0


# --- decode --------------------------------------------------------------------


def cmd_decode(args) -> int:
    stack = load_heatmaps(args.heatmaps)
    flipped = None
    if args.flip:
        raw = load_heatmaps(args.flip)
        # The dump holds the mirrored run as the network produced it; restore
        # the original orientation, which is what decode() averages with.
        flipped = HeatmapStack(raw.values[:, :, ::-1].copy(), raw.to_image)
    pairs = () if args.pairs == "none" else load_skeleton(args.pairs).flip_pairs
    kps = decode(stack, flipped=flipped, flip_pairs=pairs,
                 offset_mode=args.offset_mode, blur=not args.no_blur)
    score = pose_score(kps)
    rows = kps.joints.tolist()
    text = [f"k{i}: x={x:.2f} y={y:.2f} score={s:.4f}"
            for i, (x, y, s, _) in enumerate(rows)]
    text.append(f"pose score: {score:.4f}")
    kv = [(f"k{i}", f"{x!r},{y!r},{s!r}") for i, (x, y, s, _) in enumerate(rows)]
    kv.append(("pose_score", repr(score)))
    _emit(args, text, kv)
    if args.json:
        payload = {"keypoints": [[x, y, s] for x, y, s, _ in kps.joints.tolist()],
                   "score": score}
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=1)
    return 0


# --- eval ----------------------------------------------------------------------


def _load_predictions(path: str) -> list[PosePrediction]:
    try:
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as err:
        raise DataError(f"cannot read predictions from {path}: {err}") from err
    if not isinstance(payload, list):
        raise DataError("prediction file must hold a JSON list")
    preds = []
    for i, record in enumerate(payload):
        where = f"predictions[{i}]"
        if not isinstance(record, dict) or "keypoints" not in record:
            raise DataError(f"{where}: needs a 'keypoints' field")
        flat = np.asarray(record["keypoints"], dtype=np.float64)
        if flat.ndim != 1 or flat.size % 3:
            raise DataError(f"{where}: keypoints must be a flat [x, y, score] list")
        triples = flat.reshape(-1, 3)
        joints = np.column_stack([triples[:, :2],
                                  np.clip(triples[:, 2], 0.0, 1.0),
                                  np.full(len(triples), 2.0)])
        x0, y0 = triples[:, :2].min(axis=0)
        x1, y1 = triples[:, :2].max(axis=0)
        kps = KeypointSet(joints, bbox=(x0, y0, x1 - x0, y1 - y0))
        preds.append(PosePrediction(keypoints=kps,
                                    score=float(record.get("score", 1.0)),
                                    image_id=int(record.get("image_id", 0)),
                                    id=int(record.get("id", i))))
    return preds


def _paired_keypoints(preds, gts):
    """Predictions as KeypointSets in annotation order: by id when the id
    sets match one-to-one, positionally otherwise."""
    if len(preds) != len(gts):
        raise DataError(f"got {len(preds)} predictions for {len(gts)} annotations")
    by_id = {(p.image_id, p.id): p for p in preds}
    keys = [(g.image_id, g.id) for g in gts]
    if len(by_id) == len(preds) and set(keys) == set(by_id):
        return [by_id[key].keypoints for key in keys]
    return [p.keypoints for p in preds]


def cmd_eval(args) -> int:
    index = load_coco_annotations(args.annotations)
    preds = _load_predictions(args.preds)
    skeleton = load_skeleton(args.skeleton)
    if args.metric == "oks":
        if skeleton.oks_k is None:
            raise DataError(f"skeleton {skeleton.name!r} has no per-joint"
                            " similarity constants; use --skeleton coco")
        report = average_precision(preds, list(index.annotations), skeleton.oks_k)
    else:
        gts = list(index.annotations)
        if args.head_length is not None:
            gts = [replace(g, head_length=args.head_length) for g in gts]
        names = skeleton.joint_names
        sample_k = gts[0].keypoints.K if gts else len(names)
        report = pckh(_paired_keypoints(preds, gts), gts, threshold=args.threshold,
                      joint_names=names if len(names) == sample_k else None)
    pairs = [(label, f"{value:.6f}") for label, value in report.components]
    pairs += [("mean", f"{report.mean:.6f}"), ("skipped", report.skipped)]
    _emit(args, report.lines(), pairs)
    return 0


# --- gradcheck ------------------------------------------------------------------


def _t64(rng, *shape, scale: float = 1.0, margin: float = 0.0) -> Tensor:
    data = rng.standard_normal(shape) * scale
    if margin:
        data = data + margin * np.sign(data)
    return Tensor(data.astype(np.float64), requires_grad=True)


def _draw_shape(rng, cmax=4, smax=7, smin=1):
    return (int(rng.integers(1, 3)), int(rng.integers(1, cmax + 1)),
            int(rng.integers(smin, smax + 1)), int(rng.integers(smin, smax + 1)))


def _primitive_cases():
    """name -> runner(rng) -> max relative error, one random shape per call."""

    def conv2d(rng):
        k = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 2]))
        n, ci, h, w = _draw_shape(rng, smin=k)
        co = int(rng.integers(1, 4))
        x, wt, b = _t64(rng, n, ci, h, w), _t64(rng, co, ci, k, k), _t64(rng, 1, co, 1, 1)
        return max(check_function(
            lambda a, ww, bb: ops.conv2d(a, ww, bb, stride, k // 2), [x, wt, b]))

    def depthwise(rng):
        k = int(rng.choice([3, 9]))
        n, c, h, w = _draw_shape(rng, smin=3)
        x, wt = _t64(rng, n, c, h, w), _t64(rng, c, 1, k, k)
        return max(check_function(lambda a, ww: ops.depthwise_conv2d(a, ww, 1, k // 2),
                                  [x, wt]))

    def binary(op):
        def run(rng):
            n, c, h, w = _draw_shape(rng)
            x = _t64(rng, n, c, h, w)
            y = _t64(rng, 1, c, 1, 1) if rng.integers(2) else _t64(rng, n, c, h, w)
            fn = ops.sub if op == "sub" else (lambda a, b: ops.elementwise(a, b, op))
            return max(check_function(fn, [x, y]))
        return run

    def unary(fn, **kwargs):
        def run(rng):
            return max(check_function(fn, [_t64(rng, *_draw_shape(rng, smin=3), **kwargs)]))
        return run

    def scalar_ops(rng):
        factor, shift = rng.normal(), rng.normal()
        x = _t64(rng, *_draw_shape(rng))
        return max(check_function(
            lambda a: ops.add_scalar(ops.scale(a, factor), shift), [x]))

    def resize(rng):
        factor = int(rng.choice([2, 3, 4]))
        x = _t64(rng, *_draw_shape(rng))
        return max(check_function(lambda a: ops.resize_nearest(a, factor), [x]))

    def concat(rng):
        n, c, h, w = _draw_shape(rng)
        xs = [_t64(rng, n, c + i, h, w) for i in range(3)]
        return max(check_function(lambda *parts: ops.channel_concat(list(parts)), xs))

    def chan_slice(rng):
        n, c, h, w = _draw_shape(rng, cmax=6)
        lo = int(rng.integers(c))
        hi = int(rng.integers(lo + 1, c + 1))
        x = _t64(rng, n, c, h, w)
        return max(check_function(lambda a: ops.channel_slice(a, lo, hi), [x]))

    def chan_split(rng):
        parts = int(rng.integers(2, 4))
        n, _, h, w = _draw_shape(rng)
        x = _t64(rng, n, parts * int(rng.integers(1, 3)), h, w)
        return max(check_function(
            lambda a: ops.channel_concat(list(reversed(ops.channel_split(a, parts)))), [x]))

    def bnorm(training):
        def run(rng):
            n, c, h, w = _draw_shape(rng)
            x = _t64(rng, max(n, 2), c, h, w)
            gamma = _t64(rng, 1, c, 1, 1, scale=0.3)
            beta = _t64(rng, 1, c, 1, 1, scale=0.3)
            mean = rng.standard_normal((1, c, 1, 1)) * (0.0 if training else 1.0)
            var = np.ones((1, c, 1, 1)) if training else rng.uniform(0.5, 2.0, (1, c, 1, 1))
            return max(check_function(
                lambda a, g, b: ops.batchnorm(a, g, b, mean, var, training=training),
                [x, gamma, beta]))
        return run

    def prm_combine(rng):
        n, c, h, w = _draw_shape(rng)
        kx = _t64(rng, n, c, h, w)
        alpha = _t64(rng, n, c, 1, 1)
        beta = _t64(rng, n, c, h, w)
        return max(check_function(ops.prm_combine, [kx, alpha, beta]))

    return {
        "conv2d": conv2d,
        "depthwise_conv2d": depthwise,
        "add": binary("add"),
        "sub": binary("sub"),
        "mul": binary("mul"),
        "scale_add_scalar": scalar_ops,
        "relu": unary(ops.relu, margin=0.05),
        "sigmoid": unary(ops.sigmoid, scale=2.0),
        "max_pool_3x3_s2": unary(ops.max_pool_3x3_s2),
        "global_avg_pool": unary(ops.global_avg_pool),
        "resize_nearest": resize,
        "channel_concat": concat,
        "channel_slice": chan_slice,
        "channel_split": chan_split,
        "batchnorm_train": bnorm(True),
        "batchnorm_eval": bnorm(False),
        "prm_combine": prm_combine,
        "sum_all": unary(ops.sum_all),
        "mean_all": unary(ops.mean_all),
    }


def _rsb_case(rng, branches: int, fusion_mode: str) -> float:
    width = int(rng.integers(1, 3))
    ci = branches * int(rng.integers(1, 3))
    co = int(rng.integers(4, 9))
    stride = int(rng.choice([1, 2]))
    cfg = RSBConfig(in_channels=ci, out_channels=co, branch_width=width,
                    branches=branches, stride=stride, fusion_mode=fusion_mode)
    g = rsb_graph(cfg, seed=int(rng.integers(1 << 30)))
    size = int(rng.integers(4, 7))
    x = rng.standard_normal((int(rng.integers(2, 4)), ci, size, size))
    report = grad_check(g, x, mode="train", seed=int(rng.integers(1 << 30)))
    return report.worst[1]


def _prm_case(rng) -> float:
    c = int(rng.integers(2, 5))
    g = prm_graph(c, seed=int(rng.integers(1 << 30)))
    size = int(rng.integers(4, 7))
    x = rng.standard_normal((int(rng.integers(2, 4)), c, size, size))
    report = grad_check(g, x, mode="train", seed=int(rng.integers(1 << 30)))
    return report.worst[1]


def gradcheck_cases(shapes: int, include_blocks: bool, seed: int = 0):
    """(name, max relative error) per checked case.

    Every primitive sees ``shapes`` random shapes; with blocks enabled, the
    full residual-steps block additionally runs on all branch-count/fusion
    combinations plus random fills up to ``shapes`` runs, and the refine head
    runs ``shapes`` random shapes.
    """
    results = []
    for case, (name, runner) in enumerate(_primitive_cases().items()):
        err = 0.0
        for trial in range(shapes):
            rng = np.random.default_rng((100 + case, seed, trial))
            err = max(err, runner(rng))
        results.append((name, err))
    if not include_blocks:
        return results

    combos = [(b, mode) for b in range(2, 7) for mode in FUSION_MODES]
    fill = np.random.default_rng((1, seed))
    while len(combos) < shapes:
        combos.append((int(fill.integers(2, 7)),
                       FUSION_MODES[int(fill.integers(3))]))
    errs: dict[str, float] = {}
    for trial, (branches, mode) in enumerate(combos):
        rng = np.random.default_rng((2, seed, trial))
        key = f"rsb_b{branches}_{mode}"
        errs[key] = max(errs.get(key, 0.0), _rsb_case(rng, branches, mode))
    results.extend(sorted(errs.items()))

    err = 0.0
    for trial in range(shapes):
        rng = np.random.default_rng((3, seed, trial))
        err = max(err, _prm_case(rng))
    results.append(("prm", err))
    return results


def cmd_gradcheck(args) -> int:
    start = time.monotonic()
    results = gradcheck_cases(args.shapes, include_blocks=args.all, seed=_seed_of(args))
    failed = [name for name, err in results if err > args.tol]
    text = [f"{name}: max rel err {err:.3e} {'ok' if err <= args.tol else 'FAIL'}"
            for name, err in results]
    text.append(f"{len(results) - len(failed)}/{len(results)} cases within"
                f" {args.tol:g} in {time.monotonic() - start:.1f}s")
    pairs = [(name, f"{err:.3e}") for name, err in results]
    pairs.append(("passed", "true" if not failed else "false"))
    _emit(args, text, pairs)
    return 0 if not failed else 1


# --- parser ---------------------------------------------------------------------


def _add_seed(p) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="RNG seed (default: RSN_SEED env var, else 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rsnlab",
        description="Pose-architecture laboratory: residual-steps blocks,"
                    " receptive-field and cost analysis, heatmap decoding,"
                    " metrics, and a desk-scale training harness.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("analyze", help="receptive fields of block templates")
    p.add_argument("--block", choices=BLOCK_TEMPLATES, default="rsn")
    p.add_argument("--branches", type=int, default=4)
    p.add_argument("--table", action="store_true",
                   help="print every template at the chosen branch count")
    p.set_defaults(fn=cmd_analyze)

    p = sub.add_parser("count", help="parameter and MAC totals for a config")
    p.add_argument("--config", required=True,
                   help=f"config path or preset ({', '.join(PRESET_NAMES)})")
    p.add_argument("--input", help="override input size, e.g. 256x192")
    p.set_defaults(fn=cmd_count)

    p = sub.add_parser("calibrate",
                       help="fit width_mult/upsample_channels to cost targets,"
                            " or cost-match an ablation variant")
    p.add_argument("--config", required=True)
    p.add_argument("--input", help="override input size, e.g. 256x192")
    p.add_argument("--params-target", type=float, default=12.5e6)
    p.add_argument("--macs-target", type=float, default=2.5e9)
    p.add_argument("--branches", type=int, help="cost-match this branch count")
    p.add_argument("--fusion", choices=FUSION_MODES,
                   help="cost-match this fusion mode")
    p.add_argument("--out", help="write the resulting config here")
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("synth", help="write a synthetic dataset to a directory")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=32)
    p.add_argument("--canvas", default="256x256")
    p.add_argument("--joints", type=int, default=17)
    _add_seed(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train a network on synthetic or disk data")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default="synth",
                   help="'synth' or a directory containing annotations.json")
    p.add_argument("--steps", type=int, default=300, help="steps per epoch")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--final-lr", type=float, default=0.0)
    p.add_argument("--weight-decay", type=float, default=1e-5)
    p.add_argument("--count", type=int, default=32, help="synthetic sample count")
    p.add_argument("--canvas", default="256x256", help="synthetic canvas size")
    p.add_argument("--augment", choices=("full", "none"), default="full")
    p.add_argument("--out", help="checkpoint directory")
    p.add_argument("--resume", help="checkpoint file to resume from")
    _add_seed(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("decode", help="decode a heatmap dump to keypoints")
    p.add_argument("--heatmaps", required=True, help="heatmap dump path")
    p.add_argument("--flip", help="dump from the mirrored input, for averaging")
    p.add_argument("--pairs", default="none",
                   help="skeleton naming the left/right pairs (coco, mpii, none)")
    p.add_argument("--offset-mode", choices=("unit", "vector"), default="unit")
    p.add_argument("--no-blur", action="store_true")
    p.add_argument("--json", help="also write keypoints as JSON here")
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("eval", help="score predictions against annotations")
    p.add_argument("--preds", required=True, help="JSON list of predictions")
    p.add_argument("--annotations", required=True)
    p.add_argument("--metric", choices=("oks", "pckh"), default="oks")
    p.add_argument("--threshold", type=float, default=0.5,
                   help="distance threshold for pckh")
    p.add_argument("--head-length", type=float,
                   help="head segment length applied to every annotation"
                        " (for data without per-sample head boxes)")
    p.add_argument("--skeleton", default="coco")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--all", action="store_true",
                   help="also check full residual blocks and the refine head")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--shapes", type=int, default=20,
                   help="random shapes per checked case")
    _add_seed(p)
    p.set_defaults(fn=cmd_gradcheck)

    for sp in sub.choices.values():
        sp.add_argument("--kv", action="store_true",
                        help="line-delimited key=value output")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except RSNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
