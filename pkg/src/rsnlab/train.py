"""Desk-scale training: intermediate supervision, linear LR decay, resumable
checkpoints.

Every random draw is keyed by (seed, epoch, position), so a run is a pure
function of its config and any step can be replayed after loading a
checkpoint; resuming reproduces the next step's loss bit-exactly.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .codec import HeatmapStack, decode, encode_targets, heatmap_to_crop
from .data import AugmentConfig, augment, epoch_order, sample_rng
from .engine import ops
from .engine.adam import AdamState, adam_step
from .engine.checkpoint import load_checkpoint, save_checkpoint
from .engine.graph import Graph
from .engine.tensor import Tensor
from .errors import TrainingError
from .metrics import PoseAnnotation, pckh

logger = logging.getLogger(__name__)

LOSS_KINDS = ("mse",)
INPUT_SHIFT = 0.5  # images arrive in [0, 1]; training sees them zero-centered


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule; the learning rate decays linearly to final_lr."""

    epochs: int = 1
    steps_per_epoch: int = 300
    batch_size: int = 8
    base_lr: float = 5e-4
    final_lr: float = 0.0
    weight_decay: float = 1e-5
    seed: int = 0
    loss: str = "mse"
    sigma: float = 2.0

    def __post_init__(self):
        if self.epochs < 1 or self.steps_per_epoch < 1 or self.batch_size < 1:
            raise TrainingError("epochs, steps_per_epoch, and batch_size must be >= 1")
        if not self.base_lr >= self.final_lr >= 0.0:
            raise TrainingError("need base_lr >= final_lr >= 0")
        if self.loss not in LOSS_KINDS:
            raise TrainingError(f"unknown loss kind {self.loss!r}; pick from {LOSS_KINDS}")
        if self.sigma <= 0.0:
            raise TrainingError("sigma must be positive")

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear interpolation from base_lr at step 0 to final_lr at total_steps."""
    if total_steps < 1:
        raise TrainingError("total_steps must be >= 1")
    if not 0 <= step <= total_steps:
        raise TrainingError(f"step {step} outside 0..{total_steps}")
    frac = step / total_steps
    return cfg.base_lr + (cfg.final_lr - cfg.base_lr) * frac


def heatmap_loss(preds: list[Tensor], targets: np.ndarray, mask: np.ndarray,
                 counters: dict[str, int] | None = None) -> Tensor:
    """Masked MSE per stage, summed over stages with equal weights.

    ``mask`` is (N, K) with 1 for supervised joints; each stage contributes
    the mean squared error over supervised heatmap cells.  A batch with every
    joint masked out yields exactly zero loss and bumps the ``all_masked``
    counter.
    """
    if not preds:
        raise TrainingError("need at least one stage of predictions")
    n, k = mask.shape
    supervised = float(mask.sum())
    if supervised == 0.0:
        if counters is not None:
            counters["all_masked"] = counters.get("all_masked", 0) + 1
        logger.warning("batch has every joint masked out; loss is zero")

    total: Tensor | None = None
    mask4 = mask.reshape(n, k, 1, 1)
    for pred in preds:
        if pred.shape[:2] != (n, k):
            raise TrainingError(f"stage output {pred.shape} does not match"
                                f" targets ({n}, {k}, ...)")
        target = Tensor(np.asarray(targets, dtype=pred.dtype))
        gate = Tensor(mask4.astype(pred.dtype))
        diff = ops.sub(pred, target)
        masked = ops.mul(ops.mul(diff, diff), gate)
        cells = supervised * pred.shape[2] * pred.shape[3]
        stage = ops.scale(ops.sum_all(masked), 1.0 / max(1.0, cells))
        total = stage if total is None else ops.add(total, stage)
    return total


@dataclass
class TrainResult:
    """Step records, per-epoch probe scores, and the last checkpoint path."""

    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    counters: dict[str, int] = field(default_factory=dict)
    checkpoint_path: str | None = None

    @property
    def final_loss(self) -> float:
        return self.steps[-1]["loss"]

    @property
    def initial_loss(self) -> float:
        return self.steps[0]["loss"]


def _batch_indices(order: np.ndarray, position: int, batch_size: int) -> list[int]:
    start = position * batch_size
    return [int(order[(start + j) % len(order)]) for j in range(batch_size)]


def _assemble_batch(dataset, net_cfg, cfg: TrainConfig, aug: AugmentConfig,
                    epoch: int, position: int, order: np.ndarray):
    """Augmented images, stacked targets, and the (N, K) supervision mask."""
    images, targets, masks = [], [], []
    for j, index in enumerate(_batch_indices(order, position, cfg.batch_size)):
        image, annotation = dataset.sample(index)
        rng = sample_rng(cfg.seed, epoch, position * cfg.batch_size + j)
        sample = augment(image, annotation, rng, aug)
        stack, mask = encode_targets(sample.keypoints, net_cfg, sigma=cfg.sigma)
        images.append(sample.image - INPUT_SHIFT)
        targets.append(stack.values)
        masks.append(mask)
    return (np.stack(images).astype(np.float32),
            np.stack(targets), np.stack(masks))


def probe_pck(graph: Graph, dataset, net_cfg, threshold: float = 0.1,
              limit: int = 32) -> float:
    """PCK on neutral crops of held-in samples, normalized by the crop size.

    A joint counts when its decoded position lands within ``threshold`` times
    the larger crop side of its ground truth.
    """
    neutral = AugmentConfig(input_size=(net_cfg.input_h, net_cfg.input_w),
                            rotation=0.0, scale_range=(1.0, 1.0), flip_prob=0.0)
    rng = np.random.default_rng(0)
    to_crop = heatmap_to_crop(net_cfg.heatmap_size(),
                              (net_cfg.input_h, net_cfg.input_w))
    preds, gts = [], []
    for index in range(min(len(dataset), limit)):
        image, annotation = dataset.sample(index)
        sample = augment(image, annotation, rng, neutral)
        x = (sample.image - INPUT_SHIFT)[None].astype(np.float32)
        heatmaps = graph.forward(x, mode="eval")[-1]
        stack = HeatmapStack(heatmaps.data[0].astype(np.float64), to_crop)
        preds.append(decode(stack))
        gts.append(PoseAnnotation(
            keypoints=sample.keypoints,
            head_length=float(max(net_cfg.input_h, net_cfg.input_w))))
    return pckh(preds, gts, threshold=threshold).mean


def _checkpoint_state(graph: Graph, adam: AdamState, step: int) -> dict[str, np.ndarray]:
    state = dict(graph.state_dict())
    for name, value in adam.m.items():
        state[f"adam/m/{name}"] = value
    for name, value in adam.v.items():
        state[f"adam/v/{name}"] = value
    meta = {"adam_t": adam.t, "step": step}
    for key, value in meta.items():
        state[f"meta/{key}"] = np.full((1, 1, 1, 1), float(value))
    return state


def _restore_checkpoint(path: str, graph: Graph, adam: AdamState) -> int:
    state = load_checkpoint(path)
    graph.load_state_dict({k: v for k, v in state.items()
                           if k.startswith(("param/", "buffer/"))})
    adam.m = {k[len("adam/m/"):]: v for k, v in state.items()
              if k.startswith("adam/m/")}
    adam.v = {k[len("adam/v/"):]: v for k, v in state.items()
              if k.startswith("adam/v/")}
    if "meta/adam_t" not in state or "meta/step" not in state:
        raise TrainingError(f"{path} is missing training progress records")
    adam.t = int(state["meta/adam_t"].item())
    return int(state["meta/step"].item())


def train(graph: Graph, net_cfg, dataset, cfg: TrainConfig,
          augment_cfg: AugmentConfig | None = None, out_dir: str | None = None,
          resume: str | None = None, probe_limit: int = 32,
          on_record=None) -> TrainResult:
    """Run the optimization loop; deterministic given the config seed.

    Emits one record per step (loss, lr) and one per epoch (probe PCK); a
    non-finite loss aborts with the offending step in the error.  Checkpoints
    land in ``out_dir`` at every epoch end when given.
    """
    if augment_cfg is None:
        augment_cfg = AugmentConfig(input_size=(net_cfg.input_h, net_cfg.input_w))
    if augment_cfg.input_size != (net_cfg.input_h, net_cfg.input_w):
        raise TrainingError("augmentation crop size must match the network input")

    adam = AdamState(weight_decay=cfg.weight_decay)
    start_step = _restore_checkpoint(resume, graph, adam) if resume else 0
    if start_step >= cfg.total_steps:
        raise TrainingError(f"checkpoint is already at step {start_step} of"
                            f" {cfg.total_steps}")

    result = TrainResult()
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    def emit(record: dict) -> None:
        (result.steps if record["kind"] == "step" else result.epochs).append(record)
        if on_record is not None:
            on_record(record)

    order = None
    for step in range(start_step, cfg.total_steps):
        epoch, position = divmod(step, cfg.steps_per_epoch)
        if position == 0 or order is None:
            order = epoch_order(cfg.seed, epoch, len(dataset))
        x, targets, masks = _assemble_batch(dataset, net_cfg, cfg, augment_cfg,
                                            epoch, position, order)
        outputs = graph.forward(x, mode="train")
        loss = heatmap_loss(outputs, targets, masks, counters=result.counters)
        loss_value = loss.data.item()
        if not math.isfinite(loss_value):
            raise TrainingError(f"non-finite loss {loss_value} at step {step}")
        graph.zero_grad()
        graph.backward(loss)
        adam_step(graph.params, adam, lr_at(step, cfg.total_steps, cfg))
        emit({"kind": "step", "step": step, "epoch": epoch,
              "lr": lr_at(step, cfg.total_steps, cfg), "loss": loss_value})

        if position == cfg.steps_per_epoch - 1:
            score = probe_pck(graph, dataset, net_cfg, limit=probe_limit)
            emit({"kind": "epoch", "epoch": epoch, "pck": score})
            if out_dir:
                path = os.path.join(out_dir, f"checkpoint_{step + 1:06d}.rsn1")
                save_checkpoint(path, _checkpoint_state(graph, adam, step + 1))
                result.checkpoint_path = path

    if out_dir and result.checkpoint_path is None:
        path = os.path.join(out_dir, f"checkpoint_{cfg.total_steps:06d}.rsn1")
        save_checkpoint(path, _checkpoint_state(graph, adam, cfg.total_steps))
        result.checkpoint_path = path
    return result


def format_record(record: dict) -> str:
    """Line-delimited key=value rendering for metrics logs."""
    return " ".join(f"{key}={record[key]!r}" if isinstance(record[key], str)
                    else f"{key}={record[key]}" for key in record)
