"""Single-stage U-shaped pose network and the multi-stage cascade.

Each stage: stem (conv7x7 stride 2 + maxpool for the image stage, conv3x3
adapter for later stages) -> four levels of residual-steps blocks at 1/4,
1/8, 1/16, 1/32 resolution -> top-down head (conv1x1 laterals + nearest
upsample + sum) back to 1/4 -> conv3x3 -> attention (last stage only) ->
conv1x1 to one heatmap channel per keypoint.

Stage t+1 consumes stage t's merged 1/4-resolution feature map (the tensor
entering the head conv3x3).  Every stage's heatmap is a marked output, so
the training loss can supervise all of them.
"""

from __future__ import annotations

from dataclasses import replace

from ..engine.graph import Graph
from ..errors import ConfigError
from .blocks import _conv_bn, add_prm, add_rsb
from .config import NetworkConfig, RSBConfig


def _rsb_cfg(cfg: NetworkConfig, level: int, in_channels: int, stride: int) -> RSBConfig:
    return RSBConfig(
        in_channels=in_channels,
        out_channels=cfg.channels[level],
        branch_width=cfg.branch_width(level),
        branches=cfg.branches,
        stride=stride,
        fusion_mode=cfg.fusion_mode,
        expansion=cfg.expansion,
        batchnorm=cfg.batchnorm,
    )


def _append_stage(g: Graph, x: int, cfg: NetworkConfig, stage: int, with_prm: bool) -> tuple[int, int]:
    """Returns (heatmap node id, pre-head 1/4-resolution feature node id)."""
    p = f"s{stage}"

    if stage == 0:
        h = _conv_bn(g, x, cfg.stem_channels, 7, f"{p}.stem", stride=2, batchnorm=cfg.batchnorm)
        h = g.relu(h)
        h = g.maxpool(h)
    else:
        h = _conv_bn(g, x, cfg.stem_channels, 3, f"{p}.adapt", batchnorm=cfg.batchnorm)
        h = g.relu(h)

    level_outs = []
    in_ch = cfg.stem_channels
    for level in range(4):
        for block in range(cfg.blocks[level]):
            stride = 2 if level > 0 and block == 0 else 1
            h = add_rsb(g, h, _rsb_cfg(cfg, level, in_ch, stride), f"{p}.l{level + 1}.b{block + 1}")
            in_ch = cfg.channels[level]
        g.set_label(h, f"{p}.l{level + 1}.out")
        level_outs.append(h)

    u = cfg.upsample_channels
    f = _conv_bn(g, level_outs[3], u, 1, f"{p}.lat4", batchnorm=cfg.batchnorm)
    for level in (2, 1, 0):
        f = g.upsample(f, 2)
        lateral = _conv_bn(g, level_outs[level], u, 1, f"{p}.lat{level + 1}", batchnorm=cfg.batchnorm)
        f = g.add(f, lateral)
    feature = f
    g.set_label(feature, f"{p}.feature")

    h = _conv_bn(g, feature, u, 3, f"{p}.head", batchnorm=cfg.batchnorm)
    h = g.relu(h)
    if with_prm:
        h = add_prm(g, h, f"{p}.prm", batchnorm=cfg.batchnorm)
    heatmap = g.conv(h, cfg.keypoints, 1, f"{p}.out", bias=True)
    g.set_label(heatmap, f"{p}.heatmap")
    return heatmap, feature


def build_stage(cfg: NetworkConfig, stage_index: int = 0, seed: int = 0) -> Graph:
    """One stage as a standalone graph (image input for stage 0, feature input after)."""
    if not 0 <= stage_index < cfg.stages:
        raise ConfigError(f"stage_index {stage_index} out of range for stages={cfg.stages}")
    g = Graph(seed=seed)
    x = g.add_input(3 if stage_index == 0 else cfg.upsample_channels)
    with_prm = cfg.prm_enabled and stage_index == cfg.stages - 1
    heatmap, _ = _append_stage(g, x, cfg, stage_index, with_prm)
    g.mark_output(heatmap)
    return g


def build_network(cfg: NetworkConfig, seed: int = 0, meta: bool = False) -> Graph:
    """The full cascade; outputs one supervised heatmap per stage, in order.

    meta=True builds a shape-only graph (for analysis) without weight init.
    """
    g = Graph(seed=seed, meta=meta)
    x = g.add_input(3)
    feature = x
    for stage in range(cfg.stages):
        with_prm = cfg.prm_enabled and stage == cfg.stages - 1
        heatmap, feature = _append_stage(g, feature, cfg, stage, with_prm)
        g.mark_output(heatmap)
    g.validate()
    return g


def adapt_branches(cfg: NetworkConfig, branches: int) -> NetworkConfig:
    """Variant of cfg with a different branch count; rounds channel counts up
    to the nearest multiple so every split stays exact."""
    if not 1 <= branches <= 6:
        raise ConfigError(f"branches must be in [1, 6], got {branches}")

    def round_up(c: int) -> int:
        return ((c + branches - 1) // branches) * branches

    return replace(
        cfg,
        branches=branches,
        stem_channels=round_up(cfg.stem_channels),
        channels=tuple(round_up(c) for c in cfg.channels),
    )
