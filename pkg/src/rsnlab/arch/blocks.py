"""Residual-steps blocks and the pose refine attention head.

The block splits its input into B channel groups, reduces each with a
conv1x1, then runs branch i through i conv3x3 units.  Unit j of branch i
sums its branch-local input with unit j's output from branch i-1 (only
while j <= i-1), so later branches see progressively larger, stepped
receptive fields.  Branch outputs are concatenated, mixed by a conv1x1,
and joined by an identity (or projected) shortcut.

Fusion modes:
  rsn       - full stepped wiring with the cross-branch sums
  baseline1 - cross-branch sums removed (independent chains)
  baseline2 - additionally, every branch reads the third split's slice
"""

from __future__ import annotations

from ..engine.graph import Graph
from ..errors import ConfigError
from .config import RSBConfig


def _conv_bn(g: Graph, x: int, out_channels: int, k: int, prefix: str,
             stride: int = 1, batchnorm: bool = True) -> int:
    h = g.conv(x, out_channels, k, f"{prefix}.conv", stride=stride, bias=not batchnorm)
    if batchnorm:
        h = g.bn(h, f"{prefix}.bn")
    return h


def add_rsb(g: Graph, x: int, cfg: RSBConfig, prefix: str) -> int:
    """Append one residual-steps block; returns the output node id.

    Branch outputs y_i get labels "<prefix>.y<i>" so the analyzer can read
    per-branch receptive fields off the real wiring.
    """
    b_, w = cfg.branches, cfg.branch_width
    ci, co = cfg.in_channels, cfg.out_channels
    if g.nodes[x].channels != ci:
        raise ConfigError(
            f"{prefix}: block expects {ci} input channels, node has {g.nodes[x].channels}"
        )
    split_w = ci // b_

    if cfg.fusion_mode == "baseline2":
        lo = split_w * (min(3, b_) - 1)
        sources = [g.slice(x, lo, lo + split_w)] * b_
    else:
        sources = [g.slice(x, i * split_w, (i + 1) * split_w) for i in range(b_)]

    branch_bases = []
    for i in range(1, b_ + 1):
        h = _conv_bn(g, sources[i - 1], w, 1, f"{prefix}.br{i}.reduce",
                     stride=cfg.stride, batchnorm=cfg.batchnorm)
        branch_bases.append(g.relu(h))

    prev_units: list[int] = []
    branch_outputs = []
    for i in range(1, b_ + 1):
        units: list[int] = []
        for j in range(1, i + 1):
            inp = branch_bases[i - 1] if j == 1 else units[j - 2]
            if cfg.fusion_mode == "rsn" and j <= i - 1:
                inp = g.add(inp, prev_units[j - 1])
            h = _conv_bn(g, inp, w, 3, f"{prefix}.br{i}.u{j}", batchnorm=cfg.batchnorm)
            units.append(g.relu(h))
        branch_outputs.append(units[-1])
        g.set_label(units[-1], f"{prefix}.y{i}")
        prev_units = units

    merged = branch_outputs[0] if b_ == 1 else g.concat(branch_outputs)
    merged = _conv_bn(g, merged, co, 1, f"{prefix}.expand", batchnorm=cfg.batchnorm)

    if cfg.stride == 1 and ci == co:
        shortcut = x
    else:
        shortcut = _conv_bn(g, x, co, 1, f"{prefix}.proj",
                            stride=cfg.stride, batchnorm=cfg.batchnorm)
    return g.relu(g.add(merged, shortcut))


def rsb_graph(cfg: RSBConfig, seed: int = 0) -> Graph:
    """A standalone graph holding exactly one block (for tests and analysis)."""
    g = Graph(seed=seed)
    x = g.add_input(cfg.in_channels)
    out = add_rsb(g, x, cfg, "rsb")
    g.mark_output(out)
    g.set_label(out, "rsb.out")
    return g


def add_prm(g: Graph, x: int, prefix: str, batchnorm: bool = True) -> int:
    """Append the pose refine attention head: out = K(x) * (1 + beta * alpha).

    K is a conv3x3; alpha is a per-channel vector from global pooling and two
    conv1x1; beta is a spatial map from conv1x1 and depthwise conv9x9.  The
    attention-path convolutions carry biases and no batchnorm so both sigmoids
    stay live.  Inner nodes get labels "<prefix>.kx/alpha/beta" for probing.
    """
    c = g.nodes[x].channels

    kx = _conv_bn(g, x, c, 3, f"{prefix}.k", batchnorm=batchnorm)

    a = g.gap(x)
    a = g.conv(a, c, 1, f"{prefix}.a1", bias=True)
    a = g.conv(a, c, 1, f"{prefix}.a2", bias=True)
    alpha = g.sigmoid(a)

    b = g.conv(x, c, 1, f"{prefix}.b1", bias=True)
    b = g.dwconv(b, 9, f"{prefix}.b2", pad=4, bias=True)
    beta = g.sigmoid(b)

    out = g.prm_combine(kx, alpha, beta)
    g.set_label(kx, f"{prefix}.kx")
    g.set_label(alpha, f"{prefix}.alpha")
    g.set_label(beta, f"{prefix}.beta")
    g.set_label(out, f"{prefix}.out")
    return out


def prm_graph(channels: int, seed: int = 0, batchnorm: bool = True) -> Graph:
    g = Graph(seed=seed)
    x = g.add_input(channels)
    out = add_prm(g, x, "prm", batchnorm=batchnorm)
    g.mark_output(out)
    return g
