"""Symbolic receptive-field propagation and parameter/MAC accounting.

Receptive fields follow l_k = l_{k-1} + (f_k - 1) * prod(strides before k),
tracked as sets: where paths merge (add, concat, attention combine) the sets
union, exposing every distinct field size a block offers.  A 1x1 convolution
is the identity on field sizes; a stride-1 3x3 adds 2.

Cost convention: FLOPs are counted as multiply-accumulates (1 MAC = 1 FLOP).
Convolution parameters are C_out*C_in*k*k/groups (+C_out with bias), MACs are
weight parameters (bias excluded) times output pixels; batchnorm contributes
2C parameters and no MACs; elementwise ops, pooling, and upsampling are
excluded from MACs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .engine.graph import Graph
from .errors import GraphError, ShapeError

MERGE_KINDS = ("add", "mul", "concat", "prm_combine")
IDENTITY_KINDS = ("relu", "sigmoid", "bn", "slice")


@dataclass(frozen=True)
class RFSet:
    """Receptive-field sizes reaching one node; global_field marks paths
    through global pooling, whose field is the whole input."""

    values: tuple[int, ...]
    global_field: bool = False

    def __post_init__(self):
        if not self.values and not self.global_field:
            raise GraphError("receptive-field set may not be empty")
        if any(v < 1 for v in self.values):
            raise GraphError(f"receptive fields must be >= 1, got {self.values}")
        object.__setattr__(self, "values", tuple(sorted(set(self.values))))

    def grown(self, amount: int) -> "RFSet":
        return RFSet(tuple(v + amount for v in self.values), self.global_field)

    def union(self, other: "RFSet") -> "RFSet":
        return RFSet(self.values + other.values, self.global_field or other.global_field)

    def __str__(self) -> str:
        parts = [str(v) for v in self.values]
        if self.global_field:
            parts.append("global")
        return ",".join(parts)


@dataclass(frozen=True)
class SNode:
    id: int
    kind: str
    inputs: tuple[int, ...]
    channels: int
    attrs: dict = field(default_factory=dict)
    name: str = ""


class SymbolicGraph:
    """Shape-level twin of a runtime graph: kinds, channels, geometry only."""

    def __init__(self):
        self.nodes: list[SNode] = []
        self.outputs: list[int] = []
        self.labels: dict[str, int] = {}

    def _append(self, kind: str, inputs: tuple[int, ...], channels: int,
                attrs: dict | None = None, name: str = "") -> int:
        for i in inputs:
            if not 0 <= i < len(self.nodes):
                raise GraphError(f"symbolic node input {i} does not exist (cycle or forward ref)")
        node = SNode(len(self.nodes), kind, inputs, channels, attrs or {}, name)
        self.nodes.append(node)
        return node.id

    def input(self, channels: int) -> int:
        return self._append("input", (), channels)

    def conv(self, x: int, out_channels: int, k: int, stride: int = 1,
             groups: int = 1, bias: bool = False, name: str = "") -> int:
        cin = self.nodes[x].channels
        if cin % groups != 0:
            raise GraphError(f"conv groups={groups} does not divide C_in={cin}")
        attrs = {"k": k, "stride": stride, "pad": k // 2, "groups": groups, "bias": bias}
        return self._append("conv", (x,), out_channels, attrs, name)

    def bn(self, x: int, name: str = "") -> int:
        return self._append("bn", (x,), self.nodes[x].channels, name=name)

    def relu(self, x: int) -> int:
        return self._append("relu", (x,), self.nodes[x].channels)

    def sigmoid(self, x: int) -> int:
        return self._append("sigmoid", (x,), self.nodes[x].channels)

    def maxpool(self, x: int) -> int:
        return self._append("maxpool", (x,), self.nodes[x].channels, {"k": 3, "stride": 2, "pad": 1})

    def gap(self, x: int) -> int:
        return self._append("gap", (x,), self.nodes[x].channels)

    def upsample(self, x: int, factor: int) -> int:
        return self._append("upsample", (x,), self.nodes[x].channels, {"factor": factor})

    def concat(self, xs: list[int]) -> int:
        return self._append("concat", tuple(xs), sum(self.nodes[i].channels for i in xs))

    def slice(self, x: int, lo: int, hi: int) -> int:
        return self._append("slice", (x,), hi - lo, {"lo": lo, "hi": hi})

    def add(self, a: int, b: int) -> int:
        return self._append("add", (a, b), self.nodes[a].channels)

    def mul(self, a: int, b: int) -> int:
        return self._append("mul", (a, b), self.nodes[a].channels)

    def prm_combine(self, kx: int, alpha: int, beta: int) -> int:
        return self._append("prm_combine", (kx, alpha, beta), self.nodes[kx].channels)

    def mark_output(self, x: int) -> None:
        self.outputs.append(x)

    def set_label(self, label: str, x: int) -> None:
        self.labels[label] = x


def graph_to_symbolic(g: Graph) -> SymbolicGraph:
    """1:1 conversion of a runtime graph; node ids carry over unchanged."""
    sg = SymbolicGraph()
    for node in g.nodes:
        a = node.attrs
        name = node.params[0].rsplit(".", 1)[0] if node.params else ""
        if node.op == "input":
            sg.input(node.channels)
        elif node.op == "conv":
            w = g.params[node.params[0]]
            sg.conv(node.inputs[0], w.shape[0], a["k"], a["stride"], 1, a["bias"], name)
        elif node.op == "dwconv":
            w = g.params[node.params[0]]
            c = w.shape[0]
            sg.conv(node.inputs[0], c, a["k"], a["stride"], c, a["bias"], name)
        elif node.op == "bn":
            sg.bn(node.inputs[0], name)
        elif node.op == "relu":
            sg.relu(node.inputs[0])
        elif node.op == "sigmoid":
            sg.sigmoid(node.inputs[0])
        elif node.op == "maxpool":
            sg.maxpool(node.inputs[0])
        elif node.op == "gap":
            sg.gap(node.inputs[0])
        elif node.op == "upsample":
            sg.upsample(node.inputs[0], a["factor"])
        elif node.op == "concat":
            sg.concat(list(node.inputs))
        elif node.op == "slice":
            sg.slice(node.inputs[0], a["lo"], a["hi"])
        elif node.op == "add":
            sg.add(node.inputs[0], node.inputs[1])
        elif node.op == "mul":
            sg.mul(node.inputs[0], node.inputs[1])
        elif node.op == "prm_combine":
            sg.prm_combine(*node.inputs)
        else:
            raise GraphError(f"cannot convert runtime op {node.op!r}")
    sg.outputs = list(g.outputs)
    sg.labels = dict(g.labels)
    return sg


def rf_propagate(sg: SymbolicGraph) -> dict[int, RFSet]:
    """Receptive-field set at every node, input seeded with {1}."""
    rf: dict[int, RFSet] = {}
    jump: dict[int, Fraction | None] = {}
    for node in sg.nodes:
        for i in node.inputs:
            if i not in rf:
                raise GraphError(f"node {node.id} consumed node {i} before it was computed")
        if node.kind == "input":
            rf[node.id], jump[node.id] = RFSet((1,)), Fraction(1)
        elif node.kind in ("conv", "maxpool"):
            src = node.inputs[0]
            j = jump[src]
            if j is None:
                rf[node.id], jump[node.id] = rf[src], None
            else:
                grow = (node.attrs["k"] - 1) * j
                if grow != int(grow):
                    raise GraphError(f"node {node.id}: fractional receptive-field growth {grow}")
                rf[node.id] = rf[src].grown(int(grow))
                jump[node.id] = j * node.attrs["stride"]
        elif node.kind == "gap":
            rf[node.id] = RFSet((), global_field=True)
            jump[node.id] = None
        elif node.kind == "upsample":
            src = node.inputs[0]
            rf[node.id] = rf[src]
            j = jump[src]
            jump[node.id] = None if j is None else j / node.attrs["factor"]
        elif node.kind in MERGE_KINDS:
            merged = rf[node.inputs[0]]
            for i in node.inputs[1:]:
                merged = merged.union(rf[i])
            rf[node.id] = merged
            jumps = [jump[i] for i in node.inputs if jump[i] is not None]
            jump[node.id] = jumps[0] if jumps else None
        elif node.kind in IDENTITY_KINDS:
            src = node.inputs[0]
            rf[node.id], jump[node.id] = rf[src], jump[src]
        else:
            raise GraphError(f"receptive-field rule missing for kind {node.kind!r}")
    return rf


@dataclass(frozen=True)
class NodeCost:
    node: int
    kind: str
    name: str
    params: int
    macs: int


@dataclass(frozen=True)
class CostReport:
    params: int
    macs: int
    per_node: tuple[NodeCost, ...]

    @property
    def flops(self) -> int:
        # 1 MAC counted as 1 FLOP (the convention used by pose-network papers)
        return self.macs

    @property
    def gflops(self) -> float:
        return self.macs / 1e9

    @property
    def mparams(self) -> float:
        return self.params / 1e6


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    out = (size + 2 * pad - k) // stride + 1
    if out < 1:
        raise ShapeError(f"spatial size {size} collapses below 1 (k={k}, stride={stride}, pad={pad})")
    return out


def count_cost(sg: SymbolicGraph, input_size: tuple[int, int]) -> CostReport:
    """Parameters and MACs with concrete spatial sizes propagated from the input."""
    h, w = input_size
    if h < 1 or w < 1:
        raise ShapeError(f"input size must be positive, got {h}x{w}")
    sizes: dict[int, tuple[int, int]] = {}
    rows: list[NodeCost] = []
    for node in sg.nodes:
        params = macs = 0
        if node.kind == "input":
            sizes[node.id] = (h, w)
        elif node.kind in ("conv", "maxpool"):
            sh, sw = sizes[node.inputs[0]]
            a = node.attrs
            oh = _conv_out(sh, a["k"], a["stride"], a["pad"])
            ow = _conv_out(sw, a["k"], a["stride"], a["pad"])
            sizes[node.id] = (oh, ow)
            if node.kind == "conv":
                cin = sg.nodes[node.inputs[0]].channels
                wparams = node.channels * (cin // a["groups"]) * a["k"] * a["k"]
                params = wparams + (node.channels if a["bias"] else 0)
                macs = wparams * oh * ow
        elif node.kind == "bn":
            sizes[node.id] = sizes[node.inputs[0]]
            params = 2 * node.channels
        elif node.kind == "gap":
            sizes[node.id] = (1, 1)
        elif node.kind == "upsample":
            sh, sw = sizes[node.inputs[0]]
            f = node.attrs["factor"]
            sizes[node.id] = (sh * f, sw * f)
        elif node.kind in MERGE_KINDS:
            spatial = [sizes[i] for i in node.inputs]
            full = [s for s in spatial if s != (1, 1)]
            if len(set(full)) > 1:
                raise ShapeError(f"node {node.id} merges mismatched spatial sizes {spatial}")
            sizes[node.id] = full[0] if full else (1, 1)
        elif node.kind in IDENTITY_KINDS:
            sizes[node.id] = sizes[node.inputs[0]]
        else:
            raise GraphError(f"cost rule missing for kind {node.kind!r}")
        if params or macs:
            rows.append(NodeCost(node.id, node.kind, node.name, params, macs))
    return CostReport(sum(r.params for r in rows), sum(r.macs for r in rows), tuple(rows))


def cost_of_network(cfg) -> CostReport:
    """Cost of the full cascade described by a network config.

    Uses a shape-only build, so it stays cheap for very wide configs.
    """
    from .arch.network import build_network

    sg = graph_to_symbolic(build_network(cfg, meta=True))
    return count_cost(sg, (cfg.input_h, cfg.input_w))


def emit_block_templates(block: str, branches: int = 4) -> SymbolicGraph:
    """Canonical one-block graphs for the receptive-field comparison table.

    Channel counts are nominal; only wiring matters for receptive fields.
    Outputs y1..y4 are the per-branch tap points, marked in order.
    """
    c, w = 64, 16
    sg = SymbolicGraph()
    if block == "resnet":
        x = sg.input(c)
        h = sg.conv(x, w, 1)
        y = sg.conv(h, w, 3)
        for _ in range(4):
            sg.mark_output(y)
        out = sg.conv(y, c, 1)
        sg.add(out, x)
        return sg
    if block == "osnet":
        x = sg.input(c)
        streams = []
        for t in range(1, 5):
            h = sg.conv(x, w, 1)
            for _ in range(t):
                h = sg.conv(h, w, 3, groups=w)
            streams.append(h)
            sg.mark_output(h)
        sg.concat(streams)
        return sg
    if block == "res2net":
        x = sg.input(c)
        split_w = c // 4
        parts = [sg.slice(x, i * split_w, (i + 1) * split_w) for i in range(4)]
        y1 = parts[0]
        sg.mark_output(y1)
        ys = [y1]
        prev = None
        for i in range(1, 4):
            h = parts[i] if prev is None else sg.add(parts[i], prev)
            y = sg.conv(h, split_w, 3)
            sg.mark_output(y)
            ys.append(y)
            prev = y
        cat = sg.concat(ys)
        sg.conv(cat, c, 1)
        return sg
    if block == "rsn":
        from .arch.blocks import rsb_graph
        from .arch.config import RSBConfig

        ch = c - (c % branches)
        cfg = RSBConfig(in_channels=ch, out_channels=ch, branch_width=w,
                        branches=branches, batchnorm=False)
        sg = graph_to_symbolic(rsb_graph(cfg))
        # Output tap points are the labeled per-branch outputs of the real block.
        sg.outputs = [sg.labels[f"rsb.y{i}"] for i in range(1, branches + 1)]
        return sg
    raise GraphError(f"unknown block template {block!r} (expected resnet, osnet, res2net, rsn)")


def block_rf_row(block: str, branches: int = 4) -> list[RFSet]:
    """Receptive-field sets of a template's branch outputs, in branch order."""
    sg = emit_block_templates(block, branches)
    rf = rf_propagate(sg)
    return [rf[i] for i in sg.outputs]
