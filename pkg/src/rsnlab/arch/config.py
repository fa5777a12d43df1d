"""Block and network configuration types plus the flat key-value file format."""

from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace
from importlib import resources

from ..errors import ConfigError

FUSION_MODES = ("rsn", "baseline1", "baseline2")
PRESET_NAMES = ("rsn18", "rsn50", "rsn50x2", "rsn50x4", "rsn-tiny")


@dataclass(frozen=True)
class RSBConfig:
    """One residual-steps block: channel splits, stepped conv3x3 chains, fusion."""

    in_channels: int
    out_channels: int
    branch_width: int
    branches: int = 4
    stride: int = 1
    fusion_mode: str = "rsn"
    expansion: float = 4.0
    batchnorm: bool = True

    def __post_init__(self):
        if not 1 <= self.branches <= 6:
            raise ConfigError(f"branches must be in [1, 6], got {self.branches}")
        if self.branch_width < 1:
            raise ConfigError(f"branch_width must be >= 1, got {self.branch_width}")
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.in_channels % self.branches != 0:
            raise ConfigError(
                f"in_channels={self.in_channels} not divisible into {self.branches} splits"
            )


def branch_width_for(out_channels: int, width_mult: float, expansion: float) -> int:
    """Per-branch conv width: out_channels/expansion scaled by the multiplier."""
    return max(1, round(out_channels * width_mult / expansion))


@dataclass(frozen=True)
class NetworkConfig:
    """Full pose network: cascade of U-shaped stages built from RSB levels."""

    stages: int = 1
    blocks: tuple[int, int, int, int] = (2, 2, 2, 2)
    channels: tuple[int, int, int, int] = (64, 128, 256, 512)
    stem_channels: int = 64
    keypoints: int = 17
    input_h: int = 256
    input_w: int = 192
    prm_enabled: bool = True
    upsample_channels: int = 64
    branches: int = 4
    fusion_mode: str = "rsn"
    width_mult: float = 1.0
    expansion: float = 4.0
    batchnorm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.stages not in (1, 2, 4):
            raise ConfigError(f"stages must be 1, 2, or 4, got {self.stages}")
        if len(self.blocks) != 4 or len(self.channels) != 4:
            raise ConfigError("blocks and channels must list exactly 4 levels")
        if any(b < 1 for b in self.blocks):
            raise ConfigError(f"every level needs at least one block, got {self.blocks}")
        if any(c < 1 for c in self.channels) or self.stem_channels < 1:
            raise ConfigError("channel counts must be positive")
        if not 1 <= self.branches <= 6:
            raise ConfigError(f"branches must be in [1, 6], got {self.branches}")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"fusion_mode must be one of {FUSION_MODES}, got {self.fusion_mode!r}")
        if self.input_h % 32 != 0 or self.input_w % 32 != 0 or min(self.input_h, self.input_w) < 32:
            raise ConfigError(
                f"input size {self.input_h}x{self.input_w} must be a positive multiple of 32"
            )
        if self.keypoints < 1 or self.upsample_channels < 1:
            raise ConfigError("keypoints and upsample_channels must be positive")
        if self.width_mult <= 0:
            raise ConfigError(f"width_mult must be positive, got {self.width_mult}")
        for c in (self.stem_channels, *self.channels):
            if c % self.branches != 0:
                raise ConfigError(
                    f"channel count {c} not divisible by branches={self.branches}; "
                    "adapt channels first"
                )

    def branch_width(self, level: int) -> int:
        return branch_width_for(self.channels[level], self.width_mult, self.expansion)

    def heatmap_size(self) -> tuple[int, int]:
        return self.input_h // 4, self.input_w // 4


_INT_LIST_KEYS = ("blocks", "channels")
_BOOL_KEYS = ("prm_enabled", "batchnorm")
_FLOAT_KEYS = ("width_mult", "expansion")
_STR_KEYS = ("fusion_mode",)


def config_to_text(cfg: NetworkConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name in ("input_h", "input_w"):
            continue
        if f.name in _INT_LIST_KEYS:
            v = ",".join(str(i) for i in v)
        elif f.name in _BOOL_KEYS:
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    lines.append(f"input = {cfg.input_h}x{cfg.input_w}")
    return "\n".join(lines) + "\n"


def parse_input_size(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise ConfigError(f"input size must look like 256x192, got {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigError(f"input size must look like 256x192, got {text!r}") from exc


def config_from_text(text: str, source: str = "<string>") -> NetworkConfig:
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key == "input":
            values["input_h"], values["input_w"] = parse_input_size(val)
            continue
        if key in _INT_LIST_KEYS:
            try:
                values[key] = tuple(int(p) for p in val.split(","))
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: {key} wants comma-separated ints") from exc
        elif key in _BOOL_KEYS:
            if val.lower() not in ("true", "false"):
                raise ConfigError(f"{source}:{lineno}: {key} wants true/false, got {val!r}")
            values[key] = val.lower() == "true"
        elif key in _FLOAT_KEYS:
            try:
                values[key] = float(val)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: {key} wants a float, got {val!r}") from exc
        elif key in _STR_KEYS:
            values[key] = val
        elif key in {f.name for f in fields(NetworkConfig)}:
            try:
                values[key] = int(val)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: {key} wants an integer, got {val!r}") from exc
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    try:
        return NetworkConfig(**values)
    except TypeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def save_network_config(cfg: NetworkConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(config_to_text(cfg))


def load_network_config(spec: str) -> NetworkConfig:
    """Load from a file path, or fall back to a shipped preset name.

    Accepts "rsn18", "rsn18.cfg", or any path to a config file.
    """
    if os.path.exists(spec):
        with open(spec, encoding="utf-8") as f:
            return config_from_text(f.read(), source=spec)
    name = spec[:-4] if spec.endswith(".cfg") else spec
    if name in PRESET_NAMES:
        text = resources.files("rsnlab.resources").joinpath(f"{name}.cfg").read_text("utf-8")
        return config_from_text(text, source=f"preset {name}")
    raise ConfigError(f"no such config file or preset: {spec!r} (presets: {', '.join(PRESET_NAMES)})")


def with_input_size(cfg: NetworkConfig, h: int, w: int) -> NetworkConfig:
    return replace(cfg, input_h=h, input_w=w)
