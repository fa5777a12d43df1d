"""One-time width calibration against published complexity totals.

The free knobs are the branch width multiplier (quadratic in parameters and
MACs) and the head width (cheap in parameters, expensive in MACs because it
works at 1/4 resolution).  For each candidate head width the multiplier is
bisected so the parameter total lands on target, then the pair with the best
normalized worst-case error wins.  Results are baked into the shipped preset
files; rerun via the CLI to reproduce them.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from ..analysis import cost_of_network
from ..errors import ConfigError
from .config import NetworkConfig
from .network import adapt_branches

HEAD_WIDTH_GRID = (48, 64, 96, 128, 160, 192, 224, 256, 320)


@dataclass(frozen=True)
class CalibrationResult:
    config: NetworkConfig
    params: int
    macs: int
    params_target: int
    macs_target: int

    @property
    def params_err(self) -> float:
        return self.params / self.params_target - 1.0

    @property
    def macs_err(self) -> float:
        return self.macs / self.macs_target - 1.0


def _params_at(cfg: NetworkConfig, mult: float) -> int:
    return cost_of_network(replace(cfg, width_mult=mult)).params


def _bisect_width_mult(cfg: NetworkConfig, params_target: int,
                       lo: float = 0.05, hi: float = 8.0, iters: int = 40) -> float:
    if _params_at(cfg, lo) > params_target:
        return lo
    if _params_at(cfg, hi) < params_target:
        raise ConfigError(f"parameter target {params_target} unreachable below width_mult={hi}")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _params_at(cfg, mid) <= params_target:
            lo = mid
        else:
            hi = mid
    return lo


def calibrate(cfg: NetworkConfig, params_target: int, macs_target: int,
              params_tol: float = 0.10, macs_tol: float = 0.15,
              head_widths: tuple[int, ...] = HEAD_WIDTH_GRID) -> CalibrationResult:
    """Pick width_mult and upsample_channels hitting both targets.

    Tolerances only weight the objective (error relative to allowance); the
    caller decides whether the result is acceptable.
    """
    best: CalibrationResult | None = None
    best_score = float("inf")
    for u in head_widths:
        base = replace(cfg, upsample_channels=u)
        mult = _bisect_width_mult(base, params_target)
        # The integer rounding of branch widths makes params stepwise in the
        # multiplier; probe a small neighborhood for the closest landing.
        for m in (mult * 0.98, mult, mult * 1.02):
            candidate = replace(base, width_mult=round(m, 4))
            report = cost_of_network(candidate)
            result = CalibrationResult(candidate, report.params, report.macs,
                                       params_target, macs_target)
            score = max(abs(result.params_err) / params_tol, abs(result.macs_err) / macs_tol)
            if score < best_score:
                best, best_score = result, score
    assert best is not None
    return best


def _macs_at(cfg: NetworkConfig, mult: float) -> int:
    return cost_of_network(replace(cfg, width_mult=mult)).macs


def _bisect_macs(cfg: NetworkConfig, macs_target: int,
                 lo: float = 0.05, hi: float = 8.0, iters: int = 40) -> float:
    if _macs_at(cfg, lo) > macs_target:
        return lo
    if _macs_at(cfg, hi) < macs_target:
        raise ConfigError(f"MAC target {macs_target} unreachable below width_mult={hi}")
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if _macs_at(cfg, mid) <= macs_target:
            lo = mid
        else:
            hi = mid
    return lo


def match_variant_flops(cfg: NetworkConfig, branches: int | None = None,
                        fusion_mode: str | None = None) -> tuple[NetworkConfig, float]:
    """Ablation variant of cfg with the analyzer MAC total matched to cfg's.

    Changing the fusion mode rewires sums only, so costs carry over exactly.
    Changing the branch count changes how many conv3x3 units each block holds,
    so channels are first rounded to stay divisible and the width multiplier
    is then re-bisected until the MAC totals agree.  Returns the variant and
    its relative MAC deviation from cfg.
    """
    target = cost_of_network(cfg).macs
    variant = cfg
    if fusion_mode is not None:
        variant = replace(variant, fusion_mode=fusion_mode)
    if branches is not None and branches != cfg.branches:
        variant = adapt_branches(variant, branches)
        mult = _bisect_macs(variant, target)
        best: tuple[NetworkConfig, float] | None = None
        for m in (mult * 0.98, mult, mult * 1.02):
            candidate = replace(variant, width_mult=round(m, 4))
            err = _macs_at(candidate, candidate.width_mult) / target - 1.0
            if best is None or abs(err) < abs(best[1]):
                best = (candidate, err)
        assert best is not None
        return best
    return variant, cost_of_network(variant).macs / target - 1.0
