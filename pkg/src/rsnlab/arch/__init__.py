"""Pose network architecture: residual-steps blocks, attention head,
U-shaped stages, multi-stage cascade, configs, and ablation variants."""

from .blocks import add_prm, add_rsb, prm_graph, rsb_graph
from .calibrate import CalibrationResult, calibrate, match_variant_flops
from .config import (
    FUSION_MODES,
    PRESET_NAMES,
    NetworkConfig,
    RSBConfig,
    branch_width_for,
    config_from_text,
    config_to_text,
    load_network_config,
    parse_input_size,
    save_network_config,
    with_input_size,
)
from .network import adapt_branches, build_network, build_stage

__all__ = [
    "FUSION_MODES",
    "PRESET_NAMES",
    "CalibrationResult",
    "NetworkConfig",
    "RSBConfig",
    "adapt_branches",
    "add_prm",
    "add_rsb",
    "branch_width_for",
    "build_network",
    "build_stage",
    "calibrate",
    "config_from_text",
    "config_to_text",
    "load_network_config",
    "match_variant_flops",
    "parse_input_size",
    "prm_graph",
    "rsb_graph",
    "save_network_config",
    "with_input_size",
]
