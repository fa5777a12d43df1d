"""Pose-architecture laboratory: residual-step building blocks with dense
intra-level fusion, pose refinement attention, symbolic receptive-field and
cost analysis, heatmap keypoint coding, OKS/PCKh metrics, and a small
deterministic training harness, all on a from-scratch numpy autodiff engine."""

__version__ = "0.1.0"
