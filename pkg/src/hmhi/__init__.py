"""Hierarchical memory with heterogeneous interaction for video object segmentation."""
from .tensor import Rng, Tensor, no_grad
from .pipeline import HMHINet, RunConfig, process_video

__all__ = ["HMHINet", "Rng", "RunConfig", "Tensor", "no_grad", "process_video"]
