"""Decompose a convolutional generator layer into ordered painting actions."""

from .actionlog import ActionLog, StrokeAction, replay, tensor_checksum
from .channel_ops import CoverageStats, apply_mask, channel_flush, coverage
from .estimators import ChannelFlush, ChannelStroke, CPIAPainter
from .netgraph import NetworkSpec, evaluate_layer, forward, forward_from, forward_to, load_network
from .planner import (PaintPlan, PlanPolicy, RoiSet, composite, load_rois, make_plan,
                      opacity_map, paint, region_to_layer)
from .stroke import StopCriterion, StrokeParams, run_strokes
from .tensor import TensorArchive, hadamard, import_npy, load_tensor, save_tensor
from .toynet import make_toy_network, toy_network, toy_scene, write_toy_network

__version__ = "0.1.0"

__all__ = [
    "ActionLog", "CPIAPainter", "ChannelFlush", "ChannelStroke", "CoverageStats", "NetworkSpec",
    "PaintPlan", "PlanPolicy", "RoiSet", "StopCriterion", "StrokeAction", "StrokeParams",
    "TensorArchive", "apply_mask", "channel_flush", "composite", "coverage", "evaluate_layer",
    "forward", "forward_from", "forward_to", "hadamard", "import_npy", "load_network",
    "load_rois", "load_tensor", "make_plan", "opacity_map", "paint", "region_to_layer",
    "make_toy_network", "replay", "run_strokes", "save_tensor", "tensor_checksum", "toy_network",
    "toy_scene", "write_toy_network",
]
