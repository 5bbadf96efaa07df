"""Semi-dense inverse-depth mapping with a dataflow accelerator performance model."""

from .geometry import CameraIntrinsics, EpipolarSegment, Pose
from .keyframe import DepthHypothesis, Flag, Keyframe, Verdict
from .depth_search import SearchParams, UpdateTrace, update_map
from .regularize import FilterParams
from .pipeline_model import FrameWorkload, PipelineConfig, SimReport, simulate_frame

__all__ = [
    "CameraIntrinsics",
    "DepthHypothesis",
    "EpipolarSegment",
    "FilterParams",
    "Flag",
    "FrameWorkload",
    "Keyframe",
    "PipelineConfig",
    "Pose",
    "SearchParams",
    "SimReport",
    "UpdateTrace",
    "Verdict",
    "simulate_frame",
    "update_map",
]
