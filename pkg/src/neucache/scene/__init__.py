"""Procedural head proxy, UV rasterizer, reference shader and motion tracks."""
from .dataset import Dataset, DatasetError, Frame, build_split, generate_dataset, load_split
from .proxy import HeadProxy, deform_and_pose, make_head_proxy, rotation_matrix
from .raster import Intrinsics, rasterize_uv
from .shading import ShadingParams, reference_render
from .stabilize import StabilizerState, stabilize_track
from .trajectory import FrameParams, frame_track, generate_trajectory, rasterize_frame

__all__ = [
    "Dataset", "DatasetError", "Frame", "FrameParams", "HeadProxy", "Intrinsics", "ShadingParams",
    "StabilizerState", "build_split", "deform_and_pose", "frame_track", "generate_dataset",
    "generate_trajectory", "load_split", "make_head_proxy", "rasterize_frame", "rasterize_uv",
    "reference_render", "rotation_matrix", "stabilize_track",
]
