"""Scene, manifest, config and frame I/O."""
from ..gaussians import GaussianScene
from .config import (
    CameraConfig,
    ForceSpec,
    ObjectManifest,
    SimConfig,
    config_from_dict,
    load_config,
    load_manifest,
    manifest_from_dict,
)
from .frames import FRAME_PATTERN, load_frame, save_frame
from .ply import load_splat_ply, read_ply_vertices, save_points_ply, save_splat_ply

__all__ = [
    "CameraConfig",
    "FRAME_PATTERN",
    "ForceSpec",
    "GaussianScene",
    "ObjectManifest",
    "SimConfig",
    "config_from_dict",
    "load_config",
    "load_frame",
    "load_manifest",
    "load_splat_ply",
    "manifest_from_dict",
    "read_ply_vertices",
    "save_frame",
    "save_points_ply",
    "save_splat_ply",
]
