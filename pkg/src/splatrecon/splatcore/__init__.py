"""Data model and I/O shared by every stage."""

from .io import (
    load_gaussians_ply,
    load_mesh,
    load_png,
    load_tensor,
    save_gaussians_ply,
    save_mesh,
    save_png,
    save_tensor,
)
from .types import (
    ATTRIBUTES_PER_GAUSSIAN,
    FeatureMap,
    FormatError,
    Gaussian,
    GaussianSet,
    OrthoCamera,
    SplatError,
    TriMesh,
    ValidationError,
    covariance,
    quaternion_to_rotmat,
    quaternions_to_rotmats,
    rotmat_to_quaternion,
)

__all__ = [
    "ATTRIBUTES_PER_GAUSSIAN",
    "FeatureMap",
    "FormatError",
    "Gaussian",
    "GaussianSet",
    "OrthoCamera",
    "SplatError",
    "TriMesh",
    "ValidationError",
    "covariance",
    "load_gaussians_ply",
    "load_mesh",
    "load_png",
    "load_tensor",
    "quaternion_to_rotmat",
    "quaternions_to_rotmats",
    "rotmat_to_quaternion",
    "save_gaussians_ply",
    "save_mesh",
    "save_png",
    "save_tensor",
]
