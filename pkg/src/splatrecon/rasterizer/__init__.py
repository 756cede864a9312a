"""Software renderers for Gaussian splats and triangle meshes."""

from .gaussians import RenderOutput, SoftRenderConfig, render_gaussians
from .mesh import MeshLossGrad, MeshRender, MeshTopology, render_mesh, render_mesh_with_grads

__all__ = [
    "MeshLossGrad",
    "MeshRender",
    "MeshTopology",
    "RenderOutput",
    "SoftRenderConfig",
    "render_gaussians",
    "render_mesh",
    "render_mesh_with_grads",
]
