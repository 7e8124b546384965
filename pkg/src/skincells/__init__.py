"""Sparse skinning weight fields for rigged meshes.

Builds a per-joint cell field (anisotropic sites with Huber-modulated
distances), optimizes it over uniformly sampled skeleton poses against
smoothness, location and sparsity objectives, and bakes per-vertex weights
for any resolution of the mesh.
"""

from . import io, toys
from .errors import NonFiniteLossError, SkinCellsError
from .mesh import (
    LaplacianOperator,
    Mesh,
    apply_laplacian,
    build_laplacian,
    segment_intersects_mesh,
    vertex_frames,
)
from .skeleton import (
    Skeleton,
    closest_point_on_skeleton,
    forward_kinematics,
    sample_pose,
    skinning_transforms,
)
from .field import (
    SkinCell,
    SkinCellSet,
    Site,
    cell_distance,
    huber_offset,
    initialize_cells,
    mahalanobis_distance,
    proximity_weights,
    softmax_field_eval,
    top_l,
    weight_field_eval,
)
from .skinning import BakedWeights, bake_weights, lbs
from .losses import (
    LossWeights,
    SpringSet,
    build_springs,
    loss_deltamush,
    loss_location,
    loss_sparsity,
    spring_distances,
    total_loss,
)
from .optim import AdamState, OptimizeConfig, adam_step, freeze_mask, gradient, optimize

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "BakedWeights",
    "LaplacianOperator",
    "LossWeights",
    "Mesh",
    "NonFiniteLossError",
    "OptimizeConfig",
    "SkinCell",
    "SkinCellSet",
    "SkinCellsError",
    "Skeleton",
    "Site",
    "SpringSet",
    "adam_step",
    "apply_laplacian",
    "bake_weights",
    "build_laplacian",
    "build_springs",
    "cell_distance",
    "closest_point_on_skeleton",
    "forward_kinematics",
    "freeze_mask",
    "gradient",
    "huber_offset",
    "initialize_cells",
    "io",
    "lbs",
    "loss_deltamush",
    "loss_location",
    "loss_sparsity",
    "mahalanobis_distance",
    "optimize",
    "proximity_weights",
    "sample_pose",
    "segment_intersects_mesh",
    "skinning_transforms",
    "softmax_field_eval",
    "spring_distances",
    "top_l",
    "total_loss",
    "toys",
    "vertex_frames",
    "weight_field_eval",
]
