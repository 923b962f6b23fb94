"""Differentiable CPU volume rendering with transmittance-gradient normals.

Densities live on voxel grids in pre-activation form and get two
activations: exp for the rendering weights and softplus for the smooth
field whose accumulated spatial gradient defines orientation.  A small
reverse-mode tape differentiates the whole pipeline so grids, materials
and an SH environment can be fit to posed images.
"""

from .errors import DataError, NumericalError
from .fields import SceneFields, init_fields, load_checkpoint, save_checkpoint
from .grids import (
    DEFAULT_B_EMPTY,
    AnalyticField,
    DualDensity,
    VoxelGrid,
    analytic_query,
    dual_activate,
    grid_query,
    interp_coeffs,
    sigmoid,
    softplus,
)
from .metrics import MetricReport, mae_degrees, psnr
from .normals import (
    EPS_GRAD,
    EPS_NORM,
    composite_normal_map,
    density_gradient_normal,
    predicted_normal,
    transmittance_gradient_normals,
)
from .rendering import (
    Camera,
    RenderConfig,
    RenderOutput,
    composite,
    generate_rays,
    look_at,
    pixel_grid,
    probe_track,
    ray_box_intersect,
    render_image,
    render_rays,
    sample_stratified,
    tone_map,
)
from .scenes import (
    SCENE_KINDS,
    SyntheticScene,
    make_scene,
    oracle_fields,
    read_dataset,
    render_ground_truth,
    write_dataset,
)
from .shading import (
    EnvMapSH,
    env_radiance,
    equirect_dirs,
    fit_sh,
    reflect,
    sh_basis,
    sh_basis_grad,
    sh_eval,
)
from .tape import Tape, Var, fd_check
from .training import (
    Adam,
    TrainConfig,
    color_loss,
    lambda_schedule,
    load_config,
    log_decay,
    predicted_normal_loss,
    train_loop,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "AnalyticField",
    "Camera",
    "DataError",
    "DEFAULT_B_EMPTY",
    "DualDensity",
    "EnvMapSH",
    "EPS_GRAD",
    "EPS_NORM",
    "MetricReport",
    "NumericalError",
    "RenderConfig",
    "RenderOutput",
    "SCENE_KINDS",
    "SceneFields",
    "SyntheticScene",
    "Tape",
    "TrainConfig",
    "Var",
    "VoxelGrid",
    "analytic_query",
    "color_loss",
    "composite",
    "composite_normal_map",
    "density_gradient_normal",
    "dual_activate",
    "env_radiance",
    "equirect_dirs",
    "fd_check",
    "fit_sh",
    "generate_rays",
    "grid_query",
    "init_fields",
    "interp_coeffs",
    "lambda_schedule",
    "load_checkpoint",
    "load_config",
    "log_decay",
    "look_at",
    "mae_degrees",
    "make_scene",
    "oracle_fields",
    "pixel_grid",
    "predicted_normal",
    "predicted_normal_loss",
    "probe_track",
    "psnr",
    "ray_box_intersect",
    "read_dataset",
    "reflect",
    "render_ground_truth",
    "render_image",
    "render_rays",
    "sample_stratified",
    "save_checkpoint",
    "sh_basis",
    "sh_basis_grad",
    "sh_eval",
    "sigmoid",
    "softplus",
    "tone_map",
    "train_loop",
    "write_dataset",
]
