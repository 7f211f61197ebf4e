from .cloud import (GaussianCloud, cloud_covariances, covariance, export_ply,
                    load_cloud, logit, save_cloud, sigmoid)
from .density import DensifyOptions, DensifyResult, densify, prune
from .render import (CloudGrads, RenderOutput, project, render,
                     render_backward, render_reference)
from .sh import sh_basis, sh_eval
from . import backend

__all__ = [
    "GaussianCloud", "cloud_covariances", "covariance", "export_ply",
    "load_cloud", "logit", "save_cloud", "sigmoid",
    "DensifyOptions", "DensifyResult", "densify", "prune",
    "CloudGrads", "RenderOutput", "project", "render", "render_backward",
    "render_reference", "sh_basis", "sh_eval", "backend",
]
