from .base import (
    SolverLog,
    SolverOptions,
    UnmixingResult,
    fcls_core,
    nnls_core,
    per_pixel_rms,
    project_simplex,
    reconstruct,
)
from .elmm import elmm_unmix, grid_laplacian
from .fcls import fcls
from .mesma import mesma
from .plmm import plmm_unmix
from .sparse import kkt_residual_l1, sparse_su_l0, sparse_su_l1

__all__ = [
    "SolverLog",
    "SolverOptions",
    "UnmixingResult",
    "fcls",
    "fcls_core",
    "nnls_core",
    "per_pixel_rms",
    "project_simplex",
    "reconstruct",
    "grid_laplacian",
    "elmm_unmix",
    "plmm_unmix",
    "mesma",
    "sparse_su_l0",
    "sparse_su_l1",
    "kkt_residual_l1",
]
