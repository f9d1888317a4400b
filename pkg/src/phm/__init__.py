"""Kronecker-sum structured linear layers.

The core object is a (k, d) weight matrix assembled as a sum of n
Kronecker products, giving k*d/n + n^3 learnable weights.  The package
bundles a minimal float64 reverse-mode tensor core, a quaternion oracle,
the layer with dense and implicit (matrix-free) forward paths backed by a
compiled kernel core with a numpy fallback, toy recurrent/attention
models, reproducible experiments, and a CLI (``phm``).
"""

from .layer import (
    BlockDiffusionParams, PhmParams, build_H, build_H_blockdiffusion,
    implicit_matvec, kron_to_block_mapping, phm_forward, phm_from_quaternion,
    phm_init, phm_param_count, psi_flatten,
)
from .quaternion import (
    Quaternion, hamilton, hamilton_kron_basis, hamilton_matrix, quat_add,
    quat_scale,
)
from .rng import make_rng
from .tensor import Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "make_rng",
    "Quaternion", "quat_add", "quat_scale", "hamilton", "hamilton_matrix",
    "hamilton_kron_basis",
    "PhmParams", "BlockDiffusionParams", "phm_init", "build_H", "phm_forward",
    "implicit_matvec", "phm_param_count", "phm_from_quaternion", "psi_flatten",
    "build_H_blockdiffusion", "kron_to_block_mapping",
    "__version__",
]
