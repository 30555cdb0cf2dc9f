"""Low-rank Winograd fine-tuning and column-sparse Winograd inference for 3D convolutions."""

from .core import Rng, load_tensor, rng_normal, save_tensor
from .layer import (CompactLayer, WinogradLayer, backward, compact, forward_dense, forward_lowrank,
                    forward_sparse, op_counts, spatial_to_winograd)
from .transform import F23, WinogradSpec, base_matrices, make_transform_set

__version__ = "0.1.0"
