"""Sparse convolution kernels with learnable element positions.

The heavy lifting lives in the compiled extension; this package re-exports
its surface under a stable name.
"""

from ._dcls import (
    KernelSpec,
    avg_speed,
    clamp_positions,
    construct_kernel,
    construct_kernel_grad,
    conv,
    dcls_conv,
    dcls_conv_grad,
    dilated_conv,
    init_positions,
    num_workers,
    repulsive_loss,
    repulsive_loss_grad,
    set_num_workers,
)

__version__ = "0.1.0"

__all__ = [
    "KernelSpec",
    "avg_speed",
    "clamp_positions",
    "construct_kernel",
    "construct_kernel_grad",
    "conv",
    "dcls_conv",
    "dcls_conv_grad",
    "dilated_conv",
    "init_positions",
    "num_workers",
    "repulsive_loss",
    "repulsive_loss_grad",
    "set_num_workers",
]
