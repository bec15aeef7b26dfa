"""Soft boundary derivation from a mask probability map and its fusion
with the boundary probability map.

The derived boundary is the absolute difference between the mask map
and its local average; interleaving it class by class with the boundary
map lets a grouped 1x1 convolution fuse each class pair in isolation.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .layers import Conv
from .tensor import Tensor, activation, avg_pool_same, elementwise, _node


def spatial_gradient(mask_probs, kernel=3):
    """|M - local_mean_k(M)| per class; the kernel controls band width."""
    pooled = avg_pool_same(mask_probs, kernel)
    return elementwise(mask_probs, pooled, "abs-diff")


def sliced_concat(boundary, gradient):
    """Interleave channels: out[2c] = boundary[c], out[2c+1] = gradient[c]."""
    if boundary.data.shape != gradient.data.shape:
        raise InvalidArgumentError(
            f"sliced_concat shapes differ: {boundary.data.shape} vs "
            f"{gradient.data.shape}"
        )
    n, k, h, w = boundary.data.shape
    out = np.empty((n, 2 * k, h, w))
    out[:, 0::2] = boundary.data
    out[:, 1::2] = gradient.data

    def bwd(grad):
        return grad[:, 0::2], grad[:, 1::2]

    return _node(out, (boundary, gradient), bwd)


class FusionParams:
    """Grouped 1x1 fusion convolution: class k reads only (B_k, dM_k).

    Starts at zero so the heavily weighted boundary loss cannot shake
    the mask through the derived-boundary path before the mask settles.
    """

    def __init__(self, rng, classes):
        self.classes = classes
        self.conv = Conv(rng, 2 * classes, classes, kernel=1, groups=classes,
                         zero_init=True)

    def named_params(self):
        return self.conv.named_params("fusion.conv")

    def named_state(self):
        return []


def fuse(boundary, gradient, params):
    """Fused per-class boundary probabilities via the grouped convolution."""
    stacked = sliced_concat(boundary, gradient)
    return activation(params.conv(stacked), "sigmoid")
