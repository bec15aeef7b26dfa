"""Tiny convolutional encoder producing the three-level feature pyramid.

Four stride-2 stages give raw maps at 1/4, 1/8 and 1/16 of the input;
each tapped map is reduced to a common channel count by a 3x3
convolution with ReLU and normalization. Level 0 is the smallest map.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InvalidArgumentError
from .layers import Conv, Norm, collect_params, collect_state
from .tensor import Tensor, activation

DOWNSCALE = 16  # input extents must divide this


@dataclass
class PyramidFeatures:
    """Per-level feature maps, smallest first (1/16, 1/8, 1/4)."""

    levels: list  # three Tensors, each [N, C, H_t, W_t]

    def __iter__(self):
        return iter(self.levels)


class Encoder:
    """Stride-2 conv/norm/relu body with per-level channel reducers."""

    def __init__(self, rng, channels):
        widths = [channels, 2 * channels, 2 * channels, 2 * channels]
        self.stages = []
        cin = 3
        for width in widths:
            self.stages.append(
                (Conv(rng, cin, width, kernel=3, stride=2, padding=1), Norm(width))
            )
            cin = width
        # taps at 1/4, 1/8, 1/16 feed 3x3 reducers down to `channels`
        self.reducers = [
            (Conv(rng, widths[i], channels, kernel=3, padding=1), Norm(channels))
            for i in (1, 2, 3)
        ]

    def encode(self, image, training=True):
        """Three-level pyramid for an [N, 3, H, W] image (H, W divisible by 16)."""
        if image.data.ndim != 4 or image.data.shape[1] != 3:
            raise InvalidArgumentError(
                f"expected [N,3,H,W] image, got shape {image.data.shape}"
            )
        h, w = image.data.shape[2:]
        if h % DOWNSCALE or w % DOWNSCALE:
            raise InvalidArgumentError(
                f"image extents ({h},{w}) must be divisible by {DOWNSCALE}"
            )
        x = image
        taps = []
        for conv, norm in self.stages:
            x = activation(norm(conv(x), training), "relu")
            taps.append(x)
        levels = []
        for (conv, norm), tap in zip(self.reducers, (taps[3], taps[2], taps[1])):
            reduced = norm(activation(conv(tap), "relu"), training)
            levels.append(reduced)
        return PyramidFeatures(levels=levels)

    def _blocks(self):
        pairs = []
        for i, (conv, norm) in enumerate(self.stages):
            pairs.append((f"backbone.stage{i}.conv", conv))
            pairs.append((f"backbone.stage{i}.norm", norm))
        for i, (conv, norm) in enumerate(self.reducers):
            pairs.append((f"backbone.reduce{i}.conv", conv))
            pairs.append((f"backbone.reduce{i}.norm", norm))
        return pairs

    def named_params(self):
        return collect_params(self._blocks())

    def named_state(self):
        return collect_state(self._blocks())


def encode(image, encoder, training=True):
    """Functional wrapper over :meth:`Encoder.encode`."""
    if not isinstance(image, Tensor):
        image = Tensor(image)
    return encoder.encode(image, training=training)
