"""Parameter-holding building blocks shared by the encoder and context stages."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, conv2d, norm_affine, uniform_conv_init


class Conv:
    """A conv2d with owned weight/bias parameters.

    ``zero_init`` starts the weights at zero (used on multiplicative
    residual branches that would otherwise amplify activations).
    """

    def __init__(self, rng, cin, cout, kernel, stride=1, padding=0, groups=1,
                 zero_init=False):
        self.stride, self.padding, self.groups = stride, padding, groups
        shape = (cout, cin // groups, kernel, kernel)
        init = np.zeros(shape) if zero_init else uniform_conv_init(rng, shape)
        self.weight = Tensor(init, requires_grad=True)
        self.bias = Tensor(np.zeros(cout), requires_grad=True)

    def __call__(self, x):
        return conv2d(x, self.weight, self.bias, stride=self.stride,
                      padding=self.padding, groups=self.groups)

    def named_params(self, prefix):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]

    def named_state(self, prefix):
        return []


class Norm:
    """Per-channel affine normalization with running statistics."""

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        self.eps, self.momentum = eps, momentum
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)

    def __call__(self, x, training):
        return norm_affine(
            x, self.gamma, self.beta, eps=self.eps, training=training,
            running_mean=self.running_mean, running_var=self.running_var,
            momentum=self.momentum,
        )

    def named_params(self, prefix):
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def named_state(self, prefix):
        return [
            (f"{prefix}.running_mean", self.running_mean),
            (f"{prefix}.running_var", self.running_var),
        ]


def collect_params(pairs):
    """Flatten [(prefix, block), ...] into named parameter tuples."""
    out = []
    for prefix, block in pairs:
        out.extend(block.named_params(prefix))
    return out


def collect_state(pairs):
    out = []
    for prefix, block in pairs:
        out.extend(block.named_state(prefix))
    return out
