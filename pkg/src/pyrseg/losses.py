"""Training objective: mask cross-entropy, boundary-consistency L1,
class-balanced boundary BCE, their weighted total, and the polynomial
learning-rate decay.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import IGNORE_LABEL
from .errors import InvalidArgumentError
from .tensor import Tensor, _node, elementwise, reduce_mean, reduce_sum, scale


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 1000.0
    clip_eps: float = 1e-7
    duality_reduction: str = "mean"
    beta_scope: str = "per-class-per-batch"

    def validate(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidArgumentError("loss weights must be >= 0")
        if not 0.0 < self.clip_eps < 0.5:
            raise InvalidArgumentError(
                f"clip_eps must lie in (0, 0.5), got {self.clip_eps}"
            )
        if self.duality_reduction not in ("sum", "mean"):
            raise InvalidArgumentError(
                f"unknown duality reduction {self.duality_reduction!r}"
            )
        if self.beta_scope not in ("per-class-per-batch", "global-per-batch"):
            raise InvalidArgumentError(f"unknown beta scope {self.beta_scope!r}")
        return self

    @classmethod
    def from_model_config(cls, cfg):
        return cls(
            lambda1=cfg.lambda1,
            lambda2=cfg.lambda2,
            duality_reduction=cfg.duality_reduction,
            beta_scope=cfg.beta_scope,
        ).validate()


def mask_ce_loss(mask_probs, labels, clip_eps=1e-7):
    """Mean -log p(label) over non-ignored pixels; empty selections give 0."""
    labels = np.asarray(labels)
    n, k, h, w = mask_probs.data.shape
    if labels.shape != (n, h, w):
        raise InvalidArgumentError(
            f"labels shape {labels.shape} does not match mask {(n, h, w)}"
        )
    valid = labels != IGNORE_LABEL
    bad = valid & (labels >= k)
    if bad.any():
        raise InvalidArgumentError(
            f"label value {int(labels[bad][0])} >= {k} classes"
        )
    count = int(valid.sum())
    if count == 0:
        return _node(np.asarray(0.0), (mask_probs,),
                     lambda g: (np.zeros_like(mask_probs.data),))

    idx = np.where(valid, labels, 0)[:, None]
    picked = np.take_along_axis(mask_probs.data, idx, axis=1)[:, 0]
    clipped = np.clip(picked, clip_eps, 1.0 - clip_eps)
    loss = np.asarray(-np.log(clipped[valid]).sum() / count)

    in_range = (picked > clip_eps) & (picked < 1.0 - clip_eps)

    def bwd(grad):
        sel = np.where(valid & in_range, -1.0 / clipped / count, 0.0)
        gm = np.zeros_like(mask_probs.data)
        np.put_along_axis(gm, idx, (grad * sel)[:, None], axis=1)
        return (gm,)

    return _node(loss, (mask_probs,), bwd)


def duality_loss(gradient_map, boundary_gt, reduction="mean"):
    """L1 discrepancy between the derived boundary map and boundary bits."""
    target = boundary_gt if isinstance(boundary_gt, Tensor) else Tensor(
        np.asarray(boundary_gt, dtype=np.float64)
    )
    if gradient_map.data.shape != target.data.shape:
        raise InvalidArgumentError(
            f"duality_loss shapes differ: {gradient_map.data.shape} vs "
            f"{target.data.shape}"
        )
    if reduction not in ("sum", "mean"):
        raise InvalidArgumentError(f"unknown reduction {reduction!r}")
    diff = elementwise(gradient_map, target, "abs-diff")
    return reduce_sum(diff) if reduction == "sum" else reduce_mean(diff)


def balanced_bce_loss(fused_probs, boundary_gt, beta_scope="per-class-per-batch",
                      clip_eps=1e-7):
    """Class-balanced BCE, beta = non-edge fraction, normalized by pixel count."""
    y = np.asarray(boundary_gt, dtype=np.float64)
    if fused_probs.data.shape != y.shape:
        raise InvalidArgumentError(
            f"balanced_bce_loss shapes differ: {fused_probs.data.shape} vs {y.shape}"
        )
    if not np.isin(y, (0.0, 1.0)).all():
        raise InvalidArgumentError("boundary ground truth must be binary")
    if beta_scope not in ("per-class-per-batch", "global-per-batch"):
        raise InvalidArgumentError(f"unknown beta scope {beta_scope!r}")

    n, k, h, w = y.shape
    pixels = n * h * w
    if beta_scope == "per-class-per-batch":
        beta = 1.0 - y.mean(axis=(0, 2, 3))
    else:
        beta = np.full(k, 1.0 - y.mean())
    beta = np.clip(beta, clip_eps, 1.0 - clip_eps)[None, :, None, None]

    raw = fused_probs.data
    clipped = np.clip(raw, clip_eps, 1.0 - clip_eps)
    terms = beta * y * np.log(clipped) + (1.0 - beta) * (1.0 - y) * np.log(
        1.0 - clipped
    )
    loss = np.asarray(-terms.sum() / pixels)

    in_range = (raw > clip_eps) & (raw < 1.0 - clip_eps)

    def bwd(grad):
        d = beta * y / clipped - (1.0 - beta) * (1.0 - y) / (1.0 - clipped)
        return (np.where(in_range, -d / pixels, 0.0) * grad,)

    return _node(loss, (fused_probs,), bwd)


def total_loss(mask_probs, gradient_map, fused_probs, labels, boundary_gt, cfg):
    """Weighted sum of the three terms plus a float breakdown for logging."""
    cfg.validate()
    mask_term = mask_ce_loss(mask_probs, labels, clip_eps=cfg.clip_eps)
    duality_term = duality_loss(gradient_map, boundary_gt,
                                reduction=cfg.duality_reduction)
    boundary_term = balanced_bce_loss(fused_probs, boundary_gt,
                                      beta_scope=cfg.beta_scope,
                                      clip_eps=cfg.clip_eps)
    total = elementwise(
        elementwise(mask_term, scale(duality_term, cfg.lambda1), "add"),
        scale(boundary_term, cfg.lambda2),
        "add",
    )
    breakdown = {
        "mask_ce": mask_term.item(),
        "duality": duality_term.item(),
        "balanced_bce": boundary_term.item(),
    }
    return total, breakdown


def poly_lr(iteration, max_iter, base=0.001, power=0.9):
    """base * (1 - iteration/max_iter) ** power."""
    if max_iter <= 0:
        raise InvalidArgumentError(f"max_iter must be positive, got {max_iter}")
    if iteration < 0 or iteration > max_iter:
        raise InvalidArgumentError(
            f"iteration {iteration} outside [0, {max_iter}]"
        )
    return base * (1.0 - iteration / max_iter) ** power
