"""Inference on trained models: single images or whole dataset manifests,
with optional horizontal-flip averaging of the probability maps.
"""

from __future__ import annotations

import numpy as np

from .fusion import spatial_gradient
from .tensor import Tensor


def _forward_probs(model, image_batch):
    out = model.forward(image_batch, training=False)
    return out.mask_probs.data, out.fused_probs.data, out.boundary_probs.data


def predict(model, image, flip=False):
    """Per-class probability maps and the argmax mask for one [3,H,W] image.

    With ``flip``, predictions of the image and its mirror are averaged.
    """
    batch = np.asarray(image, dtype=np.float64)[None]
    mask_probs, fused, boundary = _forward_probs(model, batch)
    if flip:
        m2, f2, b2 = _forward_probs(model, batch[:, :, :, ::-1].copy())
        mask_probs = 0.5 * (mask_probs + m2[:, :, :, ::-1])
        fused = 0.5 * (fused + f2[:, :, :, ::-1])
        boundary = 0.5 * (boundary + b2[:, :, :, ::-1])
    gradient = spatial_gradient(
        Tensor(mask_probs), model.config.spatial_gradient_k
    ).data
    return {
        "mask_probs": mask_probs[0],
        "pred_mask": np.argmax(mask_probs[0], axis=0),
        "boundary_probs": fused[0],
        "raw_boundary_probs": boundary[0],
        "gradient": gradient[0],
    }


def predict_dataset(model, samples, flip=False):
    """Ordered per-sample predictions for a loaded dataset."""
    return [(s.id, predict(model, s.image, flip=flip)) for s in samples]
