"""End-to-end training loop: flip augmentation, polynomial LR schedule,
momentum SGD, per-iteration loss logging, and per-epoch checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .losses import (
    LossConfig,
    balanced_bce_loss,
    duality_loss,
    mask_ce_loss,
    poly_lr,
)
from .model import PyramidContextNet
from .tensor import SGD, backward, elementwise, scale

LOSS_CSV_HEADER = "iter,lr,L_M,L_D,L_E,total"


@dataclass
class TrainResult:
    model: PyramidContextNet
    rows: list                 # one dict per iteration
    checkpoint_dir: Path       # final checkpoint, or None when out_dir unset
    loss_csv: Path             # or None when out_dir unset


def _check_samples(config, samples):
    if not samples:
        raise ValidationError("training requires at least one sample")
    for s in samples:
        if s.boundaries.shape[0] != config.classes:
            raise ValidationError(
                f"sample {s.id} has {s.boundaries.shape[0]} boundary classes, "
                f"config field 'classes' says {config.classes}"
            )


def _batch_arrays(samples, indices, flips):
    images, labels, bits = [], [], []
    for idx, flip in zip(indices, flips):
        s = samples[idx]
        if flip:
            images.append(s.image[:, :, ::-1])
            labels.append(s.mask[:, ::-1])
            bits.append(s.boundaries[:, :, ::-1])
        else:
            images.append(s.image)
            labels.append(s.mask)
            bits.append(s.boundaries)
    return (
        np.ascontiguousarray(np.stack(images)),
        np.ascontiguousarray(np.stack(labels)),
        np.ascontiguousarray(np.stack(bits)).astype(np.float64),
    )


def format_loss_rows(rows):
    lines = [LOSS_CSV_HEADER]
    for r in rows:
        lines.append(
            f"{r['iter']},{r['lr']!r},{r['L_M']!r},{r['L_D']!r},"
            f"{r['L_E']!r},{r['total']!r}"
        )
    return "\n".join(lines) + "\n"


def train_model(config, samples, out_dir=None, seg_only=False, progress=None):
    """Train on the given samples; deterministic for a fixed config/seed.

    ``seg_only`` drops the boundary head, fusion stage and their loss
    term from the run; a zero boundary-loss weight implies the same
    detachment, so the two paths produce identical loss curves.
    """
    config.validate()
    _check_samples(config, samples)
    loss_cfg = LossConfig.from_model_config(config)

    rng = np.random.default_rng(config.seed)
    model = PyramidContextNet(config, rng=rng)
    opt = SGD(model.parameters(), momentum=config.momentum,
              weight_decay=config.weight_decay)

    n = len(samples)
    iters_per_epoch = math.ceil(n / config.batch_size)
    total_iters = config.epochs * iters_per_epoch
    # the last recorded rate reaches the schedule endpoint (exactly 0)
    lr_span = max(1, total_iters - 1)

    use_fusion = (not seg_only) and config.lambda2 > 0.0
    use_gradient = use_fusion or config.lambda1 > 0.0

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        config.to_json(out_dir / "config.json")

    rows = []
    iteration = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            indices = order[start : start + config.batch_size]
            flips = rng.random(len(indices)) < 0.5
            images, labels, bits = _batch_arrays(samples, indices, flips)

            lr = poly_lr(iteration, lr_span, base=config.base_lr,
                         power=config.power)
            out = model.forward(images, training=True,
                                with_fusion=use_fusion,
                                with_gradient=use_gradient)

            mask_term = mask_ce_loss(out.mask_probs, labels,
                                     clip_eps=loss_cfg.clip_eps)
            total = mask_term
            duality_value = 0.0
            if use_gradient:
                duality_term = duality_loss(out.mask_gradient, bits,
                                            reduction=loss_cfg.duality_reduction)
                duality_value = duality_term.item()
                if config.lambda1 > 0.0:
                    total = elementwise(total, scale(duality_term, config.lambda1),
                                        "add")
            boundary_value = 0.0
            if use_fusion:
                boundary_term = balanced_bce_loss(out.fused_probs, bits,
                                                  beta_scope=loss_cfg.beta_scope,
                                                  clip_eps=loss_cfg.clip_eps)
                boundary_value = boundary_term.item()
                total = elementwise(total, scale(boundary_term, config.lambda2),
                                    "add")

            backward(total)
            opt.step(lr)
            opt.zero_grad()

            rows.append({
                "iter": iteration,
                "lr": lr,
                "L_M": mask_term.item(),
                "L_D": duality_value,
                "L_E": boundary_value,
                "total": total.item(),
            })
            iteration += 1
        if progress is not None:
            progress(epoch, rows[-1])
        if out_dir is not None:
            model.save_checkpoint(out_dir / "checkpoints" / f"epoch_{epoch:04d}")

    loss_csv = checkpoint_dir = None
    if out_dir is not None:
        loss_csv = out_dir / "loss.csv"
        loss_csv.write_text(format_loss_rows(rows))
        checkpoint_dir = out_dir / "checkpoint"
        model.save_checkpoint(checkpoint_dir)
        from .report import render_loss_curves

        render_loss_curves(out_dir / "loss_curve.png", rows)
    return TrainResult(model=model, rows=rows, checkpoint_dir=checkpoint_dir,
                       loss_csv=loss_csv)
