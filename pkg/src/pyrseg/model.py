"""Full network: encoder pyramid, iterative context schedule, task heads,
and the boundary fusion stage, plus checkpoint (de)serialization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backbone import Encoder
from .config import ModelConfig
from .errors import ValidationError
from .fusion import FusionParams, fuse, spatial_gradient
from .layers import Conv
from .pcm import PcmParams, run_schedule
from .tensor import Tensor, activation, bilinear_upsample, load_tensor, save_tensor


@dataclass
class ModelOutputs:
    mask_probs: Tensor            # M, softmax over classes, input resolution
    boundary_probs: Tensor        # B, sigmoid per class, or None when skipped
    mask_gradient: Tensor         # derived boundary of M, or None when skipped
    fused_probs: Tensor           # Y, or None when skipped
    seg_state: object
    bnd_state: object


class PyramidContextNet:
    """Joint segmentation + boundary network at configurable desk scale."""

    def __init__(self, config: ModelConfig, rng=None):
        config.validate()
        self.config = config
        rng = np.random.default_rng(config.seed) if rng is None else rng
        c, k = config.channels, config.classes
        self.encoder = Encoder(rng, c)
        self.pcm = PcmParams(rng, c, config.steps, config.grids)
        self.seg_head = Conv(rng, c, k, kernel=1)
        self.bnd_head = Conv(rng, c, k, kernel=1)
        self.fusion = FusionParams(rng, k)

    def forward(self, images, training=True, with_fusion=True, with_gradient=True):
        """Run the network on [N,3,H,W] pixels (array or Tensor).

        ``with_fusion`` controls the boundary head and fused output;
        ``with_gradient`` controls the derived-boundary map (forced on
        when fusing, since the fusion stage consumes it).
        """
        if not isinstance(images, Tensor):
            images = Tensor(images)
        h, w = images.data.shape[2:]
        pyramid = self.encoder.encode(images, training=training)
        seg_state, bnd_state = run_schedule(
            pyramid, self.pcm, self.config.steps,
            parity=self.config.step_parity, training=training,
        )
        seg_logits = bilinear_upsample(self.seg_head(seg_state.head_features()), h, w)
        mask_probs = activation(seg_logits, "softmax-channels")

        boundary_probs = mask_gradient = fused_probs = None
        if with_fusion or with_gradient:
            mask_gradient = spatial_gradient(
                mask_probs, self.config.spatial_gradient_k
            )
        if with_fusion:
            bnd_logits = bilinear_upsample(
                self.bnd_head(bnd_state.head_features()), h, w
            )
            boundary_probs = activation(bnd_logits, "sigmoid")
            fused_probs = fuse(boundary_probs, mask_gradient, self.fusion)
        return ModelOutputs(mask_probs, boundary_probs, mask_gradient,
                            fused_probs, seg_state, bnd_state)

    # -- parameter bookkeeping ------------------------------------------------

    def named_params(self):
        out = list(self.encoder.named_params())
        out.extend(self.pcm.named_params())
        out.extend(self.seg_head.named_params("seg_head"))
        out.extend(self.bnd_head.named_params("bnd_head"))
        out.extend(self.fusion.named_params())
        return out

    def named_state(self):
        """Trainable parameters plus running statistics, as named arrays."""
        out = [(name, p.data) for name, p in self.named_params()]
        out.extend(self.encoder.named_state())
        out.extend(self.pcm.named_state())
        out.extend(self.fusion.named_state())
        return out

    def parameters(self):
        return [p for _, p in self.named_params()]

    # -- checkpointing ---------------------------------------------------------

    def save_checkpoint(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        index = {"config": self.config.to_dict(), "tensors": {}}
        for i, (name, arr) in enumerate(self.named_state()):
            fname = f"t{i:04d}.tnsr"
            save_tensor(directory / fname, arr)
            index["tensors"][name] = fname
        with open(directory / "index.json", "w") as fh:
            json.dump(index, fh, indent=1, sort_keys=True)
            fh.write("\n")

    def load_state(self, directory):
        directory = Path(directory)
        with open(directory / "index.json") as fh:
            index = json.load(fh)
        files = index["tensors"]
        for name, arr in self.named_state():
            if name not in files:
                raise ValidationError(f"checkpoint missing tensor '{name}'")
            loaded = load_tensor(directory / files[name])
            if loaded.shape != arr.shape:
                raise ValidationError(
                    f"checkpoint tensor '{name}' has shape {loaded.shape}, "
                    f"model expects {arr.shape}"
                )
            arr[...] = loaded

    @classmethod
    def load_checkpoint(cls, directory):
        directory = Path(directory)
        index_path = directory / "index.json"
        if not index_path.exists():
            raise FileNotFoundError(f"no checkpoint index at {index_path}")
        with open(index_path) as fh:
            index = json.load(fh)
        config = ModelConfig.from_dict(index["config"])
        model = cls(config)
        model.load_state(directory)
        return model
