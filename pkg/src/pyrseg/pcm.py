"""Iterative cross-task context refinement over the feature pyramid.

Two task streams (segmentation, boundary) share the encoder pyramid at
step 0 and then take turns: the stream owning step s refines its own
step s-2 maps with per-channel context vectors pooled from the other
stream's step s-1 maps. Context for one source map is its global mean
plus one patch-pooled, grid-collapsed convolution per configured grid
size; refinement is multiplicative with a residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import InvalidArgumentError
from .layers import Conv, Norm, collect_params, collect_state
from .tensor import activation, adaptive_avg_pool, elementwise

SEGMENTATION = "segmentation"
BOUNDARY = "boundary"
NUM_LEVELS = 3


def patch_context(feature, grid, conv):
    """Pool to grid x grid patch means and collapse to one [N,C,1,1] vector."""
    if grid < 1:
        raise InvalidArgumentError(f"grid must be >= 1, got {grid}")
    return conv(adaptive_avg_pool(feature, grid))


def context_vector(source, convs_by_grid):
    """Global mean of the source plus every patch-context term."""
    ctx = adaptive_avg_pool(source, 1)
    for grid, conv in convs_by_grid:
        ctx = elementwise(ctx, patch_context(source, grid, conv), "add")
    return ctx


def refine_level(feature, contexts, level):
    """feature + sum over contexts of feature * context (per-channel factors)."""
    if len(contexts) != level + 1:
        raise InvalidArgumentError(
            f"level {level} refinement needs {level + 1} contexts, got {len(contexts)}"
        )
    out = feature
    for ctx in contexts:
        out = elementwise(out, elementwise(feature, ctx, "mul"), "add")
    return out


class PcmParams:
    """Per-step parameters: grid-collapse convolutions and the level-0 stage.

    Context convolutions are keyed by (step, target level, source level,
    grid); nothing is shared across steps.
    """

    def __init__(self, rng, channels, steps, grids=(1, 3, 5, 7)):
        if steps < 1:
            raise InvalidArgumentError(f"steps must be >= 1, got {steps}")
        self.steps = steps
        self.grids = tuple(grids)
        self.context = {}
        self.level0 = {}
        for s in range(1, steps + 1):
            for t in range(1, NUM_LEVELS):
                for t_src in range(t + 1):
                    for grid in self.grids:
                        # zero start: refinement opens near-identity, so the
                        # stacked multiplicative steps cannot saturate the heads
                        self.context[(s, t, t_src, grid)] = Conv(
                            rng, channels, channels, kernel=grid, zero_init=True
                        )
            self.level0[s] = (
                Conv(rng, channels, channels, kernel=3, padding=1),
                Norm(channels),
            )

    def context_convs(self, step, level, source_level):
        return [(g, self.context[(step, level, source_level, g)]) for g in self.grids]

    def _blocks(self):
        pairs = []
        for key in sorted(self.context):
            s, t, t_src, g = key
            pairs.append((f"pcm.step{s}.lvl{t}.src{t_src}.g{g}", self.context[key]))
        for s in sorted(self.level0):
            conv, norm = self.level0[s]
            pairs.append((f"pcm.step{s}.lvl0.conv", conv))
            pairs.append((f"pcm.step{s}.lvl0.norm", norm))
        return pairs

    def named_params(self):
        return collect_params(self._blocks())

    def named_state(self):
        return collect_state(self._blocks())


@dataclass
class StreamState:
    """Feature maps of one task, indexed by completed step then level."""

    task: str
    step_maps: dict = field(default_factory=dict)  # step -> [level tensors]
    owned_steps: list = field(default_factory=list)

    def last_owned(self):
        return self.owned_steps[-1] if self.owned_steps else 0

    def head_features(self, level=NUM_LEVELS - 1):
        return self.step_maps[self.last_owned()][level]


def _owner_of(step, parity):
    odd_task = BOUNDARY if parity == "boundary-odd" else SEGMENTATION
    even_task = SEGMENTATION if parity == "boundary-odd" else BOUNDARY
    return odd_task if step % 2 == 1 else even_task


def run_schedule(pyramid, params, steps, parity="boundary-odd", training=True):
    """Alternate task ownership over `steps` refinement rounds.

    Returns the (segmentation, boundary) stream states; step 0 of both
    is the shared pyramid, and a head reads its stream's last owned step.
    """
    if steps < 1:
        raise InvalidArgumentError(f"steps must be >= 1, got {steps}")
    if steps > params.steps:
        raise InvalidArgumentError(
            f"schedule of {steps} steps exceeds the {params.steps} parameterized"
        )
    shared = list(pyramid)
    if len(shared) != NUM_LEVELS:
        raise InvalidArgumentError(f"expected {NUM_LEVELS} pyramid levels")
    streams = {
        SEGMENTATION: StreamState(SEGMENTATION, {0: shared}),
        BOUNDARY: StreamState(BOUNDARY, {0: shared}),
    }
    for s in range(1, steps + 1):
        own = streams[_owner_of(s, parity)]
        other = streams[BOUNDARY if own.task == SEGMENTATION else SEGMENTATION]
        prev_own = own.step_maps[0] if s <= 2 else own.step_maps[s - 2]
        source = other.step_maps[0] if s == 1 else other.step_maps[s - 1]

        conv0, norm0 = params.level0[s]
        new_maps = [norm0(activation(conv0(prev_own[0]), "relu"), training)]
        for t in range(1, NUM_LEVELS):
            contexts = [
                context_vector(source[t_src], params.context_convs(s, t, t_src))
                for t_src in range(t + 1)
            ]
            new_maps.append(refine_level(prev_own[t], contexts, t))
        own.step_maps[s] = new_maps
        own.owned_steps.append(s)
    return streams[SEGMENTATION], streams[BOUNDARY]
