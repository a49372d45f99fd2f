"""Two-stage training loop.

Stage 1 trains the matcher and prediction head with a flat aggregator at a
higher learning rate; stage 2 swaps in the U-shaped aggregator plus semantic
pyramid, seeds every layer whose name and shape survive from stage 1 with the
stage-1 weights, and fine-tunes everything at a lower rate with tighter
per-layer gradient clipping.

Batches are single reference patches: pick a sequence, a reference frame with
ground truth, a neighbor count from ``neighbor_counts`` uniformly, the
highest-overlap neighbors, a random patch window, then sweep a patch-sized
volume. Supervision is the ground-truth disparity quantized to the grid.

The optimizer is a named-parameter Adam whose moments live in the checkpoint,
so resumes continue the trace exactly; a zero learning rate skips the update
entirely (weights stay bit-identical), which pins down that nothing else in
the loop mutates state.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import SamplingError, TrainingDivergenceError
from .geometry import DisparityMap
from .network import DisparityNet, masked_loss, save_checkpoint
from .sweep import (
    DisparityGrid,
    PlaneSweepVolume,
    build_volume,
    estimate_max_disparity,
    make_disparity_grid,
    select_neighbors,
)

logger = logging.getLogger(__name__)

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
PATCH_RETRIES = 20


@dataclass
class TrainConfig:
    """Optimization hyperparameters for one stage."""

    stage: int = 1
    learning_rate: float = 1e-5
    iterations: int = 320_000
    grad_clip: float = 1.0
    patch: int = 64
    neighbor_counts: tuple = (1, 2, 3, 4)
    quantile: float = 1.0

    def __post_init__(self):
        self.neighbor_counts = tuple(int(n) for n in self.neighbor_counts)
        if self.stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {self.stage}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.grad_clip <= 0:
            raise ValueError(f"grad_clip must be > 0, got {self.grad_clip}")
        if self.patch < 16:
            raise ValueError(f"patch must be >= 16, got {self.patch}")
        if not self.neighbor_counts or min(self.neighbor_counts) < 1:
            raise ValueError("neighbor_counts must be a non-empty tuple of positive ints")
        if not (0.0 < self.quantile <= 1.0):
            raise ValueError(f"quantile must be in (0, 1], got {self.quantile}")

    @classmethod
    def for_stage(cls, stage: int, **overrides) -> "TrainConfig":
        """Published defaults: stage 1 at (1e-5, clip 1.0), stage 2 at (1e-6, clip 0.1)."""
        base = dict(stage=1, learning_rate=1e-5, grad_clip=1.0)
        if stage == 2:
            base = dict(stage=2, learning_rate=1e-6, grad_clip=0.1)
        base.update(overrides)
        return cls(**base)


@dataclass
class LabeledSample:
    """One training example: a reference patch, its swept volume, and labels."""

    ref_image: np.ndarray  # (h, w, 3) colors in [0, 1]
    volume: PlaneSweepVolume
    labels: np.ndarray  # (h, w) int64 grid indices
    valid: np.ndarray  # (h, w) bool
    grid: DisparityGrid
    ref_id: str = ""
    origin: tuple = (0, 0)


def quantize_gt(gt: DisparityMap, grid: DisparityGrid):
    """Round ground-truth disparity to the nearest grid level.

    Returns:
        ``(labels, valid)``: int64 indices clamped to ``[0, levels - 1]`` and
        the (copied) validity mask. Invalid pixels keep label 0 but stay
        masked out.
    """
    scaled = gt.values.astype(np.float64) / grid.delta
    labels = np.rint(scaled).astype(np.int64)
    np.clip(labels, 0, grid.levels - 1, out=labels)
    labels[~gt.valid] = 0
    return labels, gt.valid.copy()


def sample_patch(sequence, levels: int, config: TrainConfig, rng) -> LabeledSample:
    """Draw one labeled patch from a sequence.

    Raises:
        SamplingError: If no frame has a big enough image with ground truth,
            or no patch with a labeled pixel is found within the retry budget.
    """
    usable = [
        v
        for v in sequence.views
        if v.id in sequence.gt and v.height >= config.patch and v.width >= config.patch
    ]
    if not usable:
        raise SamplingError(
            f"no frame with ground truth and size >= {config.patch} to sample from"
        )
    ref = usable[int(rng.integers(len(usable)))]
    count = int(config.neighbor_counts[int(rng.integers(len(config.neighbor_counts)))])
    neighbors = select_neighbors(sequence.views, ref.id, count, sequence.points)
    max_disp = estimate_max_disparity(sequence.points, ref, config.quantile)
    grid = make_disparity_grid(max_disp, levels)
    gt = sequence.gt[ref.id]
    labels_full, valid_full = quantize_gt(gt, grid)

    patch = config.patch
    for _ in range(PATCH_RETRIES):
        y0 = int(rng.integers(ref.height - patch + 1))
        x0 = int(rng.integers(ref.width - patch + 1))
        valid = valid_full[y0 : y0 + patch, x0 : x0 + patch]
        if not valid.any():
            continue
        volume = build_volume(ref, neighbors, grid, window=(y0, x0, patch, patch))
        return LabeledSample(
            ref_image=ref.image[y0 : y0 + patch, x0 : x0 + patch],
            volume=volume,
            labels=labels_full[y0 : y0 + patch, x0 : x0 + patch].copy(),
            valid=valid.copy(),
            grid=grid,
            ref_id=ref.id,
            origin=(y0, x0),
        )
    raise SamplingError(
        f"no patch with a labeled pixel in {PATCH_RETRIES} draws (frame {ref.id!r})"
    )


def make_sampler(dataset, levels: int, config: TrainConfig, weights=None):
    """Normalize a dataset argument into a ``sampler(rng) -> LabeledSample``.

    Accepts a single fixed sample (overfit tests), a list of sequences
    (optionally weighted), or an already-built callable.
    """
    if callable(dataset):
        return dataset
    if isinstance(dataset, LabeledSample):
        return lambda rng: dataset
    sequences = list(dataset)
    if not sequences:
        raise SamplingError("empty training dataset")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(sequences),) or weights.min() < 0 or weights.sum() <= 0:
            raise ValueError("weights must be non-negative with a positive sum")
        probabilities = weights / weights.sum()
    else:
        probabilities = None

    def sampler(rng):
        if probabilities is None:
            seq = sequences[int(rng.integers(len(sequences)))]
        else:
            seq = sequences[int(rng.choice(len(sequences), p=probabilities))]
        return sample_patch(seq, levels, config, rng)

    return sampler


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moments keyed by parameter name (numpy, checkpoint-friendly)."""

    first: dict = field(default_factory=dict)
    second: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_for(cls, params: dict) -> "AdamState":
        return cls(
            first={k: np.zeros(tuple(p.shape), dtype=np.float32) for k, p in params.items()},
            second={k: np.zeros(tuple(p.shape), dtype=np.float32) for k, p in params.items()},
            step=0,
        )


def clip_gradients(grads: dict, bound: float) -> dict:
    """Scale each named gradient tensor to L2 norm at most ``bound``.

    Direction is preserved exactly (a single positive scalar per tensor).
    """
    if bound <= 0:
        raise ValueError(f"bound must be > 0, got {bound}")
    clipped = {}
    for name, grad in grads.items():
        arr = np.asarray(grad, dtype=np.float64)
        norm = float(np.sqrt(np.sum(arr * arr)))
        if norm > bound:
            clipped[name] = (np.asarray(grad) * (bound / norm)).astype(np.asarray(grad).dtype)
        else:
            clipped[name] = np.asarray(grad).copy()
    return clipped


def adam_update(params: dict, grads: dict, state: AdamState, learning_rate: float) -> None:
    """One in-place Adam step over named parameters."""
    beta1, beta2 = ADAM_BETAS
    state.step += 1
    t = state.step
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t
    with torch.no_grad():
        for name, param in params.items():
            g = grads[name].astype(np.float32, copy=False)
            m = state.first[name]
            v = state.second[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            step_arr = (learning_rate / correction1) * m / (
                np.sqrt(v / correction2) + ADAM_EPS
            )
            param.sub_(torch.from_numpy(step_arr.astype(np.float32)))


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def train_stage(
    dataset,
    model: DisparityNet,
    config: TrainConfig,
    seed: int = 0,
    weights=None,
    start_step: int = 0,
    adam_state: AdamState | None = None,
    trace_sink=None,
    checkpoint_every: int | None = None,
    checkpoint_path=None,
):
    """Optimize ``model`` in place.

    Args:
        dataset: Sequences, one fixed ``LabeledSample``, or a sampler callable.
        model: Network whose stage should match ``config.stage``.
        seed: Drives sampling; the loop is deterministic in (dataset, seed).
        start_step: First step index (for resumes; the trace continues from here).
        adam_state: Moments carried over on resume.
        trace_sink: Optional callable receiving ``(step, loss)`` per step.
        checkpoint_every / checkpoint_path: Periodic checkpoint writing.

    Returns:
        ``(trace, adam_state)`` where trace is a list of ``(step, loss)``.

    Raises:
        TrainingDivergenceError: On a non-finite loss or gradient, naming the
            step and the first offending tensor.
    """
    if model.stage != config.stage:
        raise ValueError(f"model is stage {model.stage} but config says {config.stage}")
    if checkpoint_every is not None and checkpoint_path is None:
        raise ValueError("checkpoint_every given without checkpoint_path")
    sampler = make_sampler(dataset, model.config.levels, config, weights=weights)
    rng = np.random.default_rng(seed)
    params = model.trainable_parameters()
    state = adam_state if adam_state is not None else AdamState.zeros_for(params)

    trace = []
    for step in range(start_step, config.iterations):
        sample = sampler(rng)
        loss = masked_loss(model, sample)
        loss_value = float(loss.detach())
        if not math.isfinite(loss_value):
            raise TrainingDivergenceError(step, "loss is non-finite")

        model.zero_grad(set_to_none=True)
        loss.backward()
        grads = {}
        for name, param in params.items():
            if param.grad is None:
                grads[name] = np.zeros(tuple(param.shape), dtype=np.float32)
                continue
            g = param.grad.detach().numpy()
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError(step, f"non-finite gradient in {name}")
            grads[name] = g
        grads = clip_gradients(grads, config.grad_clip)
        if config.learning_rate != 0.0:
            adam_update(params, grads, state, config.learning_rate)

        trace.append((step, loss_value))
        if trace_sink is not None:
            trace_sink(step, loss_value)
        if step % 50 == 0:
            logger.info("step %d: loss %.5f", step, loss_value)
        if (
            checkpoint_every is not None
            and (step + 1) % checkpoint_every == 0
        ):
            save_checkpoint(checkpoint_path, model, step=step + 1, adam_state=state)
    return trace, state


def transfer_weights(source_params: dict, target: DisparityNet):
    """Copy every source tensor whose name and shape match into ``target``.

    Everything else keeps the target's fresh initialization.

    Returns:
        ``(transferred, fresh)``: sorted name lists covering the full target
        state dict.
    """
    state = target.state_dict()
    transferred, fresh = [], []
    new_state = {}
    for name, tensor in state.items():
        source = source_params.get(name)
        if source is not None and tuple(source.shape) == tuple(tensor.shape):
            new_state[name] = torch.from_numpy(np.asarray(source).copy())
            transferred.append(name)
        else:
            new_state[name] = tensor
            fresh.append(name)
    target.load_state_dict(new_state)
    return sorted(transferred), sorted(fresh)
