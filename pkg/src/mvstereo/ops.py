"""Differentiable operators used by the matching network.

Execution is delegated to torch, but the contract is defined (and tested)
here: every operator has a naive-loop oracle in the test suite that pins its
semantics to 1e-6, so the backend could be swapped without changing what
these functions are defined to compute.

Conventions: feature maps are ``(B, C, H, W)`` or ``(C, H, W)`` torch tensors;
convolutions use odd kernels with same-padding; stride-2 convolutions produce
ceil(size / 2) so arbitrary (not just power-of-two) sizes flow through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .errors import EmptyOverlapError, NonFiniteError

# Self-normalizing activation constants (fixed points of the SELU derivation).
SELU_SCALE = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


@dataclass(frozen=True)
class ConvSpec:
    """Shape contract of one convolution layer."""

    in_channels: int
    out_channels: int
    kernel: int = 3
    stride: int = 1

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError(f"channel counts must be >= 1, got {self}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ValueError(f"kernel must be odd and >= 1, got {self.kernel}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")

    @property
    def padding(self) -> int:
        return self.kernel // 2


def conv2d(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor, stride: int = 1) -> torch.Tensor:
    """Same-padded 2-D convolution (cross-correlation, as is conventional)."""
    if weight.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise ValueError(f"weight must be (out, in, k, k), got {tuple(weight.shape)}")
    kernel = weight.shape[2]
    if kernel % 2 == 0:
        raise ValueError(f"kernel must be odd, got {kernel}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    squeeze = x.ndim == 3
    if squeeze:
        x = x.unsqueeze(0)
    if x.ndim != 4:
        raise ValueError(f"input must be (B, C, H, W) or (C, H, W), got {tuple(x.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ValueError(
            f"input has {x.shape[1]} channels but weight expects {weight.shape[1]}"
        )
    out = F.conv2d(x, weight, bias, stride=stride, padding=kernel // 2)
    return out.squeeze(0) if squeeze else out


def selu(x: torch.Tensor) -> torch.Tensor:
    """Self-normalizing exponential-linear activation."""
    return F.selu(x)


def bilinear_upsample2x(x: torch.Tensor) -> torch.Tensor:
    """Double spatial resolution bilinearly (half-pixel-centered sampling)."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x.unsqueeze(0)
    out = F.interpolate(x, scale_factor=2.0, mode="bilinear", align_corners=False)
    return out.squeeze(0) if squeeze else out


def max_over_set(tensors) -> torch.Tensor:
    """Elementwise maximum over a non-empty sequence of same-shape tensors.

    Implemented as stack + max so that exactly one element receives gradient
    at each position (ties go to the first), keeping backprop through the
    set-pooling well defined.
    """
    tensors = list(tensors)
    if not tensors:
        raise ValueError("max_over_set needs at least one tensor")
    if len(tensors) == 1:
        return tensors[0]
    return torch.stack(tensors, dim=0).max(dim=0).values


def softmax_over_levels(logits: torch.Tensor, dim: int = 0) -> torch.Tensor:
    """Softmax along the disparity-level axis."""
    return F.softmax(logits, dim=dim)


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood over valid pixels.

    Args:
        logits: ``(D, H, W)`` unnormalized scores.
        labels: ``(H, W)`` integer level indices in ``[0, D)``.
        valid: ``(H, W)`` bool; pixels with False contribute nothing.

    Raises:
        EmptyOverlapError: If no pixel is valid.
    """
    if logits.ndim != 3:
        raise ValueError(f"logits must be (D, H, W), got {tuple(logits.shape)}")
    if labels.shape != logits.shape[1:] or valid.shape != logits.shape[1:]:
        raise ValueError(
            f"labels {tuple(labels.shape)} / valid {tuple(valid.shape)} must match "
            f"spatial dims {tuple(logits.shape[1:])}"
        )
    mask = valid.bool()
    count = int(mask.sum())
    if count == 0:
        raise EmptyOverlapError("cross entropy over zero valid pixels")
    labels = labels.long()
    if int(labels[mask].min()) < 0 or int(labels[mask].max()) >= logits.shape[0]:
        raise ValueError("labels out of range of the level axis")
    logp = F.log_softmax(logits, dim=0)
    picked = logp.gather(0, labels.clamp(0, logits.shape[0] - 1).unsqueeze(0)).squeeze(0)
    return -(picked[mask]).mean()


def require_finite(x: torch.Tensor, context: str) -> torch.Tensor:
    """Pass through ``x`` unless it contains NaN/Inf."""
    if not bool(torch.isfinite(x).all()):
        bad = int((~torch.isfinite(x)).sum())
        raise NonFiniteError(f"{context}: {bad} non-finite values")
    return x


def gradient_check(fn, inputs, epsilon: float = 1e-4, samples_per_input: int = 4, seed: int = 0) -> float:
    """Compare autograd gradients of a scalar function against central differences.

    Everything is promoted to float64; for each input a few coordinates are
    sampled (all of them when the tensor is small) and perturbed by
    ``+-epsilon``. Returns the worst relative error
    ``|autograd - fd| / max(|autograd|, |fd|, 1e-6)`` over all probes.

    Args:
        fn: Callable taking the (float64) input tensors, returning a scalar.
        inputs: Sequence of tensors to differentiate with respect to.
    """
    rng = np.random.default_rng(seed)
    doubles = [t.detach().clone().double().requires_grad_(True) for t in inputs]
    out = fn(*doubles)
    if out.ndim != 0:
        raise ValueError("gradient_check needs a scalar-valued function")
    grads = torch.autograd.grad(out, doubles)

    worst = 0.0
    for tensor, grad in zip(doubles, grads):
        flat = tensor.detach().reshape(-1)
        size = flat.numel()
        if size <= samples_per_input:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=samples_per_input, replace=False)
        gflat = grad.reshape(-1)
        for idx in coords:
            idx = int(idx)
            original = float(flat[idx])
            with torch.no_grad():
                flat[idx] = original + epsilon
                f_plus = float(fn(*doubles))
                flat[idx] = original - epsilon
                f_minus = float(fn(*doubles))
                flat[idx] = original
            fd = (f_plus - f_minus) / (2.0 * epsilon)
            auto = float(gflat[idx])
            rel = abs(auto - fd) / max(abs(auto), abs(fd), 1e-6)
            worst = max(worst, rel)
    return worst
