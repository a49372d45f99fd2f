"""Plane-sweep volume construction.

A plane-sweep volume rephotographs each neighbor view onto the reference
camera for every disparity level of a uniform grid. Where the true surface
disparity matches the level, the rephotographed neighbor aligns with the
reference image; the learned matcher downstream scores that alignment.

Grid convention: ``levels`` values ``{0, delta, ..., (levels-1) * delta}``
spanning ``[0, max_disparity]``. Volume layout is
``(neighbor, level, row, col, channel)``; colors are shifted from ``[0, 1]``
to ``[-0.5, 0.5]`` and pixels that a neighbor cannot see are zero with a
False mask entry.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import (
    DataError,
    InsufficientFeaturesError,
    InsufficientViewsError,
    VolumeBudgetError,
)
from .geometry import BEHIND_EPS, CameraView, DisparityMap, plane_homography, warp_image

logger = logging.getLogger(__name__)

DEFAULT_MEMORY_BUDGET = 8 * 2**30  # bytes


@dataclass(frozen=True, eq=False)
class SparsePoint:
    """A triangulated world point and the ids of the views that observe it."""

    position: np.ndarray
    observers: frozenset

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(3)
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "observers", frozenset(self.observers))


@dataclass(frozen=True, eq=False)
class DisparityGrid:
    """Uniform disparity grid from 0 to the scene's maximum disparity."""

    levels: int
    delta: float
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.levels < 2:
            raise ValueError(f"grid needs at least 2 levels, got {self.levels}")
        if self.values.shape != (self.levels,):
            raise ValueError(
                f"grid values shape {self.values.shape} does not match levels {self.levels}"
            )
        if self.values[0] != 0.0:
            raise ValueError("grid must start at disparity 0")
        if np.any(np.diff(self.values) <= 0):
            raise ValueError("grid values must be strictly increasing")

    @property
    def max_disparity(self) -> float:
        return float(self.values[-1])


def make_disparity_grid(max_disparity: float, levels: int) -> DisparityGrid:
    """Build the uniform grid ``{0, delta, ..., max_disparity}``.

    The last value equals ``max_disparity`` bit-for-bit (linspace endpoint),
    which matters when grids are rebuilt from stored metadata.
    """
    max_disparity = float(max_disparity)
    if not np.isfinite(max_disparity) or max_disparity <= 0.0:
        raise ValueError(f"max_disparity must be finite and > 0, got {max_disparity!r}")
    if levels < 2:
        raise ValueError(f"levels must be >= 2, got {levels}")
    values = np.linspace(0.0, max_disparity, levels)
    return DisparityGrid(levels=levels, delta=max_disparity / (levels - 1), values=values)


def select_neighbors(
    views: list[CameraView],
    ref_id: str,
    count: int,
    points: list[SparsePoint],
) -> list[CameraView]:
    """Pick the ``count`` views sharing the most sparse points with the reference.

    Ties are broken by ascending view id so selection is reproducible.

    Raises:
        InsufficientViewsError: If fewer than ``count`` other views exist.
        DataError: If ``ref_id`` is not among the views.
    """
    if count < 1:
        raise ValueError(f"neighbor count must be >= 1, got {count}")
    by_id = {v.id: v for v in views}
    if len(by_id) != len(views):
        raise DataError("duplicate view ids in sequence")
    if ref_id not in by_id:
        raise DataError(f"unknown reference view id {ref_id!r}")
    candidates = [v for v in views if v.id != ref_id]
    if len(candidates) < count:
        raise InsufficientViewsError(
            f"need {count} neighbors for {ref_id!r} but only {len(candidates)} other views exist"
        )
    ref_sets = [p.observers for p in points if ref_id in p.observers]
    shared = {v.id: sum(1 for obs in ref_sets if v.id in obs) for v in candidates}
    ranked = sorted(candidates, key=lambda v: (-shared[v.id], v.id))
    return ranked[:count]


def estimate_max_disparity(
    points: list[SparsePoint],
    ref: CameraView,
    quantile: float = 1.0,
) -> float:
    """Quantile of sparse-point disparities seen from the reference camera.

    Points behind the camera (or at it) are skipped. ``quantile=1.0`` (the
    default) returns the largest observed disparity; the index used is
    ``ceil(quantile * n) - 1`` into the ascending sort, clamped to valid range.

    Raises:
        InsufficientFeaturesError: If no observed point has positive depth.
    """
    if not (0.0 < quantile <= 1.0):
        raise ValueError(f"quantile must be in (0, 1], got {quantile}")
    disparities = []
    for point in points:
        if ref.id not in point.observers:
            continue
        cam = ref.pose.rotation @ point.position + ref.pose.translation
        if cam[2] <= BEHIND_EPS:
            logger.warning("sparse point behind reference %r skipped", ref.id)
            continue
        disparities.append(1.0 / cam[2])
    if not disparities:
        raise InsufficientFeaturesError(
            f"no sparse points with positive depth observed by {ref.id!r}"
        )
    disparities.sort()
    n = len(disparities)
    index = min(n - 1, max(0, int(np.ceil(quantile * n)) - 1))
    return float(disparities[index])


@dataclass(eq=False)
class PlaneSweepVolume:
    """Rephotographed neighbors over a disparity grid.

    ``data`` is ``(N, D, H, W, 3)`` float32 in ``[-0.5, 0.5]``; ``mask`` is
    ``(N, D, H, W)`` bool. Wherever ``mask`` is False, ``data`` is zero.
    """

    ref_id: str
    neighbor_ids: tuple
    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.neighbor_ids = tuple(self.neighbor_ids)
        if self.data.ndim != 5 or self.data.shape[4] != 3:
            raise ValueError(f"volume data must be (N, D, H, W, 3), got {self.data.shape}")
        if self.mask.shape != self.data.shape[:4]:
            raise ValueError(
                f"volume mask shape {self.mask.shape} does not match data {self.data.shape[:4]}"
            )
        if len(self.neighbor_ids) != self.data.shape[0]:
            raise ValueError("neighbor_ids length does not match volume first axis")

    @property
    def levels(self) -> int:
        return self.data.shape[1]


def volume_nbytes(neighbors: int, levels: int, height: int, width: int) -> int:
    """Bytes needed for a volume's data (float32 RGB) plus mask (bool)."""
    return neighbors * levels * height * width * (3 * 4 + 1)


@dataclass(eq=False)
class DisparityDistribution:
    """Per-pixel probability over the disparity grid's levels.

    ``probs`` is ``(H, W, D)``; each pixel's row is a distribution (sums to 1
    within 1e-5, entries non-negative and finite).
    """

    probs: np.ndarray
    grid: DisparityGrid

    def __post_init__(self):
        probs = np.asarray(self.probs)
        if probs.ndim != 3 or probs.shape[2] != self.grid.levels:
            raise ValueError(
                f"probs must be (H, W, {self.grid.levels}), got shape {probs.shape}"
            )
        if not np.all(np.isfinite(probs)):
            raise ValueError("distribution contains non-finite probabilities")
        if probs.min() < -1e-7:
            raise ValueError(f"distribution has negative probabilities (min {probs.min()})")
        sums = probs.sum(axis=2)
        worst = np.abs(sums - 1.0).max()
        if worst > 1e-5:
            raise ValueError(f"distribution rows must sum to 1 (worst deviation {worst:.3e})")
        self.probs = probs

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[:2]


def argmax_disparity(dist: DisparityDistribution) -> "DisparityMap":
    """Collapse a distribution to its most likely grid disparity per pixel.

    Ties take the lowest level (numpy argmax), so a uniform row yields
    disparity 0. Every pixel of the result is valid.
    """
    best = np.argmax(dist.probs, axis=2)
    values = dist.grid.values[best].astype(np.float32)
    return DisparityMap(values, np.ones(best.shape, dtype=bool))


def build_volume(
    ref: CameraView,
    neighbors: list[CameraView],
    grid: DisparityGrid,
    window: tuple[int, int, int, int] | None = None,
    max_bytes: int = DEFAULT_MEMORY_BUDGET,
) -> PlaneSweepVolume:
    """Sweep every neighbor across the disparity grid of the reference view.

    Args:
        ref: Reference view; its image size (or ``window``) fixes H and W.
        neighbors: Views to rephotograph (order is preserved in the volume).
        grid: Disparity levels to sweep.
        window: Optional ``(y0, x0, height, width)`` reference-image crop;
            used for training patches so only the patch is warped.
        max_bytes: Refuse to allocate more than this estimate.

    Raises:
        VolumeBudgetError: If the estimated size exceeds ``max_bytes``.
    """
    if not neighbors:
        raise InsufficientViewsError("at least one neighbor is required")
    ids = [v.id for v in neighbors]
    if len(set(ids)) != len(ids) or ref.id in ids:
        raise DataError("neighbor ids must be distinct and different from the reference")

    if window is None:
        y0, x0, height, width = 0, 0, ref.height, ref.width
    else:
        y0, x0, height, width = (int(v) for v in window)
        if y0 < 0 or x0 < 0 or height < 1 or width < 1:
            raise ValueError(f"bad window {window}")
        if y0 + height > ref.height or x0 + width > ref.width:
            raise ValueError(
                f"window {window} exceeds reference image {ref.height}x{ref.width}"
            )

    estimate = volume_nbytes(len(neighbors), grid.levels, height, width)
    if estimate > max_bytes:
        raise VolumeBudgetError(
            f"volume of {len(neighbors)} neighbors x {grid.levels} levels x "
            f"{height}x{width} needs ~{estimate} bytes, over budget {max_bytes}"
        )

    data = np.zeros((len(neighbors), grid.levels, height, width, 3), dtype=np.float32)
    mask = np.zeros((len(neighbors), grid.levels, height, width), dtype=bool)
    for n, nbr in enumerate(neighbors):
        for level, disparity in enumerate(grid.values):
            hom = plane_homography(ref, nbr, float(disparity))
            warped, valid = warp_image(nbr.image, hom, (height, width), origin=(y0, x0))
            slice_ = warped.astype(np.float32) - np.float32(0.5)
            slice_[~valid] = 0.0
            data[n, level] = slice_
            mask[n, level] = valid
    return PlaneSweepVolume(ref_id=ref.id, neighbor_ids=tuple(ids), data=data, mask=mask)
