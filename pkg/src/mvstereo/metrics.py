"""Reconstruction quality metrics.

Three measures: L1 disparity error against ground truth, rephotography
(re-render the reference from its neighbors through the predicted disparity
and compare colors), and completeness curves (fraction of pixels under an
error threshold).

Conventions shared with the rest of the package: disparity 0 means infinite
depth and rephotographs through the rotation-only mapping; masked pixels are
ignored, and a metric over zero pixels is an error, never a silent 0.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import EmptyOverlapError, InsufficientViewsError
from .geometry import CameraView, DisparityMap, bilinear_sample_many, relative_transform

logger = logging.getLogger(__name__)

# Same convention as the sweep's warp: w at or below this is out of view.
HOMOGENEOUS_EPS = 1e-12


@dataclass(frozen=True)
class CompletenessCurve:
    """Fraction of evaluated pixels with error strictly below each threshold."""

    thresholds: np.ndarray
    fractions: np.ndarray

    def __post_init__(self):
        thresholds = np.asarray(self.thresholds, dtype=np.float64)
        fractions = np.asarray(self.fractions, dtype=np.float64)
        object.__setattr__(self, "thresholds", thresholds)
        object.__setattr__(self, "fractions", fractions)
        if thresholds.ndim != 1 or thresholds.shape != fractions.shape:
            raise ValueError("thresholds and fractions must be matching 1-d arrays")
        if thresholds.size and np.any(np.diff(thresholds) <= 0):
            raise ValueError("thresholds must be strictly increasing")
        if np.any(fractions < 0) or np.any(fractions > 1):
            raise ValueError("fractions must lie in [0, 1]")
        if np.any(np.diff(fractions) < 0):
            raise ValueError("fractions must be non-decreasing")


def geometric_error(pred: DisparityMap, gt: DisparityMap) -> float:
    """Mean absolute disparity difference over pixels valid in both maps.

    Raises:
        EmptyOverlapError: If no pixel is valid in both.
    """
    if pred.values.shape != gt.values.shape:
        raise ValueError(
            f"shape mismatch: prediction {pred.values.shape} vs ground truth {gt.values.shape}"
        )
    joint = pred.valid & gt.valid
    if not joint.any():
        raise EmptyOverlapError("no pixel is valid in both maps")
    diff = np.abs(pred.values.astype(np.float64) - gt.values.astype(np.float64))
    return float(diff[joint].mean())


def rephotograph(
    pred: DisparityMap, ref: CameraView, neighbors: list
) -> tuple[np.ndarray, np.ndarray]:
    """Re-render the reference image from its neighbors via predicted disparity.

    Every reference pixel is lifted to its predicted disparity plane and
    projected into each neighbor; in-bounds bilinear samples become color
    candidates. The output color is the per-channel median of the candidates
    (lower middle for even counts). Pixels with no candidate, including those
    with no predicted disparity, are marked invalid.

    Returns:
        ``(image, valid)``: ``(H, W, 3)`` float32 and ``(H, W)`` bool.
    """
    if not neighbors:
        raise InsufficientViewsError("rephotography needs at least one neighbor")
    h, w = pred.values.shape
    if (h, w) != (ref.height, ref.width):
        raise ValueError(f"disparity is {h}x{w}, reference is {ref.height}x{ref.width}")

    ys, xs = np.mgrid[0:h, 0:w]
    pixels = np.stack([xs.ravel(), ys.ravel(), np.ones(h * w)], axis=0)
    rays = ref.intrinsics.inverse_matrix @ pixels  # unit-depth camera points
    disparity = pred.values.astype(np.float64).ravel()

    count = len(neighbors)
    candidates = np.zeros((count, h * w, 3), dtype=np.float64)
    usable = np.zeros((count, h * w), dtype=bool)
    for i, nbr in enumerate(neighbors):
        rot, tra = relative_transform(ref.pose, nbr.pose)
        # (R + d t n^T) on unit-depth points reduces to R x + d t because the
        # fronto-parallel normal picks out the z component, which is 1 here.
        cam = rot @ rays + disparity[None, :] * tra[:, None]
        proj = nbr.intrinsics.matrix @ cam
        depth = proj[2]
        in_front = depth > HOMOGENEOUS_EPS
        safe = np.where(in_front, depth, 1.0)
        xy = np.stack([proj[0] / safe, proj[1] / safe], axis=1)
        values, ok = bilinear_sample_many(nbr.image, xy)
        usable[i] = ok & in_front & pred.valid.ravel()
        candidates[i] = values

    counts = usable.sum(axis=0)
    valid = counts > 0
    # Push unusable candidates past every real color so an ascending sort
    # leaves the k usable ones first; lower-middle median is index (k-1)//2.
    candidates[~usable] = np.inf
    ordered = np.sort(candidates, axis=0)
    pick = np.maximum(counts - 1, 0) // 2
    image = np.take_along_axis(ordered, pick[None, :, None], axis=0)[0]
    image[~valid] = 0.0
    return image.reshape(h, w, 3).astype(np.float32), valid.reshape(h, w)


def photometric_error(pred: DisparityMap, ref: CameraView, neighbors: list) -> float:
    """Mean per-channel L1 between the reference and its rephotograph.

    Raises:
        EmptyOverlapError: If no pixel rephotographs.
    """
    image, valid = rephotograph(pred, ref, neighbors)
    if not valid.any():
        raise EmptyOverlapError("no pixel produced a rephotography candidate")
    diff = np.abs(ref.image.astype(np.float64) - image.astype(np.float64))
    return float(diff[valid].mean())


def completeness_curve(
    errors: np.ndarray, valid: np.ndarray, thresholds
) -> CompletenessCurve:
    """Fraction of valid pixels with error strictly below each threshold.

    Raises:
        EmptyOverlapError: If the mask selects no pixel.
    """
    errors = np.asarray(errors, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    if errors.shape != valid.shape:
        raise ValueError(f"errors {errors.shape} and mask {valid.shape} differ in shape")
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.ndim != 1 or thresholds.size == 0:
        raise ValueError("thresholds must be a non-empty 1-d sequence")
    if np.any(np.diff(thresholds) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    pool = errors[valid]
    if pool.size == 0:
        raise EmptyOverlapError("completeness over an empty mask")
    fractions = np.array([(pool < t).mean() for t in thresholds])
    return CompletenessCurve(thresholds=thresholds, fractions=fractions)


def save_curve(path, curve: CompletenessCurve) -> None:
    """Write a curve as delimited text, one ``threshold,fraction`` row per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# threshold,fraction\n")
        for t, f in zip(curve.thresholds, curve.fractions):
            fh.write(f"{t:.10g},{f:.10g}\n")


def load_curve(path) -> CompletenessCurve:
    rows = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    if rows.size == 0 or rows.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns (threshold, fraction)")
    return CompletenessCurve(thresholds=rows[:, 0], fractions=rows[:, 1])
