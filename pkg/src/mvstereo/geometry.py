"""Camera models, plane-induced homographies, and differentiable-style warping.

Conventions used throughout the package:

* World-to-camera: ``x_cam = R @ x_world + t``. A camera's optical center in
  world coordinates is therefore ``-R.T @ t``.
* The camera looks down +z in its own frame; depth is the camera-frame z
  coordinate and must be positive for a point to be visible.
* Pixel coordinates are ``(x, y)`` with ``(0, 0)`` at the *center* of the
  top-left pixel, x growing rightward (columns) and y downward (rows).
* Disparity is reciprocal depth, ``d = 1 / z``; ``d = 0`` is the plane at
  infinity. Fronto-parallel means constant camera-frame z of the reference.
* Images are ``(H, W, 3)`` float arrays with colors in ``[0, 1]``.

All homography math is done in float64 regardless of image dtype.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    BehindCameraError,
    DegenerateHomographyError,
    InvalidCameraError,
)

logger = logging.getLogger(__name__)

# Depth at or below this is treated as "behind the camera".
BEHIND_EPS = 1e-9
# Homographies with |det| at or below this are refused as degenerate.
DET_EPS = 1e-12
# Homogeneous w at or below this marks a warped pixel as invalid.
W_EPS = 1e-12
# Rotation matrices must be orthonormal within this tolerance.
ORTHONORMAL_TOL = 1e-6

FRONTO_NORMAL = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics: focal lengths and principal point, in pixels.

    Skew is not modeled. ``matrix`` is the usual upper-triangular K.
    """

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        for name in ("fx", "fy", "cx", "cy"):
            value = getattr(self, name)
            if not np.isfinite(value):
                raise InvalidCameraError(f"intrinsics field {name} is not finite: {value!r}")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidCameraError(
                f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}"
            )

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse_matrix(self) -> np.ndarray:
        # Closed form keeps the inverse well conditioned; no linear solve.
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )


@dataclass(frozen=True, eq=False)
class CameraPose:
    """World-to-camera rigid transform (``x_cam = rotation @ x_world + translation``)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        tra = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tra)
        if rot.shape != (3, 3):
            raise InvalidCameraError(f"rotation must be 3x3, got shape {rot.shape}")
        if tra.shape != (3,):
            raise InvalidCameraError(f"translation must have 3 entries, got shape {tra.shape}")
        if not (np.all(np.isfinite(rot)) and np.all(np.isfinite(tra))):
            raise InvalidCameraError("pose contains non-finite entries")
        residual = np.abs(rot @ rot.T - np.eye(3)).max()
        if residual > ORTHONORMAL_TOL:
            raise InvalidCameraError(
                f"rotation is not orthonormal (max |R R^T - I| = {residual:.3e})"
            )
        if np.linalg.det(rot) < 0:
            raise InvalidCameraError("rotation has negative determinant (reflection)")

    def __eq__(self, other) -> bool:
        if not isinstance(other, CameraPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    @property
    def center(self) -> np.ndarray:
        """Optical center in world coordinates."""
        return -self.rotation.T @ self.translation


@dataclass(eq=False)
class CameraView:
    """A posed, calibrated image.

    Args:
        id: Unique identifier within a sequence (used for neighbor selection
            ordering and sparse-point observer sets).
        image: ``(H, W, 3)`` float array, colors in ``[0, 1]``.
        intrinsics: Pinhole intrinsics of this view.
        pose: World-to-camera transform of this view.
    """

    id: str
    image: np.ndarray
    intrinsics: CameraIntrinsics
    pose: CameraPose

    def __post_init__(self):
        img = np.asarray(self.image, dtype=np.float32)
        if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
            raise InvalidCameraError(
                f"view {self.id!r}: image must be (H, W, 3) with H, W >= 1, got {img.shape}"
            )
        if not np.all(np.isfinite(img)):
            raise InvalidCameraError(f"view {self.id!r}: image contains non-finite values")
        lo, hi = float(img.min()), float(img.max())
        if lo < 0.0 or hi > 1.0:
            raise InvalidCameraError(
                f"view {self.id!r}: colors must lie in [0, 1], got range [{lo}, {hi}]"
            )
        self.image = img

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass(eq=False)
class DisparityMap:
    """Per-pixel disparity with a validity mask.

    ``values`` is ``(H, W)`` float32; entries where ``valid`` is False carry
    no meaning. Valid disparities are finite and non-negative (0 = infinity).
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        valid = np.asarray(self.valid, dtype=bool)
        if values.ndim != 2:
            raise ValueError(f"disparity values must be 2-D, got shape {values.shape}")
        if valid.shape != values.shape:
            raise ValueError(
                f"validity mask shape {valid.shape} does not match values shape {values.shape}"
            )
        marked = values[valid]
        if marked.size and not np.all(np.isfinite(marked)):
            raise ValueError("disparity map has non-finite values marked valid")
        if marked.size and marked.min() < 0:
            raise ValueError("disparity map has negative values marked valid")
        self.values = values
        self.valid = valid

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def relative_transform(ref_pose: CameraPose, nbr_pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Rigid transform mapping reference-camera coordinates to neighbor-camera ones.

    Returns:
        ``(R_rel, t_rel)`` with ``x_nbr = R_rel @ x_ref + t_rel``.
    """
    if ref_pose == nbr_pose:
        # The algebraic result is exactly (I, 0); computing R_n R_r^T would
        # leave float dust that breaks exact-identity warps at image edges.
        return np.eye(3), np.zeros(3)
    rot = nbr_pose.rotation @ ref_pose.rotation.T
    tra = nbr_pose.translation - rot @ ref_pose.translation
    return rot, tra


def project(point: np.ndarray, intrinsics: CameraIntrinsics, pose: CameraPose) -> tuple[np.ndarray, float]:
    """Project a world point into a camera.

    Returns:
        ``(pixel, depth)`` where pixel is ``(x, y)`` and depth is camera-frame z.

    Raises:
        BehindCameraError: If the point is at or behind the camera plane.
    """
    point = np.asarray(point, dtype=np.float64).reshape(3)
    cam = pose.rotation @ point + pose.translation
    depth = float(cam[2])
    if depth <= BEHIND_EPS:
        raise BehindCameraError(f"point has camera-frame depth {depth:.3e}")
    x = intrinsics.fx * cam[0] / depth + intrinsics.cx
    y = intrinsics.fy * cam[1] / depth + intrinsics.cy
    return np.array([x, y]), depth


def project_points(points: np.ndarray, intrinsics: CameraIntrinsics, pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection of ``(M, 3)`` world points.

    Unlike :func:`project` this never raises for non-positive depth; callers
    must filter by the returned depths. Pixels at non-positive depth are NaN.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cam = points @ pose.rotation.T + pose.translation
    depth = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        x = intrinsics.fx * cam[:, 0] / depth + intrinsics.cx
        y = intrinsics.fy * cam[:, 1] / depth + intrinsics.cy
    pix = np.stack([x, y], axis=1)
    pix[depth <= BEHIND_EPS] = np.nan
    return pix, depth


def plane_homography(ref: CameraView, nbr: CameraView, disparity: float) -> np.ndarray:
    """Homography induced by a fronto-parallel plane of the reference camera.

    Maps reference pixels to neighbor pixels for the plane at reciprocal depth
    ``disparity`` (0 = plane at infinity, yielding the rotation-only mapping).

    Returns:
        ``(3, 3)`` float64 matrix M with ``x_nbr ~ M @ (x_ref, y_ref, 1)``.

    Raises:
        DegenerateHomographyError: If M is singular or near-singular.
        ValueError: If disparity is negative or non-finite.
    """
    disparity = float(disparity)
    if not np.isfinite(disparity) or disparity < 0.0:
        raise ValueError(f"disparity must be finite and >= 0, got {disparity!r}")
    rot, tra = relative_transform(ref.pose, nbr.pose)
    plane_term = rot + disparity * np.outer(tra, FRONTO_NORMAL)
    if np.array_equal(plane_term, np.eye(3)) and nbr.intrinsics == ref.intrinsics:
        # Identical view geometry must warp as the exact identity so that
        # border pixels stay valid under the strict in-bounds test.
        return np.eye(3)
    mat = nbr.intrinsics.matrix @ plane_term @ ref.intrinsics.inverse_matrix
    det = np.linalg.det(mat)
    if not np.isfinite(det) or abs(det) <= DET_EPS:
        raise DegenerateHomographyError(
            f"plane homography at disparity {disparity} is degenerate (det = {det:.3e})"
        )
    return mat


def bilinear_sample(image: np.ndarray, xy: np.ndarray) -> tuple[np.ndarray, bool]:
    """Sample an image at one continuous pixel location.

    Args:
        image: ``(H, W, C)`` array.
        xy: ``(x, y)`` location; valid iff ``0 <= x <= W-1`` and ``0 <= y <= H-1``.

    Returns:
        ``(value, valid)``. The value is zeros when invalid.
    """
    values, valid = bilinear_sample_many(image, np.asarray(xy, dtype=np.float64).reshape(1, 2))
    return values[0], bool(valid[0])


def bilinear_sample_many(image: np.ndarray, xy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized bilinear sampling.

    Args:
        image: ``(H, W, C)`` array.
        xy: ``(..., 2)`` locations as ``(x, y)``.

    Returns:
        ``(values, valid)`` with shapes ``(..., C)`` and ``(...,)``. Out-of-bounds
        or non-finite locations are invalid and produce zeros.
    """
    image = np.asarray(image)
    if image.ndim != 3:
        raise ValueError(f"image must be (H, W, C), got shape {image.shape}")
    h, w = image.shape[:2]
    xy = np.asarray(xy, dtype=np.float64)
    if xy.shape[-1] != 2:
        raise ValueError(f"xy must have a trailing axis of size 2, got shape {xy.shape}")
    flat = xy.reshape(-1, 2)
    x, y = flat[:, 0], flat[:, 1]

    finite = np.isfinite(x) & np.isfinite(y)
    valid = finite & (x >= 0.0) & (x <= w - 1.0) & (y >= 0.0) & (y <= h - 1.0)
    xs = np.where(valid, x, 0.0)
    ys = np.where(valid, y, 0.0)

    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[:, None]
    fy = (ys - y0)[:, None]

    top = image[y0, x0] * (1.0 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1.0 - fx) + image[y1, x1] * fx
    values = top * (1.0 - fy) + bot * fy
    values = np.where(valid[:, None], values, 0.0)
    values = values.astype(image.dtype, copy=False)
    return values.reshape(xy.shape[:-1] + (image.shape[2],)), valid.reshape(xy.shape[:-1])


def warp_image(
    image: np.ndarray,
    homography: np.ndarray,
    out_shape: tuple[int, int],
    origin: tuple[int, int] = (0, 0),
) -> tuple[np.ndarray, np.ndarray]:
    """Warp an image by sampling it through a homography.

    Output pixel ``(x, y)`` (offset by ``origin``) is looked up at
    ``M @ (x, y, 1)`` in the source image. Pixels whose homogeneous w is not
    safely positive (at or behind the source camera) or whose source location
    falls outside the image are invalid and zero-filled.

    Args:
        image: ``(H, W, C)`` source array.
        homography: ``(3, 3)`` mapping output pixels to source pixels.
        out_shape: ``(height, width)`` of the output.
        origin: ``(y0, x0)`` pixel offset of the output window.

    Returns:
        ``(warped, valid)`` with shapes ``(height, width, C)`` and ``(height, width)``.
    """
    mat = np.asarray(homography, dtype=np.float64)
    if mat.shape != (3, 3):
        raise ValueError(f"homography must be 3x3, got shape {mat.shape}")
    det = np.linalg.det(mat)
    if not np.isfinite(det) or abs(det) <= DET_EPS:
        raise DegenerateHomographyError(f"warp homography is degenerate (det = {det:.3e})")
    out_h, out_w = int(out_shape[0]), int(out_shape[1])
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output shape must be positive, got {out_shape}")
    y0, x0 = origin

    ys, xs = np.meshgrid(
        np.arange(y0, y0 + out_h, dtype=np.float64),
        np.arange(x0, x0 + out_w, dtype=np.float64),
        indexing="ij",
    )
    # One matmul for all pixels; rows are (x, y, 1).
    src = np.stack([xs, ys, np.ones_like(xs)], axis=-1) @ mat.T
    w_coord = src[..., 2]
    in_front = w_coord > W_EPS
    safe_w = np.where(in_front, w_coord, 1.0)
    xy = src[..., :2] / safe_w[..., None]
    xy[~in_front] = -1.0  # forced out of bounds, hence invalid

    values, valid = bilinear_sample_many(image, xy)
    valid &= in_front
    values[~valid] = 0.0
    return values, valid
