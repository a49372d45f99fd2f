"""Synthetic scene generation by ray casting.

Scenes are fronto-parallel rectangles ("cards") and axis-aligned boxes with
smooth procedural textures, imaged by pinhole cameras on a line or ring
trajectory. The renderer intersects rays analytically and never touches the
homography/warp code, so rendered images and ground-truth disparities act as
an independent check on the plane-sweep machinery: if the sweep and the
renderer agree, an error would have to be present in both, in compensating
form, to go unnoticed.

Ground truth: every pixel is valid; surface pixels store reciprocal depth,
background pixels store disparity 0 (plane at infinity).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import SceneSpecError
from .geometry import CameraIntrinsics, CameraPose, CameraView, DisparityMap
from .sweep import SparsePoint

logger = logging.getLogger(__name__)

# Every piece of geometry must keep at least this camera-frame depth.
MIN_DEPTH_MARGIN = 0.1
RAY_EPS = 1e-9
# A point is occluded if some surface sits in front of it by this fraction.
OCCLUSION_TOL = 1e-6


@dataclass(frozen=True)
class PlaneSpec:
    """Fronto-parallel textured rectangle at constant world z."""

    depth: float
    center: tuple = (0.0, 0.0)  # world (x, y) of the rectangle center
    size: tuple = (4.0, 4.0)  # world (sx, sy) extents
    texture_seed: int = 0


@dataclass(frozen=True)
class BoxSpec:
    """Axis-aligned textured box."""

    center: tuple  # world (x, y, z)
    size: tuple  # world (sx, sy, sz) extents
    texture_seed: int = 0


@dataclass(frozen=True)
class SceneSpec:
    """Full description of a synthetic capture.

    ``trajectory`` is ``"line"`` (cameras at x offsets spaced by ``baseline``,
    identity rotation) or ``"ring"`` (cameras on a circle of radius
    ``baseline`` in the z=0 plane, each rotated to look at the geometry
    centroid). ``focal`` defaults to the image width.
    """

    planes: tuple = ()
    boxes: tuple = ()
    trajectory: str = "line"
    num_views: int = 5
    baseline: float = 0.08
    width: int = 96
    height: int = 64
    seed: int = 0
    num_points: int = 120
    focal: float | None = None
    background: tuple = (0.3, 0.38, 0.52)

    def __post_init__(self):
        object.__setattr__(self, "planes", tuple(self.planes))
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if self.trajectory not in ("line", "ring"):
            raise SceneSpecError(f"unknown trajectory {self.trajectory!r}")
        if self.num_views < 1:
            raise SceneSpecError(f"num_views must be >= 1, got {self.num_views}")
        if self.width < 2 or self.height < 2:
            raise SceneSpecError(f"image size must be at least 2x2, got {self.width}x{self.height}")
        if self.baseline <= 0:
            raise SceneSpecError(f"baseline must be > 0, got {self.baseline}")
        if not self.planes and not self.boxes:
            raise SceneSpecError("scene has no geometry")


def _texture(u: np.ndarray, v: np.ndarray, seed: int) -> np.ndarray:
    """Smooth low-frequency RGB texture over surface coordinates (u, v).

    Low spatial frequency keeps bilinear resampling error far below the
    warp-alignment tolerances the rendered scenes are used to check.
    """
    rng = np.random.default_rng(np.uint64(seed) + np.uint64(0x5EED))
    out = np.empty(u.shape + (3,), dtype=np.float64)
    for c in range(3):
        base = rng.uniform(0.35, 0.65)
        value = np.full_like(u, base, dtype=np.float64)
        for _ in range(3):
            amp = rng.uniform(0.04, 0.11)
            fu, fv = rng.uniform(0.15, 0.55, size=2)
            phase = rng.uniform(0.0, 2.0 * np.pi)
            value = value + amp * np.sin(2.0 * np.pi * (fu * u + fv * v) + phase)
        out[..., c] = value
    return np.clip(out, 0.02, 0.98)


def _look_at(position: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-to-camera rotation for a camera at ``position`` facing ``target``.

    Camera axes: x right, y down, z forward; world +y maps toward image-down.
    """
    forward = target - position
    norm = np.linalg.norm(forward)
    if norm < RAY_EPS:
        raise SceneSpecError("camera position coincides with look-at target")
    forward = forward / norm
    down = np.array([0.0, 1.0, 0.0])
    down = down - np.dot(down, forward) * forward
    dnorm = np.linalg.norm(down)
    if dnorm < 1e-6:
        raise SceneSpecError("camera looks straight along the world y axis")
    down = down / dnorm
    right = np.cross(down, forward)
    return np.stack([right, down, forward], axis=0)


def _camera_poses(spec: SceneSpec) -> list[CameraPose]:
    if spec.trajectory == "line":
        poses = []
        for i in range(spec.num_views):
            cx = (i - (spec.num_views - 1) / 2.0) * spec.baseline
            center = np.array([cx, 0.0, 0.0])
            poses.append(CameraPose(np.eye(3), -center))
        return poses
    # ring: look-at keeps the geometry centered while genuinely rotating.
    target = _geometry_centroid(spec)
    poses = []
    for i in range(spec.num_views):
        angle = 2.0 * np.pi * i / spec.num_views
        center = np.array(
            [spec.baseline * np.cos(angle), spec.baseline * np.sin(angle), 0.0]
        )
        rot = _look_at(center, target)
        poses.append(CameraPose(rot, -(rot @ center)))
    return poses


def _geometry_centroid(spec: SceneSpec) -> np.ndarray:
    pts = [np.array([p.center[0], p.center[1], p.depth]) for p in spec.planes]
    pts += [np.asarray(b.center, dtype=float) for b in spec.boxes]
    return np.mean(pts, axis=0)


def _geometry_corners(spec: SceneSpec) -> np.ndarray:
    corners = []
    for p in spec.planes:
        cx, cy = p.center
        sx, sy = p.size
        for dx in (-0.5, 0.5):
            for dy in (-0.5, 0.5):
                corners.append([cx + dx * sx, cy + dy * sy, p.depth])
    for b in spec.boxes:
        cx, cy, cz = b.center
        sx, sy, sz = b.size
        for dx in (-0.5, 0.5):
            for dy in (-0.5, 0.5):
                for dz in (-0.5, 0.5):
                    corners.append([cx + dx * sx, cy + dy * sy, cz + dz * sz])
    return np.asarray(corners, dtype=np.float64)


def _cast_plane(origin, dirs, plane: PlaneSpec):
    """Ray-rectangle intersection. Returns hit distance (inf where missed)."""
    dz = dirs[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (plane.depth - origin[2]) / dz
    hx = origin[0] + t * dirs[..., 0]
    hy = origin[1] + t * dirs[..., 1]
    ok = (
        (np.abs(dz) > RAY_EPS)
        & (t > RAY_EPS)
        & (np.abs(hx - plane.center[0]) <= plane.size[0] / 2.0)
        & (np.abs(hy - plane.center[1]) <= plane.size[1] / 2.0)
    )
    return np.where(ok, t, np.inf)


def _cast_box(origin, dirs, box: BoxSpec):
    """Slab-method ray-box intersection. Returns entry distance (inf where missed)."""
    lo = np.asarray(box.center, dtype=np.float64) - np.asarray(box.size, dtype=np.float64) / 2.0
    hi = np.asarray(box.center, dtype=np.float64) + np.asarray(box.size, dtype=np.float64) / 2.0
    t_near = np.full(dirs.shape[:-1], -np.inf)
    t_far = np.full(dirs.shape[:-1], np.inf)
    miss = np.zeros(dirs.shape[:-1], dtype=bool)
    for axis in range(3):
        d = dirs[..., axis]
        parallel = np.abs(d) <= RAY_EPS
        miss |= parallel & ((origin[axis] < lo[axis]) | (origin[axis] > hi[axis]))
        with np.errstate(divide="ignore", invalid="ignore"):
            t0 = (lo[axis] - origin[axis]) / d
            t1 = (hi[axis] - origin[axis]) / d
        lo_t = np.minimum(t0, t1)
        hi_t = np.maximum(t0, t1)
        t_near = np.where(parallel, t_near, np.maximum(t_near, lo_t))
        t_far = np.where(parallel, t_far, np.minimum(t_far, hi_t))
    ok = ~miss & (t_near <= t_far) & (t_near > RAY_EPS)
    return np.where(ok, t_near, np.inf)


def _shade_plane(hits: np.ndarray, plane: PlaneSpec) -> np.ndarray:
    return _texture(hits[..., 0], hits[..., 1], plane.texture_seed)


def _shade_box(hits: np.ndarray, box: BoxSpec) -> np.ndarray:
    """Pick the dominant face of each hit point and texture in its plane."""
    local = hits - np.asarray(box.center, dtype=np.float64)
    scaled = np.abs(local) / (np.asarray(box.size, dtype=np.float64) / 2.0)
    face_axis = np.argmax(scaled, axis=-1)
    colors = np.zeros(hits.shape[:-1] + (3,), dtype=np.float64)
    uv_of_axis = {0: (1, 2), 1: (0, 2), 2: (0, 1)}
    for axis, (ua, va) in uv_of_axis.items():
        sel = face_axis == axis
        if not np.any(sel):
            continue
        tex = _texture(hits[sel][:, ua], hits[sel][:, va], box.texture_seed + 7 * axis)
        colors[sel] = tex
    return colors


def _cast_all(origin, dirs, spec: SceneSpec):
    """Nearest hit over all scene elements.

    Returns:
        ``(t, element_index)`` where misses have ``t = inf`` and index -1.
        Element indices enumerate planes first, then boxes.
    """
    best_t = np.full(dirs.shape[:-1], np.inf)
    best_idx = np.full(dirs.shape[:-1], -1, dtype=np.int64)
    for idx, plane in enumerate(spec.planes):
        t = _cast_plane(origin, dirs, plane)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_idx = np.where(closer, idx, best_idx)
    for j, box in enumerate(spec.boxes):
        t = _cast_box(origin, dirs, box)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_idx = np.where(closer, len(spec.planes) + j, best_idx)
    return best_t, best_idx


def _intrinsics(spec: SceneSpec) -> CameraIntrinsics:
    focal = float(spec.focal) if spec.focal is not None else float(spec.width)
    return CameraIntrinsics(
        fx=focal, fy=focal, cx=(spec.width - 1) / 2.0, cy=(spec.height - 1) / 2.0
    )


def _validate_depths(spec: SceneSpec, poses: list[CameraPose]) -> None:
    corners = _geometry_corners(spec)
    for i, pose in enumerate(poses):
        cam_z = corners @ pose.rotation.T[:, 2] + pose.translation[2]
        if cam_z.min() < MIN_DEPTH_MARGIN:
            raise SceneSpecError(
                f"geometry comes within {cam_z.min():.3f} of camera {i} "
                f"(margin {MIN_DEPTH_MARGIN})"
            )
        center = pose.center
        for box in spec.boxes:
            lo = np.asarray(box.center) - np.asarray(box.size) / 2.0
            hi = np.asarray(box.center) + np.asarray(box.size) / 2.0
            if np.all(center >= lo - RAY_EPS) and np.all(center <= hi + RAY_EPS):
                raise SceneSpecError(f"camera {i} lies inside a box")


def _render_view(spec: SceneSpec, intr: CameraIntrinsics, pose: CameraPose, view_id: str):
    xs, ys = np.meshgrid(
        np.arange(spec.width, dtype=np.float64),
        np.arange(spec.height, dtype=np.float64),
        indexing="xy",
    )
    # Camera-frame ray directions with unit z, so the ray parameter equals
    # camera depth directly.
    dirs_cam = np.stack(
        [(xs - intr.cx) / intr.fx, (ys - intr.cy) / intr.fy, np.ones_like(xs)], axis=-1
    )
    dirs_world = dirs_cam @ pose.rotation  # == (R^T @ d) per pixel
    origin = pose.center

    t, idx = _cast_all(origin, dirs_world, spec)
    image = np.empty((spec.height, spec.width, 3), dtype=np.float64)
    image[:] = np.asarray(spec.background, dtype=np.float64)
    hit = np.isfinite(t)
    hit_pts = origin + t[..., None] * dirs_world
    for e, plane in enumerate(spec.planes):
        sel = hit & (idx == e)
        if np.any(sel):
            image[sel] = _shade_plane(hit_pts[sel], plane)
    for j, box in enumerate(spec.boxes):
        sel = hit & (idx == len(spec.planes) + j)
        if np.any(sel):
            image[sel] = _shade_box(hit_pts[sel], box)

    disparity = np.zeros((spec.height, spec.width), dtype=np.float32)
    disparity[hit] = (1.0 / t[hit]).astype(np.float32)
    view = CameraView(view_id, image.astype(np.float32), intr, pose)
    gt = DisparityMap(disparity, np.ones_like(disparity, dtype=bool))
    return view, gt


def _observers(position: np.ndarray, spec: SceneSpec, views: list[CameraView]):
    """Ids of views that see the point: in frustum, in front, unoccluded."""
    seen = set()
    for view in views:
        cam = view.pose.rotation @ position + view.pose.translation
        if cam[2] <= MIN_DEPTH_MARGIN / 2.0:
            continue
        x = view.intrinsics.fx * cam[0] / cam[2] + view.intrinsics.cx
        y = view.intrinsics.fy * cam[1] / cam[2] + view.intrinsics.cy
        if not (0.0 <= x <= view.width - 1.0 and 0.0 <= y <= view.height - 1.0):
            continue
        # Shoot a ray at the point; parameterized so t = 1 lands on it.
        origin = view.pose.center
        direction = position - origin
        t, _ = _cast_all(origin, direction[None, :], spec)
        if t[0] < 1.0 - OCCLUSION_TOL:
            continue  # something strictly in front
        seen.add(view.id)
    return seen


def _sample_points(spec: SceneSpec, views: list[CameraView], rng) -> list[SparsePoint]:
    points = []
    attempts = 0
    max_attempts = spec.num_points * 50
    while len(points) < spec.num_points and attempts < max_attempts:
        attempts += 1
        view = views[int(rng.integers(len(views)))]
        px = rng.uniform(0.0, view.width - 1.0)
        py = rng.uniform(0.0, view.height - 1.0)
        d_cam = np.array(
            [
                (px - view.intrinsics.cx) / view.intrinsics.fx,
                (py - view.intrinsics.cy) / view.intrinsics.fy,
                1.0,
            ]
        )
        d_world = view.pose.rotation.T @ d_cam
        origin = view.pose.center
        t, _ = _cast_all(origin, d_world[None, :], spec)
        if not np.isfinite(t[0]):
            continue  # background pixel, nothing to triangulate
        position = origin + t[0] * d_world
        observers = _observers(position, spec, views)
        if not observers:
            continue
        points.append(SparsePoint(position, frozenset(observers)))
    if len(points) < spec.num_points:
        logger.warning(
            "sampled only %d of %d sparse points (scene mostly background?)",
            len(points),
            spec.num_points,
        )
    return points


def generate_scene(spec: SceneSpec):
    """Render a synthetic capture.

    Returns:
        ``(views, gt, points)``: posed images, per-view ground-truth disparity
        keyed by view id, and occlusion-aware sparse points. Deterministic in
        ``spec`` (same spec, same bits).

    Raises:
        SceneSpecError: If geometry violates the depth margin for any camera
            or a camera sits inside a box.
    """
    intr = _intrinsics(spec)
    poses = _camera_poses(spec)
    _validate_depths(spec, poses)
    views = []
    gt = {}
    for i, pose in enumerate(poses):
        view_id = f"view_{i:03d}"
        view, disparity = _render_view(spec, intr, pose, view_id)
        views.append(view)
        gt[view_id] = disparity
    rng = np.random.default_rng(spec.seed)
    points = _sample_points(spec, views, rng)
    return views, gt, points


def preset_scene(name: str, **overrides) -> SceneSpec:
    """Ready-made scene layouts for demos and tests.

    ``"plane"``: one big card at depth 2 (disparity 0.5 everywhere).
    ``"layers"``: three cards at staggered depths with background visible.
    ``"boxes"``: a backdrop card plus two boxes at different depths.
    """
    if name == "plane":
        base = dict(planes=(PlaneSpec(depth=2.0, size=(30.0, 30.0), texture_seed=11),))
    elif name == "layers":
        base = dict(
            planes=(
                PlaneSpec(depth=6.0, size=(14.0, 14.0), texture_seed=3),
                PlaneSpec(depth=3.0, center=(-0.9, 0.5), size=(2.4, 1.8), texture_seed=5),
                PlaneSpec(depth=2.0, center=(0.8, -0.4), size=(1.6, 1.2), texture_seed=9),
            )
        )
    elif name == "boxes":
        base = dict(
            planes=(PlaneSpec(depth=7.0, size=(16.0, 16.0), texture_seed=21),),
            boxes=(
                BoxSpec(center=(-0.8, 0.3, 3.2), size=(1.2, 1.0, 1.0), texture_seed=23),
                BoxSpec(center=(0.9, -0.3, 2.3), size=(0.8, 0.9, 0.7), texture_seed=29),
            ),
        )
    else:
        raise SceneSpecError(f"unknown preset {name!r}")
    base.update(overrides)
    return SceneSpec(**base)
