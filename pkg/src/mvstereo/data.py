"""Sequence manifests, disparity files, and result archives.

On-disk layout (see docs/file_formats.md for the byte-level details):

* ``manifest.json`` lists frames (id, image path, intrinsics, pose, optional
  ground-truth disparity path) plus an optional sparse-points file. Paths are
  resolved relative to the manifest's directory.
* Images are ``.npy`` float32 ``(H, W, 3)`` in ``[0, 1]`` (lossless, which the
  sub-1e-3 alignment checks need); 8-bit PNG/JPEG also load, divided by 255.
* Disparity maps are PFM: ``Pf``, ``width height``, negative scale for
  little-endian, rows stored bottom-up, invalid pixels written as -1 and any
  negative value read back as invalid.
* Volumes and distributions are ``.npz`` archives with a format version.
"""

from __future__ import annotations

import json
import logging
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArchiveError, DisparityFormatError, ManifestError, MVStereoError
from .geometry import CameraIntrinsics, CameraPose, CameraView, DisparityMap
from .sweep import DisparityDistribution, DisparityGrid, PlaneSweepVolume, SparsePoint

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
INVALID_SENTINEL = -1.0


@dataclass
class Sequence:
    """A loaded capture: posed views plus optional ground truth and points."""

    views: list
    gt: dict = field(default_factory=dict)
    points: list = field(default_factory=list)

    def ids(self) -> list:
        return [v.id for v in self.views]

    def view(self, view_id: str) -> CameraView:
        for v in self.views:
            if v.id == view_id:
                return v
        raise ManifestError(f"unknown frame id {view_id!r}")


# ---------------------------------------------------------------------------
# PFM disparity files
# ---------------------------------------------------------------------------

def save_disparity(path, disparity: DisparityMap) -> None:
    """Write a disparity map as PFM with -1 marking invalid pixels."""
    path = Path(path)
    values = disparity.values.astype("<f4").copy()
    values[~disparity.valid] = INVALID_SENTINEL
    h, w = values.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        # PFM stores the bottom row first.
        f.write(np.flipud(values).tobytes())


def _read_pfm_token(f, path) -> bytes:
    """One whitespace-delimited header token."""
    token = b""
    while True:
        ch = f.read(1)
        if ch == b"":
            raise DisparityFormatError(f"{path}: truncated PFM header")
        if ch.isspace():
            if token:
                return token
            continue
        token += ch


def load_disparity(path) -> DisparityMap:
    """Read a PFM disparity map; negative values come back as invalid pixels.

    Raises:
        DisparityFormatError: On a bad magic number, malformed header, or
            truncated payload.
    """
    path = Path(path)
    try:
        f = open(path, "rb")
    except OSError as e:
        raise DisparityFormatError(f"{path}: {e}") from e
    with f:
        magic = _read_pfm_token(f, path)
        if magic == b"PF":
            raise DisparityFormatError(f"{path}: color PFM not supported for disparity")
        if magic != b"Pf":
            raise DisparityFormatError(f"{path}: not a PFM file (magic {magic!r})")
        try:
            w = int(_read_pfm_token(f, path))
            h = int(_read_pfm_token(f, path))
            scale = float(_read_pfm_token(f, path))
        except ValueError as e:
            raise DisparityFormatError(f"{path}: malformed PFM header ({e})") from e
        if w < 1 or h < 1:
            raise DisparityFormatError(f"{path}: bad PFM dimensions {w}x{h}")
        if scale == 0.0:
            raise DisparityFormatError(f"{path}: PFM scale must be nonzero")
        dtype = "<f4" if scale < 0 else ">f4"
        payload = f.read(w * h * 4)
        if len(payload) < w * h * 4:
            raise DisparityFormatError(
                f"{path}: truncated PFM payload ({len(payload)} of {w * h * 4} bytes)"
            )
        values = np.frombuffer(payload, dtype=dtype).reshape(h, w)
        values = np.flipud(values).astype(np.float32)
    valid = values >= 0.0
    cleaned = np.where(valid, values, 0.0).astype(np.float32)
    return DisparityMap(cleaned, valid)


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Load an image as float32 (H, W, 3) in [0, 1].

    ``.npy`` files are trusted to be float already; anything else goes through
    Pillow and is divided by the 8-bit maximum.
    """
    path = Path(path)
    if path.suffix == ".npy":
        try:
            arr = np.load(path)
        except (OSError, ValueError, EOFError) as e:
            raise ManifestError(f"{path}: {e}") from e
        arr = np.asarray(arr, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ManifestError(f"{path}: expected (H, W, 3) array, got {arr.shape}")
        return arr
    try:
        from PIL import Image

        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    except OSError as e:
        raise ManifestError(f"{path}: {e}") from e
    return arr


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def load_sequence(manifest_path) -> Sequence:
    """Load a sequence manifest and everything it references.

    Raises:
        ManifestError: On missing/malformed fields or files; messages name
            the offending frame.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ManifestError(f"{manifest_path}: {e}") from e
    if not isinstance(doc, dict) or "frames" not in doc:
        raise ManifestError(f"{manifest_path}: manifest must be an object with 'frames'")

    views, gt = [], {}
    seen = set()
    for i, frame in enumerate(doc["frames"]):
        try:
            frame_id = frame["id"]
            image_rel = frame["image"]
            intr = frame["intrinsics"]
            intrinsics = CameraIntrinsics(
                fx=float(intr["fx"]),
                fy=float(intr["fy"]),
                cx=float(intr["cx"]),
                cy=float(intr["cy"]),
            )
            rotation = np.asarray(frame["rotation"], dtype=np.float64)
            translation = np.asarray(frame["translation"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"{manifest_path}: frame {i}: {e!r}") from e
        if frame_id in seen:
            raise ManifestError(f"{manifest_path}: duplicate frame id {frame_id!r}")
        seen.add(frame_id)
        image = load_image(root / image_rel)
        try:
            pose = CameraPose(rotation, translation)
            views.append(CameraView(frame_id, image, intrinsics, pose))
        except MVStereoError as e:
            raise ManifestError(f"{manifest_path}: frame {frame_id!r}: {e}") from e
        if frame.get("gt_disparity"):
            gt_map = load_disparity(root / frame["gt_disparity"])
            if gt_map.shape != image.shape[:2]:
                raise ManifestError(
                    f"{manifest_path}: frame {frame_id!r}: ground truth shape "
                    f"{gt_map.shape} does not match image {image.shape[:2]}"
                )
            gt[frame_id] = gt_map

    points = []
    if doc.get("sparse_points"):
        points_path = root / doc["sparse_points"]
        try:
            with open(points_path, "r", encoding="utf-8") as f:
                pdoc = json.load(f)
            for entry in pdoc["points"]:
                observers = frozenset(entry["observers"])
                unknown = observers - seen
                if unknown:
                    raise ManifestError(
                        f"{points_path}: point observes unknown frames {sorted(unknown)}"
                    )
                points.append(SparsePoint(np.asarray(entry["position"]), observers))
        except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            raise ManifestError(f"{points_path}: {e!r}") from e
    return Sequence(views=views, gt=gt, points=points)


def save_sequence(root, views, gt=None, points=None) -> Path:
    """Write a sequence to ``root`` and return the manifest path.

    Images go to ``images/<id>.npy`` (lossless float32), ground truth to
    ``gt/<id>.pfm``, sparse points to ``points.json``.
    """
    root = Path(root)
    gt = gt or {}
    (root / "images").mkdir(parents=True, exist_ok=True)
    if gt:
        (root / "gt").mkdir(exist_ok=True)
    frames = []
    for view in views:
        image_rel = f"images/{view.id}.npy"
        np.save(root / image_rel, view.image)
        frame = {
            "id": view.id,
            "image": image_rel,
            "intrinsics": {
                "fx": view.intrinsics.fx,
                "fy": view.intrinsics.fy,
                "cx": view.intrinsics.cx,
                "cy": view.intrinsics.cy,
            },
            "rotation": view.pose.rotation.tolist(),
            "translation": view.pose.translation.tolist(),
        }
        if view.id in gt:
            gt_rel = f"gt/{view.id}.pfm"
            save_disparity(root / gt_rel, gt[view.id])
            frame["gt_disparity"] = gt_rel
        frames.append(frame)
    doc = {"frames": frames}
    if points:
        pdoc = {
            "points": [
                {"position": p.position.tolist(), "observers": sorted(p.observers)}
                for p in points
            ]
        }
        with open(root / "points.json", "w", encoding="utf-8") as f:
            json.dump(pdoc, f, indent=1, sort_keys=True)
        doc["sparse_points"] = "points.json"
    manifest_path = root / "manifest.json"
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
    return manifest_path


# ---------------------------------------------------------------------------
# Result archives
# ---------------------------------------------------------------------------

def save_volume(path, volume: PlaneSweepVolume, grid: DisparityGrid) -> None:
    np.savez_compressed(
        path,
        kind="plane_sweep_volume",
        version=FORMAT_VERSION,
        ref_id=volume.ref_id,
        neighbor_ids=np.asarray(volume.neighbor_ids),
        data=volume.data,
        mask=volume.mask,
        grid_values=grid.values,
    )


def _open_archive(path, expected_kind: str):
    try:
        archive = np.load(path)
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as e:
        raise ArchiveError(f"{path}: {e}") from e
    if "kind" not in archive or str(archive["kind"]) != expected_kind:
        raise ArchiveError(f"{path}: not a {expected_kind} archive")
    version = int(archive["version"])
    if version != FORMAT_VERSION:
        raise ArchiveError(
            f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    return archive


def load_volume(path):
    """Load a volume archive. Returns ``(PlaneSweepVolume, DisparityGrid)``."""
    archive = _open_archive(path, "plane_sweep_volume")
    try:
        values = archive["grid_values"]
        grid = DisparityGrid(
            levels=len(values), delta=float(values[-1]) / (len(values) - 1), values=values
        )
        volume = PlaneSweepVolume(
            ref_id=str(archive["ref_id"]),
            neighbor_ids=tuple(str(s) for s in archive["neighbor_ids"]),
            data=archive["data"],
            mask=archive["mask"],
        )
    except (KeyError, ValueError) as e:
        raise ArchiveError(f"{path}: {e!r}") from e
    if volume.levels != grid.levels:
        raise ArchiveError(f"{path}: volume has {volume.levels} levels, grid {grid.levels}")
    return volume, grid


def save_distribution(path, dist: DisparityDistribution, ref_id: str = "") -> None:
    np.savez_compressed(
        path,
        kind="disparity_distribution",
        version=FORMAT_VERSION,
        ref_id=ref_id,
        probs=dist.probs,
        grid_values=dist.grid.values,
    )


def load_distribution(path) -> DisparityDistribution:
    archive = _open_archive(path, "disparity_distribution")
    try:
        values = archive["grid_values"]
        grid = DisparityGrid(
            levels=len(values), delta=float(values[-1]) / (len(values) - 1), values=values
        )
        return DisparityDistribution(probs=archive["probs"], grid=grid)
    except (KeyError, ValueError) as e:
        raise ArchiveError(f"{path}: {e!r}") from e
