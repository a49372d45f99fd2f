"""Sweep contracts: grids, neighbor ranking, disparity estimates, volumes."""

import numpy as np
import pytest

from mvstereo.errors import (
    DataError,
    InsufficientFeaturesError,
    InsufficientViewsError,
    VolumeBudgetError,
)
from mvstereo.geometry import CameraIntrinsics, CameraPose, CameraView
from mvstereo.sweep import (
    DisparityGrid,
    PlaneSweepVolume,
    SparsePoint,
    build_volume,
    estimate_max_disparity,
    make_disparity_grid,
    select_neighbors,
    volume_nbytes,
)

# Power-of-two intrinsics and half-pixel centers keep shift homographies exact
# in float arithmetic, so slice tests can assert bitwise equality.
INTR = CameraIntrinsics(fx=128.0, fy=128.0, cx=63.5, cy=31.5)


def checker_image(h, w, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(0.05, 0.95, size=(h, w, 3)).astype(np.float32)


def make_view(view_id, tra=(0.0, 0.0, 0.0), rot=None, image=None, h=64, w=128):
    image = checker_image(h, w, seed=abs(hash(view_id)) % 1000) if image is None else image
    rot = np.eye(3) if rot is None else rot
    return CameraView(view_id, image, INTR, CameraPose(rot, np.asarray(tra, dtype=float)))


class TestDisparityGrid:
    def test_five_levels_unit_max(self):
        grid = make_disparity_grid(1.0, 5)
        assert np.array_equal(grid.values, [0.0, 0.25, 0.5, 0.75, 1.0])
        assert grid.delta == 0.25

    def test_endpoint_is_bit_exact(self):
        for dmax in (0.7, 1.0 / 3.0, 0.123456789, 2.5):
            grid = make_disparity_grid(dmax, 100)
            assert grid.values[-1] == dmax
            assert grid.values[0] == 0.0
            assert np.isclose(grid.delta * (grid.levels - 1), dmax, rtol=1e-12)

    def test_doubling_interval_count_halves_delta_exactly(self):
        grid = make_disparity_grid(0.7, 8)
        fine = make_disparity_grid(0.7, 2 * 8 - 1)
        assert fine.delta == grid.delta / 2.0
        assert fine.values[0] == grid.values[0]
        assert fine.values[-1] == grid.values[-1]

    def test_validation(self):
        with pytest.raises(ValueError):
            make_disparity_grid(0.0, 8)
        with pytest.raises(ValueError):
            make_disparity_grid(-1.0, 8)
        with pytest.raises(ValueError):
            make_disparity_grid(1.0, 1)
        with pytest.raises(ValueError):
            DisparityGrid(levels=3, delta=0.5, values=np.array([0.0, 0.6, 0.5]))


class TestSelectNeighbors:
    def _points(self):
        # Shared-with-ref counts: a=3, b=1, c=2, d=2.
        specs = [
            ("ref", "a"),
            ("ref", "a", "c"),
            ("ref", "a", "d"),
            ("ref", "b", "c", "d"),
            ("a", "b"),  # not seen by ref, must not count
        ]
        return [SparsePoint(np.array([0.0, 0.0, 2.0]), frozenset(s)) for s in specs]

    def test_ranked_by_shared_count_then_id(self):
        views = [make_view(i, h=8, w=8) for i in ("ref", "a", "b", "c", "d")]
        picked = select_neighbors(views, "ref", 3, self._points())
        assert [v.id for v in picked] == ["a", "c", "d"]  # c before d on id tie

    def test_zero_shared_points_still_selectable(self):
        views = [make_view(i, h=8, w=8) for i in ("ref", "a", "b")]
        picked = select_neighbors(views, "ref", 2, [])
        assert [v.id for v in picked] == ["a", "b"]

    def test_insufficient_views(self):
        views = [make_view(i, h=8, w=8) for i in ("ref", "a")]
        with pytest.raises(InsufficientViewsError):
            select_neighbors(views, "ref", 2, [])

    def test_unknown_reference(self):
        views = [make_view("a", h=8, w=8)]
        with pytest.raises(DataError):
            select_neighbors(views, "nope", 1, [])


class TestEstimateMaxDisparity:
    def _setup(self):
        ref = make_view("ref", h=8, w=8)
        depths = [2.0, 4.0, 8.0]  # disparities 0.5, 0.25, 0.125
        points = [
            SparsePoint(np.array([0.0, 0.0, z]), frozenset({"ref", "other"}))
            for z in depths
        ]
        return ref, points

    def test_default_quantile_takes_maximum(self):
        ref, points = self._setup()
        assert estimate_max_disparity(points, ref) == 0.5

    def test_intermediate_quantile(self):
        ref, points = self._setup()
        # ascending disparities [0.125, 0.25, 0.5]; ceil(0.5 * 3) - 1 = 1
        assert estimate_max_disparity(points, ref, quantile=0.5) == 0.25
        # ceil(0.01 * 3) - 1 = 0
        assert estimate_max_disparity(points, ref, quantile=0.01) == 0.125

    def test_points_behind_camera_skipped(self):
        ref, points = self._setup()
        points.append(SparsePoint(np.array([0.0, 0.0, -1.0]), frozenset({"ref"})))
        assert estimate_max_disparity(points, ref) == 0.5

    def test_unobserved_points_ignored(self):
        ref, _ = self._setup()
        points = [SparsePoint(np.array([0.0, 0.0, 1.0]), frozenset({"other"}))]
        with pytest.raises(InsufficientFeaturesError):
            estimate_max_disparity(points, ref)

    def test_quantile_domain(self):
        ref, points = self._setup()
        for q in (0.0, -0.5, 1.5):
            with pytest.raises(ValueError):
                estimate_max_disparity(points, ref, quantile=q)


class TestBuildVolume:
    def test_identical_neighbor_gives_normalized_reference_everywhere(self):
        image = checker_image(32, 48, seed=3)
        ref = make_view("ref", image=image, h=32, w=48)
        twin = make_view("twin", image=image, h=32, w=48)
        grid = make_disparity_grid(0.5, 4)
        vol = build_volume(ref, [twin], grid)
        expected = image.astype(np.float32) - np.float32(0.5)
        assert vol.mask.all()
        for level in range(grid.levels):
            assert np.array_equal(vol.data[0, level], expected)

    def test_pure_translation_level_zero_equals_normalized_neighbor(self):
        ref = make_view("ref")
        nbr = make_view("nbr", tra=(-0.4, 0.2, 0.0))
        grid = make_disparity_grid(0.5, 4)
        vol = build_volume(ref, [nbr], grid)
        expected = nbr.image - np.float32(0.5)
        assert vol.mask[0, 0].all()
        assert np.array_equal(vol.data[0, 0], expected)

    def test_sideways_neighbor_shifts_columns_exactly(self):
        # fx * d * tx = 128 * 0.5 * (-0.25) = -16: all powers of two, so the
        # homography translation is exactly -16 and sampling is integer.
        ref = make_view("ref")
        nbr = make_view("nbr", tra=(-0.25, 0.0, 0.0))
        grid = make_disparity_grid(0.5, 2)  # levels at 0 and 0.5
        vol = build_volume(ref, [nbr], grid)
        nrm = nbr.image - np.float32(0.5)
        shift = 16
        assert np.array_equal(vol.data[0, 1, :, shift:], nrm[:, :-shift])
        assert vol.mask[0, 1, :, shift:].all()
        assert not vol.mask[0, 1, :, :shift].any()
        assert np.all(vol.data[0, 1, :, :shift] == 0.0)

    def test_reordering_neighbors_permutes_first_axis_only(self):
        ref = make_view("ref")
        a = make_view("a", tra=(-0.2, 0.0, 0.0))
        b = make_view("b", tra=(0.3, 0.1, 0.0))
        grid = make_disparity_grid(0.4, 3)
        fwd = build_volume(ref, [a, b], grid)
        rev = build_volume(ref, [b, a], grid)
        assert fwd.neighbor_ids == ("a", "b") and rev.neighbor_ids == ("b", "a")
        assert np.array_equal(fwd.data[0], rev.data[1])
        assert np.array_equal(fwd.data[1], rev.data[0])
        assert np.array_equal(fwd.mask[0], rev.mask[1])

    def test_window_matches_crop_of_full_volume(self):
        ref = make_view("ref")
        nbr = make_view("nbr", tra=(-0.2, 0.05, 0.0))
        grid = make_disparity_grid(0.5, 3)
        full = build_volume(ref, [nbr], grid)
        win = build_volume(ref, [nbr], grid, window=(8, 24, 16, 32))
        assert np.array_equal(win.data[0], full.data[0][:, 8:24, 24:56])
        assert np.array_equal(win.mask[0], full.mask[0][:, 8:24, 24:56])

    def test_window_bounds_checked(self):
        ref = make_view("ref")
        nbr = make_view("nbr", tra=(-0.2, 0.0, 0.0))
        grid = make_disparity_grid(0.5, 2)
        with pytest.raises(ValueError):
            build_volume(ref, [nbr], grid, window=(60, 0, 16, 16))

    def test_values_in_range_and_zero_where_masked(self):
        ref = make_view("ref")
        nbr = make_view("nbr", tra=(-0.3, 0.0, 0.0), rot=None)
        grid = make_disparity_grid(0.8, 5)
        vol = build_volume(ref, [nbr], grid)
        assert vol.data.min() >= -0.5 and vol.data.max() <= 0.5
        assert np.all(vol.data[~vol.mask] == 0.0)
        assert not vol.mask.all()  # the sweep must push something off-frame

    def test_memory_budget_refusal(self):
        ref = make_view("ref")
        nbr = make_view("nbr", tra=(-0.2, 0.0, 0.0))
        grid = make_disparity_grid(0.5, 4)
        needed = volume_nbytes(1, 4, 64, 128)
        with pytest.raises(VolumeBudgetError):
            build_volume(ref, [nbr], grid, max_bytes=needed - 1)
        build_volume(ref, [nbr], grid, max_bytes=needed)  # exactly enough

    def test_duplicate_or_reference_neighbor_rejected(self):
        ref = make_view("ref")
        nbr = make_view("nbr", tra=(-0.2, 0.0, 0.0))
        grid = make_disparity_grid(0.5, 2)
        with pytest.raises(DataError):
            build_volume(ref, [nbr, nbr], grid)
        with pytest.raises(DataError):
            build_volume(ref, [ref], grid)
        with pytest.raises(InsufficientViewsError):
            build_volume(ref, [], grid)

    def test_volume_shape_validation(self):
        with pytest.raises(ValueError):
            PlaneSweepVolume(
                ref_id="r",
                neighbor_ids=("a",),
                data=np.zeros((1, 2, 4, 4, 3), dtype=np.float32),
                mask=np.zeros((1, 2, 4, 5), dtype=bool),
            )
