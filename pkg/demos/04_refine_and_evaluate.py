"""CRF refinement and the evaluation stack on a corrupted prediction.

Starts from ground truth turned into a sharp disparity distribution, corrupts
a fifth of the pixels, and lets mean-field refinement pull them back using
image appearance. Reports geometric error, rephotography error, and
completeness curves before and after, and plots both curves.
"""

import logging
from pathlib import Path

import numpy as np

from mvstereo import (
    CrfParams,
    DisparityDistribution,
    argmax_disparity,
    completeness_curve,
    crf_refine,
    estimate_max_disparity,
    generate_scene,
    geometric_error,
    make_disparity_grid,
    photometric_error,
    preset_scene,
    save_curve,
    select_neighbors,
)
from mvstereo import cli
from mvstereo.training import quantize_gt

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
OUT = Path(__file__).resolve().parent / "out"
THRESHOLDS = [0.005, 0.01, 0.02, 0.05, 0.1]


def report(tag, pred, gt, ref, neighbors):
    geo = geometric_error(pred, gt)
    photo = photometric_error(pred, ref, neighbors)
    errors = np.abs(pred.values.astype(np.float64) - gt.values.astype(np.float64))
    curve = completeness_curve(errors, pred.valid & gt.valid, THRESHOLDS)
    print(f"{tag}: geometric {geo:.4f}, photometric {photo:.4f}, "
          f"completeness@0.02 {curve.fractions[2]:.3f}")
    return curve


def main():
    OUT.mkdir(exist_ok=True)
    views, gt_maps, points = generate_scene(preset_scene("boxes", width=64, height=48, seed=7))
    ref = views[len(views) // 2]
    neighbors = select_neighbors(views, ref.id, 3, points)
    gt = gt_maps[ref.id]

    grid = make_disparity_grid(estimate_max_disparity(points, ref), 12)
    labels, valid = quantize_gt(gt, grid)

    # A nearly one-hot distribution at the true labels, then 20% corruption.
    rng = np.random.default_rng(0)
    noisy = labels.copy()
    corrupt = rng.random(labels.shape) < 0.2
    noisy[corrupt] = rng.integers(0, grid.levels, size=int(corrupt.sum()))
    probs = np.full(labels.shape + (grid.levels,), 0.1 / (grid.levels - 1), dtype=np.float32)
    np.put_along_axis(probs, noisy[:, :, None], 0.9, axis=2)
    dist = DisparityDistribution(probs / probs.sum(axis=2, keepdims=True), grid)

    raw = argmax_disparity(dist)
    raw_curve = report("corrupted", raw, gt, ref, neighbors)

    refined = crf_refine(dist, ref, CrfParams(iterations=8))
    out = argmax_disparity(refined)
    refined_curve = report("refined  ", out, gt, ref, neighbors)

    save_curve(OUT / "corrupted_curve.txt", raw_curve)
    save_curve(OUT / "refined_curve.txt", refined_curve)
    rc = cli.main([
        "plot", str(OUT / "corrupted_curve.txt"), str(OUT / "refined_curve.txt"),
        "--out", str(OUT / "refinement_curves.png"), "--labels", "corrupted,refined",
        "--title", "CRF refinement",
    ])
    assert rc == 0
    print(f"plot: {OUT / 'refinement_curves.png'}")


if __name__ == "__main__":
    main()
