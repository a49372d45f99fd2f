"""Overfit the stage-1 network on a single labeled sample.

Builds one training sample from a rendered scene (volume + quantized
ground-truth labels), runs a few hundred optimization steps, and reports
argmax accuracy against the labels before and after. Finishes by carrying
the learned weights into a stage-2 model the way a real two-stage run would.
"""

import logging
from pathlib import Path

import numpy as np
import torch

from mvstereo import (
    build_volume,
    estimate_max_disparity,
    generate_scene,
    make_disparity_grid,
    preset_scene,
    select_neighbors,
)
from mvstereo.network import NetworkConfig, init_model, save_checkpoint
from mvstereo.training import LabeledSample, TrainConfig, quantize_gt, train_stage, transfer_weights

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
OUT = Path(__file__).resolve().parent / "out"
CONFIG = NetworkConfig(levels=8, scale=0.125)


def accuracy(model, sample) -> float:
    with torch.no_grad():
        ref = torch.from_numpy(np.ascontiguousarray(sample.ref_image.transpose(2, 0, 1)))
        vol = torch.from_numpy(np.ascontiguousarray(sample.volume.data.transpose(0, 1, 4, 2, 3)))
        pred = model(ref, vol).numpy().argmax(axis=0)
    return float((pred[sample.valid] == sample.labels[sample.valid]).mean())


def main():
    OUT.mkdir(exist_ok=True)
    views, gt, points = generate_scene(preset_scene("layers", width=48, height=32, seed=5))
    ref = views[2]
    neighbors = select_neighbors(views, ref.id, 2, points)
    grid = make_disparity_grid(estimate_max_disparity(points, ref), CONFIG.levels)
    labels, valid = quantize_gt(gt[ref.id], grid)
    volume = build_volume(ref, neighbors, grid)
    sample = LabeledSample(ref.image, volume, labels, valid, grid, ref_id=ref.id)

    model = init_model(CONFIG, stage=1, seed=0)
    print(f"argmax accuracy before training: {accuracy(model, sample):.3f}")

    config = TrainConfig.for_stage(1, iterations=300, learning_rate=1e-3)
    trace, adam = train_stage(sample, model, config, seed=0)
    print(f"loss: {trace[0][1]:.4f} -> {trace[-1][1]:.6f} over {len(trace)} steps")
    print(f"argmax accuracy after training:  {accuracy(model, sample):.3f}")

    with open(OUT / "toy_loss_trace.txt", "w", encoding="utf-8") as fh:
        fh.write("step\tloss\n")
        for step, loss in trace:
            fh.write(f"{step}\t{loss:.8f}\n")
    save_checkpoint(OUT / "toy_stage1.npz", model, step=len(trace), adam_state=adam)

    stage2 = init_model(CONFIG, stage=2, seed=1)
    source = {name: p.detach().numpy().copy() for name, p in model.named_parameters()}
    transferred, fresh = transfer_weights(source, stage2)
    print(f"stage-2 handoff: {len(transferred)} tensors transferred, {len(fresh)} fresh")
    print(f"checkpoint: {OUT / 'toy_stage1.npz'}")


if __name__ == "__main__":
    main()
