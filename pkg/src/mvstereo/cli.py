"""Command line entry points.

One executable, seven subcommands: gen-scene, sweep, train, predict, refine,
evaluate, plot. Options resolve as flag > config file > built-in default; the
config file is JSON with ``network``, ``train``, ``crf`` and ``sweep``
sections and is found via ``--config`` or the ``MVSTEREO_CONFIG`` environment
variable.

Exit codes: 0 success, 1 usage error, 2 data error (bad or inconsistent
inputs), 3 numerical failure. Module errors print as one-line diagnostics;
tracebacks are reserved for bugs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .crf import CrfParams, crf_refine
from .data import (
    load_disparity,
    load_distribution,
    load_sequence,
    load_volume,
    save_disparity,
    save_distribution,
    save_sequence,
    save_volume,
)
from .errors import ConfigError, DataError, MVStereoError, NumericalError
from .metrics import (
    completeness_curve,
    geometric_error,
    load_curve,
    photometric_error,
    save_curve,
)
from .network import (
    NetworkConfig,
    init_model,
    load_checkpoint,
    load_model,
    save_checkpoint,
    tile_predict,
)
from .render import generate_scene, preset_scene
from .sweep import (
    DEFAULT_MEMORY_BUDGET,
    argmax_disparity,
    build_volume,
    estimate_max_disparity,
    make_disparity_grid,
    select_neighbors,
)
from .training import TrainConfig, train_stage, transfer_weights

logger = logging.getLogger(__name__)

CONFIG_ENV = "MVSTEREO_CONFIG"
DEFAULT_LEVELS = 100
DEFAULT_NEIGHBORS = 4
DEFAULT_QUANTILE = 1.0
DEFAULT_THRESHOLDS = "0.002,0.005,0.01,0.02,0.05,0.1,0.2"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

CONFIG_SECTIONS = ("network", "train", "crf", "sweep")


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures on exit code 1 instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------

def _load_config(path) -> dict:
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    unknown = sorted(set(doc) - set(CONFIG_SECTIONS))
    if unknown:
        raise ConfigError(f"config {path} has unknown sections {unknown}")
    for name in CONFIG_SECTIONS:
        if name in doc and not isinstance(doc[name], dict):
            raise ConfigError(f"config section {name!r} must be a JSON object")
    return doc


def _section(doc: dict, name: str, allowed) -> dict:
    sec = dict(doc.get(name, {}))
    unknown = sorted(set(sec) - set(allowed))
    if unknown:
        raise ConfigError(f"config section {name!r} has unknown keys {unknown}")
    return sec


def _pick(flag, sec: dict, key: str, default):
    if flag is not None:
        return flag
    if key in sec:
        return sec[key]
    return default


def _sweep_options(args, doc):
    sec = _section(doc, "sweep", ("neighbors", "levels", "quantile"))
    neighbors = int(_pick(getattr(args, "neighbors", None), sec, "neighbors", DEFAULT_NEIGHBORS))
    levels = int(_pick(getattr(args, "levels", None), sec, "levels", DEFAULT_LEVELS))
    quantile = float(_pick(getattr(args, "quantile", None), sec, "quantile", DEFAULT_QUANTILE))
    return neighbors, levels, quantile


def _network_config(args, doc) -> NetworkConfig:
    allowed = tuple(f.name for f in fields(NetworkConfig))
    sec = _section(doc, "network", allowed)
    if getattr(args, "levels", None) is not None:
        sec["levels"] = args.levels
    elif "levels" not in sec:
        sec["levels"] = DEFAULT_LEVELS
    if getattr(args, "scale", None) is not None:
        sec["scale"] = args.scale
    try:
        return NetworkConfig(**sec)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad network configuration: {e}") from e


def _check_network_section(doc, config: NetworkConfig, source: str) -> None:
    """Cross-check a checkpoint's architecture against the config file."""
    allowed = tuple(f.name for f in fields(NetworkConfig))
    sec = _section(doc, "network", allowed)
    for key, value in sec.items():
        actual = getattr(config, key)
        wanted = tuple(value) if isinstance(actual, tuple) else type(actual)(value)
        if actual != wanted:
            raise ConfigError(
                f"config wants network.{key} = {wanted!r} but {source} has {actual!r}"
            )


def _train_config(args, doc) -> TrainConfig:
    allowed = tuple(f.name for f in fields(TrainConfig))
    sec = _section(doc, "train", allowed)
    overrides = dict(sec)
    for flag, key in (
        ("iterations", "iterations"),
        ("learning_rate", "learning_rate"),
        ("grad_clip", "grad_clip"),
        ("patch", "patch"),
        ("quantile", "quantile"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "neighbor_counts", None) is not None:
        overrides["neighbor_counts"] = _int_list(args.neighbor_counts, "--neighbor-counts")
    file_stage = overrides.pop("stage", None)
    if file_stage is not None and int(file_stage) != args.stage:
        raise ConfigError(f"config wants stage {file_stage} but --stage {args.stage} given")
    try:
        return TrainConfig.for_stage(args.stage, **overrides)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad train configuration: {e}") from e


def _crf_params(args, doc) -> CrfParams:
    allowed = tuple(f.name for f in fields(CrfParams))
    sec = _section(doc, "crf", allowed)
    if getattr(args, "crf_iterations", None) is not None:
        sec["iterations"] = args.crf_iterations
    try:
        return CrfParams(**sec)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad crf configuration: {e}") from e


def _int_list(text: str, flag: str):
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError as e:
        raise ConfigError(f"{flag} wants comma-separated integers, got {text!r}") from e


def _float_list(text: str, flag: str):
    try:
        return [float(part) for part in text.split(",")]
    except ValueError as e:
        raise ConfigError(f"{flag} wants comma-separated numbers, got {text!r}") from e


def _load_sequence_arg(path):
    p = Path(path)
    return load_sequence(p / "manifest.json" if p.is_dir() else p)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen_scene(args) -> int:
    overrides = {}
    for name in ("num_views", "width", "height", "seed", "baseline", "trajectory"):
        value = getattr(args, name)
        if value is not None:
            overrides[name] = value
    spec = preset_scene(args.preset, **overrides)
    views, gt, points = generate_scene(spec)
    manifest = save_sequence(args.out, views, gt, points)
    logger.info("wrote %d views to %s", len(views), args.out)
    print(manifest)
    return EXIT_OK


def cmd_sweep(args) -> int:
    doc = _load_config(args.config)
    neighbors, levels, quantile = _sweep_options(args, doc)
    seq = _load_sequence_arg(args.sequence)
    ref = seq.view(args.ref)
    chosen = select_neighbors(seq.views, args.ref, neighbors, seq.points)
    max_disparity = estimate_max_disparity(seq.points, ref, quantile)
    grid = make_disparity_grid(max_disparity, levels)
    volume = build_volume(ref, chosen, grid, max_bytes=args.max_bytes)
    save_volume(args.out, volume, grid)
    logger.info(
        "swept %s against %s over %d levels (max disparity %.5f)",
        args.ref, [v.id for v in chosen], levels, max_disparity,
    )
    print(args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    doc = _load_config(args.config)
    net_config = _network_config(args, doc)
    train_config = _train_config(args, doc)
    sequences = [_load_sequence_arg(p) for p in args.sequence]
    weights = _float_list(args.weights, "--weights") if args.weights else None

    start_step = 0
    adam_state = None
    if args.resume is not None:
        model, stage, start_step, adam_state = load_model(
            args.resume, expected_config=net_config
        )
        if stage != args.stage:
            raise ConfigError(
                f"checkpoint {args.resume} is stage {stage}, requested stage {args.stage}"
            )
        logger.info("resuming from %s at step %d", args.resume, start_step)
    else:
        model = init_model(
            net_config,
            stage=args.stage,
            seed=args.seed,
            extractor_weights=args.extractor_weights,
        )
        if args.init_from is not None:
            _, _, _, params, _ = load_checkpoint(args.init_from)
            transferred, fresh = transfer_weights(params, model)
            logger.info(
                "transferred %d tensors from %s, %d fresh",
                len(transferred), args.init_from, len(fresh),
            )

    trace_file = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        sink = None
        if trace_file is not None:
            def sink(step, loss):
                trace_file.write(f"{step}\t{loss:.8f}\n")
        trace, adam_state = train_stage(
            sequences,
            model,
            train_config,
            seed=args.seed,
            weights=weights,
            start_step=start_step,
            adam_state=adam_state,
            trace_sink=sink,
            checkpoint_every=args.checkpoint_every,
            checkpoint_path=args.out if args.checkpoint_every else None,
        )
    finally:
        if trace_file is not None:
            trace_file.close()
    final_step = trace[-1][0] + 1 if trace else start_step
    save_checkpoint(args.out, model, step=final_step, adam_state=adam_state)
    logger.info("saved stage-%d checkpoint at step %d to %s", args.stage, final_step, args.out)
    print(args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    doc = _load_config(args.config)
    neighbors, _, quantile = _sweep_options(args, doc)
    seq = _load_sequence_arg(args.sequence)
    ref = seq.view(args.ref)
    model, _, _, _ = load_model(args.checkpoint)
    _check_network_section(doc, model.config, f"checkpoint {args.checkpoint}")

    chosen = select_neighbors(seq.views, args.ref, neighbors, seq.points)
    max_disparity = estimate_max_disparity(seq.points, ref, quantile)
    grid = make_disparity_grid(max_disparity, model.config.levels)
    dist = tile_predict(
        model, ref, chosen, grid,
        tile=args.tile, core=args.core, max_bytes=args.max_bytes,
    )
    if not args.no_refine:
        dist = crf_refine(dist, ref, _crf_params(args, doc))
    disparity = argmax_disparity(dist)
    save_disparity(args.out, disparity)
    if args.distribution is not None:
        save_distribution(args.distribution, dist, ref_id=args.ref)
    logger.info("predicted %s from %d neighbors -> %s", args.ref, len(chosen), args.out)
    print(args.out)
    return EXIT_OK


def cmd_refine(args) -> int:
    doc = _load_config(args.config)
    dist = load_distribution(args.distribution)
    seq = _load_sequence_arg(args.sequence)
    ref = seq.view(args.ref)
    refined = crf_refine(dist, ref, _crf_params(args, doc))
    save_disparity(args.out, argmax_disparity(refined))
    if args.distribution_out is not None:
        save_distribution(args.distribution_out, refined, ref_id=args.ref)
    print(args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    doc = _load_config(args.config)
    neighbors, _, _ = _sweep_options(args, doc)
    pred = load_disparity(args.pred)
    seq = _load_sequence_arg(args.sequence)
    ref = seq.view(args.ref)
    if args.gt is not None:
        gt = load_disparity(args.gt)
    elif args.ref in seq.gt:
        gt = seq.gt[args.ref]
    else:
        raise DataError(f"no ground truth for frame {args.ref!r}; pass --gt")
    chosen = select_neighbors(seq.views, args.ref, neighbors, seq.points)

    geo = geometric_error(pred, gt)
    photo = photometric_error(pred, ref, chosen)
    joint = pred.valid & gt.valid
    errors = np.abs(pred.values.astype(np.float64) - gt.values.astype(np.float64))
    thresholds = _float_list(args.thresholds, "--thresholds")
    curve = completeness_curve(errors, joint, thresholds)

    print(f"geometric_error: {geo:.6f}")
    print(f"photometric_error: {photo:.6f}")
    for t, f in zip(curve.thresholds, curve.fractions):
        print(f"completeness@{t:g}: {f:.4f}")
    if args.curve_out is not None:
        save_curve(args.curve_out, curve)
        logger.info("wrote completeness curve to %s", args.curve_out)
    return EXIT_OK


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = args.labels.split(",") if args.labels else None
    if labels is not None and len(labels) != len(args.curves):
        raise ConfigError(
            f"--labels names {len(labels)} curves but {len(args.curves)} files given"
        )
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for i, path in enumerate(args.curves):
        curve = load_curve(path)
        name = labels[i] if labels else Path(path).stem
        ax.plot(curve.thresholds, curve.fractions, marker="o", label=name)
    ax.set_xlabel("error threshold (disparity)")
    ax.set_ylabel("fraction of pixels with error below")
    ax.set_ylim(0.0, 1.0)
    ax.grid(True, alpha=0.3)
    ax.legend()
    if args.title:
        ax.set_title(args.title)
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    plt.close(fig)
    print(args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_config_flag(p):
    p.add_argument(
        "--config",
        help=f"JSON config file (default: ${CONFIG_ENV} if set)",
    )


def _add_sweep_flags(p, with_levels: bool):
    p.add_argument("--neighbors", type=int, help=f"neighbor count (default {DEFAULT_NEIGHBORS})")
    if with_levels:
        p.add_argument("--levels", type=int, help=f"disparity levels (default {DEFAULT_LEVELS})")
    p.add_argument(
        "--quantile", type=float,
        help=f"sparse-disparity quantile for the grid maximum (default {DEFAULT_QUANTILE})",
    )
    p.add_argument(
        "--max-bytes", type=int, default=DEFAULT_MEMORY_BUDGET,
        help=f"volume memory budget in bytes (default {DEFAULT_MEMORY_BUDGET})",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvstereo", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", action="store_true",
                        help="log progress to stderr (default: quiet)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-scene", help="render a synthetic sequence with ground truth")
    p.add_argument("--out", required=True, help="output sequence directory")
    p.add_argument("--preset", default="layers", choices=("plane", "layers", "boxes"),
                   help="scene layout (default layers)")
    p.add_argument("--num-views", type=int, help="camera count (default 5)")
    p.add_argument("--width", type=int, help="image width (default 96)")
    p.add_argument("--height", type=int, help="image height (default 64)")
    p.add_argument("--seed", type=int, help="texture and point seed (default 0)")
    p.add_argument("--baseline", type=float, help="camera spacing (default 0.08)")
    p.add_argument("--trajectory", choices=("line", "ring"), help="camera path (default line)")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("sweep", help="build and save a plane-sweep volume")
    p.add_argument("--sequence", required=True, help="sequence directory or manifest")
    p.add_argument("--ref", required=True, help="reference frame id")
    p.add_argument("--out", required=True, help="output volume archive (.npz)")
    _add_sweep_flags(p, with_levels=True)
    _add_config_flag(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="optimize a model on labeled sequences")
    p.add_argument("--sequence", required=True, action="append",
                   help="sequence directory or manifest (repeatable)")
    p.add_argument("--out", required=True, help="output checkpoint (.npz)")
    p.add_argument("--stage", type=int, required=True, choices=(1, 2), help="training stage")
    p.add_argument("--iterations", type=int, help="total steps (default 320000)")
    p.add_argument("--learning-rate", type=float, help="Adam learning rate (stage default)")
    p.add_argument("--grad-clip", type=float, help="per-layer L2 bound (stage default)")
    p.add_argument("--patch", type=int, help="training patch size (default 64)")
    p.add_argument("--neighbor-counts", help="comma list of neighbor counts (default 1,2,3,4)")
    p.add_argument("--quantile", type=float,
                   help=f"disparity quantile for grids (default {DEFAULT_QUANTILE})")
    p.add_argument("--levels", type=int, help=f"disparity levels (default {DEFAULT_LEVELS})")
    p.add_argument("--scale", type=float, help="width multiplier for all layers (default 1.0)")
    p.add_argument("--seed", type=int, default=0, help="sampling and init seed (default 0)")
    p.add_argument("--weights",
                   help="comma list of per-sequence sampling weights (default: uniform)")
    p.add_argument("--resume", help="continue from this checkpoint (default: fresh init)")
    p.add_argument("--init-from",
                   help="seed matching layers from this checkpoint (default: none)")
    p.add_argument("--extractor-weights",
                   help="frozen feature extractor weights .npz (default: seeded stand-in)")
    p.add_argument("--checkpoint-every", type=int,
                   help="write the checkpoint every K steps (default: only at the end)")
    p.add_argument("--trace",
                   help="write tab-separated per-step losses here (default: no trace)")
    _add_config_flag(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict a disparity map with a trained model")
    p.add_argument("--sequence", required=True, help="sequence directory or manifest")
    p.add_argument("--ref", required=True, help="reference frame id")
    p.add_argument("--checkpoint", required=True, help="model checkpoint (.npz)")
    p.add_argument("--out", required=True, help="output disparity file (.pfm)")
    p.add_argument("--distribution",
                   help="also save the full distribution .npz (default: not saved)")
    p.add_argument("--no-refine", action="store_true",
                   help="skip the CRF refinement (default: refinement on)")
    p.add_argument("--crf-iterations", type=int, help="mean-field iterations (default 10)")
    p.add_argument("--tile", type=int, default=128, help="inference tile size (default 128)")
    p.add_argument("--core", type=int, default=64,
                   help="retained center size per tile (default 64)")
    _add_sweep_flags(p, with_levels=False)
    _add_config_flag(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("refine", help="apply CRF refinement to a saved distribution")
    p.add_argument("--distribution", required=True, help="input distribution archive (.npz)")
    p.add_argument("--sequence", required=True, help="sequence directory or manifest")
    p.add_argument("--ref", required=True, help="reference frame id")
    p.add_argument("--out", required=True, help="output disparity file (.pfm)")
    p.add_argument("--distribution-out",
                   help="also save the refined distribution .npz (default: not saved)")
    p.add_argument("--crf-iterations", type=int, help="mean-field iterations (default 10)")
    _add_config_flag(p)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("evaluate", help="score a prediction against ground truth")
    p.add_argument("--pred", required=True, help="predicted disparity file (.pfm)")
    p.add_argument("--sequence", required=True, help="sequence directory or manifest")
    p.add_argument("--ref", required=True, help="reference frame id")
    p.add_argument("--gt", help="ground-truth disparity file (default: from the sequence)")
    p.add_argument("--thresholds", default=DEFAULT_THRESHOLDS,
                   help=f"comma list for the completeness curve (default {DEFAULT_THRESHOLDS})")
    p.add_argument("--curve-out",
                   help="write the completeness curve to this file (default: print only)")
    p.add_argument("--neighbors", type=int,
                   help=f"neighbors for rephotography (default {DEFAULT_NEIGHBORS})")
    _add_config_flag(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot", help="plot completeness curves to an image")
    p.add_argument("curves", nargs="+", help="curve files from evaluate --curve-out")
    p.add_argument("--out", required=True, help="output image file")
    p.add_argument("--labels", help="comma list of legend labels (default: file stems)")
    p.add_argument("--title", help="plot title (default: none)")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except NumericalError as e:
        print(f"mvstereo {args.command}: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except MVStereoError as e:
        print(f"mvstereo {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
