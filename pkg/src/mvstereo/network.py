"""Learned multi-view matching network.

Pipeline per reference image: a shared patch embedder scores each
(neighbor, disparity-level) slice of the plane-sweep volume against the
reference; a U-shaped aggregator refines the per-neighbor score volume with
multi-scale semantic context from a frozen feature extractor; an elementwise
max pools the per-neighbor volumes into one (so any number of neighbors
works); two final convolutions emit one score per disparity level.

SELU follows every convolution except the last prediction layer. All widths
derive from ``NetworkConfig`` and shrink uniformly through ``scale`` so a toy
copy of the architecture runs in tests. Spatial sizes follow a
ceil-halving/upsample-then-crop scheme, so arbitrary input sizes (down to
16 x 16) pass through the five-level aggregator.
"""

from __future__ import annotations

import json
import logging
import math
import zipfile
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, NonFiniteError
from .geometry import CameraView
from .ops import (
    bilinear_upsample2x,
    cross_entropy,
    max_over_set,
    require_finite,
    softmax_over_levels,
)
from .sweep import (
    DEFAULT_MEMORY_BUDGET,
    DisparityDistribution,
    DisparityGrid,
    PlaneSweepVolume,
    build_volume,
)

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
# Stand-in seed for the frozen extractor when no converted weights are given;
# fixed so every freshly built model shares the same "pretrained" features.
DEFAULT_EXTRACTOR_SEED = 7919

# Frozen extractor geometry: (block, convs in block, width); taps come from
# the second convolution of each block, at scales 1, 1/2, 1/4, 1/8, 1/16.
EXTRACTOR_BLOCKS = ((2, 64), (2, 128), (4, 256), (4, 512), (2, 512))
EXTRACTOR_FEATURE_SCALE = 0.01


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters.

    ``scale`` multiplies every trained width (``max(1, round(w * scale))``),
    giving paper-sized networks at 1.0 and test-sized ones at 1/8. ``levels``
    is the disparity-grid resolution the network predicts over.
    """

    levels: int = 100
    scale: float = 1.0
    patch_channels: int = 64
    match_channels: int = 4
    volume_channels: int = 800
    semantic_channels: int = 64
    fuse_channels: int = 400
    encoder_channels: tuple = (128, 256, 512, 512, 512)

    def __post_init__(self):
        object.__setattr__(self, "encoder_channels", tuple(self.encoder_channels))
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if not (0.0 < self.scale <= 1.0):
            raise ValueError(f"scale must be in (0, 1], got {self.scale}")
        for name in ("patch_channels", "match_channels", "volume_channels",
                     "semantic_channels", "fuse_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if len(self.encoder_channels) != 5:
            raise ValueError("encoder_channels must list exactly 5 widths")

    def width(self, base: int) -> int:
        """Effective width of a trained layer after scaling."""
        return max(1, round(base * self.scale))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetworkConfig":
        try:
            doc = json.loads(text)
            doc["encoder_channels"] = tuple(doc["encoder_channels"])
            return cls(**doc)
        except (json.JSONDecodeError, TypeError, KeyError, ValueError) as e:
            raise CheckpointError(f"bad network config: {e!r}") from e


def toy_config(levels: int = 8) -> NetworkConfig:
    """Scale-1/8 configuration used by fast tests and demos."""
    return NetworkConfig(levels=levels, scale=0.125)


def _conv(cin, cout, kernel=3, stride=1):
    return nn.Conv2d(cin, cout, kernel, stride=stride, padding=kernel // 2)


class PatchMatcher(nn.Module):
    """Shared embedder + comparison stack producing per-slice match features."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        pc = config.width(config.patch_channels)
        mc = config.width(config.match_channels)
        self.embed = _conv(3, pc)
        self.mix1 = _conv(2 * pc, pc)
        self.mix2 = _conv(pc, pc)
        self.out = _conv(pc, mc)

    def embed_image(self, img: torch.Tensor) -> torch.Tensor:
        return torch.selu(self.embed(img))

    def compare(self, ref_emb: torch.Tensor, nbr_emb: torch.Tensor) -> torch.Tensor:
        x = torch.cat([ref_emb, nbr_emb], dim=1)
        x = torch.selu(self.mix1(x))
        x = torch.selu(self.mix2(x))
        return torch.selu(self.out(x))


class SemanticExtractor(nn.Module):
    """Frozen multi-scale feature extractor (classic 19-layer convnet geometry).

    Blocks of 3x3 conv + ReLU separated by ceil-mode 2x2 max pools; the tap
    after each block's second convolution feeds the pyramid, so taps sit at
    scales 1 through 1/16. Weights are never trained here: they are either
    seeded at random or loaded from an externally converted file.
    """

    def __init__(self):
        super().__init__()
        cin = 3
        for b, (count, width) in enumerate(EXTRACTOR_BLOCKS, start=1):
            for i in range(1, count + 1):
                setattr(self, f"conv{b}_{i}", _conv(cin, width))
                cin = width
        self.pool = nn.MaxPool2d(2, stride=2, ceil_mode=True)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, img: torch.Tensor) -> list:
        """``img``: (B, 3, H, W) in [0, 1]. Returns the five tap activations."""
        taps = []
        x = img
        for b, (count, _) in enumerate(EXTRACTOR_BLOCKS, start=1):
            for i in range(1, count + 1):
                x = torch.relu(getattr(self, f"conv{b}_{i}")(x))
                if i == 2:
                    taps.append(x)
            if b < len(EXTRACTOR_BLOCKS):
                x = self.pool(x)
        return taps

    def seed_weights(self, seed: int = DEFAULT_EXTRACTOR_SEED) -> None:
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, conv in self.named_conv_layers():
                fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
                conv.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                conv.bias.zero_()

    def named_conv_layers(self):
        for b, (count, _) in enumerate(EXTRACTOR_BLOCKS, start=1):
            for i in range(1, count + 1):
                name = f"conv{b}_{i}"
                yield name, getattr(self, name)

    def save_weights(self, path) -> None:
        arrays = {}
        for name, conv in self.named_conv_layers():
            arrays[f"{name}.weight"] = conv.weight.detach().numpy()
            arrays[f"{name}.bias"] = conv.bias.detach().numpy()
        np.savez(path, **arrays)

    def load_weights(self, path) -> None:
        try:
            archive = np.load(path)
        except (OSError, ValueError, EOFError, zipfile.BadZipFile) as e:
            raise CheckpointError(f"{path}: {e}") from e
        with torch.no_grad():
            for name, conv in self.named_conv_layers():
                for part, tensor in (("weight", conv.weight), ("bias", conv.bias)):
                    key = f"{name}.{part}"
                    if key not in archive:
                        raise CheckpointError(f"{path}: missing extractor array {key}")
                    value = archive[key]
                    if tuple(value.shape) != tuple(tensor.shape):
                        raise CheckpointError(
                            f"{path}: {key} has shape {value.shape}, expected {tuple(tensor.shape)}"
                        )
                    tensor.copy_(torch.from_numpy(value))


class PyramidReducer(nn.Module):
    """Trained 1x1 reductions bringing each extractor tap to a common width."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        sem = config.width(config.semantic_channels)
        for i, (_, width) in enumerate(EXTRACTOR_BLOCKS):
            setattr(self, f"scale{i}", _conv(width, sem, kernel=1))

    def forward(self, taps: list) -> list:
        out = []
        for i, tap in enumerate(taps):
            conv = getattr(self, f"scale{i}")
            out.append(torch.selu(conv(EXTRACTOR_FEATURE_SCALE * tap)))
        return out


class VolumeAggregator(nn.Module):
    """U-shaped refinement of the per-neighbor match volume.

    Five stride-2 encoder levels, then five decoder levels of bilinear
    upsampling, concatenation with the same-resolution encoder output and
    semantic scale, and two convolutions. The full-resolution decoder level
    has no encoder skip (the encoder starts by halving), only the semantic
    features. Spatial sizes ceil-halve on the way down and are cropped after
    each 2x upsample on the way up, so any input size >= 16 works.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.input_channels = config.width(config.match_channels) * config.levels
        enc = [config.width(w) for w in config.encoder_channels]
        sem = config.width(config.semantic_channels)
        cin = self.input_channels
        for i, width in enumerate(enc):
            setattr(self, f"enc_down{i}", _conv(cin, width, stride=2))
            setattr(self, f"enc_mix{i}", _conv(width, width))
            cin = width
        dec = [enc[3], enc[2], enc[1], enc[0], config.width(config.volume_channels)]
        skips = [enc[3], enc[2], enc[1], enc[0], 0]
        prev = enc[4]
        for i, width in enumerate(dec):
            setattr(self, f"dec_a{i}", _conv(prev + skips[i] + sem, width))
            setattr(self, f"dec_b{i}", _conv(width, width))
            prev = width

    def forward(self, match_volume: torch.Tensor, semantics: list) -> torch.Tensor:
        """``match_volume``: (N, mc*D, H, W); ``semantics``: taps at scales 1..1/16."""
        n = match_volume.shape[0]
        encoded = []
        x = match_volume
        for i in range(5):
            x = torch.selu(getattr(self, f"enc_down{i}")(x))
            x = torch.selu(getattr(self, f"enc_mix{i}")(x))
            encoded.append(x)
        # Decoder pairs: (encoder skip, semantic scale), coarse to fine.
        skips = [encoded[3], encoded[2], encoded[1], encoded[0], None]
        sems = [semantics[4], semantics[3], semantics[2], semantics[1], semantics[0]]
        x = encoded[4]
        for i in range(5):
            x = bilinear_upsample2x(x)
            sem = sems[i].expand(n, -1, -1, -1)
            th, tw = sem.shape[2], sem.shape[3]
            x = x[:, :, :th, :tw]
            parts = [x] if skips[i] is None else [x, skips[i]]
            parts.append(sem)
            x = torch.cat(parts, dim=1)
            x = torch.selu(getattr(self, f"dec_a{i}")(x))
            x = torch.selu(getattr(self, f"dec_b{i}")(x))
        return x


class FlatAggregator(nn.Module):
    """First-stage stand-in for the aggregator: two plain convolutions."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.input_channels = config.width(config.match_channels) * config.levels
        cv = config.width(config.volume_channels)
        self.flat1 = _conv(self.input_channels, cv)
        self.flat2 = _conv(cv, cv)

    def forward(self, match_volume: torch.Tensor) -> torch.Tensor:
        x = torch.selu(self.flat1(match_volume))
        return torch.selu(self.flat2(x))


class VolumePredictor(nn.Module):
    """Final prediction pair; no activation after the last layer."""

    def __init__(self, config: NetworkConfig):
        super().__init__()
        cv = config.width(config.volume_channels)
        self.mix = _conv(cv, config.width(config.fuse_channels))
        self.predict = _conv(config.width(config.fuse_channels), config.levels)

    def forward(self, fused: torch.Tensor) -> torch.Tensor:
        return self.predict(torch.selu(self.mix(fused)))


class DisparityNet(nn.Module):
    """Full matching network; ``stage`` 1 uses the flat aggregator, 2 the U-Net."""

    def __init__(self, config: NetworkConfig, stage: int = 2):
        super().__init__()
        if stage not in (1, 2):
            raise ValueError(f"stage must be 1 or 2, got {stage}")
        self.config = config
        self.stage = stage
        self.matcher = PatchMatcher(config)
        if stage == 2:
            self.extractor = SemanticExtractor()
            self.reducer = PyramidReducer(config)
            self.aggregator = VolumeAggregator(config)
        else:
            self.aggregator = FlatAggregator(config)
        self.fuser = VolumePredictor(config)

    def forward(self, ref_image: torch.Tensor, volume_data: torch.Tensor) -> torch.Tensor:
        """Scores per disparity level.

        Args:
            ref_image: ``(3, H, W)`` reference colors in ``[0, 1]``.
            volume_data: ``(N, D, 3, H, W)`` swept neighbors in ``[-0.5, 0.5]``
                (zero where invalid).

        Returns:
            ``(D, H, W)`` logits (no softmax).
        """
        if volume_data.ndim != 5:
            raise ValueError(f"volume_data must be (N, D, 3, H, W), got {tuple(volume_data.shape)}")
        n, d = volume_data.shape[0], volume_data.shape[1]
        if d != self.config.levels:
            raise ValueError(f"volume has {d} levels, network expects {self.config.levels}")
        h, w = volume_data.shape[3], volume_data.shape[4]
        if ref_image.shape != (3, h, w):
            raise ValueError(
                f"reference image shape {tuple(ref_image.shape)} does not match volume {h}x{w}"
            )

        ref_norm = (ref_image - 0.5).unsqueeze(0)
        ref_emb = self.matcher.embed_image(ref_norm)
        slices = volume_data.reshape(n * d, 3, h, w)
        nbr_emb = self.matcher.embed_image(slices)
        match = self.matcher.compare(ref_emb.expand(n * d, -1, -1, -1), nbr_emb)
        match = match.reshape(n, d * match.shape[1], h, w)

        if self.stage == 2:
            taps = self.extractor(ref_image.unsqueeze(0))
            semantics = self.reducer(taps)
            aggregated = self.aggregator(match, semantics)
        else:
            aggregated = self.aggregator(match)

        fused = max_over_set(list(aggregated))
        logits = self.fuser(fused.unsqueeze(0)).squeeze(0)
        return require_finite(logits, "network logits")

    def trainable_parameters(self) -> dict:
        return {k: p for k, p in self.named_parameters() if p.requires_grad}


def init_model(
    config: NetworkConfig,
    stage: int = 2,
    seed: int = 0,
    extractor_weights=None,
    extractor_seed: int = DEFAULT_EXTRACTOR_SEED,
) -> DisparityNet:
    """Build and deterministically initialize a network.

    Trained convolutions get ``normal(0, 1/sqrt(fan_in))`` weights (the
    self-normalizing init) and zero biases from a generator seeded with
    ``seed``; the frozen extractor loads ``extractor_weights`` (an .npz path)
    when given, otherwise seeds its own stand-in weights from
    ``extractor_seed``.
    """
    model = DisparityNet(config, stage=stage)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, module in model.named_modules():
            if not isinstance(module, nn.Conv2d) or name.startswith("extractor"):
                continue
            fan_in = module.in_channels * module.kernel_size[0] * module.kernel_size[1]
            module.weight.normal_(0.0, 1.0 / math.sqrt(fan_in), generator=gen)
            module.bias.zero_()
    if stage == 2:
        if extractor_weights is not None:
            model.extractor.load_weights(extractor_weights)
        else:
            model.extractor.seed_weights(extractor_seed)
    return model


def masked_loss(model: DisparityNet, sample) -> torch.Tensor:
    """Cross entropy of the network on one labeled sample (see training)."""
    ref = torch.from_numpy(np.ascontiguousarray(sample.ref_image.transpose(2, 0, 1)))
    vol = torch.from_numpy(np.ascontiguousarray(sample.volume.data.transpose(0, 1, 4, 2, 3)))
    logits = model(ref, vol)
    labels = torch.from_numpy(np.ascontiguousarray(sample.labels))
    valid = torch.from_numpy(np.ascontiguousarray(sample.valid))
    return cross_entropy(logits, labels, valid)


def forward_distribution(
    model: DisparityNet,
    volume: PlaneSweepVolume,
    ref: CameraView,
    grid: DisparityGrid,
) -> DisparityDistribution:
    """Run the network on a full volume and return per-pixel distributions."""
    if volume.levels != model.config.levels:
        raise ValueError(
            f"volume has {volume.levels} levels, network expects {model.config.levels}"
        )
    with torch.no_grad():
        ref_t = torch.from_numpy(np.ascontiguousarray(ref.image.transpose(2, 0, 1)))
        vol_t = torch.from_numpy(np.ascontiguousarray(volume.data.transpose(0, 1, 4, 2, 3)))
        logits = model(ref_t, vol_t)
        probs = softmax_over_levels(logits, dim=0).numpy()
    return DisparityDistribution(probs=probs.transpose(1, 2, 0), grid=grid)


def _reflect_pad_axis(arr: np.ndarray, axis: int, before: int, after: int) -> np.ndarray:
    """np.pad reflect, applied iteratively so pads may exceed the axis length."""
    while before > 0 or after > 0:
        limit = arr.shape[axis] - 1
        b = min(before, limit)
        a = min(after, limit)
        if b == 0 and a == 0:
            raise ValueError("cannot reflect-pad a length-1 axis")
        pad = [(0, 0)] * arr.ndim
        pad[axis] = (b, a)
        arr = np.pad(arr, pad, mode="reflect")
        before -= b
        after -= a
    return arr


def _tile_anchors(size: int, core: int):
    """Core-region anchors covering [0, size) with the last anchor pulled in."""
    count = math.ceil(size / core)
    anchors = [i * core for i in range(count)]
    anchors[-1] = size - core
    return anchors


def _tile_windows(size: int, tile: int, core: int, margin: int):
    """Per-axis ``(window_start, keep_lo, keep_hi)`` triples.

    Keep ranges partition [0, size): edge tiles keep their margins, and the
    pulled-in last anchor starts after the previous tile's core. Anchors whose
    clamped windows coincide are merged (their keep ranges are adjacent), so
    each distinct window runs through the network once.
    """
    anchors = _tile_anchors(size, core)
    windows = []
    for ai, anchor in enumerate(anchors):
        keep_lo = 0 if ai == 0 else max(anchor, anchors[ai - 1] + core)
        keep_hi = size if ai == len(anchors) - 1 else anchor + core
        start = min(max(anchor - margin, 0), size - tile)
        if windows and windows[-1][0] == start:
            windows[-1] = (start, windows[-1][1], keep_hi)
        else:
            windows.append((start, keep_lo, keep_hi))
    return windows


def tile_predict(
    model: DisparityNet,
    ref: CameraView,
    neighbors: list,
    grid: DisparityGrid,
    tile: int = 128,
    core: int = 64,
    max_bytes: int = DEFAULT_MEMORY_BUDGET,
) -> DisparityDistribution:
    """Predict a full image by running the network on overlapping tiles.

    The volume is built once at full resolution; the network sees ``tile``-
    sized windows and only each window's central ``core`` region is kept
    (edge tiles keep their margins so the retained regions exactly partition
    the image). Images smaller than ``tile`` are reflect-padded up and the
    result is cropped back, so output size always equals input size.
    """
    if core < 1 or tile < core:
        raise ValueError(f"need tile >= core >= 1, got tile={tile}, core={core}")
    if (tile - core) % 2 != 0:
        raise ValueError(f"tile - core must be even, got {tile - core}")
    margin = (tile - core) // 2
    height, width = ref.height, ref.width

    volume = build_volume(ref, neighbors, grid, max_bytes=max_bytes)
    data, mask = volume.data, volume.mask
    image = ref.image

    pad_top = pad_left = 0
    if height < tile:
        pad_top = (tile - height) // 2
        pad_bottom = tile - height - pad_top
        data = _reflect_pad_axis(data, 2, pad_top, pad_bottom)
        mask = _reflect_pad_axis(mask, 2, pad_top, pad_bottom)
        image = _reflect_pad_axis(image, 0, pad_top, pad_bottom)
    if width < tile:
        pad_left = (tile - width) // 2
        pad_right = tile - width - pad_left
        data = _reflect_pad_axis(data, 3, pad_left, pad_right)
        mask = _reflect_pad_axis(mask, 3, pad_left, pad_right)
        image = _reflect_pad_axis(image, 1, pad_left, pad_right)
    ph, pw = image.shape[:2]

    probs = np.zeros((ph, pw, model.config.levels), dtype=np.float32)
    with torch.no_grad():
        for wy, keep_y0, keep_y1 in _tile_windows(ph, tile, core, margin):
            for wx, keep_x0, keep_x1 in _tile_windows(pw, tile, core, margin):
                win_data = data[:, :, wy : wy + tile, wx : wx + tile]
                win_img = image[wy : wy + tile, wx : wx + tile]
                ref_t = torch.from_numpy(np.ascontiguousarray(win_img.transpose(2, 0, 1)))
                vol_t = torch.from_numpy(
                    np.ascontiguousarray(win_data.transpose(0, 1, 4, 2, 3))
                )
                logits = model(ref_t, vol_t)
                win_probs = softmax_over_levels(logits, dim=0).numpy().transpose(1, 2, 0)
                probs[keep_y0:keep_y1, keep_x0:keep_x1] = win_probs[
                    keep_y0 - wy : keep_y1 - wy, keep_x0 - wx : keep_x1 - wx
                ]
    probs = probs[pad_top : pad_top + height, pad_left : pad_left + width]
    return DisparityDistribution(probs=probs, grid=grid)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: DisparityNet, step: int = 0, adam_state=None) -> None:
    """Write the model (and optionally optimizer moments) as an .npz archive."""
    arrays = {
        f"param/{name}": tensor.detach().cpu().numpy()
        for name, tensor in model.state_dict().items()
    }
    if adam_state is not None:
        for name, value in adam_state.first.items():
            arrays[f"adam_m/{name}"] = value
        for name, value in adam_state.second.items():
            arrays[f"adam_v/{name}"] = value
        arrays["adam_step"] = np.asarray(adam_state.step, dtype=np.int64)
    np.savez(
        path,
        kind="checkpoint",
        version=CHECKPOINT_VERSION,
        config=model.config.to_json(),
        stage=model.stage,
        step=int(step),
        **arrays,
    )


def load_checkpoint(path):
    """Read a checkpoint archive.

    Returns:
        ``(config, stage, step, params, adam_state_or_None)`` where params
        maps state-dict names to numpy arrays.
    """
    from .training import AdamState  # local import: training depends on this module

    try:
        archive = np.load(path)
    except (OSError, ValueError, EOFError, zipfile.BadZipFile) as e:
        raise CheckpointError(f"{path}: {e}") from e
    if "kind" not in archive or str(archive["kind"]) != "checkpoint":
        raise CheckpointError(f"{path}: not a checkpoint archive")
    version = int(archive["version"])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config = NetworkConfig.from_json(str(archive["config"]))
    stage = int(archive["stage"])
    step = int(archive["step"])
    params = {
        key[len("param/") :]: archive[key] for key in archive.files if key.startswith("param/")
    }
    adam = None
    if "adam_step" in archive.files:
        first = {
            key[len("adam_m/") :]: archive[key]
            for key in archive.files
            if key.startswith("adam_m/")
        }
        second = {
            key[len("adam_v/") :]: archive[key]
            for key in archive.files
            if key.startswith("adam_v/")
        }
        adam = AdamState(first=first, second=second, step=int(archive["adam_step"]))
    return config, stage, step, params, adam


def load_model(path, expected_config: NetworkConfig | None = None):
    """Rebuild a model from a checkpoint.

    Returns:
        ``(model, stage, step, adam_state_or_None)``.

    Raises:
        CheckpointError: On version/config mismatch or missing/misshapen arrays.
    """
    config, stage, step, params, adam = load_checkpoint(path)
    if expected_config is not None and expected_config != config:
        raise CheckpointError(
            f"{path}: checkpoint config {config} does not match requested {expected_config}"
        )
    model = DisparityNet(config, stage=stage)
    state = model.state_dict()
    if set(state) != set(params):
        missing = sorted(set(state) - set(params))
        extra = sorted(set(params) - set(state))
        raise CheckpointError(f"{path}: parameter names differ (missing {missing}, extra {extra})")
    tensors = {}
    for name, value in params.items():
        if tuple(state[name].shape) != tuple(value.shape):
            raise CheckpointError(
                f"{path}: {name} has shape {value.shape}, expected {tuple(state[name].shape)}"
            )
        tensors[name] = torch.from_numpy(value.copy())
    model.load_state_dict(tensors)
    return model, stage, step, adam
