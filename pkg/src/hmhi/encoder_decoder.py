"""Toy four-level encoder (image and flow towers), additive fusion, and the
top-down decoder that turns a feature pyramid into mask logits."""
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import tensor as T
from .nn import Conv2d, Linear, Module, map_to_tokens, tokens_to_map
from .tensor import ShapeError, Tensor

LEVELS = (1, 2, 3, 4)


class Stage(str, Enum):
    RAW = "raw"
    MEM_REFINED = "mem_refined"
    INTERACTED = "interacted"


_STAGE_RANK = {Stage.RAW: 0, Stage.MEM_REFINED: 1, Stage.INTERACTED: 2}


@dataclass(frozen=True)
class PyramidConfig:
    side: int = 64
    channels: tuple = (8, 16, 32, 64)

    def __post_init__(self):
        if self.side <= 0 or self.side % 16:
            raise ShapeError(f"image side {self.side} must be a positive multiple of 16")
        if len(self.channels) != 4 or any(b <= a for a, b in zip(self.channels, self.channels[1:])):
            raise ValueError(f"channels must be 4 strictly increasing ints, got {self.channels}")

    def level_side(self, level):
        # each stride-2 conv (k=3, pad=1) maps n -> ceil(n/2)
        return -(-self.side // 2 ** (level + 1))

    def level_shape(self, level):
        s = self.level_side(level)
        return s, s

    def tokens(self, level):
        return self.level_side(level) ** 2


@dataclass
class FeaturePyramid:
    """Per-level token features (H_i*W_i x C_i), index 0 holds level 1."""

    image: list
    flow: list
    fused: list
    sizes: list
    stages: list = field(default_factory=lambda: [Stage.RAW] * 4)

    def feature(self, level):
        return self.fused[level - 1]

    def stage(self, level):
        return self.stages[level - 1]

    def advance(self, level, value, stage):
        stage = Stage(stage)
        old = self.stages[level - 1]
        if _STAGE_RANK[stage] <= _STAGE_RANK[old]:
            raise ValueError(f"level {level}: stage cannot go from {old.value} to {stage.value}")
        if value.shape != self.fused[level - 1].shape:
            raise ShapeError(f"level {level}: {value.shape} replaces {self.fused[level - 1].shape}")
        self.fused[level - 1] = value
        self.stages[level - 1] = stage

    def copy(self):
        return FeaturePyramid(list(self.image), list(self.flow), list(self.fused),
                              list(self.sizes), list(self.stages))


class EncoderTower(Module):
    """Stage 1 downsamples 4x with two stride-2 convs, stages 2-4 by 2x each."""

    def __init__(self, channels, rng):
        c1, c2, c3, c4 = channels
        self.stem1 = Conv2d(3, c1, 3, rng, stride=2)
        self.stem2 = Conv2d(c1, c1, 3, rng, stride=2)
        self.stage2 = Conv2d(c1, c2, 3, rng, stride=2)
        self.stage3 = Conv2d(c2, c3, 3, rng, stride=2)
        self.stage4 = Conv2d(c3, c4, 3, rng, stride=2)

    def __call__(self, x):
        x = T.relu(self.stem2(T.relu(self.stem1(x))))
        maps = [x]
        for conv in (self.stage2, self.stage3, self.stage4):
            x = T.relu(conv(x))
            maps.append(x)
        return maps


class Encoder(Module):
    def __init__(self, cfg, rng, share_towers=False):
        self._cfg = cfg
        self.image_tower = EncoderTower(cfg.channels, rng)
        if not share_towers:
            self.flow_tower = EncoderTower(cfg.channels, rng)

    @property
    def _flow(self):
        return vars(self).get("flow_tower", self.image_tower)

    def __call__(self, image, flow, input_mode="both"):
        return encode_frame(image, flow, self, input_mode)


def _check_input(x, side, what):
    if x.ndim != 3 or x.shape[0] != 3:
        raise ShapeError(f"{what} must be 3 x H x W, got {x.shape}")
    if x.shape[1] != side or x.shape[2] != side:
        raise ShapeError(f"{what} is {x.shape[1]}x{x.shape[2]}, config expects {side}x{side}")


def encode_frame(image, flow, encoder, input_mode="both"):
    """Run both towers and fuse per level by addition: F = I + O."""
    cfg = encoder._cfg
    _check_input(image, cfg.side, "image")
    _check_input(flow, cfg.side, "flow")
    if input_mode not in ("both", "image", "flow"):
        raise ValueError(f"unknown input mode {input_mode!r}")
    img = [map_to_tokens(m) for m in encoder.image_tower(image)] if input_mode != "flow" else None
    flo = [map_to_tokens(m) for m in encoder._flow(flow)] if input_mode != "image" else None
    if img is None:
        img = [Tensor(np.zeros(f.shape)) for f in flo]
    if flo is None:
        flo = [Tensor(np.zeros(i.shape)) for i in img]
    fused = [i + o for i, o in zip(img, flo)]
    sizes = [cfg.level_shape(level) for level in LEVELS]
    return FeaturePyramid(img, flo, fused, sizes)


class Decoder(Module):
    """Top-down decoder: project, upsample, add the next level down, conv+relu;
    a 3x3 head produces one logit channel at level-1 resolution, resized to H x W."""

    def __init__(self, cfg, rng):
        c1, c2, c3, c4 = cfg.channels
        self._cfg = cfg
        self.lat4 = Linear(c4, c3, rng)
        self.fuse3 = Conv2d(c3, c3, 3, rng)
        self.lat3 = Linear(c3, c2, rng)
        self.fuse2 = Conv2d(c2, c2, 3, rng)
        self.lat2 = Linear(c2, c1, rng)
        self.fuse1 = Conv2d(c1, c1, 3, rng)
        self.head = Conv2d(c1, 1, 3, rng)

    def __call__(self, pyramid, expected_stages=None):
        return decode(pyramid, self, expected_stages)


def decode(pyramid, decoder, expected_stages=None):
    if expected_stages is not None:
        expected = [Stage(s) for s in expected_stages]
        if list(pyramid.stages) != expected:
            raise ValueError(f"decoder expects stages {[s.value for s in expected]}, "
                             f"got {[s.value for s in pyramid.stages]}")
    side = decoder._cfg.side
    f = pyramid.fused
    (h1, w1), (h2, w2), (h3, w3), (h4, w4) = pyramid.sizes
    steps = ((decoder.lat4, decoder.fuse3, f[2], h3, w3),
             (decoder.lat3, decoder.fuse2, f[1], h2, w2),
             (decoder.lat2, decoder.fuse1, f[0], h1, w1))
    x, h, w = f[3], h4, w4
    for lat, fuse, skip, hs, ws in steps:
        up = T.resize_bilinear(tokens_to_map(lat(x), h, w), (hs, ws))
        x = map_to_tokens(T.relu(fuse(up + tokens_to_map(skip, hs, ws))))
        h, w = hs, ws
    logits = decoder.head(tokens_to_map(x, h, w))
    return T.resize_bilinear(logits, (side, side))
