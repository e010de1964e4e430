"""Per-frame orchestration, whole-video inference, training and checkpoints."""
import struct
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import tensor as T
from .encoder_decoder import Decoder, Encoder, PyramidConfig, Stage, decode, encode_frame
from .interaction import MODES, Interaction, interact
from .losses import LossConfig, combined_loss
from .memory import MemoryBank, MemoryEncoder, MemoryReadout, mem_refine, memory_update
from .metrics import region_similarity_J
from .nn import Module
from .tensor import FormatError, Rng, ShapeError, Tensor, read_tensor, write_tensor


@dataclass(frozen=True)
class RunConfig:
    side: int = 64
    channels: tuple = (8, 16, 32, 64)
    capacity: int = 5  # N
    stride: int = 1  # k
    length: int = 5  # L, frames per training clip
    memory_levels: tuple = (2, 4)
    interaction: str = "standard"
    input_mode: str = "both"
    heads: int = 1
    out_proj: bool = True
    self_residual: bool = False
    share_towers: bool = False
    detach_memory: bool = False
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    steps: int = 2000
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.interaction not in MODES:
            raise ValueError(f"unknown interaction mode {self.interaction!r}")
        if self.input_mode not in ("both", "image", "flow"):
            raise ValueError(f"unknown input mode {self.input_mode!r}")
        if not set(self.memory_levels) <= {1, 2, 3, 4}:
            raise ValueError(f"memory levels must be a subset of 1..4, got {self.memory_levels}")
        if self.capacity < 1 or self.stride < 1 or self.length < 1:
            raise ValueError("capacity, stride and length must be positive")

    @property
    def pyramid(self):
        return PyramidConfig(self.side, tuple(self.channels))

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["memory_levels"] = list(self.memory_levels)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        if "loss" in d and isinstance(d["loss"], dict):
            d["loss"] = LossConfig(**d["loss"])
        for key in ("channels", "memory_levels", "betas"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    def with_overrides(self, **kw):
        return replace(self, **kw)


class HMHINet(Module):
    def __init__(self, cfg=RunConfig()):
        self._cfg = cfg
        pc = cfg.pyramid
        rng = Rng(cfg.seed)
        c = pc.channels
        self.encoder = Encoder(pc, rng, share_towers=cfg.share_towers)
        self.decoder = Decoder(pc, rng)
        self.readout = {f"level{i}": MemoryReadout(c[i - 1], rng, cfg.heads, cfg.out_proj,
                                                   cfg.self_residual)
                        for i in sorted(cfg.memory_levels)}
        self.mem_encoder = {f"level{i}": MemoryEncoder(c[i - 1], rng) for i in sorted(cfg.memory_levels)}
        if cfg.interaction != "off":
            self.interaction = Interaction(c[1], c[3], rng, cfg.interaction, cfg.heads, cfg.out_proj)

    @property
    def cfg(self):
        return self._cfg


@dataclass
class SessionState:
    banks: dict
    cursor: int = 0
    config: RunConfig = None

    @classmethod
    def fresh(cls, cfg):
        banks = {i: MemoryBank(i, cfg.capacity, cfg.stride) for i in sorted(cfg.memory_levels)}
        return cls(banks, 0, cfg)


def baseline_forward(image, flow, model):
    """Memory-free forward: encode then decode the raw pyramid."""
    pyr = encode_frame(image, flow, model.encoder, model.cfg.input_mode)
    return decode(pyr, model.decoder)


def _changed_levels(mode):
    return {"standard": (2, 4), "swapped": (2, 4), "s2h_only": (4,), "h2s_only": (2,), "off": ()}[mode]


def process_frame(state, image, flow, model):
    cfg = model.cfg
    pc = cfg.pyramid
    pyr = encode_frame(image, flow, model.encoder, cfg.input_mode)
    t = state.cursor
    if t == 0:
        # no reference yet: plain baseline, then seed the banks
        logits = decode(pyr, model.decoder)
    else:
        for level, bank in state.banks.items():
            refined, _ = mem_refine(pyr.feature(level), bank, model.readout[f"level{level}"])
            pyr.advance(level, refined, Stage.MEM_REFINED)
        if cfg.interaction != "off":
            f2, f4 = interact(pyr.feature(2), pyr.feature(4), model.interaction,
                              (pc.level_shape(2), pc.level_shape(4)), cfg.interaction)
            new = {2: f2, 4: f4}
            for level in _changed_levels(cfg.interaction):
                pyr.advance(level, new[level], Stage.INTERACTED)
        expected = [Stage.RAW] * 4
        for level in state.banks:
            expected[level - 1] = Stage.MEM_REFINED
        for level in _changed_levels(cfg.interaction):
            expected[level - 1] = Stage.INTERACTED
        logits = decode(pyr, model.decoder, expected)
    for level, bank in state.banks.items():
        memory_update(bank, pyr.feature(level), logits, t, model.mem_encoder[f"level{level}"],
                      pc.level_shape(level), detach=cfg.detach_memory)
    state.cursor = t + 1
    return logits, state


def process_video(frames, flows, model, state=None):
    if len(frames) != len(flows):
        raise ValueError(f"{len(frames)} frames but {len(flows)} flows")
    if not frames:
        raise ValueError("empty video")
    state = SessionState.fresh(model.cfg) if state is None else state
    outputs = []
    for image, flow in zip(frames, flows):
        logits, state = process_frame(state, image, flow, model)
        outputs.append(logits)
    return outputs


class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def clip_loss(clip, model):
    """Mean over frames of the combined segmentation loss."""
    if len(clip) == 0:
        raise ValueError("empty clip")
    outputs = process_video(clip.frames, clip.flows, model)
    losses = [combined_loss(lg, gt, model.cfg.loss) for lg, gt in zip(outputs, clip.gt_masks)]
    return T.scale(T.concat([T.reshape(l, (1,)) for l in losses]).sum(), 1.0 / len(losses))


def train_step(clip, model, optimizer):
    if len(clip) != model.cfg.length:
        raise ValueError(f"clip has {len(clip)} frames, config expects {model.cfg.length}")
    model.zero_grad()
    loss = clip_loss(clip, model)
    loss.backward()
    optimizer.step()
    return loss.item()


def make_optimizer(model):
    cfg = model.cfg
    return AdamW(model.parameters(), cfg.lr, cfg.betas, weight_decay=cfg.weight_decay)


def predict(clip, model):
    with T.no_grad():
        return [1.0 / (1.0 + np.exp(-np.clip(lg.data[0], -30, 30)))
                for lg in process_video(clip.frames, clip.flows, model)]


def clip_J(clip, model, threshold=0.5):
    probs = predict(clip, model)
    return float(np.mean([region_similarity_J(p >= threshold, g) for p, g in zip(probs, clip.gt_masks)]))


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"HMHICKPT"
CKPT_VERSION = 1


def save_checkpoint(params, path):
    """magic | u32 version | u32 count | per entry: u32 name length, utf-8 name, tensor blob."""
    if isinstance(params, Module):
        params = params.parameters()
    with open(path, "wb") as fp:
        fp.write(CKPT_MAGIC + struct.pack("<II", CKPT_VERSION, len(params)))
        for name in sorted(params):
            raw = name.encode("utf-8")
            fp.write(struct.pack("<I", len(raw)) + raw)
            write_tensor(fp, params[name])


def load_checkpoint(path):
    with open(path, "rb") as fp:
        head = fp.read(16)
        if len(head) != 16 or head[:8] != CKPT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<II", head[8:])
        if version != CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (n,) = struct.unpack("<I", fp.read(4))
            name = fp.read(n).decode("utf-8")
            out[name] = read_tensor(fp)
    return out


def load_into(model, path):
    stored = load_checkpoint(path)
    params = model.parameters()
    missing = sorted(set(params) - set(stored))
    if missing:
        raise KeyError(f"checkpoint {path} lacks parameter(s): {', '.join(missing)}")
    for name, p in params.items():
        if stored[name].shape != p.shape:
            raise ShapeError(f"{name}: checkpoint shape {stored[name].shape} vs model {p.shape}")
    for name, p in params.items():
        p.data[...] = stored[name]
    return model
