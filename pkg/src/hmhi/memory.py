"""Per-level memory banks: readout into the current frame and FIFO update."""
import json
import os
from dataclasses import dataclass, field

from . import tensor as T
from .nn import FFN, Attention, Linear, Module, map_to_tokens
from .tensor import ShapeError, Tensor, read_tensor, write_tensor


class BypassRequired(ValueError):
    """Raised when a readout is attempted against an empty bank."""


@dataclass
class MemoryEntry:
    features: Tensor
    frame_index: int


@dataclass
class MemoryBank:
    level: int
    capacity: int = 5
    stride: int = 1
    entries: list = field(default_factory=list)
    last_update_frame: int = None

    def __post_init__(self):
        if self.capacity < 1 or self.stride < 1:
            raise ValueError(f"capacity and stride must be positive, got N={self.capacity}, k={self.stride}")

    def __len__(self):
        return len(self.entries)

    @property
    def frame_indices(self):
        return [e.frame_index for e in self.entries]

    def keys(self):
        """All stored tokens, oldest entry first: (T*H_i*W_i) x C_i."""
        if len(self.entries) == 1:
            return self.entries[0].features
        return T.concat([e.features for e in self.entries], axis=0)

    def due(self, frame_index):
        return not self.entries or frame_index - self.last_update_frame >= self.stride

    def push(self, features, frame_index):
        if self.entries and features.shape != self.entries[0].features.shape:
            raise ShapeError(f"level {self.level} bank holds {self.entries[0].features.shape}, "
                             f"got {features.shape}")
        self.entries.append(MemoryEntry(features, frame_index))
        self.last_update_frame = frame_index
        if len(self.entries) > self.capacity:
            self.entries.pop(0)


class MemoryReadout(Module):
    """Self-attention over the current frame, cross-attention into the bank,
    and a residual FFN."""

    def __init__(self, channels, rng, heads=1, out_proj=True, self_residual=False):
        self.self_attn = Attention(channels, rng, heads=heads, out_proj=out_proj)
        self.mem_attn = Attention(channels, rng, heads=heads, out_proj=out_proj)
        self.ffn = FFN(channels, rng)
        self._self_residual = self_residual


class MemoryEncoder(Module):
    def __init__(self, channels, rng):
        self.mask_proj = Linear(1, channels, rng)
        self.ffn = FFN(channels, rng)


def mem_refine(features, bank, readout):
    """Refine current-frame tokens against the bank.

    Returns the refined tokens and the raw correlation scores
    (H_i*W_i x T*H_i*W_i, before softmax).
    """
    if not bank.entries:
        raise BypassRequired(f"level {bank.level} bank is empty; the first frame must skip readout")
    x = readout.self_attn(features, features)
    if readout._self_residual:
        x = features + x
    read, scores = readout.mem_attn(x, bank.keys(), return_scores=True)
    x = x + read
    return x + readout.ffn(x), scores


def memory_encode(features, mask_logits, encoder, size):
    """Fold the predicted mask into post-interaction features for storage."""
    prob = T.sigmoid(mask_logits)
    pooled = map_to_tokens(T.adaptive_avg_pool2d(prob, size))
    if pooled.shape[0] != features.shape[0]:
        raise ShapeError(f"mask pools to {pooled.shape[0]} tokens, features have {features.shape[0]}")
    return encoder.ffn(features + encoder.mask_proj(pooled))


def memory_update(bank, features, mask_logits, frame_index, encoder, size, detach=False):
    if bank.last_update_frame is not None and frame_index <= bank.last_update_frame:
        raise ValueError(f"frame {frame_index} does not follow stored frame {bank.last_update_frame}")
    if bank.due(frame_index):
        entry = memory_encode(features, mask_logits, encoder, size)
        bank.push(entry.detach() if detach else entry, frame_index)
    return bank


def dump_bank(bank, directory):
    """Write each entry as a tensor blob plus a JSON manifest."""
    os.makedirs(directory, exist_ok=True)
    files = []
    for i, entry in enumerate(bank.entries):
        name = f"level{bank.level}_entry{i}.bin"
        with open(os.path.join(directory, name), "wb") as fp:
            write_tensor(fp, entry.features)
        files.append({"frame_index": entry.frame_index, "file": name})
    manifest = {"level": bank.level, "capacity": bank.capacity, "stride": bank.stride,
                "last_update_frame": bank.last_update_frame, "entries": files}
    path = os.path.join(directory, f"level{bank.level}_bank.json")
    with open(path, "w") as fp:
        json.dump(manifest, fp, indent=2)
    return path


def load_bank(path):
    with open(path) as fp:
        manifest = json.load(fp)
    bank = MemoryBank(manifest["level"], manifest["capacity"], manifest["stride"])
    root = os.path.dirname(path)
    for item in manifest["entries"]:
        with open(os.path.join(root, item["file"]), "rb") as fp:
            bank.entries.append(MemoryEntry(Tensor(read_tensor(fp)), item["frame_index"]))
    bank.last_update_frame = manifest["last_update_frame"]
    return bank
