"""Shallow/high-level interaction: PLAM (shallow -> high, position preserving)
and SGIM (high -> shallow, global attention)."""
from . import tensor as T
from .nn import (FFN, Attention, ChannelSpatialGate, DownsampleStack, Linear, Module,
                 map_to_tokens, tokens_to_map)

MODES = ("standard", "swapped", "s2h_only", "h2s_only", "off")


class Plam(Module):
    def __init__(self, c2, c4, rng):
        self.down = DownsampleStack(c2, c4, rng)
        self.gate = ChannelSpatialGate(2 * c4, rng)
        self.ffn = FFN(2 * c4, rng, out_dim=c4)


class Sgim(Module):
    def __init__(self, c2, c4, rng, heads=1, out_proj=True):
        self.align = Linear(c4, c2, rng)
        self.self_attn = Attention(c2, rng, heads=heads, out_proj=out_proj)
        self.cross_attn = Attention(c2, rng, heads=heads, out_proj=out_proj)
        self.ffn = FFN(c2, rng)


class SwapAdapters(Module):
    def __init__(self, c2, c4, rng):
        self.to_shallow = Linear(c4, c2, rng)
        self.to_high = Linear(c2, c4, rng)


def plam(f2, f4, params, size2, size4):
    """Downsample shallow tokens onto the high-level grid, concatenate along
    channels at matching positions, gate, and project back to C4."""
    aligned = params.down(tokens_to_map(f2, *size2), size=size4)
    joint = T.concat([tokens_to_map(f4, *size4), aligned], axis=0)
    return params.ffn(map_to_tokens(params.gate(joint)))


def sgim(f4, f2, params):
    high = params.align(f4)
    x = params.self_attn(f2, f2)
    x = x + params.cross_attn(x, high)
    return params.ffn(x)


class Interaction(Module):
    def __init__(self, c2, c4, rng, mode="standard", heads=1, out_proj=True):
        if mode not in MODES:
            raise ValueError(f"unknown interaction mode {mode!r}; expected one of {MODES}")
        self._mode = mode
        if mode in ("standard", "swapped", "s2h_only"):
            self.plam = Plam(c2, c4, rng)
        if mode in ("standard", "swapped", "h2s_only"):
            self.sgim = Sgim(c2, c4, rng, heads=heads, out_proj=out_proj)
        if mode == "swapped":
            self.adapters = SwapAdapters(c2, c4, rng)

    @property
    def mode(self):
        return self._mode


def interact(f2, f4, params, sizes, mode=None):
    """Return (F2'', F4'').  Both directions read only the primed inputs."""
    mode = params.mode if mode is None else mode
    if mode not in MODES:
        raise ValueError(f"unknown interaction mode {mode!r}")
    size2, size4 = sizes
    if mode == "off":
        return f2, f4
    if mode == "standard":
        return sgim(f4, f2, params.sgim), plam(f2, f4, params.plam, size2, size4)
    if mode == "s2h_only":
        return f2, plam(f2, f4, params.plam, size2, size4)
    if mode == "h2s_only":
        return sgim(f4, f2, params.sgim), f4
    # swapped: PLAM fills the high-to-shallow slot, SGIM the shallow-to-high one
    ad = params.adapters
    up = T.resize_bilinear(tokens_to_map(plam(f2, f4, params.plam, size2, size4), *size4), size2)
    new2 = ad.to_shallow(map_to_tokens(up))
    pooled = T.adaptive_avg_pool2d(tokens_to_map(sgim(f4, f2, params.sgim), *size2), size4)
    new4 = ad.to_high(map_to_tokens(pooled))
    return new2, new4
