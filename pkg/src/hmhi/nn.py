"""Parametric building blocks: linear, conv, attention, FFN, gates."""
import math

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


class EmptyKeysError(ValueError):
    pass


class Module:
    """Holds parameters as attributes; names are the attribute paths."""

    def named_parameters(self, prefix=""):
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{key}.")
            elif isinstance(value, dict):
                for k, v in value.items():
                    if isinstance(v, Module):
                        yield from v.named_parameters(f"{prefix}{key}.{k}.")

    def parameters(self):
        return dict(self.named_parameters())

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()


def init_weight(rng, shape, fan_in):
    bound = math.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, shape), requires_grad=True)


def zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def map_to_tokens(x):
    c, h, w = x.shape
    return T.transpose(T.reshape(x, (c, h * w)))


def tokens_to_map(x, h, w):
    n, c = x.shape
    if n != h * w:
        raise ShapeError(f"{n} tokens cannot form a {h}x{w} map")
    return T.reshape(T.transpose(x), (c, h, w))


class Linear(Module):
    def __init__(self, c_in, c_out, rng):
        self.weight = init_weight(rng, (c_in, c_out), c_in)
        self.bias = zeros((c_out,))

    def __call__(self, x):
        if x.ndim != 2 or x.shape[1] != self.weight.shape[0]:
            raise ShapeError(f"linear: input {x.shape} vs weight {self.weight.shape}")
        return T.matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=None):
        self.weight = init_weight(rng, (c_out, c_in, k, k), c_in * k * k)
        self.bias = zeros((c_out,))
        self._stride = stride
        self._padding = k // 2 if padding is None else padding

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self._stride, self._padding)


class Attention(Module):
    """Scaled dot-product attention with separate Q/K/V projections.

    Queries come from ``q_src`` (N_q x dim), keys and values from ``kv_src``
    (N_k x kv_dim).  Heads split the key and value width evenly; with
    ``heads=1`` the scores are Q K^T / sqrt(key_dim).
    """

    def __init__(self, dim, rng, kv_dim=None, key_dim=None, heads=1, out_proj=True):
        kv_dim = dim if kv_dim is None else kv_dim
        key_dim = dim if key_dim is None else key_dim
        if key_dim % heads or dim % heads:
            raise ValueError(f"{heads} heads do not divide key_dim={key_dim}, dim={dim}")
        self.q_proj = Linear(dim, key_dim, rng)
        self.k_proj = Linear(kv_dim, key_dim, rng)
        self.v_proj = Linear(kv_dim, dim, rng)
        if out_proj:
            self.out_proj = Linear(dim, dim, rng)
        self._heads = heads
        self._head_dim = key_dim // heads

    @property
    def scale(self):
        return 1.0 / math.sqrt(self._head_dim)

    def __call__(self, q_src, kv_src, return_scores=False):
        if kv_src.shape[0] == 0:
            raise EmptyKeysError("attention over zero keys; the caller must bypass this block")
        q, k, v = self.q_proj(q_src), self.k_proj(kv_src), self.v_proj(kv_src)
        h = self._heads
        dq, dv = q.shape[1] // h, v.shape[1] // h
        outs, scores = [], []
        for i in range(h):
            qi = q if h == 1 else T.slice_(q, (slice(None), slice(i * dq, (i + 1) * dq)))
            ki = k if h == 1 else T.slice_(k, (slice(None), slice(i * dq, (i + 1) * dq)))
            vi = v if h == 1 else T.slice_(v, (slice(None), slice(i * dv, (i + 1) * dv)))
            s = T.scale(T.matmul(qi, T.transpose(ki)), self.scale)
            scores.append(s)
            outs.append(T.matmul(T.softmax(s, axis=-1), vi))
        out = outs[0] if h == 1 else T.concat(outs, axis=1)
        if "out_proj" in vars(self):
            out = self.out_proj(out)
        if return_scores:
            return out, (scores[0] if h == 1 else scores)
        return out


class FFN(Module):
    def __init__(self, dim, rng, ratio=4, out_dim=None):
        self.fc1 = Linear(dim, ratio * dim, rng)
        self.fc2 = Linear(ratio * dim, dim if out_dim is None else out_dim, rng)

    def __call__(self, x):
        return self.fc2(T.relu(self.fc1(x)))


class ChannelSpatialGate(Module):
    """Channel gate (avg+max pooled descriptors through a shared MLP) followed
    by a spatial gate (channel-wise avg/max maps through one k x k conv)."""

    def __init__(self, channels, rng, reduction=4, kernel=7):
        hidden = max(channels // reduction, 1)
        self.mlp1 = Linear(channels, hidden, rng)
        self.mlp2 = Linear(hidden, channels, rng)
        self.spatial = Conv2d(2, 1, kernel, rng)

    def channel_gate(self, x):
        c = x.shape[0]
        avg = T.reshape(T.mean(x, axis=(1, 2)), (1, c))
        mx = T.reshape(T.max_(T.reshape(x, (c, -1)), axis=1), (1, c))
        logits = self.mlp2(T.relu(self.mlp1(avg))) + self.mlp2(T.relu(self.mlp1(mx)))
        return T.reshape(T.sigmoid(logits), (c, 1, 1))

    def spatial_gate(self, x):
        _, h, w = x.shape
        avg = T.mean(x, axis=0, keepdims=True)
        mx = T.max_(x, axis=0, keepdims=True)
        return T.sigmoid(self.spatial(T.concat([avg, mx], axis=0)))

    def __call__(self, x):
        x = x * self.channel_gate(x)
        return x * self.spatial_gate(x)


class DownsampleStack(Module):
    """Two stride-2 3x3 conv+relu stages, then a per-position linear map.

    Takes a C_in x H x W map and returns C_out x ceil(H/4) x ceil(W/4).
    """

    def __init__(self, c_in, c_out, rng):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=2)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, stride=2)
        self.proj = Linear(c_out, c_out, rng)

    def __call__(self, x, size=None):
        y = T.relu(self.conv2(T.relu(self.conv1(x))))
        if size is not None and tuple(y.shape[1:]) != tuple(size):
            raise ShapeError(f"downsample: {tuple(x.shape[1:])} map reduces to "
                             f"{tuple(y.shape[1:])}, expected {tuple(size)}")
        _, h, w = y.shape
        return tokens_to_map(self.proj(map_to_tokens(y)), h, w)
