"""Small float64 tensor with taped reverse-mode differentiation.

Every op records its parents and a backward closure while grad mode is on;
``Tensor.backward`` replays the tape in reverse topological order.  Image-like
tensors are laid out channels-first (C x H x W); convolution is
cross-correlation (the kernel is not flipped).
"""
import contextlib
import struct
import threading

import numpy as np

LOG_EPS = 1e-300
SIGMOID_CLAMP = 30.0


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


_mode = threading.local()


def is_grad_enabled():
    return getattr(_mode, "enabled", True)


@contextlib.contextmanager
def no_grad():
    prev = is_grad_enabled()
    _mode.enabled = False
    try:
        yield
    finally:
        _mode.enabled = prev


class Rng:
    """Seeded generator; PCG64 from numpy, so a seed replays the same stream
    on any platform numpy supports."""

    algorithm = "PCG64"

    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, low, high, shape):
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape, scale=1.0):
        return self._gen.normal(0.0, scale, size=shape)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def spawn(self, key):
        # independent child stream, stable w.r.t. the order siblings are drawn
        return Rng(np.random.SeedSequence([self.seed, int(key)]).generate_state(1, np.uint64)[0])


class Tensor:
    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GraphError("backward already ran on this graph; rebuild the forward pass first")
        if not self.requires_grad:
            raise GraphError("loss is detached: no input requiring grad was recorded")

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
            # drop the tape as we go
            node._parents = ()
            node._backward = None
        self._consumed = True

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward):
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a, b, name):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{name}: cannot combine shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def scale(a, c):
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def power(a, p):
    """x**p for a scalar exponent; p == 0 gives ones with zero gradient."""
    p = float(p)
    if p == 0.0:
        return Tensor(np.ones_like(a.data))
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def relu(a):
    # subgradient at 0 is 0
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a):
    z = np.clip(a.data, -SIGMOID_CLAMP, SIGMOID_CLAMP)
    s = 1.0 / (1.0 + np.exp(-z))
    inside = np.abs(a.data) <= SIGMOID_CLAMP
    return _make(s, (a,), lambda g: (g * s * (1.0 - s) * inside,))


def exp(a):
    z = np.clip(a.data, -700.0, 700.0)
    out = np.exp(z)
    inside = np.abs(a.data) <= 700.0
    return _make(out, (a,), lambda g: (g * out * inside,))


def log(a):
    z = np.maximum(a.data, LOG_EPS)
    return _make(np.log(z), (a,), lambda g: (g / z * (a.data >= LOG_EPS),))


# ---------------------------------------------------------------- reductions

def sum_(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def max_(a, axis=None, keepdims=False):
    """Max reduction; tied maxima share the gradient equally."""
    out = a.data.max(axis=axis, keepdims=True)
    hit = (a.data == out).astype(np.float64)
    hit /= hit.sum(axis=axis, keepdims=True)
    res = out if keepdims else (out.reshape(()) if axis is None else np.squeeze(out, axis))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (g * hit,)

    return _make(res, (a,), backward)


def softmax(a, axis=-1):
    if np.isnan(a.data).any():
        raise ValueError("softmax: NaN in input")
    if not -a.ndim <= axis < a.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _make(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


# ---------------------------------------------------------------- shape ops

def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    axes = tuple(reversed(range(a.ndim))) if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} along axis {axis}") from None
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def slice_(a, index):
    """Basic (non-fancy) indexing."""
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(out, (a,), backward)


# ---------------------------------------------------------------- image ops (C x H x W)

def conv_output_size(n, k, stride, padding):
    return (n + 2 * padding - k) // stride + 1


def conv2d(x, kernel, bias=None, stride=1, padding=0):
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeError(f"conv2d: expected C x H x W input and 4-D kernel, got {x.shape}, {kernel.shape}")
    c_out, c_in, kh, kw = kernel.shape
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square with odd size, got {kh}x{kw}")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv2d: input has {x.shape[0]} channels, kernel expects {c_in}")
    k = kh
    ho = conv_output_size(x.shape[1], k, stride, padding)
    wo = conv_output_size(x.shape[2], k, stride, padding)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d: output size {ho}x{wo} for input {x.shape}, k={k}, "
                         f"stride={stride}, padding={padding}")
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    win = win[:, : stride * (ho - 1) + 1 : stride, : stride * (wo - 1) + 1 : stride]
    # win: c_in x ho x wo x k x k
    out = np.tensordot(kernel.data, win, axes=([1, 2, 3], [0, 3, 4]))
    parents = (x, kernel)
    if bias is not None:
        out = out + bias.data[:, None, None]
        parents = (x, kernel, bias)

    def backward(g):
        gk = np.tensordot(g, win, axes=([1, 2], [1, 2])) if kernel.requires_grad else None
        gx = None
        if x.requires_grad:
            cols = np.tensordot(kernel.data, g, axes=([0], [0]))  # c_in x k x k x ho x wo
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i : i + stride * (ho - 1) + 1 : stride,
                        j : j + stride * (wo - 1) + 1 : stride] += cols[:, i, j]
            gx = gxp[:, padding : padding + x.shape[1], padding : padding + x.shape[2]]
        if bias is None:
            return gx, gk
        return gx, gk, g.sum(axis=(1, 2))

    return _make(out, parents, backward)


def _interp_matrix(n_in, n_out):
    # half-pixel centres, edge-clamped (align_corners=False)
    m = np.zeros((n_out, n_in))
    s = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * s - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        w = src - lo
        m[i, lo] += 1.0 - w
        m[i, hi] += w
    return m


def _pool_matrix(n_in, n_out):
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -(-((i + 1) * n_in) // n_out)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def _separable(x, mh, mw):
    out = np.einsum("oh,chw,pw->cop", mh, x.data, mw, optimize=True)
    return _make(out, (x,), lambda g: (np.einsum("oh,cop,pw->chw", mh, g, mw, optimize=True),))


def resize_bilinear(x, size):
    """Bilinear resampling of a C x H x W map to ``size`` = (H', W')."""
    h, w = size
    return _separable(x, _interp_matrix(x.shape[1], h), _interp_matrix(x.shape[2], w))


def upsample_bilinear2x(x):
    return resize_bilinear(x, (2 * x.shape[1], 2 * x.shape[2]))


def adaptive_avg_pool2d(x, size):
    h, w = size
    return _separable(x, _pool_matrix(x.shape[1], h), _pool_matrix(x.shape[2], w))


def upsample_nearest2x(x):
    out = x.data.repeat(2, axis=1).repeat(2, axis=2)
    c, h, w = x.shape
    return _make(out, (x,), lambda g: (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),))


def _blocks(x, k):
    c, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"pool: {h}x{w} map not divisible by window {k}")
    return x.data.reshape(c, h // k, k, w // k, k)


def avg_pool2d(x, k):
    b = _blocks(x, k)
    out = b.mean(axis=(2, 4))

    def backward(g):
        return (np.broadcast_to(g[:, :, None, :, None] / (k * k), b.shape).reshape(x.shape).copy(),)

    return _make(out, (x,), backward)


def max_pool2d(x, k):
    b = _blocks(x, k)
    out = b.max(axis=(2, 4))
    hit = (b == out[:, :, None, :, None]).astype(np.float64)
    hit /= hit.sum(axis=(2, 4), keepdims=True)
    return _make(out, (x,), lambda g: ((hit * g[:, :, None, :, None]).reshape(x.shape),))


# ---------------------------------------------------------------- serialization

MAGIC = b"HMHITNSR"
VERSION = 1
DTYPE_F64 = 1
_HEADER = struct.Struct("<8sIBI")


class FormatError(ValueError):
    pass


def write_tensor(fp, array):
    """magic | u32 version | u8 dtype | u32 rank | rank x u64 dims | f64 LE values."""
    array = np.asarray(array.data if isinstance(array, Tensor) else array, dtype=np.float64)
    fp.write(_HEADER.pack(MAGIC, VERSION, DTYPE_F64, array.ndim))
    fp.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    fp.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def _read_exact(fp, n):
    buf = fp.read(n)
    if len(buf) != n:
        raise FormatError("truncated tensor blob")
    return buf


def read_tensor(fp):
    magic, version, dtype, rank = _HEADER.unpack(_read_exact(fp, _HEADER.size))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    if dtype != DTYPE_F64:
        raise FormatError(f"unsupported dtype code {dtype}")
    dims = struct.unpack(f"<{rank}Q", _read_exact(fp, 8 * rank))
    count = int(np.prod(dims)) if rank else 1
    raw = _read_exact(fp, 8 * count)
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(dims)
