"""Synthetic video clips: hard-edged shapes over a texture, with exact masks
and exact forward flow (frame t -> t+1) straight from the renderer."""
from dataclasses import dataclass, field

import numpy as np
from matplotlib.colors import hsv_to_rgb
from scipy import ndimage

from .tensor import Rng, ShapeError, Tensor

SCENARIOS = ("translate", "scale", "occlude", "multi_object", "camera_pan")


@dataclass
class FlowField:
    u: np.ndarray  # horizontal (column) displacement in pixels
    v: np.ndarray  # vertical (row) displacement in pixels

    @property
    def magnitude(self):
        return np.hypot(self.u, self.v)


@dataclass
class ClipSample:
    frames: list
    flows: list
    gt_masks: list
    seed: int
    scenario: str
    flow_fields: list = field(default_factory=list)
    layers: list = field(default_factory=list)
    max_mag: float = 0.0

    def __len__(self):
        return len(self.frames)


def flow_to_color(flow, max_mag):
    """Colour-wheel encoding: hue from the flow angle, saturation from
    min(|f| / max_mag, 1), value 1.  Zero flow is white."""
    if max_mag <= 0:
        raise ValueError("max_mag must be positive")
    angle = np.arctan2(flow.v, flow.u)
    hsv = np.stack([np.mod(angle, 2 * np.pi) / (2 * np.pi),
                    np.clip(flow.magnitude / max_mag, 0.0, 1.0),
                    np.ones_like(angle)], axis=-1)
    return Tensor(hsv_to_rgb(hsv).transpose(2, 0, 1))


@dataclass
class _Shape:
    kind: str  # "rect" or "disc"
    center: np.ndarray  # (row, col) at t = 0
    velocity: np.ndarray  # (row, col) per frame
    size: np.ndarray  # rect: half extents (row, col); disc: radius in size[0]
    color: np.ndarray
    growth: float = 0.0  # radius / half-extent change per frame
    foreground: bool = True

    def center_at(self, t):
        return self.center + t * self.velocity

    def size_at(self, t):
        return self.size + t * self.growth

    def cover(self, t, rows, cols):
        cy, cx = self.center_at(t)
        s = self.size_at(t)
        if self.kind == "rect":
            return (np.abs(rows - cy) <= s[0]) & (np.abs(cols - cx) <= s[1])
        return (rows - cy) ** 2 + (cols - cx) ** 2 <= s[0] ** 2

    def displacement(self, t, rows, cols):
        c0, c1 = self.center_at(t), self.center_at(t + 1)
        ratio = self.size_at(t + 1)[0] / self.size_at(t)[0]
        dy = c1[0] + (rows - c0[0]) * ratio - rows
        dx = c1[1] + (cols - c0[1]) * ratio - cols
        return dy, dx


def _texture(rng, side, margin):
    n = side + 2 * margin
    noise = rng.uniform(0.0, 1.0, (n, n, 3))
    tex = np.stack([ndimage.gaussian_filter(noise[..., c], 2.0, mode="wrap") for c in range(3)], -1)
    tex = (tex - tex.min()) / (np.ptp(tex) + 1e-12)
    return 0.25 + 0.5 * tex


def _velocity(rng, vmax):
    while True:
        v = rng.integers(-vmax, vmax + 1, size=2).astype(np.float64)
        if np.any(v):
            return v


def _start(rng, side, extent, velocity, length):
    # keep the whole trajectory (t = 0..length) inside the frame
    lo = extent + 1 - np.minimum(0, velocity * length)
    hi = side - 2 - extent - np.maximum(0, velocity * length)
    lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
    return np.array([rng.integers(int(lo[i]), int(hi[i]) + 1) for i in range(2)], dtype=np.float64)


def _color(rng):
    # saturated colours stand out from the muted background
    return hsv_to_rgb(np.array([rng.uniform(0, 1, None), 0.9, 0.95]))


def _build_scene(scenario, side, length, rng):
    vmax = max(1, side // (4 * (length + 1)))
    base = max(3, side // 8)
    shapes, pan = [], np.zeros(2)

    def make(kind, extent, **kw):
        vel = kw.pop("velocity", None)
        vel = _velocity(rng, vmax) if vel is None else vel
        size = np.array([extent, extent], dtype=np.float64)
        if kind == "rect":
            size = np.array([extent, rng.integers(max(2, extent // 2), extent + 1)], dtype=np.float64)
        reach = extent + kw.get("growth", 0.0) * length
        return _Shape(kind, _start(rng, side, reach, vel, length), vel, size, _color(rng), **kw)

    if scenario == "translate":
        shapes.append(make("rect" if rng.integers(0, 2) else "disc", base))
    elif scenario == "scale":
        growth = rng.uniform(0.3, 0.6, None) * (1 if rng.integers(0, 2) else -1)
        extent = base + (max(0.0, -growth) * length)
        shapes.append(make("disc", extent, growth=growth, velocity=_velocity(rng, vmax)))
    elif scenario == "occlude":
        target = make("rect", base + 1, velocity=np.zeros(2))
        shapes.append(target)
        speed = max(1, vmax)
        mid = (length - 1) // 2
        bar = _Shape("rect", target.center - np.array([0.0, mid * speed]), np.array([0.0, float(speed)]),
                     np.array([target.size[0] + 2, max(1.0, target.size[1] // 3)]), _color(rng),
                     foreground=False)
        shapes.append(bar)
    elif scenario == "multi_object":
        for _ in range(int(rng.integers(2, 4))):
            shapes.append(make("rect" if rng.integers(0, 2) else "disc", max(3, base * 3 // 4)))
    elif scenario == "camera_pan":
        pan = _velocity(rng, vmax)
        shapes.append(make("disc", base))
    else:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    return shapes, pan


def render_frame(shapes, pan, tex, margin, t, side):
    """Return (rgb H x W x 3, layer ids, flow field) for frame ``t``.

    Layer 0 is the background; shape j is layer j + 1, drawn in list order.
    """
    rows, cols = np.mgrid[0:side, 0:side].astype(np.float64)
    off = (margin - t * pan).astype(int)
    rgb = tex[off[0] : off[0] + side, off[1] : off[1] + side].copy()
    layer = np.zeros((side, side), dtype=np.int64)
    du = np.full((side, side), pan[1])
    dv = np.full((side, side), pan[0])
    for j, shape in enumerate(shapes):
        m = shape.cover(t, rows, cols)
        rgb[m] = shape.color
        layer[m] = j + 1
        dy, dx = shape.displacement(t, rows, cols)
        du[m], dv[m] = dx[m], dy[m]
    return rgb, layer, FlowField(du, dv)


def generate_clip(scenario, H, W, L, seed, max_mag=None):
    if H != W or H <= 0 or H % 16:
        raise ShapeError(f"clip must be square with side divisible by 16, got {H}x{W}")
    if L < 1:
        raise ValueError(f"clip length must be >= 1, got {L}")
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    side = H
    rng = Rng(seed)
    shapes, pan = _build_scene(scenario, side, L, rng)
    margin = int(np.abs(pan).max() * (L + 1)) + 1
    tex = _texture(rng, side, margin)
    max_mag = 0.1 * side if max_mag is None else max_mag
    fg_ids = np.array([0] + [j + 1 for j, s in enumerate(shapes) if s.foreground])
    clip = ClipSample([], [], [], seed, scenario, max_mag=max_mag)
    for t in range(L):
        rgb, layer, flow = render_frame(shapes, pan, tex, margin, t, side)
        clip.frames.append(Tensor(rgb.transpose(2, 0, 1)))
        clip.flow_fields.append(flow)
        clip.flows.append(flow_to_color(flow, max_mag))
        clip.gt_masks.append(np.isin(layer, fg_ids[1:]).astype(np.uint8))
        clip.layers.append(layer)
    return clip
