"""Gradient-check suites for every block and for the whole toy model."""
import contextlib
import time
from unittest import mock

from . import tensor as T
from .encoder_decoder import Decoder, Encoder, PyramidConfig, decode, encode_frame
from .gradcheck import finite_difference_check
from .interaction import Interaction, interact
from .losses import LossConfig, combined_loss
from .memory import MemoryBank, MemoryEncoder, MemoryReadout, mem_refine, memory_encode
from .nn import FFN, Attention, ChannelSpatialGate, DownsampleStack, Linear, Module
from .pipeline import HMHINet, RunConfig, clip_loss
from .synth import generate_clip
from .tensor import Rng, Tensor

TOY = dict(side=16, channels=(4, 8, 16, 32), capacity=2, length=3)


class _Wrap(Module):
    def __init__(self, **parts):
        vars(self).update(parts)


def _blocks(seed):
    """(name, loss closure, params) for each block at a small size."""
    r = Rng(seed)
    w = Rng(seed + 1)
    x = Tensor(r.normal((6, 4)))
    kv = Tensor(r.normal((5, 3)))
    m = Tensor(r.normal((4, 8, 8)))

    lin = Linear(4, 3, r)
    att = Attention(4, r, kv_dim=3)
    ffn = FFN(4, r)
    gate = ChannelSpatialGate(4, r)
    down = DownsampleStack(4, 6, r)
    readout = MemoryReadout(4, r)
    bank = MemoryBank(2, 2, 1)
    bank.push(Tensor(r.normal((6, 4))), 0)
    bank.push(Tensor(r.normal((6, 4))), 1)
    menc = MemoryEncoder(4, r)
    logits = Tensor(r.normal((1, 8, 8)))
    inter = Interaction(4, 8, r)
    f2, f4 = Tensor(r.normal((16, 4))), Tensor(r.normal((1, 8)))
    pc = PyramidConfig(16, (2, 4, 6, 8))
    enc, dec = Encoder(pc, r), Decoder(pc, r)
    img, flo = Tensor(r.uniform(0, 1, (3, 16, 16))), Tensor(r.uniform(0, 1, (3, 16, 16)))
    gt = (r.uniform(0, 1, (1, 8, 8)) > 0.5).astype(float)
    loss_logits = Tensor(r.normal((1, 8, 8)), requires_grad=True)

    wl, wa, wf = w.normal((6, 3)), w.normal((6, 4)), w.normal((6, 4))
    wg, wd, wr = w.normal((4, 8, 8)), w.normal((6, 2, 2)), w.normal((6, 4))
    we, w2, w4 = w.normal((6, 4)), w.normal((16, 4)), w.normal((1, 8))
    wdec = w.normal((1, 16, 16))

    def interaction():
        a, b = interact(f2, f4, inter, ((4, 4), (1, 1)))
        return T.sum_(a * Tensor(w2)) + T.sum_(b * Tensor(w4))

    def codec():
        return T.sum_(decode(encode_frame(img, flo, enc), dec) * Tensor(wdec))

    return [
        ("linear", lambda: T.sum_(lin(x) * Tensor(wl)), lin.parameters()),
        ("attention", lambda: T.sum_(att(x, kv) * Tensor(wa)), att.parameters()),
        ("ffn", lambda: T.sum_(ffn(x) * Tensor(wf)), ffn.parameters()),
        ("channel_spatial_gate", lambda: T.sum_(gate(m) * Tensor(wg)), gate.parameters()),
        ("downsample_stack", lambda: T.sum_(down(m) * Tensor(wd)), down.parameters()),
        ("memory_readout", lambda: T.sum_(mem_refine(x, bank, readout)[0] * Tensor(wr)),
         readout.parameters()),
        ("memory_encoder", lambda: T.sum_(memory_encode(x, logits, menc, (2, 3)) * Tensor(we)),
         menc.parameters()),
        ("interaction", interaction, inter.parameters()),
        ("encoder_decoder", codec, _Wrap(encoder=enc, decoder=dec).parameters()),
        ("loss", lambda: combined_loss(loss_logits, gt, LossConfig()), {"logits": loss_logits}),
    ]


def generic_point(model, seed, scale=0.1):
    """Move zero-initialised biases off zero.  With zero biases, all-zero
    windows put relu inputs exactly on the kink, where central differences
    see half the slope."""
    r = Rng(seed)
    for name, p in model.parameters().items():
        if name.endswith("bias"):
            p.data[...] = r.normal(p.shape, scale)
    return model


def toy_model_case(seed=0, **overrides):
    cfg = RunConfig(**{**TOY, "seed": seed, **overrides})
    model = generic_point(HMHINet(cfg), seed + 1)
    clip = generate_clip("translate", cfg.side, cfg.side, cfg.length, seed)
    return model, clip


@contextlib.contextmanager
def injected_bug():
    """Negative control: matmul backward scaled by 1.01 on both operands."""
    real = T.matmul

    def bad(a, b):
        out = real(a, b)
        if out._backward is not None:
            fwd = out._backward
            out._backward = lambda g: tuple(gi * 1.01 for gi in fwd(g))
        return out

    with mock.patch.object(T, "matmul", bad):
        yield


def run_gradcheck(seed=0, eps=1e-5, tol=1e-4, model_entries=32, blocks=True, model=True,
                  inject_bug=False):
    """Returns a list of (name, GradCheckReport, seconds)."""
    out = []
    ctx = injected_bug() if inject_bug else contextlib.nullcontext()
    with ctx:
        if blocks:
            for name, f, params in _blocks(seed):
                t0 = time.perf_counter()
                out.append((name, finite_difference_check(f, params, eps=eps, tol=tol, seed=seed),
                            time.perf_counter() - t0))
        if model:
            net, clip = toy_model_case(seed)
            t0 = time.perf_counter()
            rep = finite_difference_check(lambda: clip_loss(clip, net), net.parameters(), eps=eps,
                                          tol=tol, max_entries=model_entries, seed=seed)
            out.append(("toy_model", rep, time.perf_counter() - t0))
    return out
