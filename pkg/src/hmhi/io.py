"""Mask / image files and the clip manifest.

Masks are 8-bit single channel, written as {0, 255}; on read, values >= 128
are foreground.  Two containers are supported, chosen by extension:
PNG (via Pillow) and plain ASCII PGM laid out as

    P2
    <width> <height>
    255
    <one image row per line, values separated by single spaces>
"""
import json
import os

import numpy as np
from PIL import Image

from .synth import ClipSample
from .tensor import Tensor


def _ext(path):
    ext = os.path.splitext(path)[1].lower()
    if ext not in (".png", ".pgm"):
        raise ValueError(f"unsupported mask file type {ext!r} (use .png or .pgm)")
    return ext


def _write_pgm(path, pixels):
    h, w = pixels.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(int(v)) for v in row) for row in pixels]
    with open(path, "w", newline="\n") as fp:
        fp.write("\n".join(lines) + "\n")


def _read_pgm(path):
    with open(path) as fp:
        tokens = []
        for line in fp:
            tokens += line.split("#", 1)[0].split()
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not an ASCII PGM (P2) file")
    w, h, maxval = (int(t) for t in tokens[1:4])
    values = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if values.size != w * h:
        raise ValueError(f"{path}: expected {w * h} pixels, found {values.size}")
    if maxval != 255:
        values = np.round(values * 255.0 / maxval).astype(np.int64)
    return values.reshape(h, w)


def write_mask(path, mask):
    pixels = np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)
    if _ext(path) == ".pgm":
        _write_pgm(path, pixels)
    else:
        Image.fromarray(pixels, mode="L").save(path)


def read_mask(path):
    if _ext(path) == ".pgm":
        pixels = _read_pgm(path)
    else:
        try:
            img = Image.open(path)
            img.load()
        except OSError as exc:
            raise ValueError(f"{path}: unreadable image ({exc})") from None
        if img.mode not in ("L", "1"):
            raise ValueError(f"{path}: expected a grayscale mask, got mode {img.mode}")
        pixels = np.asarray(img.convert("L"))
    return (pixels >= 128).astype(np.uint8)


def write_image(path, image):
    """Save a 3 x H x W tensor with values in [0, 1] as 8-bit RGB PNG."""
    rgb = np.clip(np.round(image.data.transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path)


def read_image(path):
    rgb = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return Tensor(rgb.transpose(2, 0, 1))


def write_probability(path, prob):
    """8-bit grayscale dump of a probability map."""
    pixels = np.clip(np.round(np.asarray(prob) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(path)


def save_clip(clip, directory, name="clip"):
    """Write frames, colour-coded flows and masks plus ``<name>.json``."""
    os.makedirs(directory, exist_ok=True)
    manifest = {"name": name, "seed": int(clip.seed), "scenario": clip.scenario,
                "height": clip.frames[0].shape[1], "width": clip.frames[0].shape[2],
                "length": len(clip), "max_mag": clip.max_mag,
                "frames": [], "flows": [], "masks": []}
    for t in range(len(clip)):
        for key, stem in (("frames", "frame"), ("flows", "flow"), ("masks", "mask")):
            rel = f"{name}/{stem}_{t:03d}.png"
            manifest[key].append(rel)
        os.makedirs(os.path.join(directory, name), exist_ok=True)
        write_image(os.path.join(directory, manifest["frames"][t]), clip.frames[t])
        write_image(os.path.join(directory, manifest["flows"][t]), clip.flows[t])
        write_mask(os.path.join(directory, manifest["masks"][t]), clip.gt_masks[t])
    path = os.path.join(directory, f"{name}.json")
    with open(path, "w") as fp:
        json.dump(manifest, fp, indent=2, sort_keys=True)
    return path


def load_clip(manifest_path):
    with open(manifest_path) as fp:
        manifest = json.load(fp)
    root = os.path.dirname(os.path.abspath(manifest_path))
    lengths = {len(manifest[k]) for k in ("frames", "flows", "masks")}
    if len(lengths) != 1:
        raise ValueError(f"{manifest_path}: frame/flow/mask lists differ in length")
    return ClipSample(
        frames=[read_image(os.path.join(root, p)) for p in manifest["frames"]],
        flows=[read_image(os.path.join(root, p)) for p in manifest["flows"]],
        gt_masks=[read_mask(os.path.join(root, p)) for p in manifest["masks"]],
        seed=manifest["seed"],
        scenario=manifest["scenario"],
        max_mag=manifest.get("max_mag", 0.0),
    )
