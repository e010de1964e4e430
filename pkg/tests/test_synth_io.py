import colorsys

import numpy as np
import pytest
from PIL import Image

from hmhi.io import load_clip, read_image, read_mask, save_clip, write_image, write_mask
from hmhi.synth import SCENARIOS, FlowField, flow_to_color, generate_clip
from hmhi.tensor import ShapeError


def test_translate_masks_are_translates():
    clip = generate_clip("translate", 32, 32, 5, seed=0)
    m0 = clip.gt_masks[0]
    assert m0.any()
    for t in range(1, 5):
        dy, dx = (int(round(v)) for v in (clip.flow_fields[0].v[m0 > 0][0] * t,
                                            clip.flow_fields[0].u[m0 > 0][0] * t))
        assert np.array_equal(np.roll(m0, (dy, dx), axis=(0, 1)), clip.gt_masks[t])


@pytest.mark.parametrize("scenario", SCENARIOS)
def test_deterministic(scenario):
    a = generate_clip(scenario, 32, 32, 4, seed=7)
    b = generate_clip(scenario, 32, 32, 4, seed=7)
    for x, y in zip(a.frames + a.flows, b.frames + b.flows):
        assert x.data.tobytes() == y.data.tobytes()
    assert all(np.array_equal(x, y) for x, y in zip(a.gt_masks, b.gt_masks))
    assert all(f.shape == (3, 32, 32) for f in a.frames + a.flows)
    assert all(0.0 <= f.data.min() and f.data.max() <= 1.0 for f in a.frames + a.flows)


def test_seeds_differ():
    a, b = generate_clip("translate", 32, 32, 2, 1), generate_clip("translate", 32, 32, 2, 2)
    assert a.frames[0].data.tobytes() != b.frames[0].data.tobytes()


def test_occluder_hides_target():
    for seed in range(5):
        clip = generate_clip("occlude", 32, 32, 5, seed)
        full = clip.layers[0] == 1  # the target is static
        hidden = [np.count_nonzero(full & (layer == 2)) for layer in clip.layers]
        assert max(hidden) > 0
        for layer, mask in zip(clip.layers, clip.gt_masks):
            assert np.array_equal(mask > 0, layer == 1)
            assert not (mask.astype(bool) & (layer == 2)).any()


def test_multi_object_mask_covers_all_shapes():
    clip = generate_clip("multi_object", 32, 32, 3, 4)
    assert np.array_equal(clip.gt_masks[0] > 0, clip.layers[0] > 0)
    assert len(np.unique(clip.layers[0])) >= 3


@pytest.mark.parametrize("scenario", ["translate", "occlude", "multi_object", "camera_pan"])
@pytest.mark.parametrize("seed", range(3))
def test_flow_warps_frames_exactly(scenario, seed):
    clip = generate_clip(scenario, 32, 32, 4, seed)
    for t in range(3):
        flow = clip.flow_fields[t]
        assert np.array_equal(flow.u, np.round(flow.u)) and np.array_equal(flow.v, np.round(flow.v))
        rows, cols = np.mgrid[0:32, 0:32]
        qy, qx = rows + flow.v.astype(int), cols + flow.u.astype(int)
        inside = (qy >= 0) & (qy < 32) & (qx >= 0) & (qx < 32)
        qy, qx = np.clip(qy, 0, 31), np.clip(qx, 0, 31)
        # same surface visible at the destination: not occluded / disoccluded
        visible = inside & (clip.layers[t + 1][qy, qx] == clip.layers[t])
        assert visible.mean() > 0.7
        src = clip.frames[t].data[:, visible]
        dst = clip.frames[t + 1].data[:, qy[visible], qx[visible]]
        assert np.array_equal(src, dst)


def test_generate_errors():
    with pytest.raises(ShapeError):
        generate_clip("translate", 32, 48, 3, 0)
    with pytest.raises(ShapeError):
        generate_clip("translate", 24, 24, 3, 0)
    with pytest.raises(ValueError):
        generate_clip("translate", 32, 32, 0, 0)
    with pytest.raises(ValueError):
        generate_clip("spin", 32, 32, 3, 0)


# ---------------------------------------------------------------- flow colours

def test_zero_flow_is_white():
    z = np.zeros((4, 4))
    assert np.array_equal(flow_to_color(FlowField(z, z), 3.0).data, np.ones((3, 4, 4)))


def test_positive_u_at_max_is_pure_hue_zero():
    rgb = flow_to_color(FlowField(np.full((1, 1), 3.0), np.zeros((1, 1))), 3.0).data[:, 0, 0]
    assert np.allclose(rgb, colorsys.hsv_to_rgb(0.0, 1.0, 1.0), rtol=0, atol=1e-15)
    assert np.array_equal(rgb, [1.0, 0.0, 0.0])


def test_negated_flow_is_opposite_hue():
    r = np.random.default_rng(0)
    u, v = r.normal(size=(5, 5)), r.normal(size=(5, 5))
    a = flow_to_color(FlowField(u, v), 10.0).data
    b = flow_to_color(FlowField(-u, -v), 10.0).data
    for i in range(5):
        for j in range(5):
            ha = colorsys.rgb_to_hsv(*a[:, i, j])[0]
            hb = colorsys.rgb_to_hsv(*b[:, i, j])[0]
            assert abs(((ha - hb) % 1.0) - 0.5) < 1e-9


def test_flow_color_saturates_and_rejects_bad_scale():
    big = flow_to_color(FlowField(np.full((1, 1), 50.0), np.zeros((1, 1))), 3.0).data[:, 0, 0]
    assert np.array_equal(big, [1.0, 0.0, 0.0])
    with pytest.raises(ValueError):
        flow_to_color(FlowField(np.zeros((1, 1)), np.zeros((1, 1))), 0.0)


def test_flow_color_distinguishes_magnitudes():
    mags = np.linspace(0, 2.9, 30)[None, :]
    rgb = flow_to_color(FlowField(mags, np.zeros_like(mags)), 3.0).data
    q = np.round(rgb * 255).astype(int)
    assert len({tuple(q[:, 0, j]) for j in range(30)}) == 30


# ---------------------------------------------------------------- mask io

@pytest.mark.parametrize("ext", [".png", ".pgm"])
def test_mask_roundtrip(tmp_path, ext):
    m = (np.random.default_rng(1).uniform(size=(7, 9)) > 0.5).astype(np.uint8)
    path = str(tmp_path / f"m{ext}")
    write_mask(path, m)
    assert np.array_equal(read_mask(path), m)
    write_mask(path, np.zeros((3, 3)))
    assert not read_mask(path).any()


def test_checkerboard_pgm_bytes(tmp_path):
    board = np.array([[1, 0, 1], [0, 1, 0], [1, 0, 1]])
    path = tmp_path / "c.pgm"
    write_mask(str(path), board)
    assert path.read_bytes() == b"P2\n3 3\n255\n255 0 255\n0 255 0\n255 0 255\n"


def test_png_is_single_channel_255(tmp_path):
    path = str(tmp_path / "m.png")
    write_mask(path, np.eye(3))
    img = Image.open(path)
    assert img.mode == "L" and set(np.unique(np.asarray(img))) == {0, 255}


def test_read_threshold(tmp_path):
    path = str(tmp_path / "g.png")
    Image.fromarray(np.array([[127, 128]], np.uint8), mode="L").save(path)
    assert read_mask(path).tolist() == [[0, 1]]


def test_mask_read_errors(tmp_path):
    rgb = str(tmp_path / "rgb.png")
    Image.fromarray(np.zeros((2, 2, 3), np.uint8), mode="RGB").save(rgb)
    with pytest.raises(ValueError):
        read_mask(rgb)
    junk = tmp_path / "junk.png"
    junk.write_bytes(b"not an image")
    with pytest.raises(ValueError):
        read_mask(str(junk))
    with pytest.raises(ValueError):
        write_mask(str(tmp_path / "m.bmp"), np.zeros((2, 2)))


def test_image_roundtrip(tmp_path):
    clip = generate_clip("translate", 16, 16, 1, 0)
    path = str(tmp_path / "f.png")
    write_image(path, clip.frames[0])
    back = read_image(path)
    assert np.max(np.abs(back.data - clip.frames[0].data)) <= 0.5 / 255 + 1e-12


def test_manifest_roundtrip(tmp_path):
    clip = generate_clip("camera_pan", 16, 16, 3, 5)
    path = save_clip(clip, str(tmp_path), "pan")
    back = load_clip(path)
    assert len(back) == 3 and back.seed == 5 and back.scenario == "camera_pan"
    assert all(np.array_equal(a, b) for a, b in zip(back.gt_masks, clip.gt_masks))
    again = load_clip(save_clip(back, str(tmp_path / "again"), "pan"))
    assert all(a.data.tobytes() == b.data.tobytes() for a, b in zip(again.frames, back.frames))
