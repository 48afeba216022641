import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from lfdepth.core import DisparityMap, SceneMeta, shear
from lfdepth.io import (
    Layer,
    PFMError,
    SceneConfig,
    SceneConfigError,
    SynthSpec,
    layered_spec,
    load_lightfield,
    load_scene,
    parse_key_values,
    quantize,
    read_pfm,
    read_scene_config,
    save_scene,
    synth_scene,
    write_gray_png,
    write_pfm,
    write_scene_config,
)

from conftest import interior


def write_views(directory, n_u, n_v, h=16, w=16, skip=None, seed=0):
    rng = np.random.default_rng(seed)
    for v in range(n_v):
        for u in range(n_u):
            index = v * n_u + u
            if index == skip:
                continue
            Image.fromarray(rng.integers(0, 256, (h, w), dtype=np.uint8)).save(directory / f"input_Cam{index:03d}.png")


def config(directory, n_u, n_v, gt=None):
    return SceneConfig(directory, n_u, n_v, SceneMeta(), gt_path=gt)


# -- scene loading -----------------------------------------------------------


class TestLoadLightfield:
    def test_full_grid(self, tmp_path):
        write_views(tmp_path, 9, 9, h=32, w=24)
        scene = load_lightfield(config(tmp_path, 9, 9))
        lf = scene.lf
        assert (lf.height, lf.width, lf.n_v, lf.n_u) == (32, 24, 9, 9)
        # row-major (v, u) naming: index 13 is v=1, u=4
        expected = np.asarray(Image.open(tmp_path / "input_Cam013.png"), dtype=float) / 255.0
        np.testing.assert_array_equal(lf.data[:, :, 1, 4], expected)
        assert scene.gt is None

    def test_single_view(self, tmp_path):
        write_views(tmp_path, 1, 1)
        lf = load_lightfield(config(tmp_path, 1, 1)).lf
        assert (lf.n_u, lf.n_v, lf.center_u, lf.center_v) == (1, 1, 0, 0)

    def test_missing_view_names_index(self, tmp_path):
        write_views(tmp_path, 9, 9, h=4, w=4, skip=37)
        with pytest.raises(FileNotFoundError, match="missing view 37"):
            load_lightfield(config(tmp_path, 9, 9))

    def test_dimension_mismatch_names_index(self, tmp_path):
        write_views(tmp_path, 2, 1)
        Image.fromarray(np.zeros((8, 8), np.uint8)).save(tmp_path / "input_Cam001.png")
        with pytest.raises(SceneConfigError, match="view 1"):
            load_lightfield(config(tmp_path, 2, 1))

    def test_unreadable_view_names_index(self, tmp_path):
        write_views(tmp_path, 2, 1)
        (tmp_path / "input_Cam000.png").write_bytes(b"not a png")
        with pytest.raises(OSError, match="view 0"):
            load_lightfield(config(tmp_path, 2, 1))

    def test_rgb_views(self, tmp_path):
        rgb = np.random.default_rng(1).integers(0, 256, (6, 5, 3), dtype=np.uint8)
        Image.fromarray(rgb).save(tmp_path / "input_Cam000.png")
        lf = load_lightfield(config(tmp_path, 1, 1)).lf
        assert lf.channels == 3
        np.testing.assert_array_equal(lf.data[:, :, 0, 0], rgb / 255.0)


class TestSceneConfig:
    def test_round_trip(self, tmp_path):
        meta = SceneMeta(123.5, 0.25, -1.5, 3.0, "boxes")
        cfg = SceneConfig(tmp_path / "views", 5, 3, meta, "img_{u}_{v}.png", tmp_path / "gt.pfm")
        write_scene_config(cfg, tmp_path / "boxes.cfg")
        back = read_scene_config(tmp_path / "boxes.cfg")
        assert back.meta == meta
        assert (back.n_u, back.n_v, back.pattern) == (5, 3, "img_{u}_{v}.png")
        assert back.image_dir.resolve() == (tmp_path / "views").resolve()
        assert back.gt_path.resolve() == (tmp_path / "gt.pfm").resolve()

    def test_comments_and_whitespace(self):
        kv = parse_key_values("# header\n name = dino  # trailing\n\nn_u=9\n")
        assert kv == {"name": "dino", "n_u": "9"}

    def test_bad_line(self):
        with pytest.raises(SceneConfigError):
            parse_key_values("just words\n")

    def test_bad_values(self, tmp_path):
        (tmp_path / "s.cfg").write_text("disp_min = 2\ndisp_max = -2\n")
        with pytest.raises(SceneConfigError):
            read_scene_config(tmp_path / "s.cfg")
        (tmp_path / "t.cfg").write_text("n_u = nine\n")
        with pytest.raises(SceneConfigError):
            read_scene_config(tmp_path / "t.cfg")


class TestSaveScene:
    def test_round_trip_within_quantization(self, tmp_path):
        lf, gt = synth_scene(SynthSpec(20, 18, 3, 5, (Layer(0.5, seed=4),)))
        scene = load_scene(save_scene(tmp_path, lf, gt))
        assert np.max(np.abs(scene.lf.data - lf.data)) <= 0.5 / 255 + 1e-12
        np.testing.assert_array_equal(scene.lf.data, quantize(lf.data))
        np.testing.assert_array_equal(scene.gt.values, gt.values.astype(np.float32))
        assert scene.meta == lf.meta


# -- PFM ---------------------------------------------------------------------


def bits(a):
    return np.asarray(a, np.float32).view(np.uint32)


class TestPFM:
    def test_constant_round_trip(self, tmp_path):
        write_pfm(np.full((4, 4), 1.5), tmp_path / "m.pfm")
        np.testing.assert_array_equal(read_pfm(tmp_path / "m.pfm"), np.full((4, 4), 1.5, np.float32))

    def test_handcrafted_bytes(self, tmp_path):
        # rows are stored bottom-up: the first stored row is the last image row
        payload = struct.pack("<4f", 3.0, 4.0, 1.0, 2.0)
        (tmp_path / "h.pfm").write_bytes(b"Pf\n2 2\n-1.0\n" + payload)
        np.testing.assert_array_equal(read_pfm(tmp_path / "h.pfm"), [[1.0, 2.0], [3.0, 4.0]])

    def test_big_endian(self, tmp_path):
        payload = struct.pack(">2f", -0.5, 7.25)
        (tmp_path / "b.pfm").write_bytes(b"Pf\n2 1\n1.0\n" + payload)
        np.testing.assert_array_equal(read_pfm(tmp_path / "b.pfm"), [[-0.5, 7.25]])

    def test_rejects_colour(self, tmp_path):
        (tmp_path / "c.pfm").write_bytes(b"PF\n1 1\n-1.0\n" + bytes(12))
        with pytest.raises(PFMError, match="Pf"):
            read_pfm(tmp_path / "c.pfm")

    @pytest.mark.parametrize(
        "blob",
        [b"P5\n1 1\n255\n\x00", b"Pf\n0 1\n-1.0\n", b"Pf\n1 1\n0.0\n" + bytes(4), b"Pf\n2 2\n-1.0\n" + bytes(15)],
    )
    def test_rejects_malformed(self, tmp_path, blob):
        (tmp_path / "x.pfm").write_bytes(blob)
        with pytest.raises(PFMError):
            read_pfm(tmp_path / "x.pfm")

    def test_subnormal_and_nan_bits(self, tmp_path):
        m = np.array([[1e-45, -1e-40, np.nan], [-0.0, np.inf, 3.5]], np.float32)
        write_pfm(m, tmp_path / "s.pfm")
        np.testing.assert_array_equal(bits(read_pfm(tmp_path / "s.pfm")), bits(m))

    @given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.floats(width=32, allow_nan=False)))
    def test_bit_exact_round_trip(self, tmp_path_factory, m):
        path = tmp_path_factory.mktemp("pfm") / "r.pfm"
        write_pfm(m, path)
        np.testing.assert_array_equal(bits(read_pfm(path)), bits(m))


# -- PNG ---------------------------------------------------------------------


class TestGrayPng:
    def read(self, path):
        return np.asarray(Image.open(path))

    def test_lo_and_hi(self, tmp_path):
        write_gray_png(np.full((3, 3), -2.0), tmp_path / "lo.png", -2, 2)
        write_gray_png(np.full((3, 3), 2.0), tmp_path / "hi.png", -2, 2)
        assert np.all(self.read(tmp_path / "lo.png") == 0)
        assert np.all(self.read(tmp_path / "hi.png") == 255)

    def test_midpoint_rounds_half_to_even(self, tmp_path):
        write_gray_png(np.zeros((2, 2)), tmp_path / "mid.png", -2, 2)
        assert np.all(self.read(tmp_path / "mid.png") == 128)

    def test_clamped_and_invalid(self, tmp_path):
        d = DisparityMap(np.array([[5.0, -5.0, 1.0]]), np.array([[True, True, False]]))
        write_gray_png(d, tmp_path / "c.png", 0, 1)
        assert self.read(tmp_path / "c.png").tolist() == [[255, 0, 0]]
        write_gray_png(np.array([[np.nan, 1.0]]), tmp_path / "n.png", 0, 1)
        assert self.read(tmp_path / "n.png").tolist() == [[0, 255]]

    def test_rejects_bad_range(self, tmp_path):
        with pytest.raises(ValueError):
            write_gray_png(np.zeros((2, 2)), tmp_path / "x.png", 1, 1)

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            write_gray_png(np.zeros((2, 2)), tmp_path / "no" / "such" / "dir.png", 0, 1)


# -- synthetic scenes --------------------------------------------------------


class TestSynth:
    def test_single_layer_zero(self):
        lf, gt = synth_scene(SynthSpec(16, 16, 3, 3, (Layer(0.0, seed=1),)))
        for v in range(3):
            for u in range(3):
                np.testing.assert_array_equal(lf.view(u, v), lf.view(1, 1))
        assert gt.valid.all() and np.all(gt.values == 0.0)

    def test_single_layer_shear_aligns(self):
        lf, gt = synth_scene(SynthSpec(40, 40, 5, 5, (Layer(1.5, seed=8, cell=12.0),)))
        assert np.all(gt.values == 1.5)
        sheared = shear(lf, 1.5)
        c = interior(sheared.view(2, 2), 5)
        for v in range(5):
            for u in range(5):
                assert np.max(np.abs(interior(sheared.view(u, v), 5) - c)) < 0.01

    def test_two_layer_compositor(self):
        # front square at d=1 over a back plane at d=-1
        spec = SynthSpec(24, 24, 3, 3, (Layer(1.0, seed=1, region=(8, 8, 16, 16)), Layer(-1.0, seed=2)))
        lf, gt = synth_scene(spec)
        ys, xs = np.mgrid[0:24, 0:24]
        front = (xs >= 8) & (xs < 16) & (ys >= 8) & (ys < 16)
        np.testing.assert_array_equal(gt.values, np.where(front, 1.0, -1.0))
        # compositor oracle: per view, the front texture is visible where its
        # texture coordinate x + (u - cu) d falls inside the square
        front_only, _ = synth_scene(SynthSpec(24, 24, 3, 3, (Layer(1.0, seed=1),)))
        back_only, _ = synth_scene(SynthSpec(24, 24, 3, 3, (Layer(-1.0, seed=2),)))
        for v in range(3):
            for u in range(3):
                tx, ty = xs + (u - 1) * 1.0, ys + (v - 1) * 1.0
                visible = (tx >= 8) & (tx < 16) & (ty >= 8) & (ty < 16)
                expected = np.where(visible, front_only.view(u, v), back_only.view(u, v))
                np.testing.assert_array_equal(lf.view(u, v), expected)

    def test_deterministic_and_seeded(self):
        spec = layered_spec([1.0, -0.5], size=32, views=3, seed=7)
        a, _ = synth_scene(spec)
        b, _ = synth_scene(spec)
        c, _ = synth_scene(layered_spec([1.0, -0.5], size=32, views=3, seed=8))
        np.testing.assert_array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_noise_after_composition(self):
        clean, _ = synth_scene(SynthSpec(16, 16, 3, 3, (Layer(0.3),)))
        noisy, _ = synth_scene(SynthSpec(16, 16, 3, 3, (Layer(0.3),), noise_sigma=0.05, noise_seed=2))
        assert 0.02 < np.std(noisy.data - clean.data) < 0.08

    def test_validation(self):
        with pytest.raises(ValueError):
            synth_scene(SynthSpec(8, 8, 3, 3, ()))
        with pytest.raises(ValueError):
            synth_scene(SynthSpec(8, 8, 3, 3, (Layer(2.5),)))
        with pytest.raises(ValueError):
            synth_scene(SynthSpec(8, 8, 3, 3, (Layer(0.0),), noise_sigma=-1))

    def test_texture_has_gradients(self):
        lf, _ = synth_scene(SynthSpec(32, 32, 1, 1, (Layer(0.0, seed=3),)))
        gx = np.abs(np.diff(lf.data[:, :, 0, 0], axis=1))
        assert np.mean(gx > 1e-3) > 0.9
