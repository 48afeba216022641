import numpy as np
import pytest
from scipy import ndimage

from lfdepth.core import CostVolume, LightField, SceneMeta
from lfdepth.io import Layer, SynthSpec, layered_spec, synth_scene
from lfdepth.sweep import SweepParams, box_filter_cost, build_cost_volume, estimate_sweep, select_disparity

from conftest import interior, random_field
from oracles import bilinear_clamped, naive_cost_volume


class TestCostVolume:
    def test_constant_field(self):
        cv = build_cost_volume(LightField(np.full((6, 6, 3, 3), 0.7)), SweepParams(5))
        np.testing.assert_array_equal(cv.costs, 0.0)

    def test_matches_naive_oracle(self, rng):
        for _ in range(5):
            lf = random_field(rng, 7, 9, 3, 3)
            p = SweepParams(4, -1.3, 1.7)
            np.testing.assert_array_equal(build_cost_volume(lf, p).costs, naive_cost_volume(lf.data, p.disparities))

    def test_plane_on_sample(self):
        lf, _ = synth_scene(SynthSpec(64, 64, 9, 9, (Layer(0.8, seed=3),)))
        cv = build_cost_volume(lf, SweepParams(11))
        k = int(np.argmin(np.abs(cv.disparities - 0.8)))
        inner = interior(cv.costs, 10)
        assert np.all(np.argmin(inner, axis=2) == k)
        assert inner[..., k].max() < 1e-6

    def test_two_views_constant_offset(self, rng):
        # views vary only along y and n_v = 1, so horizontal shifts never matter
        col = rng.random(8)[:, None] * 0.8
        base = np.repeat(col, 10, axis=1)
        delta = 0.15
        data = np.stack([base, base + delta], axis=-1)[:, :, None, :]
        cv = build_cost_volume(LightField(data), SweepParams(7))
        np.testing.assert_allclose(cv.costs, delta**2 / 4, rtol=1e-12)

    def test_disparities_inclusive_uniform(self):
        np.testing.assert_allclose(SweepParams(11).disparities, np.linspace(-2, 2, 11))

    def test_colour_uses_luma(self, rng):
        lf = random_field(rng, 6, 6, 3, 3, channels=3)
        p = SweepParams(3)
        np.testing.assert_array_equal(build_cost_volume(lf, p).costs, build_cost_volume(lf.gray(), p).costs)

    def test_thread_invariance(self, small_plane):
        lf, _ = small_plane
        a = build_cost_volume(lf, SweepParams(9), threads=1)
        b = build_cost_volume(lf, SweepParams(9), threads=3)
        np.testing.assert_array_equal(a.costs, b.costs)


class TestStrictMode:
    def test_interior_matches_clamped(self, rng):
        lf = random_field(rng, 12, 12, 3, 3)
        p, ps = SweepParams(3, -1.0, 1.0), SweepParams(3, -1.0, 1.0, strict=True)
        a, b = build_cost_volume(lf, p).costs, build_cost_volume(lf, ps).costs
        np.testing.assert_allclose(interior(a, 2), interior(b, 2), atol=1e-15)

    def test_corner_excludes_out_of_view_samples(self, rng):
        lf = random_field(rng, 6, 6, 3, 3)
        d = 1.0
        cv = build_cost_volume(lf, SweepParams(2, -1.0, d, strict=True))
        samples = []
        for u in range(3):
            for v in range(3):
                x, y = 0 - (u - 1) * d, 0 - (v - 1) * d
                if 0 <= x <= 5 and 0 <= y <= 5:
                    samples.append(bilinear_clamped(lf.data[:, :, v, u], x, y))
        assert cv.costs[0, 0, 1] == pytest.approx(np.var(samples), abs=1e-15)


class TestBoxFilter:
    def test_radius_zero_identity(self, rng):
        cv = CostVolume(rng.random((4, 5, 3)), [0.0, 1.0, 2.0])
        np.testing.assert_array_equal(box_filter_cost(cv, 0).costs, cv.costs)

    def test_constant_slice(self):
        cv = CostVolume(np.full((5, 5, 2), 0.3), [0.0, 1.0])
        np.testing.assert_allclose(box_filter_cost(cv, 1).costs, 0.3, rtol=1e-15)

    def test_impulse(self):
        costs = np.zeros((5, 5, 2))
        costs[2, 2, :] = 9.0
        out = box_filter_cost(CostVolume(costs, [0.0, 1.0]), 1).costs[..., 0]
        expected = np.zeros((5, 5))
        expected[1:4, 1:4] = 1.0
        np.testing.assert_allclose(out, expected, atol=1e-15)

    def test_border_replication(self):
        costs = np.zeros((4, 4, 2))
        costs[0, 0, :] = 9.0
        out = box_filter_cost(CostVolume(costs, [0.0, 1.0]), 1).costs[..., 0]
        # the corner appears 4 times in its own replicated window
        assert out[0, 0] == pytest.approx(4.0)

    def test_rejects_negative_radius(self):
        with pytest.raises(ValueError):
            box_filter_cost(CostVolume(np.zeros((2, 2, 2)), [0.0, 1.0]), -1)


class TestSelect:
    def test_strict_minimum(self):
        costs = np.ones((3, 4, 5))
        costs[..., 3] = 0.0
        d = select_disparity(CostVolume(costs, np.linspace(-2, 2, 5)))
        assert d.valid.all() and np.all(d.values == 1.0)

    def test_ties_go_to_first(self):
        d = select_disparity(CostVolume(np.zeros((2, 2, 4)), [-1.0, 0.0, 1.0, 2.0]))
        assert np.all(d.values == -1.0)

    def test_permutation_stable(self, rng):
        costs = rng.random((6, 7, 5))
        disp = np.linspace(-1, 1, 5)
        perm = rng.permutation(42)
        flat = costs.reshape(42, 5)
        a = select_disparity(CostVolume(costs, disp)).values.reshape(-1)
        b = select_disparity(CostVolume(flat[perm].reshape(6, 7, 5), disp)).values.reshape(-1)
        np.testing.assert_array_equal(a[perm], b)

    def test_two_layer_quantised_ground_truth(self):
        lf, gt = synth_scene(layered_spec([0.9, -0.5], size=96, views=9, seed=4))
        p = SweepParams(11)
        d = estimate_sweep(lf, p)
        nearest = p.disparities[np.argmin(np.abs(gt.values[..., None] - p.disparities), axis=2)]
        # non-boundary: away from the image border and 4 px from GT discontinuities
        edge = np.zeros_like(gt.valid)
        edge[:, 1:] |= gt.values[:, 1:] != gt.values[:, :-1]
        edge[1:, :] |= gt.values[1:, :] != gt.values[:-1, :]
        band = ndimage.binary_dilation(edge, iterations=4)
        keep = ~band
        keep[:10, :] = keep[-10:, :] = keep[:, :10] = keep[:, -10:] = False
        assert np.mean(np.isclose(d.values, nearest)[keep]) >= 0.95


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            SweepParams(1)
        with pytest.raises(ValueError):
            SweepParams(box_radius=-1)
        with pytest.raises(ValueError):
            SweepParams(disparity_min=1.0, disparity_max=1.0)

    def test_for_scene(self):
        p = SweepParams.for_scene(SceneMeta(disparity_min=-1, disparity_max=3), 5)
        np.testing.assert_allclose(p.disparities, [-1, 0, 1, 2, 3])
