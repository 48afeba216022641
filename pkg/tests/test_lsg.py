import numpy as np
import pytest

from lfdepth.core import LightField, SceneMeta
from lfdepth.io import Layer, SynthSpec, synth_scene
from lfdepth.lsg import LsgParams, estimate_lsg

from conftest import interior


def ramp_field(d0, size=16, views=9, slope=0.01):
    """``L = g(x + (u - cu) d0)`` with linear ``g``."""
    c = views // 2
    y, x, v, u = np.meshgrid(np.arange(size), np.arange(size), np.arange(views), np.arange(views), indexing="ij")
    return LightField(0.5 + slope * (x + (u - c) * d0))


class TestRamp:
    @pytest.mark.parametrize("d0", [-1.5, -0.4, 0.0, 0.7, 2.0])
    def test_recovers_disparity(self, d0):
        d = estimate_lsg(ramp_field(d0))
        assert d.valid.all()
        assert np.max(np.abs(interior(d.values, 2) - d0)) < 1e-6

    def test_vertical_ramp(self):
        c = 4
        y, x, v, u = np.meshgrid(np.arange(12), np.arange(12), np.arange(9), np.arange(9), indexing="ij")
        lf = LightField(0.5 + 0.01 * (y + (v - c) * -0.6))
        d = estimate_lsg(lf)
        assert np.max(np.abs(interior(d.values, 2) + 0.6)) < 1e-6

    def test_angular_denominator_gives_reciprocal(self):
        d = estimate_lsg(ramp_field(0.7), LsgParams(denominator="angular"))
        assert np.max(np.abs(interior(d.values, 2) - 1 / 0.7)) < 1e-6


class TestEstimateLsg:
    def test_constant_field_invalid(self):
        d = estimate_lsg(LightField(np.full((8, 8, 3, 3), 0.4)))
        assert not d.valid.any()

    def test_textured_plane(self, plane_scene):
        lf, gt = plane_scene
        d = estimate_lsg(lf)
        err = interior(np.abs(d.values - gt.values), 10)
        assert np.nanmean(err) < 0.05

    def test_output_in_range(self, small_plane):
        lf, _ = small_plane
        narrow = lf.with_data(lf.data, SceneMeta(disparity_min=-0.1, disparity_max=0.2))
        d = estimate_lsg(narrow)
        v = d.values[d.valid]
        assert v.min() >= -0.1 and v.max() <= 0.2

    @pytest.mark.parametrize("a", [0.25, 0.5])
    def test_scale_invariance(self, small_plane, a):
        # numerator and denominator both scale by a^2; the additive guard is
        # the only term that does not, so it is made negligible here
        lf, _ = small_plane
        p = LsgParams(denom_epsilon=1e-15)
        d1 = estimate_lsg(lf, p)
        d2 = estimate_lsg(lf.with_data(a * lf.data), p)
        np.testing.assert_array_equal(d1.valid, d2.valid)
        np.testing.assert_allclose(d2.values[d2.valid], d1.values[d1.valid], rtol=1e-9, atol=0)

    def test_noise_degrades_monotonically(self):
        maes = []
        for sigma in (0.0, 0.01, 0.05):
            lf, gt = synth_scene(SynthSpec(64, 64, 9, 9, (Layer(0.6, seed=9),), noise_sigma=sigma, noise_seed=1))
            d = estimate_lsg(lf)
            maes.append(np.nanmean(interior(np.abs(d.values - gt.values), 8)))
        assert maes[0] <= maes[1] <= maes[2]

    def test_window_radius_zero(self):
        d = estimate_lsg(ramp_field(0.7), LsgParams(window_radius=0))
        assert np.max(np.abs(interior(d.values, 1) - 0.7)) < 1e-6

    def test_thread_invariance(self, small_plane):
        lf, _ = small_plane
        a, b = estimate_lsg(lf, threads=1), estimate_lsg(lf, threads=4)
        np.testing.assert_array_equal(a.values, b.values)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            LsgParams(window_radius=-1)
        with pytest.raises(ValueError):
            LsgParams(denom_epsilon=0)
        with pytest.raises(ValueError):
            LsgParams(denominator="other")
