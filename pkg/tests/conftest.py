"""Shared fixtures: small random fields and cached synthetic scenes."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from lfdepth.core import LightField, SceneMeta
from lfdepth.io import Layer, SynthSpec, layered_spec, synth_scene

settings.register_profile("lfdepth", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("lfdepth")


def random_field(rng: np.random.Generator, h=12, w=12, n_v=3, n_u=3, channels=1, meta=None) -> LightField:
    shape = (h, w, n_v, n_u) if channels == 1 else (h, w, n_v, n_u, channels)
    return LightField(rng.random(shape), meta or SceneMeta())


def interior(a: np.ndarray, margin: int) -> np.ndarray:
    return a[margin:-margin, margin:-margin]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def plane_scene():
    """128x128x9x9 noise-free textured plane at d = 0.8 (a sample of the 11-point grid)."""
    return synth_scene(SynthSpec(128, 128, 9, 9, (Layer(0.8, seed=3),)))


@pytest.fixture(scope="session")
def small_plane():
    """48x48x5x5 plane at d = 0.4 for quick estimator checks."""
    return synth_scene(SynthSpec(48, 48, 5, 5, (Layer(0.4, seed=11),)))


@pytest.fixture(scope="session")
def two_layer_scene():
    """Noise-free front square at d = 1.0 over a back plane at d = -0.5."""
    return synth_scene(layered_spec([1.0, -0.5], size=128, views=9, seed=7))


# -- acceptance summary ------------------------------------------------------

_criteria: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    _criteria[number] = (title, "PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, verdict, detail = _criteria[number]
        line = f"criterion {number}: {verdict}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
