import numpy as np
import pytest

from crossdehaze.hazesim import synth_dataset
from crossdehaze.imgdata import Image, gen_scene
from crossdehaze.nnet import autograd as ag
from crossdehaze.rng import Rng

# acceptance lines collected by tests/test_acceptance.py, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return Rng(1234, ("tests",))


@pytest.fixture
def scene(rng):
    return gen_scene(rng.split("scene"), 24, 20)


@pytest.fixture
def small_ds(rng):
    return synth_dataset(rng.split("ds"), 6, 16, 16)


@pytest.fixture
def corrupted_gelu(monkeypatch):
    """Negative control: GELU's backward rule scaled by 1.5."""
    good = ag._gelu_grad
    monkeypatch.setattr(ag, "_gelu_grad", lambda x: 1.5 * good(x))
    yield


def random_image(rng, w, h):
    return Image(rng.uniform(0.0, 1.0, size=(3, h, w)))


def numeric_grad(f, x, eps=1e-6):
    """Central differences of scalar ``f`` with respect to every entry of float64 ``x``."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f(x)
        flat[i] = old - eps
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


def max_rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def corrupted_gelu_factory(monkeypatch):
    """Context-manager form of ``corrupted_gelu`` for use inside a single test."""
    from contextlib import contextmanager

    @contextmanager
    def corrupt():
        with monkeypatch.context() as m:
            good = ag._gelu_grad
            m.setattr(ag, "_gelu_grad", lambda x: 1.5 * good(x))
            yield

    return corrupt
