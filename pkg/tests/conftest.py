import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from assistive import assets  # noqa: E402
from assistive.classifiers import ReferenceCNN  # noqa: E402
from assistive.renderer import Camera, Light, Scene  # noqa: E402

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_cnn():
    """Randomly initialised CNN with non-zero biases (16x16 inputs, 10 classes)."""
    m = ReferenceCNN.initialize((16, 16, 3), 10, seed=7)
    r = np.random.default_rng(7)
    params = {k: v + (r.normal(0, 0.05, v.shape) if k.endswith(".b") else 0) for k, v in m.params.items()}
    return ReferenceCNN(params, m.input_shape, 10, seed=7)


def random_scene(seed, uv=True, views=2, size=(16, 16)):
    """Car mesh with a random texture and random cameras/lights."""
    r = np.random.default_rng(seed)
    mesh = assets.car().mesh if uv else assets.crate().mesh
    tex = r.random((16, 16, 3)) if uv else r.random((len(mesh.vertices), 3))
    cams = [Camera(r.uniform(2.5, 3.5), r.uniform(0, 360), r.uniform(0, 40)) for _ in range(views)]
    lights = []
    for c in cams:
        d = c.frame()[2] + r.normal(0, 0.3, 3)
        ka = r.uniform(0.2, 0.5)
        lights.append(Light.toward(d, ka, r.uniform(0, 1 - ka)))
    return Scene(mesh, tex, cams, lights, size, (0.2, 0.3, 0.4))


@pytest.fixture(scope="session")
def render_data():
    """Synthetic 10-class render set at 32x32 (300 train / 50 test per class)."""
    from assistive.datasets import render_dataset

    return render_dataset(300, (32, 32), seed=0), render_dataset(50, (32, 32), seed=1)


def _render_model(render_data, seed):
    from assistive.classifiers import train_reference

    train, test = render_data
    model, stats = train_reference(train, epochs=10, batch_size=32, learning_rate=0.01, seed=seed, test=test)
    return model, stats


@pytest.fixture(scope="session")
def render_model(render_data):
    return _render_model(render_data, 0)


@pytest.fixture(scope="session")
def render_model_b(render_data):
    return _render_model(render_data, 1)
