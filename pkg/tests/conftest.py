import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from multipgd import benchmark
from multipgd.attack import TOY
from multipgd.models import Classifier, Layer


def random_mlp(rng, D, hidden, C, scale=1.0, name="rand"):
    dims = (D, *hidden, C)
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        act = "relu" if i < len(dims) - 2 else "identity"
        layers.append(Layer(scale * rng.standard_normal((b, a)) / np.sqrt(a),
                            0.1 * rng.standard_normal(b), act))
    return Classifier(tuple(layers), name=name)


@pytest.fixture
def toy():
    return TOY


@pytest.fixture
def mlp_factory():
    return random_mlp


@pytest.fixture(scope="session")
def bench():
    return benchmark.load()


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS):
        terminalreporter.write_line(line)
