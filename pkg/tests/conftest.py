import numpy as np
import pytest

from gisnet.config import toy_config
from gisnet.data import generate_synthetic
from gisnet.model import grid_spec, init_params


@pytest.fixture
def toy():
    return toy_config()


@pytest.fixture
def toy_samples(toy):
    return generate_synthetic("crowded", 6, 11, data=toy.data, grid=grid_spec(toy))


@pytest.fixture
def toy_params(toy, toy_samples):
    from gisnet.model import fit_normalizer

    p = init_params(toy, np.random.default_rng(5))
    fit_normalizer(p, toy_samples)
    # non-trivial batch-norm statistics so eval mode is not an identity
    rng = np.random.default_rng(6)
    p.bn.mean = rng.normal(0, 0.1, p.bn.mean.shape)
    p.bn.var = rng.uniform(0.5, 1.5, p.bn.var.shape)
    return p


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
