"""Shared fixtures: the default desk problem and a shrunk quick variant."""
import numpy as np
import pytest

from insens4.config import apply_quick, default_config, problem_from_config


def unit_smooth(basis, rng, decay=1.5):
    """Random smooth field with power-law mode decay, unit L2 norm."""
    shape = basis.shape
    if basis.dim == 1:
        rank = np.arange(1, shape[0] + 1, dtype=float)
    else:
        i = np.arange(1, shape[0] + 1, dtype=float)[:, None]
        j = np.arange(1, shape[1] + 1, dtype=float)[None, :]
        rank = np.sqrt(i * i + j * j)
    modes = rng.standard_normal(shape) / rank**decay
    u = basis.from_modes(modes)
    return u / basis.norm(u)


@pytest.fixture(scope="session")
def desk_problem():
    """Full-size default problem; build once, read-only everywhere."""
    return problem_from_config(default_config())


@pytest.fixture(scope="session")
def quick_problem():
    return problem_from_config(apply_quick(default_config()))


@pytest.fixture()
def rng():
    return np.random.default_rng(np.random.Philox(1234))
