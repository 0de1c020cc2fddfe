import numpy as np
import pytest

from s2hprune import autodiff as ad
from s2hprune.graph import ModelGraph, mlp_spec


@pytest.fixture(autouse=True)
def fresh_tape():
    ad.set_default_dtype("float64")
    ad.new_tape()
    yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_mlp(widths=(4, 4, 2), seed=0):
    return ModelGraph(mlp_spec(list(widths)), seed=seed)
