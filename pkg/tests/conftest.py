import numpy as np
import pytest

from conlearn.elasticity import (ElasticityBvp, FieldHyper, HexMesh,
                                 generate_training)
from conlearn.kde_prior import KdePrior, TrainingSetRaw, normalize_training


@pytest.fixture(scope="session")
def bvp():
    return ElasticityBvp(HexMesh(counts=(6, 6, 3)))


@pytest.fixture(scope="session")
def hyper():
    return FieldHyper(lengths=(1.0 / 3.0, 1.0 / 3.0, 0.05))


@pytest.fixture(scope="session")
def training_run(bvp, hyper):
    return generate_training(bvp, hyper, n_d=50, seed=101)


@pytest.fixture(scope="session")
def fem_prior(training_run):
    norm, red = normalize_training(training_run.raw)
    return norm, red, KdePrior.from_training(red)


def synthetic_prior(n_x, seed=123, n_d=50):
    """Prior from a Gaussian raw training set, normalized."""
    rng = np.random.default_rng(seed)
    raw = TrainingSetRaw(rng.standard_normal((n_x, n_d)))
    norm, red = normalize_training(raw)
    return norm, red, KdePrior.from_training(red)


@pytest.fixture(scope="session")
def prior2():
    """The 2-D prior used by the oracle-equivalence checks."""
    return synthetic_prior(2)[2]


@pytest.fixture(scope="session")
def prior5():
    return synthetic_prior(5)[2]
