import numpy as np
import pytest

from ptpmx import pdf as pd


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def skewed_pdfs():
    """A gamma-shaped and an exponential-shaped pdf on a 0.05 us grid."""
    r = np.random.default_rng(11)
    g = pd.from_samples(r.gamma(2.0, 0.3, 20_000), 0.05)
    e = pd.from_samples(r.exponential(0.6, 20_000), 0.05)
    return g, e


@pytest.fixture(scope="session")
def fine_pdfs():
    """Same shapes on the 0.01 us desk-scale grid."""
    r = np.random.default_rng(12)
    g = pd.from_samples(r.gamma(2.0, 0.4, 20_000), 0.01)
    e = pd.from_samples(np.minimum(r.exponential(2.0, 20_000), 20.0), 0.01)
    return g, e
