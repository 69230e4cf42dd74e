import numpy as np
import pytest

from mtptraj import LongitudinalDataset


def random_dataset(rng: np.random.Generator, n: int, tau: int,
                   p=None) -> LongitudinalDataset:
    """Generic continuous panel with mild temporal structure."""
    if p is None:
        p = [1] * tau
    covariates = []
    exposures = np.empty((n, tau))
    outcomes = np.empty((n, tau))
    prev_y = np.zeros(n)
    for t in range(tau):
        block = rng.standard_normal((n, p[t]))
        covariates.append(block)
        exposures[:, t] = 2.0 + 0.5 * block[:, 0] - 0.1 * prev_y + rng.standard_normal(n)
        outcomes[:, t] = (1.0 + block[:, 0] - 0.8 * exposures[:, t]
                          + 0.3 * prev_y + rng.standard_normal(n))
        prev_y = outcomes[:, t]
    return LongitudinalDataset(covariates=tuple(covariates), exposures=exposures,
                               outcomes=outcomes,
                               assessment_times=np.arange(1.0, tau + 1))


def random_correlation(rng: np.random.Generator, k: int) -> np.ndarray:
    w = rng.standard_normal((k, k + 2))
    s = w @ w.T
    d = np.sqrt(np.diag(s))
    r = s / np.outer(d, d)
    np.fill_diagonal(r, 1.0)
    return r


@pytest.fixture
def rng():
    return np.random.default_rng(20250809)
