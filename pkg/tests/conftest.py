import numpy as np
import pytest

from sagp import data as D
from sagp.featurize import HashedBowProvider
from sagp.graph import build_graph


def finite_difference(fn, x0: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function over a flat copy of x0."""
    grad = np.zeros_like(x0, dtype=np.float64)
    flat = grad.reshape(-1)
    base = x0.astype(np.float64).copy().reshape(-1)
    for i in range(base.size):
        hi = base.copy()
        lo = base.copy()
        hi[i] += eps
        lo[i] -= eps
        flat[i] = (fn(hi.reshape(x0.shape)) - fn(lo.reshape(x0.shape))) / (2 * eps)
    return grad


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    denom = np.maximum(floor, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float((np.abs(analytic - numeric) / denom).max())


@pytest.fixture(scope="session")
def provider():
    return HashedBowProvider(32)


@pytest.fixture(scope="session")
def tiny_instances():
    return D.generate_synthetic(D.SynthConfig(num_instances=6, seed=3))


@pytest.fixture(scope="session")
def tiny_graphs(tiny_instances, provider):
    return [build_graph(i.claim, i.pieces, provider, i.id) for i in tiny_instances]
