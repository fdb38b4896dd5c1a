import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_difference(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Numeric gradient of scalar f(x) by central differences, in place."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad
