import numpy as np
import pytest

from spongelab.model import MlpConfig, MlpModel, init_model


def central_diff(f, arr, h=1e-6):
    """Central finite-difference gradient of scalar ``f()`` w.r.t. ``arr`` (perturbed in place)."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def rel_error(analytic, numeric):
    """Max-norm relative error between two gradient collections."""
    a = np.concatenate([np.ravel(g) for g in analytic])
    n = np.concatenate([np.ravel(g) for g in numeric])
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - n)) / scale)


def hand_model(weights, biases, hidden_dims, num_classes):
    weights = [np.array(w, dtype=float) for w in weights]
    biases = [np.array(b, dtype=float).reshape(1, -1) for b in biases]
    cfg = MlpConfig(weights[0].shape[0], tuple(hidden_dims), num_classes)
    return MlpModel(cfg, weights, biases)


@pytest.fixture
def small_model():
    return init_model(MlpConfig(5, (8, 6), 3), seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
