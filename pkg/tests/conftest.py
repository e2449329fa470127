import numpy as np
import pytest

from streamsel import model as M


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def mlp(rng):
    return M.mlp_model(4, 5, 3, seed=3)


def fd_gradient(params, x, y, eps=1e-5):
    """Central finite differences of the per-sample loss over every parameter."""
    flat = params.flatten(M.FULL)
    out = np.zeros_like(flat)
    for i in range(flat.size):
        up, down = flat.copy(), flat.copy()
        up[i] += eps
        down[i] -= eps
        lu = M.loss(params.unflatten(up), x[None, :], [y])[0]
        ld = M.loss(params.unflatten(down), x[None, :], [y])[0]
        out[i] = (lu - ld) / (2 * eps)
    return out
