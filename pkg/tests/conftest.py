import numpy as np
import pytest

from hmhi import tensor as T
from hmhi.tensor import Rng, Tensor


@pytest.fixture
def rng():
    return Rng(1234)


def numeric_grad(fn, arrays, eps=1e-5):
    """Central differences of scalar fn(*arrays) w.r.t. each array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = fn(*arrays)
            flat[i] = orig - eps
            down = fn(*arrays)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def check_op_grad(op, *arrays, tol=1e-4, seed=0):
    """Compare taped gradients of sum(op(...) * w) against central differences."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out_shape = op(*[Tensor(a) for a in arrays]).shape
    w = np.random.default_rng(seed).normal(size=out_shape)

    def f(*arrs):
        return float((op(*[Tensor(a) for a in arrs]).data * w).sum())

    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    T.sum_(op(*ts) * Tensor(w)).backward()
    for t, g in zip(ts, numeric_grad(f, arrays)):
        err = np.max(np.abs(t.grad - g)) / (np.max(np.abs(g)) + 1e-12)
        assert err < tol, err


ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
