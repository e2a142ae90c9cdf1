import numpy as np
import pytest

from turbocmtf.tensor import CoupledData, Tensor3


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def brute_cp(a, b, c, w=None):
    """Triple-loop sum of weighted outer products."""
    I, J, K, F = a.shape[0], b.shape[0], c.shape[0], a.shape[1]
    w = np.ones(F) if w is None else w
    out = np.zeros((I, J, K))
    for i in range(I):
        for j in range(J):
            for k in range(K):
                for f in range(F):
                    out[i, j, k] += w[f] * a[i, f] * b[j, f] * c[k, f]
    return out


def random_coupled(rng, dims, side_dims=(None, None, None), sparse=False):
    x = rng.standard_normal(dims)
    if sparse:
        x *= rng.random(dims) < 0.15
        t = Tensor3.from_dense(x).to_sparse()
    else:
        t = Tensor3.from_dense(x)
    ys = [None if s is None else rng.standard_normal((n, s)) for n, s in zip(dims, side_dims)]
    return CoupledData(t, *ys)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
