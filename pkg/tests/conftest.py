import numpy as np
import pytest
import scipy.sparse as sp

from detfree.sparse_linalg import SparseMatrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_spd(rng, n, cond=100.0):
    """Dense SPD matrix with eigenvalues log-spaced on ``[1, cond]``."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.geomspace(1.0, cond, n)
    return (q * lam) @ q.T


def random_sparse_spd(rng, n, density=0.05, shift=1.0):
    B = sp.random(n, n, density=density, random_state=np.random.RandomState(rng.integers(2**31)))
    S = B @ B.T + shift * sp.identity(n)
    return SparseMatrix.from_scipy(S.tocsr(), symmetric=True)


def sample_cov_within(samples, target, n_se=5.0):
    """Max |cov_hat - cov| in units of the per-entry standard error of the sample covariance."""
    k = samples.shape[0]
    emp = samples.T @ samples / k
    d = np.diag(target)
    se = np.sqrt((target**2 + np.outer(d, d)) / k)
    return float(np.max(np.abs(emp - target) / se))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
