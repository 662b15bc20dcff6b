import numpy as np
import pytest
import scipy.sparse as sp

from ldas.backends import SymmetricSystem, preprocess


def random_spd(n, rng, density=None, cond_shift=1.0):
    """Random SPD matrix: ``B B^T + shift I`` (dense) or a sparse diagonally dominant variant."""
    if density is None:
        b = rng.standard_normal((n, n))
        return b @ b.T / n + cond_shift * np.eye(n)
    a = sp.random(n, n, density=density, random_state=rng, data_rvs=rng.standard_normal)
    a = a + a.T
    d = np.asarray(abs(a).sum(axis=1)).ravel() + cond_shift
    return (a + sp.diags(d)).tocsr()


def rank_k_loads(n, k, m, rng):
    """``m`` loads spanning a random ``k``-dimensional subspace, each a well-mixed combination."""
    basis, _ = np.linalg.qr(rng.standard_normal((n, k)))
    coeffs = rng.standard_normal((k, m))
    # first k columns independent by construction
    coeffs[:, :k] = np.eye(k) + 0.1 * rng.standard_normal((k, k))
    return [basis @ coeffs[:, j] for j in rng.permutation(m)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_system():
    sys_ = SymmetricSystem.from_matrix(np.array([[2.0, -1.0], [-1.0, 2.0]]))
    return sys_, preprocess(sys_, "direct")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
