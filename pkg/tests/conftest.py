import numpy as np
import pytest

from diffnet.kliep import KliepProblem
from diffnet.model import num_edges


def random_instance(rng, m_max=8, n_max=100, sparsity=4, theta_scale=1.0):
    """A random Ising-statistic problem plus a sparse evaluation point.

    theta has at most ``sparsity`` nonzeros, each bounded by
    ``theta_scale`` in magnitude, keeping the ratio weights well away
    from overflow while still exercising nontrivial tilting.
    """
    m = int(rng.integers(3, m_max + 1))
    p = num_edges(m)
    n_x = int(rng.integers(10, n_max + 1))
    n_y = int(rng.integers(10, n_max + 1))
    psi_x = rng.choice([-1.0, 1.0], size=(n_x, p))
    psi_y = rng.choice([-1.0, 1.0], size=(n_y, p))
    theta = np.zeros(p)
    support = rng.choice(p, size=min(sparsity, p), replace=False)
    theta[support] = rng.uniform(-theta_scale, theta_scale, size=support.size)
    return KliepProblem(psi_x, psi_y), theta


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)
