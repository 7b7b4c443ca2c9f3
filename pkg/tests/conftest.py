import numpy as np
import pytest

from utils.sensing_operators import gen_gaussian, gen_sparse_signal
from utils.sparse_penalty import Regularizer
from utils.sparse_solvers import LeastSquaresProblem

# Every kind with a difference-of-convex split.
DC_REGULARIZERS = [
    Regularizer.l1(),
    Regularizer.l2_squared(),
    Regularizer.l2(),
    Regularizer.l1_minus_al2(1.0),
    Regularizer.l1_minus_al2(0.4),
    Regularizer.lsp(1.0),
    Regularizer.mcp(2.0),
    Regularizer.scad(3.7),
    Regularizer.huber_of_l2(1.0),
    Regularizer.log_of_l2(1.0),
    Regularizer.mcp_of_l2(5.0),
    Regularizer.lsp_weighted(2.0, 1.0),
]

ALL_REGULARIZERS = DC_REGULARIZERS + [Regularizer.l_half(), Regularizer.l1_over_l2()]


def reg_id(reg):
    return "-".join(str(v) for v in reg.to_dict().values())


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def small_problem():
    """Noiseless 32 x 64 Gaussian instance with a 4-sparse ground truth."""
    A = gen_gaussian(32, 64, seed=11)
    x_true = gen_sparse_signal(64, 4, seed=12)
    return LeastSquaresProblem(A, A.data @ x_true), x_true


@pytest.fixture
def identity_problem():
    return LeastSquaresProblem(np.eye(2), np.array([5.0, 0.0]))
