import numpy as np
import pytest

from ncsim.config import SimConfig, build_model

REF_A = [[1.0, 2.0], [-1.0, 3.0]]
REF_B = [[1.0, 0.2], [0.1, 1.0]]
REF_W = [[1.0, 0.0], [0.0, 2.0]]


@pytest.fixture(scope="session")
def ref_model():
    return build_model(SimConfig.reference_preset(F_bar=2.0, lam=1500.0,
                                              horizon=20_000, master_seed=11))


@pytest.fixture(scope="session")
def scalar_desk_config():
    """Scalar instance used for oracle comparisons (small tau keeps the
    closed-form policy near the optimum)."""
    return SimConfig(A_tilde=[[0.8]], B_tilde=[[1.0]], W_tilde=[[1.0]],
                     Q=[[1.0]], R=[[1.0]], S=[[1.0]], n_t=1, n_r=1, tau=0.025,
                     F_bar=2.0, lam=1.0, eta_th=0.3, horizon=40_000,
                     burn_in=4_000, master_seed=5)


@pytest.fixture(scope="session")
def bound_demo_config():
    """Strongly unstable scalar state with a 2x2 channel at a tiny power
    price: the high-information regime where the error-bound fixed point
    exists and its decay law is visible."""
    return SimConfig(A_tilde=[[2.0]], B_tilde=[[1.0]], W_tilde=[[1.0]],
                     Q=[[1.0]], R=[[1.0]], S=[[1.0]], n_t=2, n_r=2, tau=0.2,
                     F_bar=2.0, lam=1e-6, eta_th=0.001, horizon=20_000,
                     burn_in=2_000, master_seed=3)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))
