"""Augmented complex Kalman filter for a real state observed through a
complex MIMO channel.

The received signal y = E x + z (E = H F complex) is stacked with its
conjugate into y_a = (y, y*) and E_a = (E, E*); filtering on the augmented
pair is the MMSE estimator for the real state and keeps the estimate exactly
real in exact arithmetic. Residual imaginary parts are truncated below a
tolerance and raise beyond it.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError
from .plant import DiscretePlant

IMAG_TOL = 1e-9


@dataclass(frozen=True)
class EstimatorState:
    """Filter state after processing slot n.

    Sigma holds the one-step prediction covariance for the *next* slot,
    i.e. Sigma(n+1); Delta is the realized estimation error x(n) - xhat(n)
    (ground truth in simulation), Delta_virtual the feedback-free surrogate.
    """

    x_hat: np.ndarray
    Delta: np.ndarray
    Sigma: np.ndarray
    Delta_virtual: np.ndarray


def initial_state(L: int) -> EstimatorState:
    return EstimatorState(
        x_hat=np.zeros(L), Delta=np.zeros(L), Sigma=np.zeros((L, L)),
        Delta_virtual=np.zeros(L),
    )


@dataclass(frozen=True)
class AugmentedObservation:
    """Conjugate-stacked measurement triple for one slot."""

    E_a: np.ndarray   # (2 N_r) x L, lower block the conjugate of the upper
    y_a: np.ndarray   # (2 N_r,)
    K_a: np.ndarray   # L x (2 N_r)

    def __post_init__(self):
        n = self.E_a.shape[0] // 2
        if not np.allclose(self.E_a[n:], self.E_a[:n].conj()):
            raise DimensionError("lower block of E_a must conjugate the upper block")


def augment(E):
    """Stack E over its elementwise conjugate: (2 N_r) x L."""
    E = np.asarray(E, dtype=complex)
    return np.concatenate([E, E.conj()], axis=0)


def augmented_observation(E, y, Sigma) -> AugmentedObservation:
    """Build the stacked measurement and its Kalman gain for one slot."""
    e_a = augment(E)
    y = np.asarray(y, dtype=complex)
    return AugmentedObservation(E_a=e_a, y_a=np.concatenate([y, y.conj()]),
                                K_a=kalman_gain(Sigma, e_a))


def _take_real(z, what, tol=IMAG_TOL):
    z = np.asarray(z)
    if np.iscomplexobj(z):
        scale = max(1.0, float(np.max(np.abs(z.real))) if z.size else 1.0)
        resid = float(np.max(np.abs(z.imag))) if z.size else 0.0
        if resid > tol * scale:
            raise NumericError(f"{what} has imaginary residue {resid:g} (broken conjugate symmetry)")
        return np.ascontiguousarray(z.real)
    return z


def kalman_gain(Sigma, E_a):
    """K_a = Sigma E_a^H (E_a Sigma E_a^H + I)^-1 via a linear solve."""
    Sigma = np.asarray(Sigma, dtype=float)
    E_a = np.asarray(E_a, dtype=complex)
    if E_a.shape[1] != Sigma.shape[0]:
        raise DimensionError("E_a and Sigma dimensions do not match")
    if not (np.all(np.isfinite(Sigma)) and np.all(np.isfinite(E_a.view(float)))):
        raise NumericError("non-finite entries in Kalman gain inputs")
    es = E_a @ Sigma
    s_mat = es @ E_a.conj().T + np.eye(E_a.shape[0])
    # Sigma real symmetric and s_mat Hermitian, so K_a = (s_mat^-1 E_a Sigma)^H
    return np.linalg.solve(s_mat, es).conj().T


def update_covariance(Sigma, E_a, disc: DiscretePlant, joseph=False):
    """One-step prediction covariance update, symmetrized.

    Sigma' = A (Sigma - Sigma E_a^H (E_a Sigma E_a^H + I)^-1 E_a Sigma) A^T + W
    """
    Sigma = np.asarray(Sigma, dtype=float)
    E_a = np.asarray(E_a, dtype=complex)
    if joseph:
        k_a = kalman_gain(Sigma, E_a)
        ike = np.eye(Sigma.shape[0]) - k_a @ E_a
        post = ike @ Sigma @ ike.conj().T + k_a @ k_a.conj().T
    else:
        es = E_a @ Sigma
        s_mat = es @ E_a.conj().T + np.eye(E_a.shape[0])
        post = Sigma - es.conj().T @ np.linalg.solve(s_mat, es)
    post = _take_real(post, "posterior covariance")
    nxt = disc.A @ post @ disc.A.T + disc.W
    nxt = 0.5 * (nxt + nxt.T)
    scale = max(1.0, np.linalg.norm(nxt, "fro"))
    if np.linalg.eigvalsh(nxt).min() < -1e-8 * scale:
        raise NumericError(
            "covariance lost positive semidefiniteness "
            f"(cond of innovation Gram ~ {np.linalg.cond(s_mat if not joseph else np.eye(1)):g})"
        )
    return nxt


def update_estimate(x_hat_prev, u_prev, y_a, E_a, K_a, disc: DiscretePlant):
    """x_hat(n) from the augmented innovation around the prediction."""
    pred = disc.A @ np.asarray(x_hat_prev, float) + disc.B @ np.asarray(u_prev, float)
    innov = np.asarray(y_a, complex) - np.asarray(E_a, complex) @ pred
    return _take_real(pred + np.asarray(K_a) @ innov, "state estimate")


def update_virtual_error(Delta_virtual, K_a, E_a, disc: DiscretePlant, w_prev=None):
    """Feedback-free error surrogate: (I - K_a E_a) A Delta_virtual.

    With w_prev supplied, the sensor-known disturbance drives the recursion,
    (I - K_a E_a)(A Delta_virtual + w_prev): the conditional mean of the true
    error given everything at the sensor except the channel noise. The
    closed-loop runner uses that form; the default is the pure drift map.
    """
    drift = disc.A @ np.asarray(Delta_virtual, float)
    if w_prev is not None:
        drift = drift + np.asarray(w_prev, float)
    out = drift - np.asarray(K_a) @ (np.asarray(E_a, complex) @ drift)
    return _take_real(out, "virtual error")


def estimator_step(state: EstimatorState, x_true, F, H, z, u_prev,
                   disc: DiscretePlant, joseph=False) -> EstimatorState:
    """Run one full estimator slot given the applied precoder F and channel H.

    Simulates the received signal y = H F x + z, performs the augmented
    update and returns the new state. Delta is computed from ground truth;
    the recursion form of the error dynamics is used as a cross-check in
    tests, not here.
    """
    x_true = np.asarray(x_true, dtype=float)
    E = np.asarray(H, complex) @ np.asarray(F, complex)
    if np.linalg.norm(E) == 0.0:
        pred = disc.A @ state.x_hat + disc.B @ np.asarray(u_prev, float)
        x_hat = pred
        sigma = disc.A @ state.Sigma @ disc.A.T + disc.W
        sigma = 0.5 * (sigma + sigma.T)
        dvirt = disc.A @ state.Delta_virtual
    else:
        e_a = augment(E)
        y = E @ x_true + np.asarray(z, complex)
        y_a = np.concatenate([y, y.conj()])
        k_a = kalman_gain(state.Sigma, e_a)
        x_hat = update_estimate(state.x_hat, u_prev, y_a, e_a, k_a, disc)
        sigma = update_covariance(state.Sigma, e_a, disc, joseph=joseph)
        dvirt = update_virtual_error(state.Delta_virtual, k_a, e_a, disc)
    return EstimatorState(x_hat=x_hat, Delta=x_true - x_hat, Sigma=sigma, Delta_virtual=dvirt)
