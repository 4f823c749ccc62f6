"""Continuous-time plant model, zero-order-hold discretization and LQG gain.

The plant is dx/dt = A_tilde x + B_tilde u + w_tilde with diagonal (or
whitened) disturbance covariance. Sampling with slot duration tau gives
x[n+1] = A x[n] + B u[n] + w[n] where

    A = expm(A_tilde * tau)
    B = A_tilde^-1 (A - I) B_tilde            (integral form if singular)
    W = int_0^tau expm(A_tilde s) W_tilde expm(A_tilde^T s) ds

The certainty-equivalent controller gain comes from the discrete algebraic
Riccati equation solved by fixed-point recursion.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import ConfigError, ConvergenceError, DimensionError, InvalidCovarianceError

_SYM_TOL = 1e-10


def _as_matrix(x, name):
    m = np.asarray(x, dtype=float)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D matrix, got shape {m.shape}")
    return m


def _check_sym_psd(w, name, tol=_SYM_TOL):
    scale = max(np.linalg.norm(w, "fro"), 1.0)
    if np.linalg.norm(w - w.T, "fro") > tol * scale:
        raise InvalidCovarianceError(f"{name} is not symmetric")
    eig_min = np.linalg.eigvalsh(0.5 * (w + w.T)).min()
    if eig_min < -tol * scale:
        raise InvalidCovarianceError(f"{name} has negative eigenvalue {eig_min:g}")


@dataclass(frozen=True)
class ContinuousPlant:
    """Continuous-time linear stochastic plant (pre-discretization)."""

    A_tilde: np.ndarray
    B_tilde: np.ndarray
    W_tilde: np.ndarray
    # state map applied by whiten(); identity when no whitening was needed
    whiten_map: np.ndarray = None

    def __post_init__(self):
        a = _as_matrix(self.A_tilde, "A_tilde")
        b = _as_matrix(self.B_tilde, "B_tilde")
        w = _as_matrix(self.W_tilde, "W_tilde")
        if a.shape[0] != a.shape[1]:
            raise DimensionError("A_tilde must be square")
        if b.shape[0] != a.shape[0] or w.shape != a.shape:
            raise DimensionError("B_tilde/W_tilde dimensions inconsistent with A_tilde")
        object.__setattr__(self, "A_tilde", a)
        object.__setattr__(self, "B_tilde", b)
        object.__setattr__(self, "W_tilde", w)
        if self.whiten_map is None:
            object.__setattr__(self, "whiten_map", np.eye(a.shape[0]))

    @property
    def L(self):
        return self.A_tilde.shape[0]

    @property
    def M(self):
        return self.B_tilde.shape[1]


@dataclass(frozen=True)
class DiscretePlant:
    """Zero-order-hold discretization of a ContinuousPlant."""

    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "A", _as_matrix(self.A, "A"))
        object.__setattr__(self, "B", _as_matrix(self.B, "B"))
        w = 0.5 * (_as_matrix(self.W, "W") + _as_matrix(self.W, "W").T)
        _check_sym_psd(w, "W")
        object.__setattr__(self, "W", w)
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")

    @property
    def L(self):
        return self.A.shape[0]


@dataclass(frozen=True)
class CEControllerGain:
    """Riccati solution Z and certainty-equivalent feedback gain Psi."""

    Z: np.ndarray
    Psi: np.ndarray
    Q: np.ndarray
    R: np.ndarray


def is_diagonal(w, tol=_SYM_TOL):
    off = w - np.diag(np.diag(w))
    return np.linalg.norm(off, "fro") <= tol * max(np.linalg.norm(w, "fro"), 1.0)


def whiten(plant: ContinuousPlant) -> ContinuousPlant:
    """Rotate the plant state so the disturbance covariance becomes diagonal.

    Uses the eigendecomposition M W_tilde M^T = T with orthonormal rows of M
    (eigenvalues in descending order). Already-diagonal covariances pass
    through unchanged.
    """
    w = plant.W_tilde
    _check_sym_psd(w, "W_tilde")
    if is_diagonal(w):
        return plant
    vals, vecs = np.linalg.eigh(0.5 * (w + w.T))
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    m = vecs.T  # rows orthonormal, M W M^T = diag(vals)
    a_new = m @ plant.A_tilde @ m.T
    b_new = m @ plant.B_tilde
    w_new = np.diag(np.clip(vals, 0.0, None))
    return ContinuousPlant(a_new, b_new, w_new, whiten_map=m @ plant.whiten_map)


def _gauss_legendre_integral(f, lo, hi, n=64):
    """Matrix-valued Gauss-Legendre quadrature of f over [lo, hi]."""
    nodes, weights = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
    acc = sum(wi * f(si) for wi, si in zip(weights, s))
    return 0.5 * (hi - lo) * acc


def _noise_covariance_van_loan(a_tilde, w_tilde, tau):
    """Closed-form int_0^tau e^{As} W e^{A^T s} ds via the augmented-matrix trick."""
    n = a_tilde.shape[0]
    blk = np.zeros((2 * n, 2 * n))
    blk[:n, :n] = -a_tilde
    blk[:n, n:] = w_tilde
    blk[n:, n:] = a_tilde.T
    e = linalg.expm(blk * tau)
    f3 = e[n:, n:]
    g2 = e[:n, n:]
    w = f3.T @ g2
    return 0.5 * (w + w.T)


def controllability_rank(a, b):
    L = a.shape[0]
    blocks = [b]
    for _ in range(L - 1):
        blocks.append(a @ blocks[-1])
    return np.linalg.matrix_rank(np.hstack(blocks))


def observability_rank(a, c):
    return controllability_rank(a.T, c.T)


def discretize(plant: ContinuousPlant, tau: float, require_controllable: bool = True) -> DiscretePlant:
    """Zero-order-hold discretization with slot duration tau."""
    if tau <= 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    a_t, b_t, w_t = plant.A_tilde, plant.B_tilde, plant.W_tilde
    a = linalg.expm(a_t * tau)
    svals = np.linalg.svd(a_t, compute_uv=False)
    if svals.size and svals[-1] > 1e-12 * max(svals[0], 1.0):
        b = np.linalg.solve(a_t, (a - np.eye(plant.L))) @ b_t
    else:
        # singular A_tilde: fall back to the integral of the state transition
        b = _gauss_legendre_integral(lambda s: linalg.expm(a_t * s), 0.0, tau) @ b_t
    w = _noise_covariance_van_loan(a_t, w_t, tau)
    disc = DiscretePlant(a, b, w, tau)
    if require_controllable and controllability_rank(a, b) < plant.L:
        raise ConfigError("(A, B) is not controllable after discretization")
    return disc


def _sqrtm_psd(q):
    vals, vecs = np.linalg.eigh(0.5 * (q + q.T))
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def solve_dare(disc: DiscretePlant, Q, R, tol=1e-12, max_iter=200_000) -> CEControllerGain:
    """Solve the DARE by fixed-point Riccati recursion from Z0 = Q.

    Iterates Z <- A'ZA - A'ZB (B'ZB+R)^-1 B'ZA + Q until the relative
    Frobenius change drops below tol. Requires Q PSD, R PD, unstable modes
    of A controllable and (A, Q^{1/2}) observable.
    """
    a, b = disc.A, disc.B
    L = a.shape[0]
    q = _as_matrix(Q, "Q")
    r = _as_matrix(R, "R")
    _check_sym_psd(q, "Q")
    _check_sym_psd(r, "R")
    if np.linalg.eigvalsh(r).min() <= 0:
        raise ConfigError("R must be positive definite")
    # stabilizability: every eigenvalue of A on or outside the unit circle
    # must be controllable (PBH test)
    eigvals = np.linalg.eigvals(a)
    for lam in eigvals:
        if abs(lam) >= 1.0 - 1e-12:
            pbh = np.hstack([a - lam * np.eye(L), b.astype(complex)])
            if np.linalg.matrix_rank(pbh) < L:
                raise ConfigError(f"unstable mode {lam:g} is uncontrollable; DARE has no stabilizing solution")
    if observability_rank(a, _sqrtm_psd(q)) < L:
        raise ConfigError("(A, Q^(1/2)) is not observable")

    z = q.copy()
    for k in range(max_iter):
        btz = b.T @ z
        gram = btz @ b + r
        try:
            gain = np.linalg.solve(gram, btz @ a)
        except np.linalg.LinAlgError as exc:
            raise DimensionError("B'ZB + R is singular") from exc
        z_next = a.T @ z @ a - (a.T @ btz.T) @ gain + q
        z_next = 0.5 * (z_next + z_next.T)
        delta = np.linalg.norm(z_next - z, "fro")
        z = z_next
        if delta <= tol * max(np.linalg.norm(z, "fro"), 1e-300):
            break
    else:
        raise ConvergenceError(
            "DARE recursion did not converge (plant may not be stabilizable at this horizon)",
            iterations=max_iter, residual=float(delta),
        )

    btz = b.T @ z
    psi = -np.linalg.solve(btz @ b + r, btz @ a)
    rho = np.max(np.abs(np.linalg.eigvals(a + b @ psi)))
    if rho >= 1.0:
        raise ConvergenceError(f"closed loop unstable after DARE solve, spectral radius {rho:g}")
    return CEControllerGain(Z=z, Psi=psi, Q=q, R=r)


def dare_residual(disc: DiscretePlant, gain: CEControllerGain) -> float:
    """Relative Frobenius residual of the Riccati equation at gain.Z."""
    a, b, z, q, r = disc.A, disc.B, gain.Z, gain.Q, gain.R
    btz = b.T @ z
    rhs = a.T @ z @ a - (a.T @ btz.T) @ np.linalg.solve(btz @ b + r, btz @ a) + q
    return np.linalg.norm(z - rhs, "fro") / max(np.linalg.norm(z, "fro"), 1e-300)


def step_plant(x, u, w, disc: DiscretePlant):
    """One slot of the discrete plant: A x + B u + w."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    if x.shape != (disc.L,) or w.shape != (disc.L,) or u.shape != (disc.B.shape[1],):
        raise DimensionError("state/control/noise dimensions do not match the plant")
    return disc.A @ x + disc.B @ u + w
