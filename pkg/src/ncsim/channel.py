"""Rayleigh MIMO channel draws and the law of the top eigenchannel gain.

sigma_star is the largest eigenvalue of H^H H for an N_r x N_t matrix H with
i.i.d. CN(0,1) entries. Its CDF has a closed determinant form

    F(x) = det(T(x)),   T_ij(x) = int_0^x phi_i(y) phi_j(y) y^(b-d) e^-y dy

over i,j = 1..d with d = min(N_t, N_r), b = max(N_t, N_r), where phi_i is the
orthonormalized generalized Laguerre polynomial of degree i-1 and parameter
b-d. Entries of T reduce to lower incomplete gamma functions, so the CDF is
exact up to floating point. The density is never transcribed from a formula;
it is obtained by differentiating this CDF numerically. Large arrays
(d > 4 or b > 30) fall back to a cached empirical CDF.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize, special

from .errors import NumericError

logger = logging.getLogger(__name__)

_CLOSED_FORM_MAX_D = 4
_CLOSED_FORM_MAX_B = 30


@dataclass(frozen=True)
class ChannelSample:
    """One channel realization with the cached eigendecomposition of H^H H."""

    H: np.ndarray
    sigma_star: float
    U: np.ndarray
    eigenvalues: np.ndarray


def draw_channel(rng: np.random.Generator, n_t: int, n_r: int) -> ChannelSample:
    """Draw H with i.i.d. CN(0,1) entries and eigendecompose H^H H."""
    if n_t < 1 or n_r < 1:
        raise ValueError("antenna counts must be >= 1")
    h = _draw_h(rng, 1, n_t, n_r)[0]
    vals, vecs = np.linalg.eigh(h.conj().T @ h)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    return ChannelSample(H=h, sigma_star=float(vals[0]), U=vecs, eigenvalues=vals)


def _draw_h(rng, n, n_t, n_r):
    z = rng.standard_normal((n, n_r, n_t, 2))
    return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)


def _fix_column_phases(u):
    """Rotate each eigenvector so its largest-magnitude entry is real positive."""
    idx = np.argmax(np.abs(u), axis=-2)
    lead = np.take_along_axis(u, idx[..., None, :], axis=-2)[..., 0, :]
    phase = np.where(np.abs(lead) > 0, lead / np.maximum(np.abs(lead), 1e-300), 1.0)
    return u * phase.conj()[..., None, :]


def draw_channel_batch(rng: np.random.Generator, n: int, n_t: int, n_r: int):
    """Vectorized draw of n channels.

    Returns (H, sigma_star, U) with shapes (n, N_r, N_t), (n,), (n, N_t, N_t).
    Eigenvalues descend along U's columns and each column's phase is fixed so
    the largest-magnitude entry is real positive.
    """
    h = _draw_h(rng, n, n_t, n_r)
    gram = np.einsum("nij,nik->njk", h.conj(), h)
    vals, vecs = np.linalg.eigh(gram)
    vals = vals[:, ::-1]
    vecs = vecs[:, :, ::-1]
    vecs = _fix_column_phases(vecs)
    return h, vals[:, 0].copy(), vecs


def sigma_star_batch(rng: np.random.Generator, n: int, n_t: int, n_r: int, chunk=200_000):
    """Draw n independent sigma_star values (top eigenvalue of the Gram matrix)."""
    d = min(n_t, n_r)
    out = np.empty(n)
    done = 0
    while done < n:
        m = min(chunk, n - done)
        h = _draw_h(rng, m, n_t, n_r)
        # eigenvalues of H^H H equal those of H H^H; use the smaller Gram side
        if n_r <= n_t:
            gram = np.einsum("nij,nkj->nik", h, h.conj())
        else:
            gram = np.einsum("nij,nik->njk", h.conj(), h)
        out[done:done + m] = np.linalg.eigvalsh(gram)[:, -1]
        done += m
    return out


class SigmaStarDistribution:
    """Distribution of the top eigenchannel gain sigma_star.

    Closed determinant form for min(N_t,N_r) <= 4, empirical CDF from cached
    Monte Carlo draws otherwise (or when force_empirical is set).
    """

    def __init__(self, n_t: int, n_r: int, force_empirical=False,
                 n_samples=1_000_000, seed=1234):
        if n_t < 1 or n_r < 1:
            raise ValueError("antenna counts must be >= 1")
        self.n_t = int(n_t)
        self.n_r = int(n_r)
        self.d = min(n_t, n_r)
        self.b = max(n_t, n_r)
        closed_ok = self.d <= _CLOSED_FORM_MAX_D and self.b <= _CLOSED_FORM_MAX_B
        if not closed_ok:
            logger.info("no closed-form CDF for (N_t=%d, N_r=%d); using empirical fallback", n_t, n_r)
        self.kind = "empirical" if (force_empirical or not closed_ok) else "closed-form"
        self.samples = None
        if self.kind == "empirical":
            rng = np.random.Generator(np.random.Philox(seed))
            self.samples = np.sort(sigma_star_batch(rng, n_samples, n_t, n_r))
        else:
            self._gamma_coeffs = self._build_gamma_coeffs()
        self._support_hi = self._find_support_hi()
        self.mean_sigma = self._compute_mean()

    # -- closed form -------------------------------------------------------

    def _build_gamma_coeffs(self):
        """Coefficient tensor C[i,j,m] with T_ij(x) = sum_m C[i,j,m] P(m+1, x).

        phi_i phi_j y^(b-d) is a polynomial; each monomial y^m integrates to
        m! * gammainc(m+1, x) (regularized lower incomplete gamma).
        """
        d, b = self.d, self.b
        alpha = b - d
        polys = []
        for i in range(1, d + 1):
            norm = math.sqrt(math.factorial(i - 1) / math.factorial(i - 1 + alpha))
            lag = special.genlaguerre(i - 1, alpha)
            polys.append(norm * np.asarray(lag.coefficients[::-1], dtype=float))  # ascending
        deg = 2 * (d - 1) + alpha
        coeffs = np.zeros((d, d, deg + 1))
        for i in range(d):
            for j in range(d):
                prod = np.polynomial.polynomial.polymul(polys[i], polys[j])
                shifted = np.concatenate([np.zeros(alpha), prod])
                weights = shifted * special.factorial(np.arange(shifted.size))
                coeffs[i, j, :weights.size] = weights
        return coeffs

    def _closed_cdf(self, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xv = np.atleast_1d(x).astype(float)
        out = np.zeros_like(xv)
        pos = xv > 0
        if np.any(pos):
            xp = xv[pos]
            nm = self._gamma_coeffs.shape[2]
            # P(m+1, x) for m = 0..nm-1, all x at once
            pgam = special.gammainc(np.arange(1, nm + 1)[:, None], xp[None, :])
            t = np.einsum("ijm,mx->xij", self._gamma_coeffs, pgam)
            out[pos] = np.linalg.det(t)
        out = np.clip(out, 0.0, 1.0)
        return float(out[0]) if scalar else out

    # -- common interface ----------------------------------------------------

    def cdf(self, x):
        """F(x) = Pr[sigma_star <= x], clamped to [0, 1]."""
        if self.kind == "closed-form":
            return self._closed_cdf(x)
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        idx = np.searchsorted(self.samples, np.atleast_1d(x), side="right")
        out = idx / self.samples.size
        return float(out[0]) if scalar else out

    def pdf(self, x, rel_step=1e-4):
        """Density by central differencing of the closed-form CDF."""
        if self.kind != "closed-form":
            raise NumericError("empirical distribution has no smooth density")
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xv = np.atleast_1d(x).astype(float)
        h = rel_step * np.maximum(xv, 1e-2)
        lo = np.maximum(xv - h, 0.0)
        hi = xv + h
        out = (self._closed_cdf(hi) - self._closed_cdf(lo)) / np.maximum(hi - lo, 1e-300)
        out = np.clip(out, 0.0, None)
        return float(out[0]) if scalar else out

    def _find_support_hi(self, tail=1e-13):
        hi = max(4.0 * self.b, 10.0)
        for _ in range(200):
            if 1.0 - self.cdf(hi) <= tail:
                return hi
            hi *= 1.5
        return hi

    def _compute_mean(self):
        if self.kind == "empirical":
            return float(self.samples.mean())
        val, err = integrate.quad(lambda t: 1.0 - self._closed_cdf(t),
                                  0.0, self._support_hi, epsabs=1e-12, epsrel=1e-9, limit=400)
        if not np.isfinite(val) or err > 1e-6 * max(abs(val), 1.0):
            raise NumericError(f"mean quadrature did not converge (value {val}, err {err})")
        return float(val)

    def quantile(self, p):
        """Inverse CDF by bracketed root finding."""
        p = float(p)
        if not 0.0 < p < 1.0:
            raise ValueError("quantile requires 0 < p < 1")
        if self.kind == "empirical":
            return float(np.quantile(self.samples, p))
        return float(optimize.brentq(lambda t: self.cdf(t) - p, 0.0, self._support_hi, xtol=1e-12))

    def tail_expectation(self, g, threshold):
        """int_threshold^inf g(x) dF(x) for a scalar integrand g."""
        if threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if self.kind == "empirical":
            tail = self.samples[self.samples >= threshold]
            if tail.size == 0:
                return 0.0
            return float(np.sum(g(tail)) / self.samples.size)
        hi = self._support_hi
        if threshold >= hi:
            return 0.0
        val, err = integrate.quad(lambda t: g(t) * self.pdf(t), threshold, hi,
                                  epsabs=1e-12, epsrel=1e-8, limit=400)
        if not np.isfinite(val):
            raise NumericError("tail expectation quadrature returned non-finite value")
        return float(val)
