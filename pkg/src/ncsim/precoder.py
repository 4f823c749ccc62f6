"""Precoding policies: the event-driven proposal and the baselines.

The proposed policy transmits only when the dynamic price sigma_star*nu_star
exceeds the power price lambda, and then puts the whole gain budget on the
strongest eigenchannel weighted by the trigger eigenvector q1:
F = sqrt(F_bar) u1 q1^T. Baselines: always-on equal power across streams
(EPDS), solved threshold tables (error-free-channel and scalar-channel
reductions, via the value-iteration oracle), and an average-cost TD(0)
approximation of the urgency gradient (ADP).
"""

from dataclasses import dataclass, replace

import numpy as np

from .channel import ChannelSample
from .errors import DimensionError
from .priority import PriorityCoefficients, rank2_max_eig, threshold

DORMANT = "dormant"
ACTIVE = "active"


@dataclass(frozen=True)
class PrecodingAction:
    F: np.ndarray
    mode: str
    sigma_star: float
    nu_star: float

    @property
    def power_gain(self):
        return float(np.real(np.trace(self.F.conj().T @ self.F)))


def _dormant(n_t, L, sigma_star, nu_star):
    return PrecodingAction(F=np.zeros((n_t, L), dtype=complex), mode=DORMANT,
                           sigma_star=float(sigma_star), nu_star=float(nu_star))


def propose(coeff: PriorityCoefficients, delta_used, Sigma, chan: ChannelSample,
            tau=None) -> PrecodingAction:
    """Event-driven precoder. delta_used is the true error (feedback variant)
    or the virtual error (feedback-free variant)."""
    ev = threshold(coeff, delta_used, Sigma, tau)
    n_t = chan.U.shape[0]
    L = coeff.L
    if coeff.lam >= chan.sigma_star * ev.nu_star:  # ties resolve to dormant
        return _dormant(n_t, L, chan.sigma_star, ev.nu_star)
    u1 = _phase_fixed(chan.U[:, 0])
    f = np.sqrt(coeff.F_bar) * np.outer(u1, ev.q1)
    return PrecodingAction(F=f, mode=ACTIVE, sigma_star=chan.sigma_star, nu_star=ev.nu_star)


def propose_from_gradient(grad, delta_used, Sigma, chan: ChannelSample,
                          tau, F_bar, lam, L) -> PrecodingAction:
    """Same trigger structure with an externally supplied value gradient
    (used by the ADP baseline)."""
    x = np.asarray(delta_used, float) / tau
    y = np.asarray(Sigma, float) @ np.asarray(grad, float)
    nu, q1 = rank2_max_eig(x, y)
    n_t = chan.U.shape[0]
    if lam >= chan.sigma_star * nu:
        return _dormant(n_t, L, chan.sigma_star, nu)
    u1 = _phase_fixed(chan.U[:, 0])
    f = np.sqrt(F_bar) * np.outer(u1, q1)
    return PrecodingAction(F=f, mode=ACTIVE, sigma_star=chan.sigma_star, nu_star=nu)


def _phase_fixed(u):
    k = int(np.argmax(np.abs(u)))
    lead = u[k]
    if abs(lead) == 0:
        return u
    return u * (lead.conj() / abs(lead))


def baseline_epds(chan: ChannelSample, F_bar, L) -> PrecodingAction:
    """Always-on equal power across the L leading eigenchannels."""
    n_t = chan.U.shape[0]
    if L > min(n_t, chan.H.shape[0]):
        raise DimensionError("stream count exceeds min(N_t, N_r)")
    cols = np.stack([_phase_fixed(chan.U[:, l]) for l in range(L)], axis=1)
    f = np.sqrt(F_bar / L) * cols
    return PrecodingAction(F=f, mode=ACTIVE, sigma_star=chan.sigma_star, nu_star=np.nan)


@dataclass(frozen=True)
class AdpParameters:
    """TD(0) average-cost weights for the quadratic value approximation
    V_r = r1 * Delta^T Sigma Delta + r2^T Delta."""

    r1: float = 0.0
    r2: np.ndarray = None
    avg_cost: float = 0.0
    step: int = 0
    resets: int = 0
    norm_cap: float = 1e6

    def with_dims(self, L):
        return replace(self, r2=np.zeros(L)) if self.r2 is None else self


def adp_features(Delta, Sigma):
    Delta = np.asarray(Delta, float)
    return float(Delta @ np.asarray(Sigma, float) @ Delta), Delta.copy()


def adp_gradient(params: AdpParameters, Delta, Sigma):
    """Gradient of the quadratic approximation: r1 Sigma Delta + r2."""
    return params.r1 * (np.asarray(Sigma, float) @ np.asarray(Delta, float)) + params.r2


def adp_step_size(step):
    return 1.0 / (1.0 + step / 1000.0)


def baseline_adp_step(params: AdpParameters, cost, feat_prev, feat_next) -> AdpParameters:
    """Average-cost TD(0) update of (r1, r2) and the running cost estimate.

    feat_* = (quadratic feature, Delta vector). A divergence guard resets the
    weights when their norm exceeds the cap and counts the reset.
    """
    alpha = adp_step_size(params.step)
    v_prev = params.r1 * feat_prev[0] + params.r2 @ feat_prev[1]
    v_next = params.r1 * feat_next[0] + params.r2 @ feat_next[1]
    avg = params.avg_cost + alpha * (cost - params.avg_cost)
    delta_td = cost - avg + v_next - v_prev
    # normalized-gradient step; see the kernel twin for the rationale
    denom = 1.0 + feat_prev[0] ** 2 + float(feat_prev[1] @ feat_prev[1])
    r1 = params.r1 + alpha * delta_td * feat_prev[0] / denom
    r2 = params.r2 + alpha * delta_td * feat_prev[1] / denom
    resets = params.resets
    norm = np.sqrt(r1 * r1 + float(r2 @ r2))
    if not np.isfinite(norm) or norm > params.norm_cap:
        r1, r2 = 0.0, np.zeros_like(r2)
        resets += 1
    return replace(params, r1=float(r1), r2=r2, avg_cost=float(avg),
                   step=params.step + 1, resets=resets)


def baseline_threshold_via(table, state, chan: ChannelSample, F_bar, L) -> PrecodingAction:
    """Transmit/idle lookup on a solved value-iteration policy table.

    `table` must expose decide(state, sigma_star) -> bool (nearest-cell
    lookup with an out-of-grid counter). Transmitting applies the EPDS
    construction.
    """
    if table.decide(state, chan.sigma_star):
        return baseline_epds(chan, F_bar, L)
    return _dormant(chan.U.shape[0], L, chan.sigma_star, np.nan)
