"""Closed-loop episode runner.

Randomness contract: episode i draws from a Philox stream seeded by
SeedSequence(master_seed, spawn_key=(i,)) - independent of how many episodes
run or in which order. Each slot consumes one contiguous row of standard
normals ordered (H, w, z), so traces replay bit-exactly from (seed, index).

The slot loop itself lives in _kernels.run_policy_slots (numba by default,
numpy fallback); value-iteration table policies run through a plain Python
loop against the estimator module, sharing the same pre-drawn arrays.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels, estimator
from ._kernels import P_ADP, P_EPDS, P_FORCED_DORMANT, P_PROPOSED_FB, P_PROPOSED_VIRT
from .channel import _fix_column_phases
from .config import SimModel
from .errors import ConfigError, DivergenceError

KERNEL_POLICY_IDS = {
    "proposed-feedback": P_PROPOSED_FB,
    "proposed-virtual": P_PROPOSED_VIRT,
    "epds": P_EPDS,
    "adp": P_ADP,
    "forced-dormant": P_FORCED_DORMANT,
}
TABLE_POLICIES = ("efc-via", "spsis-via", "oracle-via")

TRACE_COLUMNS = ("slot", "mode", "sigma_star", "nu_star", "power_gain",
                 "delta_norm_sq", "trace_sigma", "weighted_error")


@dataclass
class TraceArrays:
    slot: np.ndarray
    mode: np.ndarray
    sigma_star: np.ndarray
    nu_star: np.ndarray
    power_gain: np.ndarray
    delta_norm_sq: np.ndarray
    trace_sigma: np.ndarray
    weighted_error: np.ndarray
    q1: np.ndarray


@dataclass
class EpisodeMetrics:
    avg_weighted_error: float
    avg_power_gain: float
    activation_rate: float
    objective: float
    mse: float
    normalized_mse: float
    n_slots: int
    min_sigma_eig: float
    adp_resets: int = 0
    trace: TraceArrays = None


def episode_rng(master_seed: int, index: int) -> np.random.Generator:
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


def _psd_sqrt(w):
    vals, vecs = np.linalg.eigh(0.5 * (w + w.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def draw_episode_inputs(rng, horizon, n_t, n_r, L, W):
    """Pre-draw every random quantity for one episode.

    Returns (sig_star, HU, w_seq, z_seq) with HU[n] = H(n) @ U(n)[:, :L]
    (columns phase-fixed, eigenvalues descending).
    """
    cols_h = 2 * n_r * n_t
    cols_w = L
    cols_z = 2 * n_r
    block = rng.standard_normal((horizon, cols_h + cols_w + cols_z))
    hraw = block[:, :cols_h].reshape(horizon, n_r, n_t, 2)
    h = (hraw[..., 0] + 1j * hraw[..., 1]) / np.sqrt(2.0)
    w_seq = block[:, cols_h:cols_h + cols_w] @ _psd_sqrt(W).T
    zraw = block[:, cols_h + cols_w:].reshape(horizon, n_r, 2)
    z_seq = (zraw[..., 0] + 1j * zraw[..., 1]) / np.sqrt(2.0)

    gram = np.einsum("nij,nik->njk", h.conj(), h)
    vals, vecs = np.linalg.eigh(gram)
    sig_star = np.ascontiguousarray(vals[:, -1])
    u_lead = _fix_column_phases(vecs[:, :, ::-1][:, :, :L])
    hu = np.ascontiguousarray(np.einsum("nij,njk->nik", h, u_lead))
    return sig_star, hu, np.ascontiguousarray(w_seq), np.ascontiguousarray(z_seq)


def _alloc_trace(horizon, L):
    return dict(
        mode_out=np.zeros(horizon, dtype=np.int64),
        nu_out=np.full(horizon, np.nan),
        power_out=np.zeros(horizon),
        dnorm2_out=np.zeros(horizon),
        trsig_out=np.zeros(horizon),
        werr_out=np.zeros(horizon),
        q1_out=np.zeros((horizon, L)),
    )


def run_episode(model: SimModel, episode_index=0, policy=None, horizon=None,
                burn_in=None, collect_trace=False, table=None,
                adp_state=None, raise_on_divergence=True) -> EpisodeMetrics:
    """Simulate one episode under the selected policy and accumulate metrics."""
    cfg = model.config
    policy = cfg.policy if policy is None else policy
    horizon = cfg.horizon if horizon is None else int(horizon)
    burn_in = cfg.burn_in if burn_in is None else int(burn_in)
    if not horizon > burn_in >= 0:
        raise ConfigError("need horizon > burn_in >= 0")
    L = cfg.L
    rng = episode_rng(cfg.master_seed, episode_index)
    sig_star, hu, w_seq, z_seq = draw_episode_inputs(
        rng, horizon, cfg.n_t, cfg.n_r, L, model.disc.W)

    out = _alloc_trace(horizon, L)
    if policy in KERNEL_POLICY_IDS:
        if adp_state is None:
            adp_state = np.zeros(L + 2)
        div_slot, adp_resets, min_eig = _kernels.run_policy_slots(
            KERNEL_POLICY_IDS[policy],
            model.disc.A, model.disc.B, model.gain.Psi, model.S, model.disc.W,
            cfg.tau, cfg.F_bar, cfg.lam, cfg.eta_th,
            model.coeff.g1_const, model.coeff.g1_lin,
            model.coeff.g2_const, model.coeff.g2_lin,
            sig_star, hu, w_seq, z_seq,
            np.zeros(L), np.zeros(L), np.zeros((L, L)), np.zeros(L),
            adp_state, 1e6,
            cfg.diverge_limit,
            out["mode_out"], out["nu_out"], out["power_out"], out["dnorm2_out"],
            out["trsig_out"], out["werr_out"], out["q1_out"])
    elif policy in TABLE_POLICIES:
        if table is None:
            raise ConfigError(f"policy {policy!r} needs a solved policy table")
        div_slot, min_eig = _run_table_policy(model, policy, table, sig_star, hu,
                                              w_seq, z_seq, out)
        adp_resets = 0
    else:
        raise ConfigError(f"unknown policy {policy!r}")

    if div_slot >= 0 and raise_on_divergence:
        raise DivergenceError(
            f"state norm exceeded {cfg.diverge_limit:g} at slot {div_slot} under {policy}",
            slot=int(div_slot))
    n_end = horizon if div_slot < 0 else div_slot + 1
    return _metrics_from_trace(model, out, sig_star, burn_in, n_end, min_eig,
                               adp_resets, collect_trace)


def _metrics_from_trace(model, out, sig_star, burn_in, n_end, min_eig,
                        adp_resets, collect_trace):
    cfg = model.config
    sl = slice(burn_in, n_end)
    werr = out["werr_out"][sl]
    power_t = out["power_out"][sl] * cfg.tau
    avg_w = float(werr.mean())
    avg_p = float(power_t.mean())
    normalizer = cfg.tau * model.normalizer
    metrics = EpisodeMetrics(
        avg_weighted_error=avg_w,
        avg_power_gain=avg_p,
        activation_rate=float(out["mode_out"][sl].mean()),
        objective=avg_w + cfg.lam * avg_p,
        mse=float(out["dnorm2_out"][sl].mean()),
        normalized_mse=avg_w / normalizer if normalizer > 0 else float("nan"),
        n_slots=n_end - burn_in,
        min_sigma_eig=float(min_eig),
        adp_resets=int(adp_resets),
    )
    if collect_trace:
        metrics.trace = TraceArrays(
            slot=np.arange(n_end), mode=out["mode_out"][:n_end],
            sigma_star=sig_star[:n_end], nu_star=out["nu_out"][:n_end],
            power_gain=out["power_out"][:n_end],
            delta_norm_sq=out["dnorm2_out"][:n_end],
            trace_sigma=out["trsig_out"][:n_end],
            weighted_error=out["werr_out"][:n_end], q1=out["q1_out"][:n_end])
    return metrics


def _run_table_policy(model, policy, table, sig_star, hu, w_seq, z_seq, out):
    """Python loop for policies driven by a solved decision table."""
    cfg = model.config
    disc, gain, S = model.disc, model.gain, model.S
    L = cfg.L
    horizon = sig_star.shape[0]
    a = disc.A
    x = np.zeros(L)
    st = estimator.initial_state(L)
    u_prev = np.zeros(disc.B.shape[1])
    delta_prev = np.zeros(L)
    w_prev = np.zeros(L)
    min_eig = np.inf
    div_slot = -1
    for n in range(horizon):
        min_eig = min(min_eig, float(np.linalg.eigvalsh(st.Sigma).min()))
        out["trsig_out"][n] = float(np.trace(st.Sigma))
        if policy == "efc-via":
            transmit, q = table.decide(np.linalg.norm(delta_prev), sig_star[n]), None
        elif policy == "spsis-via":
            theta = a @ delta_prev + w_prev
            transmit, q = table.decide(np.linalg.norm(theta), sig_star[n]), None
        else:  # oracle-via
            transmit, q = table.action(delta_prev, st.Sigma, sig_star[n])
        if transmit:
            power = cfg.F_bar
            if q is None:
                e = np.sqrt(cfg.F_bar / L) * hu[n]
            else:
                e = np.sqrt(cfg.F_bar) * np.outer(hu[n, :, 0], q)
        else:
            power = 0.0
            e = np.zeros((cfg.n_r, L), dtype=complex)
        # estimator_step consumes F through E = H F; pass E with H = I
        st = estimator.estimator_step(st, x, e, np.eye(cfg.n_r), z_seq[n],
                                      u_prev, disc, joseph=cfg.joseph)
        delta = st.Delta
        out["mode_out"][n] = 1 if transmit else 0
        out["power_out"][n] = power
        out["dnorm2_out"][n] = float(delta @ delta)
        out["werr_out"][n] = float(delta @ S @ delta) * cfg.tau
        u = gain.Psi @ st.x_hat
        x = disc.A @ x + disc.B @ u + w_seq[n]
        w_prev = w_seq[n]
        delta_prev = delta
        u_prev = u
        xn = np.linalg.norm(x)
        if not np.isfinite(xn) or xn > cfg.diverge_limit:
            div_slot = n
            break
    return div_slot, min_eig
