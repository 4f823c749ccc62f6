"""Closed-loop slot kernels.

One source of truth for the per-slot simulation loop, compiled with numba by
default and runnable as plain Python/numpy when NCSIM_BACKEND=numpy (or when
numba is unavailable). Both paths execute the identical statement sequence on
identical pre-drawn randomness; per-slot outputs agree to floating-point
roundoff (one-ulp library differences can flip a trigger comparison deep into
a long horizon, after which paths decorrelate, so cross-backend checks use
short windows). Reruns on one backend are bit-identical. See
benchmarks/bench_backends.py for the speed comparison.

Channel randomness arrives pre-drawn: sig_star[n] is the top eigenchannel
gain, HU[n] = H(n) @ U(n)[:, :L] the channel applied to the leading (phase-
fixed) eigenvectors, so the loop never decomposes matrices. The augmented
conjugate-stacked Kalman update runs on tiny complex matrices per slot.
"""

import os
import warnings

import numpy as np

_env = os.environ.get("NCSIM_BACKEND", "numba").strip().lower()
if _env in ("numba", "auto", ""):
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover
        warnings.warn("numba unavailable; falling back to the pure-numpy kernels")
        NUMBA_ENABLED = False
elif _env in ("numpy", "python"):
    NUMBA_ENABLED = False
else:
    raise ValueError(f"NCSIM_BACKEND={_env!r} not understood (use 'numba' or 'numpy')")


def _jit(fn):
    if NUMBA_ENABLED:
        return njit(cache=True)(fn)
    return fn


# policy ids shared with episode.py
P_PROPOSED_FB = 0
P_PROPOSED_VIRT = 1
P_EPDS = 2
P_ADP = 3
P_FORCED_DORMANT = 4


def _rank2(x, y):
    """Largest eigenvalue/eigenvector of x y^T + y x^T (rank-2 symmetric)."""
    nx = np.sqrt(np.dot(x, x))
    ny = np.sqrt(np.dot(y, y))
    q = np.zeros_like(x)
    if nx == 0.0 or ny == 0.0:
        if nx > 0.0:
            q[:] = x / nx
        else:
            q[0] = 1.0
        return 0.0, q
    nu = np.dot(y, x) + nx * ny
    u = x + (nx / ny) * y
    nu_u = np.sqrt(np.dot(u, u))
    if nu_u <= 1e-14 * nx:
        q[:] = x / nx
        return 0.0, q
    q[:] = u / nu_u
    return nu, q


_rank2 = _jit(_rank2)


def _min_eig_small(sig):
    """Smallest eigenvalue for the tiny covariances tracked per slot."""
    n = sig.shape[0]
    if n == 1:
        return sig[0, 0]
    if n == 2:
        half_tr = 0.5 * (sig[0, 0] + sig[1, 1])
        disc = np.sqrt(max(0.25 * (sig[0, 0] - sig[1, 1]) ** 2 + sig[0, 1] * sig[1, 0], 0.0))
        return half_tr - disc
    return np.min(np.linalg.eigvalsh(sig))


_min_eig_small = _jit(_min_eig_small)


def run_policy_slots(policy_id, A, B, Psi, S, W,
                     tau, F_bar, lam, eta_th,
                     g1c, g1l, g2c, g2l,
                     sig_star, HU, w_seq, z_seq,
                     x0, xhat0, Sigma0, dvirt0,
                     adp_state, adp_cap,
                     diverge_limit,
                     mode_out, nu_out, power_out, dnorm2_out,
                     trsig_out, werr_out, q1_out):
    """Run the closed loop for one episode; returns (div_slot, adp_resets, min_sig_eig).

    Per slot: trigger evaluation on the previous error (true or virtual),
    optional rank-1 transmission on the top eigenchannel, augmented Kalman
    update, certainty-equivalent control, plant step. Trace arrays are filled
    for every simulated slot; div_slot >= 0 flags blow-up at that slot.
    """
    H = sig_star.shape[0]
    L = A.shape[0]
    Nr = HU.shape[1]
    M = B.shape[1]

    x = x0.copy()
    xhat = xhat0.copy()
    Sigma = Sigma0.copy()
    delta_prev = x - xhat
    dvirt = dvirt0.copy()
    w_prev = np.zeros(L)
    u_prev = np.zeros(M)

    r1 = adp_state[0]
    r2 = adp_state[1:1 + L].copy()
    avg_cost = adp_state[1 + L]
    feat_q_prev = 0.0
    feat_d_prev = np.zeros(L)
    step = 0
    resets = 0

    min_eig = np.inf
    div_slot = -1

    for n in range(H):
        sstar = sig_star[n]
        me = _min_eig_small(Sigma)
        if me < min_eig:
            min_eig = me
        # covariance outruns the state under long forced dormancy; bail out
        # before the augmented solve becomes singular
        if np.trace(Sigma) > diverge_limit:
            div_slot = n
            break

        active = False
        nu = np.nan
        q1 = np.zeros(L)
        if policy_id == P_PROPOSED_FB or policy_id == P_PROPOSED_VIRT:
            if policy_id == P_PROPOSED_FB:
                d_used = delta_prev
            else:
                d_used = dvirt
            nd = np.sqrt(np.dot(d_used, d_used))
            if nd < eta_th:
                G = g1c.copy()
                for m in range(L):
                    G += Sigma[m, m] * g1l[m]
            else:
                G = g2c.copy()
                for m in range(L):
                    G += Sigma[m, m] * g2l[m]
            grad = np.dot(G, d_used)
            nu, q1 = _rank2(d_used / tau, np.dot(Sigma, grad))
            active = lam < sstar * nu
        elif policy_id == P_EPDS:
            active = True
        elif policy_id == P_ADP:
            grad = r1 * np.dot(Sigma, delta_prev) + r2
            nu, q1 = _rank2(delta_prev / tau, np.dot(Sigma, grad))
            active = lam < sstar * nu
        # P_FORCED_DORMANT: never active

        pred = np.dot(A, xhat) + np.dot(B, u_prev)
        if active:
            power = F_bar
            if policy_id == P_EPDS:
                E = np.sqrt(F_bar / L) * HU[n]
            else:
                E = np.sqrt(F_bar) * np.dot(
                    HU[n, :, 0].copy().reshape(Nr, 1),
                    q1.astype(np.complex128).reshape(1, L))
            yobs = np.dot(E, x.astype(np.complex128)) + z_seq[n]
            Ea = np.concatenate((E, E.conj()), axis=0)
            ES = np.dot(Ea, Sigma.astype(np.complex128))
            Smat = np.dot(ES, Ea.conj().T)
            for i in range(2 * Nr):
                Smat[i, i] += 1.0
            Xs = np.linalg.solve(Smat, ES)          # S^-1 E_a Sigma
            Ka = Xs.conj().T                        # Sigma E_a^H S^-1
            ya = np.concatenate((yobs, yobs.conj()))
            innov = ya - np.dot(Ea, pred.astype(np.complex128))
            xhat_new = pred + np.real(np.dot(Ka, innov)).copy()
            post = Sigma - np.real(np.dot(ES.conj().T, Xs)).copy()
            post = 0.5 * (post + post.T)
            Sigma_next = np.dot(np.dot(A, post), A.T) + W
            KE = np.real(np.dot(Ka, Ea)).copy()
            adv = np.dot(A, dvirt) + w_prev
            dvirt = adv - np.dot(KE, adv)
        else:
            power = 0.0
            xhat_new = pred
            Sigma_next = np.dot(np.dot(A, Sigma), A.T) + W
            dvirt = np.dot(A, dvirt) + w_prev
        Sigma_next = 0.5 * (Sigma_next + Sigma_next.T)

        delta = x - xhat_new
        werr = np.dot(delta, np.dot(S, delta)) * tau

        mode_out[n] = 1 if active else 0
        nu_out[n] = nu
        power_out[n] = power
        dnorm2_out[n] = np.dot(delta, delta)
        trsig_out[n] = np.trace(Sigma)
        werr_out[n] = werr
        q1_out[n] = q1

        if policy_id == P_ADP:
            cost = (np.dot(delta, np.dot(S, delta)) + lam * power) * tau
            feat_q_next = np.dot(delta, np.dot(Sigma_next, delta))
            alpha = 1.0 / (1.0 + step / 1000.0)
            v_prev = r1 * feat_q_prev + np.dot(r2, feat_d_prev)
            v_next = r1 * feat_q_next + np.dot(r2, delta)
            avg_cost += alpha * (cost - avg_cost)
            dtd = cost - avg_cost + v_next - v_prev
            # normalized-gradient step: raw quadratic features are unbounded
            # on an unstable plant and would saturate the cap every slot
            denom = 1.0 + feat_q_prev * feat_q_prev + np.dot(feat_d_prev, feat_d_prev)
            r1 += alpha * dtd * feat_q_prev / denom
            r2 = r2 + alpha * dtd * feat_d_prev / denom
            nrm = np.sqrt(r1 * r1 + np.dot(r2, r2))
            if not np.isfinite(nrm) or nrm > adp_cap:
                r1 = 0.0
                r2 = np.zeros(L)
                resets += 1
            feat_q_prev = feat_q_next
            feat_d_prev = delta.copy()
            step += 1

        u = np.dot(Psi, xhat_new)
        x = np.dot(A, x) + np.dot(B, u) + w_seq[n]
        w_prev = w_seq[n]
        xhat = xhat_new
        delta_prev = delta
        u_prev = u
        Sigma = Sigma_next

        xn = np.sqrt(np.dot(x, x))
        if not np.isfinite(xn) or xn > diverge_limit:
            div_slot = n
            break

    adp_state[0] = r1
    adp_state[1:1 + L] = r2
    adp_state[1 + L] = avg_cost
    return div_slot, resets, min_eig


run_policy_slots = _jit(run_policy_slots)
