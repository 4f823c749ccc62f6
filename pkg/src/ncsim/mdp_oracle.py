"""Brute-force relative value iteration on a discretized state space.

The reduced average-cost optimality equation integrates the i.i.d. channel
out: the state is (error, covariance), the channel gain enters through a
quantile quadrature, and the action set is dormant plus full-budget rank-1
beams (bang-bang, matching the structure of the closed-form policy). This
oracle is for desk-scale validation (state dimension capped at 2); it backs
the optimality-loss tables and the threshold-table baselines.

All successor laws are linear-Gaussian and projected onto the grid by exact
cell probabilities (normal CDF differences) in 1-D, or Gauss-Hermite nodes
with nearest-cell projection in 2-D. Kernel rows sum to one by construction.
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse, stats

from .errors import ConfigError, ConvergenceError

MEMORY_BUDGET_BYTES = 500 * 1024 * 1024


# ---------------------------------------------------------------------------
# tables


@dataclass
class DiscretizedMdp:
    """Cost and kernel tables over (state, channel node, action)."""

    L: int
    delta_grids: list            # per-coordinate grid arrays
    sigma_grids: list            # per-diagonal-entry grid arrays
    sstar_nodes: np.ndarray      # (nj,) quantile nodes of the channel gain
    sstar_edges: np.ndarray      # (nj+1,) quantile bin edges
    beams: np.ndarray            # (n_beams, L) unit rows; action 0 = dormant
    cost: np.ndarray             # (nS, nj, nA)
    kernels: list                # kernels[j][a]: sparse (nS, nS)
    tau: float
    F_bar: float
    lam: float
    state_shape: tuple

    @property
    def n_states(self):
        return self.cost.shape[0]

    @property
    def n_actions(self):
        return self.cost.shape[2]

    def validate(self):
        for j, row in enumerate(self.kernels):
            for a, k in enumerate(row):
                s = np.asarray(k.sum(axis=1)).ravel()
                if np.max(np.abs(s - 1.0)) > 1e-9:
                    raise ConfigError(f"kernel rows for node {j} action {a} do not sum to 1")
        if not np.all(np.isfinite(self.cost)) or np.min(self.cost) < 0:
            raise ConfigError("costs must be finite and nonnegative")


@dataclass(frozen=True)
class ViaSolution:
    theta: float                 # average cost per unit time
    V_table: np.ndarray
    policy_table: np.ndarray     # (nS, nj) action indices
    span_history: np.ndarray
    iterations: int


def _nearest_idx(grid, values):
    idx = np.searchsorted(grid, values)
    idx = np.clip(idx, 1, grid.size - 1)
    left = grid[idx - 1]
    right = grid[idx]
    use_left = (values - left) <= (right - values)
    return np.where(use_left, idx - 1, idx)


def _cell_probs(grid, mean, std):
    """Exact probabilities of grid cells under N(mean, std^2), tails lumped
    into the boundary cells."""
    edges = np.concatenate([[-np.inf], 0.5 * (grid[1:] + grid[:-1]), [np.inf]])
    cdf = stats.norm.cdf(edges, loc=mean, scale=max(std, 1e-12))
    return np.diff(cdf)


def _folded_cell_probs(grid, mean, std):
    """Cell probabilities of |X| on a nonnegative grid, X ~ N(mean, std^2)."""
    edges = np.concatenate([[0.0], 0.5 * (grid[1:] + grid[:-1]), [np.inf]])
    p_pos = np.diff(stats.norm.cdf(edges, loc=mean, scale=max(std, 1e-12)))
    p_neg = np.diff(stats.norm.cdf(edges, loc=-mean, scale=max(std, 1e-12)))
    return p_pos + p_neg


# ---------------------------------------------------------------------------
# scalar-state oracle (exact 1-D quadrature kernels)


def _scalar_post(delta, sigma, a_scalar, w_scalar, rho):
    """Mean/variance of the next error and the next covariance, scalar case.

    rho = 2 F_bar sigma_star for an active slot (0 when dormant); the factor
    2 comes from the conjugate-stacked measurement.
    """
    denom = 1.0 + rho * sigma
    mean = a_scalar * delta / denom
    var = (w_scalar + rho * sigma ** 2) / denom ** 2
    sig_next = a_scalar ** 2 * sigma / denom + w_scalar
    return mean, var, sig_next


def build_scalar_mdp(disc, dist, S, F_bar, lam, *, n_delta=61, delta_max=None,
                     n_sigma=21, sigma_max=None, n_sstar=32,
                     sstar_nodes=None, sigma_spacing="geom") -> DiscretizedMdp:
    """Quadrature-exact tables for the L=1 reduced problem.

    The error grid is uniform on [-delta_max, delta_max]; the covariance grid
    is geometric by default (its stationary law is heavy-tailed under rare
    transmissions)."""
    if disc.L != 1:
        raise ConfigError("build_scalar_mdp requires a scalar plant")
    a = float(disc.A[0, 0])
    w = float(disc.W[0, 0])
    s_w = float(np.asarray(S, float).reshape(1)[0])
    tau = disc.tau
    if delta_max is None or sigma_max is None:
        raise ConfigError("delta_max and sigma_max must be supplied (use a pilot run to size them)")
    delta_grid = np.linspace(-delta_max, delta_max, n_delta)
    if sigma_spacing == "geom":
        sigma_grid = np.geomspace(w, sigma_max, n_sigma)
    else:
        sigma_grid = np.linspace(w, sigma_max, n_sigma)
    if sstar_nodes is None:
        qs = (np.arange(n_sstar) + 0.5) / n_sstar
        sstar_nodes = np.array([dist.quantile(q) for q in qs])
        sstar_edges = np.array([0.0] + [dist.quantile(k / n_sstar) for k in range(1, n_sstar)] + [np.inf])
    else:
        sstar_nodes = np.asarray(sstar_nodes, float)
        n_sstar = sstar_nodes.size
        sstar_edges = np.concatenate([[0.0], 0.5 * (sstar_nodes[1:] + sstar_nodes[:-1]), [np.inf]])

    n_s = n_delta * n_sigma
    est = n_sstar * 2 * n_s * (n_delta + 2) * 12
    if est > MEMORY_BUDGET_BYTES:
        raise ConfigError(
            f"kernel tables would need ~{est/1e6:.0f} MB (> {MEMORY_BUDGET_BYTES/1e6:.0f} MB budget); "
            f"sizing: {n_delta} x {n_sigma} states x {n_sstar} nodes x 2 actions")

    cost = np.zeros((n_s, n_sstar, 2))
    kernels = []
    state_idx = np.arange(n_s).reshape(n_delta, n_sigma)
    edges = np.concatenate([[-np.inf], 0.5 * (delta_grid[1:] + delta_grid[:-1]), [np.inf]])
    for j, x in enumerate(sstar_nodes):
        row = []
        for act in (0, 1):
            rho = 2.0 * F_bar * x if act else 0.0
            rows = np.empty((n_s, n_delta))
            cols_sig = np.empty(n_s, dtype=int)
            for isig, sig in enumerate(sigma_grid):
                mean_scale, var, sig_next = _scalar_post(1.0, sig, a, w, rho)
                isig_next = int(_nearest_idx(sigma_grid, np.array([sig_next]))[0])
                std = max(np.sqrt(var), 1e-12)
                means = mean_scale * delta_grid
                block = np.diff(stats.norm.cdf((edges[None, :] - means[:, None]) / std), axis=1)
                s_lin = state_idx[:, isig]
                rows[s_lin] = block
                cols_sig[s_lin] = isig_next
                cost[s_lin, j, act] = (s_w * (means ** 2 + var) + lam * F_bar * act) * tau
            data = rows.ravel()
            col_idx = (np.tile(np.arange(n_delta), (n_s, 1)) * n_sigma + cols_sig[:, None]).ravel()
            row_idx = np.repeat(np.arange(n_s), n_delta)
            row.append(sparse.csr_matrix((data, (row_idx, col_idx)), shape=(n_s, n_s)))
        kernels.append(row)

    mdp = DiscretizedMdp(
        L=1, delta_grids=[delta_grid], sigma_grids=[sigma_grid],
        sstar_nodes=sstar_nodes, sstar_edges=sstar_edges,
        beams=np.array([[1.0]]), cost=cost, kernels=kernels, tau=tau,
        F_bar=F_bar, lam=lam, state_shape=(n_delta, n_sigma))
    mdp.validate()
    return mdp


# ---------------------------------------------------------------------------
# planar-state oracle (L = 2, Gauss-Hermite projection, coarse by design)


def _unit_beams(n):
    ang = np.pi * np.arange(n) / n
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def build_planar_mdp(disc, dist, S, F_bar, lam, *, n_delta=9, delta_max=None,
                     n_sigma=5, sigma_max=None, n_sstar=8, n_beams=16,
                     sigma_offdiag=0.0, n_gh=6) -> DiscretizedMdp:
    """Coarse tables for the L=2 reduced problem.

    The covariance is parameterized by its diagonal on a grid with the
    off-diagonal frozen at a stationary value; successors project onto the
    nearest cells through a Gauss-Hermite product rule.
    """
    if disc.L != 2:
        raise ConfigError("build_planar_mdp requires a two-state plant")
    if delta_max is None or sigma_max is None:
        raise ConfigError("delta_max and sigma_max must be supplied")
    A = disc.A
    W = disc.W
    Sm = np.asarray(S, float)
    tau = disc.tau
    dg = np.linspace(-delta_max, delta_max, n_delta)
    sg = [np.linspace(W[i, i], sigma_max[i] if np.ndim(sigma_max) else sigma_max, n_sigma)
          for i in range(2)]
    qs = (np.arange(n_sstar) + 0.5) / n_sstar
    sstar_nodes = np.array([dist.quantile(q) for q in qs])
    sstar_edges = np.array([0.0] + [dist.quantile(k / n_sstar) for k in range(1, n_sstar)] + [np.inf])
    beams = _unit_beams(n_beams)
    n_actions = 1 + n_beams
    n_s = n_delta * n_delta * n_sigma * n_sigma
    gh_x, gh_w = np.polynomial.hermite_e.hermegauss(n_gh)
    gh_nodes = np.stack(np.meshgrid(gh_x, gh_x, indexing="ij"), axis=-1).reshape(-1, 2)
    gh_weights = np.outer(gh_w, gh_w).ravel() / (2.0 * np.pi) * (2.0 * np.pi / np.sum(np.outer(gh_w, gh_w)))
    est = n_s * n_sstar * n_actions * gh_nodes.shape[0] * 20
    if est > MEMORY_BUDGET_BYTES:
        raise ConfigError(
            f"kernel tables would need ~{est/1e6:.0f} MB (> {MEMORY_BUDGET_BYTES/1e6:.0f} MB); "
            f"sizing: {n_s} states x {n_sstar} nodes x {n_actions} actions x {gh_nodes.shape[0]} GH nodes")

    shape = (n_delta, n_delta, n_sigma, n_sigma)
    cost = np.zeros((n_s, n_sstar, n_actions))
    kernels = []
    didx = np.arange(n_delta)
    for j, x in enumerate(sstar_nodes):
        row_k = []
        for act in range(n_actions):
            rows, cols, vals = [], [], []
            for is1, s1 in enumerate(sg[0]):
                for is2, s2 in enumerate(sg[1]):
                    sig = np.array([[s1, sigma_offdiag], [sigma_offdiag, s2]])
                    if act == 0:
                        gain_map = np.eye(2)
                        cov = W.copy()
                        sig_next = A @ sig @ A.T + W
                    else:
                        q = beams[act - 1]
                        rho = 2.0 * F_bar * x
                        s_q = float(q @ sig @ q)
                        beta = rho / (1.0 + rho * s_q)
                        proj = np.eye(2) - beta * np.outer(sig @ q, q)
                        gain_map = proj @ A
                        cov = proj @ W @ proj.T + (rho / (1.0 + rho * s_q) ** 2) * np.outer(sig @ q, q @ sig)
                        post = sig - beta * np.outer(sig @ q, q @ sig)
                        sig_next = A @ post @ A.T + W
                    cov = 0.5 * (cov + cov.T)
                    cw, cv = np.linalg.eigh(cov)
                    cov_half = cv @ np.diag(np.sqrt(np.clip(cw, 0, None)))
                    i1n = int(_nearest_idx(sg[0], np.array([sig_next[0, 0]]))[0])
                    i2n = int(_nearest_idx(sg[1], np.array([sig_next[1, 1]]))[0])
                    for id1, d1 in enumerate(dg):
                        for id2, d2 in enumerate(dg):
                            s_lin = np.ravel_multi_index((id1, id2, is1, is2), shape)
                            m = gain_map @ np.array([d1, d2])
                            cost[s_lin, j, act] = (m @ Sm @ m + np.trace(Sm @ cov)
                                                   + lam * F_bar * (act > 0)) * tau
                            pts = m[None, :] + gh_nodes @ cov_half.T
                            j1 = _nearest_idx(dg, pts[:, 0])
                            j2 = _nearest_idx(dg, pts[:, 1])
                            succ = np.ravel_multi_index((j1, j2, np.full_like(j1, i1n),
                                                         np.full_like(j1, i2n)), shape)
                            rows.append(np.full(succ.size, s_lin))
                            cols.append(succ)
                            vals.append(gh_weights)
            k = sparse.csr_matrix((np.concatenate(vals),
                                   (np.concatenate(rows), np.concatenate(cols))),
                                  shape=(n_s, n_s))
            row_k.append(k)
        kernels.append(row_k)

    mdp = DiscretizedMdp(
        L=2, delta_grids=[dg, dg], sigma_grids=sg,
        sstar_nodes=sstar_nodes, sstar_edges=sstar_edges, beams=beams,
        cost=cost, kernels=kernels, tau=tau, F_bar=F_bar, lam=lam,
        state_shape=shape)
    mdp.validate()
    return mdp


def discretize_mdp(disc, dist, S, F_bar, lam, **grid_kw) -> DiscretizedMdp:
    if disc.L == 1:
        return build_scalar_mdp(disc, dist, S, F_bar, lam, **grid_kw)
    if disc.L == 2:
        return build_planar_mdp(disc, dist, S, F_bar, lam, **grid_kw)
    raise ConfigError("the oracle is capped at 2 state dimensions")


# ---------------------------------------------------------------------------
# relative value iteration


def relative_value_iteration(mdp: DiscretizedMdp, tol_scale=1e-6,
                             max_iter=20_000, ref_state=None,
                             damping=0.9) -> ViaSolution:
    """Average-cost relative value iteration with a fixed reference state.

    The Bellman sweep is mixed with the previous table (damping < 1) so
    periodic chains converge too; the fixed point and theta are unchanged.
    Stops when the span seminorm of successive value tables drops below
    tol_scale times the running average-cost scale.
    """
    n_s, n_j, n_a = mdp.cost.shape
    ref = n_s // 2 if ref_state is None else int(ref_state)
    v = np.zeros(n_s)
    spans = []
    theta_tau = 0.0
    for it in range(1, max_iter + 1):
        q_best = np.full(n_s, np.inf)
        acc = np.zeros(n_s)
        for j in range(n_j):
            q_best.fill(np.inf)
            for a in range(n_a):
                q = mdp.cost[:, j, a] + mdp.kernels[j][a] @ v
                np.minimum(q_best, q, out=q_best)
            acc += q_best
        tv = acc / n_j
        theta_tau = tv[ref]
        v_new = (1.0 - damping) * v + damping * (tv - theta_tau)
        span = float(np.max(v_new - v) - np.min(v_new - v))
        spans.append(span)
        v = v_new
        if span <= damping * tol_scale * max(abs(theta_tau), 1e-12):
            break
    else:
        raise ConvergenceError("value iteration exceeded max_iter",
                               iterations=max_iter, residual=spans[-1],
                               history=np.array(spans))

    policy = np.zeros((n_s, n_j), dtype=np.int64)
    for j in range(n_j):
        qs = np.stack([mdp.cost[:, j, a] + mdp.kernels[j][a] @ v for a in range(n_a)], axis=1)
        policy[:, j] = np.argmin(qs, axis=1)
    return ViaSolution(theta=float(theta_tau / mdp.tau), V_table=v,
                       policy_table=policy, span_history=np.array(spans),
                       iterations=it)


def performance_loss(proposed_avg_cost, via_avg_cost):
    """Relative optimality loss in percent."""
    if via_avg_cost <= 0:
        raise ValueError("oracle average cost must be positive for a loss ratio")
    return 100.0 * (proposed_avg_cost - via_avg_cost) / via_avg_cost


def transmit_upset_violations(mdp: DiscretizedMdp, policy_table):
    """Count (CSI node, covariance cell) lines where the transmit set is not
    an up-set in |error|: a dormant cell with larger |delta| than some
    transmitting cell with the same sign. Reported, not asserted."""
    if mdp.L != 1:
        raise ConfigError("up-set check implemented for the scalar oracle")
    n_delta, n_sigma = mdp.state_shape
    pol = policy_table.reshape(n_delta, n_sigma, -1)
    dg = mdp.delta_grids[0]
    bad = 0
    for j in range(pol.shape[2]):
        for isig in range(n_sigma):
            for sign in (-1, 1):
                sel = np.nonzero(sign * dg > 0)[0]
                order = sel[np.argsort(np.abs(dg[sel]))]
                seen_tx = False
                for idx in order:
                    tx = pol[idx, isig, j] > 0
                    if seen_tx and not tx:
                        bad += 1
                    seen_tx = seen_tx or tx
    return bad


# ---------------------------------------------------------------------------
# closed-loop policy tables


@dataclass
class OracleTable:
    """Nearest-cell lookup of the solved oracle policy for closed-loop use."""

    mdp: DiscretizedMdp
    policy: np.ndarray
    extrapolations: int = 0

    def _sstar_bin(self, sstar):
        j = int(np.searchsorted(self.mdp.sstar_edges, sstar, side="right")) - 1
        return min(max(j, 0), self.mdp.sstar_nodes.size - 1)

    def action(self, delta, Sigma, sstar):
        """Returns (transmit, beam vector or None)."""
        mdp = self.mdp
        idx = []
        out_of_grid = False
        for c, grid in enumerate(mdp.delta_grids):
            val = float(np.atleast_1d(delta)[c])
            out_of_grid |= val < grid[0] or val > grid[-1]
            idx.append(int(_nearest_idx(grid, np.array([val]))[0]))
        sig_diag = np.diag(np.atleast_2d(Sigma))
        for c, grid in enumerate(mdp.sigma_grids):
            val = float(sig_diag[c])
            out_of_grid |= val < grid[0] or val > grid[-1]
            idx.append(int(_nearest_idx(grid, np.array([val]))[0]))
        if out_of_grid:
            self.extrapolations += 1
        s = int(np.ravel_multi_index(tuple(idx), mdp.state_shape))
        a = int(self.policy[s, self._sstar_bin(sstar)])
        if a == 0:
            return False, None
        return True, mdp.beams[a - 1]


@dataclass
class ThresholdTable:
    """Transmit/idle lookup on a scalar reduced state (norm of an error-like
    quantity), optionally CSI-binned. Backs the error-free-channel and
    scalar-channel baselines."""

    state_grid: np.ndarray
    sstar_edges: np.ndarray        # length n_bins + 1 (single bin: [0, inf])
    transmit: np.ndarray           # (n_state, n_bins) bool
    extrapolations: int = 0

    def decide(self, state_norm, sstar):
        g = self.state_grid
        if state_norm < g[0] or state_norm > g[-1]:
            self.extrapolations += 1
        i = int(_nearest_idx(g, np.array([float(state_norm)]))[0])
        j = int(np.searchsorted(self.sstar_edges, sstar, side="right")) - 1
        j = min(max(j, 0), self.transmit.shape[1] - 1)
        return bool(self.transmit[i, j])


def _solve_1d_mdp(grid, cost, kernels, tau, tol_scale=1e-6, max_iter=20_000):
    """RVI on a 1-D state with per-(bin, action) kernels; returns policy array."""
    n_s = grid.size
    n_j = len(kernels)
    n_a = len(kernels[0])
    v = np.zeros(n_s)
    theta_tau = 0.0
    for it in range(max_iter):
        acc = np.zeros(n_s)
        for j in range(n_j):
            q_best = np.full(n_s, np.inf)
            for a in range(n_a):
                np.minimum(q_best, cost[:, j, a] + kernels[j][a] @ v, out=q_best)
            acc += q_best
        tv = acc / n_j
        theta_tau = tv[n_s // 2]
        v_new = tv - theta_tau
        span = float(np.max(v_new - v) - np.min(v_new - v))
        v = v_new
        if span <= tol_scale * max(abs(theta_tau), 1e-12):
            break
    policy = np.zeros((n_s, n_j), dtype=bool)
    for j in range(n_j):
        q0 = cost[:, j, 0] + kernels[j][0] @ v
        q1 = cost[:, j, 1] + kernels[j][1] @ v
        policy[:, j] = q1 < q0
    return policy, theta_tau / tau


def build_efc_table(disc, S, F_bar, lam, *, n_state=81, state_max,
                    use_price=None) -> ThresholdTable:
    """Idle/transmit table for the error-free-channel reduction.

    Transmitting delivers the state exactly (error resets to zero) at price
    lam * F_bar per slot-time by default; the state is the norm of the
    estimation error, drifted by the spectral radius of A.
    """
    a_eff = float(np.max(np.abs(np.linalg.eigvals(disc.A))))
    w_eff = float(np.trace(disc.W)) / disc.L
    s_eff = float(np.trace(np.asarray(S, float))) / disc.L
    price = lam * F_bar if use_price is None else use_price
    grid = np.linspace(0.0, state_max, n_state)
    tau = disc.tau

    cost = np.zeros((n_state, 1, 2))
    # dormant: e' = |a e + w| (folded normal, projected); transmit: e' ~ |w|
    rows_d = np.empty((n_state, n_state))
    rows_t = np.empty((n_state, n_state))
    std = np.sqrt(w_eff)
    for i, e in enumerate(grid):
        probs = _folded_cell_probs(grid, a_eff * e, std)
        rows_d[i] = probs / probs.sum()
        cost[i, 0, 0] = s_eff * (a_eff ** 2 * e ** 2 + w_eff) * tau
        cost[i, 0, 1] = price * tau
    pt = _folded_cell_probs(grid, 0.0, std)
    rows_t[:] = pt / pt.sum()
    kernels = [[sparse.csr_matrix(rows_d), sparse.csr_matrix(rows_t)]]
    policy, _ = _solve_1d_mdp(grid, cost, kernels, tau)
    return ThresholdTable(state_grid=grid, sstar_edges=np.array([0.0, np.inf]),
                          transmit=policy)


def build_spsis_table(disc, dist, S, F_bar, lam, *, n_state=81, state_max,
                      sigma_ref, n_sstar=8) -> ThresholdTable:
    """Idle/transmit table for the scalar-channel reduction: the state is the
    norm of the pre-update error, CSI enters through quantile bins, and the
    covariance is frozen at a reference level."""
    a_eff = float(np.max(np.abs(np.linalg.eigvals(disc.A))))
    w_eff = float(np.trace(disc.W)) / disc.L
    s_eff = float(np.trace(np.asarray(S, float))) / disc.L
    tau = disc.tau
    grid = np.linspace(0.0, state_max, n_state)
    qs = (np.arange(n_sstar) + 0.5) / n_sstar
    nodes = np.array([dist.quantile(q) for q in qs])
    edges = np.array([0.0] + [dist.quantile(k / n_sstar) for k in range(1, n_sstar)] + [np.inf])
    std = np.sqrt(w_eff)

    cost = np.zeros((n_state, n_sstar, 2))
    kernels = []
    for j, x in enumerate(nodes):
        rho = 2.0 * F_bar * x
        shrink = 1.0 / (1.0 + rho * sigma_ref)
        noise = rho * sigma_ref ** 2 * shrink ** 2
        rows_d = np.empty((n_state, n_state))
        rows_t = np.empty((n_state, n_state))
        for i, th in enumerate(grid):
            # dormant: error equals theta; next theta ~ |a theta + w|
            probs = _folded_cell_probs(grid, a_eff * th, std)
            rows_d[i] = probs / probs.sum()
            cost[i, j, 0] = s_eff * th ** 2 * tau
            # transmit: error shrinks; next theta ~ |a e' + w|
            e2 = (shrink * th) ** 2 + noise
            cost[i, j, 1] = (s_eff * e2 + lam * F_bar) * tau
            std_t = np.sqrt(a_eff ** 2 * noise + w_eff)
            rows_t[i] = _folded_cell_probs(grid, a_eff * shrink * th, std_t)
            rows_t[i] /= rows_t[i].sum()
        kernels.append([sparse.csr_matrix(rows_d), sparse.csr_matrix(rows_t)])
    policy, _ = _solve_1d_mdp(grid, cost, kernels, tau)
    return ThresholdTable(state_grid=grid, sstar_edges=edges, transmit=policy)


# ---------------------------------------------------------------------------
# persistence (versioned, text-only)


def save_via_table(path, mdp: DiscretizedMdp, sol: ViaSolution):
    with open(path, "w") as fh:
        fh.write("# ncsim-via-table v1\n")
        fh.write(f"# L={mdp.L} tau={mdp.tau!r} F_bar={mdp.F_bar!r} lam={mdp.lam!r}\n")
        fh.write(f"# theta={sol.theta!r}\n")
        for c, g in enumerate(mdp.delta_grids):
            fh.write(f"# delta_grid{c}=" + ",".join(repr(float(v)) for v in g) + "\n")
        for c, g in enumerate(mdp.sigma_grids):
            fh.write(f"# sigma_grid{c}=" + ",".join(repr(float(v)) for v in g) + "\n")
        fh.write("# sstar_edges=" + ",".join(repr(float(v)) for v in mdp.sstar_edges) + "\n")
        fh.write("state_index,sstar_bin,action_index,value\n")
        for s in range(sol.policy_table.shape[0]):
            for j in range(sol.policy_table.shape[1]):
                fh.write(f"{s},{j},{int(sol.policy_table[s, j])},{float(sol.V_table[s])!r}\n")


def load_via_policy(path):
    """Returns (meta dict, policy array, value array) from a saved table."""
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    for piece in body.split() if "," not in body else [body]:
                        if "=" in piece:
                            k, v = piece.split("=", 1)
                            meta[k] = v
                continue
            if line.strip() and not line.startswith("state_index"):
                rows.append(line.strip().split(","))
    arr = np.array(rows, dtype=float)
    n_s = int(arr[:, 0].max()) + 1
    n_j = int(arr[:, 1].max()) + 1
    policy = np.zeros((n_s, n_j), dtype=np.int64)
    value = np.zeros(n_s)
    for s, j, a, v in arr:
        policy[int(s), int(j)] = int(a)
        value[int(s)] = v
    return meta, policy, value
