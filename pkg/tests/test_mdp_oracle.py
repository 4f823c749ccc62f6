import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import sparse, stats

from ncsim import mdp_oracle
from ncsim.channel import SigmaStarDistribution
from ncsim.config import SimConfig, build_model
from ncsim.episode import run_episode
from ncsim.errors import ConfigError
from ncsim.plant import DiscretePlant

from conftest import rng


def tiny_mdp(cost, kernels, tau=1.0):
    n_s = cost.shape[0]
    return mdp_oracle.DiscretizedMdp(
        L=1, delta_grids=[np.arange(n_s, dtype=float)], sigma_grids=[np.array([1.0])],
        sstar_nodes=np.array([1.0]), sstar_edges=np.array([0.0, np.inf]),
        beams=np.array([[1.0]]), cost=cost, kernels=kernels, tau=tau,
        F_bar=1.0, lam=1.0, state_shape=(n_s, 1))


class TestValueIterationCore:
    def test_single_state(self):
        cost = np.full((1, 1, 1), 2.5)
        kern = [[sparse.csr_matrix(np.array([[1.0]]))]]
        sol = mdp_oracle.relative_value_iteration(tiny_mdp(cost, kern, tau=0.5))
        assert sol.theta == pytest.approx(2.5 / 0.5, rel=1e-9)
        assert_allclose(sol.V_table, 0, atol=1e-9)

    def test_two_state_cycle(self):
        cost = np.zeros((2, 1, 1))
        cost[0, 0, 0] = 1.0
        cost[1, 0, 0] = 3.0
        kern = [[sparse.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))]]
        sol = mdp_oracle.relative_value_iteration(tiny_mdp(cost, kern), tol_scale=1e-10)
        assert sol.theta == pytest.approx(2.0, rel=1e-8)

    def test_picks_cheaper_action(self):
        cost = np.zeros((1, 1, 2))
        cost[0, 0, 0] = 5.0
        cost[0, 0, 1] = 1.0
        eye = sparse.csr_matrix(np.array([[1.0]]))
        sol = mdp_oracle.relative_value_iteration(tiny_mdp(cost, [[eye, eye]]))
        assert sol.theta == pytest.approx(1.0, rel=1e-9)
        assert sol.policy_table[0, 0] == 1


@pytest.fixture(scope="module")
def scalar_setup(scalar_desk_config):
    model = build_model(scalar_desk_config)
    mdp = mdp_oracle.build_scalar_mdp(
        model.disc, model.dist, model.S, scalar_desk_config.F_bar,
        scalar_desk_config.lam, n_delta=81, delta_max=3.0, n_sigma=49,
        sigma_max=30.0, n_sstar=16)
    return model, mdp


class TestScalarBuilder:
    def test_rows_sum_to_one(self, scalar_setup):
        _, mdp = scalar_setup
        mdp.validate()  # row sums within 1e-9 and costs finite/nonnegative

    def test_zero_noise_dormant_drift(self):
        # with vanishing noise the dormant successor is the cell holding A*delta
        disc = DiscretePlant(np.array([[1.2]]), np.eye(1), np.array([[1e-12]]), 0.1)
        dist = SigmaStarDistribution(1, 1)
        mdp = mdp_oracle.build_scalar_mdp(disc, dist, np.eye(1), 1.0, 1.0,
                                          n_delta=21, delta_max=2.0, n_sigma=3,
                                          sigma_max=1.0, n_sstar=2)
        dg = mdp.delta_grids[0]
        k = mdp.kernels[0][0]  # first node, dormant
        for idel in (3, 10, 15):
            s = idel * 3 + 1
            row = np.asarray(k[s].todense()).ravel()
            target_delta = 1.2 * dg[idel]
            expect_cell = np.argmin(np.abs(dg - target_delta))
            got = np.argmax(np.add.reduceat(row, np.arange(0, row.size, 3)))
            assert got == expect_cell

    def test_two_point_channel_hand_enumeration(self):
        # fixed channel nodes: kernel and cost recomputed independently
        disc = DiscretePlant(np.array([[1.1]]), np.eye(1), np.array([[0.3]]), 0.1)
        dist = SigmaStarDistribution(1, 1)
        f_bar, lam = 2.0, 1.0
        nodes = np.array([0.5, 2.0])
        mdp = mdp_oracle.build_scalar_mdp(disc, dist, np.eye(1), f_bar, lam,
                                          n_delta=9, delta_max=2.0, n_sigma=4,
                                          sigma_max=3.0, n_sstar=2,
                                          sstar_nodes=nodes)
        dg, sg = mdp.delta_grids[0], mdp.sigma_grids[0]
        edges = np.concatenate([[-np.inf], 0.5 * (dg[1:] + dg[:-1]), [np.inf]])
        for j, x in enumerate(nodes):
            for act in (0, 1):
                rho = 2.0 * f_bar * x if act else 0.0
                k = mdp.kernels[j][act]
                for idel in (0, 4, 7):
                    for isig in (0, 2):
                        s = idel * sg.size + isig
                        denom = 1.0 + rho * sg[isig]
                        mean = 1.1 * dg[idel] / denom
                        var = (0.3 + rho * sg[isig] ** 2) / denom ** 2
                        probs = np.diff(stats.norm.cdf(edges, loc=mean,
                                                       scale=np.sqrt(var)))
                        signext = 1.1 ** 2 * sg[isig] / denom + 0.3
                        isig_next = np.argmin(np.abs(sg - signext))
                        row = np.asarray(k[s].todense()).ravel()
                        expect = np.zeros_like(row)
                        expect[np.arange(dg.size) * sg.size + isig_next] = probs
                        assert_allclose(row, expect, atol=1e-12)
                        cost_expect = ((mean ** 2 + var) + lam * f_bar * act) * 0.1
                        assert mdp.cost[s, j, act] == pytest.approx(cost_expect, rel=1e-12)

    def test_one_step_monte_carlo_oracle(self, scalar_setup):
        # empirical one-step transition from a mid-grid state matches the
        # kernel row in total variation
        model, mdp = scalar_setup
        disc = model.disc
        g = rng(50)
        dg, sg = mdp.delta_grids[0], mdp.sigma_grids[0]
        idel, isig, j = 55, 20, 5
        s = idel * sg.size + isig
        x = mdp.sstar_nodes[j]
        rho = 2.0 * model.config.F_bar * x
        n_mc = 200_000
        denom = 1.0 + rho * sg[isig]
        mean = disc.A[0, 0] * dg[idel] / denom
        std = np.sqrt((disc.W[0, 0] + rho * sg[isig] ** 2)) / denom
        draws = mean + std * g.standard_normal(n_mc)
        cells = np.clip(np.searchsorted(0.5 * (dg[1:] + dg[:-1]), draws), 0, dg.size - 1)
        emp = np.bincount(cells, minlength=dg.size) / n_mc
        row = np.asarray(mdp.kernels[j][1][s].todense()).ravel()
        marg = np.add.reduceat(row, np.arange(0, row.size, sg.size))
        assert 0.5 * np.abs(emp - marg).sum() <= 0.01

    def test_memory_guard(self, scalar_setup):
        model, _ = scalar_setup
        with pytest.raises(ConfigError, match="MB"):
            mdp_oracle.build_scalar_mdp(model.disc, model.dist, model.S, 2.0,
                                        1.0, n_delta=4001, delta_max=3.0,
                                        n_sigma=801, sigma_max=20.0, n_sstar=32)


class TestScalarOracleEndToEnd:
    def test_theta_matches_simulated_policy(self, scalar_setup):
        model, mdp = scalar_setup
        sol = mdp_oracle.relative_value_iteration(mdp)
        table = mdp_oracle.OracleTable(mdp=mdp, policy=sol.policy_table)
        costs = []
        for i in range(4):
            m = run_episode(model, i, policy="oracle-via", table=table,
                            horizon=30_000, burn_in=3_000)
            costs.append(m.objective / model.config.tau)
        sim = float(np.mean(costs))
        assert abs(sim - sol.theta) / sol.theta <= 0.02

    def test_reference_state_invariance(self, scalar_setup):
        _, mdp = scalar_setup
        t1 = mdp_oracle.relative_value_iteration(mdp, ref_state=0).theta
        t2 = mdp_oracle.relative_value_iteration(mdp, ref_state=mdp.n_states - 1).theta
        assert abs(t1 - t2) / abs(t1) <= 1e-5

    def test_grid_refinement_converges(self, scalar_setup):
        model, _ = scalar_setup
        cfgv = model.config
        thetas = []
        for n_delta in (31, 61, 121):
            mdp = mdp_oracle.build_scalar_mdp(
                model.disc, model.dist, model.S, cfgv.F_bar, cfgv.lam,
                n_delta=n_delta, delta_max=3.0, n_sigma=49, sigma_max=30.0,
                n_sstar=16)
            thetas.append(mdp_oracle.relative_value_iteration(mdp).theta)
        changes = np.abs(np.diff(thetas)) / np.abs(thetas[:-1])
        assert changes[1] <= changes[0] + 1e-12
        assert changes[1] < 0.02

    def test_upset_check_runs(self, scalar_setup):
        # the transmit set should be (nearly) an up-set in |error|; ragged
        # cells at grid edges are counted and must stay a small fraction
        _, mdp = scalar_setup
        sol = mdp_oracle.relative_value_iteration(mdp)
        bad = mdp_oracle.transmit_upset_violations(mdp, sol.policy_table)
        n_lines = 2 * mdp.sstar_nodes.size * mdp.sigma_grids[0].size
        assert bad <= 0.05 * n_lines


class TestPlanarBuilder:
    def test_smoke_and_row_sums(self, ref_model):
        mdp = mdp_oracle.build_planar_mdp(
            ref_model.disc, ref_model.dist, ref_model.S, 2.0, 1500.0,
            n_delta=5, delta_max=6.0, n_sigma=3, sigma_max=4.0, n_sstar=4,
            n_beams=8, n_gh=4)
        mdp.validate()
        assert mdp.n_actions == 9

    def test_memory_guard(self, ref_model):
        with pytest.raises(ConfigError, match="MB"):
            mdp_oracle.build_planar_mdp(
                ref_model.disc, ref_model.dist, ref_model.S, 2.0, 1500.0,
                n_delta=41, delta_max=6.0, n_sigma=15, sigma_max=4.0,
                n_sstar=32, n_beams=16, n_gh=8)


class TestPerformanceLoss:
    def test_equal_costs(self):
        assert mdp_oracle.performance_loss(1.0, 1.0) == 0.0

    def test_percentage(self):
        assert mdp_oracle.performance_loss(1.1, 1.0) == pytest.approx(10.0)

    def test_nonpositive_denominator(self):
        with pytest.raises(ValueError):
            mdp_oracle.performance_loss(1.0, 0.0)


class TestBaselineTables:
    def test_efc_threshold_structure(self, ref_model):
        table = mdp_oracle.build_efc_table(ref_model.disc, ref_model.S,
                                           2.0, 30.0, state_max=12.0)
        # transmit set is an up-set in the error norm
        tx = table.transmit[:, 0]
        first = np.argmax(tx) if tx.any() else tx.size
        assert np.all(tx[first:])
        assert not table.decide(0.0, 1.0)

    def test_spsis_csi_adaptivity(self, ref_model):
        table = mdp_oracle.build_spsis_table(ref_model.disc, ref_model.dist,
                                             ref_model.S, 2.0, 30.0,
                                             state_max=12.0, sigma_ref=1.0)
        # better channels transmit from smaller errors on average
        firsts = []
        for j in range(table.transmit.shape[1]):
            col = table.transmit[:, j]
            firsts.append(np.argmax(col) if col.any() else col.size)
        assert firsts[-1] <= firsts[0]

    def test_persistence_roundtrip(self, scalar_setup, tmp_path):
        _, mdp = scalar_setup
        sol = mdp_oracle.relative_value_iteration(mdp)
        path = tmp_path / "table.csv"
        mdp_oracle.save_via_table(path, mdp, sol)
        meta, policy, value = mdp_oracle.load_via_policy(path)
        assert meta["L"] == "1"
        assert np.array_equal(policy, sol.policy_table)
        assert_allclose(value, sol.V_table, rtol=1e-12)
