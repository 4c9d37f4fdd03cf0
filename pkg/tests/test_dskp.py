import itertools
import math

import numpy as np
import pytest
from scipy import stats

from stochknap import dskp, exact, sim
from stochknap import instances as I
from conftest import bed


def _spd(n, seed=0):
    A = np.random.default_rng(seed).normal(size=(n, n))
    return A @ A.T + n * np.eye(n)


class TestConditionalUpdate:
    def test_no_cross_covariance(self):
        S = np.zeros((4, 4))
        S[:2, :2] = _spd(2, 1)
        S[2:, 2:] = _spd(2, 2)
        mu = np.arange(4.0)
        b, m, C = dskp.conditional_update(mu, S, [(0, 7.0), (1, -3.0)])
        assert b.tolist() == [2, 3]
        assert np.allclose(m, mu[2:]) and np.allclose(C, S[2:, 2:])

    def test_bivariate_formula(self):
        s1, s2, r = 2.0, 3.0, 0.6
        S = np.array([[s1 ** 2, r * s1 * s2], [r * s1 * s2, s2 ** 2]])
        _, m, C = dskp.conditional_update([10.0, 20.0], S, [(0, 13.0)])
        assert m[0] == pytest.approx(20.0 + r * s2 / s1 * 3.0, rel=1e-9)
        assert C[0, 0] == pytest.approx(s2 ** 2 * (1 - r * r), rel=1e-9)

    def test_against_precision_matrix(self):
        S = _spd(6, 3)
        mu = np.linspace(1, 6, 6)
        obs = [(1, 0.5), (4, 9.0)]
        b, m, C = dskp.conditional_update(mu, S, obs)
        P = np.linalg.inv(S)
        a = np.array([i for i, _ in obs])
        Pbb = P[np.ix_(b, b)]
        xa = np.array([v for _, v in obs])
        m_ref = mu[b] - np.linalg.solve(Pbb, P[np.ix_(b, a)] @ (xa - mu[a]))
        assert np.allclose(m, m_ref, rtol=1e-8)
        assert np.allclose(C, np.linalg.inv(Pbb), rtol=1e-8)

    def test_regression_on_samples(self):
        S = _spd(3, 4)
        rng = np.random.default_rng(0)
        X = rng.multivariate_normal(np.zeros(3), S, size=400_000)
        beta = np.linalg.lstsq(np.c_[np.ones(len(X)), X[:, :2]], X[:, 2], rcond=None)[0]
        _, m, _ = dskp.conditional_update(np.zeros(3), S, [(0, 1.0), (1, -1.0)])
        assert m[0] == pytest.approx(beta[0] + beta[1] - beta[2], abs=0.02)

    def test_banded_markov_property(self):
        n, r = 6, 0.75
        s = np.linspace(1, 3, n)
        k = np.arange(n)
        S = np.outer(s, s) * r ** np.abs(k[:, None] - k[None, :])
        mu = np.full(n, 10.0)
        hist = [(0, 12.0), (1, 8.0), (2, 11.0)]
        _, m_all, C_all = dskp.conditional_update(mu, S, hist)
        _, m_last, C_last = dskp.conditional_update(mu, S, hist[-1:])
        assert np.allclose(m_all, m_last[2:]) and np.allclose(C_all, C_last[2:, 2:])

    def test_singular_block(self):
        S = np.ones((3, 3))
        with pytest.raises(ValueError):
            dskp.conditional_update(np.zeros(3), -S, [(0, 1.0), (1, 1.0)])


def test_single_item():
    inst = I.Instance([3.0], [100.0], [15.0], 100.0)
    pol = dskp.sdp_solve(inst)
    w, p = pol.points[0]
    disc = 3.0 + inst.c * np.dot(p, np.minimum(100.0 - w, 0.0))
    assert pol.value == pytest.approx(max(0.0, disc), abs=1e-9)
    closed = 3.0 - inst.c * exact.shortfall(inst, [1.0])[0]
    assert pol.value == pytest.approx(max(0.0, closed), abs=0.05 * 15.0)


def test_deterministic_weights_give_knapsack_optimum():
    inst = I.Instance([10.0, 9.0, 8.0, 2.0, 6.0], [5.0, 4.0, 3.0, 1.0, 2.5], [0.0] * 5, 8.5)
    pol = dskp.sdp_solve(inst)
    X = exact.all_subsets(5)
    det = X @ inst.values - inst.c * np.maximum(X @ inst.mu - inst.capacity, 0.0)
    assert pol.mode == "exact" and pol.value == pytest.approx(det.max(), abs=1e-12)


def test_exhaustive_policy_enumeration():
    # two-point weights; a policy maps each weight history to take/skip
    rng = np.random.default_rng(5)
    n = 4
    sup = np.sort(rng.uniform(1, 6, size=(n, 2)), axis=1)
    prob = np.c_[np.full(n, 0.3), np.full(n, 0.7)]
    mu = (sup * prob).sum(axis=1)
    inst = I.Instance(rng.uniform(2, 6, n), mu, np.zeros(n), 7.0, distribution="discrete",
                      support=sup, probs=prob)
    pol = dskp.sdp_solve(inst)
    nodes = [h for k in range(n) for h in itertools.product((0, 1), repeat=k)]
    node_id = {h: j for j, h in enumerate(nodes)}
    paths = list(itertools.product((0, 1), repeat=n))
    pmass = np.array([np.prod([prob[i, o] for i, o in enumerate(pth)]) for pth in paths])
    D = np.array(list(itertools.product((0, 1), repeat=len(nodes))), dtype=bool)
    assert len(D) == 32768
    profit = np.zeros((len(D), len(paths)))
    for j, pth in enumerate(paths):
        q = np.full(len(D), inst.capacity)
        val = np.zeros(len(D))
        for i in range(n):
            take = D[:, node_id[pth[:i]]]
            val += take * inst.values[i]
            q -= take * sup[i, pth[i]]
        profit[:, j] = val + inst.c * np.minimum(q, 0.0)
    best = (profit @ pmass).max()
    assert pol.value == pytest.approx(best, abs=1e-9)


def test_monotone_in_capacity_and_refinement():
    for inst in bed(6, [8], cvs=(0.2,)):
        vals = [dskp.sdp_solve(inst.with_capacity(C)).value
                for C in inst.capacity * np.array([0.6, 0.8, 1.0, 1.2])]
        assert np.all(np.diff(vals) >= -1e-6 * abs(vals[-1]))
        coarse = dskp.sdp_solve(inst).value
        fine = dskp.sdp_solve(inst, grid_step=inst.capacity / 1600).value
        assert abs(fine - coarse) <= 5e-3 * abs(fine)


def test_banded_with_zero_correlation_matches_independent():
    inst = bed(1, [6], cvs=(0.2,))[0]
    cov = np.diag(inst.sigma ** 2)
    corr = I.Instance(inst.values, inst.mu, inst.sigma, inst.capacity,
                      distribution="multivariate-normal", cov=cov)
    a, b = dskp.sdp_solve(inst), dskp.sdp_solve(corr, z_points=9)
    assert b.mode == "banded" and a.mode == "grid"
    assert b.value == pytest.approx(a.value, rel=1e-9)


def test_banded_policy_value_matches_simulation():
    inst = bed(1, [8], cvs=(0.2,), rho=0.75, corr="banded")[0]
    pol = dskp.sdp_solve(inst)
    assert pol.mode == "banded" and pol.rho == pytest.approx(0.75)
    rep = sim.evaluate_policy(pol, inst, sim.SampleStream(1, 1000))
    assert abs(rep.mean - pol.value) <= 3 * rep.se + 0.01 * abs(pol.value)


def test_independent_policy_value_matches_simulation():
    inst = bed(2, [10], cvs=(0.3,))[1]
    pol = dskp.sdp_solve(inst)
    rep = sim.evaluate_policy(pol, inst, sim.SampleStream(2, 4000))
    assert abs(rep.mean - pol.value) <= 3 * rep.se + 0.01 * abs(pol.value)


def test_rejects_general_correlation_and_caps():
    inst = bed(1, [6], rho=0.5)[0]
    with pytest.raises(ValueError):
        dskp.sdp_solve(inst)
    with pytest.raises(ValueError):
        dskp.sdp_solve(bed(1, [6])[0], state_cap=100)


def test_dump_csv(tmp_path):
    inst = bed(1, [3])[0]
    pol = dskp.sdp_solve(inst, grid_step=inst.capacity / 20)
    path = tmp_path / "d.csv"
    pol.dump_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "item,capacity,value,decision"
    assert len(rows) == 1 + 3 * len(pol.q_grid)


class TestRecedingHorizon:
    def test_single_item_agrees_with_dp(self):
        for v in (1.0, 3.0, 10.0):
            inst = I.Instance([v], [100.0], [15.0], 100.0)
            rh = dskp.RecedingHorizon(inst, "lc", rel_tol=1e-9)
            pol = dskp.sdp_solve(inst)
            st = sim.PathState(0, 100.0, ())
            q = exact.shortfall(inst, [1.0])[0]
            assert rh(st) == (v > inst.c * q)
            if abs(v - inst.c * q) > 0.5:
                assert rh(st) == pol(st)

    def test_ample_capacity_takes_positive_items(self):
        inst = I.Instance([5.0, -1.0, 2.0, 0.5], [1.0, 1.0, 1.0, 1.0], [0.1] * 4, 100.0)
        profit, x, degraded = dskp.receding_horizon(inst, "pwl")
        assert x.tolist() == [1.0, 0.0, 1.0, 1.0] and degraded == 0

    def test_overfull_state_rule(self):
        inst = I.Instance([15.0, 5.0], [1.0, 1.0], [0.1, 0.1], 1.0)
        rh = dskp.RecedingHorizon(inst)
        assert rh(sim.PathState(1, -0.5, (1.5,))) is False
        assert dskp.RecedingHorizon(I.Instance([15.0, 15.0], [1.0, 1.0], [0.1, 0.1], 1.0))(
            sim.PathState(1, -0.5, (1.5,))) is True

    def test_uses_conditional_law(self):
        inst = bed(1, [6], rho=0.75, corr="banded")[0]
        st = sim.PathState(2, inst.capacity * 0.5, tuple(inst.mu[:2] + 2 * inst.sigma[:2]))
        mu_c, S_c = dskp.RecedingHorizon(inst).conditional_law(st)
        assert np.all(mu_c > inst.mu[2:]) and S_c[0, 0] < inst.sigma[2] ** 2
        mu_i, S_i = dskp.RecedingHorizon(inst, ignore_correlation=True).conditional_law(st)
        assert np.array_equal(mu_i, inst.mu[2:]) and S_i is None

    def test_not_worse_than_static(self):
        insts = bed(3, [8], cvs=(0.3,))
        for inst in insts:
            W = sim.SampleStream(3, 60).weights(inst)
            rh = sim.evaluate_policy(dskp.RecedingHorizon(inst, "lc"), inst, W=W, keep=True)
            x, _, _ = exact.brute_force(inst)
            st = sim.evaluate_policy(sim.static_policy(x), inst, W=W, keep=True)
            d = rh.samples - st.samples
            assert d.mean() >= -2 * d.std(ddof=1) / math.sqrt(len(d))

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            dskp.RecedingHorizon(bed(1, [4])[0], "magic")
        with pytest.raises(ValueError):
            dskp.RecedingHorizon(bed(1, [4])[0], "pwl-mvn")
