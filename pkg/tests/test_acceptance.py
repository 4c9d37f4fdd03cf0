"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS/FAIL criterion k: ...`` line with the
measured figures before asserting.  Run with ``pytest -m acceptance -s`` to
see them inline; they also appear in the captured output of failures.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy import integrate, stats

from stochknap import dskp, exact, loss, saa, sim, sqrtpwl, sskp_lc, sskp_pwl
from stochknap import instances as I
from conftest import bed, brute, exact_objectives

pytestmark = pytest.mark.acceptance


@pytest.fixture
def report(capsys):
    def emit(k, ok, msg):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {msg}")
        return ok
    return emit


def _equal_opt(inst, x, xs, z, rel=1e-9):
    return np.array_equal(x, xs) or exact_objectives(inst, x)[1][0] >= z - rel * abs(z)


def test_01_loss_sandwich(report):
    y = np.linspace(-6, 6, 400)
    exact_G = stats.norm.pdf(y) - y * stats.norm.sf(y)
    # spot-check the closed form against quadrature
    for t in y[::40]:
        q = integrate.quad(lambda w: (w - t) * stats.norm.pdf(w), t, np.inf, epsabs=1e-14)[0]
        assert abs(q - (stats.norm.pdf(t) - t * stats.norm.sf(t))) <= 1e-12
    t0 = time.perf_counter()
    worst = -math.inf
    for W in (1, 2, 5, 14, 25, 41, 50, 100):
        lin = loss.minimax_partition(W)
        lb = loss.jensen_lb(lin, y)
        ub = loss.edmundson_madanski_ub(lin, y)
        worst = max(worst, float(np.max(lb - exact_G)), float(np.max(exact_G - ub)))
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 5
    report(1, ok, f"worst sandwich violation {worst:.3g} (tol 1e-8), {dt:.2f}s")
    assert ok


def test_02_slopes_and_amax(report):
    worst_A, worst_max = 0.0, 0.0
    for W in range(1, 129):
        lin = loss.minimax_partition(W)
        z = lin.boundaries
        A_ref = stats.norm.pdf(z[:-1])  # phi(-inf) = 0 for the first region
        worst_A = max(worst_A, float(np.max(np.abs(lin.A - A_ref))))
        if W % 2 == 0:
            worst_max = max(worst_max, abs(lin.A_max - 0.398942))
    ok = worst_A <= 1e-9 and worst_max <= 1e-6
    report(2, ok, f"max |A_i - phi(z_(i-1))| = {worst_A:.3g}, max |A_max - 0.398942| = {worst_max:.3g}")
    assert ok


def test_03_equal_probability_rate(report):
    Ws = np.arange(8, 129)
    e = np.array([loss.equal_probability_partition(int(W)).max_error for W in Ws])
    slope = float(np.polyfit(np.log(Ws), np.log(e), 1)[0])
    ok = -2.3 <= slope <= -1.7
    report(3, ok, f"log-log slope of the equal-probability max error = {slope:.3f} (target [-2.3, -1.7])")
    assert ok


def test_04_sqrt_deviation(report):
    worst = 0.0
    for s in (1.0, 0.1, 0.01):
        V = 50.0
        lo = sqrtpwl.build(V, s, "lower")
        hi = sqrtpwl.build(V, s, "upper")
        v = np.unique(np.concatenate([np.linspace(0, V, 200_001), lo.breakpoints[:-1] + s / 4]))
        r = np.sqrt(v)
        dev_lo = float(np.max(r - lo(v)))
        dev_hi = float(np.max(hi(v) - r))
        worst = max(worst, abs(dev_lo - math.sqrt(s) / 4), abs(dev_hi - math.sqrt(s) / 4))
        assert np.all(lo(v) <= r + 1e-12) and np.all(hi(v) >= r - 1e-12)
    ok = worst <= 1e-6
    report(4, ok, f"max |deviation - sqrt(s)/4| = {worst:.3g}")
    assert ok


def test_05_reference_reproduction(report):
    inst = I.reference_instance(0.1)
    V = sskp_pwl.variance_bound(inst)
    expected = {10.0: (5, 8), 1.0: (14, 620), 0.1: (41, 62023)}
    ok, parts = True, []
    for eps, (W_ref, Q_ref) in expected.items():
        t0 = time.perf_counter()
        b = loss.select_segments(eps, inst.c, V)
        res = sskp_pwl.solve_bracket(inst, lin=loss.minimax_partition(b.W), sqrt_step=b.step)
        dt = time.perf_counter() - t0
        good = b.Q == Q_ref and abs(b.segments - W_ref) <= 1 and res.upper - res.lower <= 2 * eps
        if eps >= 1:
            good &= dt < 120
        ok &= good
        parts.append(f"eps={eps:g}: W={b.segments} Q={b.Q} U-L={res.upper - res.lower:.4g} {dt:.1f}s")
    report(5, ok, "; ".join(parts))
    assert ok


def test_06_brute_force_independent(report):
    t0 = time.perf_counter()
    insts = bed(200, [8, 10, 12, 15], seed=11)
    contain = match = 0
    for inst in insts:
        x, z, _ = brute(inst)
        res = sskp_pwl.solve_bracket(inst, W=100)
        tol = 1e-6 * max(1.0, abs(z))
        contain += res.lower - tol <= z <= res.upper + tol
        xl = sskp_lc.selection(sskp_lc.solve_lc(inst), inst.n)
        match += exact_objectives(inst, xl)[1][0] >= z - 1e-4 * abs(z)
    dt = time.perf_counter() - t0
    ok = contain == match == len(insts) and dt < 900
    report(6, ok, f"bracket contains optimum {contain}/{len(insts)}, LC within 1e-4 {match}/{len(insts)}, "
           f"{dt:.0f}s")
    assert ok


def test_07_brute_force_mvn(report):
    t0 = time.perf_counter()
    insts = bed(50, [8, 10, 12], seed=12, rho=0.75) + bed(50, [8, 10, 12], seed=13, rho=0.95)
    contain = 0
    for inst in insts:
        _, z, _ = brute(inst)
        res = sskp_pwl.solve_bracket(inst, W=100)
        tol = 1e-6 * max(1.0, abs(z))
        contain += res.lower - tol <= z <= res.upper + tol
    dt = time.perf_counter() - t0
    ok = contain == len(insts) and dt < 900
    report(7, ok, f"MVN bracket contains optimum {contain}/{len(insts)}, {dt:.0f}s")
    assert ok


def test_08_normal_approximation(report):
    t0 = time.perf_counter()
    insts = []
    for dist, seed in (("gamma", 21), ("lognormal", 22)):
        insts += bed(30, [15, 25], seed=seed, distribution=dist)
    gaps = {"gamma": [], "lognormal": []}
    for k, inst in enumerate(insts):
        W_ref = sim.SampleStream(k, 2000, tag="acc8-ref").weights(inst)
        ref = sskp_lc.solve_lc(inst, sskp_lc.ShortfallOracle("monte-carlo", W_ref))
        x_ref = sskp_lc.selection(ref, inst.n)
        na = sskp_lc.normal_approx_heuristic(inst, sim_runs=1000, seed=k)
        W_ev = sim.SampleStream(k, 100_000, tag="acc8-eval").weights(inst)
        z_ref = sim.evaluate_static(x_ref, inst, W=W_ev).mean
        z_na = sim.evaluate_static(na.x, inst, W=W_ev).mean
        gaps[inst.distribution].append((z_ref - z_na) / abs(z_ref))
    dt = time.perf_counter() - t0
    means = {d: float(np.mean(g)) for d, g in gaps.items()}
    q95 = {d: float(np.quantile(g, 0.95)) for d, g in gaps.items()}
    overall = float(np.mean(gaps["gamma"] + gaps["lognormal"]))
    ok = max(means.values()) <= 5e-3 and dt < 1800
    report(8, ok, f"mean gap gamma {100 * means['gamma']:.3f}% (q95 {100 * q95['gamma']:.3f}%), "
           f"lognormal {100 * means['lognormal']:.3f}% (q95 {100 * q95['lognormal']:.3f}%), "
           f"overall {100 * overall:.3f}%, {dt:.0f}s")
    assert ok


def test_09_gradient(report):
    rng = np.random.default_rng(9)
    worst = 0.0
    h = 1e-5
    for k in range(100):
        inst = bed(1, [10], seed=100 + k, rho=0.5 if k % 2 else None)[0]
        orc = sskp_lc.make_oracle(inst)
        x = rng.uniform(0.05, 0.95, inst.n)
        _, g = sskp_lc.shortfall_and_subgradient(orc, x, inst)
        fd = np.array([(sskp_lc.shortfall_and_subgradient(orc, x + h * e, inst)[0]
                        - sskp_lc.shortfall_and_subgradient(orc, x - h * e, inst)[0]) / (2 * h)
                       for e in np.eye(inst.n)])
        worst = max(worst, float(np.max(np.abs(fd - g) / np.maximum(np.abs(g), 1e-3))))
    ok = worst <= 1e-4
    report(9, ok, f"max relative gradient error {worst:.3g} over 100 points")
    assert ok


def test_10_saa(report):
    t0 = time.perf_counter()
    insts = bed(100, [8, 10, 12], seed=31)
    cfg = saa.SaaConfig(N_cap=2048, M_max=40)
    hits, low, certified = 0, [], 0
    for k, inst in enumerate(insts):
        x, z, _ = brute(inst)
        res = saa.saa_solve(inst, cfg, seed=k)
        hits += res.x is not None and _equal_opt(inst, res.x, x, z)
        certified += res.certified
        # summation-order rounding allowance for zero-variance cases
        if res.certified and res.gap < -res.gap_se - 1e-12 * abs(res.value):
            low.append((k, res.gap / res.gap_se))
    dt = time.perf_counter() - t0
    ok = hits >= 90 and not low
    detail = ", ".join(f"#{k} z={zs:.2f}" for k, zs in low)
    report(10, ok, f"incumbent optimal {hits}/100, certified {certified}/100, "
           f"certified gap >= -1 SE {certified - len(low)}/{certified}"
           f"{' (below: ' + detail + ')' if low else ''}, {dt:.0f}s")
    assert ok


def _tree_value(inst):
    n = inst.n
    nodes = [h for k in range(n) for h in itertools.product((0, 1), repeat=k)]
    node_id = {h: j for j, h in enumerate(nodes)}
    paths = list(itertools.product((0, 1), repeat=n))
    pm = np.array([np.prod([inst.probs[i, o] for i, o in enumerate(p)]) for p in paths])
    D = np.array(list(itertools.product((0, 1), repeat=len(nodes))), dtype=bool)
    prof = np.zeros((len(D), len(paths)))
    for j, p in enumerate(paths):
        q = np.full(len(D), inst.capacity)
        val = np.zeros(len(D))
        for i in range(n):
            take = D[:, node_id[p[:i]]]
            val += take * inst.values[i]
            q -= take * inst.support[i, p[i]]
        prof[:, j] = val + inst.c * np.minimum(q, 0.0)
    return float((prof @ pm).max())


def test_11_dskp_oracle(report):
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(20):
        n = 4
        sup = np.sort(rng.uniform(1, 8, size=(n, 2)), axis=1)
        p1 = rng.uniform(0.2, 0.8, n)
        prob = np.c_[p1, 1 - p1]
        inst = I.Instance(rng.uniform(1, 8, n), (sup * prob).sum(axis=1), np.zeros(n),
                          float(rng.uniform(5, 15)), distribution="discrete", support=sup, probs=prob)
        worst = max(worst, abs(dskp.sdp_solve(inst).value - _tree_value(inst)))
    drift = 0.0
    for inst in bed(10, [8, 10], cvs=(0.1, 0.2, 0.3), seed=41):
        v = [dskp.sdp_solve(inst, grid_step=inst.capacity / g).value for g in (400, 800, 1600)]
        drift = max(drift, max(abs(v[j + 1] - v[j]) / abs(v[j + 1]) for j in range(2)))
    ok = worst <= 1e-9 and drift < 5e-3
    report(11, ok, f"max |SDP - tree enumeration| = {worst:.3g}, max refinement drift {100 * drift:.3f}%")
    assert ok


def _paired(a, b):
    d = np.concatenate(a) - np.concatenate(b)
    return float(d.mean()), float(d.std(ddof=1) / math.sqrt(len(d)))


def test_12_receding_horizon(report):
    t0 = time.perf_counter()
    paths = 100
    out = {}
    for label, kw in (("independent", {}), ("banded", {"rho": 0.75, "corr": "banded"})):
        insts = bed(30, [10], cvs=(0.2,), seed=51, R=10.0, **kw)
        gaps, rh_s, st_s, ic_s = [], [], [], []
        for k, inst in enumerate(insts):
            W = sim.SampleStream(k, paths, tag="acc12").weights(inst)
            pol = dskp.sdp_solve(inst)
            v_sdp = sim.evaluate_policy(pol, inst, W=W, keep=True)
            rh = sim.evaluate_policy(dskp.RecedingHorizon(inst, "lc", seed=k), inst, W=W, keep=True)
            x = sskp_lc.selection(sskp_lc.solve_lc(inst), inst.n)
            st = sim.evaluate_policy(sim.static_policy(x), inst, W=W, keep=True)
            gaps.append((v_sdp.mean - rh.mean) / abs(v_sdp.mean))
            rh_s.append(rh.samples)
            st_s.append(st.samples)
            if inst.cov is not None:
                ic = sim.evaluate_policy(dskp.RecedingHorizon(inst, "lc", ignore_correlation=True, seed=k),
                                         inst, W=W, keep=True)
                ic_s.append(ic.samples)
        out[label] = (float(np.mean(gaps)), _paired(rh_s, st_s), _paired(rh_s, ic_s) if ic_s else None)
    dt = time.perf_counter() - t0
    g_ind, (d_st_i, se_st_i), _ = out["independent"]
    g_ban, (d_st_b, se_st_b), (d_ic, se_ic) = out["banded"]
    ok = (g_ind <= 0.05 and g_ban <= 0.08 and d_st_i >= -2 * se_st_i and d_st_b >= -2 * se_st_b
          and d_ic >= -2 * se_ic)
    report(12, ok, f"RH gap vs SDP independent {100 * g_ind:.2f}%, banded {100 * g_ban:.2f}%; "
           f"RH-static {d_st_i:.4g} (SE {se_st_i:.2g}) / {d_st_b:.4g} (SE {se_st_b:.2g}); "
           f"RH-(RH-IC) {d_ic:.4g} (SE {se_ic:.2g}); {dt:.0f}s")
    assert ok


def _fingerprint(inst, k):
    out = []
    res = sskp_pwl.solve_bracket(inst, sim_runs=2000, seed=k)
    out += [res.upper, res.lower, res.x.tobytes(), res.nodes]
    lc = sskp_lc.solve_lc(inst)
    out += [lc.objective, lc.bound, lc.x.tobytes(), lc.nodes, lc.cuts]
    mc = sskp_lc.solve_lc(inst, sskp_lc.make_oracle(inst, "monte-carlo", 500, seed=k))
    out += [mc.objective, mc.x.tobytes()]
    s = saa.saa_solve(inst, saa.SaaConfig(N_cap=128, M_max=6, warmup=3, N_eval=2000), seed=k)
    out += [s.x.tobytes(), s.gap, s.gap_se, s.v_bar, s.N]
    rep = sim.evaluate_static(res.x, inst, sim.SampleStream(k, 5000))
    out += [rep.mean, rep.se]
    if inst.cov is None:
        pol = dskp.sdp_solve(inst, grid_step=inst.capacity / 100)
        out += [pol.value]
    rh = sim.evaluate_policy(dskp.RecedingHorizon(inst, "lc", seed=k), inst, sim.SampleStream(k, 5))
    out += [rh.mean]
    return out


def test_13_determinism(report):
    insts = bed(15, [6, 8], seed=61) + bed(5, [6], seed=62, rho=0.5)
    same = sum(_fingerprint(inst, k) == _fingerprint(inst, k) for k, inst in enumerate(insts))
    ok = same == len(insts)
    report(13, ok, f"bit-identical duplicate runs on {same}/{len(insts)} instances")
    assert ok
