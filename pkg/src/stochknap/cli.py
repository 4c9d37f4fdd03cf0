"""Command-line harness: gen, solve, eval, bench and report."""

from __future__ import annotations

import argparse
import csv
import glob
import math
import os
import sys
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dskp, loss, saa, sim, sskp_lc, sskp_pwl
from .instances import TYPES, Instance, generate_grid, reference_instance

METHODS = ("pwl", "pwl-mvn", "lc", "lc-mc", "saa", "normal-approx", "sdp", "rh", "rh-ic", "static-eval")
COLUMNS = ("instance_id", "method", "params", "objective", "bound", "gap", "sim_mean", "sim_se",
           "status", "time_s", "nodes", "cuts", "x")
META = ("type", "R", "cv", "rho", "corr", "h", "H", "seed", "index", "n")
HEADER = COLUMNS + META


class UsageError(Exception):
    pass


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else format(float(v), ".12g")
    return str(v)


def xstr(x) -> str:
    return "" if x is None else "".join(str(int(round(v))) for v in x)


def workers() -> int:
    try:
        return max(1, int(os.environ.get("STOCHKNAP_WORKERS", "1")))
    except ValueError:
        return 1


# -- per-instance runs -----------------------------------------------------------------


def run_method(inst: Instance, method: str, opts: dict) -> dict:
    """One solve; returns a CSV row dict (without metadata)."""
    W, step = opts.get("W", sskp_pwl.DEFAULT_W), opts.get("sqrt_step", sskp_pwl.DEFAULT_STEP)
    rel, tl = opts.get("rel_tol", 1e-4), opts.get("time_limit", 600.0)
    seed = opts.get("seed", 0)
    runs = opts.get("sim_runs") or (sim.POLICY_RUNS if method in ("sdp", "rh", "rh-ic", "static-eval")
                                    else sim.STATIC_RUNS)
    row = {"instance_id": inst.id, "method": method}
    t0 = time.perf_counter()
    params = {}
    if method in ("pwl", "pwl-mvn", "normal-approx"):
        if method == "normal-approx":
            res = sskp_lc.normal_approx_heuristic(inst, W, step, rel, tl, runs, seed)
        else:
            if (method == "pwl-mvn") != (inst.cov is not None):
                raise UsageError(f"{method} does not match the instance's weight law")
            res = sskp_pwl.solve_bracket(inst, W, step, rel, tl, runs, seed)
        params = {"W": W, "sqrt_step": step}
        rep = (res.simulated or {}).get("true")
        if rep is None and res.x is not None:
            rep = sim.evaluate_static(res.x, inst, sim.SampleStream(seed, runs))
        row.update(objective=res.lower, bound=res.upper, gap=res.gap, status=res.status,
                   nodes=res.nodes, cuts=res.cuts, x=xstr(res.x))
    elif method in ("lc", "lc-mc"):
        mode = "monte-carlo" if method == "lc-mc" else None
        orc = sskp_lc.make_oracle(inst, mode, opts.get("mc_runs", sskp_lc.MC_RUNS), seed)
        sol = sskp_lc.solve_lc(inst, orc, rel, tl)
        x = sskp_lc.selection(sol, inst.n)
        params = {"mc_runs": orc.replications} if mode else {}
        rep = None if x is None else sim.evaluate_static(x, inst, sim.SampleStream(seed, runs))
        row.update(objective=sol.objective, bound=sol.bound, gap=sol.gap, status=sol.status,
                   nodes=sol.nodes, cuts=sol.cuts, x=xstr(x))
    elif method == "saa":
        cfg = saa.SaaConfig(T_lim=tl, N_cap=opts.get("N_cap"), M_max=opts.get("M_max", 1000))
        res = saa.saa_solve(inst, cfg, seed)
        params = {"N": res.N, "replications": res.replications, "phase0": res.phase0.status}
        rep = None
        row.update(objective=res.value, bound=res.v_bar, gap=res.gap, sim_se=res.gap_se,
                   status="certified" if res.certified else "uncertified", x=xstr(res.x))
    elif method == "sdp":
        pol = dskp.sdp_solve(inst)
        rep = sim.evaluate_policy(pol, inst, sim.SampleStream(seed, runs, tag="policy"))
        row.update(objective=pol.value, status="optimal")
    elif method in ("rh", "rh-ic"):
        stage = opts.get("single_stage") or ("pwl-mvn" if inst.cov is not None else "pwl")
        if method == "rh-ic" and stage == "pwl-mvn":
            stage = "pwl"
        pol = dskp.RecedingHorizon(inst, stage, method == "rh-ic", W=W, sqrt_step=step, rel_tol=rel,
                                   time_limit=tl, seed=seed)
        rep = sim.evaluate_policy(pol, inst, sim.SampleStream(seed, runs, tag="policy"))
        params = {"single_stage": stage}
        row.update(objective=rep.mean, status="degraded" if pol.degraded or rep.failures else "ok")
    elif method == "static-eval":
        x = opts.get("x")
        if x is None:
            x = sskp_lc.selection(sskp_lc.solve_lc(inst, None, rel, tl), inst.n)
        rep = sim.evaluate_policy(sim.static_policy(x), inst, sim.SampleStream(seed, runs, tag="policy"))
        row.update(objective=rep.mean, status="ok", x=xstr(x))
    else:
        raise UsageError(f"unknown method {method!r}")
    if rep is not None:
        row.update(sim_mean=rep.mean, sim_se=rep.se)
    params.update(rel_tol=rel, seed=seed, sim_runs=runs)
    row["params"] = ";".join(f"{k}={fmt(v)}" for k, v in params.items())
    row["time_s"] = time.perf_counter() - t0
    return row


def _row(inst: Instance, method: str, opts: dict) -> dict:
    try:
        row = run_method(inst, method, opts)
    except UsageError:
        raise
    except Exception as exc:  # recorded, the sweep continues
        row = {"instance_id": inst.id, "method": method, "status": f"error: {exc}"}
    md = inst.metadata
    row.update({k: md.get(k) for k in META})
    row["n"] = inst.n
    return row


def _job(args):
    return _row(*args)


def run_rows(jobs):
    nw = workers()
    if nw == 1 or len(jobs) < 2:
        return [_row(*j) for j in jobs]
    with ProcessPoolExecutor(nw) as ex:
        return list(ex.map(_job, jobs))


def write_csv(rows, path=None):
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(HEADER)
        for r in rows:
            wr.writerow([fmt(r.get(k)) for k in HEADER])
    finally:
        if path:
            fh.close()


# -- subcommands -----------------------------------------------------------------------


def _floats(s):
    return [float(v) for v in s.split(",") if v]


def _ints(s):
    return [int(v) for v in s.split(",") if v]


def load_instances(patterns) -> list[Instance]:
    files = []
    for p in patterns:
        hits = sorted(glob.glob(os.path.join(p, "*.json"))) if os.path.isdir(p) else sorted(glob.glob(p))
        if not hits:
            raise UsageError(f"no instance files match {p!r}")
        files += hits
    out = []
    for f in files:
        try:
            out.append(Instance.load(f))
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise UsageError(f"{f}: {exc}") from exc
    return out


def cmd_gen(a):
    types = a.types.split(",")
    bad = [t for t in types if t not in TYPES]
    if bad:
        raise UsageError(f"unknown types {bad}")
    insts = generate_grid(types, _ints(a.n), _floats(a.cv), a.H, a.seed, a.R, a.rho, a.corr,
                          a.distribution)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for inst in insts:
        inst.save(out / f"{inst.id}.json")
    print(f"wrote {len(insts)} instances to {out}")
    return 0


def _opts(a) -> dict:
    return {"W": a.W, "sqrt_step": a.sqrt_step, "rel_tol": a.rel_tol, "time_limit": a.time_limit,
            "sim_runs": a.sim_runs, "seed": a.seed}


def cmd_solve(a):
    insts = load_instances(a.instances)
    opts = _opts(a)
    if a.single_stage:
        opts["single_stage"] = a.single_stage
    rows = run_rows([(inst, a.method, opts) for inst in insts])
    write_csv(rows, a.out)
    return 0


def cmd_eval(a):
    insts = load_instances([a.instance])
    inst = insts[0]
    runs = a.sim_runs or sim.STATIC_RUNS
    if a.x:
        x = np.array([int(ch) for ch in a.x], dtype=float)
        if len(x) != inst.n:
            raise UsageError("selection length differs from the instance size")
        rep = sim.evaluate_static(x, inst, sim.SampleStream(a.seed, runs))
        row = {"instance_id": inst.id, "method": "static-eval", "objective": rep.mean,
               "sim_mean": rep.mean, "sim_se": rep.se, "status": "ok", "x": a.x}
        row.update({k: inst.metadata.get(k) for k in META})
        write_csv([row], a.out)
        return 0
    method = a.policy or "sdp"
    write_csv([_row(inst, method, _opts(a))], a.out)
    return 0


def bench_reference() -> tuple[list, bool]:
    """Segment selection and bracket gaps on the ten-item reference instance."""
    expected = {10.0: (5, 8), 1.0: (14, 620), 0.1: (41, 62023)}
    rows, ok = [], True
    inst = reference_instance(0.1)
    V = sskp_pwl.variance_bound(inst)
    for eps, (W_ref, Q_ref) in expected.items():
        t0 = time.perf_counter()
        b = loss.select_segments(eps, inst.c, V)
        res = sskp_pwl.solve_bracket(inst, lin=loss.minimax_partition(b.W), sqrt_step=b.step)
        good = b.Q == Q_ref and abs(b.segments - W_ref) <= 1 and res.upper - res.lower <= 2 * eps
        ok &= good
        print(f"reference eps={eps:g}: W={b.segments} Q={b.Q} U-L={res.upper - res.lower:.4g} "
              f"{'PASS' if good else 'FAIL'}")
        row = {"instance_id": inst.id, "method": "pwl", "objective": res.lower, "bound": res.upper,
               "gap": res.gap, "status": res.status, "nodes": res.nodes, "cuts": res.cuts,
               "x": xstr(res.x), "time_s": time.perf_counter() - t0,
               "params": f"epsilon={eps:g};W={b.segments};Q={b.Q}"}
        row.update({k: inst.metadata.get(k) for k in META})
        row["n"] = inst.n
        rows.append(row)
    return rows, ok


def cmd_bench(a):
    if a.suite in ("reference", "appendix-d"):
        rows, ok = bench_reference()
        write_csv(rows, a.out)
        return 0 if ok else 1
    opts = _opts(a)
    if a.suite == "desk":
        insts = generate_grid(TYPES, _ints(a.n or "10,15,25"), _floats(a.cv or "0.1,0.2,0.3"), H=a.H,
                              seed=a.seed)
        methods = a.methods.split(",") if a.methods else ["pwl", "lc"]
    elif a.suite == "micro":
        insts = [inst for rho in (None, 0.75) for inst in
                 generate_grid(TYPES, [10], [0.2], H=a.H, seed=a.seed, R=10.0, rho=rho, corr="banded")]
        methods = a.methods.split(",") if a.methods else ["sdp", "rh", "rh-ic", "static-eval"]
        opts.setdefault("single_stage", "lc")
    else:
        raise UsageError(f"unknown suite {a.suite!r}")
    jobs = [(inst, m, opts) for inst in insts for m in methods
            if not (m == "rh-ic" and inst.cov is None) and not (m == "pwl" and inst.cov is not None)]
    write_csv(run_rows(jobs), a.out)
    return 0


def _num(v):
    try:
        f = float(v)
        return f if math.isfinite(f) else None
    except (TypeError, ValueError):
        return None


def cmd_report(a):
    keys = ["method"] + a.by.split(",")
    groups = defaultdict(list)
    total = 0
    for path in a.input:
        try:
            with open(path, newline="") as fh:
                rd = csv.DictReader(fh)
                missing = [k for k in keys if k not in (rd.fieldnames or [])]
                if missing:
                    raise UsageError(f"{path}: missing columns {missing}")
                for r in rd:
                    groups[tuple(r[k] for k in keys)].append(r)
                    total += 1
        except OSError as exc:
            raise UsageError(str(exc)) from exc
    out = []
    for g in sorted(groups):
        rs = groups[g]
        rec = dict(zip(keys, g))
        rec["count"] = len(rs)
        rec["errors"] = sum(r["status"].startswith("error") for r in rs)
        for col in ("objective", "gap", "sim_mean", "time_s", "nodes"):
            vals = [v for v in (_num(r.get(col)) for r in rs) if v is not None]
            rec[f"mean_{col}"] = float(np.mean(vals)) if vals else None
        out.append(rec)
    assert sum(r["count"] for r in out) == total
    fields = keys + ["count", "errors"] + [f"mean_{c}" for c in ("objective", "gap", "sim_mean", "time_s", "nodes")]
    fh = open(a.out, "w", newline="") if a.out else sys.stdout
    try:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(fields)
        for r in out:
            wr.writerow([fmt(r.get(k)) for k in fields])
    finally:
        if a.out:
            fh.close()
    return 0


# -- parser ----------------------------------------------------------------------------


def _common(p):
    p.add_argument("--W", type=int, default=sskp_pwl.DEFAULT_W, help="loss linearisation regions")
    p.add_argument("--sqrt-step", type=float, default=sskp_pwl.DEFAULT_STEP)
    p.add_argument("--rel-tol", type=float, default=1e-4)
    p.add_argument("--time-limit", type=float, default=600.0)
    p.add_argument("--sim-runs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output CSV (stdout if omitted)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochknap", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write generated instances as JSON")
    g.add_argument("--types", default=",".join(TYPES))
    g.add_argument("--n", default="10,15,25")
    g.add_argument("--cv", default="0.1,0.2,0.3")
    g.add_argument("--H", type=int, default=10)
    g.add_argument("--R", type=float, default=100.0)
    g.add_argument("--rho", type=float, default=None)
    g.add_argument("--corr", choices=("constant", "banded"), default="constant")
    g.add_argument("--distribution", choices=("normal", "gamma", "lognormal"), default="normal")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(fn=cmd_gen)

    s = sub.add_parser("solve", help="solve instances with one method")
    s.add_argument("instances", nargs="+", help="JSON files, globs or directories")
    s.add_argument("--method", choices=METHODS, required=True)
    s.add_argument("--single-stage", choices=dskp.SINGLE_STAGE, default=None)
    _common(s)
    s.set_defaults(fn=cmd_solve)

    e = sub.add_parser("eval", help="simulate a stored selection or a policy")
    e.add_argument("instance")
    e.add_argument("--x", default=None, help="selection as a 0/1 string")
    e.add_argument("--policy", choices=("sdp", "rh", "rh-ic"), default=None)
    _common(e)
    e.set_defaults(fn=cmd_eval)

    b = sub.add_parser("bench", help="seeded benchmark sweeps")
    b.add_argument("--suite", choices=("reference", "appendix-d", "desk", "micro"), required=True)
    b.add_argument("--methods", default=None)
    b.add_argument("--n", default=None)
    b.add_argument("--cv", default=None)
    b.add_argument("--H", type=int, default=10)
    _common(b)
    b.set_defaults(fn=cmd_bench)

    r = sub.add_parser("report", help="aggregate result CSVs into pivot tables")
    r.add_argument("input", nargs="+")
    r.add_argument("--by", default="type,n,cv,rho")
    r.add_argument("--out", default=None)
    r.set_defaults(fn=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    try:
        return a.fn(a)
    except UsageError as exc:
        print(f"stochknap: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
