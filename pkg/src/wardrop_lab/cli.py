"""``wardrop-lab`` command line.

Exit codes: 0 success, 2 parse error, 3 solver non-convergence,
4 precondition violation.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import beckmann, dynamics, exchange_chain, od_entropy
from .errors import WardropLabError
from .formats import csv_text, dumps, read_network_file, read_zone_file

DYNAMICS_DEFAULTS = {"T": 1.0, "schedule": ("harmonic", 1.0), "seed": 0, "steps": 10_000,
                     "stride": 1000, "unit": 1.0}


def _emit(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_od_balance(args):
    zf = read_zone_file(args.zones)
    z = od_entropy.ZoneData(zf.L, zf.W, zf.c)
    r = od_entropy.balance(z, tol=args.tol, max_iter=args.max_iter)
    _emit(dumps(r.to_dict()), args.output)


def cmd_exchange_sim(args):
    zf = read_zone_file(args.zones)
    chain = dict(zf.chain or {})
    for key in ("pL", "seed", "steps"):
        if getattr(args, key) is not None:
            chain[key] = getattr(args, key)
    L = np.rint(zf.L).astype(np.int64)
    W = np.rint(zf.W).astype(np.int64)
    if not (np.allclose(L, zf.L) and np.allclose(W, zf.W)):
        raise WardropLabError("exchange chain needs integer marginals")
    cfg = exchange_chain.ChainConfig(zf.c, chain.get("pL", 1.0), chain.get("seed", 0),
                                     chain.get("steps", 1_000_000))
    s0 = exchange_chain.ChainState(exchange_chain.initial_state(L, W))
    run = exchange_chain.simulate(s0, cfg, stride=args.stride)
    report = {
        "steps": run.steps, "burn_in": run.burn_in, "jumps": run.jumps,
        "rate_bound": run.rate_bound, "final": run.final.counts,
    }
    try:
        law = exchange_chain.enumerate_stationary(L, W, zf.c)
        report["states"] = len(law)
        report["tv_to_stationary"] = exchange_chain.total_variation(run.frequencies(), law)
        report["detailed_balance_violation"] = exchange_chain.check_detailed_balance(
            L, W, zf.c, cfg.pL)
    except exchange_chain.StateSpaceTooLarge as exc:
        report["stationary_check"] = f"skipped: {exc}"
    if np.allclose(zf.c, zf.c.flat[0]):
        rep = exchange_chain.concentration_report(cfg, L, W, args.lambdas)
        report["concentration"] = rep.to_dict()
    if args.csv:
        Path(args.csv).write_text(
            csv_text(["step", "i", "j", "count"], exchange_chain.trajectory_rows(run.samples)),
            encoding="utf-8")
    _emit(dumps(report), args.output)


def cmd_equilibrium(args):
    nf = read_network_file(args.network)
    rs = nf.route_set()
    res = beckmann.solve_equilibrium(nf.network, rs, tol=args.tol, max_iter=args.max_iter,
                                     method=args.method)
    _emit(dumps(res.to_dict(nf.network, rs)), args.output)


def _dynamics_params(nf, args):
    p = dict(DYNAMICS_DEFAULTS)
    p.update(nf.dynamics or {})
    for key in ("T", "seed", "steps", "stride", "unit"):
        v = getattr(args, key, None)
        if v is not None:
            p[key] = v
    if getattr(args, "schedule", None):
        p["schedule"] = (args.schedule[0], float(args.schedule[1]))
    return p


def _config(p, seed=None):
    kind, value = p["schedule"]
    sched = dynamics.Schedule(kind, value, p["steps"] if kind == "sqrt" else None)
    return dynamics.DynamicsConfig(p["T"], sched, p["seed"] if seed is None else seed,
                                   p["steps"], p["unit"])


def _start(token):
    if token in ("even", "random"):
        return token
    return int(token)


def _replica(job):
    net, rs, cfg, start, stride = job
    rec = dynamics.run(net, rs, cfg, record_stride=stride, x0=start)
    return rec


def cmd_dynamics(args):
    nf = read_network_file(args.network)
    net, rs = nf.network, nf.route_set()
    p = _dynamics_params(nf, args)
    seeds = [p["seed"]] if args.replicas == 1 else dynamics.replica_seeds(p["seed"], args.replicas)
    jobs = [(net, rs, _config(p, s), _start(args.start), p["stride"]) for s in seeds]
    recs = dynamics.map_replicas(_replica, jobs)
    if args.csv:
        Path(args.csv).write_text(
            csv_text(["n", "route_id", "count", "psi", "gap"], recs[0].rows(rs)), encoding="utf-8")
    summary = {
        "T": p["T"], "schedule": list(p["schedule"]), "steps": p["steps"], "unit": p["unit"],
        "replicas": [
            {"seed": s, "final_counts": r.final.counts, "psi": r.psi[-1], "gap": r.gap[-1]}
            for s, r in zip(seeds, recs)
        ],
        "median_psi": float(np.median([r.psi[-1] for r in recs])),
        "median_gap": float(np.median([r.gap[-1] for r in recs])),
    }
    _emit(dumps(summary), args.output)


def cmd_averaging(args):
    nf = read_network_file(args.network)
    net, rs = nf.network, nf.route_set()
    p = _dynamics_params(nf, args)
    psi_min = beckmann.solve_equilibrium(net, rs).psi
    table = dynamics.averaging_estimate(net, rs, p["T"], args.alpha, args.horizon, args.replicas,
                                        args.omega, psi_min, seed=p["seed"],
                                        flow_per_player=p["unit"])
    _emit(dumps(table.to_dict()), args.output)


def compare_projection(net, rs, p, starts):
    """Solver equilibrium, entropy decomposition of its edge flows, and dynamics limits."""
    eq = beckmann.solve_equilibrium(net, rs)
    proj = beckmann.entropy_path_projection(net, rs, eq.y)
    rows = []
    for start in starts:
        cfg = _config(p)
        rec = dynamics.run(net, rs, cfg, x0=start)
        x = dynamics.flows(rec.final.counts, cfg)
        rows.append({"start": start, "x": x, "psi": rec.psi[-1], "gap": rec.gap[-1],
                     "sup_diff_to_projection": float(np.max(np.abs(x - proj)))})
    return {
        "routes": {str(r.id): list(r.edges) for r in rs.routes},
        "equilibrium": {"x": eq.x, "psi": eq.psi, "gap": eq.gap},
        "projection": {"x": proj, "psi": beckmann.potential(net, rs, proj)},
        "dynamics": rows,
        "max_sup_diff_to_projection": max(r["sup_diff_to_projection"] for r in rows),
    }


def format_table(result):
    labels = ["-".join(v) for v in result["routes"].values()]
    head = ["route"] + ["solver", "entropy"] + [f"dyn[{r['start']}]" for r in result["dynamics"]]
    cols = [result["equilibrium"]["x"], result["projection"]["x"]] + [r["x"] for r in result["dynamics"]]
    lines = ["  ".join(f"{h:>12}" for h in head)]
    for i, lab in enumerate(labels):
        lines.append("  ".join([f"{lab:>12}"] + [f"{c[i]:12.6f}" for c in cols]))
    return "\n".join(lines) + "\n"


def cmd_compare_projection(args):
    nf = read_network_file(args.network)
    net, rs = nf.network, nf.route_set()
    p = _dynamics_params(nf, args)
    starts = [_start(s) for s in args.starts] if args.starts else list(range(len(rs))) + ["even"]
    result = compare_projection(net, rs, p, starts)
    if args.output:
        _emit(dumps(result), args.output)
        sys.stdout.write(format_table(result))
    else:
        _emit(dumps(result), None)


def _add_dynamics_flags(sp):
    sp.add_argument("--T", type=float)
    sp.add_argument("--schedule", nargs=2, metavar=("KIND", "VALUE"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--stride", type=int)
    sp.add_argument("--unit", type=float, help="flow carried by one player")


def build_parser():
    ap = argparse.ArgumentParser(prog="wardrop-lab")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("od-balance", help="most probable OD matrix for a zone file")
    sp.add_argument("zones")
    sp.add_argument("-o", "--output")
    sp.add_argument("--tol", type=float, default=1e-12)
    sp.add_argument("--max-iter", type=int, default=10_000)
    sp.set_defaults(func=cmd_od_balance)

    sp = sub.add_parser("exchange-sim", help="simulate the apartment-exchange chain")
    sp.add_argument("zones")
    sp.add_argument("-o", "--output")
    sp.add_argument("--csv")
    sp.add_argument("--stride", type=int, default=1000)
    sp.add_argument("--pL", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--lambdas", type=float, nargs="+", default=[0.5, 1, 2, 3, 5])
    sp.set_defaults(func=cmd_exchange_sim)

    sp = sub.add_parser("equilibrium", help="Wardrop equilibrium of a network file")
    sp.add_argument("network")
    sp.add_argument("-o", "--output")
    sp.add_argument("--tol", type=float, default=1e-10)
    sp.add_argument("--max-iter", type=int, default=100_000)
    sp.add_argument("--method", choices=["pairwise", "frank-wolfe"], default="pairwise")
    sp.set_defaults(func=cmd_equilibrium)

    sp = sub.add_parser("dynamics", help="simulate logit-imitation route choice")
    sp.add_argument("network")
    sp.add_argument("-o", "--output")
    sp.add_argument("--csv")
    sp.add_argument("--start", default="even")
    sp.add_argument("--replicas", type=int, default=1)
    _add_dynamics_flags(sp)
    sp.set_defaults(func=cmd_dynamics)

    sp = sub.add_parser("averaging", help="tail table of the time-averaged potential")
    sp.add_argument("network")
    sp.add_argument("-o", "--output")
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--horizon", type=int, default=10_000)
    sp.add_argument("--replicas", type=int, default=100)
    sp.add_argument("--omega", type=float, nargs="+", default=[0, 1, 2, 5, 10, 20])
    _add_dynamics_flags(sp)
    sp.set_defaults(func=cmd_averaging)

    sp = sub.add_parser("compare-projection",
                        help="solver vs entropy decomposition vs dynamics limits")
    sp.add_argument("network")
    sp.add_argument("-o", "--output")
    sp.add_argument("--starts", nargs="+")
    _add_dynamics_flags(sp)
    sp.set_defaults(func=cmd_compare_projection)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except WardropLabError as exc:
        err = {"error": type(exc).__name__, "message": str(exc)}
        sys.stderr.write(json.dumps(err) + "\n")
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
