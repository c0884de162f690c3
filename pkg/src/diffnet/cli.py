"""Command-line interface.

Subcommands:
  simulate    sample one or two Ising models to CSV
  fit         penalized difference fit between two sample files
  infer       per-edge debiased estimates, intervals, and tests
  bootstrap   sketch max-statistic quantiles; equal-graph test
  experiment  run a JSON-configured simulation study

Sample files are header-less CSV matrices with a JSON sidecar at
``<file>.json`` holding ``{"m": ..., "encoding": "ising"|"raw_psi"}``;
graph files are JSON ``{"m": ..., "edges": [{"u","v","weight"}]}``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .bootstrap import global_test, quantile, simultaneous_ci
from .harness import (
    ExperimentConfig,
    lambda_sqrt_rule,
    run_experiment,
    write_report,
)
from .inference import debias_all, debias_edge, result_record
from .ising import (
    PAIR_LABELS,
    gibbs_sample,
    load_graph,
    make_null_graph,
    make_pair,
    save_graph,
)
from .kliep import KliepProblem
from .model import edge_to_index, load_samples, save_samples
from .solvers import sparse_kliep


def _load_problem(args):
    psi_x, m_x, _ = load_samples(args.x)
    psi_y, m_y, _ = load_samples(args.y)
    if m_x != m_y:
        raise SystemExit(f"node counts differ: {m_x} vs {m_y}")
    return KliepProblem(psi_x, psi_y), m_x


def _emit(doc, path=None):
    text = json.dumps(doc, indent=1, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def cmd_simulate(args):
    if args.pair:
        pair = make_pair(args.pair, args.m, seed=args.seed)
        gx, gy = pair.gamma_x, pair.gamma_y
    elif args.null_kind:
        gx = gy = make_null_graph(args.null_kind, args.m, seed=args.seed)
    else:
        gx = load_graph(args.graph_x)
        gy = load_graph(args.graph_y) if args.graph_y else None
    x = gibbs_sample(gx, args.n_x, args.burnin, args.thinning,
                     np.random.SeedSequence(args.seed, spawn_key=(0,)))
    save_samples(args.out_x, x, gx.m, encoding="ising")
    outputs = {"x": args.out_x}
    write_y = gy is not None and args.out_y
    if write_y:
        y = gibbs_sample(gy, args.n_y, args.burnin, args.thinning,
                         np.random.SeedSequence(args.seed, spawn_key=(1,)))
        save_samples(args.out_y, y, gy.m, encoding="ising")
        outputs["y"] = args.out_y
    if args.save_graphs:
        save_graph(args.out_x + ".graph.json", gx)
        outputs["graph_x"] = args.out_x + ".graph.json"
        if write_y:
            save_graph(args.out_y + ".graph.json", gy)
            outputs["graph_y"] = args.out_y + ".graph.json"
    _emit({"written": outputs, "m": gx.m, "seed": args.seed})


def cmd_fit(args):
    problem, m = _load_problem(args)
    lam = args.lambda_theta
    if lam is None:
        lam = lambda_sqrt_rule(problem.p, problem.n_x, 2.0)
    sol = sparse_kliep(problem, lam)
    nonzero = {
        str(tuple(_edge_of(k, m))): sol.values[k]
        for k in sol.support
    }
    _emit(
        {
            "lambda_theta": lam,
            "support_size": int(sol.support.size),
            "nonzeros": nonzero,
            "iterations": sol.iterations,
            "converged": sol.converged,
            "kkt_residual": sol.kkt_residual,
            "objective": sol.objective,
        },
        args.out,
    )


def _edge_of(k, m):
    from .model import index_to_edge

    return index_to_edge(int(k) + 1, m)


def _parse_edges(spec, m):
    ks = []
    for item in spec.split(","):
        item = item.strip()
        if "-" in item:
            u, v = sorted(int(t) for t in item.split("-"))
            ks.append(edge_to_index(u, v, m) - 1)
        else:
            ks.append(int(item) - 1)
    return ks


def cmd_infer(args):
    problem, m = _load_problem(args)
    lam_theta = args.lambda_theta
    if lam_theta is None:
        lam_theta = lambda_sqrt_rule(problem.p, problem.n_x, 2.0)
    scaled = None if args.lambda_k else lambda_sqrt_rule(
        problem.p, problem.n_y, math.sqrt(2.0)
    )
    ks = _parse_edges(args.edges, m)
    step1 = sparse_kliep(problem, lam_theta)
    from .kliep import hessian

    H = hessian(step1.values, problem.psi_y)
    records = []
    for k in ks:
        res = debias_edge(
            problem, k, lam_theta,
            method=args.method,
            lambda_k=args.lambda_k,
            scaled_penalty=scaled,
            theta_check=step1.values,
            hessian_check=H,
        )
        records.append(result_record(res, m=m, alpha=args.alpha))
    _emit({"records": records, "lambda_theta": lam_theta}, args.out)


def cmd_bootstrap(args):
    problem, m = _load_problem(args)
    lam_theta = args.lambda_theta or lambda_sqrt_rule(problem.p, problem.n_x, 2.0)
    lam_k = args.lambda_k or lambda_sqrt_rule(problem.p, problem.n_y, 2.0)
    theta_check, theta_hat, Omega, sigma2 = debias_all(
        problem, lam_theta, lambda_k=lam_k
    )
    sigma = np.sqrt(sigma2)
    theta0 = np.zeros(problem.p)
    result, sketch = global_test(
        problem, theta0, Omega, theta_hat, sigma=sigma, alpha=args.alpha,
        kind=args.kind, method=args.method, lambda_theta=lam_theta,
        n_b=args.n_b, seed=args.seed, theta_check=theta_check,
    )
    outdir = args.out_dir
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "sketch.csv"), "w", newline="") as fh:
        fh.write("b,stat\n")
        for b, s in enumerate(sketch.stats):
            fh.write(f"{b},{float(s)!r}\n")
    alphas = sorted(set([args.alpha] + [0.10, 0.05, 0.01]), reverse=True)
    with open(os.path.join(outdir, "quantiles.csv"), "w", newline="") as fh:
        fh.write("alpha,critical\n")
        for a in alphas:
            fh.write(f"{a!r},{quantile(sketch, a)!r}\n")
    cis = simultaneous_ci(theta_hat, sketch, args.alpha,
                          sigma=sigma if args.kind == "W" else None)
    with open(os.path.join(outdir, "simultaneous_ci.csv"), "w", newline="") as fh:
        fh.write("k,u,v,theta_hat,ci_lo,ci_hi\n")
        for k in range(problem.p):
            u, v = _edge_of(k, m)
            fh.write(
                f"{k + 1},{u},{v},{float(theta_hat[k])!r},"
                f"{float(cis[k, 0])!r},{float(cis[k, 1])!r}\n"
            )
    _emit(
        {
            "statistic": result.statistic,
            "critical": result.critical,
            "alpha": result.alpha,
            "kind": result.kind,
            "reject_equal_graphs": result.reject,
            "n_b": sketch.n_b,
            "excluded_replicates": sketch.n_excluded,
            "unreliable": sketch.unreliable,
            "lambda_theta": lam_theta,
            "lambda_k": lam_k,
            "out_dir": outdir,
        },
        os.path.join(outdir, "global_test.json"),
    )
    print(f"equal-graph test ({args.kind}, {args.method}): "
          f"stat={result.statistic:.4f} crit={result.critical:.4f} "
          f"reject={result.reject}")


def cmd_experiment(args):
    config = ExperimentConfig.from_json(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.paper_scale:
        overrides["paper_scale"] = True
    if overrides:
        from dataclasses import replace

        config = replace(config, **overrides)
    report = run_experiment(config)
    write_report(report, args.out_dir)
    print(f"{config.experiment}: {len(report.records)} records -> {args.out_dir} "
          f"({report.wall_clock:.1f}s)")
    for row in report.summary:
        print(json.dumps(row, sort_keys=True, default=float))


def build_parser():
    ap = argparse.ArgumentParser(
        prog="diffnet",
        description="Differential-network estimation and inference",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="sample Ising models to CSV")
    src = sim.add_mutually_exclusive_group(required=True)
    src.add_argument("--pair", choices=PAIR_LABELS)
    src.add_argument("--null-kind", choices=("positive", "mixed", "negative"))
    src.add_argument("--graph-x", help="JSON graph file for the x-model")
    sim.add_argument("--graph-y", help="JSON graph file for the y-model")
    sim.add_argument("--m", type=int, default=25)
    sim.add_argument("--n-x", type=int, default=150)
    sim.add_argument("--n-y", type=int, default=300)
    sim.add_argument("--burnin", type=int, default=500)
    sim.add_argument("--thinning", type=int, default=50)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out-x", required=True)
    sim.add_argument("--out-y")
    sim.add_argument("--save-graphs", action="store_true")
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="penalized difference fit")
    fit.add_argument("--x", required=True)
    fit.add_argument("--y", required=True)
    fit.add_argument("--lambda-theta", type=float)
    fit.add_argument("--out")
    fit.set_defaults(func=cmd_fit)

    inf = sub.add_parser("infer", help="debiased per-edge inference")
    inf.add_argument("--x", required=True)
    inf.add_argument("--y", required=True)
    inf.add_argument("--edges", required=True,
                     help="comma list of 'u-v' pairs or 1-based indices")
    inf.add_argument("--method", default="sparklie1",
                     choices=("sparklie1", "sparklie2", "naive"))
    inf.add_argument("--lambda-theta", type=float)
    inf.add_argument("--lambda-k", type=float)
    inf.add_argument("--alpha", type=float, default=0.05)
    inf.add_argument("--out")
    inf.set_defaults(func=cmd_infer)

    boot = sub.add_parser("bootstrap", help="sketch quantiles, global test")
    boot.add_argument("--x", required=True)
    boot.add_argument("--y", required=True)
    boot.add_argument("--kind", default="T", choices=("T", "W"))
    boot.add_argument("--method", default="empirical",
                      choices=("empirical", "multiplier"))
    boot.add_argument("--n-b", type=int, default=300)
    boot.add_argument("--alpha", type=float, default=0.05)
    boot.add_argument("--lambda-theta", type=float)
    boot.add_argument("--lambda-k", type=float)
    boot.add_argument("--seed", type=int, default=0)
    boot.add_argument("--out-dir", default="bootstrap_out")
    boot.set_defaults(func=cmd_bootstrap)

    exp = sub.add_parser("experiment", help="run a JSON-configured study")
    exp.add_argument("--config", required=True)
    exp.add_argument("--out-dir", default="experiment_out")
    exp.add_argument("--seed", type=int)
    exp.add_argument("--threads", type=int)
    exp.add_argument("--paper-scale", action="store_true")
    exp.set_defaults(func=cmd_experiment)

    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "simulate":
        if not args.pair and not args.null_kind and not args.graph_x:
            raise SystemExit("simulate needs --pair, --null-kind, or --graph-x")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
