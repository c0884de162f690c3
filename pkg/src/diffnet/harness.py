"""Configuration-driven simulation experiments at desk scale.

Four experiment kinds are supported: per-edge CI coverage, per-edge test
power across a signal grid, global-test calibration under equal graphs,
and global-test power across change count and magnitude.  Paper-scale
settings (big graphs, burn-in 3000 / thinning 1000, 1000 replications)
are reproducible by flag but the defaults are shrunk so a full run fits
on a laptop.

Reproducibility contract: replication r of a run with root seed s derives
all of its randomness from SeedSequence(s, spawn_key=(r,)), so reports are
byte-identical no matter how many worker processes execute the reps, and
any single rep can be replayed in isolation.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bootstrap import empirical_sketch, multiplier_sketch, quantile
from .inference import debias_all, debias_edge, normal_quantile, variance_direct, z_stat
from .ising import (
    GraphPair,
    IsingModel,
    gibbs_sample,
    make_null_graph,
    make_pair,
    perturb_graph,
)
from .kliep import KliepProblem, hessian
from .model import edge_to_index, ising_suff_stats, num_edges
from .solvers import DEFAULT_OPTIONS, sparse_kliep

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "lambda_sqrt_rule",
    "select_lambda_grid_jump",
    "run_experiment",
    "run_coverage",
    "run_power_single",
    "run_type1_global",
    "run_power_global",
    "power_pair",
    "resolve_threads",
    "write_report",
]

EXPERIMENTS = ("coverage", "power_single", "type1_global", "power_global")
LAMBDA_RULES = ("fixed", "grid_jump", "sqrt_rule")

PAPER_BURNIN = 3000
PAPER_THINNING = 1000
DESK_BURNIN = 500
DESK_THINNING = 50


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment run depends on; JSON round-trippable."""

    experiment: str = "coverage"
    pair: str = "chain1"  # pair label, or null-graph kind for global runs
    m: int = 10
    n_x: int = 150
    n_y: int = 300
    reps: int = 300
    n_b: int = 200
    alphas: tuple = (0.05,)
    methods: tuple = ("naive", "sparklie1", "sparklie2", "oracle")
    lambda_rule: str = "sqrt_rule"
    lambda_theta: float | None = None  # used when lambda_rule == "fixed"
    lambda_grid: tuple = ()  # descending grid for grid_jump
    jump_factor: float = 2.0
    lambda_theta_scale: float = 2.0  # c in c*sqrt(log p / n_x)
    lambda_k_scale: float = math.sqrt(2.0)  # universal scaled-lasso level
    seed: int = 0
    burnin: int | None = None
    thinning: int | None = None
    paper_scale: bool = False
    threads: int = 0  # 0 resolves to DIFFNET_THREADS or cpu count
    # power_single
    deltas: tuple = (-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75)
    nuisance: tuple = ("none", "weak", "strong", "mixed")
    # global experiments
    sketch_method: str = "empirical"
    sketch_kinds: tuple = ("T", "W")
    s_thetas: tuple = (1, 3, 5)
    signal_levels: tuple = (0.0, 0.25, 0.5)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if self.lambda_rule not in LAMBDA_RULES:
            raise ValueError(f"unknown lambda rule {self.lambda_rule!r}")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        for name in ("alphas", "methods", "deltas", "nuisance", "sketch_kinds",
                     "s_thetas", "signal_levels", "lambda_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    @property
    def gibbs_burnin(self):
        if self.burnin is not None:
            return self.burnin
        return PAPER_BURNIN if self.paper_scale else DESK_BURNIN

    @property
    def gibbs_thinning(self):
        if self.thinning is not None:
            return self.thinning
        return PAPER_THINNING if self.paper_scale else DESK_THINNING

    @property
    def p(self):
        return num_edges(self.m)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            doc = json.load(fh)
        return cls(**doc)


@dataclass(frozen=True)
class ExperimentReport:
    config: ExperimentConfig
    records: list  # one dict per rep (and per cell, for gridded runs)
    summary: list  # aggregate rows with binomial standard errors
    qq: list = field(default_factory=list)  # (method, sorted std errors) rows
    wall_clock: float = 0.0
    notes: dict = field(default_factory=dict)


def lambda_sqrt_rule(p, n, c):
    """Penalty level c * sqrt(log p / n)."""
    if p < 2 or n < 1:
        raise ValueError("need p >= 2 and n >= 1")
    return c * math.sqrt(math.log(p) / n)


def select_lambda_grid_jump(problem, grid, jump_factor=2.0, support_cap=None,
                            opts=DEFAULT_OPTIONS):
    """Last grid value before the selected support grows too fast.

    Walks a strictly decreasing penalty grid with warm starts and flags
    the first index whose support exceeds ``jump_factor`` times the
    previous size (at least 1) or ``support_cap`` (default n_y / 2).
    Returns (lambda, info) where info records the support-size path; with
    no jump the smallest value is returned with ``jumped=False``.
    """
    grid = [float(g) for g in grid]
    if len(grid) < 1 or any(g <= 0 for g in grid):
        raise ValueError("grid must be positive")
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly decreasing")
    cap = support_cap if support_cap is not None else max(2, problem.n_y // 2)
    sizes = []
    warm = None
    chosen = None
    for i, lam in enumerate(grid):
        sol = sparse_kliep(problem, lam, opts, theta0=warm)
        warm = sol.values
        sizes.append(int(sol.support.size))
        if i > 0:
            jumped = sizes[i] > jump_factor * max(sizes[i - 1], 1) or sizes[i] > cap
            if jumped:
                chosen = grid[i - 1]
                break
    if chosen is None:
        return grid[-1], {"sizes": sizes, "jumped": False}
    return chosen, {"sizes": sizes, "jumped": True}


def resolve_threads(threads=0):
    """--threads flag, then DIFFNET_THREADS, then the cpu count."""
    if threads and threads > 0:
        return threads
    env = os.environ.get("DIFFNET_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return os.cpu_count() or 1


def _rep_seed(config, rep):
    return np.random.SeedSequence(config.seed, spawn_key=(rep,))


def _sample_pair(pair, config, rep_ss):
    child_x, child_y = rep_ss.spawn(2)
    x = gibbs_sample(pair.gamma_x, config.n_x, config.gibbs_burnin,
                     config.gibbs_thinning, child_x)
    y = gibbs_sample(pair.gamma_y, config.n_y, config.gibbs_burnin,
                     config.gibbs_thinning, child_y)
    return KliepProblem(ising_suff_stats(x), ising_suff_stats(y))


def thinning_diagnostic(samples):
    """Lag-1 autocorrelation of the mean pairwise statistic across draws."""
    stat = ising_suff_stats(samples).mean(axis=1)
    if stat.size < 3 or np.var(stat) == 0:
        return 0.0
    a, b = stat[:-1] - stat.mean(), stat[1:] - stat.mean()
    return float((a @ b) / (stat.size * np.var(stat)))


def _target_edge(config):
    if config.pair.startswith("chain"):
        return edge_to_index(5, 6, config.m) - 1
    return edge_to_index(1, 3, config.m) - 1


def _resolve_lambda_theta(config, calib_problem=None):
    if config.lambda_rule == "fixed":
        if config.lambda_theta is None:
            raise ValueError("lambda_rule 'fixed' needs lambda_theta")
        return float(config.lambda_theta)
    if config.lambda_rule == "sqrt_rule":
        return lambda_sqrt_rule(config.p, config.n_x, config.lambda_theta_scale)
    if calib_problem is None:
        raise ValueError("grid_jump rule needs a calibration problem")
    grid = config.lambda_grid or tuple(
        lambda_sqrt_rule(config.p, config.n_x, c)
        for c in (8, 6, 5, 4, 3, 2.5, 2, 1.5, 1, 0.75, 0.5)
    )
    lam, _ = select_lambda_grid_jump(calib_problem, grid, config.jump_factor)
    return lam


# ---------------------------------------------------------------------------
# per-rep worker functions (top level so process pools can pickle them)


def _coverage_rep(args):
    config, rep, lam_theta = args
    pair = make_pair(config.pair, config.m, seed=config.seed)
    k = _target_edge(config)
    theta_star_k = float(pair.theta_star[k])
    rep_ss = _rep_seed(config, rep)
    problem = _sample_pair(pair, config, rep_ss)
    lam0 = lambda_sqrt_rule(config.p, config.n_y, config.lambda_k_scale)
    step1 = sparse_kliep(problem, lam_theta)
    H = hessian(step1.values, problem.psi_y)
    out = []
    for method in config.methods:
        res = debias_edge(
            problem, k, lam_theta,
            method=method,
            scaled_penalty=lam0,
            true_support=pair.support_star,
            theta_check=step1.values,
            hessian_check=H,
        )
        row = {"rep": rep, "seed": f"{config.seed}:{rep}", "method": method,
               "k": k + 1, "theta_star": theta_star_k,
               "theta_hat": res.theta_hat, "sigma_hat": res.sigma_hat}
        for alpha in config.alphas:
            zq = normal_quantile(1.0 - alpha / 2.0)
            half = zq * res.sigma_hat / math.sqrt(res.n)
            row[f"covered_{alpha:g}"] = int(
                res.theta_hat - half <= theta_star_k <= res.theta_hat + half
            )
        row["std_error"] = (
            math.sqrt(res.n) * (res.theta_hat - theta_star_k) / res.sigma_hat
            if res.sigma_hat > 0 else float("nan")
        )
        out.append(row)
    return out


def power_pair(setting, delta, m, seed=0):
    """x/y model pair for the single-edge power study.

    The y-model is the chain1 y-graph; the x-model restores the strong
    nuisance weights and/or removes the weak extra edges per ``setting``
    and shifts the (5,6) weight by ``delta``.
    """
    settings = ("none", "weak", "strong", "mixed")
    if setting not in settings:
        raise ValueError(f"unknown nuisance setting {setting!r}")
    base = make_pair("chain1", m, seed)
    gy = base.gamma_y.gamma
    gx = gy.copy()

    def e(u, v):
        return edge_to_index(u, v, m) - 1

    gx[e(5, 6)] = gy[e(5, 6)] + delta
    if setting in ("strong", "mixed"):
        gx[e(4, 5)] = 0.56
        gx[e(6, 7)] = -0.10
    if setting in ("weak", "mixed"):
        gx[e(4, 6)] = 0.0
        gx[e(5, 7)] = 0.0
    return GraphPair(IsingModel(m, gx), IsingModel(m, gy),
                     label=f"power_{setting}")


def _power_single_rep(args):
    config, rep, lam_theta, setting, delta = args
    pair = power_pair(setting, delta, config.m, seed=config.seed)
    k = edge_to_index(5, 6, config.m) - 1
    rep_ss = np.random.SeedSequence(
        config.seed, spawn_key=(1 + config.nuisance.index(setting),
                                config.deltas.index(delta), rep),
    )
    problem = _sample_pair(pair, config, rep_ss)
    lam0 = lambda_sqrt_rule(config.p, config.n_y, config.lambda_k_scale)
    out = []
    step1 = sparse_kliep(problem, lam_theta)
    H = hessian(step1.values, problem.psi_y)
    for method in config.methods:
        res = debias_edge(
            problem, k, lam_theta, method=method, scaled_penalty=lam0,
            true_support=pair.support_star,
            theta_check=step1.values, hessian_check=H,
        )
        z, p_value = z_stat(res)
        row = {"rep": rep, "seed": f"{config.seed}:{rep}", "setting": setting,
               "delta": delta, "method": method, "theta_hat": res.theta_hat,
               "z": z}
        for alpha in config.alphas:
            row[f"reject_{alpha:g}"] = int(p_value < alpha)
        out.append(row)
    return out


def _global_rep_core(config, rep_key, pair, lam_theta, lam_k):
    rep_ss = np.random.SeedSequence(config.seed, spawn_key=tuple(rep_key))
    problem = _sample_pair(pair, config, rep_ss)
    theta_check, theta_hat, Omega, _ = debias_all(
        problem, lam_theta, lambda_k=lam_k
    )
    theta0 = np.zeros(problem.p)
    sigma0 = None
    if "W" in config.sketch_kinds:
        sigma0 = np.empty(problem.p)
        for k in range(problem.p):
            sigma0[k], _ = variance_direct(problem, theta0, Omega[:, k])
        sigma0 = np.sqrt(np.maximum(sigma0, 1e-12))
    boot_seed = int(rep_ss.spawn(3)[2].generate_state(1)[0])
    key = ":".join(str(i) for i in rep_key)
    rows = {"rep": rep_key[-1], "seed": f"{config.seed}:{key}",
            "max_theta_hat": float(np.abs(theta_hat).max())}
    for kind in config.sketch_kinds:
        dev = math.sqrt(problem.n) * np.abs(theta_hat - theta0)
        if kind == "W":
            dev = dev / sigma0
        statistic = float(dev.max())
        if config.sketch_method == "empirical":
            sketch = empirical_sketch(
                problem, lam_theta, Omega, theta0, sigma=sigma0,
                n_b=config.n_b, seed=boot_seed, kind=kind,
                theta_check=theta_check,
            )
        else:
            sketch = multiplier_sketch(
                problem, Omega, theta0, sigma=sigma0, n_b=config.n_b,
                seed=boot_seed, kind=kind,
            )
        rows[f"stat_{kind}"] = statistic
        for alpha in config.alphas:
            crit = quantile(sketch, alpha)
            rows[f"crit_{kind}_{alpha:g}"] = crit
            rows[f"reject_{kind}_{alpha:g}"] = int(statistic > crit)
    return rows


def _type1_rep(args):
    config, rep, lam_theta, lam_k = args
    base = make_null_graph(config.pair, config.m, seed=config.seed)
    pair = GraphPair(base, base, label=f"null_{config.pair}")
    return [_global_rep_core(config, (rep,), pair, lam_theta, lam_k)]


def _power_global_rep(args):
    config, rep, lam_theta, lam_k, s_theta, level = args
    base = make_null_graph(config.pair, config.m, seed=config.seed)
    cell = (config.s_thetas.index(s_theta), config.signal_levels.index(level))
    pair = perturb_graph(
        base, s_theta, level,
        seed=np.random.SeedSequence(config.seed, spawn_key=(997, *cell)),
    )
    row = _global_rep_core(
        config, (1 + cell[0], 1 + cell[1], rep), pair, lam_theta, lam_k
    )
    row.update({"rep": rep, "s_theta": s_theta, "level": level})
    return [row]


# ---------------------------------------------------------------------------


def _parallel_map(fn, tasks, threads):
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        chunk = max(1, len(tasks) // (threads * 8))
        return list(pool.map(fn, tasks, chunksize=chunk))


def _binomial_row(values):
    phat = float(np.mean(values))
    se = math.sqrt(phat * (1.0 - phat) / len(values)) if values else 0.0
    return phat, se


def _thinning_check(config, pair):
    """Lag-1 autocorrelation of retained Gibbs draws on one pilot chain.

    Values past 0.3 mean the thinning interval is too short for this
    graph; recorded in the report notes, never in the CSVs.
    """
    pilot = gibbs_sample(
        pair.gamma_y, min(200, config.n_y), config.gibbs_burnin,
        config.gibbs_thinning,
        np.random.SeedSequence(config.seed, spawn_key=(10**6 + 1,)),
    )
    rho = thinning_diagnostic(pilot)
    return {"thinning_autocorr": rho, "thinning_suspect": bool(abs(rho) > 0.3)}


def run_coverage(config):
    """CI coverage per method for the designated edge of a figure pair."""
    t0 = time.perf_counter()
    threads = resolve_threads(config.threads)
    lam_theta = _resolve_lambda_theta(config, _calibration_problem(config))
    tasks = [(config, rep, lam_theta) for rep in range(config.reps)]
    nested = _parallel_map(_coverage_rep, tasks, threads)
    records = [row for rows in nested for row in rows]
    summary = []
    qq = []
    for method in config.methods:
        rows = [r for r in records if r["method"] == method]
        entry = {"method": method, "reps": len(rows), "lambda_theta": lam_theta}
        for alpha in config.alphas:
            cov, se = _binomial_row([r[f"covered_{alpha:g}"] for r in rows])
            entry[f"coverage_{alpha:g}"] = cov
            entry[f"se_{alpha:g}"] = se
        errs = np.array([r["theta_hat"] - r["theta_star"] for r in rows])
        entry["bias"] = float(errs.mean())
        summary.append(entry)
        std = np.sort([r["std_error"] for r in rows])
        grid = [normal_quantile((i + 0.5) / len(std)) for i in range(len(std))]
        qq.extend(
            {"method": method, "normal_quantile": g, "std_error": float(s)}
            for g, s in zip(grid, std)
        )
    notes = {"lambda_theta": lam_theta}
    notes.update(_thinning_check(config, make_pair(config.pair, config.m,
                                                   seed=config.seed)))
    return ExperimentReport(
        config=config, records=records, summary=summary, qq=qq,
        wall_clock=time.perf_counter() - t0,
        notes=notes,
    )


def _calibration_problem(config):
    """Independent sample pair used only by the grid_jump rule."""
    if config.lambda_rule != "grid_jump":
        return None
    label = config.pair if config.experiment != "power_single" else "chain1"
    pair = make_pair(label, config.m, seed=config.seed)
    calib_ss = np.random.SeedSequence(config.seed, spawn_key=(10**6,))
    return _sample_pair(pair, config, calib_ss)


def run_power_single(config):
    """Rejection-rate curve of the per-edge test across the signal grid."""
    t0 = time.perf_counter()
    threads = resolve_threads(config.threads)
    lam_theta = _resolve_lambda_theta(config, _calibration_problem(config))
    tasks = [
        (config, rep, lam_theta, setting, delta)
        for setting in config.nuisance
        for delta in config.deltas
        for rep in range(config.reps)
    ]
    nested = _parallel_map(_power_single_rep, tasks, threads)
    records = [row for rows in nested for row in rows]
    summary = []
    for setting in config.nuisance:
        for delta in config.deltas:
            for method in config.methods:
                rows = [
                    r for r in records
                    if r["setting"] == setting and r["delta"] == delta
                    and r["method"] == method
                ]
                entry = {"setting": setting, "delta": delta, "method": method,
                         "reps": len(rows)}
                for alpha in config.alphas:
                    pw, se = _binomial_row([r[f"reject_{alpha:g}"] for r in rows])
                    entry[f"power_{alpha:g}"] = pw
                    entry[f"se_{alpha:g}"] = se
                summary.append(entry)
    return ExperimentReport(
        config=config, records=records, summary=summary,
        wall_clock=time.perf_counter() - t0,
        notes={"lambda_theta": lam_theta},
    )


def run_type1_global(config):
    """Equal-graph test rejection rates when the graphs really are equal."""
    t0 = time.perf_counter()
    threads = resolve_threads(config.threads)
    lam_theta = lambda_sqrt_rule(config.p, config.n_x, config.lambda_theta_scale)
    lam_k = lambda_sqrt_rule(config.p, config.n_y, config.lambda_theta_scale)
    tasks = [(config, rep, lam_theta, lam_k) for rep in range(config.reps)]
    nested = _parallel_map(_type1_rep, tasks, threads)
    records = [row for rows in nested for row in rows]
    summary = []
    for kind in config.sketch_kinds:
        entry = {"kind": kind, "reps": len(records),
                 "lambda_theta": lam_theta, "lambda_k": lam_k}
        for alpha in config.alphas:
            rate, se = _binomial_row([r[f"reject_{kind}_{alpha:g}"] for r in records])
            entry[f"rate_{alpha:g}"] = rate
            entry[f"se_{alpha:g}"] = se
        summary.append(entry)
    return ExperimentReport(
        config=config, records=records, summary=summary,
        wall_clock=time.perf_counter() - t0,
        notes={"lambda_theta": lam_theta, "lambda_k": lam_k},
    )


def run_power_global(config):
    """Equal-graph test power across change count and magnitude."""
    t0 = time.perf_counter()
    threads = resolve_threads(config.threads)
    lam_theta = lambda_sqrt_rule(config.p, config.n_x, config.lambda_theta_scale)
    lam_k = lambda_sqrt_rule(config.p, config.n_y, config.lambda_theta_scale)
    tasks = [
        (config, rep, lam_theta, lam_k, s_theta, level)
        for s_theta in config.s_thetas
        for level in config.signal_levels
        for rep in range(config.reps)
    ]
    nested = _parallel_map(_power_global_rep, tasks, threads)
    records = [row for rows in nested for row in rows]
    summary = []
    for s_theta in config.s_thetas:
        for level in config.signal_levels:
            rows = [
                r for r in records
                if r["s_theta"] == s_theta and r["level"] == level
            ]
            for kind in config.sketch_kinds:
                entry = {"s_theta": s_theta, "level": level, "kind": kind,
                         "reps": len(rows)}
                for alpha in config.alphas:
                    pw, se = _binomial_row([r[f"reject_{kind}_{alpha:g}"] for r in rows])
                    entry[f"power_{alpha:g}"] = pw
                    entry[f"se_{alpha:g}"] = se
                summary.append(entry)
    return ExperimentReport(
        config=config, records=records, summary=summary,
        wall_clock=time.perf_counter() - t0,
        notes={"lambda_theta": lam_theta, "lambda_k": lam_k},
    )


def run_experiment(config):
    runner = {
        "coverage": run_coverage,
        "power_single": run_power_single,
        "type1_global": run_type1_global,
        "power_global": run_power_global,
    }[config.experiment]
    return runner(config)


# ---------------------------------------------------------------------------
# deterministic emission


def _format_cell(v):
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, (np.floating,)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _write_csv(path, rows):
    if not rows:
        with open(path, "w", newline="") as fh:
            fh.write("\n")
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(_format_cell(row[c]) for c in cols) + "\n")


def write_report(report, outdir):
    """Emit records.csv, summary.csv, qq.csv (when present), summary.json.

    The CSVs depend only on (config, seed); wall-clock lives in the JSON.
    """
    os.makedirs(outdir, exist_ok=True)
    _write_csv(os.path.join(outdir, "records.csv"), report.records)
    _write_csv(os.path.join(outdir, "summary.csv"), report.summary)
    if report.qq:
        _write_csv(os.path.join(outdir, "qq.csv"), report.qq)
    doc = {
        "config": asdict(report.config),
        "summary": report.summary,
        "notes": report.notes,
        "wall_clock_seconds": report.wall_clock,
    }
    with open(os.path.join(outdir, "summary.json"), "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(v):
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v)}")
