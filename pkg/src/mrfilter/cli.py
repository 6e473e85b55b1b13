"""Command-line experiment runner.

Subcommands: simulate, filter, compare, particle, export-basis,
export-pattern.  All read a scenario JSON config; outputs are CSV (scores,
means, truths) and Matrix Market files (sparse factors and patterns).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np
import scipy.io

from .baselines import LowRankFilter, NoHistoryFilter
from .blocksparse import build_lambda, cholesky_and_invert
from .filters import KalmanFilter, MultiResolutionFilter
from .harness import (ConfigParameterFamily, METHOD_IDS, build_model,
                      build_tree, load_scenario, run_compare)
from .mrd import mrd
from .particle import (effective_sample_size, initialize_particles,
                       pmrf_step, resample)
from .ssm import simulate_truth

__all__ = ["main"]


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(v: float) -> str:
    return f"{float(v):.10g}"


def cmd_simulate(args) -> int:
    config = load_scenario(args.config)
    seed = args.seed if args.seed is not None else config["seed"]
    model = build_model(config, seed=seed)
    sim = simulate_truth(model, config["T"], seed=seed)
    os.makedirs(args.out, exist_ok=True)
    truth_rows = [(t, i, _fmt(sim.x[t, i]))
                  for t in range(config["T"] + 1) for i in range(model.n)]
    _write_csv(os.path.join(args.out, "truth.csv"),
               ["t", "index", "value"], truth_rows)
    obs_rows = []
    for t in range(1, config["T"] + 1):
        h, _ = model.observation(t)
        locs = h.indices
        for k, i in enumerate(locs):
            obs_rows.append((t, int(i), _fmt(sim.y[t][k])))
    _write_csv(os.path.join(args.out, "observations.csv"),
               ["t", "index", "value"], obs_rows)
    return 0


def _single_filter(config, method: str, seed: int):
    model = build_model(config, seed=seed)
    tree = build_tree(config, model.grid)
    if method == "kf":
        return model, None, KalmanFilter(model)
    if method == "mrf":
        return model, tree, MultiResolutionFilter(model, tree)
    if method == "lrf":
        r = config["tree"]["r"]
        rank = sum(r) if isinstance(r, list) else r * (config["tree"]["M"] + 1)
        return model, tree, LowRankFilter(model, rank)
    if method == "mra":
        return model, tree, NoHistoryFilter(model, tree)
    raise ValueError(f"filter subcommand does not support method {method!r}")


def cmd_filter(args) -> int:
    config = load_scenario(args.config)
    seed = args.seed if args.seed is not None else config["seed"]
    model, tree, filt = _single_filter(config, args.method, seed)
    sim = simulate_truth(model, config["T"], seed=seed)
    states = filt.run(sim.y, config["T"])
    os.makedirs(args.out, exist_ok=True)
    mean_rows = [(m.t, i, _fmt(m.mu[i]))
                 for m in states for i in range(model.n)]
    _write_csv(os.path.join(args.out, "means.csv"),
               ["t", "index", "value"], mean_rows)
    timings = getattr(filt, "timings", None) or getattr(
        getattr(filt, "inner", None), "timings", None) or []
    _write_csv(os.path.join(args.out, "timing.csv"),
               ["t", "phase", "millis"],
               [(t, phase, f"{ms:.3f}") for t, phase, ms in timings])
    if args.factor_out and states[-1].factor is not None:
        scipy.io.mmwrite(args.factor_out, states[-1].factor.to_csr())
    if args.partition_out and tree is not None:
        tree.save(args.partition_out)
    return 0


def cmd_compare(args) -> int:
    config = load_scenario(args.config)
    os.makedirs(args.out, exist_ok=True)
    rows = run_compare(config,
                       out_csv=os.path.join(args.out, "scores.csv"),
                       reps=args.reps, threads=args.threads)
    by_method: dict[str, list[float]] = {}
    for row in rows:
        by_method.setdefault(row["method"], []).append(float(row["kl"]))
    with open(os.path.join(args.out, "summary.txt"), "w") as fh:
        for method in sorted(by_method, key=lambda m: METHOD_IDS[m]):
            vals = by_method[method]
            fh.write(f"{method}: mean KL {np.mean(vals):.6g} "
                     f"over {len(vals)} rows\n")
    return 0


def cmd_particle(args) -> int:
    config = load_scenario(args.config)
    if "particle" not in config:
        print("config has no particle section", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else config["seed"]
    family = ConfigParameterFamily(config)
    model = family.build_model(family.sample_prior(
        np.random.default_rng(seed)))
    tree = build_tree(config, model.grid)
    sim = simulate_truth(build_model(config, seed=seed), config["T"],
                         seed=seed)

    pcfg = config["particle"]
    ps = initialize_particles(family, tree, pcfg["n_particles"], seed)
    threshold = pcfg.get("resample_threshold", 0.5)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for t in range(1, config["T"] + 1):
        ps = pmrf_step(ps, family, tree, sim.y[t], t, seed)
        ess = effective_sample_size(ps.log_weights)
        for i in range(ps.n_p):
            theta_txt = ";".join(_fmt(v) for v in ps.thetas[i])
            rows.append((t, i, theta_txt, _fmt(ps.weights[i]), _fmt(ess)))
        ps = resample(ps, threshold, seed=seed * 100003 + t)
    _write_csv(os.path.join(args.out, "particles.csv"),
               ["t", "particle", "theta", "weight", "ess"], rows)
    return 0


def cmd_export_basis(args) -> int:
    config = load_scenario(args.config)
    model = build_model(config, seed=config["seed"])
    tree = build_tree(config, model.grid)
    factor = mrd(model.sigma0, tree)
    dense_int = factor.dense()
    dense_grid = np.empty_like(dense_int)
    dense_grid[tree.perm] = dense_int
    level_of_col = np.array(
        [tree.regions[tree.col_region[c]].level for c in range(tree.ncols)])
    header = ["index"] + [
        f"m{level_of_col[c]}_c{c}" for c in range(tree.ncols)]
    rows = [[i] + [_fmt(dense_grid[i, c]) for c in range(tree.ncols)]
            for i in range(tree.n)]
    _write_csv(args.out, header, rows)
    return 0


def cmd_export_pattern(args) -> int:
    config = load_scenario(args.config)
    model = build_model(config, seed=config["seed"])
    tree = build_tree(config, model.grid)
    factor = mrd(model.sigma0, tree)
    h, r_diag = model.observation(1)
    lam = build_lambda(factor, h.tocsr()[:, tree.perm], 1.0 / r_diag)
    l_fac, l_inv = cholesky_and_invert(lam)
    b = factor.to_csr()
    mats = {
        "B": b,
        "BtB": (b.T @ b).tocsr(),
        "L": l_fac.to_csc().tocsr(),
        "Linv": l_inv.to_csc().tocsr(),
    }
    os.makedirs(args.out, exist_ok=True)
    for name, mat in mats.items():
        coo = mat.tocoo()
        _write_csv(os.path.join(args.out, f"{name}_pattern.csv"),
                   ["row", "col"],
                   sorted(zip(coo.row.tolist(), coo.col.tolist())))
        scipy.io.mmwrite(os.path.join(args.out, f"{name}.mtx"), mat)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mrfilter",
        description="Multi-resolution filtering experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="write truth and observations")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("filter", help="run one filter, write means")
    common(p)
    p.add_argument("--method", choices=["kf", "mrf", "lrf", "mra"],
                   default="mrf")
    p.add_argument("--factor-out", default=None,
                   help="Matrix Market path for the final factor")
    p.add_argument("--partition-out", default=None,
                   help="JSON path for the partition tree")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("compare", help="score methods over replicates")
    common(p)
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("particle", help="particle filter over parameters")
    common(p)
    p.set_defaults(func=cmd_particle)

    p = sub.add_parser("export-basis",
                       help="CSV of factor columns on the grid")
    common(p)
    p.set_defaults(func=cmd_export_basis)

    p = sub.add_parser("export-pattern",
                       help="sparsity patterns of B, B'B, L, Linv")
    common(p)
    p.set_defaults(func=cmd_export_pattern)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:   # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
