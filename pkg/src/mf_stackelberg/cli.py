"""Command-line front end: check, solve, simulate, converge, probe."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .assembly import SolvabilityError, assemble_blocks, solvability_scan
from .config import ConfigError, RunConfig, load_config
from .export import matrix_header, matrix_rows, write_csv
from .model import ModelError, compute_xi_terms
from .numerics import NumericalError, TimeGrid
from .simulate import per_agent_costs
from .streams import run_seed

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_UNSOLVABLE, EXIT_NUMERICAL = 0, 1, 2, 3, 4
COMMANDS = ("check", "solve", "simulate", "converge", "probe")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mf-stackelberg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON configuration file")
        sp.add_argument("--out", default=None, help="output directory (default ./out)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--steps", type=int, help="override the number of grid steps")
        sp.add_argument("--n", type=int, help="override the population size (simulate, probe)")
        sp.add_argument("--runs", type=int, help="override the replication count")
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.steps is not None:
        changes["steps"] = args.steps
    if args.n is not None:
        changes["N"] = args.n
    if args.runs is not None:
        changes.update(runs=args.runs, runs_per_N=args.runs, probe_runs=args.runs)
    for key, minimum in (("seed", 0), ("steps", 2), ("N", 1), ("runs", 1)):
        if key in changes and changes[key] < minimum:
            raise ConfigError(f"--{key.lower()} must be at least {minimum}")
    return dataclasses.replace(cfg, **changes)


def _check(cfg, grid, out: Path) -> int:
    bs = assemble_blocks(cfg.model, compute_xi_terms(cfg.model), cfg.convention)
    report = solvability_scan(bs, grid)
    write_csv(out / "solvability.csv", ["t", "det"], report.rows())
    print(f"det at T/2 = {report.det_at(grid.T / 2):.6f}")
    print(f"min_det = {report.min_det:.6g}")
    report.require()
    print("solvability: pass")
    return EXIT_OK


def _solve(cfg, grid, out: Path) -> int:
    sm = analysis.solve_model(cfg.model, grid, cfg.convention)
    cs, fs = sm.coupling, sm.follower
    t = grid.times
    write_csv(out / "K.csv", matrix_header("K", cs.K.shape[1:]), matrix_rows(t, cs.K))
    write_csv(out / "kappa.csv", matrix_header("kappa", cs.kappa.shape[1:]), matrix_rows(t, cs.kappa))
    write_csv(out / "Pbar.csv", matrix_header("Pbar", fs.Pbar.shape[1:]), matrix_rows(t, fs.Pbar))
    print(f"det at T/2 = {sm.report.det_at(grid.T / 2):.6f}, min_det = {sm.report.min_det:.6g}")
    print(f"max |K| = {np.abs(cs.K).max():.6g}, K asymmetry = {cs.asymmetry:.6g}")
    print(f"max |kappa| = {np.abs(cs.kappa).max():.6g}, Pbar(0) max entry = {np.abs(fs.Pbar[0]).max():.6g}")
    return EXIT_OK


def _trajectory_rows(times, x0, xs):
    """Long format: the leader as agent_id "leader", then followers 0..N-1 at each node."""
    for k, t in enumerate(times):
        yield [t, "leader", *x0[k]]
        for i, x in enumerate(xs[k]):
            yield [t, i, *x]


def _simulate(cfg, grid, out: Path) -> int:
    sm = analysis.solve_model(cfg.model, grid, cfg.convention)
    sim = sm.simulator()
    p, N = cfg.model, cfg.N
    seeds = [run_seed(cfg.seed, r) for r in range(cfg.runs)]
    eps_all, cost_rows = [], []
    for idx in analysis.replication_chunks(cfg.runs):
        s = [seeds[r] for r in idx]
        xi0, dW0 = sim.leader_draws(s)
        X, Y = sim.mean_field(xi0, dW0)
        xi, dW = sim.agent_draws(s, N)
        res = sim.population(X, Y, xi0, dW0, xi, dW)
        if not (np.all(np.isfinite(res["eps"])) and np.all(np.isfinite(res["Ji"]))):
            raise NumericalError(f"run failed (N={N}, seed={s[0]}..): non-finite result")
        per = per_agent_costs(p, res["J0"], res["Ji"])
        for j, r in enumerate(idx):
            eps_all.append([N, r, *res["eps"][j]])
            Jsum = res["Ji"][j].sum()
            cost_rows.append([N, r, res["J0"][j], Jsum, p.alpha * N * res["J0"][j] + Jsum, per[j]])

    # replication 0: realized states per agent, plus the limiting path
    s0 = seeds[:1]
    xi0, dW0 = sim.leader_draws(s0)
    X, Y = sim.mean_field(xi0, dW0)
    xi, dW = sim.agent_draws(s0, N)
    tr = sim.population(X, Y, xi0, dW0, xi, dW, record=True)["traj"]
    n = p.n
    write_csv(out / "trajectory.csv", ["t", "agent_id"] + [f"x_{i}" for i in range(n)],
              _trajectory_rows(grid.times, tr["x0"][0], tr["xs"][0]))
    header = ["t"]
    for name in ("xhat", "xbar0", "x_avg", "p_avg", "k2"):
        header += [f"{name}_{i}" for i in range(n)]
    header += [f"u0_{i}" for i in range(p.m)]
    cols = np.concatenate([
        X[0, :, :n], X[0, :, n : 2 * n], tr["xs"][0].mean(axis=1),
        tr["p"][0].mean(axis=1), Y[0, :, 4 * n :], tr["u0"][0],
    ], axis=1)
    write_csv(out / "mean_field.csv", header, matrix_rows(grid.times, cols))
    write_csv(out / "errors.csv", ["N", "run", "eps1_sq", "eps2_sq", "eps3_sq"], eps_all)
    write_csv(out / "costs.csv", ["N", "run", "J0", "Ji_sum", "J_soc", "per_agent"], cost_rows)

    eps = np.array(eps_all)[:, 2:]
    per = np.array(cost_rows)[:, 5]
    print(f"N = {N}, runs = {cfg.runs}, seed = {cfg.seed}")
    print("mean eps1_sq, eps2_sq, eps3_sq = " + ", ".join(f"{v:.6g}" for v in eps.mean(axis=0)))
    print(f"mean J_soc/N = {per.mean():.6g}")
    return EXIT_OK


def _converge(cfg, grid, out: Path) -> int:
    sm = analysis.solve_model(cfg.model, grid, cfg.convention)
    rep = analysis.convergence_study(cfg.model, cfg.N_values, cfg.runs_per_N, grid, cfg.seed, solved=sm)
    header = ["N", "eps1_mean", "eps1_se", "eps2_mean", "eps2_se", "eps3_mean", "eps3_se"]
    write_csv(out / "convergence.csv", header, rep.rows())
    write_csv(out / "costs_by_N.csv", ["N", "J_soc_per_agent_mean", "J_soc_per_agent_se"],
              zip(rep.N_values, rep.cost_means, rep.cost_std_errors))
    if rep.slopes is None:
        slope_rows = [[name, "nan", rep.slope_note] for name in analysis.EPS_NAMES]
    else:
        slope_rows = [[name, s, ""] for name, s in zip(analysis.EPS_NAMES, rep.slopes)]
    write_csv(out / "slopes.csv", ["quantity", "slope", "note"], slope_rows)
    print(f"N values {rep.N_values}, {rep.runs_per_N} runs each, master seed {rep.master_seed}")
    for row in rep.rows():
        print("  N=%-4d " % row[0] + "  ".join(f"{v:.4g}" for v in row[1:]))
    if rep.slopes is None:
        print(f"slopes unavailable: {rep.slope_note}")
    else:
        print("slopes: " + ", ".join(f"{n}={s:.3f}" for n, s in zip(analysis.EPS_NAMES, rep.slopes)))
    return EXIT_OK


def _probe(cfg, grid, out: Path) -> int:
    sm = analysis.solve_model(cfg.model, grid, cfg.convention)
    pr = analysis.optimality_probe(cfg.model, cfg.N, cfg.directions, cfg.step, grid, cfg.seed,
                                   runs=cfg.probe_runs, solved=sm)
    write_csv(out / "probe.csv", ["direction_id", "target", "delta"], pr.rows())
    print(f"N = {pr.N}, directions = {pr.directions} per target, step = {pr.step}, runs = {pr.runs}")
    print(f"base J_soc/N = {pr.base_cost:.6g}, bound_estimate = {pr.bound_estimate:.6g}")
    print(f"max_gain = {pr.max_gain:.6g}, allowance = {pr.allowance:.6g}: {'pass' if pr.passed else 'FAIL'}")
    print(f"note: {pr.note}")
    return EXIT_OK


HANDLERS = {"check": _check, "solve": _solve, "simulate": _simulate, "converge": _converge, "probe": _probe}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        grid = TimeGrid(cfg.model.T, cfg.steps)
        out = Path(args.out or cfg.output_dir or "out")
        return HANDLERS[args.command](cfg, grid, out)
    except (ConfigError, ModelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolvabilityError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_UNSOLVABLE
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
