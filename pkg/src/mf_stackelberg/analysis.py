"""Population-size sweeps and perturbation probes of the decentralized strategies."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .assembly import BlockSystem, Convention, SolvabilityReport, assemble_blocks, solvability_scan
from .model import ModelParams, compute_xi_terms, validate_params
from .numerics import NumericalError, TimeGrid, integrate_backward, loglog_slope
from .riccati import CouplingSolution, FollowerSolution, solve_coupling, solve_follower_riccati
from .simulate import Simulator, per_agent_costs
from .streams import PROBE, run_seed, stream

THREADS_ENV = "MF_STACKELBERG_THREADS"
CHUNK = 20  # replications per batch; fixed so results never depend on the worker count
EPS_NAMES = ("eps1_sq", "eps2_sq", "eps3_sq")
PROBE_NOTE = (
    "first-order check only: the infimum over centralized controls is not computed; "
    "bound_estimate = per-agent cost / sqrt(N) is a reporting convention"
)


@dataclass(frozen=True, eq=False)
class SolvedModel:
    p: ModelParams
    grid: TimeGrid
    blocks: BlockSystem
    report: SolvabilityReport
    coupling: CouplingSolution
    follower: FollowerSolution

    def simulator(self) -> Simulator:
        return Simulator(self.p, self.coupling, self.follower, self.blocks)


def solve_model(p: ModelParams, grid: TimeGrid, convention: Convention = "example", method: str = "representation") -> SolvedModel:
    """Validate, assemble, check solvability (raising ``SolvabilityError``) and decouple."""
    validate_params(p)
    if abs(grid.T - p.T) > 1e-12 * p.T:
        raise ValueError(f"grid horizon {grid.T} differs from model horizon {p.T}")
    bs = assemble_blocks(p, compute_xi_terms(p), convention)
    report = solvability_scan(bs, grid).require()
    cs = solve_coupling(bs, grid, method)
    fs = solve_follower_riccati(p, grid)
    return SolvedModel(p=p, grid=grid, blocks=bs, report=report, coupling=cs, follower=fs)


def worker_count(requested: int | None = None) -> int:
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, int(cap))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return max(1, n)


def replication_chunks(total: int):
    return [range(s, min(s + CHUNK, total)) for s in range(0, total, CHUNK)]


def _map(fn, items, workers: int):
    if workers == 1 or len(items) == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


@dataclass(frozen=True, eq=False)
class ConvergenceReport:
    N_values: list[int]
    means: np.ndarray  # (len(N_values), 3)
    std_errors: np.ndarray
    cost_means: np.ndarray  # J_soc / N per N
    cost_std_errors: np.ndarray
    slopes: tuple[float, float, float] | None
    runs_per_N: int
    master_seed: int
    slope_note: str = ""

    def rows(self):
        for j, N in enumerate(self.N_values):
            row = [N]
            for i in range(3):
                row += [self.means[j, i], self.std_errors[j, i]]
            yield row


def _mean_se(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    r = samples.shape[0]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(r) if r > 1 else np.zeros_like(mean)
    return mean, se


def convergence_study(
    p: ModelParams,
    N_values: list[int],
    runs_per_N: int,
    grid: TimeGrid,
    master_seed: int,
    workers: int | None = None,
    *,
    solved: SolvedModel | None = None,
    convention: Convention = "example",
) -> ConvergenceReport:
    """Monte Carlo means of the three squared errors for each population size.

    Replication r uses seed ``run_seed(master_seed, r)`` for every N, so the
    common noise and follower i's noise are shared across N.
    """
    N_values = [int(N) for N in N_values]
    if not N_values:
        raise ValueError("N_values must be nonempty")
    if any(b <= a for a, b in zip(N_values, N_values[1:])) or N_values[0] < 1:
        raise ValueError(f"N_values must be positive and strictly increasing, got {N_values}")
    if runs_per_N < 1:
        raise ValueError(f"runs_per_N must be positive, got {runs_per_N}")
    solved = solved or solve_model(p, grid, convention)
    sim = solved.simulator()
    seeds = [run_seed(master_seed, r) for r in range(runs_per_N)]
    n_max = N_values[-1]

    def job(idx: range):
        s = [seeds[r] for r in idx]
        xi0, dW0 = sim.leader_draws(s)
        X, Y = sim.mean_field(xi0, dW0)
        xi, dW = sim.agent_draws(s, n_max)
        eps = np.empty((len(idx), len(N_values), 3))
        cost = np.empty((len(idx), len(N_values)))
        for j, N in enumerate(N_values):
            res = sim.population(X, Y, xi0, dW0, xi[:, :N], dW[:, :, :N])
            c = per_agent_costs(p, res["J0"], res["Ji"])
            bad = ~(np.all(np.isfinite(res["eps"]), axis=1) & np.isfinite(c))
            if bad.any():
                r = idx[int(np.argmax(bad))]
                raise NumericalError(f"run failed (N={N}, seed={seeds[r]}): non-finite result")
            eps[:, j] = res["eps"]
            cost[:, j] = c
        return eps, cost

    parts = _map(job, replication_chunks(runs_per_N), worker_count(workers))
    eps = np.concatenate([e for e, _ in parts])
    cost = np.concatenate([c for _, c in parts])
    means, ses = _mean_se(eps)
    cmeans, cses = _mean_se(cost)

    slopes, note = None, ""
    try:
        slopes = tuple(loglog_slope(list(zip(N_values, means[:, i])))[0] for i in range(3))
    except ValueError as exc:
        note = str(exc)
    return ConvergenceReport(
        N_values=N_values, means=means, std_errors=ses, cost_means=cmeans, cost_std_errors=cses,
        slopes=slopes, runs_per_N=runs_per_N, master_seed=int(master_seed), slope_note=note,
    )


@dataclass(frozen=True, eq=False)
class OptimalityProbe:
    N: int
    directions: int
    step: float
    ids: list[int]
    targets: list[str]  # "leader" or "follower"
    deltas: np.ndarray  # change of J_soc / N, common noise
    base_cost: float
    bound_estimate: float
    half_deltas: np.ndarray | None = None
    note: str = PROBE_NOTE
    runs: int = 0

    @property
    def max_gain(self) -> float:
        """Most negative delta (0 when nothing improves)."""
        return float(min(0.0, self.deltas.min())) if self.deltas.size else 0.0

    @property
    def allowance(self) -> float:
        return self.bound_estimate * self.step

    @property
    def passed(self) -> bool:
        return self.max_gain >= -self.allowance

    def quadratic_split(self) -> tuple[np.ndarray, np.ndarray]:
        """(first-order, second-order) parts of each delta from the half-step run.

        With delta(s) = a s + b s^2, delta(s) - 2 delta(s/2) = b s^2 / 2.
        """
        if self.half_deltas is None:
            raise ValueError("probe was run without half-step deltas")
        second = 2.0 * (self.deltas - 2.0 * self.half_deltas)
        return self.deltas - second, second

    def rows(self):
        return zip(self.ids, self.targets, self.deltas)


def probe_direction(seed: int, index: int, grid: TimeGrid, m: int, pieces: int) -> np.ndarray:
    """Piecewise-constant direction on the nodes, shape (M+1, m), unit L2 norm under the trapezoid rule."""
    vals = stream(seed, PROBE, index).standard_normal((pieces, m))
    cell = np.minimum((grid.times / grid.T * pieces).astype(int), pieces - 1)
    v = vals[cell]
    norm = np.sqrt(grid.trapezoid_weights() @ np.sum(v * v, axis=1))
    return v / norm


def follower_response(bs: BlockSystem, grid: TimeGrid, du0: np.ndarray, B0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shift (dX, dY) of the limiting path when the leader adds the open-loop control du0.

    The followers' best response only involves the (xhat, xbar0) states and the
    (k1, k2) adjoints, a linear forward-backward system

        dx' = Af dx + Bf dk + src,   dk' = Cf dx + Df dk,   dk(T) = Gf dx(T),

    with src = (0, B0 du0).  It is decoupled by dk = Pi dx + pi.  The recursions
    for pi and dx use the same Euler steps as the path simulation.
    """
    n = bs.n
    ix, iy = np.r_[0 : 2 * n], np.r_[3 * n : 5 * n]
    Af, Bf = bs.Abb[np.ix_(ix, ix)], bs.Bbb[np.ix_(ix, iy)]
    Cf, Df = bs.Ahat[np.ix_(iy, ix)], bs.Bhat[np.ix_(iy, iy)]
    Gf = bs.Gbb[np.ix_(iy, ix)]
    Pi = integrate_backward(lambda t, P: Cf + Df @ P - P @ Af - P @ Bf @ P, Gf, grid, label="response Riccati")
    h, M = grid.dt, grid.steps
    src = np.zeros((M + 1, 2 * n))
    src[:, n:] = du0 @ np.asarray(B0).T
    pi = np.zeros((M + 1, 2 * n))
    for k in range(M, 0, -1):
        pi[k - 1] = pi[k] - h * (Df @ pi[k] - Pi[k] @ (Bf @ pi[k] + src[k - 1]))
    dx = np.zeros((M + 1, 2 * n))
    for k in range(M):
        dx[k + 1] = dx[k] + h * ((Af + Bf @ Pi[k]) @ dx[k] + Bf @ pi[k] + src[k])
    dX = np.zeros((M + 1, 5 * n))
    dY = np.zeros((M + 1, 5 * n))
    dX[:, ix] = dx
    dY[:, iy] = np.einsum("kij,kj->ki", Pi, dx) + pi
    return dX, dY


def optimality_probe(
    p: ModelParams,
    N: int,
    directions: int,
    step: float,
    grid: TimeGrid,
    seed: int,
    *,
    runs: int = 20,
    pieces: int = 12,
    follower: int = 0,
    half_step: bool = False,
    solved: SolvedModel | None = None,
    convention: Convention = "example",
    workers: int | None = None,
) -> OptimalityProbe:
    """Perturb the leader's and one follower's control along random directions.

    A leader perturbation is applied together with the followers' best
    response to it; a follower perturbation leaves everyone else unchanged.
    Each delta is the mean over ``runs`` replications of the change in J_soc/N,
    with the base and perturbed runs sharing all noise.
    """
    if not step >= 0:
        raise ValueError(f"step must be nonnegative, got {step}")
    if N < 1 or not 0 <= follower < N:
        raise ValueError(f"need 0 <= follower < N, got follower={follower}, N={N}")
    solved = solved or solve_model(p, grid, convention)
    sim = solved.simulator()
    seeds = [run_seed(seed, r) for r in range(runs)]
    xi0, dW0 = sim.leader_draws(seeds)
    X, Y = sim.mean_field(xi0, dW0)
    xi, dW = sim.agent_draws(seeds, N)

    def cost(du0=None, duf=None) -> np.ndarray:
        if du0 is None:
            res = sim.population(X, Y, xi0, dW0, xi, dW, du_follower=duf, follower=follower)
        else:
            dX, dY = follower_response(solved.blocks, grid, du0, p.B0)
            res = sim.population(X + dX, Y + dY, xi0, dW0, xi, dW, du0=du0, leader_in_path=True)
        return per_agent_costs(p, res["J0"], res["Ji"])

    base = cost()
    jobs = [(j, "leader") for j in range(directions)] + [(j, "follower") for j in range(directions)]

    def job(item):
        j, target = item
        index = j if target == "leader" else directions + j
        v = probe_direction(seed, index, grid, p.m, pieces)
        out = []
        for s in ((step, step / 2) if half_step else (step,)):
            du = s * v
            c = cost(du0=du) if target == "leader" else cost(duf=du)
            out.append(float(np.mean(c - base)))
        return out

    vals = _map(job, jobs, worker_count(workers))
    deltas = np.array([v[0] for v in vals])
    half = np.array([v[1] for v in vals]) if half_step else None
    base_cost = float(np.mean(base))
    return OptimalityProbe(
        N=N, directions=directions, step=float(step),
        ids=[j for j, _ in jobs], targets=[t for _, t in jobs],
        deltas=deltas, base_cost=base_cost, bound_estimate=base_cost / np.sqrt(N),
        half_deltas=half, runs=runs,
    )
