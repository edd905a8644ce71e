"""Monte Carlo simulation of the limiting path and of the realized N-follower population.

All stepping is Euler-Maruyama on the shared grid.  Internally every routine
works on a batch of independent replications (leading axis R); the public
single-run functions are thin wrappers over a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import BlockSystem
from .model import ModelParams
from .numerics import TimeGrid
from .riccati import CouplingSolution, FollowerSolution
from .streams import agent_noise, leader_noise


@dataclass(frozen=True, eq=False)
class MeanFieldPath:
    """One common-noise realization of X = (xhat, xbar0, q, l1, l2) and Y = (y, yhat, y0, k1, k2)."""

    grid: TimeGrid
    X: np.ndarray
    Y: np.ndarray
    W0_increments: np.ndarray
    seed: int

    @property
    def n(self) -> int:
        return self.X.shape[1] // 5

    def blk(self, arr: np.ndarray, i: int) -> np.ndarray:
        return arr[:, i * self.n : (i + 1) * self.n]

    @property
    def xhat(self) -> np.ndarray:
        return self.blk(self.X, 0)

    @property
    def xbar0(self) -> np.ndarray:
        return self.blk(self.X, 1)

    @property
    def y0(self) -> np.ndarray:
        return self.blk(self.Y, 2)

    @property
    def k2(self) -> np.ndarray:
        return self.blk(self.Y, 4)


@dataclass(frozen=True, eq=False)
class PopulationRun:
    N: int
    grid: TimeGrid
    x0_star: np.ndarray  # (M+1, n)
    xi_star: np.ndarray  # (M+1, N, n)
    xbar_i: np.ndarray  # (M+1, N, n)
    p_i: np.ndarray  # (M+1, N, n)
    u0_star: np.ndarray  # (M+1, m)
    u_i: np.ndarray  # (M+1, N, m)
    seed: int
    path: MeanFieldPath | None = None
    errors: "ErrorReport | None" = None  # accumulated on the deviations during stepping

    @property
    def x_avg(self) -> np.ndarray:
        return self.xi_star.mean(axis=1)


@dataclass(frozen=True)
class ErrorReport:
    """Time-integrated squared errors of one run.

    eps1_sq: realized follower average vs xhat; eps2_sq: realized leader vs
    xbar0; eps3_sq: average follower adjoint vs k2.
    """

    eps1_sq: float
    eps2_sq: float
    eps3_sq: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.eps1_sq, self.eps2_sq, self.eps3_sq)


@dataclass(frozen=True)
class CostReport:
    N: int
    J0: float
    Ji_sum: float
    alpha: float

    @property
    def J_soc(self) -> float:
        return self.alpha * self.N * self.J0 + self.Ji_sum

    @property
    def per_agent(self) -> float:
        return self.J_soc / self.N


def _quad(v: np.ndarray, W: np.ndarray) -> np.ndarray:
    return np.einsum("...i,ij,...j->...", v, W, v)


def leader_running_cost(p: ModelParams, x0, x_avg, u0):
    e = x0 - x_avg @ p.Theta0.T - p.eta0
    return _quad(e, p.Q0) + _quad(u0, p.R0)


def leader_terminal_cost(p: ModelParams, x0, x_avg):
    e = x0 - x_avg @ p.ThetaHat0.T - p.etaHat0
    return _quad(e, p.G0)


def follower_running_cost(p: ModelParams, xi, x_avg, x0, ui):
    """xi, ui carry an agent axis before the state axis; x_avg, x0 do not."""
    off = x_avg @ p.Theta.T + x0 @ p.Theta1.T + p.eta
    e = xi - off[..., None, :]
    return _quad(e, p.Q) + _quad(ui, p.R)


def follower_terminal_cost(p: ModelParams, xi, x_avg, x0):
    off = x_avg @ p.ThetaHat.T + x0 @ p.ThetaHat1.T + p.etaHat
    e = xi - off[..., None, :]
    return _quad(e, p.G)


class Simulator:
    """Precomputed coefficients for repeated batched simulation of one model."""

    def __init__(
        self,
        p: ModelParams,
        cs: CouplingSolution,
        fs: FollowerSolution | None = None,
        bs: BlockSystem | None = None,
    ):
        if fs is not None and cs.grid != fs.grid:
            raise ValueError("grid mismatch between coupling and follower solutions")
        self.p, self.bs, self.cs, self.fs = p, bs, cs, fs
        self.grid = cs.grid
        self.n = p.n
        self.gain = np.linalg.solve(p.R, p.B.T)  # u_i = -gain p_i
        self.gain0 = np.linalg.solve(p.alpha * p.R0, p.B0.T)  # u0 = -gain0 y0
        if bs is not None:
            self.feedback = cs.feedback()  # Y = feedback X + kappa
            self.drift = bs.Abb + bs.Bbb @ self.feedback
            self.offset = cs.kappa @ bs.Bbb.T + bs.b

    # -- noise -----------------------------------------------------------
    def leader_draws(self, seeds):
        p, g = self.p, self.grid
        out = [leader_noise(s, p.xi0_mean, p.xi0_std, p.d, g.steps, g.dt) for s in seeds]
        return np.array([o[0] for o in out]), np.array([o[1] for o in out])

    def agent_draws(self, seeds, N: int):
        p, g = self.p, self.grid
        out = [agent_noise(s, N, p.xiHat, p.xi_std, p.d, g.steps, g.dt) for s in seeds]
        return np.array([o[0] for o in out]), np.array([o[1] for o in out])

    # -- limiting path ---------------------------------------------------
    def mean_field(self, xi0: np.ndarray, dW0: np.ndarray):
        """X, Y of shape (R, M+1, 5n) for leader initial states xi0 (R, n) and increments dW0 (R, M, d)."""
        p, g, bs = self.p, self.grid, self.bs
        if bs is None:
            raise ValueError("limiting path needs the block system")
        R, n = xi0.shape[0], self.n
        X = np.empty((R, g.steps + 1, 5 * n))
        x = np.zeros((R, 5 * n))
        x[:, :n] = p.xiHat
        x[:, n : 2 * n] = xi0
        X[:, 0] = x
        noise = dW0 @ bs.Dbb.T
        dt = g.dt
        for k in range(g.steps):
            x = x + (x @ self.drift[k].T + self.offset[k]) * dt + noise[:, k]
            X[:, k + 1] = x
        Y = np.einsum("kij,rkj->rki", self.feedback, X) + self.cs.kappa
        return X, Y

    # -- realized population --------------------------------------------
    def population(
        self,
        X: np.ndarray,
        Y: np.ndarray,
        xi0: np.ndarray,
        dW0: np.ndarray,
        xi: np.ndarray,
        dW: np.ndarray,
        *,
        record: bool = False,
        du0: np.ndarray | None = None,
        du_follower: np.ndarray | None = None,
        follower: int = 0,
        leader_in_path: bool = False,
    ) -> dict:
        """Simulate realized leader/follower states driven by the decentralized strategies.

        X, Y: (R, M+1, 5n) limiting paths; xi0: (R, n); dW0: (R, M, d);
        xi: (R, N, n); dW: (R, M, N, d).  ``du0`` / ``du_follower`` are
        deterministic control perturbations on the nodes (M+1, m) added to the
        leader's / one follower's realized control.  With ``leader_in_path``
        the limiting path X already carries the effect of ``du0`` on xbar0, so
        it is not added to the leader deviation again.

        Returns time-integrated errors and costs per replication, plus full
        trajectories when ``record`` is set.
        """
        if self.fs is None:
            raise ValueError("population simulation needs the follower solution")
        p, g, n = self.p, self.grid, self.n
        dt, M = g.dt, g.steps
        R, N = xi.shape[0], xi.shape[1]
        w = g.trapezoid_weights()
        A, B, C, D, F = p.A, p.B, p.C, p.D, p.F
        A0, B0, C0 = p.A0, p.B0, p.C0
        S = B @ self.gain

        # Deviations from the limiting path: d0 = x0 - xbar0, ds_i = x_i - xhat,
        # db_i = xbar_i - xhat.  The common noise cancels from d0 and ds_i.
        d0 = xi0 - X[:, 0, n : 2 * n]
        ds = xi - X[:, 0, None, :n]
        db = ds.copy()
        noise = dW @ D.T

        eps = np.zeros((R, 3))
        J0 = np.zeros(R)
        Ji = np.zeros((R, N))
        if record:
            traj = {
                "x0": np.empty((R, M + 1, n)),
                "xs": np.empty((R, M + 1, N, n)),
                "xb": np.empty((R, M + 1, N, n)),
                "p": np.empty((R, M + 1, N, n)),
                "u0": np.empty((R, M + 1, p.m)),
                "u": np.empty((R, M + 1, N, p.m)),
            }

        for k in range(M + 1):
            xhat = X[:, k, :n]
            xbar0 = X[:, k, n : 2 * n]
            y0 = Y[:, k, 2 * n : 3 * n]
            k2 = Y[:, k, 4 * n :]
            P = self.fs.Pbar[k]
            Pdb = db @ P.T  # p_i - k2
            u_bar = -(Pdb + k2[:, None, :]) @ self.gain.T
            u = u_bar
            if du_follower is not None:
                u = u_bar.copy()
                u[:, follower] += du_follower[k]
            u0 = -y0 @ self.gain0.T
            if du0 is not None:
                u0 = u0 + du0[k]
            ds_avg = ds.mean(axis=1)
            x0 = xbar0 + d0
            xs = xhat[:, None, :] + ds
            x_avg = xhat + ds_avg

            eps[:, 0] += w[k] * np.sum(ds_avg**2, axis=-1)
            eps[:, 1] += w[k] * np.sum(d0**2, axis=-1)
            eps[:, 2] += w[k] * np.sum(Pdb.mean(axis=1) ** 2, axis=-1)
            J0 += w[k] * leader_running_cost(p, x0, x_avg, u0)
            Ji += w[k] * follower_running_cost(p, xs, x_avg, x0, u)
            if record:
                traj["x0"][:, k] = x0
                traj["xs"][:, k] = xs
                traj["xb"][:, k] = xhat[:, None, :] + db
                traj["p"][:, k] = Pdb + k2[:, None, :]
                traj["u0"][:, k] = u0
                traj["u"][:, k] = u
            if k == M:
                J0 += leader_terminal_cost(p, x0, x_avg)
                Ji += follower_terminal_cost(p, xs, x_avg, x0)
                break

            fb = db @ (A - S @ P).T
            ds_next = ds + (ds @ A.T - Pdb @ S.T + (ds_avg @ C.T + d0 @ F.T)[:, None, :]) * dt + noise[:, k]
            if du_follower is not None:
                ds_next[:, follower] += (du_follower[k] @ B.T) * dt
            d0_next = d0 + (d0 @ A0.T + ds_avg @ C0.T) * dt
            if du0 is not None and not leader_in_path:
                d0_next += (du0[k] @ B0.T) * dt
            db = db + fb * dt + noise[:, k]
            ds, d0 = ds_next, d0_next

        out = {"eps": eps, "J0": J0, "Ji": Ji}
        if record:
            out["traj"] = traj
        return out


def _check_grid(grid: TimeGrid, *others) -> None:
    for o in others:
        if o.grid != grid:
            raise ValueError(f"grid mismatch: {o.grid} vs {grid}")


def sample_mean_field_path(
    bs: BlockSystem, cs: CouplingSolution, p: ModelParams, grid: TimeGrid, seed: int
) -> MeanFieldPath:
    _check_grid(grid, cs)
    sim = Simulator(p, cs, bs=bs)
    xi0, dW0 = sim.leader_draws([seed])
    X, Y = sim.mean_field(xi0, dW0)
    return MeanFieldPath(grid=grid, X=X[0], Y=Y[0], W0_increments=dW0[0], seed=seed)


def simulate_population(
    mf: MeanFieldPath,
    fs: FollowerSolution,
    cs: CouplingSolution,
    p: ModelParams,
    N: int,
    seed: int | None = None,
) -> PopulationRun:
    """Realized leader and N followers along the common-noise path ``mf``.

    Follower noise comes from streams keyed by ``seed`` (default: the path's
    seed) and the follower index.
    """
    if N < 1:
        raise ValueError(f"population size must be at least 1, got {N}")
    _check_grid(mf.grid, fs, cs)
    seed = mf.seed if seed is None else seed
    sim = Simulator(p, cs, fs)
    g = mf.grid
    xi0 = mf.xbar0[0][None]
    xi, dW = sim.agent_draws([seed], N)
    res = sim.population(mf.X[None], mf.Y[None], xi0, mf.W0_increments[None], xi, dW, record=True)
    t = {k: v[0] for k, v in res["traj"].items()}
    return PopulationRun(
        N=N, grid=g, x0_star=t["x0"], xi_star=t["xs"], xbar_i=t["xb"], p_i=t["p"],
        u0_star=t["u0"], u_i=t["u"], seed=seed, path=mf, errors=ErrorReport(*map(float, res["eps"][0])),
    )


def compute_errors(run: PopulationRun, mf: MeanFieldPath) -> ErrorReport:
    """Squared errors of ``run`` against ``mf``; exact values when ``run`` was simulated along ``mf``."""
    _check_grid(run.grid, mf)
    if run.path is mf and run.errors is not None:
        return run.errors
    w = run.grid.trapezoid_weights()
    e1 = np.sum((run.x_avg - mf.xhat) ** 2, axis=-1)
    e2 = np.sum((run.x0_star - mf.xbar0) ** 2, axis=-1)
    e3 = np.sum((run.p_i.mean(axis=1) - mf.k2) ** 2, axis=-1)
    return ErrorReport(float(w @ e1), float(w @ e2), float(w @ e3))


def evaluate_social_cost(run: PopulationRun, p: ModelParams) -> CostReport:
    w = run.grid.trapezoid_weights()
    x_avg = run.x_avg
    J0 = w @ leader_running_cost(p, run.x0_star, x_avg, run.u0_star)
    J0 += leader_terminal_cost(p, run.x0_star[-1], x_avg[-1])
    Ji = w @ follower_running_cost(p, run.xi_star, x_avg, run.x0_star, run.u_i)
    Ji = Ji + follower_terminal_cost(p, run.xi_star[-1], x_avg[-1], run.x0_star[-1])
    return CostReport(N=run.N, J0=float(J0), Ji_sum=float(np.sum(Ji)), alpha=p.alpha)


def per_agent_costs(p: ModelParams, J0: np.ndarray, Ji: np.ndarray) -> np.ndarray:
    """J_soc / N for batched results (J0: (R,), Ji: (R, N))."""
    return p.alpha * J0 + Ji.mean(axis=-1)
