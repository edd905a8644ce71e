"""Decoupling the consistency system: Ybar = K X + kappa, follower p_i = Pbar xbar_i + phibar."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import BlockSystem, DET_THRESHOLD
from .model import ModelParams
from .numerics import (
    NumericalError,
    TimeGrid,
    integrate_backward,
    integrate_linear_ode_backward,
    interpolate,
    matrix_exponential,
)


class RepresentationSingular(NumericalError):
    pass


@dataclass(frozen=True, eq=False)
class CouplingSolution:
    """K and kappa on the grid.  ``Gbb`` is kept so Y = (K + Gbb) X + kappa can be rebuilt."""

    grid: TimeGrid
    K: np.ndarray
    kappa: np.ndarray
    Gbb: np.ndarray

    @property
    def asymmetry(self) -> float:
        """max_k ||K_k - K_k^T||_inf; K is not symmetric in general."""
        return float(np.max(np.abs(self.K - np.swapaxes(self.K, 1, 2))))

    def feedback(self) -> np.ndarray:
        """Node-wise matrices mapping X to Y."""
        return self.K + self.Gbb

    def backward_state(self, X: np.ndarray, t: float) -> np.ndarray:
        K = interpolate(self.grid, self.K, t)
        kappa = interpolate(self.grid, self.kappa, t)
        return (K + self.Gbb) @ X + kappa


@dataclass(frozen=True, eq=False)
class FollowerSolution:
    grid: TimeGrid
    Pbar: np.ndarray


def solve_K_representation(bs: BlockSystem, grid: TimeGrid, threshold: float = DET_THRESHOLD) -> np.ndarray:
    """K(t) = -[(0,I) e^{Abar(T-t)} (0;I)]^{-1} [(0,I) e^{Abar(T-t)} (I;0)] at every node."""
    s = bs.size
    if not bs.Abar21.any():
        # K = 0 solves the Riccati equation exactly; skip expm roundoff
        return np.zeros((len(grid), s, s))
    out = np.empty((len(grid), s, s))
    for k, t in enumerate(grid.times):
        E = matrix_exponential(bs.Abar * (grid.T - t))
        lower = E[s:, s:]
        if abs(np.linalg.det(lower)) <= threshold:
            raise RepresentationSingular(f"representation singular at t={t:.6g}")
        out[k] = -np.linalg.solve(lower, E[s:, :s])
    return out


def riccati_rhs(bs: BlockSystem):
    A11, A21, A22, B = bs.Abar11, bs.Abar21, bs.Abar22, bs.Bbb

    def f(t, K):
        return -(K @ A11 + K @ B @ K - A22 @ K - A21)

    return f


def solve_K_ode(bs: BlockSystem, grid: TimeGrid) -> np.ndarray:
    """RK4 integration of K' = -(K A11 + K Bbb K - A22 K - A21) from K(T) = 0."""
    return integrate_backward(riccati_rhs(bs), np.zeros((bs.size, bs.size)), grid, label="Riccati")


def riccati_residual(bs: BlockSystem, K: np.ndarray, grid: TimeGrid) -> float:
    """Max-norm of the Riccati equation with K' by central differences (interior nodes)."""
    f = riccati_rhs(bs)
    dK = (K[2:] - K[:-2]) / (2 * grid.dt)
    res = [np.max(np.abs(dK[j] - f(None, K[j + 1]))) for j in range(dK.shape[0])]
    return float(max(res))


def solve_kappa(bs: BlockSystem, K: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """Backward RK4 for kappa' = -(K Bbb - A22) kappa - K b + bbar2, kappa(T) = g.

    K at the RK4 midpoints is cubic Hermite in the node values and the Riccati
    slopes, which keeps the scheme fourth order.
    """
    A22, B = bs.Abar22, bs.Bbb
    b, src2 = bs.b, bs.bbar2
    f = riccati_rhs(bs)
    dK = np.array([f(None, Kk) for Kk in K])
    h = grid.dt

    def K_at(t):
        s = t / h
        k = int(round(s))
        if abs(s - k) < 1e-9:
            return K[k]
        k = min(int(np.floor(s)), grid.steps - 1)
        return 0.5 * (K[k] + K[k + 1]) + (h / 8) * (dK[k] - dK[k + 1])

    def rhs(t):
        Kt = K_at(t)
        return -(Kt @ B - A22), -(Kt @ b) + src2

    return integrate_linear_ode_backward(rhs, bs.g, grid)


def solve_coupling(bs: BlockSystem, grid: TimeGrid, method: str = "representation") -> CouplingSolution:
    if method == "representation":
        K = solve_K_representation(bs, grid)
    elif method == "ode":
        K = solve_K_ode(bs, grid)
    else:
        raise ValueError(f"unknown method {method!r}")
    return CouplingSolution(grid=grid, K=K, kappa=solve_kappa(bs, K, grid), Gbb=bs.Gbb)


def _sym(P):
    return 0.5 * (P + P.T)


def solve_follower_riccati(p: ModelParams, grid: TimeGrid) -> FollowerSolution:
    """Pbar' = -(Pbar A + A^T Pbar - Pbar B R^-1 B^T Pbar + Q), Pbar(T) = G."""
    A, Q = p.A, p.Q
    S = p.B @ np.linalg.solve(p.R, p.B.T)

    def f(t, P):
        return -(P @ A + A.T @ P - P @ S @ P + Q)

    Pbar = integrate_backward(f, p.G, grid, post=_sym, label="follower Riccati")
    return FollowerSolution(grid=grid, Pbar=Pbar)


def phi_bar(cs: CouplingSolution, fs: FollowerSolution, X_state: np.ndarray, t: float) -> np.ndarray:
    """Offset of the follower adjoint: k2(t) - Pbar(t) xhat(t).

    Averaging p_i = Pbar xbar_i + phibar over followers and passing to the limit
    gives phat = Pbar xhat + phibar, and phat coincides with k2 (last block of Y).
    """
    t = cs.grid.check_time(t)
    n = fs.Pbar.shape[1]
    Y = cs.backward_state(X_state, t)
    return Y[4 * n :] - interpolate(fs.grid, fs.Pbar, t) @ X_state[:n]
