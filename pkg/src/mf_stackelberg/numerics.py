"""Small dense linear algebra, fixed-step backward integration and slope fitting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.linalg


class NumericalError(RuntimeError):
    """Raised when an integration leaves the finite range or a solve degenerates."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, T] with ``steps`` intervals."""

    T: float
    steps: int

    def __post_init__(self) -> None:
        if not np.isfinite(self.T) or self.T <= 0:
            raise ValueError(f"grid horizon must be positive, got {self.T}")
        if int(self.steps) != self.steps or self.steps < 2:
            raise ValueError(f"grid needs at least 2 steps, got {self.steps}")

    @property
    def t0(self) -> float:
        return 0.0

    @property
    def t1(self) -> float:
        return float(self.T)

    @property
    def dt(self) -> float:
        return self.T / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def __len__(self) -> int:
        return self.steps + 1

    def trapezoid_weights(self) -> np.ndarray:
        w = np.full(self.steps + 1, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def check_time(self, t: float) -> float:
        tol = 1e-12 * self.T
        if not (-tol <= t <= self.T + tol):
            raise ValueError(f"time {t} outside [0, {self.T}]")
        return min(max(float(t), 0.0), float(self.T))


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name}: expected a 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name}: non-finite entries")
    return arr


def matrix_exponential(a) -> np.ndarray:
    """Return e^A (scaling and squaring with a degree-13 Pade approximant)."""
    a = as_matrix(a, "matrix_exponential input")
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"dimension error: matrix_exponential needs a square matrix, got {a.shape}")
    if not a.any():
        return np.eye(a.shape[0])
    return scipy.linalg.expm(a)


def interpolate(grid: TimeGrid, values: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolation of a grid function (first axis indexes nodes)."""
    t = grid.check_time(t)
    s = t / grid.dt
    k = min(int(np.floor(s)), grid.steps - 1)
    w = s - k
    if w == 0.0:
        return values[k]
    if w == 1.0:
        return values[k + 1]
    return (1.0 - w) * values[k] + w * values[k + 1]


def integrate_backward(
    f: Callable[[float, np.ndarray], np.ndarray],
    terminal,
    grid: TimeGrid,
    *,
    post: Callable[[np.ndarray], np.ndarray] | None = None,
    label: str = "backward integration",
) -> np.ndarray:
    """March y' = f(t, y) from y(T) = terminal down to t = 0 with classical RK4.

    Returns an array whose first axis is the grid node. ``post`` is applied to
    each new node value (used for symmetrization).
    """
    y = np.array(terminal, dtype=float)
    out = np.empty((grid.steps + 1,) + y.shape)
    out[-1] = y
    h = -grid.dt
    times = grid.times
    for k in range(grid.steps, 0, -1):
        t = times[k]
        with np.errstate(over="ignore", invalid="ignore"):  # reported below
            k1 = f(t, y)
            k2 = f(t + h / 2, y + (h / 2) * k1)
            k3 = f(t + h / 2, y + (h / 2) * k2)
            k4 = f(times[k - 1], y + h * k3)
            y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if post is not None:
            y = post(y)
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"{label} blow-up at t={times[k - 1]:.6g}")
        out[k - 1] = y
    return out


def integrate_linear_ode_backward(
    rhs: Callable[[float], tuple[np.ndarray, np.ndarray]],
    terminal,
    grid: TimeGrid,
) -> np.ndarray:
    """Solve y' = coef(t) y + src(t) backward from y(T) = terminal.

    ``rhs(t)`` returns ``(coef, src)``; it is evaluated at nodes and midpoints.
    """
    terminal = np.asarray(terminal, dtype=float)
    coef, src = rhs(grid.t1)
    coef = np.asarray(coef)
    if coef.shape != (terminal.shape[0], terminal.shape[0]) or np.shape(src) != terminal.shape:
        raise ValueError(
            f"dimension mismatch: coef {coef.shape}, src {np.shape(src)}, terminal {terminal.shape}"
        )

    def f(t, y):
        c, s = rhs(t)
        return c @ y + s

    return integrate_backward(f, terminal, grid, label="linear ODE")


def loglog_slope(points: Sequence[tuple[float, float]]) -> tuple[float, float]:
    """Least-squares fit of ln y = slope * ln x + intercept."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise ValueError("slope fit needs at least 2 points")
    if not np.all(np.isfinite(pts)) or np.any(pts <= 0):
        raise ValueError("slope fit rejected: non-positive data")
    lx, ly = np.log(pts[:, 0]), np.log(pts[:, 1])
    design = np.column_stack([lx, np.ones_like(lx)])
    (slope, intercept), *_ = np.linalg.lstsq(design, ly, rcond=None)
    return float(slope), float(intercept)
