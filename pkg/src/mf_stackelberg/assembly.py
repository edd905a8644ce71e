"""Block form of the limiting consistency system and its solvability test.

Forward variables X = (xhat, xbar0, q, l1, l2) and backward variables
Y = (y, yhat, y0, k1, k2), each block of size n, satisfy

    dX = (Abb X + Bbb Y + b) dt + Dbb dW0,         X(0) = (xiHat, xi0, 0, 0, 0)
    dY = (Ahat X + Bhat Y + bhat) dt + (...) dW0,  Y(T) = Gbb X(T) + g

With Ybar = Y - Gbb X the pair (X, Ybar) is driven by the 10n x 10n matrix
``Abar`` and Ybar(T) = g.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .model import ModelParams, XiTerms
from .numerics import TimeGrid, matrix_exponential

DET_THRESHOLD = 1e-8


class SolvabilityError(RuntimeError):
    """The determinant condition fails somewhere on [0, T]."""

# Three sign conventions for the terms coupling q into (yhat, l1, l2):
#   "example"   yhat <- -(Xi1 + Q)^T q, l1 <- -C0 q, l2 <- -C q.  Reproduces the
#               published example matrices and det = 12.7053 at t = 6.
#   "general"   yhat <- -(Xi1 - Q)^T q, l1 <- -C0 q, l2 <- -C q.  The general
#               consistency system as stated.
#   "corrected" yhat <- -(Xi1 - Q)^T q, l1 <- +C0 q, l2 <- +C q.  Obtained by
#               redoing the duality computation for the leader's adjoints; in the
#               noise-free case it attains the centralized LQ optimum.
Convention = Literal["example", "general", "corrected"]
CONVENTIONS = ("example", "general", "corrected")


@dataclass(frozen=True, eq=False)
class BlockSystem:
    n: int
    Abb: np.ndarray
    Bbb: np.ndarray
    b: np.ndarray
    Dbb: np.ndarray
    Ahat: np.ndarray
    Bhat: np.ndarray
    bhat: np.ndarray
    Gbb: np.ndarray
    g: np.ndarray
    Abar: np.ndarray
    bbar: np.ndarray
    convention: str = "example"

    def block(self, i: int) -> slice:
        return slice(i * self.n, (i + 1) * self.n)

    @property
    def size(self) -> int:
        return 5 * self.n

    @property
    def Abar11(self) -> np.ndarray:
        return self.Abar[: self.size, : self.size]

    @property
    def Abar21(self) -> np.ndarray:
        return self.Abar[self.size :, : self.size]

    @property
    def Abar22(self) -> np.ndarray:
        return self.Abar[self.size :, self.size :]

    @property
    def bbar2(self) -> np.ndarray:
        return self.bbar[self.size :]


def _blocks(rows, n: int) -> np.ndarray:
    return np.block([[np.zeros((n, n)) if isinstance(e, int) else e for e in row] for row in rows])


def assemble_blocks(p: ModelParams, xi: XiTerms, convention: Convention = "example") -> BlockSystem:
    if convention not in CONVENTIONS:
        raise ValueError(f"convention must be one of {', '.join(CONVENTIONS)}; got {convention!r}")
    n = p.n
    eye = np.eye(n)
    A, C, F, A0, C0 = p.A, p.C, p.F, p.A0, p.C0
    Q, G = p.Q, p.G
    S = p.B @ np.linalg.solve(p.R, p.B.T)
    S0 = p.B0 @ np.linalg.solve(p.alpha * p.R0, p.B0.T)
    X1, X2, X3, X4, X5 = xi.Xi1, xi.Xi2, xi.Xi3, xi.Xi4, xi.Xi5
    X1G, X2G, X3G, X4G, X5G = xi.Xi1G, xi.Xi2G, xi.Xi3G, xi.Xi4G, xi.Xi5G
    AC = A + C
    lq = 1.0 if convention == "corrected" else -1.0

    Abb = _blocks([
        [AC, F, 0, 0, 0],
        [C0, A0, 0, 0, 0],
        [0, 0, A, 0, 0],
        [0, 0, lq * C0, A0, C0],
        [0, 0, lq * C, F, AC],
    ], n)
    Bbb = _blocks([
        [0, 0, 0, 0, -S],
        [0, 0, -S0, 0, 0],
        [S, 0, 0, 0, -S],
        [0, 0, 0, 0, 0],
        [0, -S, 0, 0, 0],
    ], n)
    b = np.zeros(5 * n)
    Dbb = np.zeros((5 * n, p.d))
    Dbb[n : 2 * n] = p.D0

    yhat_q = -(X1 + Q).T if convention == "example" else -(X1 - Q).T
    Ahat = _blocks([
        [-Q @ (eye - p.Theta), Q @ p.Theta1, Q.T, 0, 0],
        [X1 - Q @ (eye - p.Theta), -X2 + Q @ p.Theta1, yhat_q, X2, -X1.T],
        [X2.T, -X4, -X2.T, X4.T, -X2.T],
        [X2.T, -X4, 0, 0, 0],
        [-X1, X2, 0, 0, 0],
    ], n)
    Bhat = _blocks([
        [-A.T, 0, 0, 0, 0],
        [C.T, -AC.T, C0.T, 0, 0],
        [-F.T, F.T, -A0.T, 0, 0],
        [0, 0, 0, -A0.T, -F.T],
        [0, 0, 0, -C0.T, -AC.T],
    ], n)
    q_eta = Q @ p.eta
    bhat = np.concatenate([q_eta, -X3 + q_eta, -X5, -X5, X3])

    Gbb = _blocks([
        [G @ (eye - p.ThetaHat), -G @ p.ThetaHat1, -G, 0, 0],
        [-X1G + G @ (eye - p.ThetaHat), X2G - G @ p.ThetaHat1, (X1G - G).T, -X2G.T, X1G.T],
        [-X2G.T, X4G, X2G.T, -X4G.T, X2G.T],
        [-X2G.T, X4G, 0, 0, 0],
        [X1G, -X2G, 0, 0, 0],
    ], n)
    g_eta = G @ p.etaHat
    g = np.concatenate([-g_eta, X3G - g_eta, X5G, X5G, -X3G])

    # Ybar = Y - Gbb X; the lower-left block carries -Gbb Bbb Gbb from that substitution.
    Abar = np.block([
        [Abb + Bbb @ Gbb, Bbb],
        [Ahat - Gbb @ Abb + Bhat @ Gbb - Gbb @ Bbb @ Gbb, Bhat - Gbb @ Bbb],
    ])
    bbar = np.concatenate([b, bhat - Gbb @ b])
    return BlockSystem(
        n=n, Abb=Abb, Bbb=Bbb, b=b, Dbb=Dbb, Ahat=Ahat, Bhat=Bhat, bhat=bhat,
        Gbb=Gbb, g=g, Abar=Abar, bbar=bbar, convention=convention,
    )


def coupled_lower_block(bs: BlockSystem, t: float) -> np.ndarray:
    """(0, I) e^{Abar t} (0; I)."""
    s = bs.size
    return matrix_exponential(bs.Abar * t)[s:, s:]


@dataclass(frozen=True, eq=False)
class SolvabilityReport:
    grid: TimeGrid
    det_values: np.ndarray
    threshold: float = DET_THRESHOLD

    @property
    def min_det(self) -> float:
        return float(self.det_values.min())

    @property
    def passed(self) -> bool:
        return bool(np.all(self.det_values > self.threshold))

    def det_at(self, t: float) -> float:
        k = int(round(self.grid.check_time(t) / self.grid.dt))
        return float(self.det_values[k])

    def rows(self):
        return zip(self.grid.times, self.det_values)

    def require(self) -> "SolvabilityReport":
        if not self.passed:
            k = int(np.argmin(self.det_values))
            raise SolvabilityError(
                f"system not solvable on [0,T]: det={self.det_values[k]:.6g} at t={self.grid.times[k]:.6g}"
            )
        return self


def solvability_scan(bs: BlockSystem, grid: TimeGrid, threshold: float = DET_THRESHOLD) -> SolvabilityReport:
    """Evaluate det{(0,I) e^{Abar t} (0;I)} at every node of ``grid``."""
    # Overflow yields inf/nan, which fails the threshold test below.
    with np.errstate(over="ignore", invalid="ignore"):
        dets = np.array([np.linalg.det(coupled_lower_block(bs, t)) for t in grid.times])
    return SolvabilityReport(grid=grid, det_values=dets, threshold=threshold)
