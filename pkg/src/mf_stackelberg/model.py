"""Problem data for the leader / N-follower LQ social-control model.

Leader state x0 and follower states xi evolve as

    dx0 = [A0 x0 + B0 u0 + C0 x^(N)] dt + D0 dW0
    dxi = [A xi + B ui + C x^(N) + F x0] dt + D dWi

with quadratic costs weighted by (Q0, R0, G0) for the leader and (Q, R, G)
for each follower; the social cost is alpha*N*J0 + sum_i Ji.  Coefficients
are constant in time.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any, Mapping

import numpy as np

EIG_TOL = 1e-10
DEFAULT_DELTA = 1e-8

MATRIX_FIELDS = (
    "A0", "B0", "C0", "D0", "A", "B", "C", "D", "F",
    "Q0", "R0", "G0", "Theta0", "ThetaHat0",
    "Q", "R", "G", "Theta", "Theta1", "ThetaHat", "ThetaHat1",
)
VECTOR_FIELDS = ("eta0", "etaHat0", "eta", "etaHat", "xi0_mean", "xi0_std", "xiHat", "xi_std")
SCALAR_FIELDS = ("alpha", "T")


class ModelError(ValueError):
    """Invalid model data."""


@dataclass(frozen=True, eq=False)
class ModelParams:
    A0: np.ndarray
    B0: np.ndarray
    C0: np.ndarray
    D0: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    F: np.ndarray
    Q0: np.ndarray
    R0: np.ndarray
    G0: np.ndarray
    Theta0: np.ndarray
    ThetaHat0: np.ndarray
    eta0: np.ndarray
    etaHat0: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    G: np.ndarray
    Theta: np.ndarray
    Theta1: np.ndarray
    ThetaHat: np.ndarray
    ThetaHat1: np.ndarray
    eta: np.ndarray
    etaHat: np.ndarray
    alpha: float
    T: float
    xi0_mean: np.ndarray
    xi0_std: np.ndarray
    xiHat: np.ndarray
    xi_std: np.ndarray

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def m(self) -> int:
        return self.B0.shape[1]

    @property
    def d(self) -> int:
        return self.D0.shape[1]

    def replace(self, **changes) -> "ModelParams":
        """Copy with some fields replaced; scalars and lists are coerced like ``from_mapping``."""
        n = changes["A0"].shape[0] if "A0" in changes and np.ndim(changes["A0"]) == 2 else self.n
        coerced = {k: _coerce(k, v, n, self.m) for k, v in changes.items()}
        return dataclasses.replace(self, **coerced)

    def to_mapping(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for name in MATRIX_FIELDS + VECTOR_FIELDS:
            out[name] = getattr(self, name).tolist()
        for name in SCALAR_FIELDS:
            out[name] = float(getattr(self, name))
        return out

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ModelParams":
        """Build from a mapping of plain numbers / nested lists.

        Scalars are promoted to 1x1 matrices or length-1 vectors (or to
        multiples of the identity / constant vectors when n > 1).  Missing
        coupling, offset and terminal fields default to zero; missing noise
        loadings default to zero and missing standard deviations to one.
        """
        unknown = set(data) - set(MATRIX_FIELDS + VECTOR_FIELDS + SCALAR_FIELDS)
        if unknown:
            raise ModelError(f"unknown key {sorted(unknown)[0]}")
        required = ("A0", "B0", "A", "B", "Q0", "R0", "Q", "R", "alpha", "T")
        for name in required:
            if name not in data:
                raise ModelError(f"missing model field {name}")
        a0 = np.array(data["A0"], dtype=float)
        n = a0.shape[0] if a0.ndim == 2 else 1
        b0 = np.array(data["B0"], dtype=float)
        m = b0.shape[1] if b0.ndim == 2 else 1
        if "D0" in data:
            d = _coerce("D0", data["D0"], n).shape[1]
        elif "D" in data:
            d = _coerce("D", data["D"], n).shape[1]
        else:
            d = n
        values: dict[str, Any] = {}
        for name in MATRIX_FIELDS:
            if name in data:
                values[name] = _coerce(name, data[name], n, m)
            elif name in ("D0", "D"):
                values[name] = np.zeros((n, d))
            elif name == "B":
                values[name] = np.zeros((n, m))
            else:
                values[name] = np.zeros((n, n))
        for name in VECTOR_FIELDS:
            default = 1.0 if name.endswith("_std") else 0.0
            values[name] = _coerce(name, data.get(name, default), n)
        values["alpha"] = float(data["alpha"])
        values["T"] = float(data["T"])
        return cls(**values)


def _coerce(name: str, value: Any, n: int, m: int = 1):
    if name in SCALAR_FIELDS:
        return float(value)
    arr = np.array(value, dtype=float)
    if name in VECTOR_FIELDS:
        if arr.ndim == 0:
            return np.full(n, float(arr))
        return arr.reshape(-1)
    if arr.ndim == 0:
        return float(arr) * np.eye(m if name in ("R0", "R") else n)
    if arr.ndim == 1:
        return arr.reshape(m, -1) if name in ("R0", "R") else arr.reshape(n, -1)
    return arr


def example51(**overrides) -> ModelParams:
    """The scalar numerical example (T = 12, alpha = 1.02).

    The initial laws (leader mean 0 std 1, followers mean 0 std 1) are
    configuration defaults; no initial law is fixed by the model itself.
    """
    data = dict(
        A0=0.1, B0=1.0, C0=0.01, D0=1.0,
        A=0.05, B=1.0, C=0.05, D=1.0, F=0.3,
        Theta0=1.0, Q0=1.0, R0=10.0, G0=0.0,
        Theta=0.1, Theta1=1.0, Q=0.9, R=15.0, G=0.0,
        alpha=1.02, T=12.0, eta0=0.0, eta=0.0,
        xi0_mean=0.0, xi0_std=1.0, xiHat=0.0, xi_std=1.0,
    )
    data.update(overrides)
    return ModelParams.from_mapping(data)


def _check_shape(p: ModelParams, name: str, shape: tuple[int, ...]) -> None:
    arr = getattr(p, name)
    if np.shape(arr) != shape:
        raise ModelError(f"shape error: {name} has shape {np.shape(arr)}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"shape error: {name} has non-finite entries")


def _symmetric(p: ModelParams, name: str) -> np.ndarray:
    w = getattr(p, name)
    if np.max(np.abs(w - w.T), initial=0.0) > EIG_TOL:
        raise ModelError(f"weight not symmetric: {name}")
    return 0.5 * (w + w.T)


def validate_params(p: ModelParams, delta: float = DEFAULT_DELTA) -> ModelParams:
    """Check dimensions and the standing sign conditions; return ``p`` unchanged."""
    if not delta > 0:
        raise ModelError(f"delta must be positive, got {delta}")
    if p.A0.ndim != 2 or p.B0.ndim != 2 or p.D0.ndim != 2:
        raise ModelError("shape error: A0, B0, D0 must be matrices")
    n, m, d = p.n, p.m, p.d
    for name in ("A0", "C0", "A", "C", "F", "Q0", "G0", "Theta0", "ThetaHat0",
                 "Q", "G", "Theta", "Theta1", "ThetaHat", "ThetaHat1"):
        _check_shape(p, name, (n, n))
    for name in ("B0", "B"):
        _check_shape(p, name, (n, m))
    for name in ("D0", "D"):
        _check_shape(p, name, (n, d))
    for name in ("R0", "R"):
        _check_shape(p, name, (m, m))
    for name in VECTOR_FIELDS:
        _check_shape(p, name, (n,))

    for name in ("Q0", "G0", "Q", "G"):
        w = _symmetric(p, name)
        if np.linalg.eigvalsh(w).min() < -EIG_TOL:
            raise ModelError(f"{name} not positive semidefinite")
    for name in ("R0", "R"):
        w = _symmetric(p, name)
        if np.linalg.eigvalsh(w).min() <= delta + EIG_TOL:
            raise ModelError(f"{name} not uniformly positive")

    if not (np.isfinite(p.alpha) and p.alpha > 0):
        raise ModelError(f"alpha must be positive, got {p.alpha}")
    if not (np.isfinite(p.T) and p.T > 0):
        raise ModelError(f"T must be positive, got {p.T}")
    if np.any(p.xi0_std < 0) or np.any(p.xi_std < 0):
        raise ModelError("initial standard deviations must be nonnegative")
    return p


@dataclass(frozen=True, eq=False)
class XiTerms:
    """Aggregated cost weights of the limiting consistency system.

    ``Xi3``/``Xi5`` and their terminal counterparts are vectors; the rest are
    n x n matrices.
    """

    Xi1: np.ndarray
    Xi2: np.ndarray
    Xi3: np.ndarray
    Xi4: np.ndarray
    Xi5: np.ndarray
    Xi1G: np.ndarray
    Xi2G: np.ndarray
    Xi3G: np.ndarray
    Xi4G: np.ndarray
    Xi5G: np.ndarray


def compute_xi_terms(p: ModelParams) -> XiTerms:
    eye = np.eye(p.n)
    a = p.alpha
    Q, Q0, G, G0 = p.Q, p.Q0, p.G, p.G0
    th, th1, th0 = p.Theta, p.Theta1, p.Theta0
    tH, tH1, tH0 = p.ThetaHat, p.ThetaHat1, p.ThetaHat0
    return XiTerms(
        Xi1=(eye - th.T) @ Q @ (eye - th) + a * th0.T @ Q0 @ th0,
        Xi2=(eye - th.T) @ Q @ th1 + a * th0.T @ Q0,
        Xi3=(eye - th.T) @ Q @ p.eta - a * th0.T @ Q0 @ p.eta0,
        Xi4=th1.T @ Q @ th1 + a * Q0,
        Xi5=th1.T @ Q @ p.eta - a * Q0 @ p.eta0,
        Xi1G=(eye - tH.T) @ G @ (eye - tH) + a * tH0.T @ G0 @ tH0,
        Xi2G=(eye - tH.T) @ G @ tH1 + a * tH0.T @ G0,
        Xi3G=(eye - tH.T) @ G @ p.etaHat - a * tH0.T @ G0 @ p.etaHat0,
        Xi4G=tH1.T @ G @ tH1 + a * G0,
        Xi5G=tH1.T @ G @ p.etaHat - a * G0 @ p.etaHat0,
    )
