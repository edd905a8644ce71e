from __future__ import annotations

import numpy as np
import pytest

from mf_stackelberg.analysis import solve_model
from mf_stackelberg.model import ModelParams, example51
from mf_stackelberg.numerics import TimeGrid


@pytest.fixture(scope="session")
def ex51():
    return example51()


@pytest.fixture(scope="session")
def grid2400():
    return TimeGrid(12.0, 2400)


@pytest.fixture(scope="session")
def solved51(ex51, grid2400):
    return solve_model(ex51, grid2400)


def random_model(rng: np.random.Generator, n: int = 2, m: int = 1, d: int = 1, scale: float = 0.3) -> ModelParams:
    """Small well-conditioned model with every coefficient populated."""

    def mat(r=n, c=n):
        return scale * rng.standard_normal((r, c))

    def psd():
        a = rng.standard_normal((n, n))
        return 0.5 * a @ a.T / n

    def pd(k):
        a = rng.standard_normal((k, k))
        return a @ a.T / k + np.eye(k)

    return ModelParams.from_mapping(dict(
        A0=mat(), B0=mat(n, m), C0=mat(), D0=mat(n, d),
        A=mat(), B=mat(n, m), C=mat(), D=mat(n, d), F=mat(),
        Q0=psd(), R0=pd(m), G0=psd(), Theta0=mat(), ThetaHat0=mat(),
        Q=psd(), R=pd(m), G=psd(), Theta=mat(), Theta1=mat(), ThetaHat=mat(), ThetaHat1=mat(),
        eta0=rng.standard_normal(n), etaHat0=rng.standard_normal(n),
        eta=rng.standard_normal(n), etaHat=rng.standard_normal(n),
        alpha=1.0 + rng.random(), T=1.0,
        xi0_mean=rng.standard_normal(n), xiHat=rng.standard_normal(n),
    ))


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
