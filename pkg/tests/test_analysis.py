from __future__ import annotations

import numpy as np
import pytest
from scipy.integrate import solve_bvp, solve_ivp

from conftest import random_model
from mf_stackelberg.analysis import (
    CHUNK,
    OptimalityProbe,
    THREADS_ENV,
    convergence_study,
    follower_response,
    optimality_probe,
    probe_direction,
    replication_chunks,
    solve_model,
    worker_count,
)
from mf_stackelberg.assembly import SolvabilityError
from mf_stackelberg.model import example51
from mf_stackelberg.numerics import TimeGrid
from mf_stackelberg.simulate import per_agent_costs

COLLAPSE = dict(D0=0.0, D=0.0, xi0_std=0.0, xi_std=0.0, xi0_mean=1.0, xiHat=2.0)


def centralized_optimum(p) -> float:
    """Per-agent social cost of the joint LQ problem when every follower is identical and noise-free.

    In that case leader and followers share one objective, so the Stackelberg
    value coincides with this team optimum.  State (xhat, x0, 1); solved with
    scipy's adaptive integrator.
    """
    n, m, a = p.n, p.m, p.alpha
    I = np.eye(n)
    Az = np.zeros((2 * n + 1, 2 * n + 1))
    Az[:n, :n], Az[:n, n : 2 * n] = p.A + p.C, p.F
    Az[n : 2 * n, :n], Az[n : 2 * n, n : 2 * n] = p.C0, p.A0
    Bz = np.zeros((2 * n + 1, 2 * m))
    Bz[:n, :m], Bz[n : 2 * n, m:] = p.B, p.B0
    L0 = np.hstack([-p.Theta0, I, -p.eta0[:, None]])
    L1 = np.hstack([I - p.Theta, -p.Theta1, -p.eta[:, None]])
    H0 = np.hstack([-p.ThetaHat0, I, -p.etaHat0[:, None]])
    H1 = np.hstack([I - p.ThetaHat, -p.ThetaHat1, -p.etaHat[:, None]])
    Qz = a * L0.T @ p.Q0 @ L0 + L1.T @ p.Q @ L1
    Gz = a * H0.T @ p.G0 @ H0 + H1.T @ p.G @ H1
    Rz = np.zeros((2 * m, 2 * m))
    Rz[:m, :m], Rz[m:, m:] = p.R, a * p.R0
    S = Bz @ np.linalg.solve(Rz, Bz.T)
    k = 2 * n + 1

    def rhs(t, v):
        P = v.reshape(k, k)
        return -(P @ Az + Az.T @ P - P @ S @ P + Qz).ravel()

    sol = solve_ivp(rhs, (p.T, 0.0), Gz.ravel(), rtol=1e-11, atol=1e-12)
    z0 = np.concatenate([p.xiHat, p.xi0_mean, [1.0]])
    return float(z0 @ sol.y[:, -1].reshape(k, k) @ z0)


def realized_cost(sm) -> float:
    sim = sm.simulator()
    xi0, dW0 = sim.leader_draws([1])
    X, Y = sim.mean_field(xi0, dW0)
    xi, dW = sim.agent_draws([1], 1)
    res = sim.population(X, Y, xi0, dW0, xi, dW)
    return float(per_agent_costs(sm.p, res["J0"], res["Ji"])[0])


def strongly_coupled(seed: int):
    rng = np.random.default_rng(seed)
    p = random_model(rng, scale=0.7)
    z = np.zeros((2, 1))
    return p.replace(D0=z, D=z, xi0_std=np.zeros(2), xi_std=np.zeros(2), T=3.0,
                     B0=3 * p.B0, Q0=3 * p.Q0 + np.eye(2))


# -- helpers ---------------------------------------------------------------


def test_worker_count_respects_env_cap(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "2")
    assert worker_count(8) == 2
    monkeypatch.setenv(THREADS_ENV, "x")
    with pytest.raises(ValueError, match=THREADS_ENV):
        worker_count(4)
    monkeypatch.delenv(THREADS_ENV)
    assert worker_count(0) == 1


def test_replication_chunks_cover_every_run_once():
    chunks = replication_chunks(2 * CHUNK + 3)
    assert [r for c in chunks for r in c] == list(range(2 * CHUNK + 3))
    assert all(len(c) <= CHUNK for c in chunks)


def test_solve_model_rejects_mismatched_grid(ex51):
    with pytest.raises(ValueError, match="horizon"):
        solve_model(ex51, TimeGrid(6.0, 100))


def test_solve_model_raises_when_unsolvable():
    p = example51(B0=40.0, R0=0.01, Q0=50.0)
    with pytest.raises(SolvabilityError, match="not solvable"):
        solve_model(p, TimeGrid(12.0, 600))


# -- convergence study ------------------------------------------------------


@pytest.fixture(scope="module")
def coarse51():
    grid = TimeGrid(12.0, 240)
    return solve_model(example51(), grid)


def test_convergence_report_shapes_and_rows(coarse51):
    rep = convergence_study(coarse51.p, [2, 4, 8], 6, coarse51.grid, 3, solved=coarse51)
    assert rep.means.shape == (3, 3) and rep.std_errors.shape == (3, 3)
    assert np.all(rep.means > 0) and np.all(rep.std_errors >= 0)
    rows = list(rep.rows())
    assert [r[0] for r in rows] == [2, 4, 8] and all(len(r) == 7 for r in rows)
    assert rep.slopes is not None and rep.slope_note == ""


def test_convergence_independent_of_worker_count(coarse51):
    runs = CHUNK + 5
    a = convergence_study(coarse51.p, [3, 6], runs, coarse51.grid, 11, workers=1, solved=coarse51)
    b = convergence_study(coarse51.p, [3, 6], runs, coarse51.grid, 11, workers=3, solved=coarse51)
    assert np.array_equal(a.means, b.means) and np.array_equal(a.cost_means, b.cost_means)


def test_convergence_prefix_of_larger_study(coarse51):
    """Replication r uses the same draws whatever the largest N is."""
    a = convergence_study(coarse51.p, [3], 4, coarse51.grid, 5, solved=coarse51)
    b = convergence_study(coarse51.p, [3, 7], 4, coarse51.grid, 5, solved=coarse51)
    np.testing.assert_array_equal(a.means[0], b.means[0])


def test_single_population_size_has_no_slope(coarse51):
    rep = convergence_study(coarse51.p, [4], 3, coarse51.grid, 1, solved=coarse51)
    assert rep.slopes is None and "at least 2" in rep.slope_note


def test_collapse_case_reports_non_positive_data():
    p = example51(**COLLAPSE)
    grid = TimeGrid(12.0, 240)
    rep = convergence_study(p, [2, 4], 2, grid, 1)
    assert np.all(rep.means == 0.0)
    assert rep.slopes is None and "non-positive" in rep.slope_note


@pytest.mark.parametrize("bad", [[], [4, 2], [3, 3], [0, 2]])
def test_convergence_rejects_bad_population_sizes(coarse51, bad):
    with pytest.raises(ValueError):
        convergence_study(coarse51.p, bad, 2, coarse51.grid, 1, solved=coarse51)


# -- probe ----------------------------------------------------------------


def test_probe_direction_has_unit_norm(grid2400):
    for j in range(5):
        v = probe_direction(7, j, grid2400, 2, 12)
        assert v.shape == (grid2400.steps + 1, 2)
        assert grid2400.trapezoid_weights() @ np.sum(v * v, axis=1) == pytest.approx(1.0, rel=1e-12)
    assert not np.array_equal(probe_direction(7, 0, grid2400, 1, 12), probe_direction(7, 1, grid2400, 1, 12))


def test_zero_step_probe_is_exactly_zero(coarse51):
    pr = optimality_probe(coarse51.p, 5, 3, 0.0, coarse51.grid, 1, runs=2, solved=coarse51)
    assert np.array_equal(pr.deltas, np.zeros(6))
    assert pr.max_gain == 0.0 and pr.passed
    assert pr.targets == ["leader"] * 3 + ["follower"] * 3 and pr.ids == [0, 1, 2] * 2


def test_probe_rejects_bad_arguments(coarse51):
    with pytest.raises(ValueError):
        optimality_probe(coarse51.p, 5, 2, -0.1, coarse51.grid, 1, solved=coarse51)
    with pytest.raises(ValueError):
        optimality_probe(coarse51.p, 5, 2, 0.1, coarse51.grid, 1, follower=5, solved=coarse51)


def test_quadratic_split_recovers_polynomial():
    a, b, s = np.array([0.3, -1.0]), np.array([2.0, 0.5]), 0.1
    pr = OptimalityProbe(N=1, directions=1, step=s, ids=[0, 0], targets=["leader", "follower"],
                         deltas=a * s + b * s**2, base_cost=1.0, bound_estimate=1.0,
                         half_deltas=a * s / 2 + b * s**2 / 4)
    first, second = pr.quadratic_split()
    np.testing.assert_allclose(first, a * s, atol=1e-15)
    np.testing.assert_allclose(second, b * s**2, atol=1e-15)


def test_follower_response_matches_boundary_value_solution():
    """Riccati-decoupled response against scipy's collocation BVP solver."""
    p = example51()
    grid = TimeGrid(12.0, 4800)
    sm = solve_model(p, grid, "corrected")
    bs, n = sm.blocks, p.n
    du0 = np.sin(grid.times)[:, None]
    dX, dY = follower_response(bs, grid, du0, p.B0)

    ix, iy = np.r_[0 : 2 * n], np.r_[3 * n : 5 * n]
    Af, Bf = bs.Abb[np.ix_(ix, ix)], bs.Bbb[np.ix_(ix, iy)]
    Cf, Df = bs.Ahat[np.ix_(iy, ix)], bs.Bhat[np.ix_(iy, iy)]
    Gf = bs.Gbb[np.ix_(iy, ix)]

    def f(t, z):
        x, k = z[: 2 * n], z[2 * n :]
        src = np.zeros((2 * n, t.size))
        src[n:] = p.B0 @ np.sin(t)[None, :]
        return np.vstack([Af @ x + Bf @ k + src, Cf @ x + Df @ k])

    def bc(za, zb):
        return np.concatenate([za[: 2 * n], zb[2 * n :] - Gf @ zb[: 2 * n]])

    t0 = np.linspace(0, 12, 200)
    sol = solve_bvp(f, bc, t0, np.zeros((4 * n, t0.size)), tol=1e-8, max_nodes=100_000)
    assert sol.success
    ref = sol.sol(grid.times).T
    scale = np.abs(ref).max()
    assert np.abs(dX[:, ix] - ref[:, : 2 * n]).max() < 5e-3 * scale
    assert np.abs(dY[:, iy] - ref[:, 2 * n :]).max() < 5e-3 * scale
    assert not dX[:, 2 * n :].any() and not dY[:, : 3 * n].any()


def test_follower_response_is_linear(coarse51):
    g, p, bs = coarse51.grid, coarse51.p, coarse51.blocks
    u = probe_direction(1, 0, g, 1, 6)
    v = probe_direction(1, 1, g, 1, 6)
    a = follower_response(bs, g, u, p.B0)
    b = follower_response(bs, g, v, p.B0)
    c = follower_response(bs, g, 2 * u - 3 * v, p.B0)
    for i in range(2):
        np.testing.assert_allclose(c[i], 2 * a[i] - 3 * b[i], atol=1e-10)
    assert not np.any(follower_response(bs, g, 0 * u, p.B0)[0])


# -- optimality of the corrected convention ----------------------------------


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_corrected_convention_attains_centralized_optimum(seed):
    p = strongly_coupled(seed)
    best = centralized_optimum(p)
    gaps = []
    for M in (600, 2400):
        sm = solve_model(p, TimeGrid(p.T, M), "corrected")
        gaps.append(abs(realized_cost(sm) - best))
    assert gaps[1] < 2e-3 * best
    assert gaps[1] < gaps[0]


def test_printed_conventions_miss_the_optimum():
    """The other two conventions give a strictly larger cost on the same model."""
    p = strongly_coupled(1)
    best = centralized_optimum(p)
    grid = TimeGrid(p.T, 1200)
    for conv in ("example", "general"):
        assert realized_cost(solve_model(p, grid, conv)) > 1.3 * best


def test_collapse_example_gap_to_optimum():
    p = example51(**COLLAPSE)
    best = centralized_optimum(p)
    grid = TimeGrid(12.0, 2400)
    costs = {c: realized_cost(solve_model(p, grid, c)) for c in ("example", "general", "corrected")}
    assert abs(costs["corrected"] - best) < 1e-3 * best
    assert costs["general"] > best + 0.1
    assert costs["example"] > best + 3.0


def test_probe_finds_no_descent_under_corrected_convention():
    """Noise-free soundness: every leader and follower perturbation raises the cost."""
    p = example51(**COLLAPSE)
    grid = TimeGrid(12.0, 1200)
    sm = solve_model(p, grid, "corrected")
    pr = optimality_probe(p, 10, 4, 0.05, grid, 3, runs=1, half_step=True, solved=sm)
    assert np.all(pr.deltas > 0)
    first, second = pr.quadratic_split()
    assert np.all(second > 0)
    assert np.abs(first).max() < 0.05 * second.max()


def test_example_convention_is_not_stationary():
    """Leader perturbations have a first-order effect, so some direction lowers the cost."""
    p = example51(**COLLAPSE)
    grid = TimeGrid(12.0, 1200)
    sm = solve_model(p, grid, "example")
    step = 0.05
    pr = optimality_probe(p, 10, 4, step, grid, 3, runs=1, half_step=True, solved=sm)
    first, _ = pr.quadratic_split()
    assert np.abs(first[:4]).max() > 0.5 * step


def test_error_means_non_increasing_in_N():
    grid = TimeGrid(12.0, 600)
    sm = solve_model(example51(), grid)
    rep = convergence_study(sm.p, [5, 20, 80], 40, grid, 8, solved=sm)
    for j in range(2):
        slack = 2 * np.hypot(rep.std_errors[j], rep.std_errors[j + 1])
        assert np.all(rep.means[j + 1] <= rep.means[j] + slack)


def test_first_order_part_within_allowance(solved51):
    """Bundled example at N = 100: |delta(step) - quadratic term| <= bound_estimate * step."""
    pr = optimality_probe(solved51.p, 100, 50, 0.05, solved51.grid, 1, runs=20, half_step=True, solved=solved51)
    first, second = pr.quadratic_split()
    assert np.abs(first).max() <= pr.allowance
    assert np.all(second > 0)
