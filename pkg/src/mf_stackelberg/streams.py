"""Index-derived Philox streams.

Every random quantity is drawn from a stream keyed by (seed, role, index), so
follower i sees the same initial state and Brownian increments whatever the
population size, and the common noise W0 is shared by every N.
"""

from __future__ import annotations

import numpy as np

LEADER = 0
AGENT = 1
RUN = 2
PROBE = 3


def stream(seed: int, role: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), role, int(index)])))


def run_seed(master_seed: int, run: int) -> int:
    """Seed of replication ``run`` under ``master_seed``."""
    return int(np.random.SeedSequence([int(master_seed), RUN, int(run)]).generate_state(1, np.uint64)[0])


def leader_noise(seed: int, mean, std, d: int, steps: int, dt: float):
    """Leader initial state xi0 and the common increments dW0 (shape steps x d)."""
    g = stream(seed, LEADER)
    xi0 = np.asarray(mean) + np.asarray(std) * g.standard_normal(np.shape(mean))
    dW0 = g.standard_normal((steps, d)) * np.sqrt(dt)
    return xi0, dW0


def agent_noise(seed: int, count: int, mean, std, d: int, steps: int, dt: float):
    """Initial states (count x n) and increments (steps x count x d) of followers 0..count-1."""
    mean = np.asarray(mean, dtype=float)
    xi = np.empty((count, mean.shape[0]))
    dW = np.empty((steps, count, d))
    for i in range(count):
        g = stream(seed, AGENT, i)
        xi[i] = mean + np.asarray(std) * g.standard_normal(mean.shape[0])
        dW[:, i, :] = g.standard_normal((steps, d))
    dW *= np.sqrt(dt)
    return xi, dW
