"""Seed derivation and per-path block streams.

Every simulated path owns a generator derived from ``(master seed, grid
index, trial index, role)`` with :class:`numpy.random.SeedSequence` spawn
keys. Paths draw their observations in fixed-size blocks, so the values a path
sees never depend on how many other paths share the batch or on the worker
that runs it.
"""

from __future__ import annotations

import numpy as np

ROLES = {"data": 0, "null": 1, "tiebreak": 2, "randomize": 3, "population": 4}
BLOCK = 512


def path_seed(master_seed: int, grid: int, trial: int, role: str = "data") -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master_seed), spawn_key=(int(grid), int(trial), ROLES[role]))


def path_rngs(master_seed, grid, trials, role="data"):
    return [np.random.default_rng(path_seed(master_seed, grid, k, role)) for k in trials]


class BlockStream:
    """Lock-step observation source for a batch of paths.

    ``sampler(rng, k)`` returns ``k`` observations. :meth:`draw` must be
    called once per time step with the indices of the paths still running;
    the running set may only shrink.
    """

    def __init__(self, rngs, sampler, block: int = BLOCK):
        self.rngs = list(rngs)
        self.sampler = sampler
        self.block = block
        self.buf = np.empty((len(self.rngs), block))
        self.t = 0

    def draw(self, idx):
        pos = self.t % self.block
        if pos == 0:
            for i in idx:
                self.buf[i] = self.sampler(self.rngs[i], self.block)
        self.t += 1
        return self.buf[idx, pos]


def gaussian_sampler(mean):
    return lambda rng, k: mean + rng.standard_normal(k)


def bernoulli_sampler(p):
    return lambda rng, k: (rng.random(k) < p).astype(float)


def gaussian_stream(master_seed, grid, trials, mean, role="data"):
    return BlockStream(path_rngs(master_seed, grid, trials, role), gaussian_sampler(mean))


def path_observations(master_seed, grid, trial, n, sampler, role="data", block: int = BLOCK):
    """The first ``n`` observations of one path exactly as a :class:`BlockStream` would serve them."""
    rng = np.random.default_rng(path_seed(master_seed, grid, trial, role))
    k = -(-n // block)
    return np.concatenate([sampler(rng, block) for _ in range(k)])[:n] if n else np.empty(0)


class ArrayStream:
    """Lock-step source over a fixed ``(paths, T)`` array, for tests and replays."""

    def __init__(self, X):
        self.X = np.asarray(X, dtype=float)
        self.t = 0

    def draw(self, idx):
        self.t += 1
        return self.X[idx, self.t - 1]
