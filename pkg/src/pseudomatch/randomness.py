"""Reproducible sampling of Weibull edge costs and the offspring point process.

Every random draw in the package goes through a generator obtained from
:func:`derive_stream`, so a ``SeedSpec`` (plus any sub-keys) pins the
output regardless of how work is scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Params:
    """Cost exponent ``q`` and game parameter ``lam`` (the quit penalty is ``lam / 2``)."""

    q: float
    lam: float

    def __post_init__(self):
        if not (0.0 < self.q <= 1.0):
            raise ValueError(f"q must lie in (0, 1], got {self.q}")
        if not (self.lam > 0.0 and np.isfinite(self.lam)):
            raise ValueError(f"lambda must be positive and finite, got {self.lam}")

    @property
    def half(self) -> float:
        return 0.5 * self.lam

    @property
    def mean_offspring(self) -> float:
        return self.lam ** self.q


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if not (0 <= self.master_seed < 2**64):
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        if self.stream_index < 0:
            raise ValueError("stream_index must be non-negative")


def derive_stream(seed: SeedSpec, *subkeys: int) -> np.random.Generator:
    """Counter-based generator for ``seed`` and optional integer sub-keys.

    The seed material is hashed by ``SeedSequence``; distinct
    ``(stream_index, *subkeys)`` tuples give independent Philox streams.
    """
    ss = np.random.SeedSequence(
        entropy=int(seed.master_seed), spawn_key=(int(seed.stream_index), *map(int, subkeys))
    )
    return np.random.Generator(np.random.Philox(ss))


def uniform_open(rng: np.random.Generator, size=None):
    """Uniform draws on the open interval (0, 1)."""
    u = rng.random(size)
    if size is None:
        while u == 0.0:
            u = rng.random()
        return u
    bad = u == 0.0
    while bad.any():
        u[bad] = rng.random(int(bad.sum()))
        bad = u == 0.0
    return u


def sample_weibull(q: float, rng: np.random.Generator, size=None):
    """Wei(1, q) draws by inversion, ``(-ln U) ** (1 / q)``.

    Non-finite values (possible only for extreme ``q``) are redrawn.
    """
    if not q > 0:
        raise ValueError(f"q must be positive, got {q}")
    with np.errstate(over="ignore"):
        x = (-np.log(uniform_open(rng, size))) ** (1.0 / q)
        if size is None:
            while not np.isfinite(x):
                x = (-np.log(uniform_open(rng))) ** (1.0 / q)
            return float(x)
        bad = ~np.isfinite(x)
        while bad.any():
            x[bad] = (-np.log(uniform_open(rng, int(bad.sum())))) ** (1.0 / q)
            bad = ~np.isfinite(x)
    return x


def arrival_times(params: Params, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` i.i.d. points with CDF ``(t / lam) ** q`` on [0, lam], unsorted."""
    u = uniform_open(rng, count) * params.mean_offspring
    return np.minimum(u ** (1.0 / params.q), params.lam)


def sample_poisson_arrivals(params: Params, rng: np.random.Generator) -> np.ndarray:
    """Sorted points of the Poisson process on [0, lam] with intensity ``q t**(q-1)``.

    The count is Poisson(lam**q); given the count the points are placed by
    mapping uniforms on [0, lam**q] through ``u -> u**(1/q)``, which avoids
    thinning against the intensity pole at 0.
    """
    n = int(rng.poisson(params.mean_offspring))
    return np.sort(arrival_times(params, n, rng))
