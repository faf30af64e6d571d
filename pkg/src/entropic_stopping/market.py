"""Multi-asset geometric Brownian motion with dividends.

Paths follow

    S_t^i = S_0^i exp((r - delta - sigma^2/2) t + sigma W_t^i)

with independent Brownian motions ``W^i``, sampled exactly on a uniform time
grid.  Random numbers come from a counter-based generator (Philox): the key is
the user seed and the counter's high word is the index of a fixed-size block of
paths, so every normal variate is a pure function of
``(seed, path, step, asset)``.  Blocks can therefore be generated in any order
and on any number of threads with bit-identical results.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri

from .errors import ConfigurationError

__all__ = [
    "MarketConfig",
    "TimeGrid",
    "PayoffSpec",
    "PathGrid",
    "simulate_paths",
    "payoff",
    "uniform_block",
    "export_paths_csv",
    "table1_market",
    "BLOCK_PATHS",
]

#: Number of paths per RNG block.  Part of the reproducibility contract:
#: changing it changes every simulated path.
BLOCK_PATHS = 1024


@dataclass(frozen=True)
class MarketConfig:
    """Black-Scholes market with ``d`` independent assets.

    Parameters
    ----------
    s0 : sequence of float
        Initial prices, strictly positive; ``d = len(s0)``.
    r, delta : float
        Risk-free rate and continuous dividend yield (per year).
    sigma : float
        Common volatility, ``sigma >= 0`` (``0`` gives deterministic paths).
    T : float
        Horizon in years, ``T > 0``.
    """

    s0: tuple[float, ...]
    r: float = 0.05
    delta: float = 0.1
    sigma: float = 0.2
    T: float = 3.0

    def __post_init__(self):
        s0 = tuple(float(v) for v in np.atleast_1d(self.s0))
        object.__setattr__(self, "s0", s0)
        if len(s0) == 0:
            raise ConfigurationError("s0 must contain at least one asset")
        if not all(math.isfinite(v) and v > 0 for v in s0):
            raise ConfigurationError(f"s0 must be strictly positive, got {s0}")
        for name in ("r", "delta", "sigma", "T"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")
        if self.sigma < 0:
            raise ConfigurationError(f"sigma must be non-negative, got {self.sigma}")
        if self.T <= 0:
            raise ConfigurationError(f"T must be positive, got {self.T}")

    @property
    def d(self) -> int:
        return len(self.s0)

    def with_s0(self, s0) -> "MarketConfig":
        """Copy with new initial prices (a scalar is broadcast to all assets)."""
        s0 = np.broadcast_to(np.asarray(s0, dtype=float), (self.d,)) if np.ndim(s0) == 0 else s0
        return MarketConfig(tuple(s0), self.r, self.delta, self.sigma, self.T)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_k = k T / N`` for ``k = 0..N``."""

    N: int
    T: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ConfigurationError(f"N must be a positive integer, got {self.N}")
        object.__setattr__(self, "N", int(self.N))
        if not (math.isfinite(self.T) and self.T > 0):
            raise ConfigurationError(f"T must be positive, got {self.T}")

    @property
    def dt(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.dt


@dataclass(frozen=True)
class PayoffSpec:
    """Exercise payoff; only the max-call ``(max_i S^i - K)^+`` is provided."""

    K: float = 100.0
    kind: str = "max_call"

    def __post_init__(self):
        if self.kind != "max_call":
            raise ConfigurationError(f"unsupported payoff kind {self.kind!r}")
        if not (math.isfinite(self.K) and self.K > 0):
            raise ConfigurationError(f"K must be positive, got {self.K}")


def payoff(spec: PayoffSpec, state) -> np.ndarray | float:
    """Max-call payoff ``(max_i state_i - K)^+`` over the last axis.

    Examples
    --------
    >>> payoff(PayoffSpec(K=100.0), [110.0, 95.0])
    10.0
    """
    state = np.asarray(state, dtype=float)
    val = np.maximum(state.max(axis=-1) - spec.K, 0.0)
    return float(val) if val.ndim == 0 else val


@dataclass(frozen=True, eq=False)
class PathGrid:
    """Simulated prices, ``values[p, k, i]`` for path ``p``, time ``t_k``, asset ``i``.

    The array is read-only; a PathGrid is safe to share across threads.
    """

    values: np.ndarray
    seed: int
    config: MarketConfig
    grid: TimeGrid
    _payoff_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    def payoffs(self, spec: PayoffSpec) -> np.ndarray:
        """Payoff matrix ``P[p, k]`` (cached per payoff spec)."""
        key = (spec.kind, spec.K)
        if key not in self._payoff_cache:
            P = payoff(spec, self.values)
            P.setflags(write=False)
            self._payoff_cache[key] = P
        return self._payoff_cache[key]


def uniform_block(seed: int, block: int, size: int) -> np.ndarray:
    """``size`` uniforms in ``(0, 1)`` from block ``block`` of stream ``seed``.

    The 53 high bits of each raw 64-bit Philox output are mapped to the
    midpoint grid ``(k + 0.5) 2^-53``, which excludes both endpoints so that the
    inverse normal CDF is always finite.
    """
    counter = np.array([0, 0, 0, block], dtype=np.uint64)
    bitgen = np.random.Philox(key=np.uint64(seed & 0xFFFFFFFFFFFFFFFF), counter=counter)
    raw = bitgen.random_raw(size)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def _validate_seed(seed) -> int:
    if int(seed) != seed or seed < 0 or seed >= 2**64:
        raise ConfigurationError(f"seed must be an integer in [0, 2^64), got {seed}")
    return int(seed)


def simulate_paths(config: MarketConfig, grid: TimeGrid, n_paths: int, seed: int,
                   workers: int = 1) -> PathGrid:
    """Sample ``n_paths`` exact GBM paths on ``grid``.

    Parameters
    ----------
    config : MarketConfig
    grid : TimeGrid
        Must share the horizon of ``config``.
    n_paths : int
        Number of paths, ``>= 1``.
    seed : int
        Stream key in ``[0, 2^64)``.
    workers : int
        Threads used for generation; results do not depend on it.

    Returns
    -------
    PathGrid

    Raises
    ------
    ConfigurationError
        For invalid sizes, seeds or a horizon mismatch.
    """
    if int(n_paths) != n_paths or n_paths < 1:
        raise ConfigurationError(f"n_paths must be a positive integer, got {n_paths}")
    if not math.isclose(grid.T, config.T, rel_tol=1e-12):
        raise ConfigurationError(f"grid horizon {grid.T} differs from market horizon {config.T}")
    if workers < 1:
        raise ConfigurationError("workers must be >= 1")
    seed = _validate_seed(seed)
    n_paths = int(n_paths)
    N, d = grid.N, config.d
    dt = grid.dt
    t = grid.times
    s0 = np.asarray(config.s0)
    drift = (config.r - config.delta - 0.5 * config.sigma**2) * t  # (N+1,)
    values = np.empty((n_paths, N + 1, d))
    n_blocks = -(-n_paths // BLOCK_PATHS)

    def fill(b: int) -> None:
        lo = b * BLOCK_PATHS
        hi = min(lo + BLOCK_PATHS, n_paths)
        # always draw a full block so that a path's variates never depend on n_paths
        z = ndtri(uniform_block(seed, b, BLOCK_PATHS * N * d)).reshape(BLOCK_PATHS, N, d)
        z = z[: hi - lo]
        w = np.zeros((hi - lo, N + 1, d))
        np.cumsum(z * math.sqrt(dt), axis=1, out=w[:, 1:])
        values[lo:hi] = s0 * np.exp(drift[None, :, None] + config.sigma * w)

    if workers == 1 or n_blocks == 1:
        for b in range(n_blocks):
            fill(b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, range(n_blocks)))
    values.setflags(write=False)
    return PathGrid(values=values, seed=seed, config=config, grid=grid)


def export_paths_csv(paths: PathGrid, path, max_paths: int | None = None) -> None:
    """Write ``path,step,asset,price`` rows for debugging."""
    v = paths.values if max_paths is None else paths.values[:max_paths]
    P, K1, d = v.shape
    p_idx, k_idx, i_idx = np.meshgrid(np.arange(P), np.arange(K1), np.arange(d), indexing="ij")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "step", "asset", "price"])
        for row in zip(p_idx.ravel(), k_idx.ravel(), i_idx.ravel(), v.ravel()):
            w.writerow([int(row[0]), int(row[1]), int(row[2]), repr(float(row[3]))])


def table1_market(s0: float | Sequence[float] = 100.0) -> MarketConfig:
    """Two-asset max-call market used throughout the examples."""
    s0 = (float(s0), float(s0)) if np.ndim(s0) == 0 else tuple(s0)
    return MarketConfig(s0=s0, r=0.05, delta=0.1, sigma=0.2, T=3.0)
