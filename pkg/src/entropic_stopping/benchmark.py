"""Lattice reference prices.

A recombining binomial tree gives American (and European) prices to which the
Monte Carlo schemes are compared.  For one asset this is the Cox-Ross-Rubinstein
tree.  For two independent assets it is the product of two CRR trees: each
step moves every asset up or down independently, giving four branches with
probabilities ``p^2, p q, q p, q^2``.  Both trees converge at rate ``O(1/M)``
to the continuous-time price.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .market import MarketConfig, PayoffSpec, payoff

__all__ = ["BinomialConfig", "binomial_price"]


@dataclass(frozen=True)
class BinomialConfig:
    """Lattice settings.

    Parameters
    ----------
    steps : int
        Number of time steps ``M``.
    market : MarketConfig
    payoff : PayoffSpec
    """

    steps: int
    market: MarketConfig
    payoff: PayoffSpec = PayoffSpec()

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigurationError("binomial tree needs at least one step")
        if self.market.d > 2:
            raise ConfigurationError(
                f"binomial tree supports one or two assets, got {self.market.d}")


def _nodes(s0: float, u: float, i: int) -> np.ndarray:
    j = np.arange(i + 1)
    return s0 * u ** (2.0 * j - i)


def _exercise(cfg: BinomialConfig, i: int, u: float) -> np.ndarray:
    s = cfg.market.s0
    if cfg.market.d == 1:
        return payoff(cfg.payoff, _nodes(s[0], u, i)[:, None])
    a, b = _nodes(s[0], u, i), _nodes(s[1], u, i)
    grid = np.stack(np.broadcast_arrays(a[:, None], b[None, :]), axis=-1)
    return payoff(cfg.payoff, grid)


def _deterministic(cfg: BinomialConfig, american: bool) -> float:
    # zero volatility: the price path is known, so optimal exercise is a
    # maximisation over the exercise dates of the lattice.
    m = cfg.market
    t = np.linspace(0.0, m.T, cfg.steps + 1)
    states = np.asarray(m.s0)[None, :] * np.exp((m.r - m.delta) * t)[:, None]
    disc_pay = np.exp(-m.r * t) * payoff(cfg.payoff, states)
    return float(disc_pay.max() if american else disc_pay[-1])


def binomial_price(cfg: BinomialConfig, american: bool = True) -> float:
    """Price of the payoff on a recombining binomial lattice.

    Parameters
    ----------
    cfg : BinomialConfig
    american : bool
        Allow early exercise at every lattice node.

    Returns
    -------
    float

    Raises
    ------
    ConfigurationError
        If the risk-neutral branch probability falls outside ``[0, 1]`` (too
        few steps for the drift) or the market has more than two assets.
    """
    m = cfg.market
    M = cfg.steps
    if m.sigma == 0:
        return _deterministic(cfg, american)
    dt = m.T / M
    u = math.exp(m.sigma * math.sqrt(dt))
    d = 1.0 / u
    p = (math.exp((m.r - m.delta) * dt) - d) / (u - d)
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(
            f"binomial probability {p:.4g} outside [0, 1]; increase the number of steps")
    q = 1.0 - p
    disc = math.exp(-m.r * dt)
    V = _exercise(cfg, M, u)
    for i in range(M - 1, -1, -1):
        if m.d == 1:
            V = disc * (p * V[1:] + q * V[:-1])
        else:
            V = disc * (p * p * V[1:, 1:] + p * q * (V[1:, :-1] + V[:-1, 1:]) + q * q * V[:-1, :-1])
        if american:
            V = np.maximum(V, _exercise(cfg, i, u))
    return float(V.reshape(-1)[0])
