"""The singular limit ``n -> infinity`` at fixed temperature.

For fixed ``lambda`` the entropy-regularized values ``V^{lambda,n}`` increase
with ``n`` towards a limit ``V^lambda``.  That limit equals the price of a
*defaultable* American claim: stopping at ``tau`` pays ``P_tau`` unless a
default time ``sigma`` with intensity

    gamma = lambda / (P + lambda - V) * ln(lambda / (V - P))

arrives first, in which case the recovery ``P_sigma + lambda`` is paid.  This
module provides desk-scale numerical checks of both statements:

* :func:`n_sweep` runs the implicit scheme for increasing ``n`` on common
  paths and reports the worst monotonicity violation;
* :func:`defaultable_mc_check` simulates the default time with the intensity
  computed from a large-``n`` proxy of ``V^lambda`` and compares the
  resulting lower-bound estimate with the proxy.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .drivers import DriverParams
from .errors import ConfigurationError
from .market import MarketConfig, PathGrid, PayoffSpec, TimeGrid, simulate_paths
from .regression import BasisSpec
from .schemes import RegressionContext, SchemeConfig, entropy_implicit

__all__ = [
    "NSweepReport",
    "DefaultCheckReport",
    "n_sweep",
    "default_intensity",
    "defaultable_mc_check",
    "small_market",
    "run_default_check",
]

DEFAULT_CAP = 1e6
_EXP_TAG = 0x5EED_DEF4  # spawn key separating default-time draws from path draws


@dataclass(frozen=True)
class NSweepReport:
    """Implicit-scheme prices at fixed ``lambda`` for increasing ``n``."""

    lam: float
    n_values: tuple
    prices: tuple
    std_errors: tuple = ()
    runtimes_ms: tuple = ()

    @property
    def monotone_violation(self) -> float:
        """Most negative successive price difference (0 if monotone)."""
        diffs = np.diff(self.prices)
        return float(min(0.0, diffs.min())) if diffs.size else 0.0


@dataclass(frozen=True)
class DefaultCheckReport:
    """Outcome of one defaultable-claim Monte Carlo check."""

    v_lambda_0: float
    rep_estimate: float
    std_error: float
    epsilon_stop: float
    default_fraction: float = 0.0
    survival_deviation: float = 0.0
    cap_engaged: int = 0
    diagnostics: dict = field(default_factory=dict)


def small_market() -> tuple[MarketConfig, TimeGrid, PayoffSpec]:
    """One-asset, zero-rate call market used for the defaultable-claim check."""
    market = MarketConfig(s0=(100.0,), r=0.0, delta=0.05, sigma=0.3, T=0.5)
    return market, TimeGrid(N=50, T=0.5), PayoffSpec(K=95.0)


def n_sweep(paths: PathGrid, spec: PayoffSpec, lam: float, n_values, reg: BasisSpec | None = None,
            theta: float = 1.0, context: RegressionContext | None = None) -> NSweepReport:
    """Run the implicit scheme for each ``n`` at fixed ``lam`` on common paths.

    Raises
    ------
    ConfigurationError
        If ``n_values`` is not strictly increasing or ``lam`` is outside ``(0, 1]``.
    """
    n_values = tuple(float(n) for n in n_values)
    if len(n_values) == 0 or np.any(np.diff(n_values) <= 0):
        raise ConfigurationError("n_values must be non-empty and strictly increasing")
    reg = reg or BasisSpec()
    r = paths.config.r
    ctx = context or RegressionContext(paths, spec, reg)
    prices, ses, times = [], [], []
    for n in n_values:
        t0 = time.perf_counter()
        cfg = SchemeConfig(DriverParams(lam, n, r), theta=theta, couple_lambda_n=False)
        s = entropy_implicit(paths, spec, cfg, reg, ctx)
        prices.append(s.price)
        ses.append(s.std_error)
        times.append((time.perf_counter() - t0) * 1e3)
    return NSweepReport(lam=float(lam), n_values=n_values, prices=tuple(prices),
                        std_errors=tuple(ses), runtimes_ms=tuple(times))


def default_intensity(p, v, lam: float, cap: float = DEFAULT_CAP):
    """Default intensity ``lambda ln(lambda/(v - p)) / (lambda - (v - p))``.

    With ``z = (v - p)/lambda - 1`` this is ``log1p(z)/z``, evaluated with
    the removable singularity ``z = 0`` (i.e. ``v - p = lambda``) set to 1.
    The intensity is positive and decreasing in ``v - p``; it explodes as
    ``v`` approaches ``p`` and is saturated at ``cap``, which is also returned
    whenever ``v <= p``.
    """
    if not lam > 0:
        raise ConfigurationError("lambda must be positive")
    if cap < 0:
        raise ConfigurationError("cap must be non-negative")
    p, v = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(v, dtype=float))
    y = ((v - p) / lam).ravel()  # y = z + 1
    out = np.full(y.shape, float(cap))
    ok = y > 0
    yo = y[ok]
    val = np.empty_like(yo)
    near = yo < 0.5  # close to the barrier: direct form, no cancellation
    val[near] = -np.log(yo[near]) / (1.0 - yo[near])
    zo = yo[~near] - 1.0
    small = np.abs(zo) < 1e-8
    val_far = np.empty_like(zo)
    val_far[small] = 1.0 - zo[small] / 2
    val_far[~small] = np.log1p(zo[~small]) / zo[~small]
    val[~near] = val_far
    out[ok] = np.minimum(val, cap)
    out = out.reshape(p.shape)
    return float(out) if out.ndim == 0 else out


def defaultable_mc_check(paths: PathGrid, spec: PayoffSpec, lam: float, epsilon_stop: float,
                         seed: int, n_proxy: float = 1000.0, cap: float = DEFAULT_CAP,
                         discounted: bool = False, reg: BasisSpec | None = None,
                         proxy=None) -> DefaultCheckReport:
    """Monte Carlo check of the defaultable-claim representation at ``t = 0``.

    1. ``V`` is the implicit-scheme surface at ``(lam, n_proxy)``, a proxy for
       the singular limit ``V^lambda``.
    2. The candidate exercise time is ``tau = min{t_k : V <= P + epsilon_stop}``
       (``T`` at the latest, where ``V = P``).
    3. ``Gamma`` accumulates :func:`default_intensity` by the trapezoidal rule
       (left-endpoint rule on the final interval, see below) and the default time is ``sigma = min{t_k : Gamma_{t_k} >= E}`` with an
       independent standard exponential ``E`` per path.
    4. The claim pays ``P_tau`` if ``sigma > tau`` and ``P_sigma + lambda``
       otherwise (discounted at ``r`` only if ``discounted``).

    Any exercise rule gives a lower bound, so ``rep_estimate`` should not
    exceed ``v_lambda_0`` beyond statistical error.

    Parameters
    ----------
    proxy : ValueSurface, optional
        Precomputed proxy surface (reused across ``epsilon_stop`` values).
    """
    if not 0 < lam <= 1:
        raise ConfigurationError("lambda must lie in (0, 1]")
    if not epsilon_stop > 0:
        raise ConfigurationError("epsilon_stop must be positive")
    reg = reg or BasisSpec()
    r = paths.config.r
    if proxy is None:
        cfg = SchemeConfig(DriverParams(lam, n_proxy, r), couple_lambda_n=False)
        proxy = entropy_implicit(paths, spec, cfg, reg)
    V = proxy.values
    P = paths.payoffs(spec)
    n_paths, n1 = P.shape
    dt = paths.grid.dt
    t = paths.grid.times

    gamma = default_intensity(P, V, lam, cap)
    cap_engaged = int(np.sum(gamma[:, :-1] >= cap)) if cap > 0 else 0
    increments = 0.5 * dt * (gamma[:, 1:] + gamma[:, :-1])
    # V_T = P_T by the terminal condition, so gamma_T is always the cap; the
    # true singularity at T is integrable (gamma ~ ln(1/(T - t))), and a
    # trapezoid through the capped endpoint would force default on every
    # surviving path.  The last interval therefore uses its left endpoint.
    increments[:, -1] = dt * gamma[:, -2]
    Gamma = np.zeros((n_paths, n1))
    np.cumsum(increments, axis=1, out=Gamma[:, 1:])

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, _EXP_TAG])))
    E = rng.standard_exponential(n_paths)

    rows = np.arange(n_paths)
    hit = V <= P + epsilon_stop
    hit[:, -1] = True
    tau = hit.argmax(axis=1)
    defaulted = Gamma >= E[:, None]
    any_default = defaulted.any(axis=1)
    sigma = np.where(any_default, defaulted.argmax(axis=1), n1)
    default_first = sigma <= tau
    k_pay = np.where(default_first, sigma, tau)
    k_pay = np.minimum(k_pay, n1 - 1)
    pay = P[rows, k_pay] + np.where(default_first, lam, 0.0)
    if discounted:
        pay = pay * np.exp(-r * t[k_pay])

    surv_emp = (sigma[:, None] > np.arange(n1)[None, :]).mean(axis=0)
    surv_model = np.exp(-Gamma).mean(axis=0)
    deviation = float(np.max(np.abs(surv_emp - surv_model)))

    se = float(pay.std(ddof=1) / math.sqrt(n_paths))
    return DefaultCheckReport(
        v_lambda_0=proxy.price,
        rep_estimate=float(pay.mean()),
        std_error=se,
        epsilon_stop=float(epsilon_stop),
        default_fraction=float(default_first.mean()),
        survival_deviation=deviation,
        cap_engaged=cap_engaged,
        diagnostics={"proxy_std_error": proxy.std_error, "n_proxy": n_proxy,
                     "mean_tau": float(t[tau].mean())},
    )


def run_default_check(lam: float = 0.5, epsilons=None, n_paths: int = 50_000, seed: int = 2024,
                      n_proxy: float = 1000.0, cap: float = DEFAULT_CAP):
    """Convenience wrapper: simulate the small market and sweep ``epsilon_stop``."""
    market, grid, spec = small_market()
    paths = simulate_paths(market, grid, n_paths, seed)
    reg = BasisSpec()
    cfg = SchemeConfig(DriverParams(lam, n_proxy, market.r), couple_lambda_n=False)
    proxy = entropy_implicit(paths, spec, cfg, reg)
    epsilons = epsilons if epsilons is not None else (0.5 * lam, 0.1 * lam, 0.01 * lam)
    return [defaultable_mc_check(paths, spec, lam, eps, seed, n_proxy, cap, reg=reg, proxy=proxy)
            for eps in epsilons]
