"""Backward-induction pricing engines.

Three schemes approximate the American (reflected BSDE) value by unconstrained
BSDEs with a penalizing generator, all discretised on the simulation grid and
using least-squares regression for conditional expectations:

* classical penalization, generator ``n (P - v)^+``;
* the entropy-regularized scheme, generator ``lambda Phi_n((P - v)/lambda)``,
  solved path-wise by Newton's method;
* the Policy Improvement Algorithm (PIA), which alternates a Gibbs policy
  update with the evaluation of a *linear* BSDE.

Discounting (the ``-r v`` part of every generator) is integrated exactly over
each step, i.e. the continuation value is multiplied by ``e^{-r dt}``.  With a
zero penalty every scheme therefore collapses to the discounted European price
on the same paths.

Two regression targets are available:

``"value"``
    regress the next-step value estimate ``V_{k+1}`` (one-step scheme);
``"cashflow"``
    regress the realised discounted cash flow ``R_{k+1}``, accumulated along
    each path from maturity with the generator evaluated at the solved value
    (multi-step scheme).  Both targets have the same conditional expectation
    in exact arithmetic; they differ in how regression error propagates.

A randomized-stopping evaluator turns any intensity process into a
lower-bound estimate of the American price.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import drivers as D
from .errors import ConfigurationError, DomainError, NumericalError
from .market import PathGrid, PayoffSpec
from .regression import BasisSpec, LeastSquaresProjector, eval_basis

__all__ = [
    "SchemeConfig",
    "ValueSurface",
    "PIAState",
    "PolicyEstimate",
    "RegressionContext",
    "classical_penalization",
    "entropy_implicit",
    "pia",
    "pia_iterates",
    "linear_step",
    "entropy_intensity",
    "evaluate_randomized_policy",
    "european_price",
]

TARGETS = ("value", "cashflow")
DEFAULT_TARGETS = {"classical": "value", "implicit": "cashflow", "pia": "value"}


class NewtonWarning(RuntimeWarning):
    """Some path-wise Newton solves did not reach the tolerance."""


@dataclass(frozen=True)
class SchemeConfig:
    """Numerical settings shared by the backward schemes.

    Parameters
    ----------
    params : DriverParams
        Temperature ``lambda``, penalty level ``n`` and rate ``r``.
    theta : float
        Implicitness weight in ``[0, 1]`` of the generator (1 = fully implicit).
    newton_max_iter : int
        Maximal Newton iterations per path-wise solve.
    newton_tol : float
        Absolute residual tolerance of the Newton solves.
    pia_iterations : int
        Number of policy-improvement iterations.
    couple_lambda_n : bool
        Require ``lambda = 1/n`` in the entropy schemes.
    target : {"value", "cashflow"} or None
        Regression target; ``None`` selects the scheme default (value for
        classical penalization and PIA, cashflow for the implicit scheme).
    pia_policy : {"continuation", "value"}
        Process the Gibbs policy is computed from in the PIA: the regressed
        continuation value ``e^{-r dt} E[V_{k+1} | F_k]`` or the path-wise
        value estimate ``V_k``.
    """

    params: D.DriverParams
    theta: float = 1.0
    newton_max_iter: int = 20
    newton_tol: float = 1e-10
    pia_iterations: int = 10
    couple_lambda_n: bool = True
    target: str | None = None
    pia_policy: str = "continuation"

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise ConfigurationError(f"theta must lie in [0, 1], got {self.theta}")
        if self.newton_max_iter < 1:
            raise ConfigurationError("newton_max_iter must be >= 1")
        if not self.newton_tol > 0:
            raise ConfigurationError("newton_tol must be positive")
        if self.pia_iterations < 1:
            raise ConfigurationError("pia_iterations must be >= 1")
        if self.target is not None and self.target not in TARGETS:
            raise ConfigurationError(f"target must be one of {TARGETS}, got {self.target!r}")
        if self.pia_policy not in ("continuation", "value"):
            raise ConfigurationError(f"unknown pia_policy {self.pia_policy!r}")

    def target_for(self, scheme: str) -> str:
        return self.target or DEFAULT_TARGETS[scheme]

    def check_entropy(self) -> None:
        self.params.require_entropy()
        if self.couple_lambda_n and not math.isclose(self.params.lam * self.params.n, 1.0,
                                                     rel_tol=1e-12):
            raise ConfigurationError(
                f"couple_lambda_n requires lambda = 1/n, got lambda={self.params.lam}, "
                f"n={self.params.n}")


@dataclass(frozen=True, eq=False)
class ValueSurface:
    """Per-path value estimates ``values[p, k]`` of one backward scheme.

    ``values[:, N]`` is the terminal payoff and ``price`` the average of
    ``values[:, 0]``.  ``std_error`` is the standard error of the Monte Carlo
    average entering the first backward step.
    """

    values: np.ndarray
    price: float
    std_error: float
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class PIAState:
    """One PIA iterate: its surface and the policy mean used to produce it."""

    iterate_index: int
    surface: ValueSurface
    policy_mean: np.ndarray


@dataclass(frozen=True)
class PolicyEstimate:
    """Monte Carlo estimate with its standard error."""

    price: float
    std_error: float


class RegressionContext:
    """Per-step least-squares projectors on a fixed set of paths.

    Building the factorisations is the expensive part of a regression; the
    context computes each one once and shares it between iterations and
    schemes run on the same paths.

    Parameters
    ----------
    paths : PathGrid
    spec : PayoffSpec
    basis : BasisSpec
    keep : bool
        Cache projectors (needed for repeated sweeps such as the PIA).
    """

    def __init__(self, paths: PathGrid, spec: PayoffSpec, basis: BasisSpec, keep: bool = True):
        basis.check_capacity(paths.config.d, paths.n_paths)
        self.paths = paths
        self.spec = spec
        self.basis = basis
        self.keep = keep
        self.payoffs = paths.payoffs(spec)
        self._cache: dict[int, LeastSquaresProjector] = {}
        self.rank_deficient_steps: set[int] = set()
        self.itm_fallback_steps: set[int] = set()

    def matches(self, paths: PathGrid, spec: PayoffSpec, basis: BasisSpec) -> bool:
        return self.paths is paths and self.spec == spec and self.basis == basis

    def projector(self, k: int) -> LeastSquaresProjector:
        proj = self._cache.get(k)
        if proj is None:
            X = eval_basis(self.basis, self.paths.values[:, k, :], self.payoffs[:, k])
            mask = None
            if self.basis.itm_only:
                mask = self.payoffs[:, k] > 0
                if mask.sum() < max(X.shape[1], math.ceil(X.shape[1] / self.basis.max_fraction)):
                    mask = None
                    self.itm_fallback_steps.add(k)
            proj = LeastSquaresProjector(X, mask=mask)
            if proj.rank_deficient:
                self.rank_deficient_steps.add(k)
            if self.keep:
                self._cache[k] = proj
        return proj

    def project(self, k: int, y: np.ndarray) -> np.ndarray:
        """Regression estimate of ``E[y | F_{t_k}]`` on every path."""
        return self.projector(k)(y)


def _context(paths, spec, reg, context, keep=True) -> RegressionContext:
    if context is not None:
        if not context.matches(paths, spec, reg):
            raise ConfigurationError("regression context was built for different inputs")
        return context
    return RegressionContext(paths, spec, reg, keep=keep)


def _phi1(z: np.ndarray) -> np.ndarray:
    """``(1 - e^{-z})/z`` with the value 1 at ``z = 0``."""
    out = np.ones_like(z)
    nz = np.abs(z) > 1e-12
    out[nz] = -np.expm1(-z[nz]) / z[nz]
    out[~nz] = 1.0 - z[~nz] / 2
    return out


def _finish(values, first_target, disc, diagnostics) -> ValueSurface:
    if not np.all(np.isfinite(values)):
        raise NumericalError("backward scheme produced non-finite values")
    values.setflags(write=False)
    se = disc * float(np.std(first_target, ddof=1)) / math.sqrt(len(first_target)) \
        if len(first_target) > 1 else 0.0
    return ValueSurface(values=values, price=float(values[:, 0].mean()), std_error=se,
                        diagnostics=diagnostics)


def _base_diagnostics(ctx: RegressionContext, target: str) -> dict:
    return {"target": target, "rank_deficient_steps": 0}


# ---------------------------------------------------------------------------
# generic theta-scheme driver

def _theta_scheme(paths, spec, cfg, reg, context, scheme, generator, solve):
    ctx = _context(paths, spec, reg, context, keep=False)
    P = ctx.payoffs
    n_paths, n1 = P.shape
    N = n1 - 1
    dt = paths.grid.dt
    disc = math.exp(-cfg.params.r * dt)
    theta = cfg.theta
    target = cfg.target_for(scheme)
    diag = _base_diagnostics(ctx, target)
    values = np.empty((n_paths, n1))
    values[:, N] = P[:, N]
    cash = P[:, N].copy()  # realised discounted cash flow from t_{k+1} on
    v_next = values[:, N]
    first_target = None
    for k in range(N - 1, -1, -1):
        explicit = dt * (1.0 - theta) * generator(P[:, k + 1], v_next) if theta < 1 else 0.0
        y = (v_next if target == "value" else cash) + explicit
        c = disc * ctx.project(k, y)
        v = solve(c, P[:, k], diag)
        values[:, k] = v
        if target == "cashflow":
            implicit = dt * theta * generator(P[:, k], v) if theta > 0 else 0.0
            cash = disc * (cash + explicit) + implicit
        v_next = v
        if k == 0:
            first_target = y
    diag["rank_deficient_steps"] = len(ctx.rank_deficient_steps)
    return _finish(values, first_target, disc, diag)


def classical_penalization(paths: PathGrid, spec: PayoffSpec, cfg: SchemeConfig,
                           reg: BasisSpec, context: RegressionContext | None = None) -> ValueSurface:
    """Classical penalization scheme with generator ``n (P - v)^+``.

    Each backward step solves ``v = C_k + dt theta n (P_k - v)^+`` path-wise,
    where ``C_k`` is the discounted regression estimate of the next-step
    target.  The equation is piecewise linear, so it is solved exactly: ``v =
    C_k`` if ``C_k >= P_k``, otherwise ``v = (C_k + dt theta n P_k)/(1 + dt
    theta n)``.  With ``n = 0`` the result is the discounted European price.

    Parameters
    ----------
    paths : PathGrid
    spec : PayoffSpec
    cfg : SchemeConfig
        Only ``params.n``, ``params.r``, ``theta`` and ``target`` are used.
    reg : BasisSpec
    context : RegressionContext, optional
        Shared projectors for the same paths, payoff and basis.

    Returns
    -------
    ValueSurface
    """
    n = cfg.params.n
    theta = cfg.theta
    dt = paths.grid.dt

    def generator(p, v):
        return n * np.maximum(p - v, 0.0)

    def solve(c, p, diag):
        if n == 0 or theta == 0:
            return c
        k = dt * theta * n
        return np.where(c >= p, c, (c + k * p) / (1.0 + k))

    return _theta_scheme(paths, spec, cfg, reg, context, "classical", generator, solve)


def entropy_implicit(paths: PathGrid, spec: PayoffSpec, cfg: SchemeConfig,
                     reg: BasisSpec, context: RegressionContext | None = None) -> ValueSurface:
    """Entropy-regularized penalization with generator ``lambda Phi_n((P - v)/lambda)``.

    Each backward step solves, path by path,

        F(v) = v - C_k - dt theta lambda Phi_n((P_k - v)/lambda) = 0

    by Newton's method from ``v0 = max(C_k, P_k)``, with ``F'(v) = 1 + dt theta
    n Phi'(n (P_k - v)/lambda) >= 1``.  ``F`` is increasing and concave, so
    the iteration converges from any start.  Paths that miss ``newton_tol``
    after ``newton_max_iter`` iterations keep their last iterate, are counted
    in ``diagnostics["newton_failures"]`` and trigger a :class:`NewtonWarning`.
    """
    cfg.check_entropy()
    prm = cfg.params
    n, lam = prm.n, prm.lam
    dt = paths.grid.dt
    a = dt * cfg.theta

    def generator(p, v):
        return lam * D.phi_n((p - v) / lam, n)

    def solve(c, p, diag):
        diag.setdefault("newton_failures", 0)
        diag.setdefault("newton_max_iterations", 0)
        diag.setdefault("newton_max_residual", 0.0)
        if a == 0:
            return c
        v = np.maximum(c, p)
        active = np.arange(len(v))
        iters = 0
        resid = np.zeros(0)
        for _ in range(cfg.newton_max_iter + 1):
            va, pa, ca = v[active], p[active], c[active]
            resid = va - ca - a * lam * D.phi_n((pa - va) / lam, n)
            done = np.abs(resid) < cfg.newton_tol
            if done.all() or iters == cfg.newton_max_iter:
                break
            keep = ~done
            active, va, pa, resid_k = active[keep], va[keep], pa[keep], resid[keep]
            slope = 1.0 + a * n * D.phi_prime(n * (pa - va) / lam)
            v[active] = va - resid_k / slope
            iters += 1
        failures = int(np.sum(np.abs(resid) >= cfg.newton_tol))
        diag["newton_max_iterations"] = max(diag["newton_max_iterations"], iters)
        diag["newton_max_residual"] = max(diag["newton_max_residual"],
                                          float(np.max(np.abs(resid), initial=0.0)))
        if failures:
            diag["newton_failures"] += failures
            warnings.warn(f"{failures} Newton solves did not reach tolerance "
                          f"{cfg.newton_tol:g}; using the last iterate", NewtonWarning)
        return v

    return _theta_scheme(paths, spec, cfg, reg, context, "implicit", generator, solve)


# ---------------------------------------------------------------------------
# policy improvement

def linear_step(continuation: np.ndarray, a: np.ndarray, b: np.ndarray, dt: float) -> np.ndarray:
    """Exact step of the linear BSDE ``-dV = (b - a V) dt - dM`` over ``dt``.

    Returns ``e^{-a dt} continuation + (b/a)(1 - e^{-a dt})`` with the ``a -> 0``
    limit ``b dt`` handled stably.
    """
    a = np.asarray(a, dtype=float)
    z = np.broadcast_to(a * dt, np.shape(continuation)).astype(float)
    return np.exp(-z) * continuation + b * dt * _phi1(z)


def pia_iterates(paths: PathGrid, spec: PayoffSpec, cfg: SchemeConfig, reg: BasisSpec,
                 context: RegressionContext | None = None) -> Iterator[PIAState]:
    """Yield the successive PIA iterates ``m = 1, ..., pia_iterations``.

    Starting from ``V^0 = P + 1`` on every path and date, iteration ``m``
    computes the Gibbs policy of the current value,

        alpha = (P - W)/lambda,  a = mu(alpha, n) + r,
        b = lambda Phi_n((P - W)/lambda) + W mu(alpha, n),

    and evaluates it backwards with the exact linear step
    ``V_k = e^{-a dt} E[V_{k+1} | F_k] + (b/a)(1 - e^{-a dt})``, the conditional
    expectation being a regression on the raw next-step values.  ``W`` is the
    process the policy is derived from (see ``SchemeConfig.pia_policy``).
    """
    cfg.check_entropy()
    ctx = _context(paths, spec, reg, context, keep=True)
    prm = cfg.params
    n, lam, r = prm.n, prm.lam, prm.r
    P = ctx.payoffs
    n_paths, n1 = P.shape
    N = n1 - 1
    dt = paths.grid.dt
    disc = math.exp(-r * dt)
    W = P + 1.0
    prices = []
    for m in range(1, cfg.pia_iterations + 1):
        gap = (P[:, :N] - W[:, :N]) / lam
        mu = D.gibbs_mean(gap, n)
        a = mu + r
        b = lam * D.phi_n(gap, n) + W[:, :N] * mu
        values = np.empty((n_paths, n1))
        values[:, N] = P[:, N]
        W_new = np.empty_like(W)
        W_new[:, N] = P[:, N]
        v_next = values[:, N]
        for k in range(N - 1, -1, -1):
            cont = ctx.project(k, v_next)
            v = linear_step(cont, a[:, k], b[:, k], dt)
            values[:, k] = v
            W_new[:, k] = disc * cont if cfg.pia_policy == "continuation" else v
            if k == 0:
                first_target = v_next
            v_next = v
        W = W_new
        diag = {
            "target": "value",
            "iteration": m,
            "rank_deficient_steps": len(ctx.rank_deficient_steps),
            "policy_mean_min": float(mu.min()),
            "policy_mean_max": float(mu.max()),
        }
        surface = _finish(values, first_target, float(np.exp(-a[:, 0] * dt).mean()), diag)
        prices.append(surface.price)
        diag["iterate_prices"] = list(prices)
        yield PIAState(iterate_index=m, surface=surface, policy_mean=mu)


def pia(paths: PathGrid, spec: PayoffSpec, cfg: SchemeConfig, reg: BasisSpec,
        context: RegressionContext | None = None) -> ValueSurface:
    """Policy Improvement Algorithm; returns the surface of the final iterate.

    ``diagnostics["iterate_prices"]`` lists the price of every iterate.
    """
    state = None
    for state in pia_iterates(paths, spec, cfg, reg, context):
        pass
    return state.surface


# ---------------------------------------------------------------------------
# randomized stopping

def entropy_intensity(surface: ValueSurface, paths: PathGrid, spec: PayoffSpec,
                      params: D.DriverParams) -> np.ndarray:
    """Stopping intensity ``n Psi(n (P - V)/lambda)`` of an entropy solution, shape (P, N)."""
    P = paths.payoffs(spec)[:, :-1]
    V = surface.values[:, :-1]
    return params.n * D.psi(params.n * (P - V) / params.lam)


def evaluate_randomized_policy(paths: PathGrid, spec: PayoffSpec, intensity,
                               r: float) -> PolicyEstimate:
    """Value of stopping at the first jump of a Cox process with the given intensity.

    Over each grid interval ``[t_k, t_{k+1})`` the intensity is frozen at
    ``gamma_k``, so the path stops there with probability
    ``e^{-Gamma_k} (1 - e^{-gamma_k dt})`` (``Gamma_k`` the left-endpoint
    integrated intensity) and receives ``e^{-r t_k} P_{t_k}``; surviving paths
    receive ``e^{-r T} P_T``.  Any admissible intensity gives a lower bound of
    the American price.

    Parameters
    ----------
    intensity : array_like, shape (P, N) or (P, N+1)
        Non-negative, finite intensities at ``t_0..t_{N-1}`` (a last column is
        ignored).

    Raises
    ------
    DomainError
        For negative or non-finite intensities.
    """
    P = paths.payoffs(spec)
    n_paths, n1 = P.shape
    N = n1 - 1
    g = np.asarray(intensity, dtype=float)
    if g.shape not in ((n_paths, N), (n_paths, N + 1)):
        raise ConfigurationError(f"intensity has shape {g.shape}, expected ({n_paths}, {N})")
    g = g[:, :N]
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        raise DomainError("intensity must be finite and non-negative")
    dt = paths.grid.dt
    t = paths.grid.times
    hazard = g * dt
    Gamma = np.zeros((n_paths, n1))
    np.cumsum(hazard, axis=1, out=Gamma[:, 1:])
    survival = np.exp(-Gamma)
    stop_prob = survival[:, :N] * -np.expm1(-hazard)
    disc = np.exp(-r * t)
    per_path = (stop_prob * disc[:N] * P[:, :N]).sum(axis=1) + survival[:, N] * (disc[N] * P[:, N])
    return PolicyEstimate(float(per_path.mean()),
                          float(per_path.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0)


def european_price(paths: PathGrid, spec: PayoffSpec, r: float) -> PolicyEstimate:
    """Discounted European payoff ``E[e^{-r T} P_T]`` on the given paths."""
    P = paths.payoffs(spec)
    per_path = math.exp(-r * paths.grid.T) * P[:, -1]
    n_paths = len(per_path)
    return PolicyEstimate(float(per_path.mean()),
                          float(per_path.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0)
