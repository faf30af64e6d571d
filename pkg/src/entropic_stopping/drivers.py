"""Special functions behind the entropy-regularized generators.

The central object is

    Phi(x) = ln((e^x - 1) / x),        Phi(0) = 0,

together with its normalised version ``Psi = Phi / x`` (a distribution
function on the real line), the truncated family

    Phi_n(x) = ln((e^{n x} - 1) / x),  Phi_n(0) = ln n,

its temperature rescaling ``lambda * Phi_n((p - x) / lambda)`` and the
``n -> infinity`` limit ``lambda * ln(lambda / (x - p))``.  The Gibbs density
``alpha e^{alpha u} / (e^{alpha n} - 1)`` on ``[0, n]`` and its mean close the
list; the mean is exactly ``n * Phi'(alpha n)``.

Every function is vectorised: scalars in give a Python ``float`` out, arrays
in give arrays out.  The naive formulas overflow near ``x ~ 710`` and lose all
digits near ``x = 0``, and the schemes evaluate them at arguments well beyond
``1e3``, so each evaluation is split into branches that are individually
stable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import bisect

from .errors import ConfigurationError, DomainError

__all__ = [
    "DriverParams",
    "phi",
    "phi_prime",
    "psi",
    "phi_n",
    "phi_n_prime",
    "phi_lambda_n",
    "phi_lambda_n_dx",
    "phi_lambda_inf",
    "phi_n_root",
    "gibbs_density",
    "gibbs_mean",
]

# Branch thresholds for Phi and friends.
_LARGE = 30.0
_SMALL = 1e-4


@dataclass(frozen=True)
class DriverParams:
    """Temperature, truncation level and discount rate of a generator.

    Parameters
    ----------
    lam : float
        Temperature ``lambda > 0``.  Entropy schemes need ``lambda <= 1``;
        classical penalization ignores it.
    n : float
        Penalization / truncation level.  ``n = 0`` is accepted so that the
        classical scheme degenerates to the European price; entropy schemes
        require ``n >= 1`` (see :meth:`require_entropy`).
    r : float
        Continuously compounded discount rate, ``r >= 0``.
    """

    lam: float
    n: float
    r: float = 0.0

    def __post_init__(self):
        for name in ("lam", "n", "r"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")
        if self.lam <= 0:
            raise ConfigurationError(f"lambda must be positive, got {self.lam}")
        if self.n < 0:
            raise ConfigurationError(f"n must be non-negative, got {self.n}")
        if self.r < 0:
            raise ConfigurationError(f"r must be non-negative, got {self.r}")

    @classmethod
    def coupled(cls, n: float, r: float = 0.0) -> "DriverParams":
        """Parameters on the diagonal ``lambda = 1/n``."""
        return cls(lam=1.0 / n, n=n, r=r)

    def require_entropy(self) -> None:
        """Raise unless ``lambda in (0, 1]`` and ``n >= 1``."""
        if not self.lam <= 1.0:
            raise ConfigurationError(
                f"entropy schemes need lambda in (0, 1], got {self.lam}")
        if self.n < 1:
            raise ConfigurationError(f"entropy schemes need n >= 1, got {self.n}")


# ---------------------------------------------------------------------------
# helpers

def _finite_array(x, name="x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _out(arr: np.ndarray, *inputs):
    """Return a float when every input was a scalar."""
    if all(np.ndim(v) == 0 for v in inputs):
        return float(arr)
    return arr


def _check_n(n) -> float:
    n = float(n)
    if not (math.isfinite(n) and n >= 1.0):
        raise DomainError(f"n must be a finite real >= 1, got {n}")
    return n


# ---------------------------------------------------------------------------
# Phi, Phi', Psi

def _phi(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    big = x >= _LARGE
    neg = x <= -_LARGE
    small = np.abs(x) < _SMALL
    mid = ~(big | neg | small)
    xb = x[big]
    out[big] = xb - np.log(xb) + np.log1p(-np.exp(-xb))
    xn = x[neg]
    out[neg] = np.log1p(-np.exp(xn)) - np.log(-xn)
    xs = x[small]
    out[small] = xs / 2 + xs**2 / 24 - xs**4 / 2880
    xm = x[mid]
    out[mid] = np.log(np.expm1(xm) / xm)
    return out


def phi(x):
    """Evaluate ``Phi(x) = ln((e^x - 1)/x)`` with ``Phi(0) = 0``.

    Parameters
    ----------
    x : float or array_like
        Finite argument(s).

    Returns
    -------
    float or ndarray
        ``Phi(x)``; non-decreasing and 1-Lipschitz.

    Raises
    ------
    DomainError
        If any input is not finite.

    Examples
    --------
    >>> round(phi(100.0), 7)
    95.3948298
    """
    arr = _finite_array(x)
    return _out(_phi(np.atleast_1d(arr)).reshape(arr.shape), x)


# Phi'(x) = 1/(1 - e^{-x}) - 1/x subtracts two O(1/x) terms; below this
# threshold the Bernoulli series is used instead (truncation error < 1e-25).
_SMALL_PRIME = 1e-2


def _phi_prime(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    small = np.abs(x) < _SMALL_PRIME
    pos = (x > 0) & ~small
    neg = (x < 0) & ~small
    xs = x[small]
    x2 = xs * xs
    out[small] = 0.5 + xs * (1 / 12 + x2 * (-1 / 720 + x2 * (1 / 30240 - x2 / 1209600)))
    xp = x[pos]
    out[pos] = -1.0 / np.expm1(-xp) - 1.0 / xp
    xn = x[neg]
    out[neg] = np.exp(xn) / np.expm1(xn) - 1.0 / xn
    return out


def phi_prime(x):
    """Derivative ``Phi'(x) = 1/(1 - e^{-x}) - 1/x``, with values in ``[0, 1]``."""
    arr = _finite_array(x)
    return _out(_phi_prime(np.atleast_1d(arr)).reshape(arr.shape), x)


def psi(x):
    """Evaluate ``Psi(x) = Phi(x)/x`` with ``Psi(0) = 1/2``.

    ``Psi`` is a continuous distribution function: non-decreasing with
    values in ``[0, 1]``.
    """
    arr = np.atleast_1d(_finite_array(x))
    out = np.empty_like(arr)
    small = np.abs(arr) < _SMALL
    xs = arr[small]
    out[small] = 0.5 + xs / 24 - xs**3 / 2880
    xo = arr[~small]
    out[~small] = _phi(xo) / xo
    return _out(out.reshape(np.shape(x)), x)


# ---------------------------------------------------------------------------
# truncated family

def phi_n(x, n):
    """Evaluate ``Phi_n(x) = ln((e^{n x} - 1)/x)`` with ``Phi_n(0) = ln n``.

    This is an independent kernel (it does not call :func:`phi`), so that the
    identity ``Phi_n(x) = Phi(n x) + ln n`` can be tested rather than assumed.

    Parameters
    ----------
    x : float or array_like
        Finite argument(s).
    n : float
        Truncation level, ``n >= 1``.

    Raises
    ------
    DomainError
        If ``n < 1`` or ``x`` is not finite.
    """
    n = _check_n(n)
    arr = np.atleast_1d(_finite_array(x))
    y = n * arr
    out = np.empty_like(arr)
    big = y >= _LARGE
    neg = y <= -_LARGE
    small = np.abs(y) < _SMALL
    mid = ~(big | neg | small)
    out[big] = y[big] - np.log(arr[big]) + np.log1p(-np.exp(-y[big]))
    out[neg] = np.log1p(-np.exp(y[neg])) - np.log(-arr[neg])
    ys = y[small]
    out[small] = math.log(n) + ys / 2 + ys**2 / 24 - ys**4 / 2880
    out[mid] = np.log(np.expm1(y[mid]) / arr[mid])
    return _out(out.reshape(np.shape(x)), x)


def phi_n_prime(x, n):
    """Derivative ``Phi_n'(x) = n Phi'(n x)``, with values in ``[0, n]``."""
    n = _check_n(n)
    arr = _finite_array(x)
    return _out((n * _phi_prime(np.atleast_1d(n * arr))).reshape(arr.shape), x)


def phi_lambda_n(p, x, params: DriverParams):
    """Entropy-regularized penalty ``lambda * Phi_n((p - x)/lambda)``.

    Decreasing in ``x``; equals ``lambda ln n`` at ``x = p`` and vanishes at
    ``x = p - lambda * phi_n_root(n)``.
    """
    lam = params.lam
    y = (np.asarray(p, dtype=float) - np.asarray(x, dtype=float)) / lam
    val = lam * np.asarray(phi_n(y, params.n))
    return _out(val, p, x)


def phi_lambda_n_dx(p, x, params: DriverParams):
    """Derivative of :func:`phi_lambda_n` with respect to ``x`` (non-positive)."""
    y = (np.asarray(p, dtype=float) - np.asarray(x, dtype=float)) / params.lam
    return _out(-np.asarray(phi_n_prime(y, params.n)), p, x)


def phi_lambda_inf(p, x, lam: float):
    """Singular limit ``lambda ln(lambda/(x - p))`` for ``x > p``, ``+inf`` otherwise.

    The infinite value is IEEE ``+inf`` and is a legal return.
    """
    p_arr = _finite_array(p, "p")
    x_arr = _finite_array(x, "x")
    gap = x_arr - p_arr
    flat = np.atleast_1d(gap)
    out = np.full(flat.shape, np.inf)
    above = flat > 0
    out[above] = lam * np.log(lam / flat[above])
    return _out(out.reshape(gap.shape), p, x)


def phi_n_root(n: float) -> float:
    """Unique root of ``Phi_n``, i.e. the solution of ``e^{n x} - x - 1 = 0`` in ``(-1, 0]``.

    Solved by bisection on ``[-1 + 1e-15, -ln(n)/n]`` (well inside the
    required ``1e-12`` absolute tolerance); ``n = 1`` returns exactly 0.  For
    large ``n`` the root lies within ``e^{-n}`` of ``-1``; once that distance
    drops below the lower bracket offset the bracket endpoint itself is
    returned, which is within tolerance.
    """
    n = _check_n(n)
    if n == 1.0:
        return 0.0
    # Bisect in z = x + 1, on the equivalent equation n (z - 1) = ln z.  The
    # root z is tiny for large n, so a relative tolerance in z is much tighter
    # than the absolute 1e-12 required of x and keeps the root monotone in n.

    def h(z):
        return n * (z - 1.0) - math.log(z)

    lo, hi = 1e-15, 1.0 - math.log(n) / n
    if h(lo) <= 0.0:
        return lo - 1.0
    if h(hi) >= 0.0:  # only possible for n extremely close to 1
        return hi - 1.0
    z = bisect(h, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=400)
    return float(z) - 1.0


# ---------------------------------------------------------------------------
# Gibbs policy

def gibbs_density(alpha, n, u):
    """Gibbs density ``alpha e^{alpha u} / (e^{alpha n} - 1)`` on ``[0, n]``.

    The ``alpha -> 0`` limit ``1/n`` is filled by a first-order expansion.

    Raises
    ------
    DomainError
        If ``u`` lies outside ``[0, n]``.
    """
    n = float(n)
    a = np.asarray(alpha, dtype=float)
    uu = np.asarray(u, dtype=float)
    if np.any(uu < 0) or np.any(uu > n):
        raise DomainError("u must lie in [0, n]")
    a, uu = np.broadcast_arrays(np.atleast_1d(a), np.atleast_1d(uu))
    out = np.empty(a.shape)
    small = np.abs(a * n) < 1e-8
    pos = (a > 0) & ~small
    neg = (a < 0) & ~small
    out[small] = (1.0 + a[small] * (uu[small] - n / 2)) / n
    ap, up = a[pos], uu[pos]
    out[pos] = ap * np.exp(ap * (up - n)) / -np.expm1(-ap * n)
    an, un = a[neg], uu[neg]
    out[neg] = an * np.exp(an * un) / np.expm1(an * n)
    if np.ndim(alpha) == 0 and np.ndim(u) == 0:
        return float(out[0])
    return out.reshape(np.broadcast_shapes(np.shape(alpha), np.shape(u)))


def gibbs_mean(alpha, n):
    """Mean ``n/(1 - e^{-alpha n}) - 1/alpha`` of the Gibbs density.

    Computed as ``n * Phi'(alpha n)``; near ``alpha = 0`` this is the series
    ``n/2 + alpha n^2/12 - ...``, which avoids the cancellation of the two
    ``O(1/alpha)`` terms.  Increasing in ``alpha`` with values in
    ``(0, n)``.
    """
    n = float(n)
    a = _finite_array(alpha, "alpha")
    return _out((n * _phi_prime(np.atleast_1d(a * n))).reshape(a.shape), alpha)
