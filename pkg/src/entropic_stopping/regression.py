"""Least-squares estimation of conditional expectations across paths.

Every backward scheme needs ``E[Y | F_{t_k}]`` for some path-wise target ``Y``.
It is approximated by projecting ``Y`` on a finite basis of functions of the
state ``S_{t_k}`` (and optionally of the payoff).

The default basis, for two assets with sorted prices ``y1 >= y2`` and payoff
``g``, has 13 functions::

    1, y1, y1^2, y1^3, y2, y2^2, y2^3, y1 y2, y1^2 y2, y1 y2^2, g, g^2, g y1

Solving uses an SVD of the centred and column-normalised design matrix, so the
intercept is handled exactly (fitted values always average to the sample mean
of the targets) and polynomial columns of very different magnitudes do not
spoil the conditioning.  A rank-deficient design (e.g. at ``t = 0`` where all
paths share one state) receives a ``1e-10`` ridge and raises a diagnostic flag.

Note that for the max-call the default basis is itself collinear: on every
path ``g * y1 = g^2 + K g`` (both sides vanish out of the money), so the 13
functions span a 12-dimensional space and every fit is flagged.  The ridge
resolves the redundant direction without changing the fitted values.
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigurationError, InsufficientDataError, StateError

__all__ = [
    "BasisSpec",
    "FitResult",
    "LeastSquaresProjector",
    "RegressionModel",
    "eval_basis",
    "fit",
    "predict",
]

DEFAULT_RIDGE = 1e-10


@dataclass(frozen=True)
class BasisSpec:
    """Description of the regression basis.

    Parameters
    ----------
    kind : {"polynomial_sorted", "custom"}
        ``polynomial_sorted`` uses monomials of the prices sorted in
        decreasing order: the constant, pure powers of each sorted price up
        to ``degree``, then mixed monomials of total degree ``<= degree``.
        ``custom`` calls ``function(state, payoff_value)``, which must return
        the non-constant features with shape ``state.shape[:-1] + (m,)``;
        ``n_custom`` must equal ``m``.
    degree : int
        Maximal total polynomial degree (``0`` gives the constant only).
    include_payoff_terms : bool
        Append ``g, g^2, g*y1`` (payoff and its interaction with the
        largest price).
    max_fraction : float
        Overfitting guard: the number of basis functions may not exceed
        ``max_fraction * n_paths``.
    itm_only : bool
        Fit only on in-the-money paths (Longstaff-Schwartz style); the fitted
        function is still evaluated on every path.
    """

    kind: str = "polynomial_sorted"
    degree: int = 3
    include_payoff_terms: bool = True
    function: Callable | None = field(default=None, compare=False)
    n_custom: int = 0
    max_fraction: float = 0.1
    itm_only: bool = False

    def __post_init__(self):
        if self.kind not in ("polynomial_sorted", "custom"):
            raise ConfigurationError(f"unknown basis kind {self.kind!r}")
        if self.kind == "custom" and (self.function is None or self.n_custom < 0):
            raise ConfigurationError("custom basis needs a function and n_custom >= 0")
        if self.degree < 0:
            raise ConfigurationError("degree must be non-negative")
        if not 0 < self.max_fraction <= 1:
            raise ConfigurationError("max_fraction must lie in (0, 1]")

    def exponents(self, d: int) -> list[tuple[int, ...]]:
        """Exponent tuples of the polynomial part, constant first."""
        out = [(0,) * d]
        for j in range(d):
            for p in range(1, self.degree + 1):
                e = [0] * d
                e[j] = p
                out.append(tuple(e))
        for total in range(2, self.degree + 1):
            mixed = [e for e in itertools.product(range(total + 1), repeat=d)
                     if sum(e) == total and sum(1 for v in e if v) >= 2]
            out.extend(sorted(mixed, reverse=True))
        return out

    def count(self, d: int) -> int:
        """Number of basis functions for ``d`` assets."""
        if self.kind == "custom":
            return 1 + self.n_custom
        return len(self.exponents(d)) + (3 if self.include_payoff_terms else 0)

    def check_capacity(self, d: int, n_paths: int) -> None:
        """Raise unless the basis is small enough for ``n_paths`` samples."""
        m = self.count(d)
        if m > self.max_fraction * n_paths:
            raise InsufficientDataError(
                f"{m} basis functions need at least {math.ceil(m / self.max_fraction)} "
                f"paths (got {n_paths}); lower the basis size or raise max_fraction")


def eval_basis(spec: BasisSpec, state, payoff_value) -> np.ndarray:
    """Evaluate the basis functions.

    Parameters
    ----------
    spec : BasisSpec
    state : array_like, shape (..., d)
        Asset prices.
    payoff_value : array_like, shape (...)
        Payoff at ``state``.

    Returns
    -------
    ndarray, shape (..., count)
        Feature vectors; the first entry is always the constant 1.
    """
    state = np.asarray(state, dtype=float)
    g = np.asarray(payoff_value, dtype=float)
    lead = state.shape[:-1]
    if spec.kind == "custom":
        extra = np.asarray(spec.function(state, g), dtype=float).reshape(lead + (spec.n_custom,))
        return np.concatenate([np.ones(lead + (1,)), extra], axis=-1)
    d = state.shape[-1]
    y = -np.sort(-state, axis=-1)  # descending
    cols = []
    for e in spec.exponents(d):
        col = np.ones(lead)
        for j, p in enumerate(e):
            if p:
                col = col * y[..., j] ** p
        cols.append(col)
    if spec.include_payoff_terms:
        g = np.broadcast_to(g, lead)
        cols.extend([g, g * g, g * y[..., 0]])
    return np.stack(cols, axis=-1)


class LeastSquaresProjector:
    """Least-squares projection onto the span of a fixed design matrix.

    The factorisation is computed once; projecting a new target vector then
    costs two thin matrix-vector products.  This is what the backward schemes
    call at every time step and iteration.

    Parameters
    ----------
    X : ndarray, shape (P, m)
        Design matrix whose first column is the constant 1.
    mask : ndarray of bool, optional
        Rows used for fitting; predictions are still produced for every row.
    ridge : float
        Ridge applied (to the normalised problem) along numerically null
        singular directions, i.e. only when the design is rank-deficient.
    """

    def __init__(self, X: np.ndarray, mask: np.ndarray | None = None, ridge: float = DEFAULT_RIDGE):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2:
            raise ValueError("design matrix must be two-dimensional")
        self.mask = None if mask is None or np.all(mask) else np.asarray(mask, dtype=bool)
        Xf = X if self.mask is None else X[self.mask]
        P, m = Xf.shape
        if P < m or P == 0:
            raise InsufficientDataError(f"{P} samples cannot determine {m} coefficients")
        self.n_features = m
        feats = Xf[:, 1:]
        self.col_mean = feats.mean(axis=0)
        Z = feats - self.col_mean
        scale = np.sqrt(np.einsum("ij,ij->j", Z, Z))
        scale[scale == 0] = 1.0
        self.col_scale = scale
        Z /= scale
        if m > 1:
            U, s, Vt = np.linalg.svd(Z, full_matrices=False)
        else:
            U, s, Vt = np.zeros((P, 0)), np.zeros(0), np.zeros((0, 0))
        tol = (s[0] if s.size else 0.0) * max(Z.shape) * np.finfo(float).eps
        self.rank = int(np.sum(s > tol)) if s.size and s[0] > 0 else 0
        self.rank_deficient = self.rank < m - 1
        # Numerically null directions get the ridge s/(s^2 + ridge); the
        # well-determined ones are solved exactly.  Ridging every direction
        # would bias the fit by up to ridge/s^2 along the weak (but genuine)
        # directions of raw-price polynomials.
        null = s <= tol
        gain = np.zeros_like(s)
        gain[~null] = 1.0 / s[~null]
        gain[null] = s[null] / (s[null] ** 2 + ridge)
        self._U = U
        self._coef_map = Vt.T * gain  # (m-1, r): scaled coefficients = coef_map @ (U^T y)
        self._filter = gain * s  # fitted = U diag(filter) U^T y on the fitting rows
        if self.mask is not None:
            self._Z_all = (X[:, 1:] - self.col_mean) / scale

    def coefficients(self, y: np.ndarray) -> np.ndarray:
        """Raw-basis coefficient vector (intercept first)."""
        y = np.asarray(y, dtype=float)
        yf = y if self.mask is None else y[self.mask]
        ybar = yf.mean()
        beta = self._coef_map @ (self._U.T @ (yf - ybar)) / self.col_scale
        return np.concatenate([[ybar - self.col_mean @ beta], beta])

    def __call__(self, y: np.ndarray) -> np.ndarray:
        """Fitted values of ``y`` on every row of the design."""
        y = np.asarray(y, dtype=float)
        if self.mask is None:
            ybar = y.mean()
            return ybar + self._U @ (self._filter * (self._U.T @ (y - ybar)))
        yf = y[self.mask]
        ybar = yf.mean()
        return ybar + self._Z_all @ (self._coef_map @ (self._U.T @ (yf - ybar)))


@dataclass(frozen=True)
class FitResult:
    """Coefficients of one least-squares fit plus conditioning diagnostics."""

    coefficients: np.ndarray
    rank: int
    rank_deficient: bool


def fit(X, y, ridge: float = DEFAULT_RIDGE) -> FitResult:
    """Least-squares coefficients of ``y`` on the columns of ``X``.

    Parameters
    ----------
    X : array_like, shape (P, m)
        Design matrix whose first column is the constant 1 (as produced by
        :func:`eval_basis`).
    y : array_like, shape (P,)
        Targets.
    ridge : float
        Ridge used only if the design is rank-deficient.

    Returns
    -------
    FitResult

    Raises
    ------
    InsufficientDataError
        If ``P < m``.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y have different numbers of rows")
    if not np.allclose(X[:, 0], 1.0):
        raise ValueError("first design column must be the constant 1")
    proj = LeastSquaresProjector(X, ridge=ridge)
    return FitResult(proj.coefficients(y), proj.rank + 1, proj.rank_deficient)


@dataclass
class RegressionModel:
    """Basis description plus fitted coefficients per time step."""

    spec: BasisSpec
    coefficients: dict[int, np.ndarray] = field(default_factory=dict)
    rank_deficient: dict[int, bool] = field(default_factory=dict)

    def fit_step(self, k: int, state, payoff_value, target) -> FitResult:
        res = fit(eval_basis(self.spec, state, payoff_value), target)
        if not np.all(np.isfinite(res.coefficients)):
            raise StateError(f"non-finite coefficients at step {k}")
        self.coefficients[k] = res.coefficients
        self.rank_deficient[k] = res.rank_deficient
        return res

    def to_csv(self, path) -> None:
        """Dump ``step,coef_0,...`` rows (debugging aid)."""
        steps = sorted(self.coefficients)
        width = max((len(self.coefficients[k]) for k in steps), default=0)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step"] + [f"coef_{j}" for j in range(width)])
            for k in steps:
                w.writerow([k] + [repr(float(c)) for c in self.coefficients[k]])


def predict(model: RegressionModel, k: int, state, payoff_value):
    """Evaluate the fitted regression function of step ``k``.

    Raises
    ------
    StateError
        If step ``k`` has not been fitted.
    """
    if k not in model.coefficients:
        raise StateError(f"regression model has no fit for step {k}")
    val = eval_basis(model.spec, state, payoff_value) @ model.coefficients[k]
    return float(val) if np.ndim(val) == 0 else val
