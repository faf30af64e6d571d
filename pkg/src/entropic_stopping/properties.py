"""Grid-based property checks for the driver family.

Each check evaluates one structural property of the special functions in
:mod:`entropic_stopping.drivers` on a deterministic grid and returns a
:class:`CheckResult`.  The suite backs both the ``proptest`` CLI subcommand
and the test-suite, and runs in well under ten seconds.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import drivers as D


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _result(name, passed, detail):
    return CheckResult(name, bool(passed), detail)


def check_phi_lipschitz() -> CheckResult:
    """Difference quotients of Phi lie in [0, 1] on [-50, 50]."""
    x = np.linspace(-50.0, 50.0, 20001)
    slope = np.diff(D.phi(x)) / np.diff(x)
    ok = slope.min() >= 0.0 and slope.max() <= 1.0 + 1e-9
    return _result("phi_lipschitz", ok, f"slope range [{slope.min():.3e}, {slope.max():.12f}]")


def check_phi_n_slope() -> CheckResult:
    """Difference quotients of Phi_n lie in [0, n] for n in {1, 2, 5, 100}."""
    x = np.linspace(-10.0, 10.0, 8001)
    worst = []
    ok = True
    for n in (1.0, 2.0, 5.0, 100.0):
        slope = np.diff(D.phi_n(x, n)) / np.diff(x)
        lo, hi = slope.min(), slope.max()
        ok &= lo >= -1e-7 * n and hi <= n * (1 + 1e-7)
        worst.append(f"n={n:g}:[{lo:.2e},{hi / n:.9f}n]")
    return _result("phi_n_slope", ok, " ".join(worst))


def check_phi_n_monotone_in_n() -> CheckResult:
    """Phi_n(x) is non-decreasing in n for every grid x."""
    x = np.linspace(-20.0, 20.0, 4001)
    ns = (1.0, 1.5, 2.0, 5.0, 10.0, 100.0, 1000.0)
    vals = np.array([D.phi_n(x, n) for n in ns])
    diff = np.diff(vals, axis=0)
    tol = 1e-12 * (1.0 + np.abs(vals[1:]))
    ok = np.all(diff >= -tol)
    return _result("phi_n_monotone_in_n", ok, f"min successive difference {diff.min():.3e}")


def check_psi_cdf() -> CheckResult:
    """Psi is non-decreasing, [0,1]-valued, with the stated tail bounds."""
    x = np.linspace(-50.0, 50.0, 20001)
    v = D.psi(x)
    mono = np.all(np.diff(v) >= -1e-15)
    bounded = v.min() >= 0.0 and v.max() <= 1.0
    tails = D.psi(-50.0) < 0.1 and D.psi(50.0) > 0.9
    return _result("psi_cdf", mono and bounded and tails,
                   f"range [{v.min():.4f}, {v.max():.4f}], psi(-50)={D.psi(-50.0):.4f}, "
                   f"psi(50)={D.psi(50.0):.4f}")


def check_penalization_gap() -> CheckResult:
    """0 <= x+ - c Phi(x/c) <= eps - c ln(1 - e^{-eps/c}) + c [ln|x|]+ - c ln c."""
    x = np.linspace(-20.0, 20.0, 4001)
    ok = True
    worst = np.inf
    for c in (0.01, 0.1, 1.0):
        gap = np.maximum(x, 0.0) - c * D.phi(x / c)
        with np.errstate(divide="ignore"):
            lnx = np.maximum(np.log(np.abs(x)), 0.0)
        for eps in (0.1, 0.5, 0.9):
            bound = eps - c * math.log(-math.expm1(-eps / c)) + c * lnx - c * math.log(c)
            ok &= np.all(gap >= -1e-12) and np.all(gap <= bound + 1e-12)
            worst = min(worst, float(np.min(bound - gap)))
    return _result("penalization_gap", ok, f"min slack to upper bound {worst:.3e}")


def check_ratio_increasing() -> CheckResult:
    """(x^n - 1)/(x^m - 1) is increasing on (0, 1)."""
    x = np.linspace(1e-3, 1 - 1e-3, 9981)
    ok = True
    mins = []
    for n, m in ((3, 2), (5, 2), (10, 7)):
        lx = np.log(x)
        f = np.expm1(n * lx) / np.expm1(m * lx)
        d = np.diff(f)
        # near x = 0 the increments of x^n fall below double resolution, so
        # the grid test is non-strict plus a strict net increase
        ok &= np.all(d >= 0) and f[-1] > f[0]
        mins.append(f"({n},{m}):{d.min():.2e}")
    return _result("ratio_increasing", ok, " ".join(mins))


def check_root_bounds() -> CheckResult:
    """-1 <= root(n) <= 0, non-increasing in n, and |root(n) + 1| <= 1/n."""
    ns = np.arange(1, 1001)
    roots = np.array([D.phi_n_root(float(n)) for n in ns])
    in_range = np.all((roots >= -1.0) & (roots <= 0.0))
    mono = np.all(np.diff(roots) <= 0.0)
    near = np.all(np.abs(roots + 1.0) <= 1.0 / ns)
    return _result("root_bounds", in_range and mono and near,
                   f"root(2)={roots[1]:.6f}, root(1000)+1={roots[-1] + 1:.2e}")


def check_truncation_derivative() -> CheckResult:
    """|d/dx Phi_{lambda,n}(p, x)| <= max(1, 1/|root(2)|) right of the root."""
    bound = max(1.0, 1.0 / abs(D.phi_n_root(2.0))) + 1e-6
    p = 1.0
    worst = 0.0
    for n in (1.0, 2.0, 5.0, 10.0, 100.0, 1000.0):
        for lam in (0.01, 0.1, 0.5, 1.0):
            prm = D.DriverParams(lam=lam, n=n)
            x = np.linspace(p - lam * D.phi_n_root(n), p + 10.0, 20001)
            slope = np.abs(np.diff(D.phi_lambda_n(p, x, prm)) / np.diff(x))
            worst = max(worst, float(slope.max()))
    return _result("truncation_derivative", worst <= bound,
                   f"max slope {worst:.6f} vs bound {bound:.6f}")


def check_rescale_consistency() -> CheckResult:
    """lambda Phi_n(y) agrees with lambda Phi(n y) + lambda ln n to 1e-10 relative."""
    y = np.linspace(-30.0, 30.0, 6001)
    worst = 0.0
    for n in (1.0, 2.0, 10.0, 1000.0):
        for lam in (0.001, 0.1, 1.0):
            direct = lam * D.phi_n(y, n)
            rescaled = lam * D.phi(n * y) + lam * math.log(n)
            scale = np.maximum(np.maximum(np.abs(direct), np.abs(rescaled)), lam)
            worst = max(worst, float(np.max(np.abs(direct - rescaled) / scale)))
    return _result("rescale_consistency", worst <= 1e-10, f"max relative difference {worst:.2e}")


ALL_CHECKS: tuple[Callable[[], CheckResult], ...] = (
    check_phi_lipschitz,
    check_phi_n_slope,
    check_phi_n_monotone_in_n,
    check_psi_cdf,
    check_penalization_gap,
    check_ratio_increasing,
    check_root_bounds,
    check_truncation_derivative,
    check_rescale_consistency,
)


def run_driver_properties() -> tuple[list[CheckResult], float]:
    """Run every check; return the results and the elapsed wall time in seconds."""
    t0 = time.perf_counter()
    results = [check() for check in ALL_CHECKS]
    return results, time.perf_counter() - t0
