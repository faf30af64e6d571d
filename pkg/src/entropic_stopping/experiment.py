"""Experiment configuration, orchestration and CSV reporting.

An experiment prices one payoff for several initial prices ``S0`` and penalty
levels ``n`` with several schemes.  For every ``S0`` a single set of paths is
simulated and shared by all schemes (common random numbers), so differences
between schemes are not dominated by Monte Carlo noise.  Each row of the
report records one ``(S0, n, scheme)`` price; a failing row carries an error
marker in its ``flags`` column instead of aborting the run.

Configuration files are YAML; every field is optional::

    market:  {s0: [90, 100, 110], r: 0.05, delta: 0.1, sigma: 0.2, T: 3.0, d: 2}
    payoff:  {K: 100.0, kind: max_call}
    grid:    {N: 100}
    n_values: [10, 100, 1000]
    lambda: null            # null couples lambda = 1/n
    schemes:                # names, or mappings with per-scheme overrides
      - implicit
      - pia
      - {name: classical, target: value}
      - european
      - binomial
    n_paths: 100000
    seed: 12345
    theta: 1.0
    newton: {max_iter: 20, tol: 1.0e-10}
    pia_iterations: 10
    binomial_steps: 400
    basis: {degree: 3, include_payoff_terms: true, itm_only: false}
    workers: 1
    timing: true
    output: table1.csv
"""
from __future__ import annotations

import csv
import gc
import logging
import math
import sys
import time
import warnings
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from .benchmark import BinomialConfig, binomial_price
from .drivers import DriverParams
from .errors import ConfigurationError
from .market import MarketConfig, PayoffSpec, TimeGrid, simulate_paths
from .regression import BasisSpec
from .schemes import (
    RegressionContext,
    SchemeConfig,
    classical_penalization,
    entropy_implicit,
    european_price,
    pia,
)

__all__ = [
    "SchemeSelector",
    "ExperimentConfig",
    "ReportRow",
    "ExperimentReport",
    "load_config",
    "run_experiment",
    "emit_report",
    "read_report",
    "format_table",
    "HEADER",
]

log = logging.getLogger(__name__)

HEADER = ("s0", "n", "lambda", "scheme", "price", "std_error", "runtime_ms", "flags")
MC_SCHEMES = ("implicit", "pia", "classical")
SCHEMES = MC_SCHEMES + ("european", "binomial")
ERROR_FLAG = "error"


@dataclass(frozen=True)
class SchemeSelector:
    """A scheme name plus optional per-scheme overrides."""

    name: str
    theta: float | None = None
    target: str | None = None

    def __post_init__(self):
        if self.name not in SCHEMES:
            raise ConfigurationError(f"unknown scheme {self.name!r}; choose from {SCHEMES}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one experiment."""

    market: MarketConfig = field(default_factory=lambda: MarketConfig(s0=(100.0, 100.0)))
    s0_values: tuple = (90.0, 100.0, 110.0)
    payoff: PayoffSpec = PayoffSpec()
    grid: TimeGrid = TimeGrid(N=100, T=3.0)
    n_values: tuple = (10.0, 100.0, 1000.0)
    lam: float | None = None
    schemes: tuple = tuple(SchemeSelector(s) for s in SCHEMES)
    n_paths: int = 100_000
    seed: int = 12345
    theta: float = 1.0
    newton_max_iter: int = 20
    newton_tol: float = 1e-10
    pia_iterations: int = 10
    binomial_steps: int = 400
    basis: BasisSpec = BasisSpec()
    workers: int = 1
    timing: bool = True
    output_path: str | None = None

    def __post_init__(self):
        if not self.schemes:
            raise ConfigurationError("at least one scheme must be selected")
        if not self.s0_values:
            raise ConfigurationError("at least one initial price is required")
        if any(n < 0 for n in self.n_values):
            raise ConfigurationError("n values must be non-negative")
        if self.lam is not None and not 0 < self.lam <= 1:
            raise ConfigurationError("lambda must lie in (0, 1]")
        if self.n_paths < 1:
            raise ConfigurationError("n_paths must be positive")
        if abs(self.grid.T - self.market.T) > 1e-12:
            raise ConfigurationError("grid horizon differs from market maturity")

    def lam_for(self, n: float) -> float:
        return self.lam if self.lam is not None else 1.0 / n

    def scheme_config(self, sel: SchemeSelector, n: float) -> SchemeConfig:
        coupled = self.lam is None
        lam = self.lam_for(n) if n > 0 else 1.0
        return SchemeConfig(
            params=DriverParams(lam, n, self.market.r),
            theta=self.theta if sel.theta is None else sel.theta,
            newton_max_iter=self.newton_max_iter,
            newton_tol=self.newton_tol,
            pia_iterations=self.pia_iterations,
            couple_lambda_n=coupled,
            target=sel.target,
        )


def _selector(item) -> SchemeSelector:
    if isinstance(item, SchemeSelector):
        return item
    if isinstance(item, str):
        return SchemeSelector(item)
    if isinstance(item, dict):
        unknown = set(item) - {"name", "theta", "target"}
        if unknown or "name" not in item:
            raise ConfigurationError(f"bad scheme entry {item!r}")
        return SchemeSelector(**item)
    raise ConfigurationError(f"bad scheme entry {item!r}")


def config_from_dict(data: dict[str, Any] | None, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from a (parsed YAML) mapping; missing fields keep ``base``."""
    base = base or ExperimentConfig()
    data = dict(data or {})
    known = {"market", "payoff", "grid", "n_values", "lambda", "schemes", "n_paths", "seed",
             "theta", "newton", "pia_iterations", "binomial_steps", "basis", "workers",
             "timing", "output"}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {sorted(unknown)}")
    try:
        kw: dict[str, Any] = {}
        m = dict(data.get("market") or {})
        s0 = m.pop("s0", None)
        d = int(m.pop("d", base.market.d))
        market = replace(base.market, s0=(base.market.s0[0],) * d, **m)
        kw["market"] = market
        if s0 is not None:
            kw["s0_values"] = tuple(float(v) for v in np.atleast_1d(s0))
        if "payoff" in data:
            kw["payoff"] = PayoffSpec(**data["payoff"])
        g = dict(data.get("grid") or {})
        kw["grid"] = TimeGrid(N=int(g.get("N", base.grid.N)), T=float(g.get("T", market.T)))
        if "n_values" in data:
            kw["n_values"] = tuple(float(v) for v in np.atleast_1d(data["n_values"]))
        if "lambda" in data:
            kw["lam"] = None if data["lambda"] is None else float(data["lambda"])
        if "schemes" in data:
            kw["schemes"] = tuple(_selector(s) for s in data["schemes"])
        for key, attr in (("n_paths", "n_paths"), ("seed", "seed"), ("pia_iterations", "pia_iterations"),
                          ("binomial_steps", "binomial_steps"), ("workers", "workers")):
            if key in data:
                kw[attr] = int(data[key])
        if "theta" in data:
            kw["theta"] = float(data["theta"])
        newton = data.get("newton") or {}
        if "max_iter" in newton:
            kw["newton_max_iter"] = int(newton["max_iter"])
        if "tol" in newton:
            kw["newton_tol"] = float(newton["tol"])
        if "basis" in data:
            kw["basis"] = BasisSpec(**data["basis"])
        if "timing" in data:
            kw["timing"] = bool(data["timing"])
        if "output" in data:
            kw["output_path"] = data["output"]
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"invalid configuration: {exc}") from exc


def load_config(path) -> ExperimentConfig:
    """Read a YAML experiment configuration.

    Raises
    ------
    OSError
        If the file cannot be read.
    ConfigurationError
        If it is not valid YAML or contains invalid values.
    """
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: not valid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return config_from_dict(data)


# ---------------------------------------------------------------------------
# report

@dataclass(frozen=True)
class ReportRow:
    """One line of the report.  ``n`` and ``lam`` are ``None`` for n-free rows."""

    s0: float
    n: float | None
    lam: float | None
    scheme: str
    price: float
    std_error: float
    runtime_ms: float
    flags: str = ""

    @property
    def failed(self) -> bool:
        return any(f.split("=", 1)[0] == ERROR_FLAG for f in self.flags.split(";") if f)


@dataclass
class ExperimentReport:
    rows: list[ReportRow] = field(default_factory=list)
    errors: list[BaseException] = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return not any(r.failed for r in self.rows)

    def find(self, s0: float, scheme: str, n: float | None = None) -> ReportRow:
        for r in self.rows:
            if r.scheme == scheme and r.s0 == s0 and (n is None or r.n == n):
                return r
        raise KeyError((s0, scheme, n))


def _g6(x: float | None) -> str:
    if x is None:
        return ""
    return f"{x:.6g}"


def _flags(diag: dict) -> str:
    parts = []
    for key in sorted(diag):
        val = diag[key]
        if isinstance(val, (list, tuple, dict)) or val is None:
            continue
        if isinstance(val, float):
            val = _g6(val)
        parts.append(f"{key}={val}")
    return ";".join(parts)


def _error_flag(exc: BaseException) -> str:
    msg = str(exc).replace(";", ",").replace("\n", " ")
    return f"{ERROR_FLAG}={type(exc).__name__}: {msg}"


def _row(s0, n, lam, scheme, fn: Callable[[], tuple], report: ExperimentReport, timing: bool) -> ReportRow:
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            price, se, diag = fn()
        diag = dict(diag)
        if caught:
            diag["warnings"] = len(caught)
        flags = _flags(diag)
    except Exception as exc:  # a failed row must not abort the experiment
        log.warning("%s at S0=%s n=%s failed: %s", scheme, s0, n, exc)
        report.errors.append(exc)
        price, se, flags = math.nan, math.nan, _error_flag(exc)
    ms = (time.perf_counter() - t0) * 1e3 if timing else 0.0
    row = ReportRow(float(s0), n, lam, scheme, float(price), float(se), ms, flags)
    report.rows.append(row)
    return row


def _reraise(exc):
    raise exc


def run_experiment(cfg: ExperimentConfig, progress: Callable[[ReportRow], None] | None = None,
                   on_paths: Callable | None = None) -> ExperimentReport:
    """Run every requested (S0, n, scheme) combination.

    For each ``S0``: simulate the paths once, run the Monte Carlo schemes for
    every ``n`` on them, then add one European row and one binomial row.
    Rows are ordered by configuration, and the result is deterministic for a
    given configuration (apart from ``runtime_ms`` when timing is enabled).

    Parameters
    ----------
    progress : callable, optional
        Called with each finished row.
    on_paths : callable, optional
        Called as ``on_paths(s0, paths, context)`` after the schemes of one
        ``S0`` have run (used for path export and coefficient dumps).
    """
    report = ExperimentReport()
    names = [s.name for s in cfg.schemes]
    mc = [s for s in cfg.schemes if s.name in MC_SCHEMES]
    runners = {"implicit": entropy_implicit, "pia": pia, "classical": classical_penalization}
    for s0 in cfg.s0_values:
        market = cfg.market.with_s0(s0)
        paths = ctx = ctx_error = None
        if mc or "european" in names:
            try:
                paths = simulate_paths(market, cfg.grid, cfg.n_paths, cfg.seed, workers=cfg.workers)
            except Exception as exc:
                for sel in cfg.schemes:
                    if sel.name != "binomial":
                        _row(s0, None, None, sel.name, partial(_reraise, exc), report, cfg.timing)
        if paths is not None:
            if mc:
                try:
                    ctx = RegressionContext(paths, cfg.payoff, cfg.basis)
                except Exception as exc:
                    ctx_error = exc
            for n in cfg.n_values:
                for sel in mc:
                    lam = cfg.lam_for(n) if n > 0 else None

                    def fn(sel=sel, n=n):
                        if ctx_error is not None:
                            raise ctx_error
                        s = runners[sel.name](paths, cfg.payoff, cfg.scheme_config(sel, n), cfg.basis, ctx)
                        return s.price, s.std_error, s.diagnostics

                    row = _row(s0, float(n), lam, sel.name, fn, report, cfg.timing)
                    if progress:
                        progress(row)
            if "european" in names:
                def fe():
                    e = european_price(paths, cfg.payoff, market.r)
                    return e.price, e.std_error, {}
                row = _row(s0, None, None, "european", fe, report, cfg.timing)
                if progress:
                    progress(row)
            if on_paths is not None:
                on_paths(s0, paths, ctx)
        if "binomial" in names:
            def fb():
                bc = BinomialConfig(cfg.binomial_steps, market, cfg.payoff)
                return binomial_price(bc), 0.0, {"steps": cfg.binomial_steps}
            row = _row(s0, None, None, "binomial", fb, report, cfg.timing)
            if progress:
                progress(row)
        del paths, ctx
        gc.collect()
    return report


def emit_report(report: ExperimentReport, path=None, stream=None, quiet: bool = False) -> None:
    """Write the report as CSV (if ``path`` is given) and print an aligned table.

    Floating-point fields carry 6 significant digits; ``n`` and ``lambda``
    are empty for rows that do not depend on them.  The table goes to
    ``stream`` (standard output by default) unless ``quiet``.

    Raises
    ------
    OSError
        If the file cannot be written; the message names the path.
    """
    if path is not None:
        try:
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(HEADER)
                for r in report.rows:
                    w.writerow([_g6(r.s0), _g6(r.n), _g6(r.lam), r.scheme, _g6(r.price),
                                _g6(r.std_error), _g6(r.runtime_ms), r.flags])
        except OSError as exc:
            raise OSError(f"cannot write report to {path}: {exc.strerror or exc}") from exc
    if not quiet:
        (stream or sys.stdout).write(format_table(report) + "\n")


def format_table(report: ExperimentReport) -> str:
    """Aligned plain-text rendering of the report (without flags)."""
    head = ("S0", "n", "lambda", "scheme", "price", "std_error", "runtime_ms", "status")
    body = [(_g6(r.s0), _g6(r.n), _g6(r.lam), r.scheme, _g6(r.price), _g6(r.std_error),
             _g6(r.runtime_ms), "ERROR" if r.failed else "ok") for r in report.rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(head)]
    lines = ["  ".join(h.rjust(w) for h, w in zip(head, widths))]
    lines += ["  ".join(c.rjust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


def read_report(path) -> ExperimentReport:
    """Parse a CSV written by :func:`emit_report`."""
    def num(s):
        return None if s == "" else float(s)

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != HEADER:
            raise ConfigurationError(f"{path}: unexpected header {header}")
        rows = [ReportRow(float(s0), num(n), num(lam), scheme, float(price), float(se), float(ms), flags)
                for s0, n, lam, scheme, price, se, ms, flags in reader]
    return ExperimentReport(rows)
