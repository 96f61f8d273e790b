"""Ensembles over sampling realizations and the sweeps built from them.

Every realization draws its sample points from a seed that depends only on
``(base_seed, realization)``; noisy data uses a seed that depends on
``(base_seed, sigma index, realization)``. Realization ``r`` therefore sees
the same sample points at every value of a sweep axis, and the same noise
at every polynomial order.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .field import FlowSeries, NoiseSpec, add_noise
from .kolmogorov import ModelParams, autocorrelation_time
from .library import N_TERMS, SamplePlan, TermLibrary, build_library_at, sample_points
from .localpoly import LocalPolyFitter, WindowSpec
from .regression import (RegressionConfig, RegressionResult, false_negative_probe,
                         threshold_iterate)

log = logging.getLogger(__name__)

#: Terms whose loss marks a realization as a false negative in filtered
#: statistics (advection, Laplacian, linear friction).
DEFAULT_FILTER_TERMS = (0, 1, 2)


def fmt(x) -> str:
    """Fixed 17-significant-digit rendering used in every output file."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.17g}"


def data_window(series: FlowSeries, L: int = 10, N: int | None = None, chi: float = 1.0,
                lam: float = 0.5) -> WindowSpec:
    """Spatial half-width ``chi/2`` and temporal half-width 0.85 of the
    autocorrelation time measured on ``series``."""
    return WindowSpec.paper(L=L, N=N, tau=autocorrelation_time(series), chi=chi, lam=lam)


def sampling_seed(base_seed: int, realization: int) -> int:
    return int(np.random.SeedSequence([base_seed, 0, realization]).generate_state(1)[0])


def noise_seed(base_seed: int, sigma_index: int, realization: int) -> int:
    return int(np.random.SeedSequence([base_seed, 1, sigma_index, realization]).generate_state(1)[0])


def rel_error(c_est, c_ref):
    """``|(c_ref - c_est) / c_ref|``; absolute ``|c_est|`` where ``c_ref == 0``.

    Returns ``(delta, false_positive)``: the error per coefficient and a mask
    of zero-reference coefficients that came out nonzero.
    """
    c_est = np.asarray(c_est, dtype=float)
    c_ref = np.asarray(c_ref, dtype=float)
    zero = c_ref == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        delta = np.where(zero, np.abs(c_est), np.abs((c_ref - c_est) / np.where(zero, 1, c_ref)))
    return delta, zero & (c_est != 0)


@dataclass(frozen=True)
class EnsembleSpec:
    window: WindowSpec
    plan: SamplePlan = SamplePlan()
    reg: RegressionConfig = RegressionConfig()
    n_realizations: int = 40
    base_seed: int = 0
    seeds: tuple | None = None
    filter_terms: tuple = DEFAULT_FILTER_TERMS

    def __post_init__(self):
        if self.n_realizations < 2:
            raise ValueError("an ensemble needs at least 2 realizations")
        if self.seeds is not None and len(self.seeds) != self.n_realizations:
            raise ValueError("explicit seeds must match n_realizations")

    def sampling_seed(self, r: int) -> int:
        if self.seeds is not None:
            return int(self.seeds[r])
        return sampling_seed(self.base_seed, r)


@dataclass
class Record:
    """Outcome of one realization at one sweep-axis value."""

    axis_value: float
    realization: int
    sampling_seed: int
    noise_seed: int | None
    c: np.ndarray | None = None
    active: np.ndarray | None = None
    eta_ratio: float = math.nan
    relevance: np.ndarray | None = None
    delta_c: np.ndarray | None = None
    term_false_negative: np.ndarray | None = None
    false_negative: bool = False
    error: str = ""
    result: RegressionResult | None = field(default=None, repr=False)
    library: TermLibrary | None = field(default=None, repr=False)

    @property
    def ok(self) -> bool:
        return not self.error


def _record(axis_value, r, s_seed, n_seed, lib, reg, c_ref, filter_terms, keep_library):
    rec = Record(axis_value, r, s_seed, n_seed)
    try:
        res = threshold_iterate(lib, reg)
    except (ValueError, np.linalg.LinAlgError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
        return rec
    rec.result = res
    rec.c = res.c
    rec.active = res.active
    rec.eta_ratio = res.eta_ratio
    rec.relevance = res.relevance
    rec.delta_c, _ = rel_error(res.c, c_ref)
    rec.term_false_negative = (np.asarray(c_ref) != 0) & ~res.active
    rec.false_negative = bool(rec.term_false_negative[list(filter_terms)].any())
    if keep_library:
        rec.library = lib
    return rec


def _failed(axis_value, r, s_seed, n_seed, exc):
    rec = Record(axis_value, r, s_seed, n_seed)
    rec.error = f"{type(exc).__name__}: {exc}"
    log.warning("realization %d at %s failed: %s", r, axis_value, rec.error)
    return rec


def _noisy(series, sigma, seed):
    return series if sigma == 0 else add_noise(series, NoiseSpec(sigma, seed))


def _map(fn, items, jobs):
    if jobs is None or jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


class SweepResult:
    """Raw per-realization records plus the statistics derived from them."""

    QUANTITIES = ("eta_over_eta0", "delta_c", "R", "c_est")

    def __init__(self, kind: str, axis, records, c_ref, filter_terms=DEFAULT_FILTER_TERMS):
        self.kind = kind
        self.axis = list(axis)
        self.records = list(records)
        self.c_ref = np.asarray(c_ref, dtype=float)
        self.filter_terms = tuple(filter_terms)

    def at(self, value, filtered=False, ok_only=True):
        out = [r for r in self.records if r.axis_value == value]
        if ok_only:
            out = [r for r in out if r.ok]
        if filtered:
            out = [r for r in out if not r.false_negative]
        return out

    def false_negative_count(self, value) -> int:
        return sum(r.false_negative for r in self.at(value))

    def values(self, value, quantity, term=None, filtered=False, active_only=None):
        """Per-realization samples of one quantity.

        ``delta_c`` defaults to active terms only, so a term that is
        dropped everywhere has no entries.
        """
        recs = self.at(value, filtered)
        if quantity == "eta_over_eta0":
            return np.array([r.eta_ratio for r in recs])
        if active_only is None:
            active_only = quantity == "delta_c"
        get = {"delta_c": lambda r: r.delta_c, "R": lambda r: r.relevance,
               "c_est": lambda r: r.c}[quantity]
        return np.array([get(r)[term] for r in recs if not active_only or r.active[term]])

    def stats(self, value, quantity, term=None, filtered=False):
        v = self.values(value, quantity, term, filtered)
        v = v[np.isfinite(v)] if v.size else v
        if v.size == 0:
            return {"n": 0, "mean": math.nan, "std": math.nan, "min": math.nan, "max": math.nan}
        return {"n": int(v.size), "mean": float(v.mean()), "std": float(v.std()),
                "min": float(v.min()), "max": float(v.max())}

    def mean(self, value, quantity, term=None, filtered=False):
        return self.stats(value, quantity, term, filtered)["mean"]

    def summary_rows(self):
        for value in self.axis:
            fn = self.false_negative_count(value)
            for filtered in (False, True):
                for quantity in self.QUANTITIES:
                    terms = [None] if quantity == "eta_over_eta0" else range(N_TERMS)
                    for term in terms:
                        s = self.stats(value, quantity, term, filtered)
                        yield [value, int(filtered), quantity,
                               "" if term is None else term + 1,
                               s["n"], s["mean"], s["std"], s["min"], s["max"], fn]

    def raw_rows(self):
        for rec in self.records:
            if not rec.ok:
                yield [rec.axis_value, rec.realization, "", "", "", "", "", "", "", rec.error]
                continue
            for i in range(N_TERMS):
                yield [rec.axis_value, rec.realization, i + 1, rec.c[i], rec.delta_c[i],
                       rec.eta_ratio, rec.relevance[i], bool(rec.active[i]),
                       bool(rec.term_false_negative[i]), ""]

    RAW_HEADER = ["axis_value", "realization", "term", "c_est", "delta_c", "eta_over_eta0",
                  "R", "active", "false_negative", "error"]
    SUMMARY_HEADER = ["axis_value", "filtered", "quantity", "term", "n", "mean", "std", "min",
                      "max", "false_negative_count"]

    def to_csv(self, raw_path, summary_path):
        for path, header, rows in ((raw_path, self.RAW_HEADER, self.raw_rows()),
                                   (summary_path, self.SUMMARY_HEADER, self.summary_rows())):
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([x if isinstance(x, str) else fmt(x) for x in row])


def run_ensemble(series: FlowSeries, spec: EnsembleSpec, c_ref, sigma: float = 0.0,
                 sigma_index: int = 0, jobs: int | None = None,
                 keep_libraries: bool = False) -> SweepResult:
    """Seeded sampling, library and regression for every realization."""
    return sweep_noise(series, [sigma], spec, c_ref, jobs=jobs, keep_libraries=keep_libraries,
                       first_index=sigma_index, kind="ensemble")


def _coeffs(c_ref):
    return c_ref.coeffs if isinstance(c_ref, ModelParams) else np.asarray(c_ref, dtype=float)


def sweep_noise(series: FlowSeries, sigma_values, spec: EnsembleSpec, c_ref, jobs=None,
                keep_libraries=False, first_index=0, kind="noise") -> SweepResult:
    """Ensemble at each noise level; sample points are paired across levels."""
    sigma_values = [float(s) for s in sigma_values]
    if not sigma_values:
        raise ValueError("no noise values given")
    if any(s < 0 for s in sigma_values):
        raise ValueError("noise levels must be non-negative")
    c_ref = _coeffs(c_ref)
    fitter = LocalPolyFitter(spec.window, series.grid)
    records = []
    for k, sigma in enumerate(sigma_values):
        si = first_index + k

        def one(r, sigma=sigma, si=si):
            s_seed = spec.sampling_seed(r)
            n_seed = noise_seed(spec.base_seed, si, r) if sigma > 0 else None
            try:
                pts = sample_points(series.grid, spec.window, replace(spec.plan, seed=s_seed))
                lib = build_library_at(_noisy(series, sigma, n_seed), spec.window, pts, fitter)
            except (ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
                return _failed(sigma, r, s_seed, n_seed, exc)
            return _record(sigma, r, s_seed, n_seed, lib, spec.reg, c_ref, spec.filter_terms,
                           keep_libraries)

        records += _map(one, range(spec.n_realizations), jobs)
        log.info("sigma=%g done", sigma)
    return SweepResult(kind, sigma_values, records, c_ref, spec.filter_terms)


def sweep_order(series: FlowSeries, L_values, N: int, spec: EnsembleSpec, c_ref=None,
                sigma: float = 0.0, sigma_index: int = 0, jobs=None) -> SweepResult:
    """Ensemble at each spatial order ``L`` (with ``M = L``) and fixed ``N``.

    Noise, when requested, is drawn once per realization and shared by all
    orders. Orders too low for the term library yield failed records.
    """
    L_values = [int(L) for L in L_values]
    if not L_values:
        raise ValueError("no polynomial orders given")
    windows, invalid = {}, {}
    for L in L_values:
        try:
            windows[L] = replace(spec.window, L=L, M=L, N=N)
        except ValueError as exc:
            # recorded per realization, like any other failed fit
            invalid[L] = exc
            log.warning("order L=%d skipped: %s", L, exc)
    fitters = {L: LocalPolyFitter(w, series.grid) for L, w in windows.items()}
    c_ref = np.zeros(N_TERMS) if c_ref is None else _coeffs(c_ref)

    def one(r):
        s_seed = spec.sampling_seed(r)
        n_seed = noise_seed(spec.base_seed, sigma_index, r) if sigma > 0 else None
        out = []
        try:
            pts = sample_points(series.grid, spec.window, replace(spec.plan, seed=s_seed))
            data = _noisy(series, sigma, n_seed)
        except (ValueError, np.linalg.LinAlgError) as exc:
            return [_failed(L, r, s_seed, n_seed, exc) for L in L_values]
        for L in L_values:
            if L in invalid:
                out.append(_failed(L, r, s_seed, n_seed, invalid[L]))
                continue
            try:
                lib = build_library_at(data, windows[L], pts, fitters[L])
            except (ValueError, np.linalg.LinAlgError, RuntimeError) as exc:
                out.append(_failed(L, r, s_seed, n_seed, exc))
                continue
            out.append(_record(L, r, s_seed, n_seed, lib, spec.reg, c_ref, spec.filter_terms,
                               False))
        return out

    nested = _map(one, range(spec.n_realizations), jobs)
    records = [rec for L in L_values for group in nested for rec in group if rec.axis_value == L]
    return SweepResult("order", L_values, records, c_ref, spec.filter_terms)


@dataclass
class XiResult:
    """Relative max-norm change of every library column under noise.

    ``xi[s, r, i]`` is the value for noise level ``s``, realization ``r`` and
    column ``i`` (0 is the target, 1..7 the library).
    """

    sigma: list
    xi: np.ndarray

    def mean(self):
        return np.nanmean(self.xi, axis=1)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sigma", "realization", "term", "xi"])
            for s, sig in enumerate(self.sigma):
                for r in range(self.xi.shape[1]):
                    for i in range(N_TERMS + 1):
                        w.writerow([fmt(sig), r, i, fmt(self.xi[s, r, i])])


def xi_values(clean: TermLibrary, noisy: TermLibrary) -> np.ndarray:
    """``||q_i(0) - q_i(sigma)||_inf / ||q_i(0)||_inf`` for the target and all columns."""
    A = np.column_stack([clean.q0, clean.Q])
    B = np.column_stack([noisy.q0, noisy.Q])
    ref = np.abs(A).max(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ref > 0, np.abs(A - B).max(axis=0) / ref, np.nan)


def xi_analysis(series: FlowSeries, sigma_values, spec: EnsembleSpec, jobs=None) -> XiResult:
    """Term sensitivity to noise on paired sample points."""
    sigma_values = [float(s) for s in sigma_values]
    fitter = LocalPolyFitter(spec.window, series.grid)

    def one(r):
        s_seed = spec.sampling_seed(r)
        pts = sample_points(series.grid, spec.window, replace(spec.plan, seed=s_seed))
        clean = build_library_at(series, spec.window, pts, fitter)
        rows = []
        for si, sigma in enumerate(sigma_values):
            if sigma == 0:
                rows.append(np.zeros(N_TERMS + 1))
                continue
            noisy = _noisy(series, sigma, noise_seed(spec.base_seed, si, r))
            rows.append(xi_values(clean, build_library_at(noisy, spec.window, pts, fitter)))
        return rows

    per_r = _map(one, range(spec.n_realizations), jobs)
    xi = np.array(per_r).transpose(1, 0, 2)
    return XiResult(sigma_values, xi)


def probe_records(sweep: SweepResult, term_index: int, value=None):
    """False-negative probe for every realization where ``term_index`` was dropped.

    Records must have been produced with ``keep_libraries=True``.
    """
    out = []
    for rec in sweep.records:
        if not rec.ok or (value is not None and rec.axis_value != value):
            continue
        if rec.active[term_index]:
            continue
        if rec.library is None:
            raise ValueError("probe needs the libraries; rerun with keep_libraries=True")
        out.append((rec, false_negative_probe(rec.library, rec.result, term_index)))
    return out

