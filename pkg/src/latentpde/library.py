"""Term library with the latent pressure and forcing eliminated.

Every candidate term F of the velocity equation is mapped to the scalar
``d/dt (dF_y/dx - dF_x/dy)`` at each sampled point. The curl removes the
pressure gradient, the time derivative removes the steady forcing, so the
rows depend on the measured velocity only.

The products are expanded with truncated Taylor arithmetic: u and v are
represented by their Taylor coefficients up to third order in space and
second order in time at the sample point, and sums, products and
derivatives act on those coefficient arrays. This is the product rule
applied mechanically; every value that reaches a row is a jet entry.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .field import FlowSeries, GridSpec
from .localpoly import (REQUIRED_ORDERS, JetTable, LocalPolyFitter, PolyFit, WindowSpec,
                        jet_at_center)

TERM_NAMES = (
    "(u.grad)u",
    "lap u",
    "u",
    "(div u) u",
    "(div u)^2 u",
    "(curl u)^2 u",
    "|u|^2 u",
)
N_TERMS = len(TERM_NAMES)

# Taylor box: orders 0..3 in x and y, 0..2 in t
_BOX = (4, 4, 3)


class FitError(RuntimeError):
    def __init__(self, center, cause):
        super().__init__(f"local fit failed at sample point {tuple(center)}: {cause}")
        self.center = tuple(center)


@dataclass(frozen=True)
class SamplePlan:
    K: int = 250
    seed: int = 0

    def __post_init__(self):
        if self.K < N_TERMS + 1:
            raise ValueError(f"K={self.K} must exceed the number of terms ({N_TERMS})")


@dataclass
class TermLibrary:
    Q: np.ndarray
    q0: np.ndarray
    sample_points: np.ndarray
    term_names: tuple = field(default=TERM_NAMES)

    def __post_init__(self):
        self.Q = np.asarray(self.Q, dtype=float)
        self.q0 = np.asarray(self.q0, dtype=float)
        if self.Q.shape != (self.q0.size, N_TERMS):
            raise ValueError(f"Q has shape {self.Q.shape}, expected ({self.q0.size}, {N_TERMS})")
        if not (np.isfinite(self.Q).all() and np.isfinite(self.q0).all()):
            raise ValueError("library contains non-finite entries")

    @property
    def K(self):
        return self.q0.size

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "k", "q0"] + [f"q{n + 1}" for n in range(N_TERMS)])
            for p, t, row in zip(self.sample_points, self.q0, self.Q):
                w.writerow([int(p[0]), int(p[1]), int(p[2]), repr(float(t))]
                           + [repr(float(x)) for x in row])


def sample_margins(grid: GridSpec, window: WindowSpec):
    return window.half_counts(grid)


def interior_count(grid: GridSpec, window: WindowSpec) -> int:
    n = 1
    for h, size in zip(sample_margins(grid, window), grid.shape):
        n *= max(size - 2 * h, 0)
    return n


def sample_points(grid: GridSpec, window: WindowSpec, plan: SamplePlan) -> np.ndarray:
    """``K`` distinct random centres whose windows lie inside the grid."""
    hx, hy, ht = sample_margins(grid, window)
    dims = (grid.nx - 2 * hx, grid.ny - 2 * hy, grid.nt - 2 * ht)
    available = interior_count(grid, window)
    if plan.K > available:
        raise ValueError(f"requested K={plan.K} sample points, only {available} available")
    rng = np.random.default_rng(plan.seed)
    flat = rng.choice(available, size=plan.K, replace=False)
    idx = np.stack(np.unravel_index(flat, dims), axis=1)
    return idx + np.array([hx, hy, ht])


# --- truncated Taylor arithmetic -------------------------------------------

def _taylor(table: dict, batch_shape) -> np.ndarray:
    T = np.zeros(tuple(batch_shape) + _BOX)
    for (a, b, c), value in table.items():
        if a < _BOX[0] and b < _BOX[1] and c < _BOX[2]:
            T[..., a, b, c] = value / (math.factorial(a) * math.factorial(b) * math.factorial(c))
    return T


def _mul(f, g):
    out = np.zeros(np.broadcast_shapes(f.shape, g.shape))
    na, nb, nc = _BOX
    for a in range(na):
        for b in range(nb - a):
            for c in range(nc):
                fa = f[..., a, b, c]
                if not np.any(fa):
                    continue
                out[..., a:, b:, c:] += fa[..., None, None, None] * g[..., :na - a, :nb - b, :nc - c]
    return out


def _d(f, axis):
    out = np.zeros_like(f)
    ax = f.ndim - 3 + axis
    n = f.shape[ax]
    src = [slice(None)] * f.ndim
    dst = [slice(None)] * f.ndim
    src[ax] = slice(1, n)
    dst[ax] = slice(0, n - 1)
    shape = [1] * f.ndim
    shape[ax] = n - 1
    out[tuple(dst)] = f[tuple(src)] * np.arange(1, n).reshape(shape)
    return out


def _curl_dt(F):
    """``d/dt (dFy/dx - dFx/dy)`` at the expansion point."""
    Fx, Fy = F
    return Fy[..., 1, 0, 1] - Fx[..., 0, 1, 1]


def _check_jet(jet: JetTable):
    for order in REQUIRED_ORDERS:
        jet["u", order]
        jet["v", order]


def candidate_terms(u, v):
    """The seven candidate vector fields as Taylor arrays."""
    dx = lambda f: _d(f, 0)  # noqa: E731
    dy = lambda f: _d(f, 1)  # noqa: E731
    ux, uy, vx, vy = dx(u), dy(u), dx(v), dy(v)
    div = ux + vy
    curl = vx - uy
    div2 = _mul(div, div)
    curl2 = _mul(curl, curl)
    speed2 = _mul(u, u) + _mul(v, v)
    return [
        (_mul(u, ux) + _mul(v, uy), _mul(u, vx) + _mul(v, vy)),
        (dx(dx(u)) + dy(dy(u)), dx(dx(v)) + dy(dy(v))),
        (u, v),
        (_mul(div, u), _mul(div, v)),
        (_mul(div2, u), _mul(div2, v)),
        (_mul(curl2, u), _mul(curl2, v)),
        (_mul(speed2, u), _mul(speed2, v)),
    ]


def eval_row(jet: JetTable):
    """Target and library entries for one jet (or a batch of jets).

    Returns ``(q0, q)`` where ``q`` has a trailing axis of length 7.
    """
    _check_jet(jet)
    batch = np.shape(jet["u", (0, 0, 0)])
    u = _taylor(jet.du, batch)
    v = _taylor(jet.dv, batch)
    q0 = _curl_dt((_d(u, 2), _d(v, 2)))
    q = np.stack([_curl_dt(F) for F in candidate_terms(u, v)], axis=-1)
    return q0, q


def build_library_at(series: FlowSeries, window: WindowSpec, points,
                     fitter: LocalPolyFitter | None = None) -> TermLibrary:
    """Library rows at the given grid triples, in order."""
    if fitter is None:
        fitter = LocalPolyFitter(window, series.grid)
    points = np.asarray(points, dtype=int).reshape(-1, 3)
    U = np.empty((len(points),) + tuple(o + 1 for o in window.orders))
    V = np.empty_like(U)
    for n, center in enumerate(points):
        try:
            fit = fitter.fit(series, center)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise FitError(center, exc) from exc
        U[n], V[n] = fit.U, fit.V
    q0, Q = eval_row(jet_at_center(PolyFit(U, V), window))
    return TermLibrary(Q, q0, points)


def build_library(series: FlowSeries, window: WindowSpec, plan: SamplePlan,
                  fitter: LocalPolyFitter | None = None) -> TermLibrary:
    """Sample ``plan.K`` points, fit each window and evaluate the rows."""
    pts = sample_points(series.grid, window, plan)
    return build_library_at(series, window, pts, fitter)
