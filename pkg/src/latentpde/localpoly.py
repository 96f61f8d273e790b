"""Weighted local polynomial fits in (x, y, t) and derivative extraction.

Data in a window of half-widths ``(Hx, Hy, Ht)`` is mapped to the cube
``[-1, 1]^3`` and fitted by a tensor-product polynomial of orders
``(L, M, N)`` under the Gaussian weight ``exp(-(xb^2 + yb^2 + tb^2) / lam^2)``.

Both the weight and the monomial basis factor over the axes, so the Gram
matrix of the normal equations is the Kronecker product of three per-axis
Hankel matrices built from weighted moments ``S(a) = sum_i w_i xb_i^a``.
Each axis is factored once per (window, grid); a fit is then three small
contractions of the data block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .field import FlowSeries, GridSpec

#: Derivative orders (a, b, c) = (d/dx, d/dy, d/dt) consumed by the term library.
REQUIRED_ORDERS = tuple(
    [(a, s - a, c) for c in (0, 1) for s in range(4) for a in range(s, -1, -1)]
    + [(0, 0, 2), (1, 0, 2), (0, 1, 2)]
)

COND_LIMIT = 1e12
AXES = ("x", "y", "t")


class IllConditionedError(np.linalg.LinAlgError):
    def __init__(self, axis, message):
        super().__init__(f"axis {axis}: {message}")
        self.axis = axis


@dataclass(frozen=True)
class WindowSpec:
    Hx: float
    Hy: float
    Ht: float
    L: int = 10
    M: int = 10
    N: int = 10
    lam: float = 0.5

    def __post_init__(self):
        if min(self.Hx, self.Hy, self.Ht) <= 0:
            raise ValueError("half-widths must be positive")
        if self.L < 3 or self.M < 3 or self.N < 2:
            raise ValueError(
                f"orders (L, M, N)=({self.L}, {self.M}, {self.N}) too low; "
                "need L, M >= 3 and N >= 2"
            )
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam!r}")

    @classmethod
    def paper(cls, L=10, N=None, M=None, tau=9.9, chi=1.0, lam=0.5) -> "WindowSpec":
        """Spatial half-width chi/2, temporal half-width 0.85 tau, M = L."""
        return cls(Hx=chi / 2, Hy=chi / 2, Ht=0.85 * tau, L=L,
                   M=L if M is None else M, N=L if N is None else N, lam=lam)

    @property
    def orders(self) -> tuple[int, int, int]:
        return (self.L, self.M, self.N)

    @property
    def half_widths(self) -> tuple[float, float, float]:
        return (self.Hx, self.Hy, self.Ht)

    def half_counts(self, grid: GridSpec) -> tuple[int, int, int]:
        """Half-widths in grid points, ``floor(H / d)``."""
        out = []
        for H, d in zip(self.half_widths, (grid.dx, grid.dy, grid.dt)):
            out.append(int(math.floor(H / d * (1 + 1e-12))))
        return tuple(out)

    def check_grid(self, grid: GridSpec):
        for axis, h, order, n in zip(AXES, self.half_counts(grid), self.orders, grid.shape):
            if 2 * h + 1 < order + 1:
                raise IllConditionedError(
                    axis, f"{2 * h + 1} window points cannot determine order {order}"
                )
            if 2 * h + 1 > n:
                raise ValueError(f"window along {axis} ({2 * h + 1} points) exceeds grid ({n})")


@dataclass(frozen=True)
class PolyFit:
    """Coefficients in scaled coordinates, shape ``(..., L+1, M+1, N+1)``."""

    U: np.ndarray
    V: np.ndarray


class JetTable:
    """Physical-unit partial derivatives of u and v at window centres.

    ``jet.du[(a, b, c)]`` is d^(a+b+c) u / dx^a dy^b dt^c; values are floats
    or arrays with one entry per centre.
    """

    def __init__(self, du: dict, dv: dict):
        self.du = dict(du)
        self.dv = dict(dv)

    def __getitem__(self, key):
        comp, order = key
        table = {"u": self.du, "v": self.dv}[comp]
        try:
            return table[tuple(order)]
        except KeyError:
            raise KeyError(f"jet has no entry for d{comp}/{tuple(order)}") from None

    def orders(self):
        return sorted(set(self.du) & set(self.dv))


def axis_coords(h: int, d: float, H: float) -> np.ndarray:
    """Scaled coordinates of the ``2h+1`` window points along one axis."""
    return np.arange(-h, h + 1) * d / H


def moment_tables(window: WindowSpec, grid: GridSpec):
    """Weighted moments ``S(a) = sum exp(-xb^2/lam^2) xb^a`` per axis.

    Returns ``(Sx, Sy, St)`` with lengths ``2L+1``, ``2M+1``, ``2N+1``. The
    full Gram matrix entry for ``(l, m, n), (q, r, s)`` is
    ``Sx[l+q] * Sy[m+r] * St[n+s]``.
    """
    out = []
    for h, d, H, order in zip(window.half_counts(grid), (grid.dx, grid.dy, grid.dt),
                              window.half_widths, window.orders):
        xb = axis_coords(h, d, H)
        w = np.exp(-(xb / window.lam) ** 2)
        S = np.array([np.sum(w * xb ** a) for a in range(2 * order + 1)])
        S[1::2] = 0.0  # symmetric window: odd moments vanish exactly
        out.append(S)
    return tuple(out)


def _axis_projector(axis, xb, w, order, S):
    """Matrix P with ``coeffs = P @ data`` for a weighted 1-D fit."""
    A = xb[:, None] ** np.arange(order + 1)[None, :]
    G = sla.hankel(S[: order + 1], S[order:])
    cond = np.linalg.cond(G)
    if not np.isfinite(cond):
        raise IllConditionedError(axis, "singular Gram matrix")
    if cond <= COND_LIMIT:
        try:
            cho = sla.cho_factor(G)
            return sla.cho_solve(cho, A.T * w)
        except np.linalg.LinAlgError:
            pass
    # orthogonalization fallback: QR of the square-root-weighted design matrix
    sw = np.sqrt(w)
    Qm, R = np.linalg.qr(A * sw[:, None])
    rdiag = np.abs(np.diag(R))
    if rdiag.min() <= rdiag.max() * 1e-14:
        raise IllConditionedError(axis, f"rank-deficient design (cond={cond:.3g})")
    return sla.solve_triangular(R, Qm.T * sw)


class LocalPolyFitter:
    """Factored normal equations for one (window, grid) pair.

    The object is immutable after construction and can be shared between
    threads; ``fit`` only reads it.
    """

    def __init__(self, window: WindowSpec, grid: GridSpec):
        window.check_grid(grid)
        self.window = window
        self.grid = grid
        self.half = window.half_counts(grid)
        self.moments = moment_tables(window, grid)
        self.projectors = []
        for axis, h, d, H, order, S in zip(AXES, self.half, (grid.dx, grid.dy, grid.dt),
                                           window.half_widths, window.orders, self.moments):
            xb = axis_coords(h, d, H)
            w = np.exp(-(xb / window.lam) ** 2)
            self.projectors.append(_axis_projector(axis, xb, w, order, S))

    def contains(self, center) -> bool:
        return all(h <= c < n - h for c, h, n in zip(center, self.half, self.grid.shape))

    def block(self, a: np.ndarray, center) -> np.ndarray:
        i, j, k = center
        hx, hy, ht = self.half
        return a[i - hx:i + hx + 1, j - hy:j + hy + 1, k - ht:k + ht + 1]

    def fit_block(self, block: np.ndarray) -> np.ndarray:
        Px, Py, Pt = self.projectors
        c = np.tensordot(block, Pt, axes=([2], [1]))       # (nx, ny, N+1)
        c = np.tensordot(Py, c, axes=([1], [1]))            # (M+1, nx, N+1)
        c = np.tensordot(Px, c, axes=([1], [1]))            # (L+1, M+1, N+1)
        return c

    def fit(self, series: FlowSeries, center) -> PolyFit:
        center = tuple(int(c) for c in center)
        if not self.contains(center):
            raise ValueError(f"window around {center} does not fit inside grid {self.grid.shape}")
        return PolyFit(self.fit_block(self.block(series.u, center)),
                       self.fit_block(self.block(series.v, center)))

    def fit_many(self, series: FlowSeries, centers) -> PolyFit:
        fits = [self.fit(series, c) for c in centers]
        return PolyFit(np.stack([f.U for f in fits]), np.stack([f.V for f in fits]))


def fit_window(series: FlowSeries, center, window: WindowSpec) -> PolyFit:
    """Fit one window; build a ``LocalPolyFitter`` to reuse the factorization."""
    return LocalPolyFitter(window, series.grid).fit(series, center)


def jet_at_center(fit: PolyFit, window: WindowSpec, orders=REQUIRED_ORDERS) -> JetTable:
    """Physical derivatives at the window centre.

    Only the monomial ``xb^a yb^b tb^c`` survives differentiation at the
    origin, so ``D^(a,b,c) u = a! b! c! U[a,b,c] / (Hx^a Hy^b Ht^c)``.
    """
    L, M, N = (s - 1 for s in fit.U.shape[-3:])
    du, dv = {}, {}
    for a, b, c in orders:
        if a > L or b > M or c > N:
            raise ValueError(f"derivative order {(a, b, c)} exceeds fit orders {(L, M, N)}")
        scale = (math.factorial(a) * math.factorial(b) * math.factorial(c)
                 / (window.Hx ** a * window.Hy ** b * window.Ht ** c))
        du[(a, b, c)] = scale * fit.U[..., a, b, c]
        dv[(a, b, c)] = scale * fit.V[..., a, b, c]
    return JetTable(du, dv)
