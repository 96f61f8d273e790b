"""Residual-thresholded sparse regression on a term library.

Coefficients are least-squares solutions on the active columns. Term
relevance is judged by the L1 size of each term's contribution
``||c_i q_i||_1`` against the L1 residual ``eta = ||q0 - Q c||_1``: terms
below ``gamma * eta`` are dropped and the fit repeated.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .library import TERM_NAMES, TermLibrary


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, columns, history=None):
        super().__init__(f"linearly dependent library columns: {list(columns)}")
        self.columns = list(columns)
        self.history = history


@dataclass(frozen=True)
class RegressionConfig:
    gamma: float = 1.0
    max_iter: int = 10

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma!r}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class RegressionResult:
    c: np.ndarray
    active: np.ndarray
    eta: float
    eta0: float
    history: list = field(default_factory=list)
    relevance: np.ndarray | None = None
    last_c: np.ndarray | None = None
    empty: bool = False
    converged: bool = True

    @property
    def eta_ratio(self) -> float:
        return self.eta / self.eta0 if self.eta0 > 0 else np.nan

    def to_dict(self, names=TERM_NAMES):
        def num(x):
            x = float(x)
            return x if np.isfinite(x) else ("inf" if x > 0 else ("-inf" if x < 0 else "nan"))

        return {
            "terms": list(names),
            "c": [num(x) for x in self.c],
            "active": [bool(a) for a in self.active],
            "eta": num(self.eta),
            "eta0": num(self.eta0),
            "relevance": [num(x) for x in self.relevance],
            "empty": self.empty,
            "converged": self.converged,
            "history": [
                {"active": [bool(a) for a in h["active"]],
                 "c": [num(x) for x in h["c"]],
                 "eta": num(h["eta"])}
                for h in self.history
            ],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def solve_coeffs(Q_active: np.ndarray, q0: np.ndarray) -> np.ndarray:
    """Least-squares coefficients; raises on dependent columns.

    Columns are equilibrated before the pivoted QR so that rank detection
    does not depend on their physical scale.
    """
    Q_active = np.asarray(Q_active, dtype=float)
    q0 = np.asarray(q0, dtype=float)
    if Q_active.ndim != 2 or Q_active.shape[0] != q0.size:
        raise ValueError(f"shape mismatch: Q {Q_active.shape}, q0 {q0.shape}")
    n = Q_active.shape[1]
    if n == 0:
        return np.zeros(0)
    if Q_active.shape[0] < n:
        raise RankDeficientError(range(n))
    scale = np.linalg.norm(Q_active, axis=0)
    zero = np.nonzero(scale == 0)[0]
    if zero.size:
        raise RankDeficientError(zero)
    A = Q_active / scale
    Qm, R, piv = sla.qr(A, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    tol = max(A.shape) * np.finfo(float).eps * d[0]
    rank = int(np.sum(d > tol))
    if rank < n:
        raise RankDeficientError(sorted(piv[rank:]))
    y = sla.solve_triangular(R, Qm.T @ q0)
    x = np.empty(n)
    x[piv] = y
    return x / scale


def residual_l1(Q: np.ndarray, q0: np.ndarray, c: np.ndarray) -> float:
    return float(np.abs(np.asarray(q0) - np.asarray(Q) @ np.asarray(c)).sum())


def term_norms(Q: np.ndarray, c: np.ndarray) -> np.ndarray:
    """``||c_i q_i||_1`` for every column."""
    return np.abs(c) * np.abs(Q).sum(axis=0)


def _fit_active(Q, q0, active):
    c = np.zeros(Q.shape[1])
    if active.any():
        c[active] = solve_coeffs(Q[:, active], q0)
    return c


def threshold_iterate(lib: TermLibrary, config: RegressionConfig = RegressionConfig(),
                      initial_active=None) -> RegressionResult:
    """Drop every term with ``||c_i q_i||_1 < gamma * eta`` until none is dropped."""
    Q, q0 = lib.Q, lib.q0
    nterm = Q.shape[1]
    eta0 = float(np.abs(q0).sum())
    active = np.ones(nterm, bool) if initial_active is None else np.array(initial_active, bool)
    last_c = np.zeros(nterm)
    history = []
    converged = False
    c = np.zeros(nterm)
    eta = eta0
    for _ in range(config.max_iter):
        if not active.any():
            break
        try:
            c = _fit_active(Q, q0, active)
        except RankDeficientError as exc:
            cols = np.nonzero(active)[0][exc.columns]
            raise RankDeficientError(cols, history) from None
        eta = residual_l1(Q, q0, c)
        last_c[active] = c[active]
        history.append({"active": active.copy(), "c": c.copy(), "eta": eta})
        drop = active & (term_norms(Q, c) < config.gamma * eta)
        if not drop.any():
            converged = True
            break
        active = active & ~drop
    else:
        if active.any():
            # ran out of iterations right after a removal: refit the final set
            c = _fit_active(Q, q0, active)
            eta = residual_l1(Q, q0, c)
            last_c[active] = c[active]
            history.append({"active": active.copy(), "c": c.copy(), "eta": eta})

    empty = not active.any()
    if empty:
        c = np.zeros(nterm)
        eta = eta0
        history.append({"active": active.copy(), "c": c.copy(), "eta": eta})
        converged = True
    result = RegressionResult(c=c, active=active, eta=eta, eta0=eta0, history=history,
                              last_c=last_c, empty=empty, converged=converged)
    result.relevance = relevance(lib, result)
    return result


def relevance(lib: TermLibrary, result: RegressionResult) -> np.ndarray:
    """``R_i = ||c_i q_i||_1 / eta``.

    Dropped terms use their coefficient from the last fit that included
    them. ``eta == 0`` gives ``inf`` for every nonzero contribution.
    """
    coef = np.where(result.active, result.c,
                    result.last_c if result.last_c is not None else 0.0)
    norms = term_norms(lib.Q, coef)
    with np.errstate(divide="ignore", invalid="ignore"):
        if result.eta == 0:
            return np.where(norms > 0, np.inf, 0.0)
        return norms / result.eta


def false_negative_probe(lib: TermLibrary, result: RegressionResult, term_index: int) -> float:
    """Relative drop in residual when ``term_index`` is forced back in.

    Returns 0 when the term is already active.
    """
    if result.active[term_index]:
        return 0.0
    active = result.active.copy()
    active[term_index] = True
    c = _fit_active(lib.Q, lib.q0, active)
    eta_with = residual_l1(lib.Q, lib.q0, c)
    if result.eta == 0:
        return 0.0
    return (result.eta - eta_with) / result.eta


def format_model(result: RegressionResult, names=TERM_NAMES) -> str:
    """Human-readable right-hand side of the recovered velocity equation."""
    parts = [f"{c:+.6g} {n}" for c, n, a in zip(result.c, names, result.active) if a]
    rhs = " ".join(parts) if parts else "0"
    return f"du/dt = {rhs} + grad p + f"

