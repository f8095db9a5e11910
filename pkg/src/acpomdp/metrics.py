"""Distances between distributions, Dobrushin coefficients and the contraction checks.

Total variation follows the factor-2 convention: ``TV(p, q) = sum |p - q|``,
so two distinct Diracs are at distance 2 and, under the discrete metric,
``W1 = TV / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.optimize import linprog

from .errors import Infeasible, LengthMismatch, MetricViolation, ZeroDistance
from .model import FinitePomdp, check_metric

MARGINAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class LineMetric:
    """Points on the real line with ``d(x, x') = |x - x'|``."""

    points: np.ndarray

    def matrix(self):
        p = np.asarray(self.points, dtype=float)
        return np.abs(p[:, None] - p[None, :])


def _as_pair(p, q):
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape[-1] != q.shape[-1]:
        raise LengthMismatch(f"lengths differ: {p.shape[-1]} vs {q.shape[-1]}")
    return p, q


def total_variation(p, q) -> float:
    p, q = _as_pair(p, q)
    return float(np.abs(p - q).sum())


def _uniform_offdiag(d):
    """Return c if d == c * (1 - I), else None."""
    n = d.shape[0]
    if n < 2:
        return 0.0
    off = d[~np.eye(n, dtype=bool)]
    c = off[0]
    if np.all(off == c) and c > 0:
        return float(c)
    return None


def w1(p, q, metric="discrete") -> float:
    """Kantorovich-Rubinstein distance between two probability vectors.

    ``metric`` is ``"discrete"``, a :class:`LineMetric` or a distance matrix.
    The first two use closed forms; a general matrix goes through
    :func:`transport_lp`.
    """
    p, q = _as_pair(p, q)
    if isinstance(metric, str):
        if metric != "discrete":
            raise MetricViolation((), f"unknown metric tag {metric!r}")
        return 0.5 * float(np.abs(p - q).sum())
    if isinstance(metric, LineMetric):
        pts = np.asarray(metric.points, dtype=float)
        if len(pts) != len(p):
            raise LengthMismatch("line points do not match the vector length")
        order = np.argsort(pts, kind="stable")
        gaps = np.diff(pts[order])
        cdf = np.cumsum(p[order] - q[order])[:-1]
        return float(np.abs(cdf) @ gaps)
    d = np.asarray(metric, dtype=float)
    if d.shape != (len(p), len(p)):
        raise LengthMismatch(f"metric shape {d.shape} does not match length {len(p)}")
    c = _uniform_offdiag(d)
    if c is not None:
        return 0.5 * c * float(np.abs(p - q).sum())
    return transport_lp(p, q, d)[0]


def w1_many(P, q, metric="discrete") -> np.ndarray:
    """``w1(P[k], q)`` for every row ``k`` of ``P``."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    q = np.asarray(q, dtype=float)
    if isinstance(metric, str):
        return 0.5 * np.abs(P - q).sum(axis=1)
    if isinstance(metric, LineMetric):
        pts = np.asarray(metric.points, dtype=float)
        order = np.argsort(pts, kind="stable")
        gaps = np.diff(pts[order])
        cdf = np.cumsum(P[:, order] - q[order], axis=1)[:, :-1]
        return np.abs(cdf) @ gaps
    d = np.asarray(metric, dtype=float)
    c = _uniform_offdiag(d)
    if c is not None:
        return 0.5 * c * np.abs(P - q).sum(axis=1)
    return np.array([transport_lp(row, q, d)[0] for row in P])


def pairwise_w1(A, B, metric="discrete") -> np.ndarray:
    """Matrix of W1 distances between the rows of ``A`` and ``B``."""
    A = np.atleast_2d(A)
    B = np.atleast_2d(B)
    return np.stack([w1_many(A, b, metric) for b in B], axis=1)


def transport_lp(a, b, cost):
    """Exact optimal transport between weight vectors ``a`` and ``b``.

    ``cost[i, j]`` is the price of moving unit mass from atom ``i`` of ``a``
    to atom ``j`` of ``b``.  Returns ``(value, plan)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (len(a), len(b)):
        raise LengthMismatch(f"cost shape {cost.shape} does not match ({len(a)}, {len(b)})")
    if np.any(a < 0) or np.any(b < 0):
        raise Infeasible("negative transport weight")
    if abs(a.sum() - b.sum()) > MARGINAL_TOL or abs(a.sum() - 1.0) > 1e-9:
        raise Infeasible(f"weights sum to {a.sum()!r} and {b.sum()!r}")
    rows = np.flatnonzero(a > 0)
    cols = np.flatnonzero(b > 0)
    plan = np.zeros((len(a), len(b)))
    if len(rows) == 1 or len(cols) == 1:
        # the coupling is forced
        sub = b[cols][None, :] if len(rows) == 1 else a[rows][:, None]
        plan[np.ix_(rows, cols)] = sub
        return float((plan * cost).sum()), plan
    m, n = len(rows), len(cols)
    c = cost[np.ix_(rows, cols)].ravel()
    A_eq = np.zeros((m + n, m * n))
    for i in range(m):
        A_eq[i, i * n:(i + 1) * n] = 1.0
    for j in range(n):
        A_eq[m + j, j::n] = 1.0
    b_eq = np.concatenate([a[rows], b[cols]])
    res = linprog(c, A_eq=A_eq[:-1], b_eq=b_eq[:-1], bounds=(0, None), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise Infeasible(f"transport LP failed: {res.message}")
    sub = np.clip(res.x.reshape(m, n), 0.0, None)
    plan[np.ix_(rows, cols)] = sub
    return float((plan * cost).sum()), plan


def bl_distance(a, b, dist) -> float:
    """Bounded-Lipschitz distance between two weight vectors on a common ground set.

    Solves ``max sum f_i (a_i - b_i)`` over ``f`` with ``|f_i| <= s``,
    ``|f_i - f_j| <= L d_ij`` and ``s + L <= 1``; restricting ``f`` to the
    atoms loses nothing because a bounded Lipschitz function on finitely many
    points extends to the whole space with the same two constants.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dist = np.asarray(dist, dtype=float)
    if abs(a.sum() - b.sum()) > MARGINAL_TOL:
        raise Infeasible(f"weights sum to {a.sum()!r} and {b.sum()!r}")
    w = a - b
    m = len(w)
    if not np.any(w):
        return 0.0
    # variables: f_0..f_{m-1}, s, L
    rows, rhs = [], []
    for i in range(m):
        for sign in (1.0, -1.0):
            r = np.zeros(m + 2)
            r[i], r[m] = sign, -1.0
            rows.append(r)
            rhs.append(0.0)
    for i in range(m):
        for j in range(m):
            if i != j:
                r = np.zeros(m + 2)
                r[i], r[j], r[m + 1] = 1.0, -1.0, -dist[i, j]
                rows.append(r)
                rhs.append(0.0)
    r = np.zeros(m + 2)
    r[m] = r[m + 1] = 1.0
    rows.append(r)
    rhs.append(1.0)
    c = np.concatenate([-w, [0.0, 0.0]])
    bounds = [(None, None)] * m + [(0, None), (0, None)]
    res = linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds, method="highs")
    if res.status != 0:
        raise Infeasible(f"BL LP failed: {res.message}")
    return float(-res.fun)


def dobrushin(kernel) -> float:
    """Minimum row overlap ``min_{x,y} sum_j min(K[x, j], K[y, j])``."""
    K = np.asarray(kernel, dtype=float)
    if K.shape[0] < 2:
        return 1.0
    overlap = np.minimum(K[:, None, :], K[None, :, :]).sum(axis=-1)
    return float(min(1.0, overlap.min()))


def dobrushin_t_tilde(model: FinitePomdp) -> float:
    return min(dobrushin(T) for T in model.transitions)


def _offdiag_ratio(numer, d):
    n = d.shape[0]
    if n < 2:
        return 0.0
    mask = ~np.eye(n, dtype=bool)
    if np.any(d[mask] <= 0):
        i, j = np.argwhere((d <= 0) & mask)[0]
        raise ZeroDistance((int(i), int(j)))
    return float((numer[mask] / d[mask]).max())


def tv_lipschitz_alpha(model: FinitePomdp) -> float:
    """Tightest α with ``TV(T(.|x,u), T(.|x',u)) <= α d(x, x')`` on the finite model."""
    d = model.metric
    best = 0.0
    for T in model.transitions:
        tv = np.abs(T[:, None, :] - T[None, :, :]).sum(axis=-1)
        best = max(best, _offdiag_ratio(tv, d))
    return best


def cost_lipschitz_k1(model: FinitePomdp) -> float:
    d = model.metric
    best = 0.0
    for u in range(model.n_actions):
        col = model.cost[:, u]
        best = max(best, _offdiag_ratio(np.abs(col[:, None] - col[None, :]), d))
    return best


@dataclass(frozen=True)
class AssumptionReport:
    alpha: float
    diameter: float
    dobrushin_q: float
    dobrushin_t: float
    k1: float
    k2: float
    alpha_bar: float
    passes_main_assumption: bool
    passes_filter_stability: bool
    model_name: str = ""

    def lipschitz_k(self, beta: float) -> float:
        """Lipschitz constant ``K1 / (1 - beta K2)`` of the discounted value function."""
        return self.k1 / (1.0 - beta * self.k2)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["alpha_label"] = "grid alpha (finite-model maximum)"
        return out


def assumption_report(model: FinitePomdp) -> AssumptionReport:
    check_metric(model.metric)
    alpha = tv_lipschitz_alpha(model)
    D = model.diameter
    dq = dobrushin(model.observation)
    dt = dobrushin_t_tilde(model)
    k1 = cost_lipschitz_k1(model)
    k2 = alpha * D * (3.0 - 2.0 * dq) / 2.0
    abar = (1.0 - dt) * (2.0 - dq)
    return AssumptionReport(alpha, D, dq, dt, k1, k2, abar, bool(k2 < 1.0), bool(abar < 1.0),
                            model.name)
