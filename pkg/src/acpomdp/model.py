"""POMDP model schemas, validation, built-in examples and grid discretization."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtr

from .errors import (
    MetricViolation,
    NegativeEntry,
    NumericalUnderflow,
    ParamOutOfRange,
    RowNotStochastic,
    ShapeMismatch,
)

STOCHASTIC_TOL = 1e-12
UNDERFLOW_TOL = 1e-9


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FinitePomdp:
    """Finite-state, finite-action, finite-observation POMDP.

    Parameters
    ----------
    transitions : (n_actions, n_states, n_states) array
        ``transitions[u, x, x']`` is the probability of moving from ``x`` to ``x'``
        under action ``u``.
    observation : (n_states, n_obs) array
        ``observation[x, y]`` is the probability of observing ``y`` in state ``x``.
    cost : (n_states, n_actions) array
        Stage cost ``c(x, u)``.
    metric : (n_states, n_states) array
        Distance matrix on the state space.
    metric_kind : {"discrete", "line", "explicit"}
        Lets distance computations use closed forms.  ``"line"`` requires
        ``points`` (the coordinates whose absolute differences form ``metric``).
    """

    transitions: np.ndarray
    observation: np.ndarray
    cost: np.ndarray
    metric: np.ndarray
    metric_kind: str = "explicit"
    points: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "transitions", _frozen(self.transitions))
        object.__setattr__(self, "observation", _frozen(self.observation))
        object.__setattr__(self, "cost", _frozen(self.cost))
        object.__setattr__(self, "metric", _frozen(self.metric))
        if self.points is not None:
            object.__setattr__(self, "points", _frozen(self.points))

    @classmethod
    def from_arrays(cls, transitions, observation, cost, metric="discrete", points=None, name=""):
        """Build a model; ``metric`` may be ``"discrete"``, ``"line"`` or a matrix."""
        transitions = np.asarray(transitions, dtype=float)
        if transitions.ndim == 2:
            transitions = transitions[None]
        n = transitions.shape[-1]
        if isinstance(metric, str):
            if metric == "discrete":
                mat = 1.0 - np.eye(n)
                kind = "discrete"
            elif metric == "line":
                if points is None:
                    raise ShapeMismatch("line metric needs points")
                pts = np.asarray(points, dtype=float)
                mat = np.abs(pts[:, None] - pts[None, :])
                kind = "line"
            else:
                raise ParamOutOfRange(f"unknown metric tag {metric!r}")
        else:
            mat = np.asarray(metric, dtype=float)
            kind = "explicit"
        return cls(transitions, observation, cost, mat, kind, points, name)

    @property
    def n_states(self) -> int:
        return self.transitions.shape[1]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_obs(self) -> int:
        return self.observation.shape[1]

    @property
    def diameter(self) -> float:
        return float(self.metric.max()) if self.metric.size else 0.0

    @property
    def ground(self):
        """Metric descriptor accepted by :func:`acpomdp.metrics.w1`."""
        from .metrics import LineMetric

        if self.metric_kind == "discrete":
            return "discrete"
        if self.metric_kind == "line":
            return LineMetric(self.points)
        return self.metric

    def with_cost(self, cost) -> "FinitePomdp":
        return FinitePomdp(self.transitions, self.observation, cost, self.metric,
                           self.metric_kind, self.points, self.name)


def _check_stochastic(where, mat, tol=STOCHASTIC_TOL):
    mat = np.asarray(mat)
    neg = np.argwhere(mat < 0)
    if len(neg):
        idx = tuple(int(i) for i in neg[0])
        raise NegativeEntry(where, idx, float(mat[idx]))
    sums = mat.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > tol)
    if len(bad):
        idx = tuple(int(i) for i in bad[0])
        raise RowNotStochastic(where, idx if len(idx) > 1 else idx[0], float(sums[idx]))


def check_metric(d, tol=1e-12):
    d = np.asarray(d, dtype=float)
    n = d.shape[0]
    if d.shape != (n, n):
        raise ShapeMismatch(f"metric must be square, got {d.shape}")
    if np.any(d < 0):
        i, j = np.argwhere(d < 0)[0]
        raise MetricViolation((int(i), int(j)), "negative distance")
    diag = np.argwhere(np.abs(np.diag(d)) > 0)
    if len(diag):
        i = int(diag[0][0])
        raise MetricViolation((i, i), "nonzero diagonal")
    asym = np.argwhere(np.abs(d - d.T) > tol)
    if len(asym):
        i, j = asym[0]
        raise MetricViolation((int(i), int(j)), "not symmetric")
    scale = tol * max(1.0, float(d.max(initial=0.0)))
    for j in range(n):
        # d[i, k] <= d[i, j] + d[j, k] for all i, k
        slack = d[:, j][:, None] + d[j, :][None, :] - d
        bad = np.argwhere(slack < -scale)
        if len(bad):
            i, k = bad[0]
            raise MetricViolation((int(i), j, int(k)), "triangle inequality fails")


def validate(model: FinitePomdp) -> FinitePomdp:
    """Check every model invariant and return the model unchanged."""
    T, O, c, d = model.transitions, model.observation, model.cost, model.metric
    if T.ndim != 3 or T.shape[1] != T.shape[2] or T.shape[0] < 1 or T.shape[1] < 1:
        raise ShapeMismatch(f"transitions must be (A, S, S), got {T.shape}")
    n, a = T.shape[1], T.shape[0]
    if O.ndim != 2 or O.shape[0] != n or O.shape[1] < 1:
        raise ShapeMismatch(f"observation must be ({n}, Y), got {O.shape}")
    if c.shape != (n, a):
        raise ShapeMismatch(f"cost must be ({n}, {a}), got {c.shape}")
    if not np.all(np.isfinite(c)):
        idx = tuple(int(i) for i in np.argwhere(~np.isfinite(c))[0])
        raise ParamOutOfRange(f"cost entry {idx} is not finite")
    for u in range(a):
        _check_stochastic(f"transitions[{u}]", T[u])
    _check_stochastic("observation", O)
    check_metric(d)
    if model.metric_kind == "line" and model.points is None:
        raise ShapeMismatch("line metric needs points")
    return model


# ---------------------------------------------------------------------------
# Built-in examples

EX1_T0 = [[Fraction(1, 2), Fraction(1, 3), Fraction(1, 6), Fraction(0)],
          [Fraction(0), Fraction(1, 2), Fraction(1, 6), Fraction(1, 3)],
          [Fraction(1, 2), Fraction(1, 6), Fraction(0), Fraction(1, 3)],
          [Fraction(1, 3), Fraction(1, 3), Fraction(1, 3), Fraction(0)]]
EX1_T1 = [[Fraction(1, 3), Fraction(1, 2), Fraction(1, 6), Fraction(0)],
          [Fraction(0), Fraction(1, 3), Fraction(1, 2), Fraction(1, 6)],
          [Fraction(1, 2), Fraction(1, 3), Fraction(0), Fraction(1, 6)],
          [Fraction(1, 3), Fraction(1, 3), Fraction(1, 3), Fraction(0)]]


def ex1_default_cost() -> np.ndarray:
    """c(x, u) = 1{x in {2, 3}} + 0.1 u."""
    bad = np.array([0.0, 0.0, 1.0, 1.0])
    return bad[:, None] + 0.1 * np.arange(2)[None, :]


def _ex1(eps=0.1, cost=None) -> FinitePomdp:
    eps = float(eps)
    if not 0.0 < eps < 0.5:
        raise ParamOutOfRange(f"ex1 needs eps in (0, 1/2), got {eps}")
    lo, hi = 0.75 - eps, 0.25 + eps
    obs = [[lo, hi], [lo, hi], [hi, lo], [hi, lo]]
    T = np.array([[[float(v) for v in row] for row in mat] for mat in (EX1_T0, EX1_T1)])
    c = ex1_default_cost() if cost is None else np.asarray(cost, dtype=float)
    return FinitePomdp.from_arrays(T, obs, c, "discrete", name=f"ex1(eps={eps})")


@dataclass(frozen=True)
class ClippedUniform:
    """T(.|x, u) = Unif(0, min(cap, 1 + (x + u) / divisor))."""

    divisor: float = 7.0
    cap: float = 2.0

    def upper(self, x, u):
        return min(self.cap, 1.0 + (x + u) / self.divisor)

    def cell_mass(self, edges, x, u):
        b = self.upper(x, u)
        lo, hi = edges[:-1], edges[1:]
        return np.clip(np.minimum(hi, b) - lo, 0.0, None) / b


@dataclass(frozen=True)
class TruncatedNormal:
    """N(x + u, sigma^2) restricted to the state interval.

    With ``censored=True`` the tails outside the interval are lumped into
    the boundary cells instead of being renormalized away.
    """

    sigma: float
    censored: bool = False

    def cell_mass(self, edges, x, u):
        cdf = ndtr((edges - (x + u)) / self.sigma)
        mass = np.diff(cdf)
        if self.censored:
            mass = mass.copy()
            mass[0] += cdf[0]
            mass[-1] += 1.0 - cdf[-1]
        return mass


COST_FNS: dict[str, Callable[[float, float], float]] = {
    "x+u": lambda x, u: x + u,
    "x-u": lambda x, u: x - u,
}


@dataclass(frozen=True)
class ContinuousSpec1D:
    """Continuous-state model on an interval, finite action grid."""

    interval: tuple[float, float]
    kernel: object
    actions: tuple[float, ...]
    obs_cuts: tuple[float, ...] = ()
    obs_density: Optional[Callable[[float], Sequence[float]]] = None
    cost_fn: str = "x+u"
    name: str = ""

    def __post_init__(self):
        a, b = self.interval
        if not a < b:
            raise ParamOutOfRange(f"empty interval {self.interval}")
        cuts = list(self.obs_cuts)
        if any(c2 <= c1 for c1, c2 in zip(cuts, cuts[1:])):
            raise ParamOutOfRange("observation cut points must be strictly increasing")
        if any(not a < c < b for c in cuts):
            raise ParamOutOfRange("observation cut points must lie inside the interval")
        if not self.actions:
            raise ParamOutOfRange("action list is empty")
        if self.cost_fn not in COST_FNS:
            raise ParamOutOfRange(f"unknown cost {self.cost_fn!r}")


def _action_grid(lo, hi, n):
    n = int(n)
    if n < 1:
        raise ParamOutOfRange("need at least one action")
    if n == 1:
        return ((lo + hi) / 2.0,)
    return tuple(float(v) for v in np.linspace(lo, hi, n))


def _ex2(n_actions=4) -> ContinuousSpec1D:
    return ContinuousSpec1D((0.0, 2.0), ClippedUniform(), _action_grid(0.0, 12.0, n_actions),
                            obs_cuts=(1.0,), cost_fn="x+u", name="ex2")


def _ex3(sigma=1.5, p=0.5, n_actions=3, cut=0.5, censored=False) -> ContinuousSpec1D:
    sigma, p = float(sigma), float(p)
    if sigma <= 0:
        raise ParamOutOfRange(f"ex3 needs sigma > 0, got {sigma}")
    if p < 0:
        raise ParamOutOfRange(f"ex3 needs p >= 0, got {p}")
    return ContinuousSpec1D((0.0, 1.0), TruncatedNormal(sigma, bool(censored)),
                            _action_grid(-p, p, n_actions), obs_cuts=(float(cut),),
                            cost_fn="x-u", name=f"ex3(sigma={sigma})")


BUILTINS = {"ex1": _ex1, "ex2": _ex2, "ex3": _ex3}


def builtin(name: str, **params):
    """Return one of the reference examples.

    ``ex1`` yields a :class:`FinitePomdp`; ``ex2`` and ``ex3`` yield a
    :class:`ContinuousSpec1D` to be passed through :func:`discretize`.
    """
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ParamOutOfRange(f"unknown builtin {name!r}") from None
    return factory(**params)


def discretize(spec: ContinuousSpec1D, n_grid: int) -> FinitePomdp:
    """Grid a continuous 1-D model into a finite POMDP over cell midpoints."""
    n_grid = int(n_grid)
    if n_grid < 2:
        raise ParamOutOfRange("n_grid must be at least 2")
    a, b = spec.interval
    edges = np.linspace(a, b, n_grid + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    T = np.empty((len(spec.actions), n_grid, n_grid))
    for k, u in enumerate(spec.actions):
        for i, x in enumerate(mids):
            mass = spec.kernel.cell_mass(edges, x, u)
            total = mass.sum()
            if total < UNDERFLOW_TOL:
                raise NumericalUnderflow(f"row x={x}, u={u} integrates to {total!r}")
            T[k, i] = mass / total
    if spec.obs_density is not None:
        O = np.array([np.asarray(spec.obs_density(x), dtype=float) for x in mids])
        O = O / O.sum(axis=1, keepdims=True)
    else:
        cuts = list(spec.obs_cuts)
        O = np.zeros((n_grid, len(cuts) + 1))
        for i, x in enumerate(mids):
            O[i, bisect.bisect_right(cuts, x)] = 1.0
    f = COST_FNS[spec.cost_fn]
    c = np.array([[f(x, u) for u in spec.actions] for x in mids])
    return FinitePomdp.from_arrays(T, O, c, "line", points=mids,
                                   name=f"{spec.name or 'grid'}[n={n_grid}]")
