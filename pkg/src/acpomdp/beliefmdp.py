"""Belief-MDP kernel and cost, simplex quantization and discounted value iteration."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from math import comb
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import DegeneratePair, InvalidRegime, NotConverged, ParamOutOfRange, TooLarge
from .filtering import LIKELIHOOD_FLOOR, predict
from .metrics import pairwise_w1, transport_lp, w1, w1_many
from .model import FinitePomdp


@dataclass(frozen=True, eq=False)
class BeliefMeasure:
    """Finitely supported probability measure over beliefs.

    ``beliefs[k]`` is an atom and ``weights[k]`` its mass.
    """

    beliefs: np.ndarray
    weights: np.ndarray

    @property
    def atoms(self):
        return list(zip(self.beliefs, self.weights))

    def mean(self) -> np.ndarray:
        return self.weights @ self.beliefs


def eta(z, u: int, model: FinitePomdp) -> BeliefMeasure:
    """Law of the next belief given belief ``z`` and action ``u``."""
    pred = predict(z, u, model)
    joint = pred[:, None] * model.observation
    lik = joint.sum(axis=0)
    keep = np.flatnonzero(lik >= LIKELIHOOD_FLOOR)
    posts = (joint[:, keep] / lik[keep]).T
    w = lik[keep] / lik[keep].sum()
    return BeliefMeasure(posts, w)


def belief_cost(z, u: int, model: FinitePomdp) -> float:
    return float(np.asarray(z, dtype=float) @ model.cost[:, u])


def measure_w1(m1: BeliefMeasure, m2: BeliefMeasure, metric) -> float:
    """W1 on the space of beliefs, with beliefs themselves compared by W1."""
    ground = pairwise_w1(m1.beliefs, m2.beliefs, metric)
    return transport_lp(m1.weights, m2.weights, ground)[0]


def contraction_ratio(model: FinitePomdp, z, z2, u: int) -> float:
    """``W1(eta(.|z,u), eta(.|z2,u)) / W1(z, z2)``."""
    metric = model.ground
    base = w1(z, z2, metric)
    if base < 1e-12:
        raise DegeneratePair(f"W1(z, z') = {base!r} is too small for a ratio")
    return measure_w1(eta(z, u, model), eta(z2, u, model), metric) / base


# ---------------------------------------------------------------------------
# Quantization

DEFAULT_CAP = 200_000


def lattice(n_states: int, M: int) -> np.ndarray:
    """All beliefs with entries in ``{0, 1/M, ..., 1}``, first coordinate descending."""
    bars = itertools.combinations(range(M + n_states - 1), n_states - 1)
    out = []
    for b in bars:
        edges = (-1,) + b + (M + n_states - 1,)
        out.append([edges[i + 1] - edges[i] - 1 for i in range(n_states)])
    return np.array(out[::-1], dtype=float) / M


@dataclass(frozen=True, eq=False)
class Quantizer:
    """Nearest-neighbour quantizer on the type lattice of denominator ``M``.

    ``l_bar = n D / (2 M)`` bounds the W1 diameter of every bin: the
    L1-nearest lattice point is within L1 distance ``n / (2 M)`` of any
    belief, and ``W1 <= D * L1 / 2``.
    """

    M: int
    representatives: np.ndarray
    metric: object
    l_bar: float

    @property
    def size(self) -> int:
        return len(self.representatives)

    def _columns(self):
        # per-coordinate rows of the representatives (or of their CDFs on a line),
        # so distances accumulate over contiguous vectors
        cache = self.__dict__.get("_cols")
        if cache is None:
            R = self.representatives
            if isinstance(self.metric, str):
                cache = (None, np.ascontiguousarray(R.T), np.ones(R.shape[1]))
            else:
                pts = np.asarray(self.metric.points, dtype=float)
                order = np.argsort(pts, kind="stable")
                FR = np.cumsum(R[:, order], axis=1)[:, :-1]
                cache = (order, np.ascontiguousarray(FR.T), np.diff(pts[order]))
            object.__setattr__(self, "_cols", cache)
        return cache

    def _scores(self, Z):
        order, cols, weights = self._columns()
        if order is not None:
            Z = np.cumsum(Z[:, order], axis=1)[:, :-1]
        d = np.zeros((len(Z), cols.shape[1]))
        for i in range(cols.shape[0]):
            d += weights[i] * np.abs(Z[:, i:i + 1] - cols[i])
        return d

    def nearest(self, z) -> int:
        """Index of the W1-nearest representative, ties to the lowest index."""
        if isinstance(self.metric, np.ndarray):
            return int(np.argmin(w1_many(self.representatives, z, self.metric)))
        return int(self._scores(np.asarray(z, dtype=float)[None, :])[0].argmin())

    def nearest_many(self, Z, chunk=256) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if isinstance(self.metric, np.ndarray):
            return np.array([self.nearest(z) for z in Z], dtype=int)
        out = np.empty(len(Z), dtype=int)
        for s in range(0, len(Z), chunk):
            out[s:s + chunk] = self._scores(Z[s:s + chunk]).argmin(axis=1)
        return out

    def barycenter(self) -> int:
        n = self.representatives.shape[1]
        return self.nearest(np.full(n, 1.0 / n))


def quantize(n_states: int, M: int, metric="discrete", diameter: float = 1.0,
             cap: int = DEFAULT_CAP) -> Quantizer:
    if M < 1:
        raise ParamOutOfRange("resolution M must be at least 1")
    count = comb(M + n_states - 1, n_states - 1)
    if count > cap:
        raise TooLarge(f"{count} representatives exceed the cap of {cap}")
    reps = lattice(n_states, M)
    reps.setflags(write=False)
    return Quantizer(M, reps, metric, n_states * diameter / (2.0 * M))


def quantizer_for(model: FinitePomdp, M: int, cap: int = DEFAULT_CAP) -> Quantizer:
    return quantize(model.n_states, M, model.ground, model.diameter, cap)


# ---------------------------------------------------------------------------
# Finite MDPs


@dataclass(frozen=True, eq=False)
class FiniteMdp:
    """Finite MDP: ``cost[s, u]`` and one sparse row-stochastic kernel per action."""

    cost: np.ndarray
    kernels: tuple

    @property
    def n_states(self) -> int:
        return self.cost.shape[0]

    @property
    def n_actions(self) -> int:
        return self.cost.shape[1]

    def q_values(self, values, beta: float) -> np.ndarray:
        cont = np.column_stack([K @ values for K in self.kernels])
        return self.cost + beta * cont

    def to_dict(self) -> dict:
        trans = []
        for K in self.kernels:
            K = K.tocoo()
            trans.append([[int(i), int(j), float(p)] for i, j, p in zip(K.row, K.col, K.data)])
        return {"n_states": self.n_states, "n_actions": self.n_actions,
                "cost": self.cost.tolist(), "transitions": trans}


@dataclass(frozen=True, eq=False)
class QuantizedBeliefMdp(FiniteMdp):
    representatives: np.ndarray = field(default=None)
    weighting: object = "dirac"

    def to_dict(self) -> dict:
        out = super().to_dict()
        out["states"] = self.representatives.tolist()
        out["weighting"] = str(self.weighting)
        return out


@dataclass(frozen=True)
class MonteCarlo:
    """Average cost and kernel over uniform samples falling in each bin."""

    samples: int
    seed: int = 0


def _kernel_rows(model: FinitePomdp, Z, u, quantizer):
    pred = Z @ model.transitions[u]
    joint = pred[:, :, None] * model.observation[None, :, :]
    lik = joint.sum(axis=1)
    rows, cols, vals = [], [], []
    for y in range(model.n_obs):
        ok = np.flatnonzero(lik[:, y] >= LIKELIHOOD_FLOOR)
        if not len(ok):
            continue
        post = joint[ok, :, y] / lik[ok, y][:, None]
        rows.append(ok)
        cols.append(quantizer.nearest_many(post))
        vals.append(lik[ok, y])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def build_quantized_mdp(model: FinitePomdp, quantizer: Quantizer, weighting="dirac") -> QuantizedBeliefMdp:
    """Finite MDP on the quantizer's representatives.

    With ``"dirac"`` weighting each bin is represented by its lattice point;
    with :class:`MonteCarlo` the cost and kernel are averaged over uniform
    simplex samples in the bin (bins receiving no sample fall back to Dirac).
    """
    R = quantizer.representatives
    nq = len(R)
    if R.shape[1] != model.n_states:
        raise ParamOutOfRange("quantizer dimension does not match the model")
    if weighting == "dirac":
        cost = R @ model.cost
        kernels = []
        for u in range(model.n_actions):
            r, c, v = _kernel_rows(model, R, u, quantizer)
            K = sparse.csr_matrix((v, (r, c)), shape=(nq, nq))
            K = sparse.diags(1.0 / np.asarray(K.sum(axis=1)).ravel()) @ K
            kernels.append(K.tocsr())
        return QuantizedBeliefMdp(cost, tuple(kernels), R, "dirac")
    if not isinstance(weighting, MonteCarlo):
        raise ParamOutOfRange(f"unknown weighting {weighting!r}")
    rng = np.random.default_rng(weighting.seed)
    Z = rng.dirichlet(np.ones(model.n_states), size=weighting.samples)
    bins = quantizer.nearest_many(Z)
    empty = np.setdiff1d(np.arange(nq), bins)
    Z = np.vstack([Z, R[empty]])
    bins = np.concatenate([bins, empty])
    counts = np.bincount(bins, minlength=nq).astype(float)
    cost = np.zeros((nq, model.n_actions))
    np.add.at(cost, bins, Z @ model.cost)
    cost /= counts[:, None]
    kernels = []
    for u in range(model.n_actions):
        r, c, v = _kernel_rows(model, Z, u, quantizer)
        K = sparse.csr_matrix((v / counts[bins[r]], (bins[r], c)), shape=(nq, nq))
        K = sparse.diags(1.0 / np.asarray(K.sum(axis=1)).ravel()) @ K
        kernels.append(K.tocsr())
    return QuantizedBeliefMdp(cost, tuple(kernels), R, weighting)


class ViResult(NamedTuple):
    values: np.ndarray
    policy: np.ndarray
    residual: float
    iters: int


def greedy(q: np.ndarray) -> np.ndarray:
    """Row-wise argmin, ties to the lowest action index."""
    return np.argmin(q, axis=1)


def value_iteration(mdp: FiniteMdp, beta: float, tol: float = 1e-8, max_iter: int = 1_000_000,
                    init=None) -> ViResult:
    """Discounted value iteration from zero.

    Stops once the sup-norm step is at most ``tol (1 - beta) / (2 beta)``,
    which bounds the distance of the returned values to the fixed point by
    ``tol``.
    """
    if not 0.0 < beta < 1.0:
        raise InvalidRegime(f"beta must lie in (0, 1), got {beta}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    stop = tol * (1.0 - beta) / (2.0 * beta)
    V = np.zeros(mdp.n_states) if init is None else np.array(init, dtype=float)
    residual = np.inf
    for it in range(1, max_iter + 1):
        Vn = mdp.q_values(V, beta).min(axis=1)
        residual = float(np.abs(Vn - V).max())
        V = Vn
        if residual <= stop:
            return ViResult(V, greedy(mdp.q_values(V, beta)), residual, it)
    raise NotConverged(max_iter, residual)


def quantization_error_bound(k1: float, k2: float, beta: float, l_bar: float) -> float:
    """Worst-case discounted loss of the quantized policy, ``2 K1 L / ((1-b)^2 (1 - b K2))``."""
    if not 0.0 < beta < 1.0 or beta * k2 >= 1.0:
        raise InvalidRegime(f"need beta in (0,1) and beta*K2 < 1 (beta={beta}, K2={k2})")
    return 2.0 * k1 * l_bar / ((1.0 - beta) ** 2 * (1.0 - beta * k2))
