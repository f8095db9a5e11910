"""Tabular Q-learning over quantized beliefs and finite observation windows."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse

from .avgcost import recurrent_classes, stationary
from .beliefmdp import FiniteMdp, Quantizer, greedy, value_iteration
from .errors import ParamOutOfRange, TooLarge, ZeroLikelihood
from .filtering import (LIKELIHOOD_FLOOR, as_belief, correct, filter_update, obs_likelihoods,
                        uniform)
from .model import FinitePomdp

WINDOW_CAP = 100_000


# ---------------------------------------------------------------------------
# Finite windows


@dataclass(frozen=True)
class WindowState:
    """Last ``N + 1`` observations and ``N`` actions, oldest first."""

    observations: tuple
    actions: tuple

    @property
    def N(self) -> int:
        return len(self.actions)

    def shift(self, u: int, y: int) -> "WindowState":
        if self.N == 0:
            return WindowState((y,), ())
        return WindowState(self.observations[1:] + (y,), self.actions[1:] + (u,))


def window_count(model: FinitePomdp, N: int) -> int:
    return model.n_obs ** (N + 1) * model.n_actions ** N


def window_index(observations, actions, n_obs: int, n_actions: int) -> int:
    idx = 0
    for y in observations:
        idx = idx * n_obs + int(y)
    for u in actions:
        idx = idx * n_actions + int(u)
    return idx


def all_windows(model: FinitePomdp, N: int) -> list:
    out = []
    for k in range(window_count(model, N)):
        acts, rest = [], k
        for _ in range(N):
            rest, u = divmod(rest, model.n_actions)
            acts.append(u)
        obs = []
        for _ in range(N + 1):
            rest, y = divmod(rest, model.n_obs)
            obs.append(y)
        out.append(WindowState(tuple(obs[::-1]), tuple(acts[::-1])))
    return out


def psi(anchor, w: WindowState, model: FinitePomdp) -> np.ndarray:
    """Belief at the end of window ``w`` when the predictor at its start is ``anchor``."""
    if len(w.observations) != w.N + 1:
        raise ParamOutOfRange("window needs exactly one more observation than actions")
    z, _ = correct(anchor, w.observations[0], model)
    for u, y in zip(w.actions, w.observations[1:]):
        z, _ = filter_update(z, u, y, model)
    return z


@dataclass(frozen=True, eq=False)
class WindowMdp(FiniteMdp):
    """Approximate MDP on windows with the pre-window predictor fixed to ``anchor``.

    ``feasible[k]`` is False for windows with zero probability under the
    anchor; their belief falls back to the filter restarted from uniform.
    """

    windows: list = field(default=None)
    beliefs: np.ndarray = field(default=None)
    feasible: np.ndarray = field(default=None)
    anchor: np.ndarray = field(default=None)
    N: int = 0
    n_obs: int = 1

    def index(self, w: WindowState) -> int:
        return window_index(w.observations, w.actions, self.n_obs, self.n_actions)

    def to_dict(self) -> dict:
        out = super().to_dict()
        out["states"] = [{"observations": list(w.observations), "actions": list(w.actions)}
                         for w in self.windows]
        out["feasible"] = self.feasible.tolist()
        out["anchor"] = self.anchor.tolist()
        return out


def window_mdp(model: FinitePomdp, N: int, anchor=None, cap: int = WINDOW_CAP) -> WindowMdp:
    if N < 0:
        raise ParamOutOfRange("window length N must be nonnegative")
    count = window_count(model, N)
    if count > cap:
        raise TooLarge(f"{count} window states exceed the cap of {cap}")
    anchor = uniform(model.n_states) if anchor is None else as_belief(anchor, model.n_states)
    windows = all_windows(model, N)
    beliefs = np.empty((count, model.n_states))
    feasible = np.ones(count, dtype=bool)
    for k, w in enumerate(windows):
        try:
            beliefs[k] = psi(anchor, w, model)
        except ZeroLikelihood:
            feasible[k] = False
            try:
                beliefs[k] = psi(uniform(model.n_states), w, model)
            except ZeroLikelihood:
                beliefs[k] = uniform(model.n_states)
    cost = beliefs @ model.cost
    kernels = []
    for u in range(model.n_actions):
        rows, cols, vals = [], [], []
        for k, w in enumerate(windows):
            lik = obs_likelihoods(beliefs[k], u, model)
            for y in np.flatnonzero(lik >= LIKELIHOOD_FLOOR):
                nxt = w.shift(u, int(y))
                rows.append(k)
                cols.append(window_index(nxt.observations, nxt.actions, model.n_obs, model.n_actions))
                vals.append(lik[y])
        K = sparse.csr_matrix((vals, (rows, cols)), shape=(count, count))
        K = sparse.diags(1.0 / np.asarray(K.sum(axis=1)).ravel()) @ K
        kernels.append(K.tocsr())
    return WindowMdp(cost, tuple(kernels), windows, beliefs, feasible, anchor, N, model.n_obs)


def window_policy(model: FinitePomdp, N: int, actions, exploration=None):
    """Act on the current window; before ``N + 1`` observations, explore."""
    actions = np.asarray(actions, dtype=int)
    probs = np.full(model.n_actions, 1.0 / model.n_actions) if exploration is None else np.asarray(exploration)
    cum = np.cumsum(probs)

    def policy(z, history, rng):
        ys, us = history
        if len(ys) < N + 1:
            return min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), len(cum) - 1)
        k = window_index(ys[len(ys) - N - 1:], us[len(us) - N:] if N else (), model.n_obs, model.n_actions)
        return int(actions[k])

    return policy


def window_policy_average_cost(model: FinitePomdp, N: int, actions) -> float:
    """Exact long-run cost of a stationary window policy on the true POMDP.

    The pair (hidden state, window) is a finite Markov chain under such a
    policy, so its average cost follows from stationary distributions.
    """
    actions = np.asarray(actions, dtype=int)
    windows = all_windows(model, N)
    W, S = len(windows), model.n_states
    rows, cols, vals = [], [], []
    for k, w in enumerate(windows):
        u = int(actions[k])
        for x in range(S):
            for x2 in np.flatnonzero(model.transitions[u, x]):
                for y in np.flatnonzero(model.observation[x2]):
                    nxt = w.shift(u, int(y))
                    j = window_index(nxt.observations, nxt.actions, model.n_obs, model.n_actions)
                    rows.append(x * W + k)
                    cols.append(x2 * W + j)
                    vals.append(model.transitions[u, x, x2] * model.observation[x2, y])
    P = sparse.csr_matrix((vals, (rows, cols)), shape=(S * W, S * W))
    c = np.array([model.cost[x, actions[k]] for x in range(S) for k in range(W)])
    best = -np.inf
    for cls in recurrent_classes(P):
        pi = stationary(P[cls][:, cls])
        best = max(best, float(pi @ c[cls]))
    return best


# ---------------------------------------------------------------------------
# Q-learning


@dataclass
class QTable:
    """Learned Q-values with visit counts.

    ``experience`` keeps the visited ``(state, action, next_state)`` triples
    so that the MDP induced by the exploration run can be rebuilt.
    """

    values: np.ndarray
    visit_counts: np.ndarray
    state_kind: str
    experience: Optional[tuple] = field(default=None, repr=False)

    @property
    def visited(self) -> np.ndarray:
        return self.visit_counts > 0


class QLearner:
    """Q-learning with rate ``1 / (1 + n)``, ``n`` counting visits including the current one."""

    def __init__(self, n_states: int, n_actions: int, beta: float):
        self.values = np.zeros((n_states, n_actions))
        self.counts = np.zeros((n_states, n_actions), dtype=np.int64)
        self.beta = beta

    def update(self, s: int, u: int, cost: float, s_next: int) -> float:
        self.counts[s, u] += 1
        rate = 1.0 / (1.0 + self.counts[s, u])
        target = cost + self.beta * self.values[s_next].min()
        self.values[s, u] = (1.0 - rate) * self.values[s, u] + rate * target
        return rate

    def run(self, states, actions, costs):
        """Apply updates along a state/action path; ``costs[t]`` pairs with ``(states[t], actions[t])``."""
        Q, n, beta = self.values, self.counts, self.beta
        for t in range(len(actions)):
            s, u, s2 = states[t], actions[t], states[t + 1]
            n[s, u] += 1
            rate = 1.0 / (1.0 + n[s, u])
            target = costs[t] + beta * min(Q[s2])
            Q[s, u] = (1.0 - rate) * Q[s, u] + rate * target


@dataclass(frozen=True)
class Quantized:
    quantizer: Quantizer
    cost: Optional[np.ndarray] = None


@dataclass(frozen=True)
class Window:
    N: int
    anchor: Optional[np.ndarray] = None


def _check_exploration(exploration, n_actions):
    p = np.full(n_actions, 1.0 / n_actions) if exploration is None else np.asarray(exploration, dtype=float)
    if p.shape != (n_actions,) or np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ParamOutOfRange("exploration probabilities must be positive and sum to 1")
    return p


def explore(model: FinitePomdp, steps: int, seed: int, exploration=None, prior=None,
            track_belief=True):
    """Sample ``steps + 1`` time points under i.i.d. exploration.

    Returns ``(states, observations, actions, beliefs)``; ``actions`` has
    length ``steps`` and ``beliefs`` is the exact filter from ``prior``.
    """
    p = _check_exploration(exploration, model.n_actions)
    prior = uniform(model.n_states) if prior is None else as_belief(prior, model.n_states)
    rng = np.random.default_rng(seed)
    uni = rng.random((steps + 1, 3))
    acts = np.minimum(np.searchsorted(np.cumsum(p), uni[:steps, 0] * p.sum(), side="right"),
                      model.n_actions - 1)
    cumT = np.cumsum(model.transitions, axis=2)
    cumO = np.cumsum(model.observation, axis=1)
    S, Y = model.n_states, model.n_obs
    xs = np.empty(steps + 1, dtype=np.int64)
    ys = np.empty(steps + 1, dtype=np.int64)
    x = min(int(np.searchsorted(np.cumsum(prior), uni[0, 1], side="right")), S - 1)
    for t in range(steps + 1):
        if t:
            x = min(int(np.searchsorted(cumT[acts[t - 1], x], uni[t, 1] * cumT[acts[t - 1], x, -1],
                                        side="right")), S - 1)
        xs[t] = x
        ys[t] = min(int(np.searchsorted(cumO[x], uni[t, 2] * cumO[x, -1], side="right")), Y - 1)
    beliefs = None
    if track_belief:
        T, O = model.transitions, model.observation
        beliefs = np.empty((steps + 1, S))
        z = prior * O[:, ys[0]]
        z /= z.sum()
        beliefs[0] = z
        for t in range(1, steps + 1):
            z = (z @ T[acts[t - 1]]) * O[:, ys[t]]
            z /= z.sum()
            beliefs[t] = z
    return xs, ys, acts, beliefs


def window_indices(ys, acts, N: int, n_obs: int, n_actions: int) -> np.ndarray:
    """Window index at every time ``t >= N`` (entry ``t - N``)."""
    L = len(ys) - N
    idx = np.zeros(L, dtype=np.int64)
    for k in range(N + 1):
        idx = idx * n_obs + ys[k:k + L]
    for k in range(N):
        idx = idx * n_actions + acts[k:k + L]
    return idx


def q_learning(model: FinitePomdp, variant, beta: float, steps: int, seed: int,
               exploration=None, prior=None) -> QTable:
    """Learn a Q-table from one exploration run of the true POMDP.

    ``variant`` is :class:`Quantized` (state = nearest representative of the
    running belief, cost ``c*``) or :class:`Window` (state = sliding window,
    cost from the anchored window MDP; the first ``N`` steps only fill the
    window).
    """
    if steps < 1:
        raise ParamOutOfRange("steps must be at least 1")
    if isinstance(variant, Quantized):
        q = variant.quantizer
        xs, ys, acts, beliefs = explore(model, steps, seed, exploration, prior)
        states = q.nearest_many(beliefs)
        cost_table = q.representatives @ model.cost if variant.cost is None else variant.cost
        kind, n_s = "quantized_belief", q.size
    elif isinstance(variant, Window):
        N = variant.N
        wm = window_mdp(model, N, variant.anchor)
        xs, ys, acts, _ = explore(model, steps + N, seed, exploration, prior, track_belief=False)
        states = window_indices(ys, acts, N, model.n_obs, model.n_actions)
        acts = acts[N:]
        cost_table = wm.cost
        kind, n_s = f"window({N})", wm.n_states
    else:
        raise ParamOutOfRange(f"unknown variant {variant!r}")
    learner = QLearner(n_s, model.n_actions, beta)
    learner.run(states.tolist(), acts.tolist(), cost_table[states[:-1], acts].tolist())
    return QTable(learner.values, learner.counts, kind, (states[:-1], acts, states[1:]))


def q_learning_mdp(mdp: FiniteMdp, beta: float, steps: int, seed: int, exploration=None,
                   start: int = 0) -> QTable:
    """Q-learning on a known finite MDP fed with sampled transitions."""
    p = _check_exploration(exploration, mdp.n_actions)
    rng = np.random.default_rng(seed)
    dense = [K.toarray() for K in mdp.kernels]
    cum = np.cumsum(np.stack(dense), axis=2)
    uni = rng.random((steps, 2))
    acts = np.minimum(np.searchsorted(np.cumsum(p), uni[:, 0] * p.sum(), side="right"), mdp.n_actions - 1)
    states = np.empty(steps + 1, dtype=np.int64)
    s = start
    states[0] = s
    for t in range(steps):
        row = cum[acts[t], s]
        s = min(int(np.searchsorted(row, uni[t, 1] * row[-1], side="right")), mdp.n_states - 1)
        states[t + 1] = s
    learner = QLearner(mdp.n_states, mdp.n_actions, beta)
    learner.run(states.tolist(), acts.tolist(), mdp.cost[states[:-1], acts].tolist())
    return QTable(learner.values, learner.counts, "mdp", (states[:-1], acts, states[1:]))


def induced_mdp(qtable: QTable, cost) -> FiniteMdp:
    """Empirical MDP of the exploration run; unvisited pairs become self-loops."""
    s, u, s2 = qtable.experience
    n, A = qtable.values.shape
    kernels = []
    for a in range(A):
        sel = u == a
        K = sparse.csr_matrix((np.ones(sel.sum()), (s[sel], s2[sel])), shape=(n, n))
        tot = np.asarray(K.sum(axis=1)).ravel()
        missing = np.flatnonzero(tot == 0)
        K = K + sparse.csr_matrix((np.ones(len(missing)), (missing, missing)), shape=(n, n))
        tot[missing] = 1.0
        kernels.append((sparse.diags(1.0 / tot) @ K).tocsr())
    return FiniteMdp(np.asarray(cost, dtype=float), tuple(kernels))


def q_star(mdp: FiniteMdp, beta: float, tol: float = 1e-10) -> np.ndarray:
    """Fixed-point Q-table of ``mdp`` by value iteration."""
    return mdp.q_values(value_iteration(mdp, beta, tol=tol).values, beta)


def greedy_policy(q: QTable):
    """Row-wise argmin (ties to lowest action); returns (actions, unvisited_state_mask)."""
    unvisited = q.visit_counts.sum(axis=1) == 0
    actions = greedy(q.values)
    actions[unvisited] = 0
    return actions, unvisited


def exploration_stationary(model: FinitePomdp, exploration=None) -> np.ndarray:
    """Stationary state law under i.i.d. exploration, used as a window anchor."""
    p = _check_exploration(exploration, model.n_actions)
    P = np.tensordot(p, model.transitions, axes=1)
    classes = recurrent_classes(P)
    pi = np.zeros(model.n_states)
    cls = classes[0]
    pi[cls] = stationary(P[np.ix_(cls, cls)])
    return pi


# ---------------------------------------------------------------------------
# Window loss


@dataclass
class WindowLoss:
    """Per-time estimate of the window approximation loss.

    The supremum over policies is replaced by a maximum over a sampled
    policy set, so ``values`` is a lower estimate of the true quantity.
    """

    values: np.ndarray
    per_policy: np.ndarray
    caveat: str = "supremum sampled, not exact"


def _posterior_tv(model, z_true, z_anchor, ys, us):
    a, b = z_true, z_anchor
    try:
        a, _ = correct(a, ys[0], model)
        for u, y in zip(us, ys[1:]):
            a, _ = filter_update(a, u, y, model)
    except ZeroLikelihood:
        return 0.0
    try:
        b, _ = correct(b, ys[0], model)
        for u, y in zip(us, ys[1:]):
            b, _ = filter_update(b, u, y, model)
    except ZeroLikelihood:
        return 2.0
    return float(np.abs(a - b).sum())


def window_loss(model: FinitePomdp, N: int, anchor=None, t_max: int = 10, n_samples: int = 200,
                seed: int = 0, prior=None, n_policies: int = 4, extra_policies=None) -> WindowLoss:
    """Monte-Carlo estimate of the anchored-window posterior error for ``t = 0..t_max``.

    For each policy in the set (i.i.d. uniform exploration, ``n_policies``
    random deterministic window policies, and any ``extra_policies`` given as
    action-per-window arrays), the chain is run from ``prior`` and, at each
    ``t``, the posterior of ``X_{t+N}`` computed from the true predictor
    ``z_t^-`` is compared in TV with the one computed from ``anchor`` on the same
    window of data.
    """
    anchor = uniform(model.n_states) if anchor is None else as_belief(anchor, model.n_states)
    prior = uniform(model.n_states) if prior is None else as_belief(prior, model.n_states)
    rng = np.random.default_rng(seed)
    W = window_count(model, N)
    tables = [None] + [rng.integers(model.n_actions, size=W) for _ in range(n_policies)]
    tables += [np.asarray(t, dtype=int) for t in (extra_policies or [])]
    S, O = model.transitions, model.observation
    horizon = t_max + N + 1
    out = np.zeros((len(tables), t_max + 1))
    for k, table in enumerate(tables):
        acc = np.zeros(t_max + 1)
        for r in range(n_samples):
            g = np.random.default_rng([seed, k, r])
            x = int(g.choice(model.n_states, p=prior))
            ys, us, preds = [], [], []
            zpred = prior
            for t in range(horizon):
                y = int(g.choice(model.n_obs, p=O[x]))
                ys.append(y)
                preds.append(zpred)
                zpost, _ = correct(zpred, y, model)
                if table is None or len(ys) < N + 1:
                    u = int(g.integers(model.n_actions))
                else:
                    u = int(table[window_index(ys[-N - 1:], us[len(us) - N:] if N else (),
                                               model.n_obs, model.n_actions)])
                us.append(u)
                zpred = zpost @ S[u]
                x = int(g.choice(model.n_states, p=S[u, x]))
            for t in range(t_max + 1):
                acc[t] += _posterior_tv(model, preds[t], anchor, ys[t:t + N + 1], us[t:t + N])
        out[k] = acc / n_samples
    return WindowLoss(out.max(axis=0), out)
