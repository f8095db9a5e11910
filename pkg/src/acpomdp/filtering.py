"""Exact Bayes filtering, trajectory simulation and dual-filter stability runs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import LengthMismatch, SupportViolation, ZeroLikelihood
from .model import FinitePomdp

LIKELIHOOD_FLOOR = 1e-300

# A policy maps (belief, history, rng) -> action index, where history is the
# pair (observations so far, actions so far).
Policy = Callable[[np.ndarray, tuple, np.random.Generator], int]


def as_belief(z, n_states: Optional[int] = None, tol=1e-12) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if n_states is not None and z.shape != (n_states,):
        raise LengthMismatch(f"belief has shape {z.shape}, expected ({n_states},)")
    if np.any(z < 0) or abs(z.sum() - 1.0) > tol:
        raise SupportViolation(f"not a probability vector: {z}")
    return z


def uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def predict(z, u: int, model: FinitePomdp) -> np.ndarray:
    """One-step predictor ``z^T T(.|., u)``."""
    return np.asarray(z, dtype=float) @ model.transitions[u]


def obs_likelihoods(z, u: int, model: FinitePomdp) -> np.ndarray:
    """``P(y | z, u)`` for every observation ``y``."""
    return predict(z, u, model) @ model.observation


def correct(prior, y: int, model: FinitePomdp):
    """Condition a predictor on observation ``y``; returns (posterior, likelihood)."""
    w = np.asarray(prior, dtype=float) * model.observation[:, y]
    lik = w.sum()
    if lik < LIKELIHOOD_FLOOR:
        raise ZeroLikelihood(y, float(lik))
    return w / lik, float(lik)


def filter_update(z, u: int, y: int, model: FinitePomdp):
    """Nonlinear filter step ``F(z, u, y)``; returns (belief, likelihood)."""
    return correct(predict(z, u, model), y, model)


def run_filter(prior, observations: Sequence[int], actions: Sequence[int], model: FinitePomdp):
    """Filter a whole record; ``beliefs[t] = P(X_t | y_0..y_t, u_0..u_{t-1})``."""
    z, _ = correct(prior, observations[0], model)
    out = [z]
    for t in range(1, len(observations)):
        z, _ = filter_update(z, actions[t - 1], observations[t], model)
        out.append(z)
    return np.array(out)


@dataclass
class Trajectory:
    """Sampled path.

    ``states``, ``observations`` and ``beliefs`` have one entry per time
    step; ``actions`` and ``stage_costs`` stop one step short, since the last
    belief has no successor.
    """

    states: np.ndarray
    observations: np.ndarray
    actions: np.ndarray
    beliefs: np.ndarray
    stage_costs: np.ndarray
    seed: int

    def average_cost(self) -> float:
        return float(self.stage_costs.mean()) if len(self.stage_costs) else float("nan")


def _sample(rng, p):
    # inverse-CDF draw; cheaper than rng.choice for short vectors
    return min(int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right")), len(p) - 1)


def constant_policy(u: int) -> Policy:
    return lambda z, history, rng: u


def random_policy(probs) -> Policy:
    probs = np.asarray(probs, dtype=float)
    return lambda z, history, rng: _sample(rng, probs)


def simulate(model: FinitePomdp, policy: Policy, prior, horizon: int, seed: int,
             controller_prior=None, record_beliefs=True) -> Trajectory:
    """Sample the POMDP with ``X_0 ~ prior`` and actions from ``policy``.

    The policy sees the filter started from ``controller_prior`` (default:
    the true prior), which is how a mis-specified controller is modelled.
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    rng = np.random.default_rng(seed)
    prior = as_belief(prior, model.n_states)
    cprior = prior if controller_prior is None else as_belief(controller_prior, model.n_states)
    S, O, C = model.transitions, model.observation, model.cost
    states = np.empty(horizon, dtype=int)
    obs = np.empty(horizon, dtype=int)
    actions = np.empty(horizon - 1, dtype=int)
    costs = np.empty(horizon - 1)
    beliefs = np.empty((horizon, model.n_states)) if record_beliefs else None
    x = _sample(rng, prior)
    y = _sample(rng, O[x])
    z, _ = correct(cprior, y, model)
    ys, us = [y], []
    for t in range(horizon):
        states[t], obs[t] = x, y
        if record_beliefs:
            beliefs[t] = z
        if t == horizon - 1:
            break
        u = int(policy(z, (ys, us), rng))
        actions[t] = u
        costs[t] = C[x, u]
        us.append(u)
        x = _sample(rng, S[u, x])
        y = _sample(rng, O[x])
        ys.append(y)
        z, _ = filter_update(z, u, y, model)
    return Trajectory(states, obs, actions, beliefs if record_beliefs else np.empty((0, model.n_states)),
                      costs, seed)


def check_absolute_continuity(mu, nu):
    mu = np.asarray(mu)
    nu = np.asarray(nu)
    bad = np.flatnonzero((mu > 0) & (nu <= 0))
    if len(bad):
        raise SupportViolation(f"mu puts mass on states {bad.tolist()} where nu has none")


def dual_filter_run(model: FinitePomdp, mu, nu, policy: Policy, horizon: int, seed: int,
                    n_runs: int, act_on: str = "nu", return_stderr=False):
    """Mean TV distance between filters started at ``mu`` and ``nu`` on shared data.

    The truth starts from ``mu``.  Actions come from ``policy`` applied to the
    ``nu`` filter (the mis-specified controller) unless ``act_on="mu"``.
    Returns an array indexed by time, optionally with its standard error.
    """
    mu = as_belief(mu, model.n_states)
    nu = as_belief(nu, model.n_states)
    check_absolute_continuity(mu, nu)
    if act_on not in ("mu", "nu"):
        raise ValueError("act_on must be 'mu' or 'nu'")
    S, O = model.transitions, model.observation
    tv = np.empty((n_runs, horizon))
    for r in range(n_runs):
        rng = np.random.default_rng([seed, r])
        x = _sample(rng, mu)
        y = _sample(rng, O[x])
        a, _ = correct(mu, y, model)
        b, _ = correct(nu, y, model)
        ys, us = [y], []
        for t in range(horizon):
            tv[r, t] = np.abs(a - b).sum()
            if t == horizon - 1:
                break
            u = int(policy(b if act_on == "nu" else a, (ys, us), rng))
            us.append(u)
            x = _sample(rng, S[u, x])
            y = _sample(rng, O[x])
            ys.append(y)
            a, _ = filter_update(a, u, y, model)
            b, _ = filter_update(b, u, y, model)
    mean = tv.mean(axis=0)
    if return_stderr:
        return mean, tv.std(axis=0, ddof=1) / np.sqrt(n_runs) if n_runs > 1 else np.zeros(horizon)
    return mean


def fit_exponential(seq, floor=1e-14):
    """Least-squares fit ``seq[t] ~ C * r**t`` on the positive entries; returns (C, r)."""
    seq = np.asarray(seq, dtype=float)
    t = np.flatnonzero(seq > floor)
    if len(t) < 2:
        return 0.0, 0.0
    slope, icept = np.polyfit(t, np.log(seq[t]), 1)
    return float(np.exp(icept)), float(np.exp(slope))
