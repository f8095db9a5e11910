"""Vanishing-discount ACOE solutions, exact average costs and prior-robustness checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .beliefmdp import (FiniteMdp, Quantizer, QuantizedBeliefMdp, build_quantized_mdp,
                        value_iteration)
from .errors import InvalidRegime, NotConverged, ParamOutOfRange
from .filtering import (as_belief, check_absolute_continuity, correct, obs_likelihoods,
                        simulate)
from .model import FinitePomdp

log = logging.getLogger(__name__)


def span(values) -> float:
    values = np.asarray(values, dtype=float)
    return float(values.max() - values.min())


@dataclass
class AcoeSolution:
    """Quantized relative value function and average cost.

    ``beta_trace`` holds ``(beta, (1 - beta) J_beta(z0), span(h_beta))`` for
    every discount factor of the schedule, in order.
    """

    rho_star: float
    h: np.ndarray
    anchor: int
    residual: float
    policy: np.ndarray
    beta_trace: list = field(default_factory=list)
    values: Optional[np.ndarray] = None
    mdp: Optional[QuantizedBeliefMdp] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "rho_star": self.rho_star,
            "anchor": self.anchor,
            "residual": self.residual,
            "span_h": span(self.h),
            "beta_trace": [{"beta": b, "rho": r, "span": s} for b, r, s in self.beta_trace],
        }


def acoe_residual(mdp: FiniteMdp, h, rho: float) -> float:
    """``sup_z |h(z) + rho - min_u [c(z,u) + sum_z' h(z') P(z'|z,u)]|``."""
    return float(np.abs(h + rho - mdp.q_values(h, 1.0).min(axis=1)).max())


def vanishing_discount(model: FinitePomdp, quantizer: Quantizer, beta_schedule: Sequence[float],
                       tol: float = 1e-8, weighting="dirac", anchor: Optional[int] = None,
                       k2: Optional[float] = None, max_iter: int = 10_000_000,
                       mdp: Optional[QuantizedBeliefMdp] = None) -> AcoeSolution:
    """Estimate ``rho*`` and ``h`` from discounted problems with ``beta -> 1``.

    The last (largest) discount factor provides ``rho* = (1 - beta) J_beta(z0)``
    and ``h = J_beta - J_beta(z0)``; no extrapolation is applied.
    """
    betas = list(beta_schedule)
    if not betas:
        raise ParamOutOfRange("beta schedule is empty")
    if any(b2 <= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ParamOutOfRange("beta schedule must be increasing")
    if k2 is not None:
        for b in betas:
            if b * k2 >= 1.0:
                log.warning("beta * K2 = %.3g >= 1; Lipschitz bounds do not apply", b * k2)
    if mdp is None:
        mdp = build_quantized_mdp(model, quantizer, weighting)
    z0 = quantizer.barycenter() if anchor is None else int(anchor)
    trace = []
    for b in betas:
        res = value_iteration(mdp, b, tol=tol, max_iter=max_iter)
        h = res.values - res.values[z0]
        rho = (1.0 - b) * res.values[z0]
        trace.append((b, float(rho), span(h)))
    residual = acoe_residual(mdp, h, rho)
    return AcoeSolution(float(rho), h, z0, residual, res.policy, trace, res.values, mdp)


def recurrent_classes(P) -> list:
    """Closed communicating classes of a stochastic matrix, as index arrays."""
    P = sparse.csr_matrix(P)
    P.eliminate_zeros()
    n_comp, labels = connected_components(P, directed=True, connection="strong")
    closed = np.ones(n_comp, dtype=bool)
    coo = P.tocoo()
    leaving = labels[coo.row] != labels[coo.col]
    closed[np.unique(labels[coo.row[leaving]])] = False
    return [np.flatnonzero(labels == k) for k in range(n_comp) if closed[k]]


def stationary(P) -> np.ndarray:
    """Stationary distribution of an irreducible stochastic matrix, by a direct solve."""
    P = sparse.csr_matrix(P)
    n = P.shape[0]
    if n == 1:
        return np.ones(1)
    A = (P.T - sparse.identity(n)).tolil()
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    from scipy.sparse.linalg import spsolve

    pi = spsolve(A.tocsc(), rhs)
    pi = np.clip(pi, 0.0, None)
    pi /= pi.sum()
    if np.abs(P.T @ pi - pi).max() > 1e-10:
        raise NotConverged(1, float(np.abs(P.T @ pi - pi).max()))
    return pi


def average_cost_exact(mdp: FiniteMdp, policy) -> float:
    """Long-run average cost of a stationary policy (limsup: worst recurrent class)."""
    policy = np.asarray(policy, dtype=int)
    n = mdp.n_states
    if policy.shape != (n,) or policy.min() < 0 or policy.max() >= mdp.n_actions:
        raise ParamOutOfRange("policy must assign a valid action to every state")
    rows = [mdp.kernels[u].getrow(s) for s, u in enumerate(policy)]
    P = sparse.vstack(rows).tocsr()
    c = mdp.cost[np.arange(n), policy]
    best = -np.inf
    for cls in recurrent_classes(P):
        pi = stationary(P[cls][:, cls])
        best = max(best, float(pi @ c[cls]))
    return best


# ---------------------------------------------------------------------------
# Robustness to incorrect priors


def quantized_policy(quantizer: Quantizer, actions):
    actions = np.asarray(actions, dtype=int)
    return lambda z, history, rng: int(actions[quantizer.nearest(z)])


def discounted_prior_value(model: FinitePomdp, quantizer: Quantizer, values, prior) -> float:
    """Quantized value of starting from ``prior`` before the first observation."""
    lik = np.asarray(prior, dtype=float) @ model.observation
    total = 0.0
    for y in np.flatnonzero(lik > 0):
        z, _ = correct(prior, int(y), model)
        total += lik[y] * values[quantizer.nearest(z)]
    return float(total)


@dataclass
class RobustnessResult:
    gap: float
    stderr: float
    estimate: float
    reference: float
    mode: str
    per_run: np.ndarray = field(repr=False, default=None)

    def __iter__(self):
        return iter((self.gap, self.stderr))


def robustness_gap(model: FinitePomdp, mu, nu, quantizer: Quantizer, mode="average", beta=None,
                   horizon: int = 100_000, n_runs: int = 20, seed: int = 0,
                   beta_schedule=(0.9, 0.99, 0.999), tol=1e-8, solution=None) -> RobustnessResult:
    """Cost of running the policy designed for prior ``nu`` when the truth starts at ``mu``.

    ``mode="average"`` compares the simulated long-run cost against ``rho*``;
    ``mode="discounted"`` compares the simulated discounted cost (truncated at
    ``horizon``) against the quantized optimal value from ``mu``.  Unpacks as
    ``(gap, stderr)``.
    """
    mu = as_belief(mu, model.n_states)
    nu = as_belief(nu, model.n_states)
    check_absolute_continuity(mu, nu)
    if mode == "average":
        if solution is None:
            solution = vanishing_discount(model, quantizer, beta_schedule, tol=tol)
        actions, reference = solution.policy, solution.rho_star
    elif mode == "discounted":
        if beta is None:
            raise ParamOutOfRange("discounted mode needs beta")
        mdp = solution.mdp if solution is not None else build_quantized_mdp(model, quantizer)
        res = value_iteration(mdp, beta, tol=tol)
        actions = res.policy
        reference = discounted_prior_value(model, quantizer, res.values, mu)
    else:
        raise ParamOutOfRange(f"unknown mode {mode!r}")
    policy = quantized_policy(quantizer, actions)
    per_run = np.empty(n_runs)
    for r in range(n_runs):
        traj = simulate(model, policy, mu, horizon + 1, seed=seed * 100_003 + r,
                        controller_prior=nu, record_beliefs=False)
        if mode == "average":
            per_run[r] = traj.average_cost()
        else:
            per_run[r] = float(traj.stage_costs @ beta ** np.arange(horizon))
    est = float(per_run.mean())
    se = float(per_run.std(ddof=1) / np.sqrt(n_runs)) if n_runs > 1 else 0.0
    return RobustnessResult(est - reference, se, est, reference, mode, per_run)


def robustness_bound(c_inf: float, beta: float, k1: float, k2: float, d: float, alpha_bar: float,
                     n_max: int = 10_000):
    """Discounted robustness bound minimised over the split point ``n``; returns (value, n)."""
    if not 0.0 < beta < 1.0:
        raise InvalidRegime(f"beta must lie in (0, 1), got {beta}")
    if k2 * beta >= 1.0 or alpha_bar * beta >= 1.0:
        raise InvalidRegime(f"need K2*beta < 1 and alpha_bar*beta < 1 (K2={k2}, alpha_bar={alpha_bar})")
    n = np.arange(n_max + 1)
    bn = beta ** n
    terms = (c_inf * (1.0 - bn) / (1.0 - beta) + bn * d * k1 / (1.0 - k2 * beta)
             + 4.0 * c_inf / (1.0 - beta) * (alpha_bar * beta) ** n)
    k = int(np.argmin(terms))
    return float(terms[k]), k
