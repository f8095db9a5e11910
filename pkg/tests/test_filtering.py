import itertools
from fractions import Fraction

import numpy as np
import pytest

from acpomdp.errors import LengthMismatch, SupportViolation, ZeroLikelihood
from acpomdp.filtering import (constant_policy, correct, dual_filter_run, filter_update,
                               fit_exponential, obs_likelihoods, predict, random_policy, run_filter,
                               simulate, uniform)
from acpomdp.metrics import assumption_report, dobrushin, tv_lipschitz_alpha, w1
from acpomdp.model import EX1_T0, FinitePomdp

from conftest import random_model
from oracles import joint_path_posterior, stationary_exact


def test_predict_uniform(ex1):
    assert predict(uniform(4), 0, ex1) == pytest.approx([1 / 3, 1 / 3, 1 / 6, 1 / 6], abs=1e-15)


def test_predict_trivial_models():
    perm = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0.]])
    m = FinitePomdp.from_arrays(np.stack([perm, np.eye(3)]), np.eye(3), np.zeros((3, 2)))
    assert predict([0, 1, 0], 0, m).tolist() == [0, 0, 1]
    z = np.array([0.2, 0.5, 0.3])
    assert predict(z, 1, m).tolist() == z.tolist()


def test_predict_affine(ex1):
    rng = np.random.default_rng(0)
    z, z2 = rng.dirichlet(np.ones(4), size=2)
    lam = 0.3
    assert predict(lam * z + (1 - lam) * z2, 1, ex1) == pytest.approx(
        lam * predict(z, 1, ex1) + (1 - lam) * predict(z2, 1, ex1), abs=1e-15)


def test_filter_update_hand_value(ex1):
    z, lik = filter_update(uniform(4), 0, 0, ex1)
    assert z == pytest.approx([13 / 33, 13 / 33, 7 / 66, 7 / 66], abs=1e-15)
    assert lik == pytest.approx(0.55, abs=1e-15)


def test_filter_update_deterministic_and_blind():
    perm = np.array([[0, 1, 0], [0, 0, 1], [1, 0, 0.]])
    T = np.full((1, 3, 3), 1 / 3)
    m = FinitePomdp.from_arrays(T, perm, np.zeros((3, 1)))
    z, _ = filter_update([0.2, 0.3, 0.5], 0, 2, m)
    assert z.tolist() == [0, 1, 0]
    blind = FinitePomdp.from_arrays(np.array([np.array(EX1_T0, dtype=float)]), np.ones((4, 1)), np.zeros((4, 1)))
    z0 = np.array([0.1, 0.2, 0.3, 0.4])
    z, lik = filter_update(z0, 0, 0, blind)
    assert lik == pytest.approx(1.0) and z == pytest.approx(predict(z0, 0, blind), abs=1e-15)


def test_zero_likelihood():
    m = FinitePomdp.from_arrays(np.eye(2)[None], np.eye(2), np.zeros((2, 1)))
    with pytest.raises(ZeroLikelihood):
        filter_update([1.0, 0.0], 0, 1, m)


def test_likelihoods_sum_to_one(ex1):
    rng = np.random.default_rng(1)
    for z in rng.dirichlet(np.ones(4), size=50):
        for u in range(2):
            assert obs_likelihoods(z, u, ex1).sum() == pytest.approx(1.0, abs=1e-12)
            for y in range(2):
                post, _ = filter_update(z, u, y, ex1)
                assert post.min() >= 0 and post.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
def test_filter_matches_joint_enumeration(seed):
    rng = np.random.default_rng(seed)
    n = 3 + seed
    m = random_model(rng, n=n, a=2, y=2)
    prior = rng.dirichlet(np.ones(n))
    for t in range(1, 6):
        for ys in itertools.product(range(2), repeat=t):
            for us in itertools.product(range(2), repeat=t - 1):
                ref = joint_path_posterior(m.transitions, m.observation, prior, ys, us)
                got = run_filter(prior, ys, us, m)[-1]
                assert np.abs(got - ref).max() <= 1e-10


def test_appendix_tv_inequality():
    rng = np.random.default_rng(4)
    for _ in range(5):
        m = random_model(rng, n=3, a=2, y=3)
        alpha, dq = tv_lipschitz_alpha(m), dobrushin(m.observation)
        for _ in range(100):
            z, z2 = rng.dirichlet(np.ones(3), size=2)
            u = int(rng.integers(2))
            lhs = np.abs(obs_likelihoods(z, u, m) - obs_likelihoods(z2, u, m)).sum()
            assert lhs <= alpha * (1 - dq) * w1(z, z2, m.ground) + 1e-9


def test_simulate_basics(ex1):
    const = ex1.with_cost(np.full((4, 2), 2.5))
    traj = simulate(const, random_policy([0.5, 0.5]), uniform(4), 200, seed=3)
    assert traj.average_cost() == 2.5
    assert len(traj.states) == 200 and len(traj.actions) == 199
    one = simulate(ex1, constant_policy(0), uniform(4), 1, seed=0)
    assert len(one.states) == 1 and len(one.actions) == 0
    a = simulate(ex1, random_policy([0.5, 0.5]), uniform(4), 50, seed=9)
    b = simulate(ex1, random_policy([0.5, 0.5]), uniform(4), 50, seed=9)
    assert np.array_equal(a.states, b.states) and np.array_equal(a.beliefs, b.beliefs)


def test_simulate_beliefs_match_filter(ex1):
    traj = simulate(ex1, random_policy([0.3, 0.7]), uniform(4), 30, seed=5)
    assert np.allclose(run_filter(uniform(4), traj.observations, traj.actions, ex1), traj.beliefs, atol=1e-14)


def test_simulate_stationary_cost(ex1):
    # always u = 0: exact stationary law of T0 is (29, 37, 17, 18) / 101, cost 35/101
    pi = stationary_exact(EX1_T0)
    assert pi == [Fraction(29, 101), Fraction(37, 101), Fraction(17, 101), Fraction(18, 101)]
    exact = 35 / 101
    runs = [simulate(ex1, constant_policy(0), uniform(4), 20_001, seed=s, record_beliefs=False).average_cost()
            for s in range(5)]
    se = np.std(runs, ddof=1) / np.sqrt(len(runs))
    assert abs(np.mean(runs) - exact) <= 3 * max(se, 1e-3)


def test_dual_filter(ex1):
    mu = uniform(4)
    pol = random_policy([0.5, 0.5])
    assert np.all(dual_filter_run(ex1, mu, mu, pol, 20, seed=0, n_runs=10) == 0)
    nu = np.array([0.7, 0.1, 0.1, 0.1])
    tv = dual_filter_run(ex1, mu, nu, pol, 21, seed=0, n_runs=100)
    t = np.arange(21)
    assert np.all(tv <= 4 * 0.65 ** t + 1e-12)
    C, r = fit_exponential(tv)
    assert C <= 4 and r <= 0.65
    with pytest.raises(SupportViolation):
        dual_filter_run(ex1, mu, np.array([1.0, 0, 0, 0]), pol, 5, 0, 2)


def test_dual_filter_deterministic_obs():
    T = np.full((1, 3, 3), 1 / 3)
    m = FinitePomdp.from_arrays(T, np.eye(3), np.zeros((3, 1)))
    tv = dual_filter_run(m, uniform(3), np.array([0.6, 0.2, 0.2]), constant_policy(0), 5, 0, 10)
    assert np.all(tv[1:] == 0)


def test_dual_filter_act_on_flag(ex1):
    nu = np.array([0.7, 0.1, 0.1, 0.1])

    def threshold(z, history, rng):
        return int(z[2] + z[3] > 0.3)

    a = dual_filter_run(ex1, uniform(4), nu, threshold, 10, seed=1, n_runs=20, act_on="mu")
    b = dual_filter_run(ex1, uniform(4), nu, threshold, 10, seed=1, n_runs=20, act_on="nu")
    assert a.shape == b.shape == (10,)
    with pytest.raises(ValueError):
        dual_filter_run(ex1, uniform(4), nu, threshold, 10, 1, 2, act_on="x")


def test_belief_validation():
    m = random_model(np.random.default_rng(0))
    with pytest.raises(LengthMismatch):
        simulate(m, constant_policy(0), [0.5, 0.5], 3, 0)
    with pytest.raises(SupportViolation):
        simulate(m, constant_policy(0), [0.5, 0.6, -0.1], 3, 0)


def test_fit_exponential_recovers_rate():
    seq = 3.0 * 0.5 ** np.arange(10)
    C, r = fit_exponential(seq)
    assert C == pytest.approx(3.0) and r == pytest.approx(0.5)
