from math import comb

import numpy as np
import pytest

from acpomdp.beliefmdp import (MonteCarlo, belief_cost, build_quantized_mdp, contraction_ratio, eta,
                               lattice, quantization_error_bound, quantize, quantizer_for,
                               value_iteration)
from acpomdp.errors import DegeneratePair, InvalidRegime, NotConverged, TooLarge
from acpomdp.filtering import predict, uniform
from acpomdp.metrics import (LineMetric, assumption_report, bl_distance, cost_lipschitz_k1,
                             pairwise_w1, w1)
from acpomdp.model import FinitePomdp, builtin, discretize

from conftest import random_model
from oracles import finite_horizon_dp


def test_eta_ex1_uniform(ex1):
    m = eta(uniform(4), 0, ex1)
    assert m.weights == pytest.approx([0.55, 0.45], abs=1e-15)
    assert m.beliefs[0] == pytest.approx([13 / 33, 13 / 33, 7 / 66, 7 / 66], abs=1e-15)
    assert m.beliefs[1] == pytest.approx([7 / 27, 7 / 27, 13 / 54, 13 / 54], abs=1e-15)


def test_eta_single_observation_and_dirac():
    T = np.array([[[0, 1.0], [1.0, 0]]])
    blind = FinitePomdp.from_arrays(T, np.ones((2, 1)), np.zeros((2, 1)))
    m = eta([0.3, 0.7], 0, blind)
    assert len(m.weights) == 1 and m.beliefs[0].tolist() == [0.7, 0.3]
    sharp = FinitePomdp.from_arrays(T, np.eye(2), np.zeros((2, 1)))
    m = eta([1.0, 0.0], 0, sharp)
    assert m.weights.tolist() == [1.0] and m.beliefs[0].tolist() == [0.0, 1.0]


def test_eta_smoothing_identity(ex1):
    rng = np.random.default_rng(0)
    for z in rng.dirichlet(np.ones(4), size=100):
        for u in range(2):
            m = eta(z, u, ex1)
            assert m.weights.sum() == pytest.approx(1.0, abs=1e-12)
            assert m.mean() == pytest.approx(predict(z, u, ex1), abs=1e-12)


def test_belief_cost(ex1):
    assert belief_cost([0, 0, 1, 0], 1, ex1) == pytest.approx(ex1.cost[2, 1])
    assert belief_cost(uniform(4), 0, ex1) == pytest.approx(ex1.cost[:, 0].mean())
    rng = np.random.default_rng(1)
    k1 = cost_lipschitz_k1(ex1)
    for z, z2 in rng.dirichlet(np.ones(4), size=(200, 2)):
        assert abs(belief_cost(z, 0, ex1) - belief_cost(z2, 0, ex1)) <= k1 * w1(z, z2) + 1e-12


def test_contraction_ex1_sample(ex1):
    rng = np.random.default_rng(2)
    k2 = assumption_report(ex1).k2
    for _ in range(150):
        z, z2 = rng.dirichlet(np.ones(4), size=2)
        assert contraction_ratio(ex1, z, z2, int(rng.integers(2))) <= k2 + 1e-9


def test_contraction_permuted_pair(ex1):
    z = np.array([0.4, 0.3, 0.2, 0.1])
    assert contraction_ratio(ex1, z, z[::-1], 0) <= 0.8 + 1e-9


def test_contraction_sweep_other_models():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 4:
        m = random_model(rng, n=3, a=2, y=2)
        rep = assumption_report(m)
        if not rep.passes_main_assumption:
            continue
        checked += 1
        for _ in range(40):
            z, z2 = rng.dirichlet(np.ones(3), size=2)
            assert contraction_ratio(m, z, z2, int(rng.integers(2))) <= rep.k2 + 1e-9


def test_contraction_on_line_metric():
    m = discretize(builtin("ex3", sigma=1.5), 8)
    rng = np.random.default_rng(4)
    k2 = assumption_report(m).k2
    for _ in range(20):
        z, z2 = rng.dirichlet(np.ones(8), size=2)
        assert contraction_ratio(m, z, z2, int(rng.integers(m.n_actions))) <= k2 + 1e-9


def test_contraction_identical_rows_and_degenerate(ex1):
    T = np.tile([0.2, 0.3, 0.5], (2, 3, 1))
    m = FinitePomdp.from_arrays(T, np.eye(3)[:, :2] + np.array([[0, 0], [0, 0], [0.5, 0.5]]), np.zeros((3, 2)))
    assert contraction_ratio(m, [1, 0, 0], [0, 0, 1], 0) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DegeneratePair):
        contraction_ratio(ex1, uniform(4), uniform(4), 0)


def test_cited_bl_bound(ex1):
    rep = assumption_report(ex1)
    coef = (3 - 2 * rep.dobrushin_q) * (1 - rep.dobrushin_t)
    rng = np.random.default_rng(5)
    for _ in range(40):
        z, z2 = rng.dirichlet(np.ones(4), size=2)
        u = int(rng.integers(2))
        a, b = eta(z, u, ex1), eta(z2, u, ex1)
        atoms = np.vstack([a.beliefs, b.beliefs])
        d = np.abs(atoms[:, None] - atoms[None]).sum(-1)
        wa = np.concatenate([a.weights, np.zeros(len(b.weights))])
        wb = np.concatenate([np.zeros(len(a.weights)), b.weights])
        assert bl_distance(wa, wb, d) <= coef * np.abs(z - z2).sum() + 1e-9


def test_quantize_examples():
    q = quantize(2, 2)
    assert q.representatives.tolist() == [[1, 0], [0.5, 0.5], [0, 1]]
    q = quantize(4, 10)
    assert q.size == 286 == comb(13, 3)
    assert all(q.nearest(z) == i for i, z in enumerate(q.representatives))
    assert np.array_equal(q.nearest_many(q.representatives), np.arange(q.size))
    with pytest.raises(TooLarge):
        quantize(10, 30)


def test_lattice_rows_are_beliefs():
    L = lattice(3, 5)
    assert len(L) == comb(7, 2)
    assert np.allclose(L.sum(1), 1.0) and L.min() >= 0
    assert np.all(np.diff(L[:, 0]) <= 0)


def test_nearest_many_matches_nearest():
    rng = np.random.default_rng(6)
    Z = rng.dirichlet(np.ones(4), size=300)
    for metric in ("discrete", LineMetric(np.array([0.0, 0.4, 1.0, 3.0]))):
        q = quantize(4, 6, metric, diameter=3.0 if metric != "discrete" else 1.0)
        assert np.array_equal(q.nearest_many(Z), [q.nearest(z) for z in Z])


def test_l_bar_covers_bins(ex1_q10):
    rng = np.random.default_rng(7)
    Z = rng.dirichlet(np.ones(4), size=2000)
    idx = ex1_q10.nearest_many(Z)
    d = 0.5 * np.abs(Z - ex1_q10.representatives[idx]).sum(1)
    assert d.max() <= ex1_q10.l_bar / 2 + 1e-12


def test_build_conserves_mass(ex1, ex1_q10):
    mdp = build_quantized_mdp(ex1, ex1_q10)
    for K in mdp.kernels:
        assert np.abs(np.asarray(K.sum(1)).ravel() - 1).max() <= 1e-12
    assert mdp.cost == pytest.approx(ex1_q10.representatives @ ex1.cost)


def test_build_single_state():
    m = FinitePomdp.from_arrays(np.ones((2, 1, 1)), np.ones((1, 1)), np.array([[1.0, 2.0]]))
    mdp = build_quantized_mdp(m, quantize(1, 3))
    assert mdp.n_states == 1 and all(K.toarray().tolist() == [[1.0]] for K in mdp.kernels)


def test_build_resolution_one_gives_vertices(ex1):
    q = quantizer_for(ex1, 1)
    assert q.size == 4 and np.array_equal(q.representatives, np.eye(4))
    build_quantized_mdp(ex1, q)


def test_build_monte_carlo(ex1):
    q = quantizer_for(ex1, 4)
    mdp = build_quantized_mdp(ex1, q, MonteCarlo(4000, seed=1))
    assert mdp.n_states == q.size
    for K in mdp.kernels:
        assert np.abs(np.asarray(K.sum(1)).ravel() - 1).max() <= 1e-10
    dirac = build_quantized_mdp(ex1, q)
    # bin averages stay within the bin radius of the lattice costs
    assert np.abs(mdp.cost - dirac.cost).max() <= q.l_bar + 1e-12


def test_value_iteration_trivial(ex1, ex1_q10):
    mdp = build_quantized_mdp(ex1.with_cost(np.zeros((4, 2))), ex1_q10)
    assert np.all(value_iteration(mdp, 0.9).values == 0)
    mdp = build_quantized_mdp(ex1.with_cost(np.full((4, 2), 0.7)), ex1_q10)
    assert value_iteration(mdp, 0.9, tol=1e-10).values == pytest.approx(7.0, abs=1e-9)


def test_value_iteration_bellman_and_lipschitz(ex1, ex1_q10):
    mdp = build_quantized_mdp(ex1, ex1_q10)
    tol = 1e-8
    res = value_iteration(mdp, 0.9, tol=tol)
    bellman = mdp.q_values(res.values, 0.9).min(1)
    assert np.abs(bellman - res.values).max() <= tol
    rep = assumption_report(ex1)
    K = rep.lipschitz_k(0.9)
    R = ex1_q10.representatives
    W = pairwise_w1(R, R)
    gap = np.abs(res.values[:, None] - res.values[None, :])
    assert np.all(gap <= K * W + 2 * tol + K * ex1_q10.l_bar)


def test_value_iteration_matches_finite_horizon_dp():
    rng = np.random.default_rng(8)
    m = random_model(rng, n=3, a=2, y=2)
    q = quantizer_for(m, 3)
    mdp = build_quantized_mdp(m, q)
    beta, H = 0.8, 60
    res = value_iteration(mdp, beta, tol=1e-10)
    dp = finite_horizon_dp(mdp.cost, mdp.kernels, beta, H)
    c_inf = np.abs(mdp.cost).max()
    assert np.abs(res.values - dp).max() <= beta ** H * c_inf / (1 - beta) + 1e-10


def test_value_iteration_errors(ex1, ex1_q10):
    mdp = build_quantized_mdp(ex1, ex1_q10)
    with pytest.raises(InvalidRegime):
        value_iteration(mdp, 1.0)
    with pytest.raises(NotConverged) as err:
        value_iteration(mdp, 0.99, max_iter=3)
    assert err.value.residual > 0


def test_resolution_refinement(ex1):
    rep = assumption_report(ex1)
    q10, q20 = quantizer_for(ex1, 10), quantizer_for(ex1, 20)
    v10 = value_iteration(build_quantized_mdp(ex1, q10), 0.9).values
    v20 = value_iteration(build_quantized_mdp(ex1, q20), 0.9).values
    diff = np.abs(v20 - v10[q10.nearest_many(q20.representatives)]).max()
    assert diff <= quantization_error_bound(rep.k1, rep.k2, 0.9, q10.l_bar)


def test_quantization_error_bound():
    assert quantization_error_bound(1, 0.8, 0.9, 0.0) == 0.0
    assert quantization_error_bound(1, 0.8, 0.9, 0.05) == pytest.approx(35.714285714285, rel=1e-12)
    assert quantization_error_bound(1, 0.8, 0.9, 0.1) == pytest.approx(2 * quantization_error_bound(1, 0.8, 0.9, 0.05))
    with pytest.raises(InvalidRegime):
        quantization_error_bound(1, 1.2, 0.9, 0.1)
