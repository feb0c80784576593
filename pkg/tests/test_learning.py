import logging

import numpy as np

from mbirlab.core import Trace, hard_threshold
from mbirlab.errors import ConfigError, ShapeError
from mbirlab.fixedbases import dct_init, random_orthogonal
from mbirlab.learning import (ClusterAssignment, Dictionary, MultiLayerModel,
                              Transform, UnionTransformModel, assign_clusters,
                              learn_dictionary_soup, learn_multilayer,
                              learn_transform, learn_ultra, procrustes_update)


# ----------------------------------------------------------- procrustes

def test_procrustes_identity():
    got = procrustes_update(np.eye(3), np.eye(3))
    assert np.allclose(got.omega, np.eye(3), atol=1e-12)


def test_procrustes_finds_planted_rotation_grid_oracle():
    theta = 0.3
    Z = np.array([[np.cos(theta), -np.sin(theta)],
                  [np.sin(theta), np.cos(theta)]])
    got = procrustes_update(np.eye(2), Z)
    assert np.abs(got.omega - Z).max() <= 1e-8
    # grid over both families of 2x2 orthogonal matrices confirms the
    # planted rotation is the global minimizer
    th = np.arange(0.0, 2 * np.pi, 1e-4)
    ct, st = np.cos(th), np.sin(th)
    rot = ((ct - Z[0, 0]) ** 2 + (-st - Z[0, 1]) ** 2
           + (st - Z[1, 0]) ** 2 + (ct - Z[1, 1]) ** 2)
    ref = ((ct - Z[0, 0]) ** 2 + (st - Z[0, 1]) ** 2
           + (st - Z[1, 0]) ** 2 + (-ct - Z[1, 1]) ** 2)
    assert abs(th[np.argmin(rot)] - theta) <= 1e-4
    assert ref.min() > rot.min() + 1.0


def test_procrustes_beats_random_rotations():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((3, 20))
    Z = rng.standard_normal((3, 20))
    best = procrustes_update(X, Z)
    obj = np.sum((best.omega @ X - Z) ** 2)
    for _ in range(200):
        O = random_orthogonal(3, rng)
        assert obj <= np.sum((O @ X - Z) ** 2) + 1e-9


def test_procrustes_logs_rank_deficiency(caplog):
    with caplog.at_level(logging.INFO, logger="mbirlab.learning"):
        procrustes_update(np.zeros((3, 5)), np.zeros((3, 5)))
    assert any("rank deficient" in r.message for r in caplog.records)


# ------------------------------------------------------ learn_transform

def test_learn_transform_reaches_planted_objective():
    rng = np.random.default_rng(0)
    n, S, gamma = 8, 100, 0.5
    Z = np.zeros((n, S))
    for i in range(S):
        Z[rng.choice(n, 2, replace=False), i] = \
            rng.uniform(1.0, 2.0, 2) * rng.choice([-1.0, 1.0], 2)
    X = dct_init(n).T @ Z
    planted_obj = gamma ** 2 * np.count_nonzero(Z)
    tr = Trace()
    learn_transform(X, gamma, 10, trace=tr)
    assert tr.costs()[-1] <= planted_obj + 1e-6


def test_learn_transform_zero_gamma_codes_everything():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((6, 30))
    tr = Trace()
    om, Z = learn_transform(X, 0.0, 3, trace=tr)
    # the transform is re-solved after the final code step, so equality
    # holds only up to one svd round trip of float dust
    assert np.allclose(Z, om.omega @ X, atol=1e-12)
    assert tr.costs()[0] <= 1e-20


def test_learn_transform_huge_gamma_keeps_initializer():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((6, 30))
    om, Z = learn_transform(X, 1e6, 5)
    assert np.all(Z == 0.0)
    assert np.array_equal(om.omega, dct_init(6))


def test_learn_transform_trace_monotone():
    rng = np.random.default_rng(3)
    X = rng.standard_normal((8, 60))
    tr = Trace()
    learn_transform(X, 0.4, 12, trace=tr)
    costs = tr.costs()
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


# ------------------------------------------------------ assign_clusters

def test_assign_single_transform_all_zero_labels():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((4, 25))
    model = UnionTransformModel([Transform(dct_init(4))], 0.5)
    assign, codes = assign_clusters(model, X)
    assert np.all(assign.labels == 0)
    assert np.array_equal(codes, hard_threshold(dct_init(4) @ X, 0.5))


def test_assign_basis_vector_prefers_identity():
    n = 8
    model = UnionTransformModel(
        [Transform(np.eye(n)), Transform(dct_init(n))], 0.5)
    e1 = np.zeros((n, 1))
    e1[0, 0] = 1.0
    assign, _ = assign_clusters(model, e1)
    cost_id = min(1.0, 0.25)
    cost_dct = float(np.minimum((dct_init(n) @ e1[:, 0]) ** 2, 0.25).sum())
    assert cost_id < cost_dct
    assert assign.labels[0] == 0


def test_assign_matches_brute_force_over_supports():
    rng = np.random.default_rng(5)
    n, S, gamma = 4, 30, 0.6
    X = rng.standard_normal((n, S))
    model = UnionTransformModel(
        [Transform(dct_init(n)), Transform(random_orthogonal(n, rng)),
         Transform(np.eye(n))], gamma)
    assign, codes = assign_clusters(model, X)
    for i in range(S):
        best_cost, best_k = np.inf, -1
        for k, t in enumerate(model.transforms):
            v = t.omega @ X[:, i]
            for mask in range(1 << n):
                keep = np.array([(mask >> j) & 1 for j in range(n)], bool)
                cost = float(np.sum(v[~keep] ** 2)) + gamma ** 2 * keep.sum()
                if cost < best_cost - 1e-12:
                    best_cost, best_k = cost, k
        assert assign.labels[i] == best_k


def test_assign_tie_takes_smallest_index():
    # identical transforms give identical costs for every column
    model = UnionTransformModel(
        [Transform(np.eye(3)), Transform(np.eye(3))], 0.5)
    assign, _ = assign_clusters(model, np.ones((3, 7)))
    assert np.all(assign.labels == 0)


# ----------------------------------------------------------- learn_ultra

def test_learn_ultra_single_cluster_reduces_to_learn_transform():
    rng = np.random.default_rng(6)
    X = rng.standard_normal((8, 50))
    single, Z = learn_transform(X, 0.5, 8, seed=3)
    model, assign = learn_ultra(X, 1, 0.5, 8, seed=3)
    assert np.array_equal(model.transforms[0].omega, single.omega)
    assert np.all(assign.labels == 0)


def test_learn_ultra_zero_iters_returns_initialization():
    rng = np.random.default_rng(7)
    X = rng.standard_normal((6, 40))
    model, assign = learn_ultra(X, 3, 0.5, 0, seed=11)
    ref = np.random.default_rng(11)
    labels = ref.integers(0, 3, size=40)
    assert np.array_equal(assign.labels, labels)
    assert np.array_equal(model.transforms[0].omega, dct_init(6))
    for k in (1, 2):
        assert np.array_equal(model.transforms[k].omega,
                              random_orthogonal(6, ref))


def _planted_two_clusters(seed, n=8, per=300, s=2):
    """Two transform clusters with disjoint active coordinates plus
    sub-threshold fill on the inactive half, so every transform row is
    pinned by the data."""
    rng = np.random.default_rng(1000 + seed)
    O1 = dct_init(n)
    O2 = random_orthogonal(n, rng)
    X = np.zeros((n, 2 * per))
    h = n // 2
    for i in range(per):
        z = rng.uniform(-0.25, 0.25, n)
        z[:h] = 0.0
        z[rng.choice(np.arange(0, h), s, replace=False)] = \
            rng.uniform(2.0, 3.0, s) * rng.choice([-1.0, 1.0], s)
        X[:, i] = O1.T @ z
        z2 = rng.uniform(-0.25, 0.25, n)
        z2[h:] = 0.0
        z2[rng.choice(np.arange(h, n), s, replace=False)] = \
            rng.uniform(2.0, 3.0, s) * rng.choice([-1.0, 1.0], s)
        X[:, per + i] = O2.T @ z2
    return X, np.repeat([0, 1], per)


def test_learn_ultra_recovers_planted_clusters():
    for seed in (0, 8):
        X, truth = _planted_two_clusters(seed)
        model, assign = learn_ultra(X, 2, 0.9, 80, seed=seed)
        lab = assign.labels
        acc = max(np.mean(lab == truth), np.mean(lab == 1 - truth))
        assert acc >= 0.95


def test_learn_ultra_trace_monotone():
    rng = np.random.default_rng(9)
    X = rng.standard_normal((8, 80))
    tr = Trace()
    learn_ultra(X, 3, 0.5, 10, seed=2, trace=tr)
    costs = tr.costs()
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


def test_union_model_validation():
    try:
        UnionTransformModel([], 0.5)
    except ConfigError:
        pass
    else:
        raise AssertionError("expected ConfigError")
    try:
        UnionTransformModel([Transform(np.eye(3)), Transform(np.eye(4))], 0.5)
    except ShapeError:
        pass
    else:
        raise AssertionError("expected ShapeError")


# ------------------------------------------------------- learn_multilayer

def test_multilayer_single_layer_equals_learn_transform():
    rng = np.random.default_rng(10)
    X = rng.standard_normal((8, 60))
    single, _ = learn_transform(X, 0.4, 7)
    model = learn_multilayer(X, 1, [0.4], 7)
    assert np.array_equal(model.layers[0].omega, single.omega)


def test_multilayer_zero_gammas_annihilate_residuals():
    rng = np.random.default_rng(11)
    X = rng.standard_normal((6, 30))
    tr = Trace()
    learn_multilayer(X, 3, [0.0, 0.0, 0.0], 2, trace=tr)
    assert tr.costs()[0] <= 1e-20


def test_multilayer_second_layer_sparsifies_further():
    rng = np.random.default_rng(2)
    n, S = 8, 200
    O = random_orthogonal(n, rng)
    Z = np.zeros((n, S))
    for i in range(S):
        Z[rng.choice(n, 3, replace=False), i] = \
            rng.uniform(1.0, 2.0, 3) * rng.choice([-1.0, 1.0], 3)
    X = O.T @ Z
    model = learn_multilayer(X, 2, [0.4, 0.4], 15)
    V1 = model.layers[0].omega @ X
    Z1 = hard_threshold(V1, model.gammas[0])
    R2 = V1 - Z1
    V2 = model.layers[1].omega @ R2
    Z2 = hard_threshold(V2, model.gammas[1])
    assert np.sum((V2 - Z2) ** 2) <= np.sum((V1 - Z1) ** 2)


def test_multilayer_trace_monotone():
    for seed in (0, 1, 2):
        rng = np.random.default_rng(20 + seed)
        X = rng.standard_normal((6, 50))
        tr = Trace()
        learn_multilayer(X, 3, [0.5, 0.3, 0.2], 12, trace=tr)
        costs = tr.costs()
        assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


def test_multilayer_validation():
    try:
        learn_multilayer(np.zeros((4, 4)), 2, [0.1], 3)
    except ConfigError:
        pass
    else:
        raise AssertionError("expected ConfigError")
    try:
        MultiLayerModel([], [])
    except ConfigError:
        pass
    else:
        raise AssertionError("expected ConfigError")


# -------------------------------------------------- learn_dictionary_soup

def test_soup_huge_lambda_keeps_seeded_atoms():
    rng = np.random.default_rng(12)
    X = rng.standard_normal((5, 30))
    D = learn_dictionary_soup(X, 1e6, 3, 5, seed=7)
    assert np.all(D.codes == 0.0)
    ref = np.random.default_rng(7)
    D0 = ref.standard_normal((5, 3))
    D0 /= np.linalg.norm(D0, axis=0)
    assert np.array_equal(D.atoms, D0)


def test_soup_single_atom_factors_repeated_column():
    rng = np.random.default_rng(13)
    c = rng.standard_normal(5)
    X = np.tile(c[:, None], (1, 12))
    D = learn_dictionary_soup(X, 0.05, 1, 20, seed=0)
    u = c / np.linalg.norm(c)
    assert min(np.linalg.norm(D.atoms[:, 0] - u),
               np.linalg.norm(D.atoms[:, 0] + u)) <= 1e-8
    assert np.linalg.norm(X - D.atoms @ D.codes) <= 1e-8


def test_soup_zero_lambda_full_atoms_represent_exactly():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((6, 20))
    D = learn_dictionary_soup(X, 0.0, 6, 50, seed=1)
    assert np.linalg.norm(X - D.atoms @ D.codes) <= 1e-6 * np.linalg.norm(X)


def test_soup_codes_obey_threshold():
    rng = np.random.default_rng(14)
    X = rng.standard_normal((6, 40))
    lam = 0.5
    D = learn_dictionary_soup(X, lam, 4, 10, seed=3)
    nz = D.codes[D.codes != 0.0]
    # the exact per-entry rule keeps b iff b^2 >= lam^2
    assert np.all(np.abs(nz) >= lam)


def test_soup_trace_monotone():
    rng = np.random.default_rng(15)
    X = rng.standard_normal((8, 60))
    tr = Trace()
    learn_dictionary_soup(X, 0.4, 6, 15, seed=2, trace=tr)
    costs = tr.costs()
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


def test_soup_atoms_are_unit_norm():
    rng = np.random.default_rng(16)
    X = rng.standard_normal((7, 50))
    D = learn_dictionary_soup(X, 0.3, 5, 8, seed=4)
    assert np.allclose(np.linalg.norm(D.atoms, axis=0), 1.0, atol=1e-10)


def test_dictionary_validation():
    try:
        Dictionary(np.ones((3, 2)))
    except ConfigError:
        pass
    else:
        raise AssertionError("expected ConfigError")
    ok = np.eye(3)
    try:
        Dictionary(ok, codes=np.zeros((4, 5)))
    except ShapeError:
        pass
    else:
        raise AssertionError("expected ShapeError")
