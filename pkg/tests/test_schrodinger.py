import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eotlab.blockmodel import ModelParams, build_model, entropy_H
from eotlab.schrodinger import (
    NonConvergence, Potentials, SolverConfig, TooLarge, aggregate_dense, coupling_mass,
    cross_ratio_residual, dense_solve_oracle, diagonal_coupling, expand_to_labels,
    factorization_residual, j_functional, kl_to_product, od_log_residuals, solve,
    swap_residuals, transport_cost, tv_between, tv_lumped_vs_dense, tv_to_diagonal,
)
from eotlab.sets import (
    Complement, Diagonal, Everything, OffDiagonalHigh, SinglePair, Union, pair_classes,
)

from oracles import linear_sinkhorn_mp

TINY_EPS = [0.5, 0.1, 0.02]


@pytest.fixture(scope="module")
def tiny_solutions(tiny):
    return {eps: solve(tiny, eps)[0] for eps in TINY_EPS}


@pytest.fixture(scope="module")
def solved18(model18):
    return {eps: solve(model18, eps)[0] for eps in (1.0, 0.5, 0.2, 1 / 18, 0.02)}


@pytest.mark.parametrize("eps", TINY_EPS)
def test_tiny_matches_dense(tiny, tiny_solutions, eps):
    dense = dense_solve_oracle(tiny, eps)
    assert tv_lumped_vs_dense(tiny_solutions[eps], dense) <= 1e-8


@pytest.mark.parametrize("eps", [0.5, 0.1])
def test_dense_matches_high_precision(tiny, eps):
    labels, P = linear_sinkhorn_mp(0.1, 1.0, [1, 16], [2, 2], [1, 1 / 8], eps, iters=400)
    dense = dense_solve_oracle(tiny, eps)
    assert [tuple(x) for x in labels] == list(dense.labels)
    assert np.max(np.abs(dense.P - P)) <= 1e-12


@pytest.mark.parametrize("eps", TINY_EPS)
def test_dense_marginals(tiny, eps):
    dense = dense_solve_oracle(tiny, eps)
    mu = np.array([tiny.w[n - 1] / (tiny.m[n - 1] + 1) for n, _ in dense.labels])
    assert np.max(np.abs(dense.P.sum(axis=1) - mu)) <= 1e-10
    assert np.max(np.abs(dense.P.sum(axis=0) - mu)) <= 1e-10


def test_dense_relabel_invariance(tiny):
    dense = dense_solve_oracle(tiny, 0.5)
    idx = {x: k for k, x in enumerate(dense.labels)}
    # swap high indices 1 and 2 of block 2
    perm = [idx[(n, {1: 2, 2: 1}.get(i, i) if n == 2 else i)] for n, i in dense.labels]
    P = dense.P
    assert np.max(np.abs(P[np.ix_(perm, perm)] - P)) <= 1e-10


def test_lumped_expansion_matches_dense_entrywise(tiny, tiny_solutions):
    dense = dense_solve_oracle(tiny, 0.5)
    expanded = expand_to_labels(tiny_solutions[0.5])
    assert np.max(np.abs(expanded.P - dense.P)) <= 1e-10
    assert np.allclose(aggregate_dense(dense), np.exp(tiny_solutions[0.5].class_logmass()),
                       atol=1e-10, rtol=0)


def test_potentials_symmetric(model18):
    coupling, pot = solve(model18, 0.5)
    assert np.max(np.abs(pot.logf - pot.logg)) <= 1e-12


@pytest.mark.parametrize("eps", [1.0, 0.5, 0.2, 1 / 18, 0.02])
def test_exact_identities(solved18, eps):
    p = solved18[eps]
    assert p.marginal_defect() <= 1e-12
    assert np.max(np.abs(od_log_residuals(p))) <= 1e-9
    assert np.max(np.abs(swap_residuals(p))) <= 1e-9
    assert factorization_residual(p) <= 1e-12
    assert abs(math.exp(p.total_logmass()) - 1) <= 1e-10


def test_od_ratio_literal(solved18):
    p = solved18[0.2]
    for n in (1, 9, 18):
        o, d = p.log_pair_mass((n, 1), (n, 2)), p.log_pair_mass((n, 1), (n, 1))
        assert o - d == pytest.approx(-1.0 / 0.2, abs=1e-9)


def test_class_logmass_finite(solved18):
    for p in solved18.values():
        assert np.all(np.isfinite(p.logmass))


def test_uniqueness_from_random_start(model18):
    rng = np.random.default_rng(7)
    init = Potentials(rng.normal(size=36) * 3, rng.normal(size=36) * 3)
    a, _ = solve(model18, 0.2)
    b, _ = solve(model18, 0.2, init=init)
    assert tv_between(a, b) <= 1e-9


def test_nonconvergence_reports_defect(model3):
    with pytest.raises(NonConvergence) as info:
        solve(model3, 0.5, SolverConfig(max_iter=1))
    assert info.value.max_iter == 1 and info.value.defect > 1e-12 and info.value.eps == 0.5


@pytest.mark.parametrize("kw", [dict(marginal_tol=0), dict(max_iter=0)])
def test_solver_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_eps_must_be_positive(model3):
    with pytest.raises(ValueError):
        solve(model3, 0.0)


def test_dense_guard():
    big = build_model(ModelParams(0.1, 0.5, 1.0, 10))
    with pytest.raises(TooLarge):
        dense_solve_oracle(big, 0.5)


def test_mass_partition(solved18):
    p = solved18[0.2]
    for desc in (Diagonal(), OffDiagonalHigh(), OffDiagonalHigh(5)):
        m1, _ = coupling_mass(p, desc)
        m2, _ = coupling_mass(p, Complement(desc))
        assert abs(m1 + m2 - 1) <= 1e-10


def test_F_n_mass_formula(model18, solved18):
    p = solved18[1 / 18]
    for n in (1, 10, 18):
        m = model18.m[n - 1]
        _, lm = coupling_mass(p, OffDiagonalHigh(n))
        assert lm == pytest.approx(math.log(m * (m - 1)) + p.log_pair_mass((n, 1), (n, 2)),
                                   abs=1e-12)


def test_single_pair_mass(model18, solved18):
    p = solved18[0.02]
    _, lm = coupling_mass(p, SinglePair((18, 1), (18, 2)))
    assert lm == p.log_pair_mass((18, 1), (18, 2))


def test_whole_space_mass(solved18):
    for p in solved18.values():
        assert abs(coupling_mass(p, Everything())[1]) <= 1e-12


def test_logmass_survives_underflow(solved18):
    # cross-block masses at eps = 0.02 are far below the double range
    p = solved18[0.02]
    lm = p.log_pair_mass((17, 1), (18, 1))
    assert lm < -1e5 and np.isfinite(lm)


@settings(max_examples=30, deadline=None)
@given(st.sets(st.integers(1, 18), min_size=1, max_size=6))
def test_union_additivity_in_log_domain(blocks):
    model = build_model(ModelParams(0.1, 0.5, 1.0, 18))
    p = _cached_solve(model, 0.1)
    parts = [OffDiagonalHigh(n) for n in sorted(blocks)]
    _, whole = coupling_mass(p, Union(tuple(parts)))
    logs = [coupling_mass(p, q)[1] for q in parts]
    assert whole == pytest.approx(np.logaddexp.reduce(logs), rel=1e-12)


_CACHE = {}


def _cached_solve(model, eps):
    key = (model.N, eps)
    if key not in _CACHE:
        _CACHE[key] = solve(model, eps)[0]
    return _CACHE[key]


@pytest.mark.parametrize("N", [2, 5, 18])
@pytest.mark.parametrize("eps", [1.0, 0.2, 0.05])
def test_j_functional_below_entropy_bound(N, eps):
    model = build_model(ModelParams(0.1, 0.5, 1.0, N))
    p, _ = solve(model, eps)
    H = entropy_H(model)
    assert j_functional(p) <= eps * H + 1e-9
    assert tv_to_diagonal(p) <= eps * H / model.a


def test_diagonal_coupling_functionals(model18):
    d = diagonal_coupling(model18)
    assert kl_to_product(d) == pytest.approx(entropy_H(model18), rel=1e-13)
    assert transport_cost(d) == 0.0
    assert tv_to_diagonal(d) == 0.0


def test_tv_decreasing_on_grid(model18):
    tvs = [tv_to_diagonal(solve(model18, e)[0]) for e in (0.4, 0.2, 0.1, 0.05)]
    assert all(b <= a + 1e-12 for a, b in zip(tvs, tvs[1:]))


def test_cross_ratio_degenerate_is_exact(solved18):
    p = solved18[0.2]
    assert cross_ratio_residual(p, (4, 1), (4, 1), (4, 2), (9, 0)) == 0.0


def test_cross_ratio_random_quadruples(model18, solved18):
    rng = np.random.default_rng(11)

    def label():
        n = int(rng.integers(1, 19))
        return (n, int(rng.integers(0, model18.m[n - 1] + 1)))

    for eps in (0.5, 1 / 18):
        p = solved18[eps]
        worst = max(cross_ratio_residual(p, label(), label(), label(), label())
                    for _ in range(100))
        assert worst <= 1e-8


def test_cross_ratio_reproduces_od(model18, solved18):
    p = solved18[0.2]
    n = 7
    assert cross_ratio_residual(p, (n, 1), (n, 2), (n, 1), (n, 2)) <= 1e-8


@pytest.mark.parametrize("eps", TINY_EPS)
def test_cross_ratio_dense_cross_block(tiny, eps):
    dense = dense_solve_oracle(tiny, eps)
    lp = lambda x, y: dense.logP[dense.index(x), dense.index(y)]
    from eotlab.blockmodel import label_cost as c
    x1, x2, y1, y2 = (1, 1), (2, 0), (2, 2), (1, 0)
    lhs = lp(x1, y1) + lp(x2, y2) + (c(tiny, x1, y1) + c(tiny, x2, y2)) / eps
    rhs = lp(x1, y2) + lp(x2, y1) + (c(tiny, x1, y2) + c(tiny, x2, y1)) / eps
    assert abs(lhs - rhs) <= 1e-8


def test_to_dict_and_csv(tiny, tiny_solutions):
    p = tiny_solutions[0.5]
    d = p.to_dict()
    assert d["eps"] == 0.5 and len(d["classes"]) == len(pair_classes(tiny))
    assert len(p.csv_rows()) == len(pair_classes(tiny))
