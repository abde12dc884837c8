import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eotlab.blockmodel import ModelParams, build_model
from eotlab.lift import (
    GridConditional, MissingConditional, OutsideSupport, build_geometry, coarse_grain,
    kl_chain_check, label_of, lift, min_gap, rate_transfer, tv_isometry_check,
    uniform_conditionals,
)
from eotlab.schrodinger import (
    DenseCoupling, dense_solve_oracle, diagonal_coupling, kl_to_product, solve, transport_cost,
    tv_to_diagonal,
)
from eotlab.sets import pair_classes


@pytest.fixture(scope="module")
def geom3(model3):
    return build_geometry(model3)


def test_geometry_offsets(geom3):
    assert geom3.M[0] == 0.0 and geom3.M[1] == 9.0
    assert geom3.interval((1, 2)) == (6.0, 7.0)
    assert geom3.interval((2, 0)) == (9.0, 10.0)
    assert min_gap(geom3) == 2.0


def test_recursion(model18):
    g = build_geometry(model18)
    for n in range(1, 19):
        assert g.M[n] - g.M[n - 1] == 3 * (model18.m[n - 1] + 1)


def test_gap_exhaustive_default(model18):
    g = build_geometry(model18)
    lefts = sorted(g.interval(x)[0] for x in model18.labels())
    assert min(b - (a + 1) for a, b in zip(lefts, lefts[1:])) >= 2.0
    assert min_gap(g) == 2.0


@pytest.mark.parametrize("x,expected", [(6.5, (1, 2)), (8.0, None), (7.0, (1, 2)),
                                        (6.0, (1, 2)), (9.0, (2, 0)), (-0.5, None),
                                        (33.0, None), (1.0, (1, 0)), (1.5, None)])
def test_label_of(geom3, x, expected):
    got = label_of(geom3, x)
    assert (None if got is None else tuple(got)) == expected


@settings(max_examples=200)
@given(st.floats(-5.0, 40.0, allow_nan=False))
def test_label_of_consistent_with_intervals(x):
    model = build_model(ModelParams(0.1, 0.5, 1.0, 3))
    g = build_geometry(model)
    hits = [lab for lab in model.labels() if g.interval(lab)[0] <= x <= g.interval(lab)[1]]
    got = label_of(g, x)
    assert len(hits) <= 1
    assert (tuple(got) if got else None) == (hits[0] if hits else None)


def test_geometry_json(geom3):
    d = geom3.to_dict()
    assert d["M"] == [0.0, 9.0, 18.0, 33.0]
    assert d["blocks"][2]["last"] == [30.0, 31.0]


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.02])
def test_round_trip_bit_exact(model18, eps):
    p, _ = solve(model18, eps)
    lifted = lift(p, build_geometry(model18))
    back = coarse_grain(lifted)
    assert np.array_equal(back.logmass, p.logmass)
    pc = pair_classes(model18)
    for c in range(len(pc)):
        x, y = pc.representative(c)
        assert lifted.rectangle_logmass(x, y) == p.log_pair_mass(x, y)


def test_lift_marginals(model3, geom3):
    p, _ = solve(model3, 0.3)
    lifted = lift(p, geom3)
    for x in model3.labels():
        mu = model3.w[x[0] - 1] / (model3.m[x[0] - 1] + 1)
        assert lifted.first_marginal_mass(x) == pytest.approx(mu, rel=1e-11)


def test_cost_coarse_graining(model3, geom3):
    p, _ = solve(model3, 0.3)
    assert lift(p, geom3).transport_cost() == pytest.approx(transport_cost(p), rel=1e-14)
    assert lift(diagonal_coupling(model3), geom3).transport_cost() == 0.0


def test_lift_model_mismatch(model3, model18):
    p, _ = solve(model3, 0.5)
    with pytest.raises(ValueError):
        lift(p, build_geometry(model18))


def test_tv_isometry_identity(model3, geom3):
    p, _ = solve(model3, 0.5)
    assert tv_isometry_check(p, p, geom3) == (0.0, 0.0, 0.0)


@pytest.mark.parametrize("eps", [0.5, 0.1])
def test_tv_isometry_vs_diagonal(model18, eps):
    g = build_geometry(model18)
    p, _ = solve(model18, eps)
    lhs, rhs, res = tv_isometry_check(p, diagonal_coupling(model18), g)
    assert res <= 1e-12
    assert lhs == pytest.approx(tv_to_diagonal(p), rel=1e-12)


def random_dense(model, rng):
    """Random coupling with marginals mu, by Sinkhorn on a random positive kernel."""
    labels = model.labels()
    mu = np.array([model.w[n - 1] / (model.m[n - 1] + 1) for n, _ in labels])
    K = rng.random((len(labels), len(labels))) + 0.05
    u = np.ones(len(labels))
    for _ in range(500):
        v = mu / (K.T @ u)
        u = mu / (K @ v)
    P = u[:, None] * K * v[None, :]
    return DenseCoupling(model, 1.0, tuple(labels), np.log(P))


def test_tv_isometry_random_pairs(tiny):
    rng = np.random.default_rng(3)
    g = build_geometry(tiny)
    for _ in range(20):
        p, q = random_dense(tiny, rng), random_dense(tiny, rng)
        lhs, rhs, res = tv_isometry_check(p, q, g)
        assert res <= 1e-12 and lhs > 0


def test_tv_isometry_type_mismatch(tiny):
    p, _ = solve(tiny, 0.5)
    with pytest.raises(TypeError):
        tv_isometry_check(p, dense_solve_oracle(tiny, 0.5), build_geometry(tiny))


def test_kl_chain_uniform(model18):
    p, _ = solve(model18, 0.2)
    lhs, dec, res = kl_chain_check(p, uniform_conditionals(p, G=3))
    assert res <= 1e-10
    assert lhs == pytest.approx(kl_to_product(p), rel=1e-12)


@pytest.mark.parametrize("t", [0.05, 0.2, 0.45])
def test_kl_chain_checkerboard(model3, t):
    p, _ = solve(model3, 0.3)
    cb = GridConditional.checkerboard(t)
    conds = {key: cb for key in uniform_conditionals(p)}
    lhs, dec, res = kl_chain_check(p, conds)
    by_hand = (0.5 + t) * math.log(2 * (0.5 + t)) + (0.5 - t) * math.log(2 * (0.5 - t))
    assert cb.kl_to_uniform() == pytest.approx(by_hand, abs=1e-15)
    assert res <= 1e-10
    assert abs(lhs - (kl_to_product(p) + by_hand)) <= 1e-10
    assert lhs > kl_to_product(p)


def test_kl_chain_dense_single_nonuniform(tiny):
    dense = dense_solve_oracle(tiny, 0.5)
    conds = uniform_conditionals(dense, G=2)
    key = ((1, 1), (1, 2))
    conds[key] = GridConditional.checkerboard(0.3)
    lhs, dec, res = kl_chain_check(dense, conds)
    base, _, _ = kl_chain_check(dense, uniform_conditionals(dense, G=2))
    assert res <= 1e-10 and lhs > base


def test_missing_conditional(model3):
    p, _ = solve(model3, 0.5)
    conds = uniform_conditionals(p)
    conds.pop(next(iter(conds)))
    with pytest.raises(MissingConditional):
        kl_chain_check(p, conds)


@pytest.mark.parametrize("w", [np.ones((1, 1)), np.ones((2, 3)) / 6, np.full((2, 2), 0.3),
                               np.array([[0.6, -0.1], [0.25, 0.25]])])
def test_grid_conditional_validation(w):
    with pytest.raises(ValueError):
        GridConditional(w)


def test_rate_transfer(model18):
    g = build_geometry(model18)
    lo, hi = g.interval((4, 2))
    band = rate_transfer(g, lo + 0.1, hi - 0.2)
    assert (band.lo, band.hi) == (0.0, 0.0)
    x = g.interval((4, 1))[0] + 0.5
    band = rate_transfer(g, x, lo + 0.5)
    assert (band.lo, band.hi) == pytest.approx((0.8, 1.0), abs=1e-15)
    with pytest.raises(OutsideSupport):
        rate_transfer(g, hi + 1.0, x)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_rate_transfer_constant_on_intervals(s, t):
    model = build_model(ModelParams(0.1, 0.5, 1.0, 3))
    g = build_geometry(model)
    x = g.interval((3, 1))[0] + s
    y = g.interval((2, 0))[0] + t
    band = rate_transfer(g, x, y)
    ref = rate_transfer(g, g.interval((3, 1))[0], g.interval((2, 0))[0])
    assert (band.lo, band.hi) == (ref.lo, ref.hi)
