import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ipva import design
from ipva.design import POINT3, DesignPoint
from ipva.errors import ConstraintViolation
from ipva.road import RoadModel


def test_point3_is_inside_the_box(p):
    assert POINT3.violations(p) == []
    assert 0.5 < POINT3.eta() < 0.9


def test_box_violations_are_reported(p):
    bad = DesignPoint(0.117, 0.02, 0.225)
    assert any("eta" in v for v in bad.violations(p))
    with pytest.raises(ConstraintViolation):
        design.evaluate_design(p, bad, [0], 1.0)
    with pytest.raises(ConstraintViolation):
        design.evaluate_benchmark(p, p.ce_from_xi(1.0), [0], 1.0)


def test_zero_damping_harvests_nothing(p):
    m = design.evaluate_design(p, DesignPoint(0.117, 0.0897, 0.0), [0, 1], 20.0)
    assert m.avg_power == 0.0 and m.rms_accel > 0


def test_evaluation_is_deterministic(p):
    a = design.evaluate_design(p, POINT3, [3, 4], 20.0)
    b = design.evaluate_design(p, POINT3, [3, 4], 20.0)
    assert a == b


# -- Pareto extraction ---------------------------------------------------------------

def test_front_examples():
    np.testing.assert_array_equal(design.pareto_mask([1, 2], [1, 0.5]), [False, True])
    np.testing.assert_array_equal(design.pareto_mask([1, 2], [1, 1]), [False, True])
    np.testing.assert_array_equal(design.pareto_mask([1, 2], [0.5, 1]), [True, True])


points = st.lists(st.tuples(st.floats(0, 100), st.floats(0, 10)), min_size=1, max_size=30)


@settings(max_examples=200)
@given(points, st.randoms())
def test_front_is_non_dominated_and_order_free(pts, rnd):
    P = np.array([a for a, _ in pts])
    S = np.array([b for _, b in pts])
    mask = design.pareto_mask(P, S)
    assert mask.any()
    for i in np.flatnonzero(mask):
        assert not np.any((P >= P[i]) & (S <= S[i]) & ((P > P[i]) | (S < S[i])))
    for i in np.flatnonzero(~mask):
        assert np.any(mask & (P >= P[i]) & (S <= S[i]))
    perm = list(range(len(pts)))
    rnd.shuffle(perm)
    np.testing.assert_array_equal(design.pareto_mask(P[perm], S[perm]), mask[perm])
    # idempotent: the front of the front is itself
    assert design.pareto_mask(P[mask], S[mask]).all()


def test_small_grid_front_trades_power_for_comfort(p):
    grid = design.default_grid(p, 3, 3, 3)
    res = design.grid_search(p, grid, seeds=[0], duration=100.0, skip=100)
    front = [res.metrics[res.points.index(d)] for d in res.front]
    rms = [m.rms_accel for m in front]
    pw = [m.avg_power for m in front]
    assert rms == sorted(rms)
    assert all(b > a for a, b in zip(pw, pw[1:]))
    assert res.on_front.sum() == len(res.front)


# -- closed form --------------------------------------------------------------------

def test_closed_form_power_without_mechanical_damping(p):
    q = p.with_design(cm=0.0)
    road = RoadModel()
    for ce in (0.01, 0.1, 0.225):
        P, _ = design.closed_form_linear(q, ce, road)
        assert P == pytest.approx(math.pi * road.V * road.Gr * q.kt, rel=1e-12)


def test_closed_form_speed_scaling(p):
    P1, s1 = design.closed_form_linear(p, 0.1, RoadModel(V=20.0))
    P2, s2 = design.closed_form_linear(p, 0.1, RoadModel(V=40.0))
    assert P2 == pytest.approx(2 * P1) and s2 == pytest.approx(math.sqrt(2) * s1)


def test_closed_form_undamped_raises(p):
    with pytest.raises(ZeroDivisionError):
        design.closed_form_linear(p.with_design(cm=0.0), 0.0)


def _draw(rng, p):
    return p.with_design(Ms=rng.uniform(150, 400), Mus=rng.uniform(20, 60), ks=rng.uniform(2e4, 9e4),
                         kt=rng.uniform(1e5, 3e5), cm=rng.uniform(0, 400), Jr=rng.uniform(2e-5, 5e-4),
                         R=rng.uniform(0.01, 0.06))


def test_polynomial_matches_quadrature(p):
    rng = np.random.default_rng(2024)
    for _ in range(20):
        q = _draw(rng, p)
        ce = rng.uniform(0.01, 1.0)
        P, s = design.closed_form_linear(q, ce)
        Pq, sq = design.spectral_linear(q, ce)
        assert P == pytest.approx(Pq, rel=1e-6)
        assert s == pytest.approx(sq, rel=1e-6)


def test_published_a1_is_flagged_by_quadrature(p):
    _, s_pub = design.closed_form_linear(p, 0.225, printed=True)
    _, s_q = design.spectral_linear(p, 0.225)
    assert not s_pub == pytest.approx(s_q, rel=1e-3)


def test_closed_form_agrees_with_short_simulation(p):
    road = RoadModel()
    for q in (p, p.with_design(cm=0.0)):
        m = design.evaluate_benchmark(q, 0.225, range(6), 500.0, road, skip=1000)
        P, s = design.closed_form_linear(q, 0.225, road)
        assert m.avg_power == pytest.approx(P, rel=0.10)
        assert m.rms_accel == pytest.approx(s, rel=0.10)


def test_benchmark_front_without_mechanical_damping(p):
    q = p.with_design(cm=0.0)
    res = design.linear_benchmark_optimum(q, [0.1, 0.16, 0.225], seeds=[0, 1], duration=300.0, skip=1000)
    pw = res.power()
    assert np.ptp(pw) / np.mean(pw) < 0.1
    # with power flat, the front is chosen on comfort, i.e. the most damped setting
    assert res.front[0].ce == pytest.approx(0.225)
