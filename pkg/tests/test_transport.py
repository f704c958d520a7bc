import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adgame.errors import DimensionError
from adgame.simplex import expected_distortion, make_distortion
from adgame.transport import emd

from oracles import emd_line, emd_tv, emd_vertices


def pmfs(k):
    return st.lists(st.floats(0.0, 1.0), min_size=k, max_size=k).filter(
        lambda v: sum(v) > 1e-3).map(lambda v: np.array(v) / sum(v))


def test_emd_self_is_zero():
    d = make_distortion("lp_power", 3, p=2)
    assert emd([0.2, 0.3, 0.5], [0.2, 0.3, 0.5], d).cost == 0.0


def test_emd_binary_hamming():
    assert emd([0.8, 0.2], [0.3, 0.7], make_distortion("hamming", 2)).cost == \
        pytest.approx(0.5, abs=1e-12)


def test_emd_single_plan():
    res = emd([1, 0, 0], [0, 0, 1], make_distortion("lp_power", 3, p=1))
    assert res.cost == pytest.approx(2, abs=1e-12)
    assert res.plan.joint[0, 2] == pytest.approx(1)


def test_emd_dimension_mismatch():
    with pytest.raises(DimensionError):
        emd([0.5, 0.5], [1 / 3, 1 / 3, 1 / 3], make_distortion("hamming", 2))


def test_zero_mass_letters_keep_plan_shape():
    res = emd([0.5, 0.0, 0.5], [0.0, 1.0, 0.0], make_distortion("hamming", 3))
    assert res.plan.joint.shape == (3, 3)
    assert res.cost == pytest.approx(1.0)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 4).flatmap(lambda k: st.tuples(pmfs(k), pmfs(k))),
       st.sampled_from(["hamming", "l1", "l2sq", "random"]), st.integers(0, 10 ** 6))
def test_emd_matches_vertex_enumeration(pq, kind, seed):
    p, q = pq
    k = len(p)
    if kind == "hamming":
        d = make_distortion("hamming", k)
    elif kind == "random":
        d = make_distortion("explicit", k, matrix=np.random.default_rng(seed).uniform(0, 3, (k, k)))
    else:
        d = make_distortion("lp_power", k, p=1 if kind == "l1" else 2)
    res = emd(p, q, d)
    assert res.cost == pytest.approx(emd_vertices(p, q, d.values), abs=1e-9)
    np.testing.assert_allclose(res.plan.x_marginal.probs, p, atol=1e-9)
    np.testing.assert_allclose(res.plan.y_marginal.probs, q, atol=1e-9)
    assert res.cost == pytest.approx(expected_distortion(res.plan, d), abs=1e-9)
    assert abs(res.diagnostics["dual_gap"]) <= 1e-9 * max(1, res.cost)


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 6).flatmap(lambda k: st.tuples(pmfs(k), pmfs(k))))
def test_emd_closed_forms(pq):
    p, q = pq
    k = len(p)
    assert emd(p, q, make_distortion("hamming", k)).cost == pytest.approx(emd_tv(p, q), abs=1e-9)
    assert emd(p, q, make_distortion("lp_power", k, p=1)).cost == \
        pytest.approx(emd_line(p, q), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 5).flatmap(lambda k: st.tuples(pmfs(k), pmfs(k), pmfs(k))))
def test_emd_metric_properties(pqr):
    p, q, r = pqr
    d = make_distortion("lp_power", len(p), p=1)
    pq, qp = emd(p, q, d).cost, emd(q, p, d).cost
    assert pq == pytest.approx(qp, abs=1e-9)
    assert emd(p, r, d).cost <= pq + emd(q, r, d).cost + 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4).flatmap(lambda k: st.tuples(pmfs(k), pmfs(k))), st.floats(0.1, 10))
def test_emd_scaling(pq, alpha):
    p, q = pq
    d = make_distortion("lp_power", len(p), p=2)
    assert emd(p, q, d.scaled(alpha)).cost == pytest.approx(alpha * emd(p, q, d).cost, abs=1e-9)
