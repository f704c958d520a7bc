import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adgame.errors import DimensionError, ValidationError
from adgame.gendiv import gen_divergence, gen_divergence_empirical
from adgame.simplex import expected_distortion, kl_divergence, make_distortion
from adgame.transport import emd
from adgame.typeclasses import Composition

import oracles

HAM2 = make_distortion("hamming", 2)
HAM3 = make_distortion("hamming", 3)
L1_3 = make_distortion("lp_power", 3, p=1)
L2SQ3 = make_distortion("lp_power", 3, p=2)


def interior_pmfs(k, lo=0.02):
    return st.lists(st.floats(lo, 1.0), min_size=k, max_size=k).filter(
        lambda v: sum(v) > 1e-3).map(lambda v: np.array(v) / sum(v))


def check_invariants(res, py, p, d, delta):
    c = res.coupling
    np.testing.assert_allclose(c.y_marginal.probs, py, atol=1e-9)
    assert expected_distortion(c, d) <= delta + 1e-9
    np.testing.assert_allclose(res.argmin_px.probs, c.x_marginal.probs, atol=1e-12)
    assert res.value == pytest.approx(kl_divergence(res.argmin_px, p), abs=1e-9)
    assert res.diagnostics["primal_dual_gap"] <= 1e-9 * max(1.0, res.value)


def test_binary_example():
    res = gen_divergence([0.5, 0.5], [0.9, 0.1], HAM2, 0.2)
    expected = kl_divergence([0.7, 0.3], [0.9, 0.1])
    assert res.value == pytest.approx(expected, abs=1e-9)
    assert res.value == pytest.approx(0.1537, abs=1e-4)
    np.testing.assert_allclose(res.argmin_px.probs, [0.7, 0.3], atol=1e-6)
    check_invariants(res, [0.5, 0.5], [0.9, 0.1], HAM2, 0.2)


@pytest.mark.parametrize("d", [HAM3, L1_3, L2SQ3])
def test_zero_delta_is_plain_kl(d):
    py, p = [0.2, 0.5, 0.3], [0.4, 0.4, 0.2]
    assert gen_divergence(py, p, d, 0.0).value == pytest.approx(kl_divergence(py, p), abs=1e-9)


@pytest.mark.parametrize("d", [HAM3, L1_3, L2SQ3])
def test_large_delta_reaches_source(d):
    py, p = [0.2, 0.5, 0.3], [0.4, 0.4, 0.2]
    res = gen_divergence(py, p, d, emd(p, py, d).cost + 1e-12)
    assert res.value == pytest.approx(0.0, abs=1e-9)
    np.testing.assert_allclose(res.argmin_px.probs, p, atol=1e-4)


def test_unreachable_support_is_inf():
    res = gen_divergence([0.5, 0.5], [1.0, 0.0], HAM2, 0.2)
    assert res.value == math.inf
    assert "unreachable" in res.diagnostics["reason"]


def test_boundary_of_support_is_finite():
    res = gen_divergence([0.5, 0.5], [1.0, 0.0], HAM2, 0.5)
    assert res.value == pytest.approx(0.0, abs=1e-9)


def test_input_validation():
    with pytest.raises(DimensionError):
        gen_divergence([0.5, 0.5], [0.2, 0.3, 0.5], HAM2, 0.1)
    with pytest.raises(ValidationError):
        gen_divergence([0.5, 0.5], [0.5, 0.5], HAM2, -0.1)


@settings(max_examples=60, deadline=None)
@given(interior_pmfs(2), interior_pmfs(2), st.floats(0.0, 0.6))
def test_binary_hamming_closed_form(py, p, delta):
    res = gen_divergence(py, p, HAM2, delta)
    assert res.value == pytest.approx(oracles.gendiv_binary_hamming(py, p, delta), abs=1e-9)
    check_invariants(res, py, p, HAM2, delta)


@pytest.mark.parametrize("seed", range(6))
@pytest.mark.parametrize("d,emd_fn", [(HAM3, oracles.emd_tv), (L1_3, oracles.emd_line)])
def test_ternary_grid_oracle(seed, d, emd_fn):
    rng = np.random.default_rng(seed)
    py = rng.dirichlet(np.ones(3))
    p = rng.dirichlet(np.ones(3)) * 0.9 + 0.1 / 3
    delta = float(rng.uniform(0.02, 0.5) * emd_fn(py, p))
    res = gen_divergence(py, p, d, delta)
    assert res.value == pytest.approx(oracles.gendiv_grid_k3(py, p, delta, emd_fn), abs=1e-6)
    check_invariants(res, py, p, d, delta)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 3).flatmap(lambda k: st.tuples(interior_pmfs(k), interior_pmfs(k))),
       st.floats(0.0, 0.5), st.floats(0.0, 0.5))
def test_monotone_in_delta(pair, a, b):
    py, p = pair
    d = HAM2 if len(py) == 2 else L2SQ3
    lo, hi = sorted([a, b])
    assert gen_divergence(py, p, d, lo).value >= gen_divergence(py, p, d, hi).value - 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 3).flatmap(
    lambda k: st.tuples(interior_pmfs(k), interior_pmfs(k), interior_pmfs(k))),
       st.floats(0.0, 0.5), st.floats(0.05, 0.95))
def test_convex_in_py(triple, delta, lam):
    py1, py2, p = triple
    d = HAM2 if len(p) == 2 else L2SQ3
    mix = gen_divergence(lam * py1 + (1 - lam) * py2, p, d, delta).value
    ends = lam * gen_divergence(py1, p, d, delta).value \
        + (1 - lam) * gen_divergence(py2, p, d, delta).value
    assert mix <= ends + 1e-8


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 3).flatmap(lambda k: st.tuples(interior_pmfs(k, 0.0), interior_pmfs(k))),
       st.floats(0.0, 0.8))
def test_zero_level_set_is_emd_ball(pair, delta):
    py, p = pair
    d = HAM2 if len(p) == 2 else L1_3
    dist = emd(p, py, d).cost
    if abs(dist - delta) < 1e-6:
        return
    val = gen_divergence(py, p, d, delta).value
    assert (val <= 1e-9) == (dist <= delta)


# -- empirical version ---------------------------------------------------------------------

def test_empirical_example():
    val = gen_divergence_empirical(Composition((1, 1)), [0.9, 0.1], HAM2, 0.5)
    assert val == pytest.approx(math.log(1 / 0.9), abs=1e-12)


def test_empirical_zero_delta():
    t = Composition((3, 1, 2))
    assert gen_divergence_empirical(t, [0.5, 0.3, 0.2], L2SQ3, 0) == \
        pytest.approx(kl_divergence(t.pmf, [0.5, 0.3, 0.2]), abs=1e-15)


def test_empirical_uniform_large_delta():
    assert gen_divergence_empirical(Composition((2, 0)), [0.5, 0.5], HAM2, 1.0) == 0.0


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 6])
@pytest.mark.parametrize("p,delta", [([0.9, 0.1], 0.25), ([0.3, 0.7], 1 / 3), ([0.6, 0.4], 0.5)])
def test_empirical_matches_sequence_brute_force(n, p, delta):
    for y in oracles.sequences(2, n):
        got = gen_divergence_empirical(Composition.of(y, 2), p, HAM2, delta)
        assert got == pytest.approx(oracles.empirical_gendiv(y, p, HAM2.values.tolist(), delta),
                                    abs=1e-12)


@pytest.mark.parametrize("py,p,d,delta", [
    ((0.5, 0.5), (0.9, 0.1), HAM2, 0.2),
    ((0.3, 0.7), (0.8, 0.2), HAM2, 0.15),
    ((0.2, 0.3, 0.5), (0.5, 0.3, 0.2), L2SQ3, 0.3),
])
def test_empirical_converges(py, p, d, delta):
    target = gen_divergence(py, p, d, delta).value
    errs = []
    for n in (10, 20, 40, 80):
        t = Composition(tuple(int(round(n * v)) for v in py))
        val = gen_divergence_empirical(t, p, d, delta)
        assert val >= target - 1e-9
        errs.append(val - target)
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 0.02
