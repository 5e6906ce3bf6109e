import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bregsurr.errors import DomainError, NonFiniteEvaluation
from bregsurr.gbf import (DirectionalFunction, anchored_gbf, compose_affine, eval_comb_gap,
                          eval_gbf, eval_gbf_via_integral, finite_diff_ddir, gbf, half_sq_norm,
                          l1_norm, linear_combination, negative_entropy, quadratic_form)

vec3 = st.lists(st.floats(-3.0, 3.0), min_size=3, max_size=3).map(np.array)
pos3 = st.lists(st.floats(0.1, 3.0), min_size=3, max_size=3).map(np.array)


def cubic(c, Q):
    """``sum c_i b_i^3 + b'Qb/2`` with an analytic gradient."""
    return DirectionalFunction.from_gradient(
        lambda b: float(c @ b ** 3 + 0.5 * b @ Q @ b),
        lambda b: 3.0 * c * b ** 2 + Q @ b, len(c))


def log_sum_exp(d):
    def value(b):
        m = b.max()
        return float(m + np.log(np.exp(b - m).sum()))

    def grad(b):
        e = np.exp(b - b.max())
        return e / e.sum()

    return DirectionalFunction.from_gradient(value, grad, d)


def test_half_sq_norm_unit_vector():
    assert gbf(half_sq_norm(2), [1.0, 0.0], [0.0, 0.0]) == pytest.approx(0.5)


def test_equal_points_give_zero():
    v = eval_gbf(log_sum_exp(3), [1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert v.forward == 0.0 and v.backward == 0.0


def test_abs_value_hand_computed():
    # |2| - |-1| - sign(-1) * 3
    assert gbf(l1_norm(1), [2.0], [-1.0]) == pytest.approx(4.0)


def test_symmetric_is_mean():
    v = eval_gbf(negative_entropy(2), [1.0, 2.0], [0.5, 3.0])
    assert v.symmetric == (v.forward + v.backward) / 2.0


def test_non_finite_is_reported():
    bad = DirectionalFunction(value=lambda b: np.inf, ddir=lambda b, h: 0.0, dim=1)
    with pytest.raises(NonFiniteEvaluation):
        gbf(bad, [1.0], [0.0])


def test_dimension_mismatch():
    with pytest.raises(DomainError):
        gbf(half_sq_norm(2), [1.0], [0.0, 0.0])


def test_integral_exact_for_quadratic():
    assert eval_gbf_via_integral(half_sq_norm(2), [1.0, 0.0], [0.0, 0.0], 64) == \
        pytest.approx(0.5, abs=1e-10)


def test_integral_zero_at_equal_points():
    assert eval_gbf_via_integral(log_sum_exp(2), [1.0, 2.0], [1.0, 2.0]) == 0.0


def test_integral_matches_cubic():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(3, 3))
    psi = cubic(rng.normal(size=3), A @ A.T)
    b, g = rng.normal(size=3), rng.normal(size=3)
    assert eval_gbf_via_integral(psi, b, g) == pytest.approx(gbf(psi, b, g), abs=1e-8)


def test_comb_gap_endpoints():
    psi = log_sum_exp(3)
    a, b = np.array([1.0, -1.0, 0.0]), np.array([0.5, 2.0, 1.0])
    assert eval_comb_gap(psi, a, b, 0.0) == 0.0
    assert eval_comb_gap(psi, a, b, 1.0) == 0.0


def test_comb_gap_rejects_theta():
    with pytest.raises(DomainError):
        eval_comb_gap(half_sq_norm(1), [0.0], [1.0], 1.5)


@given(vec3, vec3, st.floats(0.0, 1.0))
def test_comb_gap_quadratic(a, b, theta):
    expected = theta * (1 - theta) * 0.5 * float(np.sum((a - b) ** 2))
    assert eval_comb_gap(half_sq_norm(3), a, b, theta) == pytest.approx(expected, abs=1e-9)


@given(vec3, vec3, st.floats(0.0, 1.0))
def test_comb_gap_relation(a, b, theta):
    psi = log_sum_exp(3)
    mid = theta * a + (1 - theta) * b
    rhs = (1 - theta) * gbf(psi, b, a) - gbf(psi, mid, a)
    assert eval_comb_gap(psi, a, b, theta) == pytest.approx(rhs, abs=1e-9)


def test_finite_diff_linear_exact():
    c = np.array([1.0, -2.0, 0.5])
    h = np.array([0.3, 0.1, -1.0])
    assert finite_diff_ddir(lambda b: float(c @ b), np.zeros(3), h, eps=0.5) == \
        pytest.approx(float(c @ h), abs=1e-12)


def test_finite_diff_quadratic():
    b, h = np.array([1.0, 2.0]), np.array([0.5, -1.0])
    fd = finite_diff_ddir(lambda x: 0.5 * float(x @ x), b, h, eps=1e-6)
    assert abs(fd - float(b @ h)) < 1e-5


def test_finite_diff_abs_right_derivative():
    assert finite_diff_ddir(lambda x: float(abs(x[0])), [0.0], [1.0]) == pytest.approx(1.0)


def test_finite_diff_rejects_eps():
    with pytest.raises(DomainError):
        finite_diff_ddir(lambda x: 0.0, [0.0], [1.0], eps=0.0)


@given(vec3, vec3, st.floats(-2, 2), st.floats(-2, 2))
def test_linearity(b, g, a1, a2):
    psi, phi = log_sum_exp(3), half_sq_norm(3)
    lhs = gbf(linear_combination(a1, psi, a2, phi), b, g)
    assert lhs == pytest.approx(a1 * gbf(psi, b, g) + a2 * gbf(phi, b, g), abs=1e-9)


@given(vec3, vec3)
def test_affine_composition(b, g):
    rng = np.random.default_rng(0)
    X, c = rng.normal(size=(4, 3)), rng.normal(size=4)
    psi = log_sum_exp(4)
    lhs = gbf(compose_affine(psi, X, c), b, g)
    assert lhs == pytest.approx(gbf(psi, X @ b + c, X @ g + c), abs=1e-9)


@given(pos3, pos3)
def test_convex_nonnegative(b, g):
    assert gbf(negative_entropy(3), b, g) >= -1e-10
    assert gbf(log_sum_exp(3), b, g) >= -1e-10
    assert gbf(l1_norm(3), b, g) >= -1e-10


def test_concave_goes_negative():
    concave = DirectionalFunction.from_gradient(lambda b: -float(b @ b), lambda b: -2 * b, 2)
    assert gbf(concave, [1.0, 0.0], [0.0, 0.0]) < 0


@given(vec3, vec3, vec3)
def test_strong_idempotence(alpha, b, g):
    psi = log_sum_exp(3)
    assert gbf(anchored_gbf(psi, alpha), b, g) == pytest.approx(gbf(psi, b, g), abs=1e-9)


@given(vec3, vec3)
def test_integral_form_equivalence(b, g):
    psi = log_sum_exp(3)
    assert eval_gbf_via_integral(psi, b, g) == pytest.approx(gbf(psi, b, g), abs=1e-7)


@given(vec3, vec3, st.floats(0.01, 10.0))
def test_positive_homogeneity(b, h, a):
    for psi in (l1_norm(3), log_sum_exp(3)):
        assert psi.ddir(b, a * h) == pytest.approx(a * psi.ddir(b, h), rel=1e-12, abs=1e-12)


@settings(max_examples=30)
@given(vec3, vec3)
def test_gradient_pairing(b, h):
    rng = np.random.default_rng(1)
    A = rng.normal(size=(3, 3))
    psi = quadratic_form(A @ A.T, rng.normal(size=3))
    assert psi.ddir(b, h) == pytest.approx(float(psi.gradient(b) @ h), abs=1e-8)
    fd = finite_diff_ddir(psi.value, b, h, eps=1e-7)
    assert fd == pytest.approx(psi.ddir(b, h), rel=1e-5, abs=1e-5)


def test_exact_and_generic_paths_agree():
    rng = np.random.default_rng(2)
    b, g = rng.uniform(0.5, 2, 4), rng.uniform(0.5, 2, 4)
    psi = negative_entropy(4)
    assert gbf(psi, b, g, use_exact=False) == pytest.approx(gbf(psi, b, g), abs=1e-12)
