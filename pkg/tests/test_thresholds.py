import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bregsurr.errors import DomainError, InverseBracketError, TieError
from bregsurr.thresholds import (CustomThreshold, apply_threshold, concavity_number, get_rule,
                                 hard_penalty, induced_penalty, lifted_gap_min, quantile_threshold,
                                 threshold_inverse)

RULES = ("soft", "hard", "scad", "mcp", "scad(3)", "mcp(2)")
reals = st.floats(-20.0, 20.0)
lams = st.floats(0.0, 5.0)


def test_soft_and_hard_values():
    assert apply_threshold("soft", 3.0, 1.0) == 2.0
    assert apply_threshold("soft", -3.0, 1.0) == -2.0
    assert apply_threshold("hard", 3.0, 1.0) == 3.0
    assert apply_threshold("hard", 0.5, 1.0) == 0.0


def test_negative_lambda_rejected():
    with pytest.raises(DomainError):
        apply_threshold("soft", 1.0, -1.0)
    with pytest.raises(DomainError):
        hard_penalty(1.0, -0.1)


def test_unknown_rule():
    with pytest.raises(DomainError):
        get_rule("lasso")


def test_inverse_closed_forms():
    assert threshold_inverse("soft", 2.0, 1.0) == pytest.approx(3.0)
    assert threshold_inverse("hard", 2.0, 1.0) == pytest.approx(2.0)
    for name in RULES:
        assert threshold_inverse(name, 0.0, 1.3) == pytest.approx(1.3)


@pytest.mark.parametrize("name", RULES)
def test_inverse_matches_bisection(name):
    rule = get_rule(name)
    ref = CustomThreshold(rule.apply)
    u = np.linspace(0.0, 6.0, 37)
    assert np.allclose(rule.inverse(u, 1.2), ref.inverse(u, 1.2), atol=1e-9)


def test_inverse_bracket_error():
    flat = CustomThreshold(lambda t, lam: np.zeros_like(t))
    with pytest.raises(InverseBracketError):
        flat.inverse(1.0, 1.0)


def test_penalty_values():
    assert induced_penalty("soft", 2.0, 1.0) == pytest.approx(2.0)
    assert induced_penalty("hard", 1.0, 1.0) == pytest.approx(0.5)
    assert induced_penalty("hard", 0.5, 1.0) == pytest.approx(0.375)


def test_hard_penalty_values():
    assert hard_penalty(0.0, 1.0) == 0.0
    assert hard_penalty(4.0, 2.0) == pytest.approx(2.0)
    assert hard_penalty(1.0, 2.0) == pytest.approx(1.5)
    assert hard_penalty([1.0, 4.0], 2.0) == pytest.approx(3.5)


@pytest.mark.parametrize("name", RULES)
def test_penalty_matches_quadrature(name):
    rule = get_rule(name)
    ref = CustomThreshold(rule.apply)
    for t in (0.3, 1.0, 2.5, 5.0, 9.0):
        assert rule.penalty(t, 1.0) == pytest.approx(ref.penalty(t, 1.0), abs=1e-7)


def test_concavity_numbers():
    assert concavity_number("soft") == 0.0
    assert concavity_number("hard") == 1.0
    assert concavity_number("mcp(3)") == pytest.approx(1 / 3)
    assert concavity_number("scad(3.7)") == pytest.approx(1 / 2.7)


def test_custom_concavity_estimate():
    rule = CustomThreshold(get_rule("mcp(3)").apply)
    assert not rule.concavity_exact
    assert rule.concavity == pytest.approx(1 / 3, abs=1e-3)


@pytest.mark.parametrize("name", ("soft", "hard", "scad", "mcp"))
def test_lifted_gap_sharp(name):
    rule = get_rule(name)
    grid = np.linspace(-4.0, 4.0, 200)
    assert lifted_gap_min(rule, 1.0, rule.concavity, grid) >= -1e-9
    assert lifted_gap_min(rule, 1.0, rule.concavity - 0.05, grid) < 0


@pytest.mark.parametrize("name", RULES)
@given(t=reals, t2=reals, lam=lams)
def test_rule_axioms(name, t, t2, lam):
    rule = get_rule(name)
    assert rule.apply(-t, lam) == -rule.apply(t, lam)
    lo, hi = sorted((t, t2))
    assert rule.apply(lo, lam) <= rule.apply(hi, lam)
    a = abs(t)
    assert 0.0 <= rule.apply(a, lam) <= a
    if a < lam:
        assert rule.apply(a, lam) == 0.0


@pytest.mark.parametrize("name", RULES)
@given(t=reals, lam=lams)
def test_penalty_properties(name, t, lam):
    rule = get_rule(name)
    assert rule.penalty(0.0, lam) == 0.0
    p = rule.penalty(t, lam)
    assert p == pytest.approx(rule.penalty(-t, lam), abs=1e-12)
    assert p >= -1e-12
    assert p >= hard_penalty(t, lam) - 1e-9


@settings(max_examples=30)
@given(t=st.floats(-5.0, 5.0), lam=st.floats(0.1, 2.0))
def test_soft_is_prox_of_l1(t, lam):
    z = np.linspace(-6.0, 6.0, 240_001)
    brute = z[np.argmin(0.5 * (z - t) ** 2 + lam * np.abs(z))]
    assert apply_threshold("soft", t, lam) == pytest.approx(brute, abs=1e-4)


@pytest.mark.parametrize("name", ("soft", "hard", "scad", "mcp"))
def test_scaled_prox_brute_force(name):
    rule = get_rule(name)
    z = np.linspace(-8.0, 8.0, 160_001)
    pen = rule.penalty(z, 1.0)
    for a in (-5.0, -1.7, -0.2, 0.4, 1.1, 2.3, 6.0):
        for s in (0.5, 2.0):
            brute = z[np.argmin(0.5 * (z - a) ** 2 + s * pen)]
            assert rule.prox(a, 1.0, s) == pytest.approx(brute, abs=2e-4)


def test_quantile_examples():
    a = np.array([3.0, -5.0, 1.0, 2.0])
    assert quantile_threshold(a, 2).tolist() == [3.0, -5.0, 0.0, 0.0]
    assert quantile_threshold(a, 0).tolist() == [0.0] * 4
    assert quantile_threshold(a, 4).tolist() == a.tolist()


def test_quantile_tie():
    with pytest.raises(TieError) as info:
        quantile_threshold([1.0, -1.0, 0.5], 1)
    assert list(info.value.indices) == [0, 1]


def test_quantile_bad_q():
    with pytest.raises(DomainError):
        quantile_threshold([1.0], 2)


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=10), st.data())
def test_quantile_global_minimizer(values, data):
    alpha = np.array(values)
    q = data.draw(st.integers(0, alpha.size))
    try:
        z = quantile_threshold(alpha, q)
    except TieError:
        return
    best = min(0.5 * float(np.sum(np.delete(alpha, list(S)) ** 2))
               for S in itertools.combinations(range(alpha.size), q))
    assert np.count_nonzero(z) <= q
    assert 0.5 * float(np.sum((z - alpha) ** 2)) == pytest.approx(best, abs=1e-9)
