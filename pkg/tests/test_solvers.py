import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bregsurr.errors import ConfigError, DomainError, SolverError, TieError
from bregsurr.gbf import DirectionalFunction, half_sq_norm, quadratic_form
from bregsurr.losses import make_loss, spectral_norm
from bregsurr.solvers import (DcSvmProblem, GradientProblem, LlaProblem, MirrorProblem,
                              QuantileTispProblem, RunConfig, SigmoidalProblem, TispProblem,
                              dc_step, fixed_point_check, gradient_step, kl_divergence, lla_step,
                              mirror_step, nmf_mur_step, opt_error_average, quantile_tisp_step,
                              run, run_nmf, sigmoidal_step, tisp_step)


def lasso_oracle(X, y, lam, iters=20_000):
    """FISTA for ``||y - X b||^2 / 2 + lam ||b||_1``."""
    L = np.linalg.norm(X, 2) ** 2
    b = z = np.zeros(X.shape[1])
    t = 1.0
    for _ in range(iters):
        g = z - X.T @ (X @ z - y) / L
        nb = np.sign(g) * np.maximum(np.abs(g) - lam / L, 0.0)
        nt = (1 + np.sqrt(1 + 4 * t * t)) / 2
        z = nb + (t - 1) / nt * (nb - b)
        b, t = nb, nt
    return b


def sparse_instance(seed=0, n=40, p=30):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    beta = np.zeros(p)
    beta[:3] = [4.0, -3.0, 2.0]
    return X, X @ beta + rng.normal(size=n), beta


# --- gradient and mirror steps -------------------------------------------------

def test_gradient_step_fixed_at_stationary():
    prob = GradientProblem(half_sq_norm(3), 2.0)
    assert np.array_equal(gradient_step(prob, np.zeros(3)), np.zeros(3))


def test_gradient_step_hand_value():
    loss = make_loss("squared", np.array([[1.0]]), np.array([1.0]))
    assert gradient_step(GradientProblem(loss, 1.0), np.zeros(1))[0] == pytest.approx(1.0)


def test_two_gradient_steps():
    prob = GradientProblem(half_sq_norm(1), 2.0)
    tr = run(prob, [1.0], RunConfig(max_iter=2, tol=-1))
    assert tr.final_beta[0] == pytest.approx(0.25)


def test_mirror_step_values():
    flat = DirectionalFunction.from_gradient(lambda b: 0.0, lambda b: np.zeros_like(b), 1)
    assert mirror_step(MirrorProblem(flat, 3.0), [2.0])[0] == 2.0
    lin = DirectionalFunction.from_gradient(lambda b: 3.0 * b[0], lambda b: np.array([3.0]), 1)
    assert mirror_step(MirrorProblem(lin, 3.0), [2.0])[0] == pytest.approx(2.0 / np.e)


def test_mirror_is_multiplicative_rule():
    rng = np.random.default_rng(1)
    X, b = rng.uniform(0.2, 1.0, (12, 5)), rng.uniform(0.5, 1.5, 5)
    y = rng.uniform(1.0, 3.0, 12)
    rho = 100.0
    eta = X @ b
    expected = b * np.exp(-(1 / rho) * (((eta - y) / eta ** 2) @ X))
    got = mirror_step(MirrorProblem(make_loss("itakura_saito", X, y), rho), b)
    assert np.allclose(got, expected, rtol=1e-13)


def test_mirror_rejects_nonpositive_start():
    prob = MirrorProblem(half_sq_norm(2), 1.0)
    with pytest.raises(DomainError):
        run(prob, [1.0, 0.0])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_mirror_keeps_positivity(seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0.1, 1.0, (10, 4))
    loss = make_loss("itakura_saito", X, rng.uniform(0.5, 2.0, 10))
    tr = run(MirrorProblem(loss, 50.0), rng.uniform(0.2, 1.0, 4),
             RunConfig(max_iter=50, record_iterates=True))
    assert all(np.all(b > 0) for b in tr.iterates)


# --- thresholding ---------------------------------------------------------------

def test_tisp_identity_above_threshold():
    X = np.eye(3)
    b = np.array([2.0, -3.0, 5.0])
    prob = TispProblem(make_loss("squared", X, X @ b), "hard", 1.0, 1.0)
    assert np.array_equal(tisp_step(prob, b), b)


def test_tisp_zero_design():
    X = np.zeros((4, 3))
    prob = TispProblem(make_loss("squared", X, np.ones(4)), "soft", 1.0, 2.0)
    b = np.array([1.0, 0.2, -3.0])
    assert np.allclose(tisp_step(prob, b), np.sign(b) * np.maximum(2 * np.abs(b) - 1, 0) / 2)


def test_tisp_scale_below_norm_rejected():
    X = np.eye(2) * 3
    with pytest.raises(ConfigError):
        TispProblem(make_loss("squared", X, np.ones(2)), "hard", 1.0, 1.0)


def test_tisp_soft_fixed_point_satisfies_kkt():
    X, y, _ = sparse_instance()
    s = spectral_norm(X)
    lam = 0.5
    tr = run(TispProblem(make_loss("squared", X, y), "soft", lam, s), np.zeros(30),
             RunConfig(max_iter=20_000, tol=1e-13))
    b = tr.final_beta
    corr = X.T @ (y - X @ b)
    on = b != 0
    assert np.all(np.abs(corr[~on]) <= s * lam + 1e-6)
    assert np.allclose(corr[on], s * lam * np.sign(b[on]), atol=1e-6)
    assert np.allclose(b, lasso_oracle(X, y, s * lam), atol=1e-6)


def test_quantile_full_q_is_gradient_step():
    X, y, _ = sparse_instance(1)
    loss = make_loss("squared", X, y)
    s = spectral_norm(X)
    b = np.random.default_rng(2).normal(size=30)
    out = quantile_tisp_step(QuantileTispProblem(loss, 30, s), b)
    assert np.allclose(out, b - loss.gradient(b) / s ** 2)


def test_quantile_stationary_sparse():
    X = np.eye(4)
    b = np.array([1.0, 0.0, 2.0, 0.0])
    prob = QuantileTispProblem(make_loss("squared", X, b), 2, 1.0)
    assert np.array_equal(quantile_tisp_step(prob, b), b)


def test_quantile_orthogonal_recovers_support():
    Q, _ = np.linalg.qr(np.random.default_rng(3).normal(size=(10, 10)))
    bs = np.zeros(10)
    bs[:2] = [3.0, 2.0]
    prob = QuantileTispProblem(make_loss("squared", Q, Q @ bs), 2, 1.0)
    assert np.flatnonzero(quantile_tisp_step(prob, np.zeros(10))).tolist() == [0, 1]


def test_quantile_rejects_infeasible_start():
    prob = QuantileTispProblem(make_loss("squared", np.eye(3), np.ones(3)), 1, 1.0)
    with pytest.raises(DomainError):
        run(prob, np.ones(3))


def test_quantile_tie_propagates():
    prob = QuantileTispProblem(make_loss("squared", np.eye(3), np.array([1.0, -1.0, 0.2])), 1, 1.0)
    with pytest.raises(TieError):
        quantile_tisp_step(prob, np.zeros(3))


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.integers(0, 8))
def test_quantile_support_size(seed, q):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 8))
    prob = QuantileTispProblem(make_loss("squared", X, rng.normal(size=12)), q,
                               spectral_norm(X))
    z = rng.normal(size=8)
    z[rng.random(8) < 0.3] = 0.0
    out = prob.step_beta(z)
    center = z - prob.loss.gradient(z) / prob.scale ** 2
    assert np.count_nonzero(out) == min(q, np.count_nonzero(center))


# --- LLA ------------------------------------------------------------------------

def test_lla_soft_weights_match_lasso():
    X, y, _ = sparse_instance(4, n=20, p=30)
    s = spectral_norm(X)
    lam = 0.3
    prob = LlaProblem(make_loss("squared", X, y), "soft", lam, s)
    assert np.allclose(lla_step(prob, np.zeros(30)), lasso_oracle(X, y, s * lam), atol=1e-6)


def test_lla_zero_weights_least_squares():
    X, y, _ = sparse_instance(5, n=50, p=5)
    s = spectral_norm(X)
    prob = LlaProblem(make_loss("squared", X, y), "hard", 0.01, s)
    big = np.full(5, 10.0)
    assert np.all(prob.weights(big) == 0.0)
    assert np.allclose(lla_step(prob, big), np.linalg.lstsq(X, y, rcond=None)[0], atol=1e-8)


def test_lla_hard_weights_formula():
    X, y, _ = sparse_instance(6)
    s, lam = spectral_norm(X), 2.0
    prob = LlaProblem(make_loss("squared", X, y), "hard", lam, s)
    b = np.linspace(-0.2, 0.2, 30)
    assert np.allclose(prob.weights(b), np.maximum(lam - s * np.abs(b), 0.0))


def test_lla_tukey_decreases_objective():
    X, y, _ = sparse_instance(7)
    y[:3] += 40.0
    loss = make_loss("tukey", X, y, residuals=y)
    prob = LlaProblem(loss, "hard", 1.0, spectral_norm(X))
    tr = run(prob, np.zeros(30), RunConfig(max_iter=30))
    assert tr.is_monotone()


# --- DC -------------------------------------------------------------------------

def test_dc_large_lambda_zero():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(3, 4))
    prob = DcSvmProblem(X, np.array([1.0, -1.0, 1.0]), lam=100.0)
    assert np.allclose(dc_step(prob, np.zeros(4)), 0.0)


def test_dc_step_matches_grid_oracle():
    X = np.array([[1.0, 2.0], [2.0, 0.5], [-1.0, -1.5], [-2.0, -0.3]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    lam = 0.4
    prob = DcSvmProblem(X, y, lam)
    anchor = np.array([0.5, 0.1])
    ind = prob.indicator(anchor)
    g = np.linspace(-3.0, 3.0, 601)
    B1, B2 = np.meshgrid(g, g, indexing="ij")
    grid = np.stack([B1.ravel(), B2.ravel()], axis=1)
    hinge = np.maximum(1.0 - y * (grid @ X.T), 0.0).sum(axis=1)
    obj = hinge + lam * np.abs(grid).sum(axis=1) - lam * grid @ ind
    b = dc_step(prob, anchor)
    val = np.maximum(1.0 - y * (X @ b), 0.0).sum() + lam * np.abs(b).sum() - lam * b @ ind
    assert val <= obj.min() + 1e-12
    assert val >= obj.min() - 0.05


def test_dc_objective_nonincreasing():
    rng = np.random.default_rng(9)
    X = rng.normal(size=(30, 20))
    y = np.sign(X[:, 0] * 3 + X[:, 1] + rng.normal(size=30))
    for lam in (0.0, 1.0):
        tr = run(DcSvmProblem(X, y, lam), rng.uniform(0, 1, 20), RunConfig(max_iter=15))
        assert tr.is_monotone()


def test_dc_fixed_point_stationary_along_axes():
    rng = np.random.default_rng(10)
    X = rng.normal(size=(20, 6))
    y = np.sign(X[:, 0] + 0.3 * rng.normal(size=20))
    prob = DcSvmProblem(X, y, 0.5)
    tr = run(prob, np.zeros(6), RunConfig(max_iter=50, tol=0.0))
    assert tr.converged
    b, f = tr.final_beta, prob.objective(tr.final_beta)
    for e in np.eye(6):
        for sgn in (1.0, -1.0):
            assert prob.objective(b + 1e-7 * sgn * e) >= f - 1e-12


# --- sigmoidal and NMF ------------------------------------------------------------

def test_sigmoidal_fixed_when_exact():
    from scipy.special import expit
    rng = np.random.default_rng(11)
    X, b = rng.normal(size=(15, 3)), rng.normal(size=3)
    prob = SigmoidalProblem(make_loss("sigmoidal", X, expit(X @ b)))
    assert np.allclose(sigmoidal_step(prob, b), b, atol=1e-14)


def test_sigmoidal_scalar_hand_value():
    x, y, b = 2.0, 0.9, 0.3
    u = 1 / (1 + np.exp(-x * b))
    B = x * x * (abs(0.1 * y) + 0.08)
    expected = b + x * (u - u * u) * (y - u) / B
    prob = SigmoidalProblem(make_loss("sigmoidal", np.array([[x]]), np.array([y])))
    assert sigmoidal_step(prob, np.array([b]))[0] == pytest.approx(expected, abs=1e-12)


def test_sigmoidal_surrogate_decreases():
    rng = np.random.default_rng(12)
    X = rng.normal(size=(40, 4))
    prob = SigmoidalProblem(make_loss("sigmoidal", X, rng.uniform(0, 1, 40)))
    b = rng.normal(size=4)
    nb = sigmoidal_step(prob, b)
    assert prob.surrogate(nb, b) <= prob.surrogate(b, b) + 1e-12


def test_nmf_exact_factorization_fixed():
    rng = np.random.default_rng(13)
    W, H = rng.uniform(0.5, 1.5, (4, 2)), rng.uniform(0.5, 1.5, (2, 5))
    W1, H1 = nmf_mur_step(W, H, W @ H, 5.0)
    assert np.allclose(W1, W, rtol=1e-12) and np.allclose(H1, H, rtol=1e-12)


def test_nmf_rank_one_kl_decreases():
    rng = np.random.default_rng(14)
    X = np.outer([1.0, 2.0], [3.0, 0.5])
    tr = run_nmf(X, rng.uniform(0.5, 1.5, (2, 1)), rng.uniform(0.5, 1.5, (1, 2)), 20.0, 100)
    assert tr.objectives[-1] < tr.objectives[0]
    assert tr.objectives[-1] == pytest.approx(kl_divergence(X, X), abs=1e-3)


def test_nmf_rejects_nonpositive():
    with pytest.raises(DomainError):
        nmf_mur_step(np.ones((2, 1)), np.zeros((1, 2)), np.ones((2, 2)), 1.0)


# --- engine ---------------------------------------------------------------------

def test_gd_monotone_on_quadratic():
    rng = np.random.default_rng(15)
    A = rng.normal(size=(6, 6))
    Q = A @ A.T + np.eye(6)
    tr = run(GradientProblem(quadratic_form(Q), np.linalg.eigvalsh(Q)[-1]),
             rng.normal(size=6), RunConfig(max_iter=100))
    assert tr.is_monotone()


def test_max_iter_zero_snapshot():
    tr = run(GradientProblem(half_sq_norm(2), 1.0), [1.0, 2.0], RunConfig(max_iter=0))
    assert tr.n_steps == 0 and len(tr.objectives) == 1


def test_tisp_recovers_support_on_sparse_regression_data():
    from bregsurr.experiments import ExperimentConfig, _sparse_data, _sparse_lambda, stream
    cfg = ExperimentConfig(experiment="sparse-reg").resolved()
    X, y, bs, _ = _sparse_data(cfg, stream(cfg.seed, 1))
    prob = TispProblem(make_loss("squared", X, y), "hard", _sparse_lambda(cfg), spectral_norm(X))
    tr = run(prob, np.zeros(cfg.p), RunConfig(max_iter=500))
    assert np.flatnonzero(tr.final_beta).tolist() == [0, 1]


def test_fixed_point_zero_under_hard_tisp():
    rng = np.random.default_rng(16)
    X = rng.normal(size=(20, 10))
    y = rng.normal(size=20) * 0.1
    s = spectral_norm(X)
    lam = np.abs(X.T @ y).max() / s
    rep = fixed_point_check(TispProblem(make_loss("squared", X, y), "hard", lam, s), np.zeros(10))
    assert rep.is_fixed and rep.residual == 0.0


def test_fixed_point_converged_lasso():
    X, y, _ = sparse_instance(17)
    s = spectral_norm(X)
    prob = TispProblem(make_loss("squared", X, y), "soft", 0.5, s)
    b = run(prob, np.zeros(30), RunConfig(max_iter=50_000, tol=1e-14)).final_beta
    assert fixed_point_check(prob, b, 1e-8).is_fixed


def test_fixed_point_random_point():
    X, y, _ = sparse_instance(18)
    prob = TispProblem(make_loss("squared", X, y), "soft", 0.5)
    rep = fixed_point_check(prob, np.random.default_rng(0).normal(size=30))
    assert not rep.is_fixed and rep.residual > 1e-3


def test_opt_error_average_range_and_stationary():
    prob = GradientProblem(half_sq_norm(2), 1.0)
    tr = run(prob, [0.0, 0.0], RunConfig(max_iter=5, tol=-1))
    assert opt_error_average(tr, 4) == 0.0
    with pytest.raises(IndexError):
        opt_error_average(tr, 5)


def test_gradient_terms_two_forms_agree():
    rng = np.random.default_rng(19)
    loss = make_loss("glm_logistic", rng.normal(size=(30, 5)), rng.integers(0, 2, 30).astype(float))
    tr = run(GradientProblem(loss, loss.smoothness_bound), np.zeros(5), RunConfig(max_iter=40))
    for T in (0, 10, 39):
        assert opt_error_average(tr, T) == pytest.approx(opt_error_average(tr, T, "special"),
                                                         abs=1e-9)


def test_step_failure_carries_partial_trace():
    X = np.array([[1.0, -1.0]])
    prob = MirrorProblem(make_loss("itakura_saito", X, np.array([1.0])), 0.01)
    with pytest.raises(SolverError) as info:
        run(prob, np.array([2.0, 0.5]), RunConfig(max_iter=10))
    assert info.value.trace is not None


def families(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(25, 8))
    y = X[:, :2] @ np.array([2.0, -1.0]) + rng.normal(size=25)
    s = spectral_norm(X)
    Xp = rng.uniform(0.2, 1.0, (25, 8))
    yield GradientProblem(make_loss("squared", X, y), s * s), rng.normal(size=8)
    yield MirrorProblem(make_loss("itakura_saito", Xp, rng.uniform(1, 2, 25)), 50.0), \
        rng.uniform(0.5, 1.0, 8)
    yield TispProblem(make_loss("squared", X, y), "hard", 1.0, s), rng.normal(size=8)
    yield TispProblem(make_loss("huber", X, y, delta=1.0), "scad", 0.5, s), rng.normal(size=8)
    yield QuantileTispProblem(make_loss("squared", X, y), 3, s), \
        np.concatenate([rng.normal(size=3), np.zeros(5)])
    yield LlaProblem(make_loss("squared", X, y), "mcp", 0.5, s), rng.normal(size=8)
    yield DcSvmProblem(X, np.sign(y), 0.7), rng.uniform(0, 1, 8)
    yield SigmoidalProblem(make_loss("sigmoidal", X, rng.uniform(0, 1, 25))), rng.normal(size=8)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_surrogate_touches_objective(seed):
    for prob, b in families(seed):
        assert prob.surrogate(b, b) == pytest.approx(prob.objective(b), abs=1e-10)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_bound_and_monotonicity_all_families(seed):
    for prob, b in families(seed):
        tr = run(prob, b, RunConfig(max_iter=40))
        assert tr.check_bound(), prob.tag
        assert tr.is_monotone(), prob.tag
