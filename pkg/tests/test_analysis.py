"""Tests for residual-reduction metrics, coefficient extraction, and
convergence certification."""

import numpy as np
import pytest

from r2n2.analysis import (
    AnalysisError,
    algorithm_operator,
    certify_convergence,
    certify_matrix,
    convergence_trace_stats,
    fit_loglog_slope,
    relative_performance,
    residual_reduction,
    residual_reduction_nk,
    theta_to_zeta,
)
from r2n2.problems import LinearProblem, builtin_matrix
from r2n2.superstructure import (
    R2N2Config,
    R2N2Parameters,
    forward_pass,
    init_parameters,
    rollout,
)


class Identity:
    """f(x) = x, so the residual norm is just ||x||."""

    dim = 2

    def evaluate(self, x):
        return np.asarray(x, dtype=float)

    def jacobian(self, x):
        return np.eye(2)


def zero_params(n):
    return R2N2Parameters(
        theta_layers=tuple(np.zeros(j) for j in range(1, n)),
        theta_out=np.zeros(n),
    )


def test_residual_reduction_hand_values():
    prob = LinearProblem(A=np.diag([2.0, 1.0]), b=np.array([2.0, 1.0]))
    # exact solution removes the whole initial residual norm ||b|| = sqrt(5)
    assert residual_reduction(prob, np.array([1.0, 1.0])) == pytest.approx(
        np.sqrt(5.0), rel=1e-14
    )
    # the zero guess leaves the residual at -b, same norm, zero reduction
    assert residual_reduction(prob, np.zeros(2)) == pytest.approx(0.0, abs=1e-14)


def test_residual_reduction_nk_hand_values():
    f = Identity()
    got = residual_reduction_nk(f, np.array([3.0, 4.0]), np.array([0.0, 1.0]))
    assert got == pytest.approx(4.0, rel=1e-14)


def test_relative_performance_ratio():
    assert relative_performance(2.0, 4.0) == pytest.approx(0.5)
    assert relative_performance(3.0, 2.0) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        relative_performance(1.0, 0.0)


def test_zeta_single_layer_hand_formula():
    cfg = R2N2Config(n=1, h=1.0)
    params = R2N2Parameters(theta_layers=(), theta_out=np.array([-0.3]))
    np.testing.assert_allclose(theta_to_zeta(params, cfg), [-0.3], rtol=1e-14)
    # the step scale multiplies the single coefficient once
    cfg_half = R2N2Config(n=1, h=0.5)
    np.testing.assert_allclose(theta_to_zeta(params, cfg_half), [-0.15], rtol=1e-14)


def test_zeta_two_layer_hand_formula():
    a, p, q = 0.7, 0.2, -0.5
    params = R2N2Parameters(
        theta_layers=(np.array([a]),), theta_out=np.array([p, q])
    )
    # one inner step: residual map r -> r + h(p+q) A r + h^2 q a A^2 r
    cfg = R2N2Config(n=2, h=1.0)
    np.testing.assert_allclose(theta_to_zeta(params, cfg), [p + q, q * a], rtol=1e-14)
    cfg2 = R2N2Config(n=2, h=2.0)
    np.testing.assert_allclose(
        theta_to_zeta(params, cfg2), [2.0 * (p + q), 4.0 * q * a], rtol=1e-14
    )


def test_zeta_probe_check_passes_and_preserves_values():
    cfg = R2N2Config(n=3, h=1.0)
    params = init_parameters(cfg, seed=11)
    plain = theta_to_zeta(params, cfg)
    probed = theta_to_zeta(params, cfg, probe_dim=6)
    np.testing.assert_array_equal(plain, probed)


def test_zeta_rejects_unsupported_parameterizations():
    cfg = R2N2Config(n=2, h=1.0)
    params = init_parameters(cfg, seed=0)
    with pytest.raises(ValueError):
        theta_to_zeta(params, R2N2Config(n=2, h=1.0, layer_mode="forward-diff"))
    blocked = init_parameters(cfg, seed=0, num_blocks=2)
    with pytest.raises(ValueError):
        theta_to_zeta(blocked, cfg)
    with pytest.raises(ValueError):
        theta_to_zeta(params, cfg, probe_dim=1)


def test_zero_parameters_give_identity_operator():
    A = builtin_matrix("A1")
    op = algorithm_operator(zero_params(2), R2N2Config(n=2, h=1.0), A)
    np.testing.assert_array_equal(op.matrix, np.eye(5))
    cert = certify_convergence(op)
    assert cert.norm == pytest.approx(1.0, abs=1e-12)
    assert not cert.convergent
    assert cert.marginal
    assert "not convergent" in str(cert)
    assert "marginal" in str(cert)


def test_operator_matrix_matches_hand_polynomial():
    a, p, q = 0.7, 0.2, -0.5
    params = R2N2Parameters(
        theta_layers=(np.array([a]),), theta_out=np.array([p, q])
    )
    A = builtin_matrix("A2")
    op = algorithm_operator(params, R2N2Config(n=2, h=1.0), A)
    expected = np.eye(5) + (p + q) * A + (q * a) * (A @ A)
    np.testing.assert_allclose(op.matrix, expected, rtol=0, atol=1e-13)


def test_operator_predicts_forward_pass_residual():
    cfg = R2N2Config(n=4, h=1.0)
    params = init_parameters(cfg, seed=3)
    A = builtin_matrix("A1")
    op = algorithm_operator(params, cfg, A)
    rng = np.random.default_rng(5)
    for _ in range(10):
        b = rng.uniform(-5.0, 5.0, size=5)
        x0 = rng.uniform(-1.0, 1.0, size=5)
        prob = LinearProblem(A=A, b=b)
        r0 = prob.evaluate(x0)
        x1, _ = forward_pass(params, cfg, prob, x0)
        r1 = prob.evaluate(x1)
        np.testing.assert_allclose(
            op.matrix @ r0, r1, rtol=0, atol=1e-10 * np.linalg.norm(r0)
        )


def test_certify_contractive_and_divergent_maps():
    A = builtin_matrix("A1")
    cfg = R2N2Config(n=1, h=1.0)
    # r -> (I - A) r contracts because A1's spectrum sits inside (0, 2)
    richardson = R2N2Parameters(theta_layers=(), theta_out=np.array([-1.0]))
    cert = certify_matrix(richardson, cfg, A)
    assert cert.convergent and not cert.marginal
    assert cert.norm == pytest.approx(np.linalg.norm(np.eye(5) - A, 2), rel=1e-10)
    # doubling the step pushes the largest eigenvalue past the unit disk
    overshoot = R2N2Parameters(theta_layers=(), theta_out=np.array([-2.0]))
    cert2 = certify_matrix(overshoot, cfg, A)
    assert not cert2.convergent
    assert cert2.norm == pytest.approx(np.linalg.norm(np.eye(5) - 2.0 * A, 2), rel=1e-10)


def test_certify_matrix_matches_two_step_path():
    cfg = R2N2Config(n=3, h=1.0)
    params = init_parameters(cfg, seed=9)
    A = builtin_matrix("A3")
    direct = certify_matrix(params, cfg, A)
    staged = certify_convergence(algorithm_operator(params, cfg, A))
    assert direct.norm == staged.norm
    assert direct.convergent == staged.convergent
    np.testing.assert_array_equal(direct.zeta, staged.zeta)


def test_convergence_trace_stats_mean_min_max():
    cfg = R2N2Config(n=2, h=1.0)
    params = zero_params(2)
    x0 = np.zeros(2)
    traces = [
        rollout(params, cfg, LinearProblem(A=np.eye(2), b=np.array([1.0, 0.0])), x0, T=3),
        rollout(params, cfg, LinearProblem(A=np.eye(2), b=np.array([3.0, 0.0])), x0, T=3),
    ]
    # zero coefficients leave every iterate at x0, so each trace is flat
    stats = convergence_trace_stats(traces)
    assert stats.count == 2
    np.testing.assert_allclose(stats.mean, [2.0] * 4, rtol=1e-14)
    np.testing.assert_allclose(stats.minimum, [1.0] * 4, rtol=1e-14)
    np.testing.assert_allclose(stats.maximum, [3.0] * 4, rtol=1e-14)


def test_convergence_trace_stats_rejects_ragged_and_empty():
    cfg = R2N2Config(n=2, h=1.0)
    params = zero_params(2)
    prob = LinearProblem(A=np.eye(2), b=np.array([1.0, 0.0]))
    short = rollout(params, cfg, prob, np.zeros(2), T=2)
    long = rollout(params, cfg, prob, np.zeros(2), T=3)
    with pytest.raises(ValueError, match="depth"):
        convergence_trace_stats([short, long])
    with pytest.raises(ValueError):
        convergence_trace_stats([])


def test_fit_loglog_slope_recovers_powers():
    x = np.array([0.1, 0.2, 0.4, 0.8])
    assert fit_loglog_slope(x, 5.0 * x**3) == pytest.approx(3.0, abs=1e-12)
    assert fit_loglog_slope(x, 2.0 / x) == pytest.approx(-1.0, abs=1e-12)


def test_fit_loglog_slope_validation():
    with pytest.raises(ValueError):
        fit_loglog_slope([1.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        fit_loglog_slope([1.0], [1.0])
    with pytest.raises(ValueError):
        fit_loglog_slope([1.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        fit_loglog_slope([1.0, 2.0], [1.0, -1.0])
