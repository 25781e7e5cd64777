import numpy as np
import pytest

from r2n2.problems import LinearProblem
from r2n2.superstructure import (
    DIVERGENCE_GUARD,
    R2N2Config,
    R2N2Parameters,
    RolloutTrace,
    fd_params_to_direct,
    forward_pass,
    init_parameters,
    layer_forward,
    output_layer,
    param_vector,
    params_from_json,
    params_from_vector,
    params_to_json,
    rollout,
    save_parameters,
    load_parameters,
    zero_gradient,
)


def diag_problem():
    return LinearProblem(np.diag([2.0, 3.0]), np.array([1.0, 1.0]))


def test_config_validation():
    with pytest.raises(ValueError):
        R2N2Config(n=0)
    with pytest.raises(ValueError):
        R2N2Config(n=2, h=0.0)
    with pytest.raises(ValueError):
        R2N2Config(n=2, layer_mode="central")
    with pytest.raises(ValueError):
        R2N2Config(n=2, epsilon=-1e-8)


def test_parameter_shape_validation():
    with pytest.raises(ValueError):
        R2N2Parameters(theta_layers=(), theta_out=np.zeros(2))
    with pytest.raises(ValueError):
        R2N2Parameters(theta_layers=(np.zeros(2),), theta_out=np.zeros(2))
    with pytest.raises(ValueError):
        R2N2Parameters(
            theta_layers=(np.zeros(1),),
            theta_out=np.zeros(2),
            per_iteration_out=None,
            per_iteration_layers=((np.zeros(1),),),
        )
    with pytest.raises(ValueError):
        R2N2Parameters(
            theta_layers=(np.zeros(1),),
            theta_out=np.zeros(2),
            per_iteration_out=(np.zeros(3),),
        )


def test_init_parameters_bounds_and_reproducibility():
    cfg = R2N2Config(n=4)
    params = init_parameters(cfg, seed=123, scale=0.1)
    vec = param_vector(params)
    assert vec.shape == (10,)  # 1+2+3 layer coefficients + 4 output weights
    assert np.all(np.abs(vec) <= 0.1)
    np.testing.assert_array_equal(vec, param_vector(init_parameters(cfg, seed=123)))
    assert not np.array_equal(vec, param_vector(init_parameters(cfg, seed=124)))


def test_init_parameters_block_structure():
    cfg = R2N2Config(n=3)
    params = init_parameters(cfg, seed=0, num_blocks=4)
    assert params.num_blocks == 4
    assert params.per_iteration_layers is None
    untied = init_parameters(cfg, seed=0, num_blocks=2, per_iteration_layers=True)
    assert len(untied.per_iteration_layers) == 2
    with pytest.raises(ValueError):
        init_parameters(cfg, seed=0, num_blocks=0)


def test_forward_pass_hand_example():
    """n=2 direct step on a diagonal system, recomputed by hand.

    v0 = f(x0) = (1, 2); d1 = 0.5 v0; x'1 = (1.5, 2); v1 = (2, 5);
    x1 = x0 + 0.25 v0 - 0.5 v1 = (0.25, -1).
    """
    f = diag_problem()
    cfg = R2N2Config(n=2, h=1.0)
    params = R2N2Parameters(
        theta_layers=(np.array([0.5]),), theta_out=np.array([0.25, -0.5])
    )
    x0 = np.array([1.0, 1.0])
    x1, record = forward_pass(params, cfg, f, x0)
    np.testing.assert_allclose(x1, [0.25, -1.0], rtol=1e-15)
    np.testing.assert_allclose(record.subspace[0], [1.0, 2.0], rtol=1e-15)
    np.testing.assert_allclose(record.subspace[1], [2.0, 5.0], rtol=1e-15)
    np.testing.assert_allclose(record.eval_points[0], [1.5, 2.0], rtol=1e-15)
    assert record.h == 1.0


def test_layer_and_output_helpers_match_forward_pass():
    f = diag_problem()
    cfg = R2N2Config(n=2, h=1.0)
    params = R2N2Parameters(
        theta_layers=(np.array([0.5]),), theta_out=np.array([0.25, -0.5])
    )
    x0 = np.array([1.0, 1.0])
    v0 = f.evaluate(x0)
    x_prime, v1 = layer_forward(params, cfg, f, x0, [v0])
    x1 = output_layer(params, cfg, x0, [v0, v1])
    expected, _ = forward_pass(params, cfg, f, x0)
    np.testing.assert_array_equal(x1, expected)
    np.testing.assert_allclose(x_prime, [1.5, 2.0], rtol=1e-15)


def test_layer_helpers_validate_counts():
    f = diag_problem()
    cfg = R2N2Config(n=2)
    params = init_parameters(cfg, seed=1)
    v0 = f.evaluate(np.zeros(2))
    with pytest.raises(ValueError):
        layer_forward(params, cfg, f, np.zeros(2), [v0, v0])
    with pytest.raises(ValueError):
        output_layer(params, cfg, np.zeros(2), [v0])


def test_zero_parameters_are_identity():
    f = diag_problem()
    cfg = R2N2Config(n=3)
    params = params_from_vector(zero_gradient(init_parameters(cfg, seed=5)), init_parameters(cfg, seed=5))
    trace = rollout(params, cfg, f, np.array([0.3, -0.7]), T=4)
    for x in trace.iterates:
        np.testing.assert_array_equal(x, [0.3, -0.7])
    assert not trace.diverged


def test_fd_mode_matches_jacobian_action_on_linear():
    """On a linear residual the differencing layer is an exact
    Jacobian-vector product up to roundoff."""
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    f = LinearProblem(A, np.array([1.0, -1.0]))
    cfg = R2N2Config(n=2, layer_mode="forward-diff", epsilon=1e-8)
    params = R2N2Parameters(
        theta_layers=(np.array([0.7]),), theta_out=np.array([0.2, 0.4])
    )
    x0 = np.array([0.5, 0.5])
    x1, record = forward_pass(params, cfg, f, x0)
    v0 = f.evaluate(x0)
    expected_v1 = A @ (0.7 * v0)
    np.testing.assert_allclose(record.subspace[1], expected_v1, atol=1e-6)
    np.testing.assert_allclose(x1, x0 + 0.2 * v0 + 0.4 * record.subspace[1], rtol=1e-12)


def test_iterates_stay_in_krylov_space():
    """With x0 = 0 every update direction lies in the Krylov space built
    from the initial residual."""
    rng = np.random.default_rng(31)
    A = np.diag([1.0, 2.0, 3.0, 4.0, 5.0]) + 0.1 * np.ones((5, 5))
    f = LinearProblem(A, rng.standard_normal(5))
    n = 4
    cfg = R2N2Config(n=n)
    params = init_parameters(cfg, seed=7)
    x0 = np.zeros(5)
    x1, record = forward_pass(params, cfg, f, x0)
    r0 = f.evaluate(x0)
    basis = np.stack([np.linalg.matrix_power(A, k) @ r0 for k in range(n)], axis=1)
    coeffs, residual, *_ = np.linalg.lstsq(basis, x1 - x0, rcond=None)
    projected = basis @ coeffs
    np.testing.assert_allclose(projected, x1 - x0, atol=1e-8)


def test_rollout_trace_shapes_and_norms():
    f = diag_problem()
    cfg = R2N2Config(n=2)
    params = init_parameters(cfg, seed=3)
    x0 = np.array([2.0, -1.0])
    trace = rollout(params, cfg, f, x0, T=3)
    assert trace.depth == 3
    assert len(trace.iterates) == 4
    assert len(trace.residual_norms) == 4
    for x, norm in zip(trace.iterates, trace.residual_norms):
        assert norm == pytest.approx(float(np.linalg.norm(f.evaluate(x))), rel=1e-15)
    with pytest.raises(ValueError):
        rollout(params, cfg, f, x0, T=0)


def test_rollout_divergence_guard():
    f = diag_problem()
    cfg = R2N2Config(n=2)
    huge = R2N2Parameters(
        theta_layers=(np.array([1e9]),), theta_out=np.array([1e9, 1e9])
    )
    trace = rollout(huge, cfg, f, np.array([1.0, 1.0]), T=5)
    assert trace.diverged
    assert len(trace.iterates) < 6
    assert trace.residual_norms[-1] > DIVERGENCE_GUARD or not np.isfinite(
        trace.residual_norms[-1]
    )


def test_rollout_divergent_start():
    f = diag_problem()
    cfg = R2N2Config(n=2)
    params = init_parameters(cfg, seed=2)
    trace = rollout(params, cfg, f, np.array([1e13, 0.0]), T=3)
    assert trace.diverged
    assert trace.depth == 0
    assert len(trace.iterates) == 1


def test_trace_validation():
    with pytest.raises(ValueError):
        RolloutTrace(iterates=(np.zeros(2),), records=(), residual_norms=())
    with pytest.raises(ValueError):
        RolloutTrace(iterates=(np.zeros(2),), records=(), residual_norms=(-1.0,))


def test_block_reuse_identity():
    cfg = R2N2Config(n=3)
    params = init_parameters(cfg, seed=9, num_blocks=2)
    layers1, out1 = params.blocks_for(1)
    layers5, out5 = params.blocks_for(5)
    assert out1 is out5
    assert layers1 is layers5
    layers0, out0 = params.blocks_for(0)
    assert out0 is not out1
    with pytest.raises(ValueError):
        params.blocks_for(-1)


def test_per_iteration_blocks_change_the_rollout():
    f = diag_problem()
    cfg = R2N2Config(n=2)
    shared = init_parameters(cfg, seed=4)
    blocks = init_parameters(cfg, seed=4, num_blocks=3)
    t_shared = rollout(shared, cfg, f, np.array([1.0, 0.5]), T=3)
    t_blocks = rollout(blocks, cfg, f, np.array([1.0, 0.5]), T=3)
    assert not np.allclose(t_shared.iterates[-1], t_blocks.iterates[-1])


def test_fd_params_to_direct_equivalence():
    """Converted coefficients reproduce the differencing rollout through
    plain evaluations, including on a nonlinear residual."""
    from r2n2.problems import ChandrasekharProblem

    f = ChandrasekharProblem.build(c=0.9, m=5)
    cfg_fd = R2N2Config(n=3, layer_mode="forward-diff", epsilon=1e-7)
    params_fd = init_parameters(cfg_fd, seed=11)
    x0 = np.ones(5)
    trace_fd = rollout(params_fd, cfg_fd, f, x0, T=2)

    params_direct = fd_params_to_direct(params_fd, cfg_fd)
    cfg_direct = R2N2Config(n=3, h=cfg_fd.h, layer_mode="direct")
    trace_direct = rollout(params_direct, cfg_direct, f, x0, T=2)
    np.testing.assert_allclose(
        trace_direct.iterates[-1], trace_fd.iterates[-1], rtol=1e-7, atol=1e-10
    )


def test_fd_params_to_direct_with_blocks():
    f = diag_problem()
    cfg_fd = R2N2Config(n=2, layer_mode="forward-diff", epsilon=1e-7)
    params_fd = init_parameters(cfg_fd, seed=13, num_blocks=2, per_iteration_layers=True)
    x0 = np.array([0.4, -0.2])
    trace_fd = rollout(params_fd, cfg_fd, f, x0, T=3)
    params_direct = fd_params_to_direct(params_fd, cfg_fd)
    trace_direct = rollout(params_direct, R2N2Config(n=2), f, x0, T=3)
    np.testing.assert_allclose(
        trace_direct.iterates[-1], trace_fd.iterates[-1], rtol=1e-6, atol=1e-10
    )


def test_fd_params_to_direct_requires_fd_config():
    cfg = R2N2Config(n=2)
    params = init_parameters(cfg, seed=1)
    with pytest.raises(ValueError):
        fd_params_to_direct(params, cfg)


def test_param_vector_round_trip():
    cfg = R2N2Config(n=3)
    for kwargs in [
        {},
        {"num_blocks": 2},
        {"num_blocks": 2, "per_iteration_layers": True},
    ]:
        params = init_parameters(cfg, seed=6, **kwargs)
        vec = param_vector(params)
        back = params_from_vector(vec, params)
        np.testing.assert_array_equal(param_vector(back), vec)
        assert back.num_blocks == params.num_blocks
    with pytest.raises(ValueError):
        params_from_vector(np.zeros(2), init_parameters(cfg, seed=6))
    with pytest.raises(ValueError):
        params_from_vector(np.zeros(99), init_parameters(cfg, seed=6))


def test_params_json_round_trip_bit_exact(tmp_path):
    cfg = R2N2Config(n=3, h=0.05, layer_mode="forward-diff", epsilon=1e-7)
    params = init_parameters(cfg, seed=17, num_blocks=2, per_iteration_layers=True)
    text = params_to_json(params, cfg)
    back_params, back_cfg = params_from_json(text)
    assert back_cfg == cfg
    np.testing.assert_array_equal(param_vector(back_params), param_vector(params))

    path = tmp_path / "params.json"
    save_parameters(params, cfg, path)
    loaded_params, loaded_cfg = load_parameters(path)
    assert loaded_cfg == cfg
    np.testing.assert_array_equal(param_vector(loaded_params), param_vector(params))


def test_params_json_rejects_inconsistent_n():
    cfg = R2N2Config(n=2)
    params = init_parameters(cfg, seed=1)
    text = params_to_json(params, cfg).replace('"n": 2', '"n": 3')
    with pytest.raises(ValueError):
        params_from_json(text)
