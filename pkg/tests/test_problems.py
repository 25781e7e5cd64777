import numpy as np
import pytest

from r2n2.problems import (
    BUILTIN_MATRIX_IDS,
    ChandrasekharPoleError,
    ChandrasekharProblem,
    Dataset,
    LinearProblem,
    ProblemInstance,
    VanDerPolProblem,
    builtin_b_tilde,
    builtin_matrix,
    chandrasekhar_matrix,
    chandrasekhar_residual,
    dataset_from_json,
    dataset_to_json,
    embed_problem,
    gen_chandrasekhar_dataset,
    gen_ivp_dataset,
    gen_linear_matrix,
    gen_uniform_symmetric,
    make_linear_dataset,
    sample_rhs,
    split_indices,
    spectrum_shift,
    vdp_jacobian,
    vdp_rhs,
)
from r2n2.linalg import haar_orthogonal


def test_builtin_ids_and_shapes():
    assert BUILTIN_MATRIX_IDS == tuple(f"A{i}" for i in range(1, 20))
    for mid in BUILTIN_MATRIX_IDS:
        A = builtin_matrix(mid)
        assert A.shape == (5, 5)
        # entries are tabulated to 6 decimals, so symmetry holds to rounding
        np.testing.assert_allclose(A, A.T, atol=2e-6)


def test_builtin_matrix_returns_copy():
    A = builtin_matrix("A1")
    A[0, 0] = -99.0
    assert builtin_matrix("A1")[0, 0] != -99.0


def test_builtin_rhs_center_frozen_norm():
    # frozen from the shipped table; guards against silent data edits
    b = builtin_b_tilde()
    assert float(np.linalg.norm(b)) == pytest.approx(8.746127061520545, abs=1e-12)
    assert b[0] == pytest.approx(2.48357, abs=1e-9)


def test_builtin_a1_spot_entries():
    A1 = builtin_matrix("A1")
    assert A1[0, 0] == pytest.approx(1.392232, abs=1e-9)
    assert A1[0, 1] == pytest.approx(0.152829, abs=1e-9)


def test_builtin_a1_positive_definite():
    eigs = np.linalg.eigvalsh(builtin_matrix("A1"))
    assert eigs.min() > 0.5


def test_spectrum_variants_are_diagonal_shifts_of_a1():
    """A4-A7 differ from A1 only on the diagonal, by scaled copies of
    the published shift vector."""
    A1 = builtin_matrix("A1")
    shift = spectrum_shift()
    np.testing.assert_allclose(shift, [0.5, 0.4, 0.3, 0.2, 0.1], atol=1e-12)
    factors = {"A4": -1.0, "A5": 0.5, "A6": 1.3, "A7": 2.5}
    for mid, factor in factors.items():
        delta = builtin_matrix(mid) - A1
        np.testing.assert_allclose(delta, np.diag(factor * shift), atol=1e-9)


def test_gen_linear_matrix_structure():
    lambdas = [1.0, 2.0, 3.0]
    A = gen_linear_matrix(3, sigma=0.3, lambdas=lambdas, seed=5)
    np.testing.assert_allclose(A, A.T, atol=1e-15)
    # G^T G is PSD, so eigenvalues sit at or above min(lambdas) shifted by PSD part
    assert np.linalg.eigvalsh(A).min() > 0.0
    np.testing.assert_array_equal(A, gen_linear_matrix(3, 0.3, lambdas, seed=5))
    with pytest.raises(ValueError):
        gen_linear_matrix(3, 0.3, [1.0, 2.0], seed=5)


def test_gen_uniform_symmetric_is_psd():
    A = gen_uniform_symmetric(4, sigma=2.0, seed=9)
    np.testing.assert_allclose(A, A.T, atol=1e-15)
    assert np.linalg.eigvalsh(A).min() >= -1e-12


def test_sample_rhs_bounds_and_shape():
    center = np.array([1.0, -2.0])
    draws = sample_rhs(center, width=0.5, count=200, seed=3)
    assert draws.shape == (200, 2)
    assert np.all(np.abs(draws - center) <= 0.5)
    np.testing.assert_array_equal(draws, sample_rhs(center, 0.5, 200, seed=3))
    with pytest.raises(ValueError):
        sample_rhs(center, 0.5, 0, seed=3)


def test_chandrasekhar_matrix_hand_values():
    # m=2: nodes 0.25, 0.75; entry (j,i) = c mu_j / (2 m (mu_j + mu_i))
    K = chandrasekhar_matrix(0.9, 2)
    expected = np.array([[0.1125, 0.05625], [0.16875, 0.1125]])
    np.testing.assert_allclose(K, expected, rtol=1e-14)


def test_chandrasekhar_residual_hand_values():
    K = chandrasekhar_matrix(0.9, 2)
    r = chandrasekhar_residual(K, np.array([1.0, 1.0]))
    # K @ (1,1) = (0.16875, 0.28125); residual = 1 - 1/(1 - that)
    np.testing.assert_allclose(
        r, [-0.2030075187969924, -0.391304347826087], rtol=1e-14
    )


def test_chandrasekhar_pole_raises():
    # m=1, c=0.8: kernel is the scalar 0.2, so x=5 puts the denominator at 0
    K = chandrasekhar_matrix(0.8, 1)
    assert K[0, 0] == pytest.approx(0.2, abs=1e-15)
    with pytest.raises(ChandrasekharPoleError) as exc_info:
        chandrasekhar_residual(K, np.array([5.0]))
    assert exc_info.value.components == (0,)


def test_chandrasekhar_jacobian_matches_finite_differences():
    problem = ChandrasekharProblem.build(c=0.875, m=6)
    rng = np.random.default_rng(17)
    x = 1.0 + 0.1 * rng.standard_normal(6)
    J = problem.jacobian(x)
    step = 1e-7
    for i in range(6):
        e = np.zeros(6)
        e[i] = step
        col = (problem.evaluate(x + e) - problem.evaluate(x - e)) / (2 * step)
        np.testing.assert_allclose(J[:, i], col, atol=1e-6)


def test_vdp_hand_values():
    x = np.array([1.0, 3.0])
    np.testing.assert_allclose(vdp_rhs(2.0, x), [3.0, -1.0], rtol=1e-15)
    np.testing.assert_allclose(
        vdp_jacobian(2.0, x), [[0.0, 1.0], [-13.0, 0.0]], rtol=1e-15
    )
    with pytest.raises(ValueError):
        vdp_rhs(2.0, np.array([1.0, 2.0, 3.0]))


def test_linear_problem_evaluate_and_jacobian():
    A = np.array([[2.0, 1.0], [1.0, 3.0]])
    b = np.array([1.0, 0.0])
    p = LinearProblem(A, b)
    np.testing.assert_allclose(p.evaluate(np.array([1.0, 1.0])), [2.0, 4.0])
    np.testing.assert_array_equal(p.jacobian(np.zeros(2)), A)
    with pytest.raises(ValueError):
        LinearProblem(A, np.ones(3))
    with pytest.raises(ValueError):
        LinearProblem(np.ones((2, 3)), b)


def test_problem_instance_validates_x0():
    p = VanDerPolProblem(damping=1.5)
    with pytest.raises(ValueError):
        ProblemInstance(p, np.zeros(3))


def test_split_indices_partition_and_floor():
    train, test = split_indices(10, seed=1)
    assert len(train) == 7 and len(test) == 3
    assert sorted(train + test) == list(range(10))
    # 0.7 * 9 floors to 6
    train9, test9 = split_indices(9, seed=1)
    assert len(train9) == 6 and len(test9) == 3
    assert split_indices(10, seed=1) == (train, test)
    with pytest.raises(ValueError):
        split_indices(0, seed=1)


def test_dataset_rejects_bad_split():
    p = VanDerPolProblem(damping=1.5)
    inst = ProblemInstance(p, np.zeros(2))
    with pytest.raises(ValueError):
        Dataset(instances=(inst, inst), train_indices=(0,), test_indices=(0,), seed=0)


def test_make_linear_dataset_shares_rhs_across_matrices():
    ds = make_linear_dataset(["A1", "A2"], num_rhs=4, width=2.0, seed=11)
    assert len(ds.instances) == 8
    by_label = {inst.label: inst for inst in ds.instances}
    for i in range(4):
        np.testing.assert_array_equal(
            by_label[f"A1/b{i}"].problem.b, by_label[f"A2/b{i}"].problem.b
        )
    for inst in ds.instances:
        np.testing.assert_array_equal(inst.x0, np.zeros(5))
        assert inst.h == 1.0
    assert len(ds.train) == 5 and len(ds.test) == 3


def test_make_linear_dataset_is_deterministic():
    a = make_linear_dataset(["A1"], num_rhs=3, width=2.0, seed=8)
    b = make_linear_dataset(["A1"], num_rhs=3, width=2.0, seed=8)
    for x, y in zip(a.instances, b.instances):
        np.testing.assert_array_equal(x.problem.b, y.problem.b)
    assert a.train_indices == b.train_indices


def test_gen_chandrasekhar_dataset_grid():
    ds = gen_chandrasekhar_dataset(ms=[3, 5], cs=[0.9, 0.95], samples_per=2, seed=4)
    assert len(ds.instances) == 8
    dims = sorted({inst.problem.m for inst in ds.instances})
    assert dims == [3, 5]
    for inst in ds.instances:
        assert inst.x0.shape == (inst.problem.m,)
        # x0 ~ 1 + N(0, 0.2^2) stays well inside (0, 2) at these sizes
        assert np.all(np.abs(inst.x0 - 1.0) < 1.0)


def test_gen_ivp_dataset_ranges():
    ds = gen_ivp_dataset(count=12, seed=6)
    assert len(ds.instances) == 12
    steps = [inst.h for inst in ds.instances]
    np.testing.assert_allclose(steps, np.linspace(0.01, 0.1, 12), rtol=1e-12)
    for inst in ds.instances:
        assert 1.35 <= inst.problem.damping <= 1.65
        assert -4.0 <= inst.x0[0] <= -3.0
        assert 0.0 <= inst.x0[1] <= 2.0


def test_embed_problem_preserves_solution():
    """The embedded system's solution is the rotation of the padded one."""
    A = builtin_matrix("A1")
    b = builtin_b_tilde()
    small = LinearProblem(A, b, label="A1")
    Q = haar_orthogonal(15, seed=2)
    big = embed_problem(small, Q)
    assert big.dim == 15
    x_small = np.linalg.solve(A, b)
    x_pad = np.zeros(15)
    x_pad[:5] = x_small
    np.testing.assert_allclose(big.evaluate(Q @ x_pad), 0.0, atol=1e-9)
    assert "embedded15" in big.label


def test_embed_problem_rejects_bad_q():
    small = LinearProblem(np.eye(2), np.ones(2))
    with pytest.raises(ValueError):
        embed_problem(small, np.ones((3, 3)))
    with pytest.raises(ValueError):
        embed_problem(small, haar_orthogonal(1, seed=0))


def test_dataset_json_round_trip_linear():
    ds = make_linear_dataset(["A1"], num_rhs=3, width=2.0, seed=21)
    text = dataset_to_json(ds)
    back = dataset_from_json(text)
    assert back.seed == ds.seed
    assert back.train_indices == ds.train_indices
    assert back.test_indices == ds.test_indices
    for a, b in zip(back.instances, ds.instances):
        np.testing.assert_array_equal(a.problem.A, b.problem.A)
        np.testing.assert_array_equal(a.problem.b, b.problem.b)
        assert a.label == b.label
    # serialization is stable under a round trip
    assert dataset_to_json(back) == text


def test_dataset_json_round_trip_nonlinear():
    for ds in [
        gen_chandrasekhar_dataset(ms=[4], cs=[0.9], samples_per=3, seed=2),
        gen_ivp_dataset(count=5, seed=3),
    ]:
        back = dataset_from_json(dataset_to_json(ds))
        for a, b in zip(back.instances, ds.instances):
            np.testing.assert_array_equal(a.x0, b.x0)
            assert a.h == b.h
        assert dataset_to_json(back) == dataset_to_json(ds)
