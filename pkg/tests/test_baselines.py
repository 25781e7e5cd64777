import numpy as np
import pytest

from r2n2.baselines import (
    ARNOLDI_BREAKDOWN_TOL,
    ButcherTableau,
    IntegrationError,
    arnoldi,
    euler,
    gmres_cycle,
    gmres_restarted,
    heun2,
    jacobian_vector_fd,
    krylov_matrix,
    kutta3,
    nk_gmres_step,
    reference_integrate,
    reference_trajectory,
    rk4_classic,
    rk_method,
    rk_step,
)
from r2n2.problems import (
    ChandrasekharProblem,
    LinearProblem,
    VanDerPolProblem,
    builtin_b_tilde,
    builtin_matrix,
)


class Decay:
    """Autonomous scalar test system x' = -x."""

    dim = 1

    def evaluate(self, x):
        return -x

    def jacobian(self, x):
        return -np.eye(1)


class Quadratic:
    """x' = x^2, finite-time blow-up from positive starts."""

    dim = 1

    def evaluate(self, x):
        return x**2

    def jacobian(self, x):
        return np.diag(2 * x)


def spd_apply(A):
    return lambda z: A @ z


def test_arnoldi_orthonormal_and_hessenberg():
    rng = np.random.default_rng(2)
    A = builtin_matrix("A1")
    r0 = rng.standard_normal(5)
    basis = arnoldi(spd_apply(A), r0, 4)
    k = basis.subspace_size
    assert k == 4 and not basis.breakdown
    V = basis.V
    np.testing.assert_allclose(V.T @ V, np.eye(V.shape[1]), atol=1e-10)
    # Arnoldi relation A V_k = V_{k+1} H
    np.testing.assert_allclose(A @ V[:, :k], V @ basis.H, atol=1e-12)
    assert basis.beta == pytest.approx(float(np.linalg.norm(r0)), rel=1e-15)


def test_arnoldi_breakdown_on_identity():
    # K(I, r0) is one-dimensional: the second candidate vanishes
    basis = arnoldi(spd_apply(np.eye(3)), np.array([1.0, 2.0, 2.0]), 3)
    assert basis.breakdown
    assert basis.subspace_size == 1
    with pytest.raises(ValueError):
        arnoldi(spd_apply(np.eye(3)), np.zeros(3), 2)
    with pytest.raises(ValueError):
        arnoldi(spd_apply(np.eye(3)), np.ones(3), 0)


def test_krylov_matrix_columns():
    A = np.array([[2.0, 1.0], [0.0, 3.0]])
    r0 = np.array([1.0, 1.0])
    K = krylov_matrix(spd_apply(A), r0, 3)
    np.testing.assert_allclose(K[:, 0], r0)
    np.testing.assert_allclose(K[:, 1], A @ r0)
    np.testing.assert_allclose(K[:, 2], A @ A @ r0)


def test_gmres_cycle_exact_at_full_dimension():
    A = builtin_matrix("A1")
    b = builtin_b_tilde()
    x, res = gmres_cycle(spd_apply(A), b, np.zeros(5), 5)
    np.testing.assert_allclose(A @ x, b, atol=1e-10)
    assert res < 1e-10
    assert res == pytest.approx(float(np.linalg.norm(b - A @ x)), abs=1e-10)


def test_gmres_cycle_minimizes_over_krylov_space():
    """The cycle's iterate matches a brute-force least-squares solve over
    the raw Krylov columns."""
    A = builtin_matrix("A2")
    b = builtin_b_tilde()
    x0 = np.zeros(5)
    n = 3
    x, res = gmres_cycle(spd_apply(A), b, x0, n)
    K = krylov_matrix(spd_apply(A), b - A @ x0, n)
    y, *_ = np.linalg.lstsq(A @ K, b - A @ x0, rcond=None)
    x_ref = x0 + K @ y
    np.testing.assert_allclose(x, x_ref, atol=1e-8)
    assert res == pytest.approx(float(np.linalg.norm(b - A @ x)), abs=1e-10)


def test_gmres_cycle_zero_residual_short_circuit():
    # identity system started exactly at the solution
    b = np.array([1.0, -2.0, 0.5])
    x, res = gmres_cycle(spd_apply(np.eye(3)), b, b.copy(), 3)
    np.testing.assert_array_equal(x, b)
    assert res == 0.0


def test_gmres_restarted_trace():
    A = builtin_matrix("A1")
    b = builtin_b_tilde()
    x, norms = gmres_restarted(spd_apply(A), b, np.zeros(5), 2, cycles=4)
    assert len(norms) == 5
    assert norms[0] == pytest.approx(float(np.linalg.norm(b)), rel=1e-15)
    assert all(b2 <= a2 + 1e-12 for a2, b2 in zip(norms, norms[1:]))
    assert norms[-1] < 1e-3
    with pytest.raises(ValueError):
        gmres_restarted(spd_apply(A), b, np.zeros(5), 2, cycles=0)


def test_jacobian_vector_fd_linear_exact():
    A = builtin_matrix("A3")
    f = LinearProblem(A, builtin_b_tilde())
    rng = np.random.default_rng(4)
    x = rng.standard_normal(5)
    z = rng.standard_normal(5)
    np.testing.assert_allclose(jacobian_vector_fd(f, x, z), A @ z, atol=1e-6)
    with pytest.raises(ValueError):
        jacobian_vector_fd(f, x, z, epsilon=0.0)


def test_jacobian_vector_fd_chandrasekhar_analytic():
    p = ChandrasekharProblem.build(c=0.9, m=10)
    x = np.ones(10)
    rng = np.random.default_rng(5)
    z = rng.standard_normal(10)
    approx = jacobian_vector_fd(p, x, z)
    exact = p.jacobian(x) @ z
    assert np.abs(approx - exact).max() / np.abs(exact).max() < 1e-6


def test_nk_step_solves_linear_in_one_iteration():
    f = LinearProblem(builtin_matrix("A1"), builtin_b_tilde())
    x1 = nk_gmres_step(f, np.zeros(5), n=5)
    assert float(np.linalg.norm(f.evaluate(x1))) < 1e-5


def test_nk_step_fixed_point_at_root():
    f = LinearProblem(np.eye(2), np.zeros(2))
    np.testing.assert_array_equal(nk_gmres_step(f, np.zeros(2), 2), np.zeros(2))


def test_nk_chandrasekhar_regression():
    """Three truncated NK steps on the m=10, c=0.9 instance from the all
    ones start; first-step norm frozen as a regression baseline."""
    p = ChandrasekharProblem.build(c=0.9, m=10)
    x = np.ones(10)
    norms = [float(np.linalg.norm(p.evaluate(x)))]
    for _ in range(3):
        x = nk_gmres_step(p, x, n=3)
        norms.append(float(np.linalg.norm(p.evaluate(x))))
    assert norms[0] == pytest.approx(1.0203672755041957, rel=1e-12)
    assert norms[1] == pytest.approx(0.11233346839559774, rel=1e-6)
    assert all(b < a for a, b in zip(norms, norms[1:]))
    assert norms[3] < 1e-5
    # reduction after one step is positive
    assert norms[0] - norms[1] > 0.0


def test_nk_fd_matches_analytic_jacobian_route():
    """Matrix-free steps agree with the same truncated solve on the
    analytic Jacobian to 1e-5 over three iterations."""
    p = ChandrasekharProblem.build(c=0.905, m=10)
    rng = np.random.default_rng(9)
    x_fd = 1.0 + 0.2 * rng.standard_normal(10)
    x_exact = x_fd.copy()
    for _ in range(3):
        x_fd = nk_gmres_step(p, x_fd, n=3)
        J = p.jacobian(x_exact)
        dx, _ = gmres_cycle(lambda z: J @ z, -p.evaluate(x_exact), np.zeros(10), 3)
        x_exact = x_exact + dx
        np.testing.assert_allclose(x_fd, x_exact, atol=1e-5)


def test_tableau_validation():
    with pytest.raises(ValueError):
        ButcherTableau("bad", ((),), (0.5,), (0.0,), order=1)  # weights sum != 1
    with pytest.raises(ValueError):
        ButcherTableau("bad", ((0.5,),), (1.0,), (0.0,), order=1)  # not explicit
    with pytest.raises(ValueError):
        ButcherTableau("bad", ((),), (1.0,), (0.0, 1.0), order=1)  # field mismatch


def test_classical_tableaus():
    k3 = kutta3()
    assert k3.stage_coeffs == ((), (0.5,), (-1.0, 2.0))
    np.testing.assert_allclose(k3.weights, (1 / 6, 2 / 3, 1 / 6), rtol=1e-15)
    assert k3.nodes == (0.0, 0.5, 1.0) and k3.order == 3
    assert euler().stages == 1 and heun2().stages == 2
    assert rk4_classic().stages == 4 and rk4_classic().order == 4
    for s in (1, 2, 3, 4):
        assert rk_method(s).stages == s
    with pytest.raises(ValueError):
        rk_method(5)


def test_euler_step_by_hand():
    # x' = -x from 1 with h = 0.1: 1 + 0.1 * (-1) = 0.9
    x1 = rk_step(euler(), Decay(), np.array([1.0]), 0.1)
    assert x1[0] == pytest.approx(0.9, rel=1e-15)


def test_rk3_linear_stability_factor():
    """On x' = lambda x one RK-3 step multiplies the state by the degree-3
    Taylor polynomial of exp: at z = -0.5 that is 0.6041666..."""
    z = -0.5
    x1 = rk_step(kutta3(), Decay(), np.array([1.0]), 0.5)
    expected = 1 + z + z**2 / 2 + z**3 / 6
    assert x1[0] == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(0.6041666666666666, rel=1e-15)


def test_rk4_accuracy_on_decay():
    x1 = rk_step(rk4_classic(), Decay(), np.array([1.0]), 0.1)
    assert abs(x1[0] - np.exp(-0.1)) < 1e-7


def test_rk3_order_on_vdp():
    """Measured one-step error slope on a smooth van der Pol arc is close
    to 4 (local error h^(p+1) for an order-3 method)."""
    f = VanDerPolProblem(damping=1.5)
    x0 = np.array([-3.5, 1.0])
    hs = np.geomspace(0.01, 0.1, 8)
    errors = []
    for h in hs:
        truth = reference_integrate(f, x0, (0.0, float(h)), tol=1e-12)
        errors.append(float(np.linalg.norm(rk_step(kutta3(), f, x0, float(h)) - truth)))
    slope = np.polyfit(np.log(hs), np.log(errors), 1)[0]
    assert slope == pytest.approx(4.0, abs=0.15)


def test_reference_integrate_decay():
    x1 = reference_integrate(Decay(), np.array([1.0]), (0.0, 1.0), tol=1e-10)
    assert x1[0] == pytest.approx(np.exp(-1.0), abs=1e-8)


def test_reference_integrate_validation():
    with pytest.raises(ValueError):
        reference_integrate(Decay(), np.array([1.0]), (1.0, 0.0))
    with pytest.raises(ValueError):
        reference_integrate(Decay(), np.array([1.0]), (0.0, 1.0), tol=0.0)
    np.testing.assert_array_equal(
        reference_integrate(Decay(), np.array([3.0]), (2.0, 2.0)), [3.0]
    )


def test_reference_integrate_detects_blowup():
    # x' = x^2 from 2 blows up at t = 0.5
    with pytest.raises(IntegrationError):
        reference_integrate(Quadratic(), np.array([2.0]), (0.0, 1.0))


def test_reference_trajectory():
    states = reference_trajectory(Decay(), np.array([1.0]), [0.0, 0.5, 1.0], tol=1e-10)
    assert len(states) == 3
    np.testing.assert_array_equal(states[0], [1.0])
    assert states[1][0] == pytest.approx(np.exp(-0.5), abs=1e-8)
    assert states[2][0] == pytest.approx(np.exp(-1.0), abs=1e-8)
    with pytest.raises(ValueError):
        reference_trajectory(Decay(), np.array([1.0]), [0.0, 0.0])
