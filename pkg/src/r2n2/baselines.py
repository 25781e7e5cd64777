"""Classical iterative baselines the learned solver is measured against.

Linear side: Arnoldi (modified Gram-Schmidt), a single GMRES cycle solved
through Givens rotations, and restarted GMRES. Nonlinear side: a
matrix-free Newton-Krylov step with finite-difference Jacobian action and
a full Newton update (no line search). ODE side: explicit Runge-Kutta
steppers driven by Butcher tableaus plus an adaptive Dormand-Prince 5(4)
integrator used as ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .linalg import back_substitute
from .superstructure import ProblemFunction

__all__ = [
    "ARNOLDI_BREAKDOWN_TOL",
    "KrylovBasis",
    "IntegrationError",
    "arnoldi",
    "krylov_matrix",
    "gmres_cycle",
    "gmres_restarted",
    "jacobian_vector_fd",
    "nk_gmres_step",
    "ButcherTableau",
    "euler",
    "heun2",
    "kutta3",
    "rk4_classic",
    "rk_method",
    "rk_step",
    "reference_integrate",
    "reference_trajectory",
]

ARNOLDI_BREAKDOWN_TOL = 1e-14

ApplyMatrix = Callable[[np.ndarray], np.ndarray]


class IntegrationError(RuntimeError):
    """Adaptive integrator could not proceed (step-size underflow)."""


@dataclass(frozen=True)
class KrylovBasis:
    """Arnoldi output: orthonormal columns V and Hessenberg H.

    ``H`` has shape (k+1, k) for k completed columns and satisfies
    A V[:, :k] = V H up to the bottom entry dropped on breakdown. ``beta``
    is the starting residual norm.
    """

    V: np.ndarray
    H: np.ndarray
    beta: float
    breakdown: bool

    @property
    def subspace_size(self) -> int:
        return self.H.shape[1]


def arnoldi(apply_A: ApplyMatrix, r0: np.ndarray, n: int) -> KrylovBasis:
    """Build an orthonormal Krylov basis of (at most) n vectors from r0.

    Modified Gram-Schmidt; a candidate with norm below the breakdown
    tolerance truncates the basis and flags the result.
    """
    if n < 1:
        raise ValueError(f"subspace size must be positive, got {n}")
    r0 = np.asarray(r0, dtype=float)
    beta = float(np.linalg.norm(r0))
    if beta == 0.0:
        raise ValueError("cannot build a Krylov basis from a zero vector")
    vs = [r0 / beta]
    H = np.zeros((n + 1, n))
    k = 0
    breakdown = False
    for j in range(n):
        w = np.asarray(apply_A(vs[j]), dtype=float)
        for i in range(j + 1):
            H[i, j] = vs[i] @ w
            w = w - H[i, j] * vs[i]
        H[j + 1, j] = np.linalg.norm(w)
        k = j + 1
        if H[j + 1, j] < ARNOLDI_BREAKDOWN_TOL:
            breakdown = True
            break
        vs.append(w / H[j + 1, j])
    return KrylovBasis(V=np.column_stack(vs), H=H[: k + 1, :k], beta=beta, breakdown=breakdown)


def krylov_matrix(apply_A: ApplyMatrix, r0: np.ndarray, n: int) -> np.ndarray:
    """Raw (unorthogonalized) Krylov columns [r0, A r0, .., A^(n-1) r0]."""
    if n < 1:
        raise ValueError(f"column count must be positive, got {n}")
    cols = [np.asarray(r0, dtype=float)]
    for _ in range(n - 1):
        cols.append(np.asarray(apply_A(cols[-1]), dtype=float))
    return np.column_stack(cols)


def gmres_cycle(
    apply_A: ApplyMatrix, b: np.ndarray, x0: np.ndarray, n: int
) -> tuple[np.ndarray, float]:
    """One GMRES(n) cycle: minimize the residual over x0 + K_n.

    The Hessenberg least-squares problem is reduced by Givens rotations;
    the returned residual norm is the minimized value (last rotated rhs
    entry), which matches ||b - A x|| up to roundoff.
    """
    b = np.asarray(b, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    r0 = b - np.asarray(apply_A(x0), dtype=float)
    if np.linalg.norm(r0) == 0.0:
        return x0.copy(), 0.0
    basis = arnoldi(apply_A, r0, n)
    k = basis.subspace_size
    H = basis.H.copy()
    g = np.zeros(k + 1)
    g[0] = basis.beta
    # Sequential Givens rotations zero the subdiagonal in place.
    for col in range(k):
        a, c_ = H[col, col], H[col + 1, col]
        radius = np.hypot(a, c_)
        if radius == 0.0:
            continue
        cos, sin = a / radius, c_ / radius
        rot = np.array([[cos, sin], [-sin, cos]])
        H[col : col + 2, col:] = rot @ H[col : col + 2, col:]
        g[col : col + 2] = rot @ g[col : col + 2]
    y = back_substitute(H[:k, :k], g[:k])
    x_new = x0 + basis.V[:, :k] @ y
    return x_new, float(abs(g[k]))


def gmres_restarted(
    apply_A: ApplyMatrix, b: np.ndarray, x0: np.ndarray, n: int, cycles: int
) -> tuple[np.ndarray, list[float]]:
    """Restarted GMRES(n); returns the final iterate and the residual trace.

    The trace has ``cycles + 1`` entries starting with the initial
    residual norm and is monotone nonincreasing.
    """
    if cycles < 1:
        raise ValueError(f"cycle count must be positive, got {cycles}")
    x = np.asarray(x0, dtype=float)
    b = np.asarray(b, dtype=float)
    norms = [float(np.linalg.norm(b - np.asarray(apply_A(x), dtype=float)))]
    for _ in range(cycles):
        x, res = gmres_cycle(apply_A, b, x, n)
        norms.append(res)
    return x, norms


def jacobian_vector_fd(
    f: ProblemFunction,
    x: np.ndarray,
    z: np.ndarray,
    epsilon: float = 1e-8,
    fx: np.ndarray | None = None,
) -> np.ndarray:
    """Forward-difference Jacobian action (f(x + eps z) - f(x)) / eps.

    Pass the cached ``fx = f.evaluate(x)`` to spend exactly one extra
    evaluation per product.
    """
    if not (epsilon > 0.0):
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if fx is None:
        fx = f.evaluate(x)
    return (f.evaluate(x + epsilon * z) - fx) / epsilon


def nk_gmres_step(
    f: ProblemFunction, x_k: np.ndarray, n: int, epsilon: float = 1e-8
) -> np.ndarray:
    """One matrix-free Newton-Krylov update with a GMRES(n) inner solve.

    Solves J(x_k) dx = -f(x_k) approximately using finite-difference
    Jacobian products and applies the full step. At an exact root the
    iterate is returned unchanged.
    """
    x_k = np.asarray(x_k, dtype=float)
    fx = f.evaluate(x_k)
    if np.linalg.norm(fx) == 0.0:
        return x_k.copy()

    def apply_J(z: np.ndarray) -> np.ndarray:
        return jacobian_vector_fd(f, x_k, z, epsilon, fx=fx)

    dx, _ = gmres_cycle(apply_J, -fx, np.zeros_like(x_k), n)
    return x_k + dx


@dataclass(frozen=True)
class ButcherTableau:
    """Coefficients of an explicit Runge-Kutta method.

    ``stage_coeffs`` row j holds the j coefficients combining earlier
    stages (strictly lower triangular by construction), ``weights`` the
    output combination, ``nodes`` the stage abscissae (unused for
    autonomous systems but kept for the record).
    """

    name: str
    stage_coeffs: tuple[tuple[float, ...], ...]
    weights: tuple[float, ...]
    nodes: tuple[float, ...]
    order: int

    def __post_init__(self):
        s = len(self.weights)
        if len(self.stage_coeffs) != s or len(self.nodes) != s:
            raise ValueError("tableau fields must agree on the stage count")
        for j, row in enumerate(self.stage_coeffs):
            if len(row) != j:
                raise ValueError(
                    f"stage row {j} must have {j} coefficients (explicit method), got {len(row)}"
                )
        if abs(sum(self.weights) - 1.0) > 1e-12:
            raise ValueError("stage weights must sum to 1")

    @property
    def stages(self) -> int:
        return len(self.weights)


def euler() -> ButcherTableau:
    return ButcherTableau("euler", ((),), (1.0,), (0.0,), order=1)


def heun2() -> ButcherTableau:
    return ButcherTableau("heun2", ((), (1.0,)), (0.5, 0.5), (0.0, 1.0), order=2)


def kutta3() -> ButcherTableau:
    """Kutta's third-order method (the classical three-stage RK-3)."""
    return ButcherTableau(
        "kutta3",
        ((), (0.5,), (-1.0, 2.0)),
        (1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0),
        (0.0, 0.5, 1.0),
        order=3,
    )


def rk4_classic() -> ButcherTableau:
    return ButcherTableau(
        "rk4",
        ((), (0.5,), (0.0, 0.5), (0.0, 0.0, 1.0)),
        (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0),
        (0.0, 0.5, 0.5, 1.0),
        order=4,
    )


_RK_FAMILY = {1: euler, 2: heun2, 3: kutta3, 4: rk4_classic}


def rk_method(stages: int) -> ButcherTableau:
    """Classical s-stage, order-s method for s in 1..4."""
    try:
        return _RK_FAMILY[stages]()
    except KeyError:
        raise ValueError(f"no classical method registered for {stages} stages") from None


def rk_step(tableau: ButcherTableau, f: ProblemFunction, x: np.ndarray, h: float) -> np.ndarray:
    """One explicit Runge-Kutta step of size h on an autonomous system."""
    x = np.asarray(x, dtype=float)
    stages: list[np.ndarray] = []
    for row in tableau.stage_coeffs:
        shift = x
        for coeff, k_prev in zip(row, stages):
            shift = shift + h * coeff * k_prev
        stages.append(f.evaluate(shift))
    update = sum(w * k for w, k in zip(tableau.weights, stages))
    return x + h * update


# Dormand-Prince 5(4) coefficients; the first output row doubles as the
# last stage row (FSAL).
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
_DP_B5 = (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0)
_DP_B4 = (5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40)

_STEP_UNDERFLOW = 1e-14
_SAFETY = 0.9
_BETA = 0.08          # PI integral gain
_ALPHA = 0.2 - 0.75 * _BETA
_FACTOR_MIN = 0.2
_FACTOR_MAX = 5.0


def _error_norm(err: np.ndarray, x: np.ndarray, x_new: np.ndarray, tol: float) -> float:
    scale = tol + tol * np.maximum(np.abs(x), np.abs(x_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def _initial_step(f: ProblemFunction, x0: np.ndarray, span: float, tol: float) -> float:
    f0 = f.evaluate(x0)
    scale = tol + tol * np.abs(x0)
    d0 = float(np.sqrt(np.mean((x0 / scale) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = f.evaluate(x0 + h0 * f0)
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale) ** 2))) / h0
    dmax = max(d1, d2)
    h1 = max(1e-6, (0.01 / dmax) ** 0.2) if dmax > 1e-15 else max(1e-6, h0 * 1e-3)
    return min(100 * h0, h1, span)


def reference_integrate(
    f: ProblemFunction, x0: np.ndarray, t_span: tuple[float, float], tol: float = 1e-8
) -> np.ndarray:
    """High-accuracy final state via adaptive Dormand-Prince 5(4).

    ``tol`` is used as both the absolute and relative tolerance; step
    sizes follow a PI controller. A controller-forced step below 1e-14
    raises IntegrationError (stiffness / unreachable tolerance).
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if t1 < t0:
        raise ValueError(f"integration span must run forward, got {t_span}")
    if not (tol > 0.0):
        raise ValueError(f"tolerance must be positive, got {tol}")
    x = np.asarray(x0, dtype=float)
    span = t1 - t0
    if span == 0.0:
        return x.copy()

    t = t0
    h = _initial_step(f, x, span, tol)
    err_prev = 1.0
    k1 = f.evaluate(x)
    while t < t1 - 1e-14 * max(1.0, abs(t1)):
        h = min(h, t1 - t)
        if h < _STEP_UNDERFLOW:
            raise IntegrationError(
                f"step size underflow (h={h:.3e} at t={t:.6e}); system too stiff for tol={tol:g}"
            )
        stages = [k1]
        for row in _DP_A[1:]:
            shift = x
            for coeff, k_prev in zip(row, stages):
                shift = shift + h * coeff * k_prev
            stages.append(f.evaluate(shift))
        x5 = x + h * sum(b * k for b, k in zip(_DP_B5, stages))
        x4 = x + h * sum(b * k for b, k in zip(_DP_B4, stages))
        err = _error_norm(x5 - x4, x, x5, tol)

        if np.isfinite(err) and err <= 1.0:
            t += h
            x = x5
            k1 = stages[-1]  # FSAL: last stage is f at the accepted point
            factor = _SAFETY * (max(err, 1e-10) ** -_ALPHA) * (err_prev ** _BETA)
            err_prev = max(err, 1e-10)
            h *= min(_FACTOR_MAX, max(_FACTOR_MIN, factor))
        else:
            shrink = 0.1 if not np.isfinite(err) else max(
                _FACTOR_MIN, _SAFETY * err ** -_ALPHA
            )
            h *= min(1.0, shrink)
    return x


def reference_trajectory(
    f: ProblemFunction, x0: np.ndarray, times: Sequence[float], tol: float = 1e-8
) -> list[np.ndarray]:
    """States at increasing times, integrating piecewise from the start.

    ``times`` must be strictly increasing and start at or after the
    initial time, which is taken to be times[0]; the returned list
    includes the initial state.
    """
    times = [float(t) for t in times]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be strictly increasing")
    states = [np.asarray(x0, dtype=float).copy()]
    for a, b in zip(times, times[1:]):
        states.append(reference_integrate(f, states[-1], (a, b), tol))
    return states
