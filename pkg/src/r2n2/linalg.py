"""Dense linear-algebra primitives shared by the solver stack.

Everything here is pure: no global state, no RNG side effects (Haar sampling
takes an explicit seed). Shapes are validated eagerly so that shape bugs
surface at the call site instead of deep inside an iteration loop.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "LinalgError",
    "RankDeficientError",
    "PowerIterationError",
    "mat_vec",
    "householder_qr",
    "back_substitute",
    "least_squares",
    "spectral_norm",
    "haar_orthogonal",
]

# Relative drop in a triangular diagonal entry below which the system is
# treated as rank deficient rather than silently amplified.
_RANK_TOL = 1e-12

# Power iteration stops when the Rayleigh estimate is stable to this
# relative tolerance, and fails loudly after this many sweeps.
_POWER_TOL = 1e-12
_POWER_MAXIT = 10_000


class LinalgError(ValueError):
    """Base class for numerical failures raised by this module."""


class RankDeficientError(LinalgError):
    """Least-squares system has (numerically) dependent columns."""


class PowerIterationError(LinalgError):
    """Power iteration failed to reach tolerance within the sweep budget."""

    def __init__(self, iterations: int, estimate: float):
        self.iterations = iterations
        self.estimate = estimate
        super().__init__(
            f"power iteration did not converge in {iterations} sweeps "
            f"(last estimate {estimate:.6e})"
        )


def _as_matrix(A, name: str = "A") -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise LinalgError(f"{name} must be 2-D, got shape {A.shape}")
    return A


def _as_vector(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise LinalgError(f"{name} must be 1-D, got shape {x.shape}")
    return x


def mat_vec(A, x) -> np.ndarray:
    """Matrix-vector product with an explicit shape check."""
    A = _as_matrix(A)
    x = _as_vector(x)
    if A.shape[1] != x.shape[0]:
        raise LinalgError(
            f"shape mismatch: matrix is {A.shape}, vector has length {x.shape[0]}"
        )
    return A @ x


def householder_qr(A) -> tuple[np.ndarray, np.ndarray]:
    """Thin QR factorization A = Q R with orthonormal Q columns.

    Delegates to LAPACK's Householder factorization; Q is m-by-k and R is
    k-by-n upper triangular with k = min(m, n).
    """
    A = _as_matrix(A)
    if A.size == 0:
        raise LinalgError("cannot factor an empty matrix")
    Q, R = np.linalg.qr(A, mode="reduced")
    return Q, R


def back_substitute(R, y) -> np.ndarray:
    """Solve the upper-triangular system R x = y.

    Raises RankDeficientError when a pivot is negligible relative to the
    largest diagonal entry.
    """
    R = _as_matrix(R, "R")
    y = _as_vector(y, "y")
    n = R.shape[1]
    if R.shape[0] < n or y.shape[0] < n:
        raise LinalgError(f"triangular solve needs at least {n} rows, got {R.shape}")
    diag = np.abs(np.diagonal(R)[:n])
    scale = diag.max() if n else 0.0
    if scale == 0.0 or np.any(diag < _RANK_TOL * scale):
        raise RankDeficientError(
            "upper-triangular system is rank deficient "
            f"(diagonal magnitudes {diag}, tolerance {_RANK_TOL:g} relative)"
        )
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (y[i] - R[i, i + 1 : n] @ x[i + 1 : n]) / R[i, i]
    return x


def least_squares(A, b) -> np.ndarray:
    """Minimum-residual solution of an overdetermined system via QR.

    A must have full column rank; rank deficiency raises
    RankDeficientError instead of returning a pseudo-inverse answer.
    """
    A = _as_matrix(A)
    b = _as_vector(b, "b")
    if A.shape[0] != b.shape[0]:
        raise LinalgError(
            f"shape mismatch: matrix is {A.shape}, rhs has length {b.shape[0]}"
        )
    if A.shape[0] < A.shape[1]:
        raise LinalgError(
            f"system is underdetermined ({A.shape[0]} rows < {A.shape[1]} columns)"
        )
    Q, R = householder_qr(A)
    return back_substitute(R, Q.T @ b)


def spectral_norm(A) -> float:
    """Largest singular value via power iteration on A^T A.

    The iterate is refreshed with the matrix's action only, so the routine
    also serves matrices given in factored form upstream. Convergence is
    declared when the singular-value estimate is stable to 1e-12 relative;
    exceeding the sweep budget raises PowerIterationError with the count.
    """
    A = _as_matrix(A)
    if A.size == 0:
        raise LinalgError("spectral norm of an empty matrix is undefined")
    G = A.T @ A
    n = G.shape[0]
    # Deterministic start: favor the dominant column, perturbed to avoid
    # starting exactly orthogonal to the top eigenvector.
    v = np.ones(n) + 1e-3 * np.arange(n)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for it in range(1, _POWER_MAXIT + 1):
        w = G @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            return 0.0
        v = w / norm_w
        new_estimate = float(np.sqrt(v @ (G @ v)))
        if abs(new_estimate - estimate) <= _POWER_TOL * max(new_estimate, 1e-300):
            return new_estimate
        estimate = new_estimate
    raise PowerIterationError(_POWER_MAXIT, estimate)


def haar_orthogonal(dim: int, seed: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix from a seeded Gaussian draw.

    QR of a standard normal matrix, with the R diagonal's signs folded into
    Q so the distribution is exactly Haar (sign(0) counts as +1). The same
    seed always yields the same matrix.
    """
    if dim < 1:
        raise LinalgError(f"dimension must be positive, got {dim}")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((dim, dim))
    Q, R = np.linalg.qr(Z)
    signs = np.where(np.diagonal(R) < 0.0, -1.0, 1.0)
    return Q * signs
