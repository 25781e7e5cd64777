"""Post-hoc analysis: residual-reduction metrics, extraction of the
polynomial a trained model applies to linear residuals, and convergence
certification via the spectral norm of the induced residual operator.

For a linear problem f(x) = Ax - b a single direct-mode iteration maps the
residual r to (I + sum_j zeta_j A^j) r, where the zeta coefficients are
polynomial combinations of the trained weights. Extracting zeta turns a
trained model into a checkable object: its residual operator norm on a
given matrix certifies convergence for every right-hand side at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import spectral_norm
from .problems import LinearProblem
from .superstructure import (
    ProblemFunction,
    R2N2Config,
    R2N2Parameters,
    RolloutTrace,
    forward_pass,
)

__all__ = [
    "AnalysisError",
    "residual_reduction",
    "residual_reduction_nk",
    "relative_performance",
    "theta_to_zeta",
    "AlgorithmOperator",
    "algorithm_operator",
    "CertificationResult",
    "certify_convergence",
    "certify_matrix",
    "ConvergenceStats",
    "convergence_trace_stats",
    "fit_loglog_slope",
]


class AnalysisError(Exception):
    """An analysis-side consistency check failed."""


def residual_reduction(problem: LinearProblem, x_hat: np.ndarray) -> float:
    """How much of the initial residual norm one solve removed: ||b|| - ||A x_hat - b||.

    Assumes the zero initial guess, for which the initial residual is b.
    """
    x_hat = np.asarray(x_hat, dtype=float)
    return float(np.linalg.norm(problem.b) - np.linalg.norm(problem.evaluate(x_hat)))


def residual_reduction_nk(f: ProblemFunction, x0: np.ndarray, xk: np.ndarray) -> float:
    """Nonlinear counterpart: ||f(x0)|| - ||f(xk)||."""
    return float(
        np.linalg.norm(f.evaluate(np.asarray(x0, dtype=float)))
        - np.linalg.norm(f.evaluate(np.asarray(xk, dtype=float)))
    )


def relative_performance(model_reduction: float, baseline_reduction: float) -> float:
    """Ratio of residual reductions; > 1 means the model beat the baseline."""
    if baseline_reduction == 0.0:
        raise ValueError("baseline made no progress, the ratio is undefined")
    return float(model_reduction) / float(baseline_reduction)


_PROBE_SEEDS = (1299721, 7754077)


def theta_to_zeta(
    params: R2N2Parameters,
    cfg: R2N2Config,
    probe_dim: int | None = None,
    h: float | None = None,
) -> np.ndarray:
    """Coefficients zeta with r_next = (I + sum_{j=1}^n zeta_j A^j) r.

    Valid for direct-mode parameters without per-iteration blocks, acting
    on linear problems. Each subspace vector is a polynomial in A applied
    to the residual; the recursion tracks those coefficient arrays and
    collapses them through the output layer. Returns zeta[0..n-1] where
    zeta[i] multiplies A^(i+1).

    If ``probe_dim`` is given (must be >= n), the extraction is
    cross-checked on two seeded Gaussian probe systems: a fitted
    coefficient vector must reproduce the observed one-iteration residual
    map to 1e-12 relative. A mismatch raises AnalysisError.
    """
    if cfg.layer_mode != "direct":
        raise ValueError("coefficient extraction needs direct-mode parameters")
    if params.per_iteration_out is not None:
        raise ValueError("coefficient extraction needs a single shared block")
    n = params.n
    step = cfg.h if h is None else float(h)

    # c[j, d]: degree-d coefficient of the polynomial mapping r to v_j
    c = np.zeros((n, n))
    for j in range(n):
        c[j, 0] = 1.0
        if j > 0:
            row = params.theta_layers[j - 1]
            for d in range(1, j + 1):
                c[j, d] = step * float(
                    sum(row[l] * c[l, d - 1] for l in range(j))
                )
    zeta = step * (np.asarray(params.theta_out) @ c)

    if probe_dim is not None:
        if probe_dim < n:
            raise ValueError(f"probe dimension must be at least {n}, got {probe_dim}")
        for seed in _PROBE_SEEDS:
            rng = np.random.default_rng(seed)
            A = rng.standard_normal((probe_dim, probe_dim)) / np.sqrt(probe_dim)
            b = rng.standard_normal(probe_dim)
            x0 = rng.standard_normal(probe_dim)
            prob = LinearProblem(A=A, b=b, label="zeta-probe")
            r0 = prob.evaluate(x0)
            x1, _ = forward_pass(params, cfg, prob, x0, h=step)
            r1 = prob.evaluate(x1)
            # Horner evaluation of sum_j zeta_j A^j r0
            acc = zeta[n - 1] * r0
            for j in range(n - 2, -1, -1):
                acc = zeta[j] * r0 + A @ acc
            predicted = r0 + A @ acc
            scale = max(np.linalg.norm(r0), np.linalg.norm(r1), 1e-300)
            err = np.linalg.norm(r1 - predicted) / scale
            if err > 1e-12:
                raise AnalysisError(
                    f"extracted coefficients fail the probe check "
                    f"(relative error {err:.3e} on seed {seed})"
                )
    return zeta


@dataclass(frozen=True)
class AlgorithmOperator:
    """Residual operator I + sum_j zeta_j A^j of one trained iteration."""

    matrix: np.ndarray
    zeta: np.ndarray


def algorithm_operator(
    params: R2N2Parameters, cfg: R2N2Config, A: np.ndarray, h: float | None = None
) -> AlgorithmOperator:
    """Materialize the one-iteration residual operator on a given matrix."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    zeta = theta_to_zeta(params, cfg, h=h)
    M = np.eye(A.shape[0]) + zeta[0] * A
    power = A.copy()
    for j in range(1, len(zeta)):
        power = power @ A
        M = M + zeta[j] * power
    return AlgorithmOperator(matrix=M, zeta=zeta)


MARGINAL_BAND = 1e-9


@dataclass(frozen=True)
class CertificationResult:
    """Spectral-norm convergence certificate for one matrix."""

    norm: float
    convergent: bool
    marginal: bool
    zeta: np.ndarray

    def __str__(self):
        verdict = "convergent" if self.convergent else "not convergent"
        tag = " (marginal)" if self.marginal else ""
        return f"residual operator norm {self.norm:.6f}: {verdict}{tag}"


def certify_convergence(op: AlgorithmOperator) -> CertificationResult:
    """Certify that one iteration contracts every residual on this matrix.

    The certificate is the spectral norm of the residual operator: norm < 1
    guarantees the residual shrinks for every right-hand side and start.
    ``marginal`` flags norms within 1e-9 of the threshold, where roundoff
    in the norm estimate could flip the verdict.
    """
    norm = spectral_norm(op.matrix)
    return CertificationResult(
        norm=norm,
        convergent=norm < 1.0,
        marginal=abs(norm - 1.0) <= MARGINAL_BAND,
        zeta=op.zeta,
    )


def certify_matrix(
    params: R2N2Parameters, cfg: R2N2Config, A: np.ndarray, h: float | None = None
) -> CertificationResult:
    """Build the residual operator on A and certify it in one call."""
    return certify_convergence(algorithm_operator(params, cfg, A, h=h))


@dataclass(frozen=True)
class ConvergenceStats:
    """Per-iterate summary of residual norms across a batch of rollouts."""

    mean: np.ndarray
    minimum: np.ndarray
    maximum: np.ndarray
    count: int


def convergence_trace_stats(traces: Sequence[RolloutTrace]) -> ConvergenceStats:
    """Mean/min/max residual norm at each iterate over equal-length traces."""
    if not traces:
        raise ValueError("need at least one trace")
    depth = traces[0].depth
    for i, tr in enumerate(traces):
        if tr.depth != depth:
            raise ValueError(
                f"trace {i} has depth {tr.depth}, expected {depth}; "
                "filter ragged batches before summarizing"
            )
    norms = np.array([tr.residual_norms for tr in traces])
    return ConvergenceStats(
        mean=norms.mean(axis=0),
        minimum=norms.min(axis=0),
        maximum=norms.max(axis=0),
        count=len(traces),
    )


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of log(y) against log(x); x, y must be positive."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two aligned 1-d arrays with at least 2 points")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log slope needs strictly positive data")
    lx, ly = np.log(x), np.log(y)
    lx = lx - lx.mean()
    return float((lx @ (ly - ly.mean())) / (lx @ lx))
