"""Reverse-mode gradients of rollout losses.

The rollout is short (a handful of outer iterations over a handful of
inner evaluations), so the backward pass is written directly against the
recorded trace instead of going through a general tape: adjoints flow
from the loss terms at each iterate back through the output combination,
the inner evaluations, and the identity skip connection into the previous
iterate. Gradients with respect to every coefficient accumulate along the
way.

For the forward-differencing mode the inner evaluation
``v_j = (f(x_k + eps d_j) - f(x_k)) / eps`` contributes two Jacobian
terms: ``J(x_k + eps d_j)`` through the direction and the difference
``(J(x_k + eps d_j) - J(x_k)) / eps`` through the anchor point. The anchor
term only influences parameter gradients once iterates are chained
(T >= 2); ``skip_fd_anchor_term`` exists so a regression test can prove
that omitting it is detectable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from .superstructure import (
    ProblemFunction,
    R2N2Config,
    R2N2Parameters,
    RolloutTrace,
    param_vector,
    params_from_vector,
    rollout,
)

__all__ = [
    "GradientError",
    "DivergedRolloutError",
    "TraceLoss",
    "ParameterGradient",
    "grad_rollout_loss",
    "finite_diff_grad",
]


class GradientError(RuntimeError):
    """A gradient evaluation produced non-finite entries."""


class DivergedRolloutError(RuntimeError):
    """The forward rollout tripped the divergence guard mid-training."""


class TraceLoss(Protocol):
    """Loss defined on a rollout trace, differentiable per iterate."""

    @property
    def T(self) -> int: ...

    def sample_value(
        self,
        trace: RolloutTrace,
        f: ProblemFunction,
        targets: Sequence[np.ndarray] | None = None,
        h: float | None = None,
    ) -> float: ...

    def sample_iterate_grads(
        self,
        trace: RolloutTrace,
        f: ProblemFunction,
        targets: Sequence[np.ndarray] | None = None,
        h: float | None = None,
    ) -> list[np.ndarray]: ...


@dataclass(frozen=True)
class ParameterGradient:
    """Gradient arrays mirroring the shapes of R2N2Parameters."""

    theta_layers: tuple[np.ndarray, ...]
    theta_out: np.ndarray
    per_iteration_out: tuple[np.ndarray, ...] | None = None
    per_iteration_layers: tuple[tuple[np.ndarray, ...], ...] | None = None

    @classmethod
    def zeros_like(cls, params: R2N2Parameters) -> "ParameterGradient":
        per_out = None
        per_layers = None
        if params.per_iteration_out is not None:
            per_out = tuple(np.zeros_like(b) for b in params.per_iteration_out)
        if params.per_iteration_layers is not None:
            per_layers = tuple(
                tuple(np.zeros_like(r) for r in rows) for rows in params.per_iteration_layers
            )
        return cls(
            theta_layers=tuple(np.zeros_like(r) for r in params.theta_layers),
            theta_out=np.zeros_like(params.theta_out),
            per_iteration_out=per_out,
            per_iteration_layers=per_layers,
        )

    @classmethod
    def from_vector(cls, vec: np.ndarray, template: R2N2Parameters) -> "ParameterGradient":
        shaped = params_from_vector(vec, template)
        return cls(
            theta_layers=shaped.theta_layers,
            theta_out=shaped.theta_out,
            per_iteration_out=shaped.per_iteration_out,
            per_iteration_layers=shaped.per_iteration_layers,
        )

    def as_vector(self) -> np.ndarray:
        chunks = [*self.theta_layers, self.theta_out]
        if self.per_iteration_out is not None:
            for k, out in enumerate(self.per_iteration_out):
                chunks.append(out)
                if self.per_iteration_layers is not None:
                    chunks.extend(self.per_iteration_layers[k])
        return np.concatenate([np.ravel(c) for c in chunks])

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.as_vector())))


def grad_rollout_loss(
    params: R2N2Parameters,
    cfg: R2N2Config,
    f: ProblemFunction,
    x0: np.ndarray,
    T: int,
    loss: TraceLoss,
    targets: Sequence[np.ndarray] | None = None,
    h: float | None = None,
    skip_fd_anchor_term: bool = False,
) -> tuple[float, ParameterGradient]:
    """Loss value and exact gradient of one sample's T-iteration rollout.

    Divergent rollouts raise DivergedRolloutError; non-finite gradients
    raise GradientError. ``skip_fd_anchor_term`` deliberately drops the
    anchor-point Jacobian term of the differencing mode and exists only
    for its regression test.
    """
    trace = rollout(params, cfg, f, x0, T, h=h)
    if trace.diverged or trace.depth < T:
        raise DivergedRolloutError(
            f"rollout diverged after {trace.depth} of {T} iterations "
            f"(last residual norm {trace.residual_norms[-1]:.3e})"
        )
    value = loss.sample_value(trace, f, targets=targets, h=h)
    iterate_grads = loss.sample_iterate_grads(trace, f, targets=targets, h=h)
    if len(iterate_grads) != T:
        raise ValueError(f"loss produced {len(iterate_grads)} iterate gradients, expected {T}")

    grad = ParameterGradient.zeros_like(params)
    fd_mode = cfg.layer_mode == "forward-diff"
    n = params.n
    eps = cfg.epsilon

    x_bar = np.zeros_like(np.asarray(x0, dtype=float))
    for k in range(T - 1, -1, -1):
        rec = trace.records[k]
        layers, out = params.blocks_for(k)
        h_k = rec.h

        # Loss gradient at iterate x_{k+1} joins the adjoint from above.
        x_bar = x_bar + iterate_grads[k]

        # Output combination x_{k+1} = x_start + h * sum_j out[j] v_j.
        if params.per_iteration_out is None:
            out_grad = grad.theta_out
        else:
            out_grad = grad.per_iteration_out[rec.block_index]
        if params.per_iteration_layers is None:
            layer_grad = grad.theta_layers
        else:
            layer_grad = grad.per_iteration_layers[rec.block_index]

        v_bar = [h_k * out[j] * x_bar for j in range(n)]
        for j in range(n):
            out_grad[j] += h_k * float(rec.subspace[j] @ x_bar)
        x_start_bar = x_bar.copy()
        J_start = f.jacobian(rec.x_start)

        for j in range(n - 1, 0, -1):
            if fd_mode:
                # v_j = (f(x_start + eps d_j) - f(x_start)) / eps
                J_point = f.jacobian(rec.eval_points[j - 1])
                d_bar = J_point.T @ v_bar[j]
                if not skip_fd_anchor_term:
                    x_start_bar += ((J_point - J_start).T @ v_bar[j]) / eps
            else:
                # v_j = f(x_start + h d_j)
                point_bar = f.jacobian(rec.eval_points[j - 1]).T @ v_bar[j]
                x_start_bar += point_bar
                d_bar = h_k * point_bar
            row = layers[j - 1]
            for l in range(j):
                layer_grad[j - 1][l] += float(rec.subspace[l] @ d_bar)
                v_bar[l] = v_bar[l] + row[l] * d_bar

        # v_0 = f(x_start)
        x_start_bar += J_start.T @ v_bar[0]
        x_bar = x_start_bar

    if not grad.is_finite():
        raise GradientError("gradient has non-finite entries")
    return value, grad


def finite_diff_grad(
    params: R2N2Parameters,
    cfg: R2N2Config,
    f: ProblemFunction,
    x0: np.ndarray,
    T: int,
    loss: TraceLoss,
    step: float = 1e-6,
    targets: Sequence[np.ndarray] | None = None,
    h: float | None = None,
) -> ParameterGradient:
    """Central-difference gradient oracle over every coefficient.

    Perturbs one flattened parameter at a time by +-step and re-runs the
    full rollout; intended for verification, not production training.
    """
    if not (step > 0.0):
        raise ValueError(f"step must be positive, got {step}")
    base = param_vector(params)

    def value_at(vec: np.ndarray) -> float:
        p = params_from_vector(vec, params)
        trace = rollout(p, cfg, f, x0, T, h=h)
        if trace.diverged or trace.depth < T:
            raise DivergedRolloutError("rollout diverged inside the difference stencil")
        return loss.sample_value(trace, f, targets=targets, h=h)

    grad_vec = np.zeros_like(base)
    for i in range(base.shape[0]):
        probe = base.copy()
        probe[i] = base[i] + step
        up = value_at(probe)
        probe[i] = base[i] - step
        down = value_at(probe)
        grad_vec[i] = (up - down) / (2.0 * step)
    if not np.all(np.isfinite(grad_vec)):
        raise GradientError("finite-difference gradient has non-finite entries")
    return ParameterGradient.from_vector(grad_vec, params)
