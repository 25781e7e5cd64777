"""Trainable multistage iteration superstructure.

One outer iteration evaluates the problem function at a sequence of
trainable linear combinations of earlier evaluations, then takes a
weighted step:

    v_0 = f(x_k)
    x'_j = x_k + h * sum_{l<j} theta[j][l] * v_l      (direct mode)
    v_j  = f(x'_j)
    x_{k+1} = x_k + h * sum_j theta_out[j] * v_j

With ``theta[j][l] = b_jl / h`` and ``theta_out[j] = c_j`` this is an
explicit Runge-Kutta step; the coefficients here are learned instead of
fixed. The forward-differencing mode replaces each inner evaluation by a
directional finite difference anchored at x_k,

    v_j = (f(x_k + eps * d_j) - f(x_k)) / eps,   d_j = sum_l theta[j][l] v_l,

which makes the inner layers approximate Jacobian-vector products and the
whole iteration a trainable Newton-Krylov step.

Rollouts chain T outer iterations and record everything the backward pass
or an analysis needs. A rollout stops early (flagged, not raised) once the
residual norm exceeds the divergence guard.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol, Sequence

import numpy as np

__all__ = [
    "DIVERGENCE_GUARD",
    "ProblemFunction",
    "R2N2Config",
    "R2N2Parameters",
    "IterationRecord",
    "RolloutTrace",
    "init_parameters",
    "layer_forward",
    "layer_forward_fd",
    "output_layer",
    "forward_pass",
    "rollout",
    "fd_params_to_direct",
    "param_vector",
    "params_from_vector",
    "zero_gradient",
    "params_to_json",
    "params_from_json",
    "save_parameters",
    "load_parameters",
]

# Residual norm beyond which a rollout is declared divergent.
DIVERGENCE_GUARD = 1e12

_LAYER_MODES = ("direct", "forward-diff")


class ProblemFunction(Protocol):
    """Anything with a residual, a Jacobian, and a dimension."""

    @property
    def dim(self) -> int: ...

    def evaluate(self, x: np.ndarray) -> np.ndarray: ...

    def jacobian(self, x: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True)
class R2N2Config:
    """Structural settings: depth n, step scale h, evaluation mode."""

    n: int
    h: float = 1.0
    layer_mode: str = "direct"
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be at least 1, got {self.n}")
        if not (self.h > 0.0):
            raise ValueError(f"h must be positive, got {self.h}")
        if self.layer_mode not in _LAYER_MODES:
            raise ValueError(
                f"layer_mode must be one of {_LAYER_MODES}, got {self.layer_mode!r}"
            )
        if not (self.epsilon > 0.0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")


def _check_blocks(theta_layers: Sequence[np.ndarray], theta_out: np.ndarray, n: int):
    if len(theta_layers) != n - 1:
        raise ValueError(
            f"expected {n - 1} layer coefficient rows for n={n}, got {len(theta_layers)}"
        )
    for j, row in enumerate(theta_layers, start=1):
        if row.shape != (j,):
            raise ValueError(
                f"layer row {j} must have {j} coefficients, got shape {row.shape}"
            )
    if theta_out.shape != (n,):
        raise ValueError(f"output row must have {n} coefficients, got {theta_out.shape}")


@dataclass(frozen=True)
class R2N2Parameters:
    """Trainable coefficients.

    ``theta_layers[j-1]`` holds the j coefficients feeding evaluation
    point j (j = 1..n-1); ``theta_out`` the n output weights. The
    optional per-iteration fields give outer iteration k its own output
    row (and, if present, its own layer rows); iterations past the last
    block reuse the last block.
    """

    theta_layers: tuple[np.ndarray, ...]
    theta_out: np.ndarray
    per_iteration_out: tuple[np.ndarray, ...] | None = None
    per_iteration_layers: tuple[tuple[np.ndarray, ...], ...] | None = None

    def __post_init__(self):
        layers = tuple(np.asarray(r, dtype=float) for r in self.theta_layers)
        out = np.asarray(self.theta_out, dtype=float)
        object.__setattr__(self, "theta_layers", layers)
        object.__setattr__(self, "theta_out", out)
        n = out.shape[0]
        _check_blocks(layers, out, n)
        if self.per_iteration_out is not None:
            blocks = tuple(np.asarray(b, dtype=float) for b in self.per_iteration_out)
            if not blocks:
                raise ValueError("per_iteration_out must hold at least one block")
            for b in blocks:
                if b.shape != (n,):
                    raise ValueError(
                        f"per-iteration output rows must have {n} entries, got {b.shape}"
                    )
            object.__setattr__(self, "per_iteration_out", blocks)
        if self.per_iteration_layers is not None:
            if self.per_iteration_out is None:
                raise ValueError(
                    "per_iteration_layers requires per_iteration_out of the same length"
                )
            outer = []
            for rows in self.per_iteration_layers:
                rows = tuple(np.asarray(r, dtype=float) for r in rows)
                _check_blocks(rows, out, n)
                outer.append(rows)
            if len(outer) != len(self.per_iteration_out):
                raise ValueError(
                    "per_iteration_layers and per_iteration_out must have equal length"
                )
            object.__setattr__(self, "per_iteration_layers", tuple(outer))

    @property
    def n(self) -> int:
        return self.theta_out.shape[0]

    @property
    def num_blocks(self) -> int:
        """Number of distinct per-iteration blocks (1 when shared)."""
        return 1 if self.per_iteration_out is None else len(self.per_iteration_out)

    def blocks_for(self, iter_index: int) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
        """Coefficient rows applied at outer iteration ``iter_index``.

        Returns references, not copies, so reuse of the final block by
        later iterations is observable by identity.
        """
        if iter_index < 0:
            raise ValueError(f"iteration index must be nonnegative, got {iter_index}")
        if self.per_iteration_out is None:
            return self.theta_layers, self.theta_out
        k = min(iter_index, len(self.per_iteration_out) - 1)
        out = self.per_iteration_out[k]
        if self.per_iteration_layers is not None:
            return self.per_iteration_layers[k], out
        return self.theta_layers, out


@dataclass(frozen=True)
class IterationRecord:
    """Everything one outer iteration touched, for replay and backprop."""

    x_start: np.ndarray
    subspace: tuple[np.ndarray, ...]       # v_0 .. v_{n-1}
    eval_points: tuple[np.ndarray, ...]    # x'_j (or x_k + eps*d_j), j = 1..n-1
    directions: tuple[np.ndarray, ...]     # d_j before scaling, j = 1..n-1
    x_next: np.ndarray
    block_index: int
    h: float


@dataclass(frozen=True)
class RolloutTrace:
    """Chained outer iterations with residual norms per iterate.

    ``iterates[k]`` is x_k; ``residual_norms[k] = ||f(x_k)||``. When the
    divergence guard trips, the trace ends at the offending iterate and
    ``diverged`` is set instead of raising.
    """

    iterates: tuple[np.ndarray, ...]
    records: tuple[IterationRecord, ...]
    residual_norms: tuple[float, ...]
    diverged: bool = False

    def __post_init__(self):
        if len(self.iterates) != len(self.records) + 1:
            raise ValueError("trace must hold one more iterate than iteration records")
        if len(self.residual_norms) != len(self.iterates):
            raise ValueError("trace needs one residual norm per iterate")
        if any(norm < 0.0 for norm in self.residual_norms):
            raise ValueError("residual norms cannot be negative")

    @property
    def depth(self) -> int:
        return len(self.records)


def init_parameters(
    cfg: R2N2Config,
    seed: int,
    scale: float = 0.1,
    num_blocks: int | None = None,
    per_iteration_layers: bool = False,
) -> R2N2Parameters:
    """Uniform(-scale, scale) coefficients from a seeded generator.

    ``num_blocks`` switches on per-iteration output rows (one per outer
    iteration); ``per_iteration_layers`` additionally unties the layer
    rows per iteration.
    """
    rng = np.random.default_rng(seed)

    def draw_layers():
        return tuple(rng.uniform(-scale, scale, size=j) for j in range(1, cfg.n))

    def draw_out():
        return rng.uniform(-scale, scale, size=cfg.n)

    theta_layers = draw_layers()
    theta_out = draw_out()
    if num_blocks is None:
        return R2N2Parameters(theta_layers, theta_out)
    if num_blocks < 1:
        raise ValueError(f"num_blocks must be positive, got {num_blocks}")
    per_out = tuple(draw_out() for _ in range(num_blocks))
    per_layers = (
        tuple(draw_layers() for _ in range(num_blocks)) if per_iteration_layers else None
    )
    return R2N2Parameters(theta_layers, theta_out, per_out, per_layers)


def _resolve_h(cfg: R2N2Config, h: float | None) -> float:
    if h is None:
        return cfg.h
    if not (h > 0.0):
        raise ValueError(f"h must be positive, got {h}")
    return float(h)


def layer_forward(
    params: R2N2Parameters,
    cfg: R2N2Config,
    f: ProblemFunction,
    x_k: np.ndarray,
    v_list: Sequence[np.ndarray],
    iter_index: int = 0,
    h: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Direct-mode inner layer j = len(v_list): evaluate f at the shifted point.

    Returns (x'_j, v_j) where x'_j = x_k + h * sum_l theta[j][l] v_l and
    v_j = f(x'_j).
    """
    j = len(v_list)
    if not 1 <= j <= params.n - 1:
        raise ValueError(f"layer index {j} out of range for n={params.n}")
    layers, _ = params.blocks_for(iter_index)
    step = _resolve_h(cfg, h)
    row = layers[j - 1]
    direction = sum(row[l] * v_list[l] for l in range(j))
    x_prime = x_k + step * direction
    return x_prime, f.evaluate(x_prime)


def layer_forward_fd(
    params: R2N2Parameters,
    cfg: R2N2Config,
    f: ProblemFunction,
    x_k: np.ndarray,
    v0: np.ndarray,
    v_list: Sequence[np.ndarray],
    iter_index: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Forward-differencing inner layer j = len(v_list).

    ``v_list`` holds all previous subspace vectors (v0 first); ``v0`` is
    the cached f(x_k) reused for the difference. The direction carries no
    x_k offset and no h factor; the evaluation point is x_k + eps * d_j
    and v_j = (f(x_k + eps * d_j) - v0) / eps.
    """
    j = len(v_list)
    if not 1 <= j <= params.n - 1:
        raise ValueError(f"layer index {j} out of range for n={params.n}")
    layers, _ = params.blocks_for(iter_index)
    row = layers[j - 1]
    direction = sum(row[l] * v_list[l] for l in range(j))
    point = x_k + cfg.epsilon * direction
    v_new = (f.evaluate(point) - v0) / cfg.epsilon
    return point, v_new


def output_layer(
    params: R2N2Parameters,
    cfg: R2N2Config,
    x_k: np.ndarray,
    v_list: Sequence[np.ndarray],
    iter_index: int = 0,
    h: float | None = None,
) -> np.ndarray:
    """Weighted output step x_{k+1} = x_k + h * sum_j theta_out[j] v_j."""
    if len(v_list) != params.n:
        raise ValueError(f"output layer needs {params.n} subspace vectors, got {len(v_list)}")
    _, out = params.blocks_for(iter_index)
    step = _resolve_h(cfg, h)
    return x_k + step * sum(out[j] * v_list[j] for j in range(params.n))


def forward_pass(
    params: R2N2Parameters,
    cfg: R2N2Config,
    f: ProblemFunction,
    x_k: np.ndarray,
    iter_index: int = 0,
    h: float | None = None,
) -> tuple[np.ndarray, IterationRecord]:
    """One full outer iteration; returns the next iterate and its record."""
    x_k = np.asarray(x_k, dtype=float)
    layers, out = params.blocks_for(iter_index)
    step = _resolve_h(cfg, h)
    fd_mode = cfg.layer_mode == "forward-diff"

    v0 = f.evaluate(x_k)
    subspace = [v0]
    eval_points: list[np.ndarray] = []
    directions: list[np.ndarray] = []
    for j in range(1, params.n):
        row = layers[j - 1]
        direction = sum(row[l] * subspace[l] for l in range(j))
        directions.append(direction)
        if fd_mode:
            point = x_k + cfg.epsilon * direction
            v_new = (f.evaluate(point) - v0) / cfg.epsilon
        else:
            point = x_k + step * direction
            v_new = f.evaluate(point)
        eval_points.append(point)
        subspace.append(v_new)

    x_next = x_k + step * sum(out[j] * subspace[j] for j in range(params.n))
    block_index = (
        0 if params.per_iteration_out is None else min(iter_index, params.num_blocks - 1)
    )
    record = IterationRecord(
        x_start=x_k,
        subspace=tuple(subspace),
        eval_points=tuple(eval_points),
        directions=tuple(directions),
        x_next=x_next,
        block_index=block_index,
        h=step,
    )
    return x_next, record


def rollout(
    params: R2N2Parameters,
    cfg: R2N2Config,
    f: ProblemFunction,
    x0: np.ndarray,
    T: int,
    h: float | None = None,
) -> RolloutTrace:
    """Chain T outer iterations from x0, guarding against blow-up.

    The trace always contains ``||f(x_k)||`` for every iterate reached.
    If a residual norm exceeds the divergence guard (or stops being
    finite), iteration halts there and the trace is flagged.
    """
    if T < 1:
        raise ValueError(f"rollout depth must be at least 1, got {T}")
    x = np.asarray(x0, dtype=float)
    iterates = [x]
    records: list[IterationRecord] = []
    norms: list[float] = []
    diverged = False

    norm0 = float(np.linalg.norm(f.evaluate(x)))
    norms.append(norm0 if not np.isnan(norm0) else float("inf"))
    if not np.isfinite(norm0) or norm0 > DIVERGENCE_GUARD:
        return RolloutTrace(tuple(iterates), (), tuple(norms), diverged=True)

    for k in range(T):
        x, record = forward_pass(params, cfg, f, x, iter_index=k, h=h)
        iterates.append(x)
        records.append(record)
        if np.all(np.isfinite(x)):
            norm_k = float(np.linalg.norm(f.evaluate(x)))
        else:
            norm_k = float("inf")
        norms.append(norm_k if not np.isnan(norm_k) else float("inf"))
        if not np.isfinite(norm_k) or norm_k > DIVERGENCE_GUARD:
            diverged = True
            break
    return RolloutTrace(tuple(iterates), tuple(records), tuple(norms), diverged=diverged)


def _fd_layer_row_to_direct(row: np.ndarray, epsilon: float, h: float) -> np.ndarray:
    new = row / h
    new[0] = (epsilon * row[0] - row[1:].sum()) / h
    return new


def _fd_out_row_to_direct(row: np.ndarray, epsilon: float) -> np.ndarray:
    new = row / epsilon
    new[0] = row[0] - row[1:].sum() / epsilon
    return new


def fd_params_to_direct(params_fd: R2N2Parameters, cfg: R2N2Config) -> R2N2Parameters:
    """Re-express forward-differencing coefficients in direct-evaluation form.

    The returned coefficients make the direct mode evaluate f at exactly
    the same points x_k + eps * d_j as the differencing mode, and recombine
    the raw evaluations so the output step is algebraically identical:
    layer rows become (eps*t[0] - sum(t[1:]), t[1], ..) / h and the output
    row becomes (t[0] - sum(t[1:])/eps, t[1]/eps, ..). Equality of rollout
    outputs is exact in real arithmetic for any f; in doubles the 1/eps
    recombination leaves roundoff of order u/eps relative.
    """
    if cfg.layer_mode != "forward-diff":
        raise ValueError("fd_params_to_direct expects a forward-diff configuration")
    eps = cfg.epsilon

    def conv_layers(rows):
        return tuple(_fd_layer_row_to_direct(np.array(r), eps, cfg.h) for r in rows)

    per_out = None
    per_layers = None
    if params_fd.per_iteration_out is not None:
        per_out = tuple(_fd_out_row_to_direct(np.array(b), eps) for b in params_fd.per_iteration_out)
    if params_fd.per_iteration_layers is not None:
        per_layers = tuple(conv_layers(rows) for rows in params_fd.per_iteration_layers)
    return R2N2Parameters(
        theta_layers=conv_layers(params_fd.theta_layers),
        theta_out=_fd_out_row_to_direct(np.array(params_fd.theta_out), eps),
        per_iteration_out=per_out,
        per_iteration_layers=per_layers,
    )


def param_vector(params: R2N2Parameters) -> np.ndarray:
    """Flatten all trainable coefficients in a fixed documented order.

    Order: shared layer rows (j ascending), shared output row, then per
    block k: its output row, then (if untied) its layer rows.
    """
    chunks = [*params.theta_layers, params.theta_out]
    if params.per_iteration_out is not None:
        for k, out in enumerate(params.per_iteration_out):
            chunks.append(out)
            if params.per_iteration_layers is not None:
                chunks.extend(params.per_iteration_layers[k])
    return np.concatenate([np.ravel(c) for c in chunks]) if chunks else np.zeros(0)


def params_from_vector(vec: np.ndarray, template: R2N2Parameters) -> R2N2Parameters:
    """Rebuild a parameter object with ``template``'s structure from a flat vector."""
    vec = np.asarray(vec, dtype=float)
    pos = 0

    def take(count: int) -> np.ndarray:
        nonlocal pos
        out = vec[pos : pos + count].copy()
        if out.shape[0] != count:
            raise ValueError("vector is shorter than the template structure")
        pos += count
        return out

    layers = tuple(take(row.shape[0]) for row in template.theta_layers)
    out = take(template.theta_out.shape[0])
    per_out = None
    per_layers = None
    if template.per_iteration_out is not None:
        outs = []
        layer_blocks = []
        for k in range(len(template.per_iteration_out)):
            outs.append(take(template.theta_out.shape[0]))
            if template.per_iteration_layers is not None:
                layer_blocks.append(
                    tuple(take(row.shape[0]) for row in template.per_iteration_layers[k])
                )
        per_out = tuple(outs)
        per_layers = tuple(layer_blocks) if template.per_iteration_layers is not None else None
    if pos != vec.shape[0]:
        raise ValueError(
            f"vector has {vec.shape[0]} entries but the template needs {pos}"
        )
    return R2N2Parameters(layers, out, per_out, per_layers)


def zero_gradient(params: R2N2Parameters) -> np.ndarray:
    """Flat zero vector shaped like ``param_vector(params)``."""
    return np.zeros_like(param_vector(params))


def params_to_json(params: R2N2Parameters, cfg: R2N2Config) -> str:
    """JSON text bundling coefficients with their structural config.

    Floats are emitted with Python's shortest round-trip repr, so reload
    is bit exact.
    """
    doc = {
        "n": cfg.n,
        "h": cfg.h,
        "layer_mode": cfg.layer_mode,
        "epsilon": cfg.epsilon,
        "theta_layers": [row.tolist() for row in params.theta_layers],
        "theta_out": params.theta_out.tolist(),
        "per_iteration": None,
    }
    if params.per_iteration_out is not None:
        doc["per_iteration"] = {
            "out": [b.tolist() for b in params.per_iteration_out],
            "layers": (
                [[row.tolist() for row in rows] for rows in params.per_iteration_layers]
                if params.per_iteration_layers is not None
                else None
            ),
        }
    return json.dumps(doc, indent=2)


def params_from_json(text: str) -> tuple[R2N2Parameters, R2N2Config]:
    doc = json.loads(text)
    cfg = R2N2Config(
        n=doc["n"], h=doc["h"], layer_mode=doc["layer_mode"], epsilon=doc["epsilon"]
    )
    per_out = None
    per_layers = None
    if doc.get("per_iteration"):
        per_out = tuple(np.array(b, dtype=float) for b in doc["per_iteration"]["out"])
        raw_layers = doc["per_iteration"].get("layers")
        if raw_layers is not None:
            per_layers = tuple(
                tuple(np.array(r, dtype=float) for r in rows) for rows in raw_layers
            )
    params = R2N2Parameters(
        theta_layers=tuple(np.array(r, dtype=float) for r in doc["theta_layers"]),
        theta_out=np.array(doc["theta_out"], dtype=float),
        per_iteration_out=per_out,
        per_iteration_layers=per_layers,
    )
    if params.n != cfg.n:
        raise ValueError(f"coefficient shape implies n={params.n} but config says {cfg.n}")
    return params, cfg


def save_parameters(params: R2N2Parameters, cfg: R2N2Config, path) -> None:
    with open(path, "w") as fh:
        fh.write(params_to_json(params, cfg))


def load_parameters(path) -> tuple[R2N2Parameters, R2N2Config]:
    with open(path) as fh:
        return params_from_json(fh.read())
