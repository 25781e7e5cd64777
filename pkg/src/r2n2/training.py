"""Losses, the Adam optimizer, and the full-batch training loop.

Loss conventions: a loss sums over the rollout iterates k = 1..T with
per-iteration weights, and every batch loss divides by the number of
samples N. Geometric weights 4^k emphasize late iterates when several
iterations are chained.

Training is plain full-batch Adam from a seeded uniform init; runs are
bit-reproducible given (dataset, config, epochs, seed) in single-threaded
mode. A divergent rollout or non-finite loss halts the run, which is then
flagged rather than silently truncated.
"""

from __future__ import annotations

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .autodiff import DivergedRolloutError, GradientError, ParameterGradient, grad_rollout_loss
from .problems import Dataset, ProblemInstance
from .superstructure import (
    ProblemFunction,
    R2N2Config,
    R2N2Parameters,
    RolloutTrace,
    init_parameters,
    param_vector,
    params_from_vector,
    params_to_json,
    rollout,
)

__all__ = [
    "LOSS_KINDS",
    "LossSpec",
    "geometric_weights",
    "loss_residual",
    "loss_target",
    "loss_integration",
    "loss_final_iterate",
    "AdamState",
    "adam_step",
    "TrainSettings",
    "TrainingRun",
    "train",
    "evaluate_loss",
    "training_run_manifest",
    "history_csv",
    "save_training_run",
]

LOSS_KINDS = ("residual", "target", "integration", "final-residual")


def geometric_weights(T: int, base: float = 4.0) -> tuple[float, ...]:
    """Late-iterate emphasis w_k = base^k for k = 1..T."""
    if T < 1:
        raise ValueError(f"horizon must be positive, got {T}")
    return tuple(float(base**k) for k in range(1, T + 1))


@dataclass(frozen=True)
class LossSpec:
    """Which objective to roll out and how to weight its iterates.

    kind:
      residual        sum_k w_k ||f(x_k)||^2
      target          sum_k w_k ||x_k - t_k||^2
      integration     sum_k ||x_k - t_k||^2 / h^order (local-error scaling)
      final-residual  ||f(x_T)||^2
    ``order`` is only meaningful for the integration kind and defaults to
    the superstructure depth n at the call site.
    """

    kind: str
    T: int
    weights: tuple[float, ...] | None = None
    order: int | None = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"kind must be one of {LOSS_KINDS}, got {self.kind!r}")
        if self.T < 1:
            raise ValueError(f"horizon must be positive, got {self.T}")
        if self.weights is not None:
            if len(self.weights) != self.T:
                raise ValueError(
                    f"need {self.T} iteration weights, got {len(self.weights)}"
                )
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.kind == "integration" and self.order is not None and self.order < 0:
            raise ValueError(f"order must be nonnegative, got {self.order}")

    def resolved_weights(self) -> tuple[float, ...]:
        return self.weights if self.weights is not None else (1.0,) * self.T

    def _check_trace(self, trace: RolloutTrace):
        if trace.depth != self.T:
            raise ValueError(f"trace depth {trace.depth} does not match horizon {self.T}")

    def _targets_or_raise(self, targets) -> list[np.ndarray]:
        if targets is None:
            raise ValueError(f"loss kind {self.kind!r} needs iterate targets")
        targets = [np.asarray(t, dtype=float) for t in targets]
        if len(targets) != self.T:
            raise ValueError(f"need {self.T} targets, got {len(targets)}")
        return targets

    def _order_or_raise(self) -> int:
        if self.order is None:
            raise ValueError("integration loss needs an explicit order exponent")
        return self.order

    def sample_value(
        self,
        trace: RolloutTrace,
        f: ProblemFunction,
        targets: Sequence[np.ndarray] | None = None,
        h: float | None = None,
    ) -> float:
        """Un-normalized loss contribution of one sample."""
        self._check_trace(trace)
        if self.kind == "residual":
            w = self.resolved_weights()
            return float(
                sum(w[k] * trace.residual_norms[k + 1] ** 2 for k in range(self.T))
            )
        if self.kind == "final-residual":
            return float(trace.residual_norms[self.T] ** 2)
        targets = self._targets_or_raise(targets)
        if self.kind == "target":
            w = self.resolved_weights()
            return float(
                sum(
                    w[k] * np.sum((trace.iterates[k + 1] - targets[k]) ** 2)
                    for k in range(self.T)
                )
            )
        # integration: local-error scaling by the sample's step size
        if h is None:
            raise ValueError("integration loss needs the sample step size h")
        p = self._order_or_raise()
        scale = float(h) ** p
        return float(
            sum(np.sum((trace.iterates[k + 1] - targets[k]) ** 2) for k in range(self.T))
            / scale
        )

    def sample_iterate_grads(
        self,
        trace: RolloutTrace,
        f: ProblemFunction,
        targets: Sequence[np.ndarray] | None = None,
        h: float | None = None,
    ) -> list[np.ndarray]:
        """d(sample loss)/d(x_k) for k = 1..T."""
        self._check_trace(trace)
        if self.kind == "residual":
            w = self.resolved_weights()
            return [
                2.0
                * w[k]
                * (f.jacobian(trace.iterates[k + 1]).T @ f.evaluate(trace.iterates[k + 1]))
                for k in range(self.T)
            ]
        if self.kind == "final-residual":
            grads = [np.zeros_like(trace.iterates[k + 1]) for k in range(self.T)]
            xT = trace.iterates[self.T]
            grads[-1] = 2.0 * (f.jacobian(xT).T @ f.evaluate(xT))
            return grads
        targets = self._targets_or_raise(targets)
        if self.kind == "target":
            w = self.resolved_weights()
            return [
                2.0 * w[k] * (trace.iterates[k + 1] - targets[k]) for k in range(self.T)
            ]
        if h is None:
            raise ValueError("integration loss needs the sample step size h")
        scale = float(h) ** self._order_or_raise()
        return [2.0 * (trace.iterates[k + 1] - targets[k]) / scale for k in range(self.T)]


def _mean_over(values: Sequence[float]) -> float:
    if not values:
        raise ValueError("cannot average an empty batch")
    return float(np.mean(values))


def loss_residual(
    traces: Sequence[RolloutTrace],
    problems: Sequence[ProblemFunction],
    weights: Sequence[float],
) -> float:
    """Batch residual loss (1/N) sum_i sum_k w_k ||f_i(x_ik)||^2."""
    if not traces:
        raise ValueError("cannot average an empty batch")
    if len(traces) != len(problems):
        raise ValueError("need one problem per trace")
    T = traces[0].depth
    spec = LossSpec("residual", T, tuple(weights))
    return _mean_over([spec.sample_value(tr, f) for tr, f in zip(traces, problems)])


def loss_target(
    traces: Sequence[RolloutTrace],
    targets: Sequence[Sequence[np.ndarray]],
    weights: Sequence[float],
) -> float:
    """Batch target-tracking loss (1/N) sum_i sum_k w_k ||x_ik - t_ik||^2."""
    if not traces:
        raise ValueError("cannot average an empty batch")
    if len(traces) != len(targets):
        raise ValueError("need one target sequence per trace")
    T = traces[0].depth
    spec = LossSpec("target", T, tuple(weights))
    return _mean_over(
        [spec.sample_value(tr, None, targets=t) for tr, t in zip(traces, targets)]
    )


def loss_integration(
    traces: Sequence[RolloutTrace],
    targets: Sequence[Sequence[np.ndarray]],
    h_list: Sequence[float],
    p: int,
) -> float:
    """Batch local-error loss (1/N) sum_i sum_k ||x_ik - t_ik||^2 / h_i^p.

    Equals loss_target with per-sample weights 1/h_i^p.
    """
    if not traces:
        raise ValueError("cannot average an empty batch")
    if not (len(traces) == len(targets) == len(h_list)):
        raise ValueError("traces, targets, and step sizes must align")
    T = traces[0].depth
    spec = LossSpec("integration", T, order=p)
    return _mean_over(
        [
            spec.sample_value(tr, None, targets=t, h=h_i)
            for tr, t, h_i in zip(traces, targets, h_list)
        ]
    )


def loss_final_iterate(
    traces: Sequence[RolloutTrace], problems: Sequence[ProblemFunction]
) -> float:
    """Batch final-iterate residual loss (1/N) sum_i ||f_i(x_iT)||^2."""
    if not traces:
        raise ValueError("cannot average an empty batch")
    if len(traces) != len(problems):
        raise ValueError("need one problem per trace")
    T = traces[0].depth
    spec = LossSpec("final-residual", T)
    return _mean_over([spec.sample_value(tr, f) for tr, f in zip(traces, problems)])


@dataclass
class AdamState:
    """First/second-moment accumulators with bias correction."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = field(default_factory=lambda: np.zeros(0))
    v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    t: int = 0

    @classmethod
    def create(cls, dim: int, lr: float = 0.001, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps,
                   m=np.zeros(dim), v=np.zeros(dim), t=0)

    def update(self, vec: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self.m.shape != vec.shape:
            raise ValueError(
                f"optimizer state dimension {self.m.shape} does not match parameters {vec.shape}"
            )
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return vec - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def adam_step(
    state: AdamState, params: R2N2Parameters, grad: ParameterGradient
) -> R2N2Parameters:
    """One optimizer update; mutates ``state`` and returns new parameters."""
    new_vec = state.update(param_vector(params), grad.as_vector())
    return params_from_vector(new_vec, params)


@dataclass(frozen=True)
class TrainSettings:
    """Everything about a run that is not structural or data."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    init_scale: float = 0.1
    eval_every: int = 1
    batch_size: int | None = None
    num_blocks: int | None = None
    per_iteration_layers: bool = False
    threads: int = 1
    initial_params: R2N2Parameters | None = None

    def __post_init__(self):
        if self.eval_every < 1:
            raise ValueError("eval_every must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive when given")


@dataclass(frozen=True)
class TrainingRun:
    """Trained parameters plus the full loss history and provenance."""

    params: R2N2Parameters
    cfg: R2N2Config
    history: tuple[tuple[int, float, float], ...]  # (epoch, train, test-or-nan)
    seed: int
    epochs: int
    diverged: bool
    metadata: dict = field(default_factory=dict)


def _instance_targets(targets, idx):
    return None if targets is None else targets[idx]


def evaluate_loss(
    params: R2N2Parameters,
    cfg: R2N2Config,
    instances: Sequence[ProblemInstance],
    spec: LossSpec,
    targets: Sequence[Sequence[np.ndarray]] | None = None,
) -> float:
    """(1/N)-normalized loss of forward rollouts over ``instances``.

    ``targets`` aligns with ``instances`` when the loss kind needs them.
    Divergent rollouts raise DivergedRolloutError.
    """
    values = []
    for i, inst in enumerate(instances):
        trace = rollout(params, cfg, inst.problem, inst.x0, spec.T, h=inst.h)
        if trace.diverged or trace.depth < spec.T:
            raise DivergedRolloutError(f"evaluation rollout diverged on sample {i}")
        values.append(
            spec.sample_value(trace, inst.problem, targets=_instance_targets(targets, i), h=inst.h)
        )
    return _mean_over(values)


def train(
    dataset: Dataset,
    cfg: R2N2Config,
    spec: LossSpec,
    epochs: int,
    seed: int,
    settings: TrainSettings | None = None,
    targets: Sequence[Sequence[np.ndarray]] | None = None,
) -> TrainingRun:
    """Full-batch Adam training of the superstructure on a dataset.

    ``targets`` aligns with ``dataset.instances`` (not just the training
    split) for target-type losses. The run history holds one row per
    completed epoch; the test column is NaN on epochs where evaluation was
    skipped (``eval_every``). A divergent rollout or non-finite loss stops
    the run and flags it.
    """
    settings = settings or TrainSettings()
    if epochs < 0:
        raise ValueError(f"epochs must be nonnegative, got {epochs}")
    if settings.num_blocks is not None and not (1 <= settings.num_blocks <= spec.T):
        # blocks beyond the horizon would never be visited and thus never trained
        raise ValueError(
            f"num_blocks must be in 1..{spec.T} for horizon T={spec.T}, "
            f"got {settings.num_blocks}"
        )

    rng = np.random.default_rng(seed)
    init_seed = int(rng.integers(0, 2**63 - 1))
    params = settings.initial_params or init_parameters(
        cfg,
        init_seed,
        scale=settings.init_scale,
        num_blocks=settings.num_blocks,
        per_iteration_layers=settings.per_iteration_layers,
    )
    adam = AdamState.create(
        param_vector(params).shape[0],
        lr=settings.lr,
        beta1=settings.beta1,
        beta2=settings.beta2,
        eps=settings.adam_eps,
    )

    train_idx = list(dataset.train_indices)
    test_instances = dataset.test
    test_targets = (
        None if targets is None else [targets[i] for i in dataset.test_indices]
    )

    def sample_grad(idx: int):
        inst = dataset.instances[idx]
        return grad_rollout_loss(
            params, cfg, inst.problem, inst.x0, spec.T, spec,
            targets=_instance_targets(targets, idx), h=inst.h,
        )

    history: list[tuple[int, float, float]] = []
    diverged = False
    pool = ThreadPoolExecutor(settings.threads) if settings.threads > 1 else None
    try:
        for epoch in range(epochs):
            if settings.batch_size is None:
                batch = train_idx
            else:
                picked = rng.choice(len(train_idx), size=min(settings.batch_size, len(train_idx)), replace=False)
                batch = [train_idx[i] for i in picked]
            try:
                if pool is not None:
                    results = list(pool.map(sample_grad, batch))
                else:
                    results = [sample_grad(i) for i in batch]
            except (DivergedRolloutError, GradientError):
                diverged = True
                break
            train_loss = float(np.mean([v for v, _ in results]))
            grad_vec = np.mean([g.as_vector() for _, g in results], axis=0)
            if not (np.isfinite(train_loss) and np.all(np.isfinite(grad_vec))):
                diverged = True
                break

            test_loss = float("nan")
            if test_instances and (epoch % settings.eval_every == 0 or epoch == epochs - 1):
                try:
                    test_loss = evaluate_loss(
                        params, cfg, test_instances, spec, targets=test_targets
                    )
                except DivergedRolloutError:
                    test_loss = float("inf")
            history.append((epoch, train_loss, test_loss))

            new_vec = adam.update(param_vector(params), grad_vec)
            params = params_from_vector(new_vec, params)
    finally:
        if pool is not None:
            pool.shutdown(wait=True)

    return TrainingRun(
        params=params,
        cfg=cfg,
        history=tuple(history),
        seed=seed,
        epochs=epochs,
        diverged=diverged,
        metadata={
            "loss_kind": spec.kind,
            "horizon": spec.T,
            "weights": list(spec.resolved_weights()) if spec.kind in ("residual", "target") else None,
            "order": spec.order,
            "dataset_seed": dataset.seed,
            "dataset_tag": dataset.generator_tag,
            "dataset_params": dataset.params,
            "normalization": "all losses divided by sample count N",
            "lr": settings.lr,
            "init_scale": settings.init_scale,
            "batch": "full" if settings.batch_size is None else settings.batch_size,
            "num_blocks": settings.num_blocks,
            "per_iteration_layers": settings.per_iteration_layers,
        },
    )


def training_run_manifest(run: TrainingRun) -> str:
    """JSON manifest (without the bulky history, which goes to CSV)."""
    doc = {
        "seed": run.seed,
        "epochs": run.epochs,
        "completed_epochs": len(run.history),
        "diverged": run.diverged,
        "final_train_loss": run.history[-1][1] if run.history else None,
        "metadata": run.metadata,
        "parameters": json.loads(params_to_json(run.params, run.cfg)),
    }
    return json.dumps(doc, indent=2)


def history_csv(run: TrainingRun) -> str:
    """Loss history as CSV text with columns epoch,train_loss,test_loss."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "test_loss"])
    for epoch, tr, te in run.history:
        writer.writerow([epoch, repr(tr), "" if np.isnan(te) else repr(te)])
    return buf.getvalue()


def save_training_run(run: TrainingRun, out_dir: str, stem: str = "training") -> dict:
    """Write manifest, history CSV, and parameters; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "manifest": os.path.join(out_dir, f"{stem}_manifest.json"),
        "history": os.path.join(out_dir, f"{stem}_history.csv"),
        "params": os.path.join(out_dir, f"{stem}_params.json"),
    }
    with open(paths["manifest"], "w") as fh:
        fh.write(training_run_manifest(run))
    with open(paths["history"], "w") as fh:
        fh.write(history_csv(run))
    with open(paths["params"], "w") as fh:
        fh.write(params_to_json(run.params, run.cfg))
    return paths
