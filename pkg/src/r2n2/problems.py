"""Problem families, benchmark data, and dataset generation.

Three families drive everything downstream:

* symmetric linear systems ``A x = b`` (root function ``A x - b``),
* Chandrasekhar's H-equation discretized by the midpoint rule,
* the van der Pol oscillator as an initial-value problem.

Each problem object exposes ``evaluate`` / ``jacobian`` / ``dim`` so the
solver stack never needs to know which family it is running on. Datasets
bundle problem instances with a reproducible 70/30 split; every random
draw goes through a seeded PCG64 generator and the generator name is
recorded alongside the data.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._builtin_data import (
    B_TILDE,
    BUILTIN_MATRIX_IDS,
    SPECTRUM_SHIFT,
    builtin_matrix_raw,
)

__all__ = [
    "GENERATOR_TAG",
    "BUILTIN_MATRIX_IDS",
    "ChandrasekharPoleError",
    "LinearProblem",
    "ChandrasekharProblem",
    "VanDerPolProblem",
    "ProblemInstance",
    "Dataset",
    "builtin_matrix",
    "builtin_b_tilde",
    "spectrum_shift",
    "gen_linear_matrix",
    "gen_uniform_symmetric",
    "sample_rhs",
    "chandrasekhar_matrix",
    "chandrasekhar_residual",
    "chandrasekhar_jacobian",
    "vdp_rhs",
    "vdp_jacobian",
    "embed_problem",
    "split_indices",
    "make_linear_dataset",
    "gen_chandrasekhar_dataset",
    "gen_ivp_dataset",
    "dataset_to_json",
    "dataset_from_json",
]

# Bit generator + transform family used for every dataset draw. PCG64 is
# numpy's default 64-bit generator; normals use its ziggurat sampler.
GENERATOR_TAG = "numpy-pcg64-ziggurat"

_ORTHO_TOL = 1e-10


class ChandrasekharPoleError(ValueError):
    """The H-equation residual was evaluated exactly on a pole."""

    def __init__(self, components: Sequence[int]):
        self.components = tuple(int(i) for i in components)
        super().__init__(
            "H-equation residual has a pole at component(s) "
            f"{self.components}: (A_c x)_j = 1"
        )


def builtin_matrix(matrix_id: str) -> np.ndarray:
    """One of the benchmark matrices A1..A19 (always a fresh copy)."""
    return builtin_matrix_raw(matrix_id)


def builtin_b_tilde() -> np.ndarray:
    """Center of the benchmark right-hand-side distribution."""
    return np.array(B_TILDE, dtype=float)


def spectrum_shift() -> np.ndarray:
    """Diagonal shift vector that generates A4-A7 from A1."""
    return np.array(SPECTRUM_SHIFT, dtype=float)


def gen_linear_matrix(dim: int, sigma: float, lambdas: Sequence[float], seed: int) -> np.ndarray:
    """Random SPD-leaning test matrix: G^T G + diag(lambdas).

    G has independent N(0, sigma^2) entries (sigma is the standard
    deviation). This is the recipe behind A1-A3 and A12-A19.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    if lambdas.shape != (dim,):
        raise ValueError(f"lambdas must have length {dim}, got shape {lambdas.shape}")
    rng = np.random.default_rng(seed)
    G = rng.normal(0.0, sigma, size=(dim, dim))
    return G.T @ G + np.diag(lambdas)


def gen_uniform_symmetric(dim: int, sigma: float, seed: int) -> np.ndarray:
    """Random symmetric PSD matrix U U^T with U entries ~ U(0, sigma).

    The recipe behind A8-A11 (where sigma itself was drawn from U(0, 5)).
    """
    rng = np.random.default_rng(seed)
    U = rng.uniform(0.0, sigma, size=(dim, dim))
    return U @ U.T


def sample_rhs(center: Sequence[float], width: float, count: int, seed: int) -> np.ndarray:
    """count right-hand sides: center + U(-width, width) per entry.

    Returns an array of shape (count, len(center)).
    """
    center = np.asarray(center, dtype=float)
    if center.ndim != 1:
        raise ValueError("center must be a vector")
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    rng = np.random.default_rng(seed)
    return center[None, :] + rng.uniform(-width, width, size=(count, center.shape[0]))


def chandrasekhar_matrix(c: float, m: int) -> np.ndarray:
    """Midpoint-rule kernel matrix of the H-equation.

    Nodes mu_i = (i - 1/2)/m for i = 1..m; entry (j, i) equals
    c * mu_j / (2 m (mu_j + mu_i)). c is the scattering albedo, m the
    quadrature resolution.
    """
    if m < 1:
        raise ValueError(f"quadrature resolution must be positive, got {m}")
    mu = (np.arange(1, m + 1) - 0.5) / m
    return c * mu[:, None] / (2.0 * m * (mu[:, None] + mu[None, :]))


def chandrasekhar_residual(kernel: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Root-form residual x_j - 1/(1 - (A_c x)_j) of the H-equation."""
    x = np.asarray(x, dtype=float)
    denom = 1.0 - kernel @ x
    poles = np.flatnonzero(denom == 0.0)
    if poles.size:
        raise ChandrasekharPoleError(poles)
    return x - 1.0 / denom


def chandrasekhar_jacobian(kernel: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Jacobian of the H-equation residual: I - A_c[j,i] / (1 - (A_c x)_j)^2."""
    x = np.asarray(x, dtype=float)
    denom = 1.0 - kernel @ x
    poles = np.flatnonzero(denom == 0.0)
    if poles.size:
        raise ChandrasekharPoleError(poles)
    J = -kernel / (denom**2)[:, None]
    J[np.diag_indices_from(J)] += 1.0
    return J


def vdp_rhs(damping: float, x: np.ndarray) -> np.ndarray:
    """Van der Pol vector field (x1' = x2, x2' = a(1 - x1^2) x2 - x1)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError(f"van der Pol state must have shape (2,), got {x.shape}")
    return np.array([x[1], damping * (1.0 - x[0] ** 2) * x[1] - x[0]])


def vdp_jacobian(damping: float, x: np.ndarray) -> np.ndarray:
    """Jacobian of the van der Pol vector field."""
    x = np.asarray(x, dtype=float)
    if x.shape != (2,):
        raise ValueError(f"van der Pol state must have shape (2,), got {x.shape}")
    return np.array(
        [
            [0.0, 1.0],
            [-2.0 * damping * x[0] * x[1] - 1.0, damping * (1.0 - x[0] ** 2)],
        ]
    )


@dataclass(frozen=True)
class LinearProblem:
    """Root function A x - b of a linear system."""

    A: np.ndarray
    b: np.ndarray
    label: str = ""

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"matrix must be square, got shape {A.shape}")
        if b.shape != (A.shape[0],):
            raise ValueError(f"rhs shape {b.shape} does not match matrix {A.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return self.A @ x - self.b

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return self.A


@dataclass(frozen=True)
class ChandrasekharProblem:
    """H-equation residual at fixed albedo c and resolution m."""

    c: float
    m: int
    kernel: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, c: float, m: int) -> "ChandrasekharProblem":
        return cls(c=c, m=m, kernel=chandrasekhar_matrix(c, m))

    @property
    def dim(self) -> int:
        return self.m

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return chandrasekhar_residual(self.kernel, x)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return chandrasekhar_jacobian(self.kernel, x)


@dataclass(frozen=True)
class VanDerPolProblem:
    """Van der Pol vector field at a fixed damping coefficient."""

    damping: float

    @property
    def dim(self) -> int:
        return 2

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        return vdp_rhs(self.damping, x)

    def jacobian(self, x: np.ndarray) -> np.ndarray:
        return vdp_jacobian(self.damping, x)


AnyProblem = LinearProblem | ChandrasekharProblem | VanDerPolProblem


@dataclass(frozen=True)
class ProblemInstance:
    """One dataset sample: a problem plus its starting point and step scale.

    ``h`` is the superstructure's step-size parameter; it is 1 for root
    finding and the integration step for IVP instances.
    """

    problem: AnyProblem
    x0: np.ndarray
    h: float = 1.0
    label: str = ""

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.problem.dim,):
            raise ValueError(
                f"x0 shape {x0.shape} does not match problem dimension {self.problem.dim}"
            )
        object.__setattr__(self, "x0", x0)


@dataclass(frozen=True)
class Dataset:
    """Problem instances plus a frozen train/test split."""

    instances: tuple[ProblemInstance, ...]
    train_indices: tuple[int, ...]
    test_indices: tuple[int, ...]
    seed: int
    generator_tag: str = GENERATOR_TAG
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.instances)
        combined = sorted(self.train_indices) + sorted(self.test_indices)
        if sorted(combined) != list(range(n)):
            raise ValueError("split indices must partition the instance list")

    @property
    def train(self) -> tuple[ProblemInstance, ...]:
        return tuple(self.instances[i] for i in self.train_indices)

    @property
    def test(self) -> tuple[ProblemInstance, ...]:
        return tuple(self.instances[i] for i in self.test_indices)


def split_indices(count: int, seed: int, train_fraction: float = 0.7) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Shuffled train/test index split; train size is rounded down."""
    if count < 1:
        raise ValueError("cannot split an empty dataset")
    rng = np.random.default_rng(seed)
    order = rng.permutation(count)
    n_train = int(train_fraction * count)
    return tuple(int(i) for i in order[:n_train]), tuple(int(i) for i in order[n_train:])


def _derive_seed(seed: int, tag: str) -> int:
    """Stable sub-seed so each generation stage has an independent stream."""
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_linear_dataset(
    matrix_ids: Sequence[str],
    num_rhs: int,
    width: float,
    seed: int,
    center: Sequence[float] | None = None,
) -> Dataset:
    """Cross product of builtin matrices with perturbed right-hand sides.

    Every matrix is paired with the same ``num_rhs`` sampled right-hand
    sides; the starting iterate is always the origin.
    """
    center_vec = builtin_b_tilde() if center is None else np.asarray(center, dtype=float)
    rhs = sample_rhs(center_vec, width, num_rhs, _derive_seed(seed, "rhs"))
    instances = []
    for matrix_id in matrix_ids:
        A = builtin_matrix(matrix_id)
        if A.shape[0] != center_vec.shape[0]:
            raise ValueError(f"{matrix_id} dimension does not match rhs center")
        for i in range(num_rhs):
            problem = LinearProblem(A, rhs[i], label=matrix_id)
            instances.append(
                ProblemInstance(problem, np.zeros(A.shape[0]), h=1.0, label=f"{matrix_id}/b{i}")
            )
    train, test = split_indices(len(instances), _derive_seed(seed, "split"))
    return Dataset(
        instances=tuple(instances),
        train_indices=train,
        test_indices=test,
        seed=seed,
        params={
            "family": "linear",
            "matrix_ids": list(matrix_ids),
            "num_rhs": num_rhs,
            "width": width,
            "center": [float(v) for v in center_vec],
        },
    )


def gen_chandrasekhar_dataset(
    ms: Sequence[int],
    cs: Sequence[float],
    samples_per: int,
    seed: int,
) -> Dataset:
    """H-equation instances over a (resolution, albedo) grid.

    Starting points are drawn per instance as 1 + N(0, 0.2^2) per
    component (0.2 is the per-component standard deviation).
    """
    if samples_per < 1:
        raise ValueError("samples_per must be positive")
    rng = np.random.default_rng(_derive_seed(seed, "x0"))
    instances = []
    for m, c in itertools.product(ms, cs):
        problem = ChandrasekharProblem.build(c, m)
        for i in range(samples_per):
            x0 = 1.0 + 0.2 * rng.standard_normal(m)
            instances.append(
                ProblemInstance(problem, x0, h=1.0, label=f"m{m}/c{c:g}/s{i}")
            )
    train, test = split_indices(len(instances), _derive_seed(seed, "split"))
    return Dataset(
        instances=tuple(instances),
        train_indices=train,
        test_indices=test,
        seed=seed,
        params={
            "family": "chandrasekhar",
            "ms": [int(m) for m in ms],
            "cs": [float(c) for c in cs],
            "samples_per": samples_per,
        },
    )


def gen_ivp_dataset(count: int, seed: int) -> Dataset:
    """Van der Pol IVP instances with varied damping, start, and step.

    Damping ~ U(1.35, 1.65), x1(0) ~ U(-4, -3), x2(0) ~ U(0, 2); the step
    sizes sit on an equidistant grid over [0.01, 0.1].
    """
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(_derive_seed(seed, "ivp"))
    damping = rng.uniform(1.35, 1.65, size=count)
    x1 = rng.uniform(-4.0, -3.0, size=count)
    x2 = rng.uniform(0.0, 2.0, size=count)
    steps = np.linspace(0.01, 0.1, count) if count > 1 else np.array([0.01])
    instances = []
    for i in range(count):
        problem = VanDerPolProblem(damping=float(damping[i]))
        instances.append(
            ProblemInstance(
                problem,
                np.array([x1[i], x2[i]]),
                h=float(steps[i]),
                label=f"vdp{i}",
            )
        )
    train, test = split_indices(count, _derive_seed(seed, "split"))
    return Dataset(
        instances=tuple(instances),
        train_indices=train,
        test_indices=test,
        seed=seed,
        params={"family": "vdp-ivp", "count": count},
    )


def embed_problem(problem: LinearProblem, Q: np.ndarray) -> LinearProblem:
    """Rotate a zero-padded copy of a linear problem into a larger space.

    Returns the problem (Q Abar Q^T, Q bbar) where Abar/bbar are the
    inputs padded with zeros to Q's dimension. Q must be orthogonal to
    1e-10 in the max norm.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"Q must be square, got shape {Q.shape}")
    big = Q.shape[0]
    if big < problem.dim:
        raise ValueError(
            f"embedding dimension {big} is smaller than the problem dimension {problem.dim}"
        )
    defect = np.abs(Q.T @ Q - np.eye(big)).max()
    if defect > _ORTHO_TOL:
        raise ValueError(f"Q is not orthogonal: max |Q^T Q - I| = {defect:.3e}")
    A_pad = np.zeros((big, big))
    A_pad[: problem.dim, : problem.dim] = problem.A
    b_pad = np.zeros(big)
    b_pad[: problem.dim] = problem.b
    label = f"{problem.label}-embedded{big}" if problem.label else f"embedded{big}"
    return LinearProblem(Q @ A_pad @ Q.T, Q @ b_pad, label=label)


def _instance_to_json(inst: ProblemInstance) -> dict:
    p = inst.problem
    if isinstance(p, LinearProblem):
        return {
            "kind": "linear",
            "label": inst.label,
            "matrix": p.A.tolist(),
            "rhs": p.b.tolist(),
            "matrix_label": p.label,
        }
    if isinstance(p, ChandrasekharProblem):
        return {
            "kind": "chandrasekhar",
            "label": inst.label,
            "c": p.c,
            "m": p.m,
            "x0": inst.x0.tolist(),
        }
    if isinstance(p, VanDerPolProblem):
        return {
            "kind": "vdp",
            "label": inst.label,
            "damping": p.damping,
            "x0": inst.x0.tolist(),
            "h": inst.h,
        }
    raise TypeError(f"cannot serialize problem of type {type(p).__name__}")


def _instance_from_json(rec: dict) -> ProblemInstance:
    kind = rec["kind"]
    if kind == "linear":
        problem = LinearProblem(
            np.array(rec["matrix"], dtype=float),
            np.array(rec["rhs"], dtype=float),
            label=rec.get("matrix_label", ""),
        )
        return ProblemInstance(problem, np.zeros(problem.dim), h=1.0, label=rec.get("label", ""))
    if kind == "chandrasekhar":
        problem = ChandrasekharProblem.build(rec["c"], rec["m"])
        return ProblemInstance(
            problem, np.array(rec["x0"], dtype=float), h=1.0, label=rec.get("label", "")
        )
    if kind == "vdp":
        problem = VanDerPolProblem(damping=rec["damping"])
        return ProblemInstance(
            problem,
            np.array(rec["x0"], dtype=float),
            h=rec["h"],
            label=rec.get("label", ""),
        )
    raise ValueError(f"unknown instance kind {kind!r}")


def dataset_to_json(dataset: Dataset) -> str:
    """Self-contained JSON text for a dataset (floats round-trip exactly)."""
    doc = {
        "generator_tag": dataset.generator_tag,
        "seed": dataset.seed,
        "params": dataset.params,
        "instances": [_instance_to_json(i) for i in dataset.instances],
        "split": {
            "train": list(dataset.train_indices),
            "test": list(dataset.test_indices),
        },
    }
    return json.dumps(doc, indent=2)


def dataset_from_json(text: str) -> Dataset:
    doc = json.loads(text)
    return Dataset(
        instances=tuple(_instance_from_json(r) for r in doc["instances"]),
        train_indices=tuple(doc["split"]["train"]),
        test_indices=tuple(doc["split"]["test"]),
        seed=doc["seed"],
        generator_tag=doc["generator_tag"],
        params=doc.get("params", {}),
    )
