"""
Synthetic learning problems: a heterogeneous quadratic with known smoothness
and optimum, and a Gaussian-mixture classification task trained with
multinomial logistic regression on non-IID client shards.
"""

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, replace
from inspect import Parameter
from pathlib import Path
from typing import Protocol

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .aggregators import UpdateKind
from .core import GradVec, as_grad_vec
from .registry import Registry

Labels = NDArray[np.int64]
Features = NDArray[np.float64]


class Task(Protocol):
    @property
    def d(self) -> int: ...
    @property
    def n(self) -> int: ...
    def initial_model(self) -> GradVec: ...
    def loss(self, w: GradVec) -> float: ...
    def full_gradient(self, w: GradVec) -> GradVec: ...
    def client_gradient(self, client: int, w: GradVec, batch_size: int | None, rng: np.random.Generator) -> GradVec: ...
    def evaluate_error(self, w: GradVec) -> float: ...


@dataclass(frozen=True)
class QuadraticTask:
    """
    f_i(w) = ½ (w - b_i)ᵀ A (w - b_i) with diagonal A; f is the client average.
    The minimizer is the mean target and f* follows in closed form.
    """
    curvature: NDArray[np.float64]
    targets: NDArray[np.float64]
    noise: float = 0.0
    start: NDArray[np.float64] | None = None

    def __post_init__(self):
        if self.curvature.ndim != 1 or not np.all(self.curvature > 0):
            raise ValueError("curvature must be a positive diagonal")
        if self.targets.ndim != 2 or self.targets.shape[1] != self.curvature.shape[0]:
            raise ValueError(f"targets must be (n, d={self.curvature.shape[0]}), got {self.targets.shape}")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")

    @classmethod
    def generate(
        cls,
        n: int,
        d: int,
        radius: float = 1.0,
        curvature: tuple[float, float] = (1.0, 1.0),
        noise: float = 0.0,
        offset: float = 0.0,
        seed: int = 0,
    ) -> 'QuadraticTask':
        """
        Client targets on a sphere of `radius` around a common center; a larger
        radius means more sign disagreement between clients. The start point
        sits `offset` away from the optimum along every coordinate.
        """
        rng = np.random.default_rng(seed)
        center = rng.normal(0.0, 1.0, size=d)
        directions = rng.normal(0.0, 1.0, size=(n, d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        targets = center + radius * directions
        low, high = curvature
        diag = rng.uniform(low, high, size=d) if high > low else np.full(d, float(low))
        start = targets.mean(axis=0) + offset
        return cls(curvature=diag, targets=targets, noise=noise, start=start)

    @property
    def d(self) -> int:
        return self.curvature.shape[0]

    @property
    def n(self) -> int:
        return self.targets.shape[0]

    @property
    def smoothness(self) -> float:
        """Lipschitz constant of ∇f."""
        return float(np.max(self.curvature))

    @property
    def minimizer(self) -> GradVec:
        return self.targets.mean(axis=0)

    @property
    def optimum(self) -> float:
        return self.loss(self.minimizer)

    def initial_model(self) -> GradVec:
        return np.zeros(self.d) if self.start is None else self.start.copy()

    def loss(self, w: GradVec) -> float:
        residuals = w - self.targets
        return float(np.mean(0.5 * np.sum(residuals * residuals * self.curvature, axis=1)))

    def full_gradient(self, w: GradVec) -> GradVec:
        return self.curvature * (w - self.minimizer)

    def client_gradient(self, client: int, w: GradVec, batch_size: int | None, rng: np.random.Generator) -> GradVec:
        exact = self.curvature * (w - self.targets[client])
        if batch_size is None or self.noise == 0:
            return exact
        # Batch noise shrinks with the batch like a sample mean would
        return exact + rng.normal(0.0, self.noise / np.sqrt(batch_size), size=self.d)

    def evaluate_error(self, w: GradVec) -> float:
        """Suboptimality f(w) - f*, standing in for test error."""
        return self.loss(w) - self.optimum


@dataclass(frozen=True)
class ClassificationTask:
    """
    C-class Gaussian mixture, multinomial logistic regression without bias.
    The model is the (C, p) weight matrix flattened, so d = C·p.
    """
    classes: int
    train_x: Features
    train_y: Labels
    test_x: Features
    test_y: Labels
    shards: tuple[NDArray[np.int64], ...]
    labels: tuple[Labels, ...]

    @classmethod
    def generate(
        cls,
        n: int,
        classes: int = 10,
        features: int = 20,
        train_size: int = 6000,
        test_size: int = 2000,
        separation: float = 1.0,
        scale: float = 1.0,
        q: float = 0.5,
        seed: int = 0,
    ) -> 'ClassificationTask':
        rng = np.random.default_rng(seed)
        means = rng.normal(0.0, separation, size=(classes, features))

        def draw(size: int) -> tuple[Features, Labels]:
            y = rng.integers(0, classes, size=size)
            x = means[y] + rng.normal(0.0, scale, size=(size, features))
            return x, y.astype(np.int64)

        train_x, train_y = draw(train_size)
        test_x, test_y = draw(test_size)
        shards = partition_noniid(train_y, n, q, classes, seed)
        return cls(
            classes=classes,
            train_x=train_x,
            train_y=train_y,
            test_x=test_x,
            test_y=test_y,
            shards=tuple(shards),
            labels=tuple(train_y[shard] for shard in shards),
        )

    @property
    def features(self) -> int:
        return self.train_x.shape[1]

    @property
    def d(self) -> int:
        return self.classes * self.features

    @property
    def n(self) -> int:
        return len(self.shards)

    def with_labels(self, labels: Sequence[Labels]) -> 'ClassificationTask':
        """Same shards, per-client labels replaced (label flipping)."""
        if len(labels) != self.n:
            raise ValueError(f"expected labels for {self.n} clients, got {len(labels)}")
        return replace(self, labels=tuple(np.asarray(y, dtype=np.int64) for y in labels))

    def initial_model(self) -> GradVec:
        return np.zeros(self.d)

    def _weights(self, w: GradVec) -> NDArray[np.float64]:
        return as_grad_vec(w, self.d).reshape(self.classes, self.features)

    def _loss_and_gradient(self, w: GradVec, x: Features, y: Labels) -> tuple[float, GradVec]:
        if x.shape[0] == 0:
            raise ValueError("empty shard")
        logits = x @ self._weights(w).T
        logits -= logits.max(axis=1, keepdims=True)
        log_norm = np.log(np.sum(np.exp(logits), axis=1))
        probs = np.exp(logits - log_norm[:, None])

        rows = np.arange(x.shape[0])
        loss = float(np.mean(log_norm - logits[rows, y]))

        probs[rows, y] -= 1.0
        gradient = (probs.T @ x) / x.shape[0]
        return loss, gradient.reshape(-1)

    def client_loss(self, client: int, w: GradVec) -> float:
        return self._loss_and_gradient(w, self.train_x[self.shards[client]], self.labels[client])[0]

    def loss(self, w: GradVec) -> float:
        return float(np.mean([self.client_loss(i, w) for i in range(self.n)]))

    def full_gradient(self, w: GradVec) -> GradVec:
        gradients = [
            self._loss_and_gradient(w, self.train_x[shard], labels)[1]
            for shard, labels in zip(self.shards, self.labels)
        ]
        return np.mean(gradients, axis=0)

    def client_gradient(self, client: int, w: GradVec, batch_size: int | None, rng: np.random.Generator) -> GradVec:
        shard, labels = self.shards[client], self.labels[client]
        if shard.size == 0:
            raise ValueError(f"client {client} has an empty shard")
        if batch_size is None:
            picked = np.arange(shard.size)
        else:
            if batch_size < 1:
                raise ValueError(f"batch_size must be >= 1, got {batch_size}")
            picked = rng.integers(0, shard.size, size=batch_size)
        return self._loss_and_gradient(w, self.train_x[shard[picked]], labels[picked])[1]

    def evaluate_error(self, w: GradVec) -> float:
        predictions = np.argmax(self.test_x @ self._weights(w).T, axis=1)
        return float(np.mean(predictions != self.test_y))


def stochastic_gradient(task: Task, client: int, w: GradVec, batch_size: int | None, rng: np.random.Generator) -> GradVec:
    """Unbiased estimate of ∇f_client(w); batch_size None means the exact full-batch gradient."""
    return task.client_gradient(client, w, batch_size, rng)


def evaluate_error(task: Task, w: GradVec) -> float:
    return task.evaluate_error(w)


def client_groups(n: int, groups: int) -> list[NDArray[np.int64]]:
    if n < groups:
        raise ValueError(f"fewer clients than label groups: n={n} < C={groups}")
    return [chunk.astype(np.int64) for chunk in np.array_split(np.arange(n), groups)]


def partition_noniid(labels: ArrayLike, n: int, q: float, classes: int, seed: int) -> list[NDArray[np.int64]]:
    """
    Assign each sample to a client group: its own label's group with
    probability q, any other group with probability (1 - q)/(C - 1); then to
    a uniformly chosen client of that group. Returns sample indices per client.
    """
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"non-IID degree q must lie in [0, 1], got {q}")
    if classes < 1:
        raise ValueError(f"need at least one class, got {classes}")

    y = np.asarray(labels, dtype=np.int64)
    groups = client_groups(n, classes)
    rng = np.random.default_rng(seed)

    if classes == 1:
        group = np.zeros(y.size, dtype=np.int64)
    else:
        own = rng.random(y.size) < q
        # Uniform over the other C - 1 groups: shift by 1..C-1
        shift = rng.integers(1, classes, size=y.size)
        group = np.where(own, y, (y + shift) % classes)

    owners = np.empty(y.size, dtype=np.int64)
    for g, members in enumerate(groups):
        picked = group == g
        owners[picked] = members[rng.integers(0, members.size, size=int(picked.sum()))]

    return [np.flatnonzero(owners == client) for client in range(n)]


def export_shards(task: ClassificationTask, directory: Path):
    """One comma-delimited file per client: label, then the feature values."""
    directory.mkdir(parents=True, exist_ok=True)
    for client, (shard, labels) in enumerate(zip(task.shards, task.labels)):
        rows = np.column_stack([labels.astype(np.float64), task.train_x[shard]])
        np.savetxt(directory / f"client_{client:03d}.csv", rows, delimiter=',', fmt='%.10g')


def apply_update(w: GradVec, aggregate: ArrayLike, eta: float, kind: UpdateKind) -> GradVec:
    """
    VALUE: w - eta * aggregate. SIGN: w - eta * s, one ±eta step per
    coordinate. STEP: the aggregate already carries its rates (RLR).
    """
    step = np.asarray(aggregate, dtype=np.float64)
    if step.shape != w.shape:
        raise ValueError(f"dimension mismatch: model {w.shape}, aggregate {step.shape}")

    match kind:
        case UpdateKind.VALUE | UpdateKind.SIGN:
            return w - eta * step
        case UpdateKind.STEP:
            return w - step
    raise ValueError(f"unknown update kind {kind}")


TASKS: Registry[Callable[..., Task]] = Registry('task')
task_fn = TASKS.register


@task_fn('quadratic')
def quadratic_task(
    *,
    n: int,
    seed: int,
    d: int,
    radius: float = 1.0,
    curvature_low: float = 1.0,
    curvature_high: float = 1.0,
    noise: float = 0.0,
    offset: float = 0.0,
) -> QuadraticTask:
    return QuadraticTask.generate(
        n=n, d=d, radius=radius, curvature=(curvature_low, curvature_high),
        noise=noise, offset=offset, seed=seed,
    )


@task_fn('classification')
def classification_task(
    *,
    n: int,
    seed: int,
    q: float,
    classes: int = 10,
    features: int = 20,
    train_size: int = 6000,
    test_size: int = 2000,
    separation: float = 1.0,
    scale: float = 1.0,
) -> ClassificationTask:
    return ClassificationTask.generate(
        n=n, classes=classes, features=features, train_size=train_size,
        test_size=test_size, separation=separation, scale=scale, q=q, seed=seed,
    )


def task_param(kind: str, params: Mapping[str, object], name: str) -> object:
    """A task tunable as configured, falling back to its registered default."""
    if name in params:
        return params[name]
    default = TASKS.tunables(kind)[name].default
    if default is Parameter.empty:
        raise ValueError(f"task '{kind}' needs '{name}'")
    return default


def task_dimension(kind: str, params: Mapping[str, object]) -> int:
    """Model dimension a task selector will produce, without generating data."""
    match kind:
        case 'quadratic':
            return int(task_param(kind, params, 'd'))  # type: ignore[call-overload]
        case 'classification':
            classes = int(task_param(kind, params, 'classes'))  # type: ignore[call-overload]
            return classes * int(task_param(kind, params, 'features'))  # type: ignore[call-overload]
    raise ValueError(f"unknown task {kind}")
