"""
Byzantine attacks. Malicious clients rewrite their gradients before the ring
protocol starts and then execute the protocol faithfully, so every attack is
a map from the honest gradient set to the submitted one.
"""

import logging

from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from .aggregators import krum_select
from .core import (GradMatrix, GradVec, as_grad_matrix, sign_quantize,
                   sign_sum)
from .registry import Registry

logger = logging.getLogger(__name__)

Attack = Callable[..., GradMatrix]

ATTACKS: Registry[Attack] = Registry('attack')
attack_fn = ATTACKS.register

GAUSSIAN_DEFAULT_SIGMA = 200.0
TRIM_DEFAULT_B = 2.0
SEARCH_ITERATIONS = 50
SEARCH_TOLERANCE = 1e-5


class AttackKind(StrEnum):
    NONE = 'none'
    GAUSSIAN = 'gaussian'
    LABEL_FLIP = 'label_flip'
    KRUM = 'krum'
    TRIM = 'trim'
    MIN_MAX = 'minmax'
    MIN_SUM = 'minsum'
    ADAPTIVE_BRACE = 'adaptive_brace'


class Knowledge(StrEnum):
    FULL = 'full'
    BENIGN_ONLY = 'benign-only'


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind = AttackKind.NONE
    malicious: frozenset[int] = frozenset()
    sigma: float = GAUSSIAN_DEFAULT_SIGMA
    b: float = TRIM_DEFAULT_B
    tol: float = SEARCH_TOLERANCE
    iterations: int = SEARCH_ITERATIONS
    knowledge: Knowledge = Knowledge.FULL

    def validate(self, n: int):
        f = len(self.malicious)
        if not 2 * f < n:
            raise ValueError(f"malicious clients must be fewer than n/2, got {f} of {n}")
        if any(not 0 <= client < n for client in self.malicious):
            raise ValueError(f"malicious ids must lie in [0, {n}), got {sorted(self.malicious)}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.b > 1:
            raise ValueError(f"b must be > 1, got {self.b}")
        if not self.tol > 0 or self.iterations < 1:
            raise ValueError(f"search needs tol > 0 and iterations >= 1, got {self.tol}, {self.iterations}")
        if self.kind is AttackKind.KRUM and n < f + 3:
            raise ValueError(f"krum attack needs n >= f + 3, got n={n}, f={f}")


@dataclass(frozen=True)
class AttackContext:
    """What the adversary sees: every client's honest gradient, the model, and the round's seed."""
    gradients: GradMatrix
    model: GradVec
    seed: int | Sequence[int] = 0
    lam: int = 0
    malicious: frozenset[int] = field(default_factory=frozenset)

    @property
    def n(self) -> int:
        return self.gradients.shape[0]

    @property
    def benign_ids(self) -> list[int]:
        return [i for i in range(self.n) if i not in self.malicious]

    @property
    def malicious_ids(self) -> list[int]:
        return sorted(self.malicious)

    @property
    def benign(self) -> GradMatrix:
        ids = self.benign_ids
        if not ids:
            raise ValueError("attack context has no benign clients")
        return self.gradients[ids]

    def view(self, knowledge: Knowledge) -> GradMatrix:
        """Gradients the adversary estimates benign statistics from."""
        match knowledge:
            case Knowledge.FULL:
                return self.benign
            case Knowledge.BENIGN_ONLY:
                if not self.malicious:
                    return self.benign
                return self.gradients[self.malicious_ids]
        raise ValueError(f"unknown knowledge level {knowledge}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


def apply_attack(ctx: AttackContext, spec: AttackSpec) -> GradMatrix:
    """Submitted gradients: malicious rows replaced, benign rows passed through untouched."""
    spec.validate(ctx.n)
    ctx = replace(ctx, malicious=spec.malicious)
    submitted = ctx.gradients.copy()
    if not spec.malicious:
        return submitted

    forged = ATTACKS[spec.kind](ctx, spec)
    submitted[ctx.malicious_ids] = forged
    return submitted


@attack_fn(AttackKind.NONE)
def attack_none(ctx: AttackContext, spec: AttackSpec) -> GradMatrix:
    return ctx.gradients[ctx.malicious_ids].copy()


@attack_fn(AttackKind.LABEL_FLIP)
def attack_label_flip_gradients(ctx: AttackContext, spec: AttackSpec) -> GradMatrix:
    # Poisoning happened in the data; the gradients are honest on flipped labels
    return ctx.gradients[ctx.malicious_ids].copy()


def attack_label_flip(labels: Sequence[NDArray[np.int64]], spec: AttackSpec, classes: int) -> list[NDArray[np.int64]]:
    """Relabel every malicious client's samples l -> C - 1 - l; other shards are returned as is."""
    if classes < 2:
        raise ValueError(f"label flipping needs at least 2 classes, got {classes}")

    return [
        (classes - 1 - shard) if client in spec.malicious else shard
        for client, shard in enumerate(labels)
    ]


@attack_fn(AttackKind.GAUSSIAN)
def attack_gaussian(ctx: AttackContext, spec: AttackSpec) -> GradMatrix:
    if not spec.sigma > 0:
        raise ValueError(f"sigma must be > 0, got {spec.sigma}")
    return ctx.rng().normal(0.0, spec.sigma, size=(len(ctx.malicious), ctx.gradients.shape[1]))


@attack_fn(AttackKind.TRIM)
def attack_trim(ctx: AttackContext, spec: AttackSpec) -> GradMatrix:
    """
    Full-knowledge trim attack. Per dimension, push against the benign mean:
    draw each malicious value uniformly from just beyond the benign extreme in
    that direction, at most a factor b further out.
    """
    view = ctx.view(spec.knowledge)
    b = spec.b

    direction = -sign_quantize(view.mean(axis=0)).astype(np.float64)
    extreme = np.where(direction > 0, view.max(axis=0), view.min(axis=0))

    outward = extreme * direction > 0
    inward = extreme * direction < 0
    far = np.where(outward, b * extreme, np.where(inward, extreme / b, extreme + direction))

    lo = np.minimum(extreme, far)
    hi = np.maximum(extreme, far)
    return ctx.rng().uniform(lo, hi, size=(len(ctx.malicious), view.shape[1]))


@dataclass(frozen=True)
class ScaleSearch:
    value: float
    path: list[tuple[float, bool]]
    degenerate: bool = False


def search_scale(
    feasible: Callable[[float], bool],
    upper: float,
    iterations: int = SEARCH_ITERATIONS,
    tol: float = SEARCH_TOLERANCE,
) -> ScaleSearch:
    """
    Largest scale in [0, upper] the predicate accepts, by bisection. Stops
    after `iterations` halvings or once the bracket is within `tol` relative
    to the best feasible value. `degenerate` means nothing tested was feasible.
    """
    path: list[tuple[float, bool]] = []

    def tried(value: float) -> bool:
        ok = feasible(value)
        path.append((value, ok))
        return ok

    if upper <= 0:
        return ScaleSearch(0.0, path, degenerate=not tried(0.0))
    if tried(upper):
        return ScaleSearch(upper, path)

    lo, hi = 0.0, upper
    best: float | None = None
    for _ in range(iterations):
        mid = (lo + hi) / 2
        if tried(mid):
            lo = best = mid
        else:
            hi = mid
        if best is not None and hi - lo <= tol * best:
            break

    if best is None:
        if tried(0.0):
            return ScaleSearch(0.0, path)
        return ScaleSearch(0.0, path, degenerate=True)
    return ScaleSearch(best, path)


def _unit_inverse_sign(mu: GradVec) -> GradVec:
    direction = -sign_quantize(mu).astype(np.float64)
    return direction / np.linalg.norm(direction)


def krum_attack_search(ctx: AttackContext, spec: AttackSpec) -> tuple[GradVec, ScaleSearch]:
    view = ctx.view(spec.knowledge)
    mu = view.mean(axis=0)
    direction = sign_quantize(mu).astype(np.float64)
    f = len(ctx.malicious)
    benign = ctx.benign

    def submitted(scale: float) -> GradMatrix:
        matrix = ctx.gradients.copy()
        matrix[ctx.malicious_ids] = mu - scale * direction
        return matrix

    def selects_malicious(scale: float) -> bool:
        return krum_select(submitted(scale), f) in ctx.malicious

    n, d = ctx.gradients.shape
    distances = np.sqrt(np.sum((benign[:, None, :] - benign[None, :, :]) ** 2, axis=2))
    nearest = [
        float(np.sum(np.sort(np.delete(row, i))[:n - f - 2]))
        for i, row in enumerate(distances)
    ]
    upper = (
        min(nearest) / ((n - 2 * f - 1) * np.sqrt(d))
        + float(np.max(np.linalg.norm(benign - mu, axis=1))) / np.sqrt(d)
    )

    search = search_scale(selects_malicious, upper, spec.iterations, spec.tol)
    if search.degenerate:
        logger.warning("krum attack found no feasible scale; submitting the benign mean")
        return mu, search
    return mu - search.value * direction, search


@attack_fn(AttackKind.KRUM)
def attack_krum(ctx: AttackContext, spec: AttackSpec) -> GradMatrix:
    crafted, _ = krum_attack_search(ctx, spec)
    return np.tile(crafted, (len(ctx.malicious), 1))


def minmax_search(ctx: AttackContext, spec: AttackSpec) -> tuple[GradVec, ScaleSearch]:
    """m = mu + gamma * p with the largest gamma keeping m's farthest benign distance within the benign diameter."""
    view = ctx.view(spec.knowledge)
    mu = view.mean(axis=0)
    if view.shape[0] < 2:
        return mu, ScaleSearch(0.0, [])

    p = _unit_inverse_sign(mu)
    diameter = _max_pairwise_distance(view)

    def within(gamma: float) -> bool:
        return float(np.max(np.linalg.norm(view - (mu + gamma * p), axis=1))) <= diameter

    search = search_scale(within, 2 * diameter, spec.iterations, spec.tol)
    return mu + search.value * p, search


def minsum_search(ctx: AttackContext, spec: AttackSpec) -> tuple[GradVec, ScaleSearch]:
    """m = mu + gamma * p with the largest gamma keeping m's summed squared distance within the worst benign one."""
    view = ctx.view(spec.knowledge)
    mu = view.mean(axis=0)
    if view.shape[0] < 2:
        return mu, ScaleSearch(0.0, [])

    p = _unit_inverse_sign(mu)
    bound = float(np.max(_squared_distance_sums(view)))

    def within(gamma: float) -> bool:
        return float(np.sum((view - (mu + gamma * p)) ** 2)) <= bound

    search = search_scale(within, float(np.sqrt(bound / view.shape[0])), spec.iterations, spec.tol)
    return mu + search.value * p, search


@attack_fn(AttackKind.MIN_MAX)
def attack_minmax(ctx: AttackContext, spec: AttackSpec) -> GradMatrix:
    crafted, _ = minmax_search(ctx, spec)
    return np.tile(crafted, (len(ctx.malicious), 1))


@attack_fn(AttackKind.MIN_SUM)
def attack_minsum(ctx: AttackContext, spec: AttackSpec) -> GradMatrix:
    crafted, _ = minsum_search(ctx, spec)
    return np.tile(crafted, (len(ctx.malicious), 1))


@attack_fn(AttackKind.ADAPTIVE_BRACE)
def attack_adaptive_brace(ctx: AttackContext, spec: AttackSpec, lam: int | None = None) -> GradMatrix:
    """
    Vote against the benign outcome in every dimension: -1 where the benign
    sign sum clears lam (dragging it down to <= lam), +1 elsewhere.
    """
    threshold = ctx.lam if lam is None else lam
    benign_sum = sign_sum(np.stack([sign_quantize(g) for g in ctx.benign]))
    vote = np.where(benign_sum > threshold, -1.0, 1.0)
    return np.tile(vote, (len(ctx.malicious), 1))


def _max_pairwise_distance(matrix: GradMatrix) -> float:
    matrix = as_grad_matrix(matrix)
    diffs = matrix[:, None, :] - matrix[None, :, :]
    return float(np.sqrt(np.max(np.sum(diffs * diffs, axis=2))))


def _squared_distance_sums(matrix: GradMatrix) -> NDArray[np.float64]:
    diffs = matrix[:, None, :] - matrix[None, :, :]
    return np.sum(diffs * diffs, axis=(1, 2))
