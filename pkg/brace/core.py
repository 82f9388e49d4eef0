"""
Vector primitives shared by every other module: chunk partitioning, sign
quantization and the BRACE consensus mapping.

Vectors are numpy arrays. A set of client vectors is a 2-D array with one row
per client (`GradMatrix`).
"""

import math

from dataclasses import dataclass
from typing import Final, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

GradVec = NDArray[np.float64]
GradMatrix = NDArray[np.float64]
SignVec = NDArray[np.int8]
SumVec = NDArray[np.int64]

SIGN_OF_ZERO: Final = 1
"""sign(0). Flip to -1 to test sensitivity to the zero convention."""


def as_grad_vec(values: ArrayLike, d: int | None = None) -> GradVec:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise ValueError(f"gradient must be one-dimensional, got shape {vec.shape}")
    if d is not None and vec.shape[0] != d:
        raise ValueError(f"dimension mismatch: expected d={d}, got {vec.shape[0]}")
    if not np.all(np.isfinite(vec)):
        raise ValueError("gradient has non-finite entries")
    return vec


def as_grad_matrix(gradients: ArrayLike | Sequence[ArrayLike]) -> GradMatrix:
    """Stack client gradients into an (n, d) matrix, rejecting ragged or non-finite input."""
    if isinstance(gradients, np.ndarray):
        matrix = np.asarray(gradients, dtype=np.float64)
    else:
        rows = [np.asarray(g, dtype=np.float64) for g in gradients]
        if not rows:
            raise ValueError("no client gradients")
        if any(row.ndim != 1 for row in rows):
            raise ValueError("each gradient must be one-dimensional")
        if len({row.shape[0] for row in rows}) != 1:
            raise ValueError(f"dimension mismatch: {[row.shape[0] for row in rows]}")
        matrix = np.stack(rows)

    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ValueError(f"expected (n, d) gradients, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("gradient has non-finite entries")
    return matrix


@dataclass(frozen=True)
class ChunkPlan:
    d: int
    n: int
    boundaries: tuple[int, ...]

    def __post_init__(self):
        if len(self.boundaries) != self.n + 1:
            raise ValueError(f"chunk plan needs n+1={self.n + 1} boundaries, got {len(self.boundaries)}")
        if self.boundaries[0] != 0 or self.boundaries[-1] != self.d:
            raise ValueError("chunk plan must start at 0 and end at d")
        if any(lo >= hi for lo, hi in zip(self.boundaries, self.boundaries[1:])):
            raise ValueError("chunks must be non-empty and in vector order")

    def chunk(self, chunk_id: int) -> slice:
        return slice(self.boundaries[chunk_id], self.boundaries[chunk_id + 1])

    def size(self, chunk_id: int) -> int:
        return self.boundaries[chunk_id + 1] - self.boundaries[chunk_id]

    @property
    def sizes(self) -> list[int]:
        return [self.size(i) for i in range(self.n)]


def chunk_plan(d: int, n: int) -> ChunkPlan:
    """
    Split [0, d) into n contiguous chunks; the first d mod n chunks hold
    ceil(d/n) entries, the rest floor(d/n). Chunk i is client i's at round start.
    """
    if d < 1 or n < 1:
        raise ValueError(f"chunk plan needs d >= 1 and n >= 1, got d={d}, n={n}")
    if n > d:
        raise ValueError(f"more clients than dimensions: n={n} > d={d}")

    small, extra = divmod(d, n)
    boundaries = [0]
    for i in range(n):
        boundaries.append(boundaries[-1] + small + (1 if i < extra else 0))

    return ChunkPlan(d=d, n=n, boundaries=tuple(boundaries))


def sign_quantize(g: ArrayLike, zero: int = SIGN_OF_ZERO) -> SignVec:
    vec = np.asarray(g, dtype=np.float64)
    if not np.all(np.isfinite(vec)):
        raise ValueError("cannot quantize non-finite gradient entries")
    if zero not in (-1, 1):
        raise ValueError(f"sign of zero must be -1 or +1, got {zero}")

    return np.where(vec > 0, 1, np.where(vec < 0, -1, zero)).astype(np.int8)


def sign_sum(signs: ArrayLike) -> SumVec:
    """Entrywise sum of client SignVecs (rows)."""
    return np.asarray(signs, dtype=np.int64).sum(axis=0)


def consensus_map(s: ArrayLike, lam: int) -> SignVec:
    """+1 where the sign sum strictly exceeds lam, -1 elsewhere."""
    return np.where(np.asarray(s) > lam, 1, -1).astype(np.int8)


def required_width(n: int) -> int:
    """Bits needed to carry a partial sign sum in [-n, n]."""
    return math.ceil(math.log2(2 * n + 1))


def fold_order(chunk_id: int, n: int) -> list[int]:
    """Clients in the order Share-Reduce adds their contributions to a chunk."""
    return [(chunk_id + offset) % n for offset in range(n)]


def ring_sum(gradients: ArrayLike, plan: ChunkPlan | None = None) -> GradVec:
    """
    Σ_i g_i, folded per chunk in ring-arrival order: chunk c starts at client c
    and collects clients c+1, c+2, ... in turn. Floating-point results are
    bitwise equal to the distributed Share-Reduce.
    """
    matrix = as_grad_matrix(gradients)
    n, d = matrix.shape
    if plan is None:
        if n > d:
            return _sequential_sum(matrix)
        plan = chunk_plan(d, n)
    if (plan.n, plan.d) != (n, d):
        raise ValueError(f"dimension mismatch: plan is for n={plan.n}, d={plan.d}, got gradients of shape {matrix.shape}")

    total = np.empty(d, dtype=matrix.dtype)
    for c in range(n):
        span = plan.chunk(c)
        order = fold_order(c, n)
        acc = matrix[order[0], span].copy()
        for client in order[1:]:
            acc = acc + matrix[client, span]
        total[span] = acc
    return total


def _sequential_sum(matrix: GradMatrix) -> GradVec:
    acc = matrix[0].copy()
    for row in matrix[1:]:
        acc = acc + row
    return acc


@dataclass(frozen=True)
class HyperParams:
    n: int
    f: int
    d: int
    m: int
    lam: int
    eta: float
    rounds: int
    q: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if not 0 <= self.f or not 2 * self.f < self.n:
            raise ValueError(f"f must satisfy 0 <= f < n/2, got f={self.f}, n={self.n}")
        if self.d < 1:
            raise ValueError(f"d must be >= 1, got {self.d}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not -self.n <= self.lam <= self.n:
            raise ValueError(f"lam must lie in [-n, n] = [{-self.n}, {self.n}], got {self.lam}")
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must lie in [0, 1], got {self.q}")
