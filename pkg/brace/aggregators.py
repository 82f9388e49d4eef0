"""
Server-client gradient aggregation rules (GARs) behind one interface.

Every rule takes the (n, d) matrix of submitted gradients as its positional
argument; its keyword-only parameters are the tunables a GarSpec may set.
"""

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from enum import StrEnum
from inspect import Parameter

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import (GradMatrix, GradVec, SignVec, as_grad_matrix,
                   consensus_map, ring_sum, sign_quantize, sign_sum)
from .registry import Registry

Gar = Callable[..., NDArray[np.generic]]

GARS: Registry[Gar] = Registry('aggregator')
gar_fn = GARS.register

RLR_DEFAULT_THETA = 5


class GarKind(StrEnum):
    MEAN = 'mean'
    KRUM = 'krum'
    MEDIAN = 'median'
    TRIMMED_MEAN = 'trimmed_mean'
    SIGNSGD = 'signsgd'
    RLR = 'rlr'
    BRACE_ORACLE = 'brace_oracle'


class UpdateKind(StrEnum):
    """How an aggregate turns into a model step (see tasks.apply_update)."""
    VALUE = 'value'
    SIGN = 'sign'
    STEP = 'step'


UPDATE_KINDS: dict[GarKind, UpdateKind] = {
    GarKind.MEAN: UpdateKind.VALUE,
    GarKind.KRUM: UpdateKind.VALUE,
    GarKind.MEDIAN: UpdateKind.VALUE,
    GarKind.TRIMMED_MEAN: UpdateKind.VALUE,
    GarKind.SIGNSGD: UpdateKind.SIGN,
    GarKind.RLR: UpdateKind.STEP,
    GarKind.BRACE_ORACLE: UpdateKind.SIGN,
}


@dataclass(frozen=True)
class GarSpec:
    kind: GarKind
    params: Mapping[str, object] = field(default_factory=dict)

    @property
    def update_kind(self) -> UpdateKind:
        return UPDATE_KINDS[self.kind]

    @property
    def one_bit(self) -> bool:
        """Only signSGD uploads signs; RLR votes on the server but receives full gradients."""
        return self.kind is GarKind.SIGNSGD

    def param(self, name: str) -> object:
        """A tunable as set, else the aggregator's own default."""
        if name in self.params:
            return self.params[name]
        default = GARS.tunables(self.kind)[name].default
        if default is Parameter.empty:
            raise ValueError(f"{self.kind} needs '{name}'")
        return default

    def validate(self, n: int):
        match self.kind:
            case GarKind.KRUM:
                f = int(self.param('f'))  # type: ignore[call-overload]
                if n < f + 3:
                    raise ValueError(f"krum needs n >= f + 3, got n={n}, f={f}")
            case GarKind.TRIMMED_MEAN:
                k = int(self.param('k'))  # type: ignore[call-overload]
                if not 0 <= k or n <= 2 * k:
                    raise ValueError(f"trimmed_mean needs 0 <= k and n > 2k, got n={n}, k={k}")
            case GarKind.RLR:
                theta = int(self.param('theta'))  # type: ignore[call-overload]
                if not 0 <= theta <= n:
                    raise ValueError(f"rlr theta must lie in [0, n] = [0, {n}], got {theta}")
            case GarKind.BRACE_ORACLE:
                lam = int(self.param('lam'))  # type: ignore[call-overload]
                if not -n <= lam <= n:
                    raise ValueError(f"brace_oracle lam must lie in [-n, n] = [{-n}, {n}], got {lam}")


def aggregate(spec: GarSpec, gradients: ArrayLike) -> NDArray[np.generic]:
    matrix = as_grad_matrix(gradients)
    spec.validate(matrix.shape[0])
    return GARS[spec.kind](matrix, **spec.params)


@gar_fn(GarKind.MEAN)
def gar_mean(gradients: GradMatrix) -> GradVec:
    matrix = as_grad_matrix(gradients)
    return ring_sum(matrix) / matrix.shape[0]


def krum_scores(gradients: GradMatrix, f: int) -> NDArray[np.float64]:
    """Sum of squared distances from each gradient to its n - f - 2 nearest others."""
    matrix = as_grad_matrix(gradients)
    n = matrix.shape[0]
    neighbours = n - f - 2

    diffs = matrix[:, None, :] - matrix[None, :, :]
    distances = np.sum(diffs * diffs, axis=2)

    scores = np.empty(n, dtype=np.float64)
    for i in range(n):
        others = np.delete(distances[i], i)
        scores[i] = np.sum(np.sort(others)[:neighbours])
    return scores


def krum_select(gradients: GradMatrix, f: int) -> int:
    """Index Krum picks; ties go to the lowest client index."""
    n = as_grad_matrix(gradients).shape[0]
    if n < f + 3:
        raise ValueError(f"krum needs n >= f + 3, got n={n}, f={f}")
    return int(np.argmin(krum_scores(gradients, f)))


@gar_fn(GarKind.KRUM)
def gar_krum(gradients: GradMatrix, *, f: int) -> GradVec:
    matrix = as_grad_matrix(gradients)
    return matrix[krum_select(matrix, f)].copy()


@gar_fn(GarKind.MEDIAN)
def gar_median(gradients: GradMatrix) -> GradVec:
    # Even n: mean of the two middle order statistics
    return np.median(as_grad_matrix(gradients), axis=0)


@gar_fn(GarKind.TRIMMED_MEAN)
def gar_trimmed_mean(gradients: GradMatrix, *, k: int) -> GradVec:
    matrix = as_grad_matrix(gradients)
    n = matrix.shape[0]
    if k < 0 or n <= 2 * k:
        raise ValueError(f"trimmed_mean needs 0 <= k and n > 2k, got n={n}, k={k}")

    ordered = np.sort(matrix, axis=0)
    return np.mean(ordered[k:n - k], axis=0)


@gar_fn(GarKind.SIGNSGD)
def gar_signsgd(gradients: GradMatrix) -> SignVec:
    signs = np.stack([sign_quantize(g) for g in as_grad_matrix(gradients)])
    return sign_quantize(sign_sum(signs))


def rlr_rates(gradients: GradMatrix, theta: int, eta: float) -> GradVec:
    """+eta where |Σ sign| reaches theta, -eta elsewhere."""
    signs = np.stack([sign_quantize(g) for g in as_grad_matrix(gradients)])
    votes = np.abs(sign_sum(signs))
    return np.where(votes >= theta, eta, -eta).astype(np.float64)


@gar_fn(GarKind.RLR)
def gar_rlr(gradients: GradMatrix, *, theta: int = RLR_DEFAULT_THETA, eta: float) -> GradVec:
    """Per-dimension signed learning rate times the mean; the result is subtracted from the model as is."""
    matrix = as_grad_matrix(gradients)
    n = matrix.shape[0]
    if not 0 <= theta <= n:
        raise ValueError(f"rlr theta must lie in [0, n] = [0, {n}], got {theta}")
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")

    return rlr_rates(matrix, theta, eta) * gar_mean(matrix)


@gar_fn(GarKind.BRACE_ORACLE)
def gar_brace_oracle(gradients: GradMatrix, *, lam: int) -> SignVec:
    """Centralized reference for the BRACE ring: consensus_map(Σ sign(g_i), lam)."""
    signs = np.stack([sign_quantize(g) for g in as_grad_matrix(gradients)])
    return consensus_map(sign_sum(signs), lam)
