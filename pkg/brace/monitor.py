"""
Empirical check of the non-convex convergence bound for sign-consensus descent:

    (1/T) Σ_t ‖∇f(w^t)‖₂  <=  (f(w¹) - f*)/(ηT) + Lη²/2        (stated)
                          <=  (f(w¹) - f*)/(ηT) + Lη²d/2       (d-scaled)

The bound assumes every dimension's consensus opposes the true gradient sign
with probability below one half. The sign step moves w by η√d in ℓ₂, so only
the d-scaled form follows from the update itself; it is the one asserted,
and only while the empirical opposition rate stays below 0.5.
"""

import logging

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .harness import RoundRecord, RunResult

logger = logging.getLogger(__name__)

HYPOTHESIS_LIMIT = 0.5


@dataclass(frozen=True)
class BoundReport:
    rounds: int
    d: int
    lhs: float
    rhs_stated: float
    rhs_dscaled: float
    max_opposition: float | None

    @property
    def hypothesis_holds(self) -> bool:
        return self.max_opposition is not None and self.max_opposition < HYPOTHESIS_LIMIT

    @property
    def stated_holds(self) -> bool:
        return self.lhs <= self.rhs_stated

    @property
    def dscaled_holds(self) -> bool:
        return self.lhs <= self.rhs_dscaled

    @property
    def verdict(self) -> str:
        if self.max_opposition is None:
            return "not applicable: the update is not a sign step"
        if not self.hypothesis_holds:
            return f"hypothesis violated: opposition rate {self.max_opposition:.4f} >= {HYPOTHESIS_LIMIT}"
        return "bound holds" if self.dscaled_holds else "bound violated"

    def check(self):
        if self.hypothesis_holds and not self.dscaled_holds:
            raise AssertionError(f"convergence bound violated: {self.lhs!r} > {self.rhs_dscaled!r}")

    def as_dict(self) -> dict[str, Any]:
        return {
            'rounds': self.rounds,
            'd': self.d,
            'lhs': self.lhs,
            'rhs_stated': self.rhs_stated,
            'rhs_dscaled': self.rhs_dscaled,
            'max_opposition': self.max_opposition,
            'hypothesis_holds': self.hypothesis_holds,
            'stated_holds': self.stated_holds,
            'dscaled_holds': self.dscaled_holds,
            'verdict': self.verdict,
        }


def theorem1_monitor(
    records: Sequence[RoundRecord],
    L: float | None,
    eta: float,
    f_star: float | None,
    f_w1: float,
    d: int,
) -> BoundReport:
    if L is None or f_star is None:
        raise ValueError("the bound needs the smoothness constant L and the optimum f*")
    if not records:
        raise ValueError("need at least one round")
    if not eta > 0:
        raise ValueError(f"eta must be > 0, got {eta}")

    T = len(records)
    lhs = float(np.mean([record.grad_norm for record in records]))
    descent = (f_w1 - f_star) / (eta * T)

    oppositions = [record.opposition for record in records]
    max_opposition = None
    if all(o is not None for o in oppositions):
        rates = np.mean(np.stack(oppositions), axis=0)  # type: ignore[arg-type]
        max_opposition = float(np.max(rates))

    report = BoundReport(
        rounds=T,
        d=d,
        lhs=lhs,
        rhs_stated=descent + L * eta ** 2 / 2,
        rhs_dscaled=descent + L * eta ** 2 * d / 2,
        max_opposition=max_opposition,
    )
    if max_opposition is not None and not report.hypothesis_holds:
        logger.warning("convergence monitor: %s", report.verdict)
    return report


def monitor_run(result: RunResult) -> BoundReport:
    params = result.config.params
    return theorem1_monitor(
        result.records,
        L=result.smoothness,
        eta=params.eta,
        f_star=result.optimum,
        f_w1=result.initial_loss,
        d=params.d,
    )
