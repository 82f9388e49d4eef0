"""
The `verify` suite: randomized and exhaustive checks of the ring protocols,
cost accounting, attacks, aggregators, task gradients and the convergence
monitor. Checks register by name; each takes the suite seed and reports how
many cases it covered and what failed.
"""

import itertools
import logging

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .adversary import AttackContext, AttackKind, AttackSpec, apply_attack
from .aggregators import (gar_brace_oracle, gar_krum, gar_median,
                          gar_trimmed_mean)
from .config import parse_config
from .core import chunk_plan, required_width
from .harness import run_experiment
from .monitor import BoundReport, monitor_run
from .registry import Registry
from .reports import write_summary
from .ring import (Architecture, ledger_matches_prediction, run_brace_round,
                   run_rar_round, run_sc_round)
from .tasks import ClassificationTask, QuadraticTask, Task

logger = logging.getLogger(__name__)

MAX_REPORTED_FAILURES = 10

EXAMPLE_GRADIENTS = [[5.0, 2.0, -10.0], [8.0, -4.0, 7.0], [9.0, 3.0, 8.0]]


@dataclass
class CheckResult:
    name: str
    cases: int = 0
    failures: list[str] = field(default_factory=list)
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.failures

    def expect(self, condition: bool, description: str):
        self.cases += 1
        if not condition:
            self.failures.append(description)

    def as_dict(self) -> dict[str, Any]:
        return {
            'passed': self.passed,
            'cases': self.cases,
            'failures': self.failures[:MAX_REPORTED_FAILURES],
            'failure_count': len(self.failures),
            **({'details': self.details} if self.details else {}),
        }


Check = Callable[..., CheckResult]

CHECKS: Registry[Check] = Registry('check')
check_fn = CHECKS.register


@check_fn('rar_oracle')
def check_rar_oracle(*, seed: int, rounds: int = 1000) -> CheckResult:
    """Distributed RAR sum equals the centralized sum on integer gradients, n not dividing d included."""
    result = CheckResult('rar_oracle')
    rng = np.random.default_rng([seed, 1])
    for _ in range(rounds):
        n = int(rng.integers(1, 13))
        d = int(rng.integers(n, 65))
        gradients = rng.integers(-100, 101, size=(n, d)).astype(np.float64)
        total, _ = run_rar_round(gradients, chunk_plan(d, n), m=32)
        result.expect(np.array_equal(total, gradients.sum(axis=0)), f"n={n}, d={d}")

    honest, _ = run_rar_round(EXAMPLE_GRADIENTS, chunk_plan(3, 3), m=32)
    result.expect(honest.tolist() == [22.0, 1.0, 5.0], f"three-client example gave {honest.tolist()}")

    poisoned = [row[:] for row in EXAMPLE_GRADIENTS]
    poisoned[0][2] = -200.0
    total, _ = run_rar_round(poisoned, chunk_plan(3, 3), m=32)
    result.expect(total.tolist() == [22.0, 1.0, -185.0], f"poisoned example gave {total.tolist()}")
    return result


@check_fn('brace_oracle')
def check_brace_oracle(*, seed: int, rounds: int = 1000) -> CheckResult:
    """BRACE ring output equals the centralized consensus for every threshold."""
    result = CheckResult('brace_oracle')
    rng = np.random.default_rng([seed, 2])
    for _ in range(rounds):
        n = int(rng.integers(1, 13))
        d = int(rng.integers(n, 65))
        lam = int(rng.integers(-n, n + 1))
        gradients = rng.normal(size=(n, d))
        signs, _ = run_brace_round(gradients, chunk_plan(d, n), lam, m=required_width(n))
        result.expect(np.array_equal(signs, gar_brace_oracle(gradients, lam=lam)), f"n={n}, d={d}, lam={lam}")

    signs, _ = run_brace_round(EXAMPLE_GRADIENTS, chunk_plan(3, 3), lam=2, m=8)
    result.expect(signs.tolist() == [1, -1, -1], f"three-client example gave {signs.tolist()}")
    return result


@check_fn('bit_accounting')
def check_bit_accounting(*, seed: int) -> CheckResult:
    result = CheckResult('bit_accounting')
    rng = np.random.default_rng([seed, 3])
    skipped = []

    for n, m in itertools.product((2, 4, 10, 100), (1, 8, 32)):
        d = 2 * n
        gradients = rng.normal(size=(n, d))
        plan = chunk_plan(d, n)

        ledgers = [
            (Architecture.SC, run_sc_round(gradients, m)),
            (Architecture.RAR, run_rar_round(gradients, plan, m)[1]),
        ]
        if m >= required_width(n):
            ledgers.append((Architecture.BRACE, run_brace_round(gradients, plan, 0, m)[1]))
        else:
            skipped.append(f"BRACE n={n} m={m}")

        for arch, ledger in ledgers:
            matches, report = ledger_matches_prediction(ledger, arch, n, d, m)
            result.expect(matches and report.gap == 0, str(report))

    # Unequal chunks: each client's bits follow its own chunk sizes
    gaps = {}
    for n, d, m in ((3, 4, 8), (5, 13, 8), (7, 64, 32)):
        gradients = rng.normal(size=(n, d))
        plan = chunk_plan(d, n)
        for arch, ledger in (
            (Architecture.RAR, run_rar_round(gradients, plan, m)[1]),
            (Architecture.BRACE, run_brace_round(gradients, plan, 0, m)[1]),
        ):
            matches, report = ledger_matches_prediction(ledger, arch, n, d, m)
            result.expect(matches, str(report))
            gaps[f"{arch} n={n} d={d} m={m}"] = report.gap

    result.details = {'width_too_small': skipped, 'unequal_chunk_gaps': gaps}
    return result


def _vote_matrix(n: int, f: int) -> tuple[np.ndarray, np.ndarray]:
    """
    One dimension per (benign positive count, malicious sign pattern): benign
    clients 0..n-f-1 vote +1 up to the count, malicious clients take the
    pattern. Returns the ±1 matrix and each dimension's benign sum.
    """
    benign = n - f
    columns, sums = [], []
    for positives in range(benign + 1):
        for pattern in itertools.product((-1.0, 1.0), repeat=f):
            column = [1.0] * positives + [-1.0] * (benign - positives) + list(pattern)
            columns.append(column)
            sums.append(2 * positives - benign)
    return np.array(columns).T, np.array(sums)


@check_fn('flip_resistance')
def check_flip_resistance(*, seed: int, max_n: int = 12, max_f: int = 5) -> CheckResult:
    """Whatever f malicious clients vote, the output is fixed once the benign sum clears lam by more than f."""
    result = CheckResult('flip_resistance')
    for n in range(1, max_n + 1):
        for f in range(0, min(max_f, (n - 1) // 2) + 1):
            votes, benign_sums = _vote_matrix(n, f)
            plan = chunk_plan(votes.shape[1], n)
            for lam in range(-n, n + 1):
                output, _ = run_brace_round(votes, plan, lam, m=required_width(n))
                forced_up = benign_sums - f > lam
                forced_down = benign_sums + f <= lam
                result.expect(bool(np.all(output[forced_up] == 1)), f"n={n}, f={f}, lam={lam}: flipped a forced +1")
                result.expect(bool(np.all(output[forced_down] == -1)), f"n={n}, f={f}, lam={lam}: flipped a forced -1")
    return result


@check_fn('adaptive_attack')
def check_adaptive_attack(*, seed: int, max_n: int = 12, max_f: int = 5) -> CheckResult:
    """Against a +1 benign outcome the adaptive attack wins exactly when f >= S_b - lam."""
    result = CheckResult('adaptive_attack')
    for n in range(1, max_n + 1):
        for f in range(1, min(max_f, (n - 1) // 2) + 1):
            benign = n - f
            # One dimension per benign positive count; malicious rows are overwritten
            votes = np.array([
                [1.0] * positives + [-1.0] * (benign - positives) + [1.0] * f
                for positives in range(benign + 1)
            ]).T
            benign_sums = np.arange(benign + 1) * 2 - benign
            # The ring needs at least n dimensions
            reps = -(-n // (benign + 1))
            votes, benign_sums = np.tile(votes, reps), np.tile(benign_sums, reps)
            plan = chunk_plan(votes.shape[1], n)
            spec = AttackSpec(kind=AttackKind.ADAPTIVE_BRACE, malicious=frozenset(range(benign, n)))

            for lam in range(-n, n + 1):
                ctx = AttackContext(gradients=votes, model=np.zeros(votes.shape[1]), lam=lam)
                output, _ = run_brace_round(apply_attack(ctx, spec), plan, lam, m=required_width(n))
                for k, s_b in enumerate(benign_sums):
                    if s_b > lam:
                        flipped = output[k] == -1
                        result.expect(bool(flipped) == (f >= s_b - lam), f"n={n}, f={f}, lam={lam}, S_b={s_b}")
    return result


def _krum_brute_force(gradients: np.ndarray, f: int) -> np.ndarray:
    n = len(gradients)
    best, best_score = 0, None
    for i in range(n):
        distances = sorted(
            sum((a - b) ** 2 for a, b in zip(gradients[i], gradients[j]))
            for j in range(n) if j != i
        )
        score = sum(distances[:n - f - 2])
        if best_score is None or score < best_score:
            best, best_score = i, score
    return gradients[best]


def _median_brute_force(gradients: np.ndarray) -> list[float]:
    n = len(gradients)
    out = []
    for column in gradients.T:
        ordered = sorted(column)
        out.append(ordered[n // 2] if n % 2 else (ordered[n // 2 - 1] + ordered[n // 2]) / 2)
    return out


def _trimmed_brute_force(gradients: np.ndarray, k: int) -> list[float]:
    n = len(gradients)
    return [sum(sorted(column)[k:n - k]) / (n - 2 * k) for column in gradients.T]


@check_fn('aggregators')
def check_aggregators(*, seed: int, instances: int = 10000) -> CheckResult:
    """Krum, median and trimmed mean against direct implementations on small integer instances."""
    result = CheckResult('aggregators')
    rng = np.random.default_rng([seed, 4])
    for _ in range(instances):
        n = int(rng.integers(3, 7))
        d = int(rng.integers(1, 4))
        gradients = rng.integers(-10, 11, size=(n, d)).astype(np.float64)
        f = int(rng.integers(0, n - 2))
        k = int(rng.integers(0, (n - 1) // 2 + 1))

        result.expect(np.array_equal(gar_krum(gradients, f=f), _krum_brute_force(gradients, f)), f"krum n={n} f={f}")
        result.expect(gar_median(gradients).tolist() == _median_brute_force(gradients), f"median n={n}")
        result.expect(gar_trimmed_mean(gradients, k=k).tolist() == _trimmed_brute_force(gradients, k), f"trimmed_mean n={n} k={k}")
    return result


def finite_difference(task: Task, w: np.ndarray, h: float = 1e-5) -> np.ndarray:
    gradient = np.empty_like(w)
    for k in range(w.size):
        step = np.zeros_like(w)
        step[k] = h
        gradient[k] = (task.loss(w + step) - task.loss(w - step)) / (2 * h)
    return gradient


@check_fn('gradients')
def check_gradients(*, seed: int, points: int = 100, tolerance: float = 1e-5) -> CheckResult:
    """Analytic full gradients against central finite differences."""
    result = CheckResult('gradients')
    rng = np.random.default_rng([seed, 5])
    tasks: list[tuple[str, Task]] = [
        ('quadratic', QuadraticTask.generate(n=4, d=6, curvature=(0.5, 2.0), seed=seed)),
        ('classification', ClassificationTask.generate(n=3, classes=3, features=4, train_size=300, test_size=30, seed=seed)),
    ]
    worst = {}
    for name, task in tasks:
        worst[name] = 0.0
        for _ in range(points):
            w = rng.normal(size=task.d)
            analytic = task.full_gradient(w)
            numeric = finite_difference(task, w)
            scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
            error = float(np.linalg.norm(analytic - numeric) / scale)
            worst[name] = max(worst[name], error)
            result.expect(error <= tolerance, f"{name}: relative error {error:.3g}")
    result.details = {'worst_relative_error': worst}
    return result


def monitor_config(
    d: int, n: int, f: int, attack: str, architecture: Any, lam: int, seed: int, offset: float = 20.0,
) -> dict[str, Any]:
    return {
        'params': {'n': n, 'f': f, 'm': 8, 'lam': lam, 'eta': 0.01, 'rounds': 1000},
        'architecture': architecture,
        'attack': attack,
        'task': {'quadratic': {'d': d, 'radius': 0.5, 'offset': offset}},
        'seeds': [seed],
    }


@check_fn('convergence_monitor')
def check_convergence_monitor(*, seed: int) -> CheckResult:
    result = CheckResult('convergence_monitor')
    reports: dict[str, BoundReport] = {}

    # d = 1: the stated and d-scaled bounds coincide
    honest = parse_config(monitor_config(1, 5, 0, 'none', {'sc': {'brace_oracle': {'lam': 0}}}, 0, seed), env={})
    reports['honest_d1'] = monitor_run(run_experiment(honest))
    result.expect(reports['honest_d1'].stated_holds, f"honest d=1: {reports['honest_d1'].as_dict()}")

    attacked = parse_config(monitor_config(50, 10, 2, 'adaptive_brace', 'brace', 5, seed), env={})
    reports['adaptive_d50'] = monitor_run(run_experiment(attacked))
    report = reports['adaptive_d50']
    result.expect(report.hypothesis_holds, f"adaptive d=50: {report.verdict}")
    result.expect(report.dscaled_holds, f"adaptive d=50: {report.as_dict()}")

    # Started at the optimum the attacker keeps the consensus oscillating against
    # the true gradient, so the monitor reports the hypothesis as violated
    settled = parse_config(monitor_config(50, 10, 2, 'adaptive_brace', 'brace', 5, seed, offset=0.0), env={})
    reports['adaptive_d50_at_optimum'] = monitor_run(run_experiment(settled))
    report = reports['adaptive_d50_at_optimum']
    result.expect(not report.hypothesis_holds, f"adaptive d=50 at the optimum: {report.verdict}")

    result.details = {name: report.as_dict() for name, report in reports.items()}
    return result


@dataclass
class VerifyReport:
    seed: int
    results: list[CheckResult]

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    def as_dict(self) -> dict[str, Any]:
        return {
            'seed': self.seed,
            'passed': self.passed,
            'checks': {result.name: result.as_dict() for result in self.results},
        }


def run_checks(seed: int = 0, out_dir: Path | None = None, names: list[str] | None = None) -> VerifyReport:
    results = []
    for name in names or list(CHECKS):
        logger.info("check %s", name)
        result = CHECKS[name](seed=seed)
        if not result.passed:
            logger.warning("check %s failed %d of %d cases", name, len(result.failures), result.cases)
        results.append(result)

    report = VerifyReport(seed, results)
    if out_dir is not None:
        write_summary(report.as_dict(), out_dir / 'verify.yaml')
    return report
