"""
End-to-end training runs: per round every client computes a stochastic
gradient, the adversary rewrites the malicious submissions, the configured
architecture aggregates them, and every simulated client applies the same
update.
"""

import hashlib
import logging

from collections.abc import Mapping, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .adversary import AttackContext, AttackKind, apply_attack, attack_label_flip
from .aggregators import UpdateKind, aggregate
from .config import ArchitectureKind, ExperimentConfig
from .core import ChunkPlan, GradVec, chunk_plan, required_width, sign_quantize
from .document import ConfigError, DocPath, Document
from .ring import (Architecture, CommLedger, CostReport, Message,
                   ledger_matches_prediction, predicted_cost, run_brace_round,
                   run_rar_round, run_sc_round)
from .tasks import ClassificationTask, QuadraticTask, Task, apply_update

logger = logging.getLogger(__name__)

# Majority vote with sign(0) := +1 is the consensus map at this threshold
SIGNSGD_LAMBDA = -1

SWEEP_AXES = ('malicious_fraction', 'q', 'n', 'lambda')


@dataclass(frozen=True)
class RoundRecord:
    """Metrics of the model w^t a round starts from, and the bits that round spent."""
    round: int
    loss: float
    grad_norm: float
    test_error: float
    bits_total: int
    checksum: str
    # Per dimension: did the sign step oppose sign(∇f(w^t))? None for value updates.
    opposition: NDArray[np.bool_] | None = field(default=None, repr=False, compare=False)


@dataclass
class RunResult:
    config: ExperimentConfig
    seed: int
    records: list[RoundRecord]
    final_model: GradVec
    initial_loss: float
    final_loss: float
    final_test_error: float
    cost: CostReport
    smoothness: float | None = None
    optimum: float | None = None
    trace: list[Message] = field(default_factory=list, repr=False)

    def summary(self) -> dict[str, Any]:
        params = self.config.params
        return {
            'architecture': self.config.architecture.label,
            'attack': str(self.config.attack.kind),
            'task': self.config.task.kind,
            'error_metric': 'suboptimality' if self.config.task.kind == 'quadratic' else 'misclassification',
            'seed': self.seed,
            'n': params.n,
            'f': params.f,
            'd': params.d,
            'm': params.m,
            'lam': params.lam,
            'eta': params.eta,
            'rounds': params.rounds,
            'initial_loss': self.initial_loss,
            'final_loss': self.final_loss,
            'final_test_error': self.final_test_error,
            'bits_per_round': self.records[0].bits_total,
            'measured_cost': self.cost.measured,
            'predicted_cost': self.cost.predicted,
            'cost_gap': self.cost.gap,
        }


@dataclass
class SeedRuns:
    config: ExperimentConfig
    results: list[RunResult]

    @property
    def median_test_error(self) -> float:
        return float(np.median([result.final_test_error for result in self.results]))

    @property
    def median_loss(self) -> float:
        return float(np.median([result.final_loss for result in self.results]))

    def summary(self) -> dict[str, Any]:
        return {
            'seeds': [result.seed for result in self.results],
            'median_final_test_error': self.median_test_error,
            'median_final_loss': self.median_loss,
            'runs': [result.summary() for result in self.results],
        }


def client_rng(seed: int, t: int, client: int) -> np.random.Generator:
    """Independent stream per (seed, round, client); client n is the adversary's."""
    return np.random.default_rng(np.random.SeedSequence([seed, t, client]))


def checksum(values: NDArray[np.generic]) -> str:
    return hashlib.sha256(np.ascontiguousarray(values).tobytes()).hexdigest()[:16]


def build_task(config: ExperimentConfig, seed: int) -> Task:
    params = config.params
    task = config.task.build(params.n, seed, params.q)
    if task.d != params.d:
        raise RuntimeError(f"task produced d={task.d}, config derived d={params.d}")

    if config.attack.kind is AttackKind.LABEL_FLIP:
        if not isinstance(task, ClassificationTask):
            raise ValueError("label_flip needs a classification task")
        task = task.with_labels(attack_label_flip(task.labels, config.attack, task.classes))
    return task


def aggregate_round(
    config: ExperimentConfig,
    submitted: NDArray[np.float64],
    plan: ChunkPlan | None,
    trace: list[Message] | None = None,
) -> tuple[NDArray[np.generic], UpdateKind, CommLedger, int]:
    """Aggregate, how to step with it, the round's ledger and the per-entry width it was charged at."""
    params, architecture = config.params, config.architecture

    match architecture.kind:
        case ArchitectureKind.SC:
            gar = architecture.gar
            if gar is None:
                raise ValueError("server-client architecture needs an aggregator")
            m = 1 if gar.one_bit else params.m
            return aggregate(gar, submitted), gar.update_kind, run_sc_round(submitted, m), m

    if plan is None:
        raise ValueError(f"{architecture.kind} needs a chunk plan")

    match architecture.kind:
        case ArchitectureKind.RAR_MEAN:
            total, ledger = run_rar_round(submitted, plan, params.m, trace)
            return total / params.n, UpdateKind.VALUE, ledger, params.m
        case ArchitectureKind.BRACE:
            signs, ledger = run_brace_round(submitted, plan, params.lam, params.m, trace)
            return signs, UpdateKind.SIGN, ledger, params.m
        case ArchitectureKind.RAR_SIGNSGD:
            signs, ledger = run_brace_round(submitted, plan, SIGNSGD_LAMBDA, params.m, trace)
            return signs, UpdateKind.SIGN, ledger, params.m
    raise ValueError(f"unknown architecture {architecture.kind}")


def run_experiment(config: ExperimentConfig, seed: int | None = None) -> RunResult:
    params, architecture = config.params, config.architecture
    seed = config.seeds[0] if seed is None else seed
    logger.info("run %s / %s, seed %d, %d rounds", architecture.label, config.attack.kind, seed, params.rounds)

    task = build_task(config, seed)
    plan = None if architecture.kind is ArchitectureKind.SC else chunk_plan(params.d, params.n)

    w = task.initial_model()
    initial_loss = task.loss(w)
    records: list[RoundRecord] = []
    trace: list[Message] = []
    cost: CostReport | None = None

    for t in range(1, params.rounds + 1):
        gradients = np.stack([
            task.client_gradient(client, w, config.batch_size, client_rng(seed, t, client))
            for client in range(params.n)
        ])
        ctx = AttackContext(
            gradients=gradients,
            model=w,
            seed=[seed, t, params.n],
            lam=params.lam,
            malicious=config.attack.malicious,
        )
        submitted = apply_attack(ctx, config.attack)

        round_trace = trace if config.trace and t == 1 else None
        step, update_kind, ledger, width = aggregate_round(config, submitted, plan, round_trace)

        if cost is None:
            matches, cost = ledger_matches_prediction(ledger, architecture.ledger_arch, params.n, params.d, width)
            if not matches:
                raise RuntimeError(f"ledger does not match the ring schedule: {cost}")
        elif ledger.total_bits != records[0].bits_total:
            raise RuntimeError(f"round {t} spent {ledger.total_bits} bits, round 1 spent {records[0].bits_total}")

        full_gradient = task.full_gradient(w)
        opposition = None
        if update_kind is UpdateKind.SIGN:
            opposition = np.asarray(step) != sign_quantize(full_gradient)

        record = RoundRecord(
            round=t,
            loss=task.loss(w),
            grad_norm=float(np.linalg.norm(full_gradient)),
            test_error=task.evaluate_error(w),
            bits_total=ledger.total_bits,
            checksum=checksum(step),
            opposition=opposition,
        )
        records.append(record)
        logger.debug("round %d: loss %.6g, |grad| %.6g, error %.4f", t, record.loss, record.grad_norm, record.test_error)

        w = apply_update(w, step, params.eta, update_kind)

    assert cost is not None
    result = RunResult(
        config=config,
        seed=seed,
        records=records,
        final_model=w,
        initial_loss=initial_loss,
        final_loss=task.loss(w),
        final_test_error=task.evaluate_error(w),
        cost=cost,
        trace=trace,
    )
    if isinstance(task, QuadraticTask):
        result.smoothness = task.smoothness
        result.optimum = task.optimum

    logger.info("finished seed %d: loss %.6g, error %.4f", seed, result.final_loss, result.final_test_error)
    return result


def run_seeds(config: ExperimentConfig) -> SeedRuns:
    return SeedRuns(config, [run_experiment(config, seed) for seed in config.seeds])


@dataclass(frozen=True)
class SweepRow:
    axis: str
    value: float
    defense: str
    attack: str
    seeds: int
    median_test_error: float
    median_loss: float


def _integral(value: float, loc: DocPath) -> int:
    if not float(value).is_integer():
        raise ConfigError(loc, f"expected a whole number, got {value}")
    return int(value)


def _drop_malicious(document: dict[str, Any]):
    """Explicit malicious ids stop matching f once f changes."""
    attack = document.get('attack')
    if isinstance(attack, Mapping) and len(attack) == 1:
        (params,) = attack.values()
        if isinstance(params, dict):
            params.pop('malicious', None)


def edit_axis(config: ExperimentConfig, axis: str, value: float):
    """Document edit putting `value` on `axis`; n keeps the malicious fraction."""
    loc = DocPath('$.params')

    def edit(document: dict[str, Any]):
        params = document['params']
        match axis:
            case 'malicious_fraction':
                if not 0.0 <= value < 0.5:
                    raise ConfigError(loc['f'], f"malicious fraction must lie in [0, 0.5), got {value}")
                params['f'] = int(np.floor(value * config.params.n + 1e-9))
                _drop_malicious(document)
            case 'q':
                params['q'] = float(value)
            case 'n':
                n = _integral(value, loc['n'])
                params['n'] = n
                params['f'] = config.params.f * n // config.params.n
                _drop_malicious(document)
            case 'lambda':
                params['lam'] = _integral(value, loc['lam'])
            case _:
                raise ConfigError(loc, f"unknown sweep axis '{axis}' (known: {', '.join(SWEEP_AXES)})")

    return edit


def sweep_cells(
    config: ExperimentConfig,
    axis: str,
    values: Sequence[float],
    defenses: Sequence[Document] | None = None,
) -> list[tuple[float, ExperimentConfig]]:
    """Every (value, defense) config, validated before any of them runs."""
    if axis not in SWEEP_AXES:
        raise ConfigError(DocPath('$'), f"unknown sweep axis '{axis}' (known: {', '.join(SWEEP_AXES)})")

    cells = []
    for value in values:
        for defense in (defenses if defenses is not None else [config.document['architecture']]):
            axis_edit = edit_axis(config, axis, value)

            def edit(document: dict[str, Any], defense: Document = defense):
                document['architecture'] = defense
                axis_edit(document)

            try:
                cells.append((value, config.with_document(edit)))
            except ConfigError as e:
                raise ConfigError(e.loc, f"sweep cell {axis}={value}, defense {defense!r}: {e.reason}") from e
    return cells


def sweep(
    config: ExperimentConfig,
    axis: str,
    values: Sequence[float],
    defenses: Sequence[Document] | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    cells = sweep_cells(config, axis, values, defenses)
    logger.info("sweep over %s: %d cells", axis, len(cells))

    configs = [cell for _, cell in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(run_seeds, configs))
    else:
        runs = [run_seeds(cell) for cell in configs]

    return [
        SweepRow(
            axis=axis,
            value=value,
            defense=cell.architecture.label,
            attack=str(cell.attack.kind),
            seeds=len(cell.seeds),
            median_test_error=seed_runs.median_test_error,
            median_loss=seed_runs.median_loss,
        )
        for (value, cell), seed_runs in zip(cells, runs)
    ]


@dataclass(frozen=True)
class CostRow:
    arch: str
    n: int
    d: int
    m: int
    predicted: float
    measured: int | None
    chunk_exact: int | None
    gap: float | None
    matches: bool | None
    note: str = ''


def _cost_row(label: str, arch: Architecture, n: int, d: int, m: int, ledger: CommLedger | None, note: str = '') -> CostRow:
    predicted = predicted_cost(arch, n, d, m)
    if ledger is None:
        return CostRow(label, n, d, m, predicted, None, None, None, None, note)

    matches, report = ledger_matches_prediction(ledger, arch, n, d, m)
    return CostRow(label, n, d, m, predicted, report.measured, report.chunk_exact, report.gap, matches, note)


def commcost_report(ns: Sequence[int], d: int, m: int, seed: int = 0) -> list[CostRow]:
    """Predicted per-round cost next to the ledger of one executed round, per architecture and n."""
    rows = []
    for n in ns:
        gradients = np.random.default_rng([seed, n]).normal(size=(n, d))
        rows.append(_cost_row('SC', Architecture.SC, n, d, m, run_sc_round(gradients, m)))
        rows.append(_cost_row('SC-1bit', Architecture.SC, n, d, 1, run_sc_round(gradients, 1)))

        if n > d:
            rows.append(_cost_row('RAR', Architecture.RAR, n, d, m, None, "n > d"))
            rows.append(_cost_row('BRACE', Architecture.BRACE, n, d, m, None, "n > d"))
            continue

        plan = chunk_plan(d, n)
        rows.append(_cost_row('RAR', Architecture.RAR, n, d, m, run_rar_round(gradients, plan, m)[1]))
        if m < required_width(n):
            rows.append(_cost_row('BRACE', Architecture.BRACE, n, d, m, None, f"m < {required_width(n)}"))
        else:
            rows.append(_cost_row('BRACE', Architecture.BRACE, n, d, m, run_brace_round(gradients, plan, 0, m)[1]))

    mismatches = [row for row in rows if row.matches is False]
    if mismatches:
        logger.warning("%d cost rows do not match the schedule", len(mismatches))
    return rows
