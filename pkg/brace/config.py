"""
Experiment configuration: a YAML document parsed into an ExperimentConfig.

    params: {n: 30, f: 6, m: 8, lam: 5, eta: 0.01, rounds: 500, q: 0.5}
    architecture: {sc: {krum: {f: 6}}}
    attack: {trim: {b: 2}}
    task: {classification: {classes: 10, features: 20}}
    seeds: [0, 1, 2, 3, 4]
    output: results/trim

Every error names the offending field with its DocPath.
"""

import copy
import os

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field, fields, replace
from enum import StrEnum
from pathlib import Path
from typing import Any, get_type_hints

import yaml

from .adversary import AttackKind, AttackSpec
from .aggregators import GARS, GarKind, GarSpec
from .core import HyperParams, required_width
from .document import ConfigError, DocPath, Document
from .registry import Registry
from .ring import Architecture
from .selector import Selector
from .tasks import TASKS, Task, task_dimension, task_param

OUTPUT_DIR_ENV = 'BRACE_OUTPUT_DIR'

TOP_LEVEL_KEYS = frozenset({
    'params', 'architecture', 'attack', 'task', 'batch_size',
    'seeds', 'output', 'record_every', 'trace',
})

HYPER_PARAM_DEFAULTS: dict[str, object] = {'m': 32, 'lam': 0, 'q': 0.5}


class ArchitectureKind(StrEnum):
    BRACE = 'brace'
    RAR_MEAN = 'rar-mean'
    RAR_SIGNSGD = 'rar-signsgd'
    SC = 'sc'


@dataclass(frozen=True)
class ArchitectureSpec:
    kind: ArchitectureKind
    gar: GarSpec | None = None

    @property
    def ledger_arch(self) -> Architecture:
        """Which cost formula the ledger is checked against."""
        match self.kind:
            case ArchitectureKind.SC:
                return Architecture.SC
            case ArchitectureKind.RAR_MEAN:
                return Architecture.RAR
            case ArchitectureKind.BRACE | ArchitectureKind.RAR_SIGNSGD:
                return Architecture.BRACE
        raise ValueError(f"unknown architecture {self.kind}")

    @property
    def label(self) -> str:
        if self.gar is not None:
            return f"{self.kind}-{self.gar.kind}"
        return str(self.kind)


@dataclass(frozen=True)
class TaskSpec:
    kind: str
    params: Mapping[str, object] = field(default_factory=dict)
    loc: DocPath = field(default=DocPath('$.task'), compare=False)

    def builder(self, n: int, seed: int, q: float) -> Callable[..., object]:
        return TASKS.bind(self.kind, self.params, self.loc, context={'n': n, 'seed': seed, 'q': q})

    def build(self, n: int, seed: int, q: float) -> Task:
        return self.builder(n, seed, q)()  # type: ignore[return-value]

    @property
    def dimension(self) -> int:
        return task_dimension(self.kind, self.params)


@dataclass(frozen=True)
class ExperimentConfig:
    params: HyperParams
    architecture: ArchitectureSpec
    attack: AttackSpec
    task: TaskSpec
    batch_size: int | None = None
    seeds: tuple[int, ...] = (0,)
    output: Path = Path('results')
    record_every: int = 1
    trace: bool = False
    document: Mapping[str, Any] = field(default_factory=dict, repr=False, compare=False)

    def with_document(self, edit: Callable[[dict[str, Any]], None]) -> 'ExperimentConfig':
        """Re-parse a modified copy of the source document."""
        document = copy.deepcopy(dict(self.document))
        edit(document)
        return replace(parse_config(document, env={}), output=self.output)


def load_config(path: Path | str, env: Mapping[str, str] | None = None) -> ExperimentConfig:
    with open(path) as fp:
        document = yaml.safe_load(fp)
    return parse_config(document, env=os.environ if env is None else env)


def parse_config(document: Document, env: Mapping[str, str] | None = None) -> ExperimentConfig:
    root = DocPath('$')
    if not isinstance(document, Mapping):
        raise ConfigError(root, f"config must be a mapping, got {type(document).__name__}")
    _check_keys(document, TOP_LEVEL_KEYS, root)
    for required in ('params', 'architecture', 'task'):
        if required not in document:
            raise ConfigError(root, f"missing required key '{required}'")

    task = _parse_task(document['task'], root['task'])
    params = _parse_params(document['params'], task.dimension, root['params'])
    architecture = _parse_architecture(document['architecture'], params, root['architecture'])
    attack = _parse_attack(document.get('attack', 'none'), params, root['attack'])

    batch_size = Registry.coerce(document.get('batch_size'), int | None, root['batch_size'])
    if batch_size is not None and batch_size < 1:  # type: ignore[operator]
        raise ConfigError(root['batch_size'], f"must be >= 1 or null, got {batch_size}")

    seeds = Registry.coerce(document.get('seeds', [0]), tuple[int, ...], root['seeds'])
    if not seeds:
        raise ConfigError(root['seeds'], "need at least one seed")

    record_every = Registry.coerce(document.get('record_every', 1), int, root['record_every'])
    if record_every < 1:  # type: ignore[operator]
        raise ConfigError(root['record_every'], f"must be >= 1, got {record_every}")

    trace = Registry.coerce(document.get('trace', False), bool, root['trace'])

    output = Registry.coerce(document.get('output', 'results'), str, root['output'])
    env = os.environ if env is None else env
    if override := env.get(OUTPUT_DIR_ENV):
        output = override

    config = ExperimentConfig(
        params=params,
        architecture=architecture,
        attack=attack,
        task=task,
        batch_size=batch_size,  # type: ignore[arg-type]
        seeds=seeds,  # type: ignore[arg-type]
        output=Path(output),  # type: ignore[arg-type]
        record_every=record_every,  # type: ignore[arg-type]
        trace=trace,  # type: ignore[arg-type]
        document=copy.deepcopy(dict(document)),
    )
    _cross_check(config, root)
    return config


def _check_keys(document: Mapping[str, Any], allowed: frozenset[str] | set[str], loc: DocPath):
    for key in document:
        if key not in allowed:
            raise ConfigError(loc[str(key)], f"unknown key (allowed: {', '.join(sorted(allowed))})")


def _parse_params(document: Document, d: int, loc: DocPath) -> HyperParams:
    if not isinstance(document, Mapping):
        raise ConfigError(loc, "expected a mapping of hyperparameters")

    hints = get_type_hints(HyperParams)
    allowed = {f.name for f in fields(HyperParams)} - {'d'}
    _check_keys(document, allowed, loc)

    values: dict[str, object] = dict(HYPER_PARAM_DEFAULTS)
    for name, value in document.items():
        values[name] = Registry.coerce(value, hints[name], loc[name])
    missing = sorted(allowed - values.keys())
    if missing:
        raise ConfigError(loc, f"missing hyperparameters: {', '.join(missing)}")

    try:
        return HyperParams(d=d, **values)  # type: ignore[arg-type]
    except ValueError as e:
        raise ConfigError(loc, str(e))


def _parse_task(document: Document, loc: DocPath) -> TaskSpec:
    selector = Selector(document, loc)
    if selector.kind not in TASKS:
        raise ConfigError(loc, f"unrecognized task '{selector.kind}' (known: {', '.join(TASKS)})")

    tunables = TASKS.tunables(selector.kind)
    for name in ('n', 'seed', 'q'):
        if name in selector.params and name in tunables:
            raise ConfigError(selector.param_loc(name), "set under params or seeds, not per task")

    # Type-check now; the build itself waits for the seed
    bound = TASKS.bind(selector.kind, selector.params, loc[selector.kind], context={'n': 1, 'seed': 0, 'q': 0.5})
    params = {
        name: value for name, value in bound.keywords.items()  # type: ignore[attr-defined]
        if name in selector.params
    }
    spec = TaskSpec(kind=selector.kind, params=params, loc=loc[selector.kind])
    if spec.dimension < 1:
        raise ConfigError(loc[selector.kind], f"model dimension must be >= 1, got {spec.dimension}")
    return spec


def _parse_architecture(document: Document, params: HyperParams, loc: DocPath) -> ArchitectureSpec:
    selector = Selector(document, loc)
    try:
        kind = ArchitectureKind(selector.kind)
    except ValueError:
        raise ConfigError(loc, f"unrecognized architecture '{selector.kind}' (known: {', '.join(ArchitectureKind)})")

    if kind is not ArchitectureKind.SC:
        if selector.params:
            raise ConfigError(loc[selector.kind], f"architecture '{kind}' takes no parameters")
        return ArchitectureSpec(kind)

    gar = selector.nested()
    context = {'f': params.f, 'k': params.f, 'eta': params.eta, 'lam': params.lam}
    bound = GARS.bind(gar.kind, gar.params, gar.loc[gar.kind], context=context)
    spec = GarSpec(kind=GarKind(gar.kind), params=dict(bound.keywords))  # type: ignore[attr-defined]
    try:
        spec.validate(params.n)
    except ValueError as e:
        raise ConfigError(gar.loc[gar.kind], str(e))
    return ArchitectureSpec(kind, spec)


def _parse_attack(document: Document, params: HyperParams, loc: DocPath) -> AttackSpec:
    selector = Selector(document, loc)
    try:
        kind = AttackKind(selector.kind)
    except ValueError:
        raise ConfigError(loc, f"unrecognized attack '{selector.kind}' (known: {', '.join(AttackKind)})")

    hints = get_type_hints(AttackSpec)
    allowed = {f.name for f in fields(AttackSpec)} - {'kind'}
    values: dict[str, object] = {'malicious': frozenset(range(params.f))}
    for name, value in selector.params.items():
        if name not in allowed:
            raise ConfigError(selector.param_loc(name), f"unknown attack parameter (accepts: {', '.join(sorted(allowed))})")
        values[name] = Registry.coerce(value, hints[name], selector.param_loc(name))

    malicious = values['malicious']
    if len(malicious) != params.f:  # type: ignore[arg-type]
        raise ConfigError(selector.param_loc('malicious'), f"expected f={params.f} distinct client ids, got {sorted(malicious)}")  # type: ignore[call-overload]

    spec = AttackSpec(kind=kind, **values)  # type: ignore[arg-type]
    try:
        spec.validate(params.n)
    except ValueError as e:
        raise ConfigError(loc, str(e))
    return spec


def _cross_check(config: ExperimentConfig, root: DocPath):
    params, architecture = config.params, config.architecture

    if architecture.kind is not ArchitectureKind.SC and params.n > params.d:
        raise ConfigError(root['params']['n'], f"more clients than dimensions: n={params.n} > d={params.d}")

    if architecture.kind in (ArchitectureKind.BRACE, ArchitectureKind.RAR_SIGNSGD) and params.m < required_width(params.n):
        raise ConfigError(root['params']['m'], f"m={params.m} bits cannot carry sign sums in [-{params.n}, {params.n}]; need m >= {required_width(params.n)}")

    if config.attack.kind is AttackKind.LABEL_FLIP and config.task.kind != 'classification':
        raise ConfigError(root['attack'], "label_flip needs a classification task")

    if config.task.kind == 'classification':
        classes = int(task_param(config.task.kind, config.task.params, 'classes'))  # type: ignore[call-overload]
        if params.n < classes:
            raise ConfigError(root['params']['n'], f"fewer clients than label groups: n={params.n} < C={classes}")
