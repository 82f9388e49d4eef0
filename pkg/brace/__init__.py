from .aggregators import GARS, GarKind, GarSpec, aggregate
from .config import ExperimentConfig, load_config, parse_config
from .core import ChunkPlan, HyperParams, chunk_plan, consensus_map, sign_quantize
from .document import ConfigError, DocPath
from .harness import run_experiment, run_seeds, sweep
from .monitor import BoundReport, theorem1_monitor
from .ring import Architecture, run_brace_round, run_rar_round

__all__ = [
    'Architecture',
    'BoundReport',
    'ChunkPlan',
    'ConfigError',
    'DocPath',
    'ExperimentConfig',
    'GARS',
    'GarKind',
    'GarSpec',
    'HyperParams',
    'aggregate',
    'chunk_plan',
    'consensus_map',
    'load_config',
    'parse_config',
    'run_brace_round',
    'run_experiment',
    'run_rar_round',
    'run_seeds',
    'sign_quantize',
    'sweep',
    'theorem1_monitor',
]
