import logging

import numpy as np
import pytest

from brace.config import parse_config
from brace.harness import RoundRecord, run_experiment
from brace.monitor import *
from brace.verify import monitor_config


def records(grad_norms, oppositions=None):
    if oppositions is None:
        oppositions = [None] * len(grad_norms)
    return [
        RoundRecord(t + 1, 1.0, g, 0.0, 0, '', None if o is None else np.array(o))
        for t, (g, o) in enumerate(zip(grad_norms, oppositions))
    ]

def short_monitor_config(*args, rounds=200):
    document = monitor_config(*args)
    document['params']['rounds'] = rounds
    return parse_config(document, env={})


def test_bound_terms():
    report = theorem1_monitor(records([1.0, 3.0], [[False, False]] * 2), L=1.0, eta=0.1, f_star=0.0, f_w1=1.0, d=2)
    assert report.rounds == 2
    assert report.lhs == 2.0
    assert report.rhs_stated == pytest.approx(5.005)
    assert report.rhs_dscaled == pytest.approx(5.01)
    assert report.max_opposition == 0.0
    assert report.hypothesis_holds
    assert report.verdict == "bound holds"
    report.check()

def test_bound_violated():
    # Opposition rate per dimension: 0 and 0.5
    report = theorem1_monitor(records([100.0, 100.0], [[False, True], [False, False]]), L=1.0, eta=0.1, f_star=0.0, f_w1=1.0, d=2)
    assert report.max_opposition == 0.5
    assert not report.hypothesis_holds

    report = theorem1_monitor(records([100.0, 100.0], [[False, False]] * 2), L=1.0, eta=0.1, f_star=0.0, f_w1=1.0, d=2)
    assert report.verdict == "bound violated"
    with pytest.raises(AssertionError, match="convergence bound violated"):
        report.check()

def test_hypothesis_violated(caplog):
    with caplog.at_level(logging.WARNING, logger='brace.monitor'):
        report = theorem1_monitor(records([100.0], [[True, False]]), L=1.0, eta=0.1, f_star=0.0, f_w1=1.0, d=2)
    assert report.verdict.startswith("hypothesis violated")
    assert "hypothesis violated" in caplog.text
    # Not asserted when the hypothesis fails
    report.check()

def test_value_updates():
    report = theorem1_monitor(records([100.0, 100.0]), L=1.0, eta=0.1, f_star=0.0, f_w1=1.0, d=2)
    assert report.max_opposition is None
    assert not report.hypothesis_holds
    assert report.verdict == "not applicable: the update is not a sign step"
    report.check()
    assert report.as_dict()['verdict'] == report.verdict

def test_monitor_arguments():
    with pytest.raises(ValueError, match="smoothness"):
        theorem1_monitor(records([1.0]), L=None, eta=0.1, f_star=0.0, f_w1=1.0, d=1)
    with pytest.raises(ValueError, match="smoothness"):
        theorem1_monitor(records([1.0]), L=1.0, eta=0.1, f_star=None, f_w1=1.0, d=1)
    with pytest.raises(ValueError, match="at least one round"):
        theorem1_monitor([], L=1.0, eta=0.1, f_star=0.0, f_w1=1.0, d=1)
    with pytest.raises(ValueError, match="eta"):
        theorem1_monitor(records([1.0]), L=1.0, eta=0.0, f_star=0.0, f_w1=1.0, d=1)

def test_start_at_optimum():
    document = {
        'params': {'n': 2, 'f': 0, 'm': 8, 'lam': 0, 'eta': 0.1, 'rounds': 1},
        'architecture': 'brace',
        'task': {'quadratic': {'d': 4}},
    }
    report = monitor_run(run_experiment(parse_config(document, env={})))
    assert report.lhs == 0.0
    assert report.rhs_stated == pytest.approx(0.1 ** 2 / 2)
    assert report.rhs_dscaled == pytest.approx(4 * 0.1 ** 2 / 2)

def test_honest_one_dimension():
    report = monitor_run(run_experiment(short_monitor_config(1, 5, 0, 'none', {'sc': {'brace_oracle': {'lam': 0}}}, 0, 0)))
    assert report.hypothesis_holds
    assert report.stated_holds
    assert report.rhs_stated == report.rhs_dscaled

def test_adaptive_attack_bound():
    report = monitor_run(run_experiment(short_monitor_config(50, 10, 2, 'adaptive_brace', 'brace', 5, 0)))
    assert report.hypothesis_holds
    assert report.dscaled_holds
    report.check()

def test_adaptive_attack_at_optimum(caplog):
    config = short_monitor_config(50, 10, 2, 'adaptive_brace', 'brace', 5, 0, 0.0)
    with caplog.at_level(logging.WARNING, logger='brace.monitor'):
        report = monitor_run(run_experiment(config))
    # No descent left to make: the attacker holds the consensus against ∇f
    assert report.rhs_dscaled == pytest.approx(50 * 0.01 ** 2 / 2)
    assert report.max_opposition >= 0.5
    assert not report.hypothesis_holds
    assert report.verdict.startswith("hypothesis violated")
    assert "hypothesis violated" in caplog.text
    report.check()
