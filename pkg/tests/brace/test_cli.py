import pytest
import yaml

from brace.cli import *
from brace.config import OUTPUT_DIR_ENV


@pytest.fixture(autouse=True)
def no_output_override(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)

def write_config(tmp_path, **changes):
    document = {
        'params': {'n': 4, 'f': 1, 'm': 8, 'lam': 0, 'eta': 0.05, 'rounds': 5},
        'architecture': 'brace',
        'attack': 'gaussian',
        'task': {'quadratic': {'d': 12, 'offset': 5.0}},
        'seeds': [0, 1],
        'output': str(tmp_path / 'out'),
        **changes,
    }
    path = tmp_path / 'config.yaml'
    path.write_text(yaml.safe_dump(document))
    return path


def test_run(tmp_path, capsys):
    assert main(['run', str(write_config(tmp_path))]) == EXIT_OK
    assert "median final test error" in capsys.readouterr().out

    summary = yaml.safe_load((tmp_path / 'out' / 'summary.yaml').read_text())
    assert summary['seeds'] == [0, 1]
    assert summary['config']['architecture'] == 'brace'
    assert summary['convergence_bound']['seed_0']['verdict'] == "bound holds"
    assert (tmp_path / 'out' / 'seed_1' / 'rounds.csv').read_text().startswith("round,loss,grad_norm,test_error,bits_total\n")

def test_run_output_env(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / 'elsewhere'))
    assert main(['run', str(write_config(tmp_path))]) == EXIT_OK
    assert (tmp_path / 'elsewhere' / 'summary.yaml').exists()
    assert not (tmp_path / 'out').exists()

def test_invalid_config(tmp_path, caplog):
    assert main(['run', str(write_config(tmp_path, epochs=3))]) == EXIT_CONFIG
    assert "$.epochs" in caplog.text

def test_sweep(tmp_path, capsys):
    path = write_config(tmp_path)
    assert main(['sweep', str(path), '--axis', 'lambda', '--values', '0,1', '--defense', 'brace', '--defense', '{sc: median}']) == EXIT_OK
    lines = (tmp_path / 'out' / 'sweep_lambda.csv').read_text().splitlines()
    assert lines[0] == "axis,value,defense,attack,seeds,median_test_error,median_loss"
    assert len(lines) == 5
    assert "sc-median" in capsys.readouterr().out

def test_sweep_bad_cell(tmp_path):
    assert main(['sweep', str(write_config(tmp_path)), '--axis', 'lambda', '--values', '0,9']) == EXIT_CONFIG

def test_commcost(tmp_path, capsys):
    out = tmp_path / 'cost.csv'
    assert main(['commcost', '--n', '2,10', '--d', '1000', '--m', '32', '--out', str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 1 + 8
    assert "MISMATCH" not in capsys.readouterr().out

def test_verify(tmp_path, capsys):
    assert main(['verify', '--check', 'bit_accounting', '--out', str(tmp_path)]) == EXIT_OK
    assert "bit_accounting" in capsys.readouterr().out
    report = yaml.safe_load((tmp_path / 'verify.yaml').read_text())
    assert list(report['checks']) == ['bit_accounting']
    assert report['passed'] is True

def test_unknown_command():
    with pytest.raises(SystemExit):
        main(['train'])
