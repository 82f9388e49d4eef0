import numpy as np
import pytest

from brace.aggregators import UpdateKind
from brace.core import sign_quantize
from brace.document import ConfigError
from brace.tasks import *

quadratic = QuadraticTask.generate(n=4, d=6, radius=2.0, curvature=(0.5, 3.0), seed=1)
classification = ClassificationTask.generate(n=4, classes=3, features=5, train_size=400, test_size=100, seed=2)


def central_difference(task, w, h=1e-5):
    out = np.empty_like(w)
    for k in range(w.size):
        e = np.zeros_like(w)
        e[k] = h
        out[k] = (task.loss(w + e) - task.loss(w - e)) / (2 * h)
    return out


def test_quadratic_properties():
    assert quadratic.d == 6
    assert quadratic.n == 4
    assert quadratic.smoothness == np.max(quadratic.curvature)
    assert np.allclose(quadratic.full_gradient(quadratic.minimizer), 0.0)
    assert quadratic.evaluate_error(quadratic.minimizer) == pytest.approx(0.0, abs=1e-12)

def test_quadratic_generate_deterministic():
    again = QuadraticTask.generate(n=4, d=6, radius=2.0, curvature=(0.5, 3.0), seed=1)
    assert again.targets.tobytes() == quadratic.targets.tobytes()
    assert again.curvature.tobytes() == quadratic.curvature.tobytes()

def test_quadratic_offset():
    task = QuadraticTask.generate(n=3, d=2, offset=20.0, seed=0)
    assert np.allclose(task.initial_model() - task.minimizer, 20.0)
    # f(w¹) - f* = ½ L · offset² · d with unit curvature
    assert task.evaluate_error(task.initial_model()) == pytest.approx(400.0)

def test_quadratic_client_gradients_average():
    rng = np.random.default_rng(0)
    w = rng.normal(size=6)
    gradients = [quadratic.client_gradient(i, w, None, rng) for i in range(4)]
    assert np.allclose(np.mean(gradients, axis=0), quadratic.full_gradient(w))

def test_quadratic_noise():
    noisy = QuadraticTask.generate(n=2, d=3, noise=1.0, seed=0)
    w = np.zeros(3)
    exact = noisy.client_gradient(0, w, None, np.random.default_rng(0))
    sampled = noisy.client_gradient(0, w, 4, np.random.default_rng(0))
    assert not np.array_equal(exact, sampled)
    assert np.array_equal(sampled, noisy.client_gradient(0, w, 4, np.random.default_rng(0)))

def test_quadratic_stochastic_gradient_unbiased():
    noisy = QuadraticTask.generate(n=2, d=3, noise=1.0, seed=0)
    w = np.ones(3)
    exact = noisy.client_gradient(1, w, None, np.random.default_rng(0))
    rng = np.random.default_rng(1)
    draws = np.stack([noisy.client_gradient(1, w, 4, rng) for _ in range(10_000)])
    stderr = (1.0 / np.sqrt(4)) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - exact) <= 3 * stderr)

def test_quadratic_err():
    with pytest.raises(ValueError, match="curvature"):
        QuadraticTask(curvature=np.array([1.0, -1.0]), targets=np.zeros((2, 2)))
    with pytest.raises(ValueError, match="targets"):
        QuadraticTask(curvature=np.array([1.0]), targets=np.zeros((2, 2)))

def test_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    for task in (quadratic, classification):
        for _ in range(5):
            w = rng.normal(size=task.d)
            analytic = task.full_gradient(w)
            numeric = central_difference(task, w)
            assert np.linalg.norm(analytic - numeric) <= 1e-5 * np.linalg.norm(analytic)

def test_classification_shapes():
    assert classification.d == 15
    assert classification.n == 4
    assert sum(shard.size for shard in classification.shards) == 400
    merged = np.sort(np.concatenate(classification.shards))
    assert merged.tolist() == list(range(400))

def test_classification_minibatch():
    rng = np.random.default_rng(0)
    w = np.zeros(classification.d)
    g = classification.client_gradient(0, w, 8, rng)
    assert g.shape == (15,)
    with pytest.raises(ValueError):
        classification.client_gradient(0, w, 0, rng)

def test_classification_separable_training():
    task = ClassificationTask.generate(n=2, classes=2, features=5, train_size=500, test_size=500, separation=5.0, seed=3)
    w = task.initial_model()
    for _ in range(300):
        w = w - 0.01 * task.full_gradient(w)
    assert task.evaluate_error(w) <= 0.05

def test_random_model_is_at_chance():
    task = ClassificationTask.generate(n=10, classes=10, features=20, train_size=1000, test_size=5000, seed=6)
    rng = np.random.default_rng(0)
    errors = [task.evaluate_error(rng.normal(size=task.d)) for _ in range(20)]
    assert np.mean(errors) == pytest.approx(0.9, abs=0.05)

def test_with_labels():
    flipped = classification.with_labels([2 - y for y in classification.labels])
    assert flipped.labels[0].tolist() == (2 - classification.labels[0]).tolist()
    assert flipped.shards is classification.shards
    with pytest.raises(ValueError):
        classification.with_labels(classification.labels[:2])

def test_partition_noniid_full():
    labels = np.array([0, 1] * 50)
    shards = partition_noniid(labels, n=4, q=1.0, classes=2, seed=0)
    # Group 0 is clients 0 and 1, group 1 is clients 2 and 3
    for client in (0, 1):
        assert set(labels[shards[client]].tolist()) <= {0}
    for client in (2, 3):
        assert set(labels[shards[client]].tolist()) <= {1}
    assert sum(shard.size for shard in shards) == 100

def test_partition_noniid_uniform():
    labels = np.array([0, 1, 2] * 3000)
    shards = partition_noniid(labels, n=3, q=1 / 3, classes=3, seed=0)
    for shard in shards:
        counts = np.bincount(labels[shard], minlength=3) / shard.size
        assert np.allclose(counts, 1 / 3, atol=0.03)

def test_partition_noniid_own_group_fraction():
    labels = np.random.default_rng(0).integers(0, 10, size=100_000)
    # One client per group, so client l is group l
    shards = partition_noniid(labels, n=10, q=0.5, classes=10, seed=1)
    own = sum(int(np.sum(labels[shard] == client)) for client, shard in enumerate(shards))
    assert own / labels.size == pytest.approx(0.5, abs=0.02)

def test_partition_noniid_err():
    with pytest.raises(ValueError, match="fewer clients than label groups"):
        partition_noniid(np.zeros(10), n=2, q=0.5, classes=3, seed=0)
    with pytest.raises(ValueError, match="q"):
        partition_noniid(np.zeros(10), n=4, q=1.5, classes=3, seed=0)

def test_client_groups():
    assert [g.tolist() for g in client_groups(5, 2)] == [[0, 1, 2], [3, 4]]

def test_export_shards(tmp_path):
    export_shards(classification, tmp_path)
    files = sorted(tmp_path.iterdir())
    assert [f.name for f in files] == [f"client_{i:03d}.csv" for i in range(4)]

    rows = np.loadtxt(files[0], delimiter=',', ndmin=2)
    assert rows.shape == (classification.shards[0].size, 1 + 5)
    assert rows[:, 0].tolist() == classification.labels[0].tolist()

def test_apply_update():
    w = np.array([1.0, 1.0])
    assert apply_update(w, np.array([2.0, -4.0]), 0.5, UpdateKind.VALUE).tolist() == [0.0, 3.0]
    assert apply_update(w, np.array([1, -1], dtype=np.int8), 0.5, UpdateKind.SIGN).tolist() == [0.5, 1.5]
    assert apply_update(w, np.array([0.25, 0.0]), 0.5, UpdateKind.STEP).tolist() == [0.75, 1.0]
    with pytest.raises(ValueError, match="dimension mismatch"):
        apply_update(w, np.zeros(3), 0.5, UpdateKind.VALUE)

def test_opposite_sign_steps_cancel():
    w = np.random.default_rng(2).normal(size=5)
    step = sign_quantize(np.array([1.0, -2.0, 0.5, -0.1, 3.0]))
    there = apply_update(w, step, 0.1, UpdateKind.SIGN)
    back = apply_update(there, -step, 0.1, UpdateKind.SIGN)
    assert np.all(there != w)
    np.testing.assert_allclose(back, w, rtol=0, atol=1e-12)

def test_tasks_registry():
    assert set(TASKS) == {'quadratic', 'classification'}
    task = TASKS.bind('quadratic', {'d': 3}, context={'n': 2, 'seed': 0})()
    assert isinstance(task, QuadraticTask)
    assert task.d == 3
    assert task_dimension('classification', {'classes': 4}) == 80
    assert task_dimension('classification', {}) == TASKS.tunables('classification')['classes'].default * TASKS.tunables('classification')['features'].default
    assert task_param('classification', {'classes': 4}, 'classes') == 4
    assert task_param('classification', {}, 'train_size') == 6000
    with pytest.raises(ValueError, match="needs 'd'"):
        task_dimension('quadratic', {})

    with pytest.raises(ConfigError, match="needs: d"):
        TASKS.bind('quadratic', {}, context={'n': 2, 'seed': 0})

def test_task_protocol_functions():
    w = np.zeros(classification.d)
    rng = np.random.default_rng(3)
    gradient = stochastic_gradient(classification, 1, w, 8, rng)
    assert gradient.shape == (classification.d,)
    assert np.array_equal(stochastic_gradient(quadratic, 0, quadratic.minimizer, None, rng), quadratic.client_gradient(0, quadratic.minimizer, None, rng))
    assert np.allclose(stochastic_gradient(quadratic, 2, quadratic.targets[2], None, rng), 0.0)
    assert 0.0 <= evaluate_error(classification, w) <= 1.0
