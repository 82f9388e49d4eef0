import io
import json

import numpy as np
import pytest

from brace.aggregators import gar_brace_oracle
from brace.core import chunk_plan, ring_sum
from brace.ring import *

three_clients = [[5.0, 2.0, -10.0], [8.0, -4.0, 7.0], [9.0, 3.0, 8.0]]
plan3 = chunk_plan(3, 3)


def test_schedule_chunk():
    assert schedule_chunk(0, 1, Phase.SHARE_REDUCE, 3) == 0
    assert schedule_chunk(2, 2, Phase.SHARE_REDUCE, 3) == 1
    # Share-Only starts with the owned chunk
    for client in range(5):
        assert schedule_chunk(client, 1, Phase.SHARE_ONLY, 5) == owned_chunk(client, 5)

def test_schedule_chunk_err():
    with pytest.raises(ValueError):
        schedule_chunk(0, 0, Phase.SHARE_REDUCE, 3)
    with pytest.raises(ValueError):
        schedule_chunk(0, 3, Phase.SHARE_REDUCE, 3)
    with pytest.raises(ValueError):
        schedule_chunk(3, 1, Phase.SHARE_REDUCE, 3)
    with pytest.raises(ValueError):
        schedule_chunk(0, 1, Phase.UPLOAD, 3)

def test_rar_round_three_clients():
    total, ledger = run_rar_round(three_clients, plan3, m=32)
    assert total.tolist() == [22.0, 1.0, 5.0]
    assert ledger.total_bits == 2 * 32 * 3 * 2

def test_rar_round_poisoned():
    poisoned = [row[:] for row in three_clients]
    poisoned[0][2] = -200.0
    total, _ = run_rar_round(poisoned, plan3, m=32)
    assert total.tolist() == [22.0, 1.0, -185.0]

def test_share_reduce_ownership():
    ring = Ring(three_clients, plan3)
    ring.share_reduce(32)
    # The first client owns the middle chunk: 2 - 4 + 3
    assert ring.buffers[0, plan3.chunk(1)].tolist() == [1.0]
    for client in range(3):
        assert ring.folded[client, owned_chunk(client, 3)] == 3

def test_share_reduce_fold_counts():
    n = 5
    ring = Ring(np.ones((n, n)), chunk_plan(n, n))
    for step in range(1, n):
        ring._exchange(Phase.SHARE_REDUCE, step, 8, reduce=True)
        # The chunk sent this step has s + 1 contributions at its receiver
        for sender in range(n):
            chunk_id = schedule_chunk(sender, step, Phase.SHARE_REDUCE, n)
            assert ring.folded[(sender + 1) % n, chunk_id] == step + 1

def test_rar_round_single_client():
    total, ledger = run_rar_round([[7.0]], chunk_plan(1, 1), m=32)
    assert total.tolist() == [7.0]
    assert ledger.total_bits == 0

def test_rar_round_err():
    with pytest.raises(ValueError, match="dimension mismatch"):
        run_rar_round([[1.0, 2.0], [3.0, 4.0]], plan3, m=8)
    with pytest.raises(ValueError):
        run_rar_round(three_clients, plan3, m=0)

def test_rar_round_matches_ring_sum():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 9))
        d = int(rng.integers(n, 30))
        gradients = rng.normal(scale=10.0 ** rng.integers(-6, 6), size=(n, d))
        plan = chunk_plan(d, n)
        total, _ = run_rar_round(gradients, plan, m=32)
        # Bitwise, not approximately
        assert total.tobytes() == ring_sum(gradients, plan).tobytes()

def test_brace_round_three_clients():
    signs, ledger = run_brace_round(three_clients, plan3, lam=2, m=8)
    assert signs.tolist() == [1, -1, -1]
    assert ledger.per_phase_bits == {Phase.SHARE_REDUCE: 3 * 2 * 8, Phase.SHARE_ONLY: 3 * 2 * 1}

def test_brace_round_unanimous():
    g = np.tile([0.5, 2.0, 1e-9, 3.0, 4.0], (5, 1))
    signs, _ = run_brace_round(g, chunk_plan(5, 5), lam=4, m=8)
    assert signs.tolist() == [1] * 5

def test_brace_round_one_negated():
    rng = np.random.default_rng(3)
    g = np.abs(rng.normal(size=(5, 5))) + 0.1
    plan = chunk_plan(5, 5)
    honest, _ = run_brace_round(g, plan, lam=0, m=8)
    g[2] = -g[2]
    flipped, _ = run_brace_round(g, plan, lam=0, m=8)
    assert flipped.tolist() == honest.tolist() == [1] * 5

def test_brace_round_matches_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(1, 10))
        d = int(rng.integers(n, 40))
        lam = int(rng.integers(-n, n + 1))
        gradients = rng.normal(size=(n, d))
        signs, _ = run_brace_round(gradients, chunk_plan(d, n), lam, m=8)
        assert np.array_equal(signs, gar_brace_oracle(gradients, lam=lam))

def test_brace_round_err():
    with pytest.raises(ValueError, match="lam"):
        run_brace_round(three_clients, plan3, lam=4, m=8)
    with pytest.raises(ValueError, match="need m >= 3"):
        run_brace_round(three_clients, plan3, lam=0, m=2)

def test_messages():
    trace: list[Message] = []
    run_brace_round(np.ones((4, 10)), chunk_plan(10, 4), lam=0, m=16, trace=trace)
    assert len(trace) == 2 * 4 * 3
    for message in trace:
        assert message.receiver == (message.sender + 1) % 4
        width = 16 if message.phase is Phase.SHARE_REDUCE else 1
        assert message.bits == message.payload.size * width

def test_dump_trace():
    trace: list[Message] = []
    run_rar_round(three_clients, plan3, m=8, trace=trace)
    fp = io.StringIO()
    dump_trace(trace, fp)

    lines = fp.getvalue().splitlines()
    assert len(lines) == len(trace) == 12
    first = json.loads(lines[0])
    assert list(first) == ['from', 'to', 'phase', 'step', 'chunk_id', 'bits']
    assert first == {'from': 0, 'to': 1, 'phase': 'ShareReduce', 'step': 1, 'chunk_id': 0, 'bits': 8}

def test_ledger():
    ledger = CommLedger.empty(2)
    ledger.charge(0, Phase.UPLOAD, 5)
    ledger.charge(1, Phase.UPLOAD, 7)
    assert ledger.total_bits == 12
    ledger.check()

    with pytest.raises(ValueError):
        ledger.charge(0, Phase.UPLOAD, -1)

    ledger.per_client_bits[0] += 1
    with pytest.raises(RuntimeError, match="out of balance"):
        ledger.check()

def test_sc_round():
    ledger = run_sc_round(np.zeros((4, 6)), m=32)
    assert ledger.per_client_bits == [192] * 4
    assert ledger.per_phase_bits == {Phase.UPLOAD: 768}

def test_predicted_cost():
    assert predicted_cost(Architecture.SC, 100, 1000, 32) == 3_200_000
    assert predicted_cost(Architecture.RAR, 1, 17, 32) == 0
    assert predicted_cost(Architecture.BRACE, 100, 1000, 32) == 32_670
    assert predicted_cost(Architecture.RAR, 3, 4, 8) == pytest.approx(2 * 8 * 4 * 2 / 3)

def test_ledger_matches_prediction_even():
    _, ledger = run_brace_round(np.ones((4, 8)), chunk_plan(8, 4), lam=0, m=16)
    matches, report = ledger_matches_prediction(ledger, Architecture.BRACE, 4, 8, 16)
    assert matches
    assert ledger.per_client_bits == [102] * 4
    assert report.measured == report.predicted == 102
    assert report.gap == 0

def test_ledger_matches_prediction_uneven():
    _, ledger = run_brace_round(np.ones((3, 4)), chunk_plan(4, 3), lam=0, m=8)
    assert ledger.per_client_bits == [27, 26, 19]

    matches, report = ledger_matches_prediction(ledger, Architecture.BRACE, 3, 4, 8)
    assert matches
    assert report.predicted == 24
    assert report.measured == report.chunk_exact == 27
    assert report.gap == 3
    assert report.mean_per_client == 24
    assert "gap +3" in str(report)

def test_ledger_matches_prediction_single_client():
    _, ledger = run_rar_round([[1.0, 2.0]], chunk_plan(2, 1), m=8)
    matches, report = ledger_matches_prediction(ledger, Architecture.RAR, 1, 2, 8)
    assert matches
    assert report.measured == 0

def test_chunk_exact_bits():
    assert chunk_exact_bits(chunk_plan(4, 3), Architecture.RAR, 8) == [48, 40, 40]
    with pytest.raises(ValueError):
        chunk_exact_bits(chunk_plan(4, 3), Architecture.SC, 8)

def test_measured_cost():
    ledger = run_sc_round(np.zeros((3, 2)), m=4)
    assert measured_cost(ledger, Architecture.SC) == 24
    _, ledger = run_rar_round(np.zeros((3, 4)), chunk_plan(4, 3), m=8)
    assert measured_cost(ledger, Architecture.RAR) == 48
