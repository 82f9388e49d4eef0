"""
Message-level execution of the ring-all-reduce (RAR) and BRACE protocols over
n simulated clients, with bit-exact communication accounting.

Execution is lock-step: every message of step s is built from the buffers as
they stand before any step-s delivery, then all of them are delivered.
"""

import json

from dataclasses import dataclass, field
from enum import StrEnum
from fractions import Fraction
from typing import IO, Iterable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .core import (ChunkPlan, GradVec, SignVec, as_grad_matrix, chunk_plan,
                   consensus_map, required_width, sign_quantize)


class Phase(StrEnum):
    SHARE_REDUCE = 'ShareReduce'
    SHARE_ONLY = 'ShareOnly'
    UPLOAD = 'Upload'


class Architecture(StrEnum):
    SC = 'SC'
    RAR = 'RAR'
    BRACE = 'BRACE'


@dataclass(frozen=True)
class Message:
    sender: int
    receiver: int
    phase: Phase
    step: int
    chunk_id: int
    payload: NDArray[np.generic] = field(repr=False)
    bits: int

    def trace_record(self) -> dict[str, object]:
        return {
            'from': self.sender,
            'to': self.receiver,
            'phase': str(self.phase),
            'step': self.step,
            'chunk_id': self.chunk_id,
            'bits': self.bits,
        }


@dataclass
class CommLedger:
    per_client_bits: list[int]
    per_phase_bits: dict[Phase, int] = field(default_factory=dict)

    @classmethod
    def empty(cls, n: int) -> 'CommLedger':
        return cls(per_client_bits=[0] * n)

    @property
    def n(self) -> int:
        return len(self.per_client_bits)

    @property
    def total_bits(self) -> int:
        return sum(self.per_client_bits)

    def charge(self, client: int, phase: Phase, bits: int):
        if bits < 0:
            raise ValueError(f"cannot charge negative bits: {bits}")
        self.per_client_bits[client] += bits
        self.per_phase_bits[phase] = self.per_phase_bits.get(phase, 0) + bits

    def check(self):
        if sum(self.per_phase_bits.values()) != self.total_bits:
            raise RuntimeError(f"ledger out of balance: phases {self.per_phase_bits} vs clients {self.per_client_bits}")
        if any(bits < 0 for bits in self.per_client_bits):
            raise RuntimeError("ledger has negative counters")


def schedule_chunk(client: int, step: int, phase: Phase, n: int) -> int:
    """
    Chunk `client` sends at `step` (1-based). Share-Reduce: (client - step + 1) mod n,
    so client i ends the phase owning chunk (i + 1) mod n. Share-Only: the owned
    chunk first, then whatever arrived the step before.
    """
    if not 0 <= client < n:
        raise ValueError(f"client {client} outside ring of {n}")
    if not 1 <= step <= n - 1:
        raise ValueError(f"step {step} outside [1, {n - 1}]")

    match phase:
        case Phase.SHARE_REDUCE:
            return (client - step + 1) % n
        case Phase.SHARE_ONLY:
            return (client - step + 2) % n
        case _:
            raise ValueError(f"phase {phase} has no ring schedule")


def owned_chunk(client: int, n: int) -> int:
    """Chunk fully reduced at `client` once Share-Reduce completes."""
    return (client + 1) % n


class Ring:
    """
    State of one protocol execution: a working buffer per client, the
    number of client contributions folded into each (client, chunk) cell,
    the ledger and, optionally, every message sent.
    """

    plan: ChunkPlan
    buffers: NDArray[np.generic]
    folded: NDArray[np.int64]
    ledger: CommLedger
    messages: list[Message] | None

    def __init__(self, payloads: ArrayLike, plan: ChunkPlan, keep_messages: bool = False):
        self.buffers = np.array(payloads, copy=True)
        n, d = self.buffers.shape
        if (n, d) != (plan.n, plan.d):
            raise ValueError(f"dimension mismatch: plan is for n={plan.n}, d={plan.d}, got payloads of shape {(n, d)}")

        self.plan = plan
        self.folded = np.ones((n, n), dtype=np.int64)
        self.ledger = CommLedger.empty(n)
        self.messages = [] if keep_messages else None

    @property
    def n(self) -> int:
        return self.plan.n

    def _exchange(self, phase: Phase, step: int, width: int, reduce: bool):
        n = self.n
        outgoing: list[Message] = []
        for sender in range(n):
            chunk_id = schedule_chunk(sender, step, phase, n)
            payload = self.buffers[sender, self.plan.chunk(chunk_id)].copy()
            outgoing.append(Message(
                sender=sender,
                receiver=(sender + 1) % n,
                phase=phase,
                step=step,
                chunk_id=chunk_id,
                payload=payload,
                bits=payload.size * width,
            ))

        folded = self.folded.copy()
        for message in outgoing:
            span = self.plan.chunk(message.chunk_id)
            receiver, chunk_id = message.receiver, message.chunk_id
            if reduce:
                self.buffers[receiver, span] = message.payload + self.buffers[receiver, span]
                self.folded[receiver, chunk_id] = folded[message.sender, chunk_id] + folded[receiver, chunk_id]
            else:
                self.buffers[receiver, span] = message.payload
                self.folded[receiver, chunk_id] = folded[message.sender, chunk_id]

            self.ledger.charge(message.sender, phase, message.bits)
            if self.messages is not None:
                self.messages.append(message)

    def share_reduce(self, width: int):
        for step in range(1, self.n):
            self._exchange(Phase.SHARE_REDUCE, step, width, reduce=True)

    def share_only(self, width: int):
        for step in range(1, self.n):
            self._exchange(Phase.SHARE_ONLY, step, width, reduce=False)

    def consensus(self, lam: int):
        for client in range(self.n):
            span = self.plan.chunk(owned_chunk(client, self.n))
            self.buffers[client, span] = consensus_map(self.buffers[client, span], lam)

    def result(self) -> NDArray[np.generic]:
        if not np.all(self.buffers == self.buffers[0]):
            raise RuntimeError("ring finished with diverging client buffers")
        if not np.all(self.folded == self.n):
            raise RuntimeError("ring finished with partially reduced chunks")
        self.ledger.check()
        return self.buffers[0].copy()


def _checked_gradients(gradients: ArrayLike, plan: ChunkPlan) -> NDArray[np.float64]:
    matrix = as_grad_matrix(gradients)
    if matrix.shape != (plan.n, plan.d):
        raise ValueError(f"dimension mismatch: plan is for n={plan.n}, d={plan.d}, got gradients of shape {matrix.shape}")
    return matrix


def run_rar_round(
    gradients: ArrayLike,
    plan: ChunkPlan,
    m: int,
    trace: list[Message] | None = None,
) -> tuple[GradVec, CommLedger]:
    """Classic RAR: every client ends with Σ_i g_i, m bits per entry in both phases."""
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")

    ring = Ring(_checked_gradients(gradients, plan), plan, keep_messages=trace is not None)
    ring.share_reduce(m)
    ring.share_only(m)

    if trace is not None and ring.messages is not None:
        trace.extend(ring.messages)
    return ring.result().astype(np.float64), ring.ledger


def run_brace_round(
    gradients: ArrayLike,
    plan: ChunkPlan,
    lam: int,
    m: int,
    trace: list[Message] | None = None,
) -> tuple[SignVec, CommLedger]:
    """
    BRACE: quantize to signs, Share-Reduce the sign sums at m bits per entry,
    map each owned chunk through the consensus threshold, Share-Only at 1 bit.
    """
    n = plan.n
    if not -n <= lam <= n:
        raise ValueError(f"lam must lie in [-n, n] = [{-n}, {n}], got {lam}")
    if m < required_width(n):
        raise ValueError(f"m={m} bits cannot carry sign sums in [-{n}, {n}]; need m >= {required_width(n)}")

    signs = np.stack([sign_quantize(g) for g in _checked_gradients(gradients, plan)]).astype(np.int64)

    ring = Ring(signs, plan, keep_messages=trace is not None)
    ring.share_reduce(m)
    ring.consensus(lam)
    ring.share_only(1)

    if trace is not None and ring.messages is not None:
        trace.extend(ring.messages)
    return ring.result().astype(np.int8), ring.ledger


def run_sc_round(gradients: ArrayLike, m: int) -> CommLedger:
    """Server-client upload accounting: every client sends its full gradient, m bits per entry."""
    matrix = as_grad_matrix(gradients)
    n, d = matrix.shape
    ledger = CommLedger.empty(n)
    for client in range(n):
        ledger.charge(client, Phase.UPLOAD, m * d)
    return ledger


def predicted_cost(arch: Architecture, n: int, d: int, m: int) -> float:
    """Per-round cost: m·n·d for SC, 2md(n-1)/n for RAR, d(n-1)(m+1)/n for BRACE."""
    match arch:
        case Architecture.SC:
            cost = Fraction(m * n * d)
        case Architecture.RAR:
            cost = Fraction(2 * m * d * (n - 1), n)
        case Architecture.BRACE:
            cost = Fraction(d * (n - 1) * (m + 1), n)
        case _:
            raise ValueError(f"unknown architecture {arch}")
    return float(cost)


def chunk_exact_bits(plan: ChunkPlan, arch: Architecture, m: int) -> list[int]:
    """Per-client bits implied by the schedule and the actual chunk sizes."""
    n = plan.n
    widths = {
        Architecture.RAR: (m, m),
        Architecture.BRACE: (m, 1),
    }
    if arch not in widths:
        raise ValueError(f"{arch} is not a ring architecture")
    reduce_width, share_width = widths[arch]

    bits = [0] * n
    for client in range(n):
        for step in range(1, n):
            bits[client] += plan.size(schedule_chunk(client, step, Phase.SHARE_REDUCE, n)) * reduce_width
            bits[client] += plan.size(schedule_chunk(client, step, Phase.SHARE_ONLY, n)) * share_width
    return bits


def measured_cost(ledger: CommLedger, arch: Architecture) -> int:
    """The bottleneck volume the predicted costs describe: server ingress for SC, the busiest client for a ring."""
    if arch is Architecture.SC:
        return ledger.total_bits
    return max(ledger.per_client_bits)


@dataclass(frozen=True)
class CostReport:
    arch: Architecture
    n: int
    d: int
    m: int
    measured: int
    predicted: float
    chunk_exact: int | None
    mean_per_client: float
    gap: float

    def __str__(self) -> str:
        text = f"{self.arch} n={self.n} d={self.d} m={self.m}: measured {self.measured} bits, predicted {self.predicted:g}"
        if self.gap:
            text += f" (gap {self.gap:+g} from unequal chunks; per-client mean {self.mean_per_client:g})"
        return text


def ledger_matches_prediction(
    ledger: CommLedger,
    arch: Architecture,
    n: int,
    d: int,
    m: int,
) -> tuple[bool, CostReport]:
    measured = measured_cost(ledger, arch)
    predicted = predicted_cost(arch, n, d, m)
    mean = ledger.total_bits / n if n else 0.0

    if arch is Architecture.SC or n == 1:
        matches = measured == predicted
        chunk_exact = measured if arch is not Architecture.SC else None
    else:
        expected = chunk_exact_bits(chunk_plan(d, n), arch, m)
        matches = ledger.per_client_bits == expected
        if d % n == 0:
            matches = matches and measured == predicted
        chunk_exact = max(expected)

    report = CostReport(
        arch=arch, n=n, d=d, m=m,
        measured=measured,
        predicted=predicted,
        chunk_exact=chunk_exact,
        mean_per_client=mean,
        gap=measured - predicted,
    )
    return matches, report


def dump_trace(messages: Iterable[Message], fp: IO[str]):
    for message in messages:
        fp.write(json.dumps(message.trace_record()) + '\n')
