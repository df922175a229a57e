"""Slice-partitioned downlink MAC simulator on a 1 ms TTI clock.

A 20 MHz LTE carrier (100 RBs) is scheduled in 25 resource block groups of
4 RBs each. Every TTI the simulator drains per-UE FIFO queues onto the RBGs
owned by the UE's slice, bounded by a per-(RBG, TTI) channel capacity drawn
from a seeded, uniformly varying channel around a calibrated mean.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

N_RBGS = 25
RBS_PER_RBG = 4
# ~34 Mbit/s aggregate downlink / 25 RBGs / 1000 TTI per second
DEFAULT_BITS_PER_RBG_PER_TTI = 1360.0
DEFAULT_MTU_BITS = 12000

DEDICATED = "dedicated"
BEST_EFFORT = "best_effort"

_BLOCK_TTIS = 1000


class SimulationError(Exception):
    """Raised when a simulator precondition is violated."""


class UnknownUEError(SimulationError):
    pass


class SliceConfigError(SimulationError):
    pass


@dataclass(frozen=True)
class Rbg:
    index: int

    def __post_init__(self) -> None:
        if not 0 <= self.index < N_RBGS:
            raise ValueError(f"RBG index {self.index} outside [0, {N_RBGS - 1}]")


@dataclass(frozen=True)
class SliceConfig:
    slice_id: str
    rbg_count: int
    ue_ids: frozenset
    kind: str = DEDICATED

    def __post_init__(self) -> None:
        if self.kind not in (DEDICATED, BEST_EFFORT):
            raise ValueError(f"unknown slice kind {self.kind!r}")
        if self.rbg_count < 0:
            raise ValueError("rbg_count must be non-negative")
        object.__setattr__(self, "ue_ids", frozenset(self.ue_ids))


@dataclass(frozen=True, slots=True)
class Packet:
    """A MAC-queue fragment.

    ``frame_seq`` is ground truth for metrics only; the controller never
    receives packets, just per-TTI bit counts.
    """

    ue_id: str
    size_bits: int
    created_at_ms: int
    frame_seq: int

    def __post_init__(self) -> None:
        if self.size_bits <= 0:
            raise ValueError("packet size must be positive")


@dataclass
class ChannelModel:
    """Uniform multiplicative capacity noise per (RBG, TTI).

    Draws are generated lazily in blocks of 1000 TTIs, each block seeded by
    ``(seed, block_index)`` so any single draw is a pure function of
    ``(seed, rbg, tti)``.
    """

    mean_bits_per_rbg_per_tti: float = DEFAULT_BITS_PER_RBG_PER_TTI
    variation: float = 0.1
    seed: int = 0
    _cache: Dict[int, np.ndarray] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.variation < 1.0:
            raise ValueError("variation must lie in [0, 1)")
        if self.mean_bits_per_rbg_per_tti <= 0:
            raise ValueError("mean capacity must be positive")

    @property
    def max_bits_per_rbg(self) -> int:
        return int(math.floor(self.mean_bits_per_rbg_per_tti * (1.0 + self.variation)))

    def block(self, index: int) -> np.ndarray:
        blk = self._cache.get(index)
        if blk is None:
            mean = self.mean_bits_per_rbg_per_tti
            if self.variation == 0.0:
                blk = np.full((_BLOCK_TTIS, N_RBGS), mean)
            else:
                rng = np.random.default_rng([self.seed, index])
                noise = rng.uniform(-1.0, 1.0, size=(_BLOCK_TTIS, N_RBGS))
                blk = np.floor(mean * (1.0 + self.variation * noise))
                blk = np.maximum(blk, 1.0)
            # keep a small working set; runs only move forward in time
            if len(self._cache) > 4:
                self._cache.clear()
            self._cache[index] = blk
        return blk

    def row(self, tti_ms: int) -> List[float]:
        """Capacities of all 25 RBGs at ``tti_ms``."""
        return self.block(tti_ms // _BLOCK_TTIS)[tti_ms % _BLOCK_TTIS].tolist()


def channel_capacity(model: ChannelModel, rbg: Rbg, tti_ms: int) -> float:
    """Bits RBG ``rbg`` can carry during TTI ``tti_ms``."""
    if tti_ms < 0:
        raise ValueError("tti_ms must be non-negative")
    return float(model.block(tti_ms // _BLOCK_TTIS)[tti_ms % _BLOCK_TTIS, rbg.index])


@dataclass
class TtiReport:
    tti_ms: int
    per_ue_bits_sent: Dict[str, int]
    per_ue_queue_bits: Dict[str, int]
    per_slice_rbgs_used: Dict[str, int]
    # packets whose last bit left the queue this TTI (ground truth only)
    completed: List[Packet] = field(default_factory=list)
    capacity_bits: float = 0.0
    rbg_owner: Tuple[str, ...] = ()


class _UEQueue:
    __slots__ = ("packets", "head_left", "bits")

    def __init__(self) -> None:
        self.packets: Deque[Packet] = deque()
        self.head_left = 0
        self.bits = 0

    def push(self, p: Packet) -> None:
        if not self.packets:
            self.head_left = p.size_bits
        self.packets.append(p)
        self.bits += p.size_bits

    def drain(self, budget: int, done: List[Packet]) -> int:
        """Remove up to ``budget`` bits from the head; return bits removed."""
        sent = 0
        packets = self.packets
        while packets and budget > 0:
            if self.head_left <= budget:
                budget -= self.head_left
                sent += self.head_left
                done.append(packets.popleft())
                self.head_left = packets[0].size_bits if packets else 0
            else:
                self.head_left -= budget
                sent += budget
                budget = 0
        self.bits -= sent
        return sent


def validate_partition(
    configs: Sequence[SliceConfig],
    known_ues: Iterable[str],
    n_rbgs: int = N_RBGS,
    be_floor: int = 1,
) -> None:
    """Raise ``SliceConfigError`` unless ``configs`` form a legal partition."""
    be = [c for c in configs if c.kind == BEST_EFFORT]
    if len(be) != 1:
        raise SliceConfigError("exactly one best-effort slice is required")
    ids = [c.slice_id for c in configs]
    if len(set(ids)) != len(ids):
        raise SliceConfigError("duplicate slice id")
    dedicated = sum(c.rbg_count for c in configs if c.kind == DEDICATED)
    if dedicated > n_rbgs - be_floor:
        raise SliceConfigError(
            f"over-allocation: {dedicated} dedicated RBGs exceeds {n_rbgs - be_floor}"
        )
    seen: Dict[str, str] = {}
    for c in configs:
        for ue in c.ue_ids:
            if ue in seen:
                raise SliceConfigError(f"UE {ue!r} in slices {seen[ue]!r} and {c.slice_id!r}")
            seen[ue] = c.slice_id
    missing = set(known_ues) - set(seen)
    if missing:
        raise SliceConfigError(f"UEs without a slice: {sorted(missing)}")


class RanSimulator:
    """Single-cell downlink MAC with static slice isolation.

    Dedicated slices receive the lowest-index RBGs (in slice-id order); the
    best-effort slice owns the rest. Inside a slice, RBGs are handed out
    round-robin over backlogged UEs. With ``strict_isolation`` off, RBGs a
    dedicated slice leaves idle in a TTI are offered to the best-effort UEs.
    """

    def __init__(
        self,
        ue_ids: Iterable[str],
        channel: Optional[ChannelModel] = None,
        *,
        best_effort_id: str = "be",
        be_floor: int = 1,
        strict_isolation: bool = True,
    ) -> None:
        self.channel = channel if channel is not None else ChannelModel()
        self.queues: Dict[str, _UEQueue] = {ue: _UEQueue() for ue in ue_ids}
        self.be_floor = be_floor
        self.strict_isolation = strict_isolation
        self.now = 0
        self.last_epoch = -1
        self._pending: Optional[List[SliceConfig]] = None
        self._rr_offset: Dict[str, int] = {}
        self._install(
            [SliceConfig(best_effort_id, N_RBGS, frozenset(self.queues), BEST_EFFORT)]
        )

    # -- configuration -------------------------------------------------------

    @property
    def partition(self) -> List[SliceConfig]:
        return list(self._configs)

    def rbgs_of(self, slice_id: str) -> List[int]:
        return list(self._rbgs[slice_id])

    def slice_of(self, ue_id: str) -> str:
        return self._ue_slice[ue_id]

    def _install(self, configs: Sequence[SliceConfig]) -> None:
        dedicated = sorted((c for c in configs if c.kind == DEDICATED), key=lambda c: c.slice_id)
        be = next(c for c in configs if c.kind == BEST_EFFORT)
        rbgs: Dict[str, List[int]] = {}
        nxt = 0
        for c in dedicated:
            rbgs[c.slice_id] = list(range(nxt, nxt + c.rbg_count))
            nxt += c.rbg_count
        rbgs[be.slice_id] = list(range(nxt, N_RBGS))
        be = SliceConfig(be.slice_id, N_RBGS - nxt, be.ue_ids, BEST_EFFORT)
        self._configs = dedicated + [be]
        self._be_id = be.slice_id
        self._rbgs = rbgs
        self._ue_slice = {ue: c.slice_id for c in self._configs for ue in c.ue_ids}
        self._slice_ues = {c.slice_id: sorted(c.ue_ids) for c in self._configs}
        owner = [""] * N_RBGS
        for sid, idx in rbgs.items():
            for i in idx:
                owner[i] = sid
        self._owner = tuple(owner)

    def apply_slice_config(self, configs: Sequence[SliceConfig], epoch: int) -> bool:
        """Stage a new partition for the next TTI boundary.

        Returns False (and changes nothing) for a stale epoch. Raises
        ``SliceConfigError`` for an illegal partition, keeping the old one.
        """
        if epoch <= self.last_epoch:
            return False
        validate_partition(configs, self.queues, N_RBGS, self.be_floor)
        self.last_epoch = epoch
        self._pending = list(configs)
        return True

    # -- traffic ---------------------------------------------------------------

    def enqueue(self, p: Packet) -> None:
        q = self.queues.get(p.ue_id)
        if q is None:
            raise UnknownUEError(f"unknown UE {p.ue_id!r}")
        if p.created_at_ms < self.now:
            raise SimulationError(
                f"packet created at {p.created_at_ms} ms enqueued at {self.now} ms"
            )
        q.push(p)

    def queue_bits(self, ue_id: str) -> int:
        return self.queues[ue_id].bits

    def queued_packets(self, ue_id: str) -> List[Packet]:
        return list(self.queues[ue_id].packets)

    # -- scheduling ------------------------------------------------------------

    def _schedule_slice(
        self,
        sid: str,
        rbg_idx: Sequence[int],
        ues: Sequence[str],
        caps: List[float],
        sent: Dict[str, int],
        done: List[Packet],
    ) -> Tuple[int, List[int]]:
        """Drain ``ues`` over ``rbg_idx``; return (rbgs used, idle rbgs)."""
        queues = self.queues
        backlogged = [u for u in ues if queues[u].bits > 0]
        if not backlogged:
            return 0, list(rbg_idx)
        used = 0
        if len(backlogged) == 1:
            q = queues[backlogged[0]]
            total = 0
            for pos, i in enumerate(rbg_idx):
                budget = int(caps[i])
                total += q.drain(budget, done)
                used += 1
                if q.bits == 0:
                    idle = list(rbg_idx[pos + 1:])
                    break
            else:
                idle = []
            sent[backlogged[0]] += total
            return used, idle
        start = self._rr_offset.get(sid, 0) % len(backlogged)
        order = backlogged[start:] + backlogged[:start]
        self._rr_offset[sid] = start + 1
        k = 0
        idle = []
        for i in rbg_idx:
            ue = None
            for _ in range(len(order)):
                cand = order[k % len(order)]
                k += 1
                if queues[cand].bits > 0:
                    ue = cand
                    break
            if ue is None:
                idle.append(i)
                continue
            sent[ue] += queues[ue].drain(int(caps[i]), done)
            used += 1
        return used, idle

    def step(self) -> TtiReport:
        """Advance one TTI and report the bits drained per UE."""
        if self._pending is not None:
            self._install(self._pending)
            self._pending = None
        tti = self.now
        caps = self.channel.row(tti)
        sent = {ue: 0 for ue in self.queues}
        done: List[Packet] = []
        used: Dict[str, int] = {}
        spare: List[int] = []
        for c in self._configs:
            if c.kind == BEST_EFFORT:
                continue
            n, idle = self._schedule_slice(
                c.slice_id, self._rbgs[c.slice_id], self._slice_ues[c.slice_id], caps, sent, done
            )
            used[c.slice_id] = n
            spare.extend(idle)
        be = self._be_id
        be_rbgs = self._rbgs[be]
        if not self.strict_isolation and spare:
            be_rbgs = sorted(be_rbgs + spare)
        used[be], _ = self._schedule_slice(be, be_rbgs, self._slice_ues[be], caps, sent, done)
        self.now += 1
        return TtiReport(
            tti_ms=tti,
            per_ue_bits_sent=sent,
            per_ue_queue_bits={ue: q.bits for ue, q in self.queues.items()},
            per_slice_rbgs_used=used,
            completed=done,
            capacity_bits=float(sum(caps)),
            rbg_owner=self._owner,
        )
