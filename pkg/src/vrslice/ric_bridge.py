"""Emulated near-RT RIC boundary between the MAC simulator and the xApp.

Monitoring flows out as one :class:`MacSample` per subscribed UE per TTI;
slice control flows in as :class:`SliceControlMsg` values that are checked
against the current partition and staged on the simulator for the next TTI
boundary. In lockstep mode samples are delivered synchronously; decoupled
mode holds them back by a fixed transport delay.

Messages crossing a process boundary use line-delimited JSON, see
:func:`encode` and :func:`decode`.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Callable, Deque, Dict, List, Optional, Tuple, Union

from .ran_sim import (
    BEST_EFFORT,
    DEDICATED,
    N_RBGS,
    RanSimulator,
    SliceConfig,
    SliceConfigError,
    TtiReport,
)

log = logging.getLogger(__name__)

CREATE = "create"
DELETE = "delete"
REALLOCATE = "realloc"

LOCKSTEP = "lockstep"
DECOUPLED = "decoupled"
DEFAULT_TRANSPORT_DELAY_MS = 5


class BridgeError(Exception):
    pass


@dataclass(frozen=True, slots=True)
class MacSample:
    tti_ms: int
    ue_id: str
    bits_sent: int


@dataclass
class Subscription:
    sub_id: int
    ue_id: str
    period_ms: int = 1
    callback: Optional[Callable[[MacSample], None]] = field(default=None, repr=False)


@dataclass(frozen=True)
class SliceControlMsg:
    kind: str
    slice_id: str
    epoch: int
    rbg_count: Optional[int] = None
    ue_id: Optional[str] = None

    def __post_init__(self) -> None:
        if self.kind not in (CREATE, DELETE, REALLOCATE):
            raise ValueError(f"unknown control kind {self.kind!r}")
        if self.kind in (CREATE, REALLOCATE) and self.rbg_count is None:
            raise ValueError(f"{self.kind} requires rbg_count")
        if self.kind == CREATE and self.ue_id is None:
            raise ValueError("create requires ue_id")


@dataclass(frozen=True)
class Ack:
    epoch: int


@dataclass(frozen=True)
class Nack:
    epoch: int
    reason: str


# -- wire format -------------------------------------------------------------

WireMessage = Union[MacSample, SliceControlMsg, Ack, Nack, dict]


def encode(msg: WireMessage) -> str:
    """Serialize a message to one JSON line (without the trailing newline)."""
    if isinstance(msg, MacSample):
        obj = {"t": "mac", "tti": msg.tti_ms, "ue": msg.ue_id, "bits": msg.bits_sent}
    elif isinstance(msg, SliceControlMsg):
        obj = {"t": "ctl", "kind": msg.kind, "slice": msg.slice_id}
        if msg.rbg_count is not None:
            obj["rbgs"] = msg.rbg_count
        if msg.ue_id is not None:
            obj["ue"] = msg.ue_id
        obj["epoch"] = msg.epoch
    elif isinstance(msg, Ack):
        obj = {"t": "ack", "epoch": msg.epoch}
    elif isinstance(msg, Nack):
        obj = {"t": "nack", "epoch": msg.epoch, "reason": msg.reason}
    elif isinstance(msg, dict):
        obj = msg
    else:
        raise TypeError(f"cannot encode {type(msg).__name__}")
    return json.dumps(obj, separators=(",", ":"))


def decode(line: Union[str, bytes]) -> WireMessage:
    """Parse one JSON line. Unknown ``t`` tags come back as plain dicts."""
    obj = json.loads(line)
    t = obj.get("t")
    try:
        if t == "mac":
            return MacSample(int(obj["tti"]), str(obj["ue"]), int(obj["bits"]))
        if t == "ctl":
            return SliceControlMsg(
                kind=obj["kind"],
                slice_id=str(obj["slice"]),
                epoch=int(obj["epoch"]),
                rbg_count=obj.get("rbgs"),
                ue_id=obj.get("ue"),
            )
        if t == "ack":
            return Ack(int(obj["epoch"]))
        if t == "nack":
            return Nack(int(obj["epoch"]), str(obj["reason"]))
    except KeyError as exc:
        raise BridgeError(f"{t} message missing field {exc}") from None
    return obj


class JsonLineStream:
    """Line-delimited JSON over a text stream (e.g. ``socket.makefile('rw')``)."""

    def __init__(self, stream: IO[str]) -> None:
        self.stream = stream

    def send(self, msg: WireMessage) -> None:
        self.stream.write(encode(msg) + "\n")
        self.stream.flush()

    def recv(self) -> Optional[WireMessage]:
        line = self.stream.readline()
        if not line:
            return None
        return decode(line)


# -- bridge -------------------------------------------------------------------


class RicBridge:
    def __init__(
        self,
        sim: RanSimulator,
        *,
        mode: str = LOCKSTEP,
        transport_delay_ms: int = DEFAULT_TRANSPORT_DELAY_MS,
    ) -> None:
        if mode not in (LOCKSTEP, DECOUPLED):
            raise ValueError(f"unknown mode {mode!r}")
        self.sim = sim
        self.mode = mode
        self.transport_delay_ms = transport_delay_ms if mode == DECOUPLED else 0
        self.subscriptions: Dict[int, Subscription] = {}
        self._by_ue: Dict[str, int] = {}
        self._next_sub = 1
        self._last_tti: Optional[int] = None
        self._in_flight: Deque[Tuple[int, Subscription, MacSample]] = deque()
        self.last_epoch = -1
        self.delivered = 0
        self.partition: Dict[str, SliceConfig] = {c.slice_id: c for c in sim.partition}

    @property
    def last_tti(self) -> Optional[int]:
        return self._last_tti

    # -- monitoring --

    def subscribe_monitoring(
        self,
        ue_id: str,
        period_ms: int = 1,
        callback: Optional[Callable[[MacSample], None]] = None,
    ) -> Subscription:
        if ue_id not in self.sim.queues:
            raise BridgeError(f"unknown UE {ue_id!r}")
        if ue_id in self._by_ue:
            raise BridgeError(f"UE {ue_id!r} already subscribed")
        if period_ms != 1:
            raise BridgeError("only 1 ms monitoring is supported")
        sub = Subscription(self._next_sub, ue_id, period_ms, callback)
        self._next_sub += 1
        self.subscriptions[sub.sub_id] = sub
        self._by_ue[ue_id] = sub.sub_id
        return sub

    def unsubscribe(self, sub_id: int) -> None:
        sub = self.subscriptions.pop(sub_id, None)
        if sub is None:
            raise BridgeError(f"unknown subscription {sub_id}")
        del self._by_ue[sub.ue_id]

    def publish_tti(self, report: TtiReport) -> List[Tuple[Subscription, MacSample]]:
        """Fan a TTI report out to subscribers; returns what was delivered now."""
        if self._last_tti is not None and report.tti_ms != self._last_tti + 1:
            raise BridgeError(f"TTI {report.tti_ms} published after {self._last_tti}")
        self._last_tti = report.tti_ms
        fresh = [
            (sub, MacSample(report.tti_ms, sub.ue_id, report.per_ue_bits_sent.get(sub.ue_id, 0)))
            for sid, sub in sorted(self.subscriptions.items())
        ]
        if self.mode == LOCKSTEP:
            due = fresh
        else:
            for sub, s in fresh:
                self._in_flight.append((report.tti_ms + self.transport_delay_ms, sub, s))
            due = []
            while self._in_flight and self._in_flight[0][0] <= report.tti_ms:
                _, sub, s = self._in_flight.popleft()
                if sub.sub_id in self.subscriptions:
                    due.append((sub, s))
        for sub, s in due:
            if sub.callback is not None:
                sub.callback(s)
        self.delivered += len(due)
        return due

    # -- control --

    def _configs_after(self, msg: SliceControlMsg) -> List[SliceConfig]:
        part = dict(self.partition)
        be_id = next(s for s, c in part.items() if c.kind == BEST_EFFORT)
        be = part[be_id]
        if msg.kind == CREATE:
            if msg.slice_id in part:
                raise BridgeError(f"slice {msg.slice_id!r} already exists")
            if msg.ue_id not in be.ue_ids:
                raise BridgeError(f"UE {msg.ue_id!r} is not on the best-effort slice")
            part[msg.slice_id] = SliceConfig(msg.slice_id, msg.rbg_count, {msg.ue_id}, DEDICATED)
            be = SliceConfig(be_id, 0, be.ue_ids - {msg.ue_id}, BEST_EFFORT)
        else:
            cur = part.get(msg.slice_id)
            if cur is None or cur.kind != DEDICATED:
                raise BridgeError(f"unknown slice {msg.slice_id!r}")
            if msg.kind == REALLOCATE:
                part[msg.slice_id] = SliceConfig(cur.slice_id, msg.rbg_count, cur.ue_ids, DEDICATED)
            else:
                del part[msg.slice_id]
                be = SliceConfig(be_id, 0, be.ue_ids | cur.ue_ids, BEST_EFFORT)
        dedicated = sum(c.rbg_count for c in part.values() if c.kind == DEDICATED)
        if dedicated > N_RBGS - self.sim.be_floor:
            raise BridgeError("insufficient RBGs")
        part[be_id] = SliceConfig(be_id, N_RBGS - dedicated, be.ue_ids, BEST_EFFORT)
        return list(part.values())

    def handle_control(self, msg: SliceControlMsg) -> Union[Ack, Nack]:
        """Validate and stage a control command; the partition is untouched on nack."""
        if msg.epoch <= self.last_epoch:
            return Nack(msg.epoch, "stale epoch")
        try:
            configs = self._configs_after(msg)
            self.sim.apply_slice_config(configs, msg.epoch)
        except (BridgeError, SliceConfigError, ValueError) as exc:
            log.info("nack epoch=%d: %s", msg.epoch, exc)
            return Nack(msg.epoch, str(exc))
        self.last_epoch = msg.epoch
        self.partition = {c.slice_id: c for c in configs}
        return Ack(msg.epoch)

    def rbgs(self, slice_id: str) -> int:
        return self.partition[slice_id].rbg_count
