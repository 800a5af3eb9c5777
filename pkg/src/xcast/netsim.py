"""Deterministic in-process network substrate.

Replaces real sockets for tests and experiments: a virtual clock with an
event heap, one shared multicast channel whose airtime serializes (a single
radio at a fixed multicast rate), per-client packet-loss models, and
lossless in-order control links standing in for TCP.

Determinism rules: events fire in (time, insertion order); every client
draws losses from its own RNG substream seeded as "{seed}:{client_id}", so
adding a client never perturbs the others; subscriber iteration is sorted.
Identical (config, seed, scenario) runs produce identical traces.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Callable


class LivelockError(Exception):
    """The event budget ran out before the simulation went idle."""


# ----------------------------------------------------------------------
# loss models
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class LossSpec:
    """Declarative per-client loss configuration.

    model "none": lossless. "iid": each packet lost independently with
    probability p. "burst": two-state Gilbert-Elliott chain; a good state
    delivers, a bad state drops; good->bad with p_enter, bad stays bad
    with p_stay, so bursts average 1/(1-p_stay) packets.
    """

    model: str = "none"
    p: float = 0.0
    p_enter: float = 0.0
    p_stay: float = 0.0

    def __post_init__(self):
        if self.model not in ("none", "iid", "burst"):
            raise ValueError(f"unknown loss model {self.model!r}")
        for name in ("p", "p_enter", "p_stay"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


class _NoLoss:
    def drop(self, rng: random.Random) -> bool:
        return False


class _IidLoss:
    def __init__(self, p: float):
        self.p = p

    def drop(self, rng: random.Random) -> bool:
        return rng.random() < self.p


class _BurstLoss:
    def __init__(self, p_enter: float, p_stay: float):
        self.p_enter = p_enter
        self.p_stay = p_stay
        self.bad = False

    def drop(self, rng: random.Random) -> bool:
        if self.bad:
            self.bad = rng.random() < self.p_stay
        else:
            self.bad = rng.random() < self.p_enter
        return self.bad


def make_loss_model(spec: LossSpec):
    if spec.model == "none":
        return _NoLoss()
    if spec.model == "iid":
        return _IidLoss(spec.p)
    return _BurstLoss(spec.p_enter, spec.p_stay)


@dataclass(frozen=True)
class ChannelConfig:
    multicast_rate_bps: float = 24e6
    control_latency: float = 0.0002
    rng_seed: int = 1
    default_loss: LossSpec = LossSpec()
    loss: dict[int, LossSpec] = field(default_factory=dict)

    def __post_init__(self):
        if self.multicast_rate_bps <= 0:
            raise ValueError("multicast rate must be positive")
        if self.control_latency < 0:
            raise ValueError("control latency cannot be negative")

    def loss_for(self, client_id: int) -> LossSpec:
        return self.loss.get(client_id, self.default_loss)


# ----------------------------------------------------------------------
# event loop and trace
# ----------------------------------------------------------------------

class Trace:
    """Ordered record of everything observable in a run.

    Each record is a plain dict with at least {"t", "kind"}; the whole
    trace serializes to JSON-lines for offline inspection.
    """

    def __init__(self):
        self.records: list[dict] = []

    def add(self, kind: str, t: float, **fields):
        rec = {"t": round(t, 9), "kind": kind}
        rec.update(fields)
        self.records.append(rec)

    def kinds(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]

    def dump_jsonl(self, path):
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


class TimerHandle:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self):
        self.cancelled = True


class EventLoop:
    """Virtual clock with a (time, insertion order) event heap."""

    def __init__(self, trace: Trace | None = None):
        self.now = 0.0
        self.trace = trace
        self._heap: list = []
        self._seq = 0

    def call_at(self, t: float, fn: Callable, *args,
                label: str | None = None) -> TimerHandle:
        if t < self.now:
            raise ValueError(f"cannot schedule at {t} before now {self.now}")
        handle = TimerHandle()
        heapq.heappush(self._heap, (t, self._seq, handle, label, fn, args))
        self._seq += 1
        return handle

    def call_soon(self, fn: Callable, *args) -> TimerHandle:
        return self.call_at(self.now, fn, *args)

    def run_until_idle(self, max_events: int = 2_000_000):
        """Drain the heap; raises LivelockError past the event budget."""
        count = 0
        while self._heap:
            t, _, handle, label, fn, args = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            count += 1
            if count > max_events:
                raise LivelockError(
                    f"exceeded {max_events} events at t={t:.6f}; "
                    f"last callback {getattr(fn, '__qualname__', fn)!r}")
            self.now = t
            if label is not None and self.trace is not None:
                self.trace.add("timer", t, label=label)
            fn(*args)
        return count


# ----------------------------------------------------------------------
# channel
# ----------------------------------------------------------------------

class Channel:
    """Single shared radio: serialized multicast airtime plus per-client
    control links. Loss applies only to multicast datagrams; control
    traffic is reliable and ordered with a fixed latency."""

    def __init__(self, loop: EventLoop, config: ChannelConfig,
                 trace: Trace | None = None):
        self.loop = loop
        self.config = config
        self.trace = trace
        self.busy_until = 0.0
        self._subscribers: dict[int, Callable[[bytes], None]] = {}
        self._loss: dict[int, object] = {}
        self._rng: dict[int, random.Random] = {}
        self.sent: dict[int, int] = {}
        self.delivered: dict[int, int] = {}
        self.dropped: dict[int, int] = {}

    def join(self, client_id: int, on_datagram: Callable[[bytes], None]):
        self._subscribers[client_id] = on_datagram
        if client_id not in self._rng:
            self._rng[client_id] = random.Random(
                f"{self.config.rng_seed}:{client_id}")
            self._loss[client_id] = make_loss_model(self.config.loss_for(client_id))
            self.sent[client_id] = 0
            self.delivered[client_id] = 0
            self.dropped[client_id] = 0

    def leave(self, client_id: int):
        self._subscribers.pop(client_id, None)

    def multicast(self, data: bytes) -> float:
        """Queue one datagram on the radio; returns its airtime end."""
        start = max(self.loop.now, self.busy_until)
        end = start + len(data) * 8 / self.config.multicast_rate_bps
        self.busy_until = end
        if self.trace is not None:
            self.trace.add("mc_send", self.loop.now, start=round(start, 9),
                           end=round(end, 9), size=len(data))
        arrival = end + self.config.control_latency
        for client_id in sorted(self._subscribers):
            self.sent[client_id] += 1
            if self._loss[client_id].drop(self._rng[client_id]):
                self.loop.call_at(arrival, self._drop, client_id, len(data))
            else:
                self.loop.call_at(arrival, self._deliver, client_id, data)
        return end

    def _deliver(self, client_id: int, data: bytes):
        self.delivered[client_id] += 1
        if self.trace is not None:
            self.trace.add("mc_deliver", self.loop.now, client=client_id,
                           size=len(data))
        sink = self._subscribers.get(client_id)
        if sink is not None:
            sink(data)

    def _drop(self, client_id: int, size: int):
        self.dropped[client_id] += 1
        if self.trace is not None:
            self.trace.add("mc_drop", self.loop.now, client=client_id, size=size)


# ----------------------------------------------------------------------
# transports
# ----------------------------------------------------------------------

class SimServerTransport:
    """Server-side endpoint bound to a SimWorld.

    Control frames arrive through the handler as (conn_id, frame) with
    conn_id equal to the peer's client_id; multicast rides the shared
    channel and returns its airtime end so callers can schedule work after
    the radio drains.
    """

    def __init__(self, world: SimWorld):
        self.world = world
        self._on_frame: Callable[[int, bytes], None] | None = None
        self._on_disconnect: Callable[[int], None] | None = None
        self.bytes_control_tx = 0
        self.bytes_multicast_tx = 0

    @property
    def now(self) -> float:
        return self.world.loop.now

    def call_at(self, t: float, fn: Callable, *args,
                label: str | None = None) -> TimerHandle:
        return self.world.loop.call_at(t, fn, *args, label=label)

    def set_control_handler(self, fn: Callable[[int, bytes], None]):
        self._on_frame = fn

    def set_disconnect_handler(self, fn: Callable[[int], None]):
        self._on_disconnect = fn

    def send_control(self, conn_id: int, data: bytes):
        client = self.world.clients.get(conn_id)
        if client is None or not client.connected:
            return
        self.bytes_control_tx += len(data)
        if self.world.trace is not None:
            self.world.trace.add("ctl_send", self.now, to=conn_id, size=len(data))
        self.world.loop.call_at(self.now + self.world.channel.config.control_latency,
                                client.deliver_control, data)

    def multicast(self, data: bytes) -> float:
        self.bytes_multicast_tx += len(data)
        return self.world.channel.multicast(data)

    def _client_gone(self, conn_id: int):
        if self._on_disconnect is not None:
            self._on_disconnect(conn_id)

    def _frame_from(self, conn_id: int, data: bytes):
        if self._on_frame is not None:
            self._on_frame(conn_id, data)


class SimClientTransport:
    """Client-side endpoint: one control link plus multicast reception."""

    def __init__(self, world: SimWorld, client_id: int):
        self.world = world
        self.client_id = client_id
        self.connected = False
        self._on_frame: Callable[[bytes], None] | None = None
        self._on_datagram: Callable[[bytes], None] | None = None
        self.bytes_control_tx = 0

    @property
    def now(self) -> float:
        return self.world.loop.now

    def call_at(self, t: float, fn: Callable, *args,
                label: str | None = None) -> TimerHandle:
        return self.world.loop.call_at(t, fn, *args, label=label)

    def set_control_handler(self, fn: Callable[[bytes], None]):
        self._on_frame = fn

    def set_multicast_handler(self, fn: Callable[[bytes], None]):
        self._on_datagram = fn

    def connect(self):
        self.connected = True
        self.world.clients[self.client_id] = self
        self.world.channel.join(self.client_id, self._datagram)

    def disconnect(self):
        """Drop off the network; the server notices after one latency."""
        if not self.connected:
            return
        self.connected = False
        self.world.channel.leave(self.client_id)
        self.world.loop.call_at(
            self.now + self.world.channel.config.control_latency,
            self.world.server_transport._client_gone, self.client_id)

    def send_control(self, data: bytes):
        if not self.connected:
            raise ConnectionError(f"client {self.client_id} is not connected")
        self.bytes_control_tx += len(data)
        if self.world.trace is not None:
            self.world.trace.add("ctl_send", self.now, frm=self.client_id,
                                 size=len(data))
        self.world.loop.call_at(self.now + self.world.channel.config.control_latency,
                                self.world.server_transport._frame_from,
                                self.client_id, data)

    def deliver_control(self, data: bytes):
        if self.connected and self._on_frame is not None:
            self._on_frame(data)

    def _datagram(self, data: bytes):
        if self.connected and self._on_datagram is not None:
            self._on_datagram(data)


class SimWorld:
    """One simulated network: loop + channel + endpoints."""

    def __init__(self, config: ChannelConfig | None = None,
                 trace: Trace | None = None):
        self.trace = trace if trace is not None else Trace()
        self.loop = EventLoop(trace=self.trace)
        self.channel = Channel(self.loop, config or ChannelConfig(),
                               trace=self.trace)
        self.clients: dict[int, SimClientTransport] = {}
        self.server_transport = SimServerTransport(self)

    def client_transport(self, client_id: int) -> SimClientTransport:
        return SimClientTransport(self, client_id)

    def run_until_idle(self, max_events: int = 2_000_000) -> Trace:
        self.loop.run_until_idle(max_events)
        return self.trace
