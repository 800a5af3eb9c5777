"""Request queue and dispatch policy for the coded transmission pipeline.

The server funnels every request arrival, transmission completion, and
timeout through one Scheduler. The scheduler owns the waiting queue Q_r and
the single-slot transmission buffer B_t, merges requests that can ride one
multicast (greedy partner selection from `coding`), inserts proactive
next-segment entries the moment a transmission is dispatched, and
arbitrates unconfirmed proactive members with the T_r timeout.

It is a passive state machine: every operation takes the current time and
returns a SchedulerEffect describing what the caller must now do (start a
transmission, arm or cancel a timer). The caller owns the clock, the
timers, and all I/O, which keeps the policy deterministic and directly
replayable in tests.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Mapping

from .coding import (ClientState, CodingSet, SegmentRef, extend_codable,
                     select_coding_partner)


class SchedulerError(Exception):
    pass


class UnknownClientError(SchedulerError):
    """Request from a client that was never registered."""


class EntryState(enum.Enum):
    WAITING = "waiting"
    AWAITING_CONFIRM = "awaiting_confirm"
    READY = "ready"


@dataclass
class PendingRequest:
    """One queue entry: a coding set plus which members are still proactive.

    A member appears in `proactive_members` until the actual client request
    arrives; a member inserted for a real request is confirmed from birth.
    Confirmation keeps the member's original insertion-time arrival stamp,
    which is when the entry started waiting.
    """

    entry_id: int
    coding_set: CodingSet
    proactive_members: set[tuple[int, SegmentRef]]
    enqueue_time: float
    state: EntryState = EntryState.WAITING

    @property
    def fully_confirmed(self) -> bool:
        return not self.proactive_members

    @property
    def wholly_proactive(self) -> bool:
        return len(self.proactive_members) == len(self.coding_set.members)


@dataclass
class SchedulerConfig:
    t_r: float = 0.05
    proactive_enabled: bool = True
    coding_enabled: bool = True
    size_affinity: float = 0.8
    max_queue: int = 64
    # twice a typical 4-second segment playback duration
    proactive_ttl: float = 8.0

    def __post_init__(self):
        if self.t_r <= 0:
            raise ValueError("t_r must be positive")
        if not 0 < self.size_affinity <= 1:
            raise ValueError("size_affinity must be in (0, 1]")
        if self.max_queue < 1:
            raise ValueError("max_queue must be at least 1")
        if self.proactive_ttl <= 0:
            raise ValueError("proactive_ttl must be positive")


@dataclass
class TransmissionBuffer:
    current: PendingRequest | None = None
    started_at: float = 0.0


@dataclass
class SchedulerEffect:
    """What one scheduler operation decided.

    dispatched        entry moved into B_t; caller starts transmitting it
    enqueued          id of a newly appended single-member entry
    merged_into       id of the entry the arrival was coded into
    confirmed         (entry_id, client_id, ref) proactive members confirmed
    rejected          queue was full; caller serves the request directly
    dropped           ids of entries removed without transmission
    stripped          (entry_id, client_id, ref) proactive members evicted
    proactive_added   ids of entries inserted at dispatch time
    timer_armed       (entry_id, deadline) the caller must schedule
    timer_cancelled   entry_id whose pending timer is now moot
    """

    dispatched: PendingRequest | None = None
    enqueued: int | None = None
    merged_into: int | None = None
    confirmed: list[tuple[int, int, SegmentRef]] = field(default_factory=list)
    rejected: bool = False
    dropped: list[int] = field(default_factory=list)
    stripped: list[tuple[int, int, SegmentRef]] = field(default_factory=list)
    proactive_added: list[int] = field(default_factory=list)
    timer_armed: tuple[int, float] | None = None
    timer_cancelled: int | None = None


class Scheduler:
    """Q_r / B_t state machine.

    `client_states` is the live registry view (client_id -> ClientState);
    only the cached sets are consulted. `successor` maps a just-dispatched
    (client_id, ref) to the next segment of the same stream, or None at the
    end; it drives proactive insertion and is typically a catalog lookup.
    """

    def __init__(self, config: SchedulerConfig,
                 client_states: Mapping[int, ClientState],
                 successor: Callable[[int, SegmentRef], SegmentRef | None] | None = None):
        self.config = config
        self.client_states = client_states
        self.successor = successor
        self.queue: list[PendingRequest] = []
        self.buffer = TransmissionBuffer()
        self._next_entry_id = 1

    # ------------------------------------------------------------------
    # operations
    # ------------------------------------------------------------------

    def on_request_arrival(self, client_id: int, ref: SegmentRef,
                           now: float) -> SchedulerEffect:
        """Handle one actual segment request from a registered client."""
        if client_id not in self.client_states:
            raise UnknownClientError(f"client {client_id} is not registered")
        effect = SchedulerEffect()
        self._sweep_ttl(now, effect)

        member = (client_id, ref)
        if self._already_pending(member):
            # duplicate of a confirmed request already queued or in flight
            self._try_dispatch(now, effect)
            return effect

        target = self._find_proactive(member)
        if target is not None:
            target.proactive_members.discard(member)
            effect.confirmed.append((target.entry_id, client_id, ref))
            if (target.state is EntryState.AWAITING_CONFIRM
                    and target.fully_confirmed):
                effect.timer_cancelled = target.entry_id
                target.state = EntryState.WAITING
            self._try_dispatch(now, effect)
            return effect

        merged = None
        if self.config.coding_enabled:
            merged = self._try_merge(client_id, ref, now)
        if merged is not None:
            effect.merged_into = merged.entry_id
        else:
            if len(self.queue) >= self.config.max_queue:
                effect.rejected = True
                return effect
            entry = self._new_entry(CodingSet(((client_id, ref),), (now,)),
                                    proactive=set(), now=now)
            self.queue.append(entry)
            effect.enqueued = entry.entry_id

        self._try_dispatch(now, effect)
        return effect

    def on_transmission_complete(self, now: float) -> SchedulerEffect:
        """B_t finished (or was empty); promote the next eligible entry."""
        effect = SchedulerEffect()
        self._sweep_ttl(now, effect)
        self.buffer.current = None
        self._try_dispatch(now, effect)
        return effect

    def on_timer_fire(self, entry_id: int, now: float) -> SchedulerEffect:
        """T_r expired for an entry that was awaiting confirmation.

        Still-unconfirmed proactive members are stripped; whatever confirmed
        residue remains is dispatched, and an entry with nothing confirmed
        is dropped. A stale timer (entry already resolved) is a no-op.
        """
        effect = SchedulerEffect()
        self._sweep_ttl(now, effect)
        entry = next((e for e in self.queue if e.entry_id == entry_id), None)
        if entry is None or entry.state is not EntryState.AWAITING_CONFIRM:
            self._try_dispatch(now, effect)
            return effect

        kept = [(m, t) for m, t in zip(entry.coding_set.members,
                                       entry.coding_set.arrival_times)
                if m not in entry.proactive_members]
        for client_id, ref in sorted(entry.proactive_members):
            effect.stripped.append((entry.entry_id, client_id, ref))
        entry.proactive_members.clear()
        if not kept:
            self.queue.remove(entry)
            effect.dropped.append(entry.entry_id)
        else:
            entry.coding_set = CodingSet(tuple(m for m, _ in kept),
                                         tuple(t for _, t in kept))
            entry.state = EntryState.WAITING
        self._try_dispatch(now, effect)
        return effect

    def on_client_disconnect(self, client_id: int, now: float) -> SchedulerEffect:
        """Purge every queued member belonging to a departed client.

        Entries left empty are dropped; an in-flight transmission is left to
        the session layer, which handles mid-session departures itself.
        """
        effect = SchedulerEffect()
        for entry in list(self.queue):
            kept = [(m, t) for m, t in zip(entry.coding_set.members,
                                           entry.coding_set.arrival_times)
                    if m[0] != client_id]
            if len(kept) == len(entry.coding_set.members):
                continue
            entry.proactive_members = {m for m in entry.proactive_members
                                       if m[0] != client_id}
            if not kept:
                if entry.state is EntryState.AWAITING_CONFIRM:
                    effect.timer_cancelled = entry.entry_id
                self.queue.remove(entry)
                effect.dropped.append(entry.entry_id)
            else:
                entry.coding_set = CodingSet(tuple(m for m, _ in kept),
                                             tuple(t for _, t in kept))
        self._try_dispatch(now, effect)
        return effect

    # ------------------------------------------------------------------
    # internals
    # ------------------------------------------------------------------

    def _new_entry(self, coding_set: CodingSet,
                   proactive: set[tuple[int, SegmentRef]],
                   now: float) -> PendingRequest:
        entry = PendingRequest(self._next_entry_id, coding_set, proactive, now)
        self._next_entry_id += 1
        return entry

    def _already_pending(self, member: tuple[int, SegmentRef]) -> bool:
        entries = list(self.queue)
        if self.buffer.current is not None:
            entries.append(self.buffer.current)
        return any(member in e.coding_set.members
                   and member not in e.proactive_members for e in entries)

    def _find_proactive(self, member) -> PendingRequest | None:
        for entry in self.queue:
            if member in entry.proactive_members:
                return entry
        return None

    def _candidate_state(self, client_id: int, ref: SegmentRef) -> ClientState:
        return ClientState(client_id, {ref}, self.client_states[client_id].cached)

    def _try_merge(self, client_id: int, ref: SegmentRef,
                   now: float) -> PendingRequest | None:
        request = CodingSet(((client_id, ref),), (now,))
        idx = select_coding_partner(request, [e.coding_set for e in self.queue],
                                    {**self.client_states,
                                     client_id: self._candidate_state(client_id, ref)},
                                    self.config.size_affinity)
        if idx is None:
            return None
        entry = self.queue[idx]
        # merging never reorders and never disturbs the entry's timer state
        entry.coding_set = CodingSet(entry.coding_set.members + ((client_id, ref),),
                                     entry.coding_set.arrival_times + (now,))
        return entry

    def _try_dispatch(self, now: float, effect: SchedulerEffect):
        if self.buffer.current is not None or not self.queue:
            return
        head = self.queue[0]
        if head.proactive_members:
            if head.state is not EntryState.AWAITING_CONFIRM:
                head.state = EntryState.AWAITING_CONFIRM
                effect.timer_armed = (head.entry_id, now + self.config.t_r)
            return
        self._dispatch(head, now, effect)

    def _dispatch(self, entry: PendingRequest, now: float,
                  effect: SchedulerEffect):
        self.queue.pop(0)
        entry.state = EntryState.READY
        self.buffer.current = entry
        self.buffer.started_at = now
        effect.dispatched = entry
        self._insert_successors(entry, now, effect)

    def _insert_successors(self, entry: PendingRequest, now: float,
                           effect: SchedulerEffect):
        """Pre-queue the next segment of every stream this dispatch serves.

        The successors of a coded dispatch are coded together into one
        proactive entry whenever they stay pairwise codable, so the streams
        keep riding the same multicasts; anything that does not fit becomes
        its own single proactive entry.
        """
        if (not self.config.proactive_enabled or not self.config.coding_enabled
                or self.successor is None):
            return
        successors: list[tuple[int, SegmentRef]] = []
        for client_id, ref in entry.coding_set.members:
            nxt = self.successor(client_id, ref)
            if nxt is None:
                continue
            if nxt in self.client_states[client_id].cached:
                continue
            if self._member_known((client_id, nxt)):
                continue
            successors.append((client_id, nxt))

        group: list[tuple[int, SegmentRef]] = []
        singles: list[tuple[int, SegmentRef]] = []
        for client_id, nxt in successors:
            if not group:
                group.append((client_id, nxt))
                continue
            partial = CodingSet(tuple(group), (now,) * len(group))
            if extend_codable(partial, self._candidate_state(client_id, nxt),
                              self.client_states):
                group.append((client_id, nxt))
            else:
                singles.append((client_id, nxt))

        batches = ([group] if group else []) + [[s] for s in singles]
        for members in batches:
            if len(self.queue) >= self.config.max_queue:
                break
            new = self._new_entry(CodingSet(tuple(members), (now,) * len(members)),
                                  proactive=set(members), now=now)
            self.queue.append(new)
            effect.proactive_added.append(new.entry_id)

    def _member_known(self, member: tuple[int, SegmentRef]) -> bool:
        entries = list(self.queue)
        if self.buffer.current is not None:
            entries.append(self.buffer.current)
        return any(member in e.coding_set.members for e in entries)

    def _sweep_ttl(self, now: float, effect: SchedulerEffect):
        """Evict proactive entries nothing ever confirmed or merged into."""
        stale = [e for e in self.queue
                 if e.wholly_proactive
                 and e.state is not EntryState.AWAITING_CONFIRM
                 and now - e.enqueue_time >= self.config.proactive_ttl]
        for entry in stale:
            self.queue.remove(entry)
            effect.dropped.append(entry.entry_id)

    # ------------------------------------------------------------------
    # introspection (used by the server's status output and by tests)
    # ------------------------------------------------------------------

    def queue_depth(self) -> int:
        return len(self.queue)

    def check_invariants(self):
        """Raise AssertionError when internal state is inconsistent."""
        if self.buffer.current is not None:
            assert self.buffer.current.fully_confirmed, \
                "in-flight entry has unconfirmed proactive members"
        seen: set[tuple[int, tuple[int, int]]] = set()
        for pos, entry in enumerate(self.queue):
            members = entry.coding_set.members
            assert entry.proactive_members <= set(members)
            if entry.state is EntryState.AWAITING_CONFIRM:
                assert pos == 0, "only the head may await confirmation"
            for client_id, ref in members:
                key = (client_id, ref.key)
                assert key not in seen, f"duplicate pending member {key}"
                seen.add(key)
            for i, (client_id, ref) in enumerate(members):
                partial = CodingSet(members[:i], entry.coding_set.arrival_times[:i])
                assert extend_codable(partial,
                                      self._candidate_state(client_id, ref),
                                      self.client_states), \
                    f"entry {entry.entry_id} is not pairwise codable"
