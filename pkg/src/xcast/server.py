"""Edge service: client registry, request handling, and the per-group
transmission state machine.

One transmission session runs at a time, mirroring the single-slot buffer
B_t: announce with SEG_INFO, multicast the packet burst, signal EOD, then
collect a loss report from every member and run coded retransmission
rounds until everyone reports clean, a round limit forces a direct unicast
fallback, or the member disconnects.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from . import wire
from .catalog import Catalog, OriginError, SegmentStore
from .coding import ClientState, SegmentRef, xor_encode
from .retransmit import build_retransmission_graph, plan_retransmissions
from .scheduler import PendingRequest, Scheduler, SchedulerConfig, SchedulerEffect


@dataclass
class ServerConfig:
    payload_size: int = wire.DEFAULT_PAYLOAD_SIZE
    t_r: float = 0.05
    proactive_enabled: bool = True
    coding_enabled: bool = True
    size_affinity: float = 0.8
    max_queue: int = 64
    proactive_ttl: float = 8.0
    ret_req_timeout: float = 0.2
    ret_req_strikes: int = 3
    max_retransmission_rounds: int = 10

    def scheduler_config(self) -> SchedulerConfig:
        return SchedulerConfig(t_r=self.t_r,
                               proactive_enabled=self.proactive_enabled,
                               coding_enabled=self.coding_enabled,
                               size_affinity=self.size_affinity,
                               max_queue=self.max_queue,
                               proactive_ttl=self.proactive_ttl)


class ClientRegistry:
    """Tracks each associated client's cache view H(c) and liveness."""

    def __init__(self):
        self.states: dict[int, ClientState] = {}
        self.last_seen: dict[int, float] = {}

    def register(self, client_id: int, cached: set[SegmentRef], now: float):
        self.states[client_id] = ClientState(client_id, set(), set(cached))
        self.last_seen[client_id] = now

    def disconnect(self, client_id: int):
        self.states.pop(client_id, None)
        self.last_seen.pop(client_id, None)

    def touch(self, client_id: int, now: float):
        if client_id in self.last_seen:
            self.last_seen[client_id] = now

    def __contains__(self, client_id: int) -> bool:
        return client_id in self.states


class MemberState(enum.Enum):
    SENDING = "sending"
    AWAIT_RET_REQ = "await_ret_req"
    RETRANSMITTING = "retransmitting"
    DONE = "done"


@dataclass
class SessionReport:
    segment_group_id: int
    members: tuple[tuple[int, SegmentRef], ...]
    rounds: int = 0
    emissions: int = 0
    bytes_segment: int = 0
    bytes_control: int = 0
    started_at: float = 0.0
    finished_at: float = 0.0
    fallback_clients: tuple[int, ...] = ()
    dropped_clients: tuple[int, ...] = ()
    aborted: bool = False


class TransmissionSession:
    """Delivers one (possibly coded) payload to its segment group."""

    def __init__(self, server: EdgeServer, group_id: int, entry: PendingRequest):
        self.server = server
        self.group_id = group_id
        self.entry = entry
        self.members: list[tuple[int, SegmentRef]] = list(entry.coding_set.members)
        self.report = SessionReport(group_id, tuple(self.members))
        self.member_state: dict[int, MemberState] = {}
        self.reported: dict[int, set[int]] = {}
        self.outstanding: dict[int, set[int]] = {}
        self.strikes: dict[int, int] = {}
        self.chunks: dict[int, bytes] = {}
        self.total = 0
        self.next_fresh_seq = 0
        self.round_no = 0
        self._timer = None
        self._closed = False
        self._fallbacks: list[int] = []

    # ------------------------------------------------------------------
    # outbound
    # ------------------------------------------------------------------

    def start(self):
        cfg = self.server.config
        self.report.started_at = self.server.transport.now
        bodies = [self.server.store.get(ref) for _, ref in self.members]
        refs = tuple(ref for _, ref in self.members)
        payload = xor_encode(bodies, member_refs=refs)
        body = payload.body
        self.total = wire.packet_count(len(body), cfg.payload_size)
        self.next_fresh_seq = self.total
        for seq in range(self.total):
            self.chunks[seq] = body[seq * cfg.payload_size:(seq + 1) * cfg.payload_size]

        info_members = tuple(
            wire.SegInfoMember(client_id, ref.file_id, ref.segment_index,
                               ref.size_bytes)
            for client_id, ref in self.members)
        info = wire.SegInfo(self.group_id, info_members, self.total,
                            cfg.payload_size)
        for client_id, _ in self.members:
            self.member_state[client_id] = MemberState.SENDING
            self.outstanding[client_id] = set(range(self.total))
            self.strikes[client_id] = 0
            self._send_control(client_id, info)

        end = 0.0
        for seq in range(self.total):
            frame = wire.encode_message(
                wire.UdpPkt(self.group_id, seq, self.chunks[seq]))
            end = self._multicast(frame)
        self.server.transport.call_at(end, self._send_eod)

    def _send_eod(self):
        if self._closed:
            return
        eod = wire.Eod(self.group_id)
        for client_id in self._live_members():
            self.member_state[client_id] = MemberState.AWAIT_RET_REQ
            self._send_control(client_id, eod)
        self.reported.clear()
        deadline = self.server.transport.now + self.server.config.ret_req_timeout
        self._timer = self.server.transport.call_at(
            deadline, self._on_round_timeout,
            label=f"ret_req_round:{self.group_id}:{self.round_no}")

    def _retransmit(self):
        """One coded retransmission round over the still-missing packets."""
        self.round_no += 1
        self.report.rounds = self.round_no
        losses = {c: set(s) for c, s in self.outstanding.items() if s}
        graph = build_retransmission_graph(losses, set(self.outstanding))
        plan = plan_retransmissions(graph, self.chunks)
        if self.next_fresh_seq + len(plan) > wire.MAX_U16 + 1:
            self._fallback(sorted(losses))
            return
        self.report.emissions += len(plan)
        ret_info = wire.RetInfo(self.group_id, tuple(
            wire.RetEmission(em.served) for em in plan))
        for client_id in self._live_members():
            self.member_state[client_id] = MemberState.RETRANSMITTING
            self._send_control(client_id, ret_info)
        end = self.server.transport.now
        for em in plan:
            frame = wire.encode_message(
                wire.UdpPkt(self.group_id, self.next_fresh_seq, em.payload))
            self.next_fresh_seq += 1
            end = self._multicast(frame)
        self.server.transport.call_at(end, self._send_eod)

    # ------------------------------------------------------------------
    # inbound
    # ------------------------------------------------------------------

    def on_ret_req(self, msg: wire.RetReq):
        if self._closed or msg.client_id not in self.member_state:
            return
        if self.member_state[msg.client_id] is MemberState.DONE:
            return
        self.strikes[msg.client_id] = 0
        self.reported[msg.client_id] = set(msg.seq_nos)
        if self._awaited() <= set(self.reported):
            self._evaluate_round()

    def _on_round_timeout(self):
        if self._closed:
            return
        doomed = []
        for client_id in sorted(self._awaited() - set(self.reported)):
            self.strikes[client_id] += 1
            if self.strikes[client_id] >= self.server.config.ret_req_strikes:
                doomed.append(client_id)
            else:
                # silent this round: assume it still misses everything
                # it never acknowledged
                self.reported[client_id] = set(self.outstanding[client_id])
        for client_id in doomed:
            self.server.force_disconnect(client_id,
                                         reason="missed loss reports")
            if self._closed:
                return
        if self._awaited() <= set(self.reported):
            self._evaluate_round()

    def drop_member(self, client_id: int):
        """Remove a departed client; the rest of the group proceeds."""
        if client_id not in self.member_state:
            return
        for table in (self.member_state, self.reported, self.outstanding,
                      self.strikes):
            table.pop(client_id, None)
        self.members = [(c, r) for c, r in self.members if c != client_id]
        self.report.dropped_clients += (client_id,)
        if not self.members:
            self._close(aborted=True)
            return
        if self._awaited() and self._awaited() <= set(self.reported):
            self._evaluate_round()

    # ------------------------------------------------------------------
    # round bookkeeping
    # ------------------------------------------------------------------

    def _awaited(self) -> set[int]:
        return {c for c, s in self.member_state.items()
                if s in (MemberState.AWAIT_RET_REQ, MemberState.RETRANSMITTING)}

    def _live_members(self) -> list[int]:
        return [c for c, _ in self.members
                if self.member_state.get(c) is not MemberState.DONE]

    def _evaluate_round(self):
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
        for client_id, missing in sorted(self.reported.items()):
            self.outstanding[client_id] = set(missing)
            if not missing:
                self.member_state[client_id] = MemberState.DONE
        if all(not s for s in self.outstanding.values()):
            self._close()
            return
        if self.round_no >= self.server.config.max_retransmission_rounds:
            self._fallback(sorted(c for c, s in self.outstanding.items() if s))
            return
        self._retransmit()

    def _fallback(self, client_ids: list[int]):
        """Round limit hit: deliver whole segments over the control link."""
        by_client = dict(self.members)
        for client_id in client_ids:
            ref = by_client[client_id]
            body = self.server.store.get(ref)
            msg = wire.SegData(client_id, ref.file_id, ref.segment_index, body)
            self._send_segment_data(client_id, msg)
            self.member_state[client_id] = MemberState.DONE
            self.outstanding[client_id] = set()
            self._fallbacks.append(client_id)
        self._close()

    def _close(self, aborted: bool = False):
        if self._closed:
            return
        self._closed = True
        if self._timer is not None:
            self._timer.cancel()
            self._timer = None
        self.report.aborted = aborted
        self.report.fallback_clients = tuple(self._fallbacks)
        self.report.finished_at = self.server.transport.now
        self.server.session_done(self)

    # ------------------------------------------------------------------
    # send helpers (byte accounting lives here)
    # ------------------------------------------------------------------

    def _send_control(self, client_id: int, msg) -> None:
        n = self.server.send_control_message(client_id, msg)
        self.report.bytes_control += n

    def _send_segment_data(self, client_id: int, msg) -> None:
        n = self.server.send_segment_data(client_id, msg)
        self.report.bytes_segment += n

    def _multicast(self, frame: bytes) -> float:
        self.report.bytes_segment += len(frame)
        self.server.bytes_segment_tx += len(frame)
        return self.server.transport.multicast(frame)


class EdgeServer:
    """Ties registry, scheduler, store, and sessions to a transport."""

    def __init__(self, config: ServerConfig, catalog: Catalog,
                 store: SegmentStore, transport):
        catalog.validate_for_payload(config.payload_size)
        self.config = config
        self.catalog = catalog
        self.store = store
        self.transport = transport
        self.registry = ClientRegistry()
        self.scheduler = Scheduler(config.scheduler_config(),
                                   self.registry.states, self._successor)
        self.active_session: TransmissionSession | None = None
        self.session_reports: list[SessionReport] = []
        self._conn_of: dict[int, int] = {}
        self._timers: dict[int, object] = {}
        self._next_group = 0
        self.bytes_segment_tx = 0
        self.bytes_control_tx = 0
        self.bytes_control_rx = 0
        self.notes: list[str] = []

    def start(self):
        self.transport.set_control_handler(self._on_frame)
        self.transport.set_disconnect_handler(self._on_disconnect)

    def _successor(self, client_id: int, ref: SegmentRef) -> SegmentRef | None:
        return self.catalog.next_ref(ref.file_id, ref.segment_index)

    # ------------------------------------------------------------------
    # inbound control
    # ------------------------------------------------------------------

    def _on_frame(self, conn_id: int, data: bytes):
        self.bytes_control_rx += len(data)
        try:
            msg = wire.decode_message(data)
        except wire.WireError as e:
            self.notes.append(f"conn {conn_id}: undecodable frame: {e}")
            return
        if isinstance(msg, wire.JoinAdvert):
            self._handle_join(conn_id, msg)
        elif isinstance(msg, wire.SegReq):
            self._handle_segment_request(conn_id, msg)
        elif isinstance(msg, wire.RetReq):
            session = self.active_session
            if session is not None and session.group_id == msg.segment_group_id:
                self.registry.touch(msg.client_id, self.transport.now)
                session.on_ret_req(msg)
        else:
            self.notes.append(f"conn {conn_id}: unexpected {type(msg).__name__}")

    def _handle_join(self, conn_id: int, advert: wire.JoinAdvert):
        cached = set()
        for file_id, segment_index in advert.cache_entries:
            if self.catalog.has(file_id, segment_index):
                cached.add(self.catalog.ref(file_id, segment_index))
        self.registry.register(advert.client_id, cached, self.transport.now)
        self._conn_of[advert.client_id] = conn_id

    def _handle_segment_request(self, conn_id: int, msg: wire.SegReq):
        client_id = msg.client_id
        if client_id not in self.registry:
            self._reply_err(conn_id, wire.ERR_UNKNOWN_CLIENT, msg,
                            "join before requesting")
            return
        self.registry.touch(client_id, self.transport.now)
        if not self.catalog.has(msg.file_id, msg.segment_index):
            self._reply_err(conn_id, wire.ERR_UNKNOWN_SEGMENT, msg,
                            "segment not in catalog")
            return
        ref = self.catalog.ref(msg.file_id, msg.segment_index)
        try:
            body = self.store.get(ref)
        except OriginError as e:
            self._reply_err(conn_id, wire.ERR_ORIGIN_FETCH, msg, str(e))
            return
        state = self.registry.states[client_id]
        if ref in state.cached:
            # the server already delivered this one; repeat it directly
            self.send_segment_data(client_id, wire.SegData(
                client_id, ref.file_id, ref.segment_index, body))
            return
        state.wanted.clear()
        state.wanted.add(ref)
        effect = self.scheduler.on_request_arrival(client_id, ref,
                                                   self.transport.now)
        if effect.rejected:
            # queue full: serve directly rather than stall the stream
            state.wanted.discard(ref)
            self.send_segment_data(client_id, wire.SegData(
                client_id, ref.file_id, ref.segment_index, body))
            return
        self._apply_effect(effect)

    def _on_disconnect(self, conn_id: int):
        client_id = next((c for c, k in self._conn_of.items() if k == conn_id),
                         None)
        if client_id is None:
            return
        self._forget_client(client_id)

    def force_disconnect(self, client_id: int, reason: str):
        self.notes.append(f"client {client_id} dropped: {reason}")
        self._forget_client(client_id)

    def _forget_client(self, client_id: int):
        self._conn_of.pop(client_id, None)
        self.registry.disconnect(client_id)
        self._apply_effect(
            self.scheduler.on_client_disconnect(client_id, self.transport.now))
        if self.active_session is not None:
            self.active_session.drop_member(client_id)

    # ------------------------------------------------------------------
    # scheduler plumbing
    # ------------------------------------------------------------------

    def _apply_effect(self, effect: SchedulerEffect):
        if effect.timer_cancelled is not None:
            handle = self._timers.pop(effect.timer_cancelled, None)
            if handle is not None:
                handle.cancel()
        if effect.timer_armed is not None:
            entry_id, deadline = effect.timer_armed
            self._timers[entry_id] = self.transport.call_at(
                deadline, self._on_t_r, entry_id, label=f"t_r:{entry_id}")
        for entry_id in effect.dropped:
            handle = self._timers.pop(entry_id, None)
            if handle is not None:
                handle.cancel()
        if effect.dispatched is not None:
            self._start_session(effect.dispatched)

    def _on_t_r(self, entry_id: int):
        self._timers.pop(entry_id, None)
        self._apply_effect(
            self.scheduler.on_timer_fire(entry_id, self.transport.now))

    def _start_session(self, entry: PendingRequest):
        self._next_group = (self._next_group + 1) & wire.MAX_U16
        session = TransmissionSession(self, self._next_group, entry)
        self.active_session = session
        session.start()

    def session_done(self, session: TransmissionSession):
        if session is not self.active_session:
            return
        self.active_session = None
        if not session.report.aborted:
            for client_id, ref in session.report.members:
                state = self.registry.states.get(client_id)
                if state is None:
                    continue
                state.wanted.discard(ref)
                state.cached.add(ref)
        self.session_reports.append(session.report)
        self._apply_effect(
            self.scheduler.on_transmission_complete(self.transport.now))

    # ------------------------------------------------------------------
    # send helpers
    # ------------------------------------------------------------------

    def send_control_message(self, client_id: int, msg) -> int:
        conn_id = self._conn_of.get(client_id)
        if conn_id is None:
            return 0
        data = wire.encode_message(msg)
        self.bytes_control_tx += len(data)
        self.transport.send_control(conn_id, data)
        return len(data)

    def send_segment_data(self, client_id: int, msg: wire.SegData) -> int:
        """Direct unicast delivery; counts as segment bytes, not control."""
        conn_id = self._conn_of.get(client_id)
        if conn_id is None:
            return 0
        data = wire.encode_message(msg)
        self.bytes_segment_tx += len(data)
        self.transport.send_control(conn_id, data)
        state = self.registry.states.get(client_id)
        if state is not None:
            ref = self.catalog.ref(msg.file_id, msg.segment_index)
            state.wanted.discard(ref)
            state.cached.add(ref)
        return len(data)

    def _reply_err(self, conn_id: int, code: int, req: wire.SegReq, detail: str):
        data = wire.encode_message(
            wire.ErrReply(code, req.file_id, req.segment_index, detail))
        self.bytes_control_tx += len(data)
        self.transport.send_control(conn_id, data)
