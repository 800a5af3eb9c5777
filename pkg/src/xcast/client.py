"""Client endpoint: cache advertisement, segment requests, multicast
reception, loss reporting, and XOR decoding against the segment cache.

The client is callback-driven and transport-agnostic: the simulator and
the socket transports both feed it control frames and datagrams. Requests
are serialized (one wanted segment at a time); additional requests queue
locally until the previous one is delivered.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from . import wire
from .coding import CodedPayload, SegmentRef, xor_bytes, xor_decode


class ClientError(Exception):
    pass


class CacheFull(ClientError):
    pass


class DecodeFailure(ClientError):
    """A session finished but the payload could not be decoded."""


class SegmentCache:
    """Byte-bounded segment body store with insertion order preserved."""

    def __init__(self, capacity_bytes: int = 1 << 30):
        self.capacity_bytes = capacity_bytes
        self._bodies: dict[tuple[int, int], tuple[SegmentRef, bytes]] = {}
        self.total_bytes = 0

    def put(self, ref: SegmentRef, body: bytes):
        if len(body) != ref.size_bytes:
            raise ClientError(f"body of {len(body)} bytes does not match {ref!r}")
        if ref.key in self._bodies:
            return
        if self.total_bytes + len(body) > self.capacity_bytes:
            raise CacheFull(f"cache full at {self.total_bytes} bytes")
        self._bodies[ref.key] = (ref, body)
        self.total_bytes += len(body)

    def get(self, ref: SegmentRef) -> bytes | None:
        hit = self._bodies.get(ref.key)
        return None if hit is None else hit[1]

    def __contains__(self, ref: SegmentRef) -> bool:
        return ref.key in self._bodies

    def refs(self) -> list[SegmentRef]:
        return [ref for ref, _ in self._bodies.values()]

    def __len__(self):
        return len(self._bodies)


@dataclass
class RequestStat:
    """Per-request timing sample: T_e is request-to-decoded elapsed time."""

    ref: SegmentRef
    requested_at: float
    delivered_at: float

    @property
    def t_e(self) -> float:
        return self.delivered_at - self.requested_at

    @property
    def throughput_bps(self) -> float:
        if self.t_e <= 0:
            return float("inf")
        return self.ref.size_bytes * 8 / self.t_e


class ReceiveState:
    RECEIVING = "receiving"
    REQUESTING = "requesting"
    DECODING = "decoding"
    DONE = "done"


class ReceiveSession:
    """One announced transmission as seen by one member client."""

    def __init__(self, seg_info: wire.SegInfo, my_index: int):
        self.seg_info = seg_info
        self.my_index = my_index
        self.total = seg_info.total_udp_packets
        self.payload_size = seg_info.payload_size
        self.body_len = max(m.segment_length for m in seg_info.members)
        # original packets (and recovered originals), keyed by original seq
        self.packets: dict[int, bytes] = {}
        # retransmitted datagrams keyed by their fresh transport seq
        self.fresh: dict[int, bytes] = {}
        # (transport_seq, served pairs) per retransmission emission
        self.emissions: list[tuple[int, tuple[tuple[int, int], ...]]] = []
        self.next_fresh_seq = self.total
        self.state = ReceiveState.RECEIVING

    @property
    def my_member(self) -> wire.SegInfoMember:
        return self.seg_info.members[self.my_index]

    def chunk_len(self, seq: int) -> int:
        if seq == self.total - 1:
            return self.body_len - self.payload_size * (self.total - 1)
        return self.payload_size

    def store(self, seq: int, payload: bytes):
        if seq < self.total:
            self.packets.setdefault(seq, payload)
        else:
            self.fresh.setdefault(seq, payload)

    def add_round(self, emissions: tuple[wire.RetEmission, ...]):
        for em in emissions:
            self.emissions.append((self.next_fresh_seq, em.served))
            self.next_fresh_seq += 1

    def recover(self, client_id: int):
        """Decode any retransmission emission that serves this client.

        An emission XORs the original packets of the vertices it serves;
        by construction this client already holds every other vertex's
        packet, so one XOR pass recovers its own.
        """
        for transport_seq, served in self.emissions:
            mine = [s for c, s in served if c == client_id]
            if not mine:
                continue
            (target,) = mine
            if target in self.packets or transport_seq not in self.fresh:
                continue
            body = self.fresh[transport_seq]
            ok = True
            for c, s in served:
                if (c, s) == (client_id, target):
                    continue
                held = self.packets.get(s)
                if held is None:
                    ok = False
                    break
                body = xor_bytes(body, held)
            if ok:
                self.packets[target] = body[:self.chunk_len(target)]

    def missing(self) -> list[int]:
        return [s for s in range(self.total) if s not in self.packets]

    def assemble_body(self) -> bytes:
        return b"".join(self.packets[s] for s in range(self.total))


class EdgeClient:
    """One streaming client: joins, requests, receives, decodes."""

    def __init__(self, client_id: int, transport,
                 cache: SegmentCache | None = None):
        self.client_id = client_id
        self.transport = transport
        self.cache = cache if cache is not None else SegmentCache()
        self.sessions: dict[int, ReceiveSession] = {}
        self.stats: list[RequestStat] = []
        self._pending: tuple[SegmentRef, float, Callable, Callable | None] | None = None
        self._backlog: list[tuple[SegmentRef, Callable, Callable | None]] = []
        self.bytes_control_tx = 0
        self.errors: list[str] = []

    # ------------------------------------------------------------------
    # lifecycle
    # ------------------------------------------------------------------

    def start(self):
        """Connect the transport, wire handlers, and advertise the cache."""
        self.transport.set_control_handler(self._on_control_frame)
        self.transport.set_multicast_handler(self._on_datagram)
        self.transport.connect()
        entries = tuple(sorted((r.file_id, r.segment_index)
                               for r in self.cache.refs()))
        self._send(wire.JoinAdvert(self.client_id, entries))

    def stop(self):
        self.transport.disconnect()

    # ------------------------------------------------------------------
    # requests
    # ------------------------------------------------------------------

    def request_segment(self, ref: SegmentRef,
                        on_delivered: Callable[[bytes], None],
                        on_error: Callable[[Exception], None] | None = None):
        """Ask for one segment; the callback fires with the decoded body.

        Cached segments are served locally with no network traffic. At most
        one request is outstanding; extra requests wait their turn.
        """
        body = self.cache.get(ref)
        if body is not None:
            now = self.transport.now
            self.stats.append(RequestStat(ref, now, now))
            on_delivered(body)
            return
        if self._pending is not None:
            self._backlog.append((ref, on_delivered, on_error))
            return
        self._pending = (ref, self.transport.now, on_delivered, on_error)
        self._send(wire.SegReq(self.client_id, ref.file_id, ref.segment_index))

    def _deliver(self, ref: SegmentRef, body: bytes):
        if ref not in self.cache:
            self.cache.put(ref, body)
        pending = self._pending
        if pending is None or pending[0].key != ref.key:
            return
        _, requested_at, on_delivered, _ = pending
        self._pending = None
        self.stats.append(RequestStat(ref, requested_at, self.transport.now))
        on_delivered(body)
        self._pump_backlog()

    def _fail(self, exc: Exception):
        pending = self._pending
        self._pending = None
        self.errors.append(str(exc))
        if pending is not None and pending[3] is not None:
            pending[3](exc)
        self._pump_backlog()

    def _pump_backlog(self):
        if self._pending is None and self._backlog:
            ref, on_delivered, on_error = self._backlog.pop(0)
            self.request_segment(ref, on_delivered, on_error)

    # ------------------------------------------------------------------
    # inbound control / data
    # ------------------------------------------------------------------

    def _on_control_frame(self, data: bytes):
        try:
            msg = wire.decode_message(data)
        except wire.WireError as e:
            self.errors.append(f"bad control frame: {e}")
            return
        if isinstance(msg, wire.SegInfo):
            self._on_seg_info(msg)
        elif isinstance(msg, wire.Eod):
            self._on_eod(msg.segment_group_id)
        elif isinstance(msg, wire.RetInfo):
            session = self.sessions.get(msg.segment_group_id)
            if session is not None:
                session.add_round(msg.emissions)
        elif isinstance(msg, wire.SegData):
            self._on_seg_data(msg)
        elif isinstance(msg, wire.ErrReply):
            self._on_err(msg)

    def _on_datagram(self, data: bytes):
        """Multicast receive path; packets for foreign groups are dropped."""
        try:
            msg = wire.decode_message(data)
        except wire.WireError:
            return
        if not isinstance(msg, wire.UdpPkt):
            return
        session = self.sessions.get(msg.segment_group_id)
        if session is None or session.state is ReceiveState.DONE:
            return
        session.store(msg.udp_seq_no, msg.payload)

    def _on_seg_info(self, info: wire.SegInfo):
        mine = [i for i, m in enumerate(info.members)
                if m.client_id == self.client_id]
        if not mine:
            return
        # one server, serialized sessions: anything older is finished
        self.sessions = {gid: s for gid, s in self.sessions.items()
                         if gid == info.segment_group_id}
        self.sessions[info.segment_group_id] = ReceiveSession(info, mine[0])

    def _on_eod(self, group_id: int):
        session = self.sessions.get(group_id)
        if session is None:
            return
        session.recover(self.client_id)
        missing = session.missing()
        session.state = (ReceiveState.REQUESTING if missing
                         else ReceiveState.DECODING)
        self._send(wire.RetReq(group_id, self.client_id, tuple(missing)))
        if not missing and session.state is ReceiveState.DECODING:
            self._decode_session(session)

    def _decode_session(self, session: ReceiveSession):
        info = session.seg_info
        me = session.my_member
        ref = SegmentRef(me.file_id, me.segment_index, me.segment_length)
        sides = []
        for i, member in enumerate(info.members):
            if i == session.my_index:
                continue
            side_ref = SegmentRef(member.file_id, member.segment_index,
                                  member.segment_length)
            body = self.cache.get(side_ref)
            if body is None:
                session.state = ReceiveState.DONE
                self._fail(DecodeFailure(
                    f"side segment {side_ref!r} absent from cache"))
                return
            sides.append(body)
        payload = CodedPayload(tuple(m.segment_length for m in info.members),
                               session.assemble_body())
        decoded = xor_decode(payload, session.my_index, sides)
        session.state = ReceiveState.DONE
        self._deliver(ref, decoded)

    def _on_seg_data(self, msg: wire.SegData):
        if msg.client_id != self.client_id:
            return
        ref = SegmentRef(msg.file_id, msg.segment_index, len(msg.body))
        self._deliver(ref, msg.body)

    def _on_err(self, msg: wire.ErrReply):
        self._fail(ClientError(
            f"server error {msg.code} for f{msg.file_id}^({msg.segment_index}): "
            f"{msg.detail}"))

    # ------------------------------------------------------------------
    # helpers
    # ------------------------------------------------------------------

    def _send(self, msg):
        data = wire.encode_message(msg)
        self.bytes_control_tx += len(data)
        self.transport.send_control(data)

    def throughput_samples(self) -> list[float]:
        """Per-request perceived throughput, network requests only."""
        return [s.throughput_bps for s in self.stats if s.t_e > 0]


class LocalProxy:
    """Local HTTP front for a running client.

    Serves GET /video/{file_id}/{segment_index} by resolving the segment
    through the client and returning the decoded bytes, so an unmodified
    player can stream through the coded path. The resolver is a blocking
    callable raising KeyError for unknown segments, TimeoutError on
    delivery timeout, and any other exception for upstream failure.
    """

    def __init__(self, resolver: Callable[[int, int], bytes],
                 host: str = "127.0.0.1", port: int = 0):
        import http.server

        proxy = self

        class Handler(http.server.BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_GET(self):
                status, body = proxy.resolve_path(self.path)
                self.send_response(status)
                self.send_header("Content-Length", str(len(body)))
                self.send_header("Content-Type", "application/octet-stream")
                self.end_headers()
                self.wfile.write(body)

        self.resolver = resolver
        self.httpd = http.server.ThreadingHTTPServer((host, port), Handler)
        self.port = self.httpd.server_address[1]

    def resolve_path(self, path: str) -> tuple[int, bytes]:
        parts = path.strip("/").split("/")
        if len(parts) != 3 or parts[0] != "video":
            return 400, b"expected /video/{file_id}/{segment_index}"
        try:
            file_id, segment_index = int(parts[1]), int(parts[2])
        except ValueError:
            return 400, b"non-numeric path component"
        if segment_index < 1:
            return 404, b"segment indices start at 1"
        try:
            return 200, self.resolver(file_id, segment_index)
        except KeyError:
            return 404, b"unknown segment"
        except TimeoutError:
            return 504, b"delivery timed out"
        except Exception as e:
            return 502, f"delivery failed: {e}".encode()

    def serve_forever(self):
        self.httpd.serve_forever()

    def shutdown(self):
        self.httpd.shutdown()
        self.httpd.server_close()
