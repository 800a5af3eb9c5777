"""Client-side pieces: cache, receive/recovery session, HTTP proxy."""

import urllib.error
import urllib.request

import pytest

from xcast import wire
from xcast.client import (CacheFull, ClientError, LocalProxy, ReceiveSession,
                          SegmentCache, EdgeClient)
from xcast.coding import SegmentRef, xor_encode
from oracles import xor_pad


def ref(fid, idx, size=100):
    return SegmentRef(fid, idx, size)


class TestSegmentCache:
    def test_put_get(self):
        cache = SegmentCache()
        cache.put(ref(1, 1, 3), b"abc")
        assert cache.get(ref(1, 1, 3)) == b"abc"
        assert ref(1, 1, 3) in cache
        assert cache.get(ref(1, 2, 3)) is None
        assert cache.total_bytes == 3

    def test_length_must_match_ref(self):
        cache = SegmentCache()
        with pytest.raises(ClientError):
            cache.put(ref(1, 1, 10), b"short")

    def test_capacity_enforced(self):
        cache = SegmentCache(capacity_bytes=10)
        cache.put(ref(1, 1, 6), b"a" * 6)
        with pytest.raises(CacheFull):
            cache.put(ref(1, 2, 6), b"b" * 6)
        cache.put(ref(1, 3, 4), b"c" * 4)
        assert len(cache) == 2


def make_session(bodies, payload_size=16):
    """Build a ReceiveSession for member 0 of a coded transmission."""
    payload = xor_encode(bodies)
    members = tuple(
        wire.SegInfoMember(client_id=i + 1, file_id=i + 1, segment_index=1,
                           segment_length=len(b))
        for i, b in enumerate(bodies))
    total = wire.packet_count(len(payload.body), payload_size)
    info = wire.SegInfo(segment_group_id=9, members=members,
                        total_udp_packets=total, payload_size=payload_size)
    return ReceiveSession(info, my_index=0), payload


def chunks(body, payload_size=16):
    return [body[i:i + payload_size] for i in range(0, len(body), payload_size)]


class TestReceiveSession:
    def test_clean_burst_assembles(self):
        bodies = [b"A" * 40, b"B" * 25]
        session, payload = make_session(bodies)
        for seq, chunk in enumerate(chunks(payload.body)):
            session.store(seq, chunk)
        assert session.missing() == []
        assert session.assemble_body() == payload.body

    def test_duplicate_chunks_idempotent(self):
        bodies = [b"C" * 33]
        session, payload = make_session(bodies)
        parts = chunks(payload.body)
        for seq, chunk in enumerate(parts):
            session.store(seq, chunk)
            session.store(seq, b"garbage"[:len(chunk)])
        assert session.assemble_body() == payload.body

    def test_recovery_from_coded_emission(self):
        bodies = [b"D" * 48]
        session, payload = make_session(bodies)
        parts = chunks(payload.body)
        # we lost seq 1; a partner lost seq 2; server sends 1^2 coded
        session.store(0, parts[0])
        session.store(2, parts[2])
        emission = wire.RetEmission(served=((1, 1), (2, 2)))
        session.add_round((emission,))
        fresh_seq = session.total  # first retransmission seq number
        session.store(fresh_seq, xor_pad([parts[1], parts[2]]))
        session.recover(client_id=1)
        assert session.missing() == []
        assert session.assemble_body() == payload.body

    def test_recovery_trims_padded_tail_chunk(self):
        # last chunk is shorter; XOR partner pads it, recovery must trim
        bodies = [b"E" * 40]  # chunks: 16, 16, 8
        session, payload = make_session(bodies)
        parts = chunks(payload.body)
        session.store(0, parts[0])
        session.store(1, parts[1])
        emission = wire.RetEmission(served=((1, 2), (2, 0)))
        session.add_round((emission,))
        coded = xor_pad([parts[2], parts[0]])  # 16 bytes on air
        session.store(session.total, coded)
        session.recover(client_id=1)
        assert session.missing() == []
        assert session.assemble_body() == payload.body

    def test_plain_retransmission_recovery(self):
        bodies = [b"F" * 20]
        session, payload = make_session(bodies)
        parts = chunks(payload.body)
        session.store(0, parts[0])
        emission = wire.RetEmission(served=((1, 1),))
        session.add_round((emission,))
        session.store(session.total, parts[1])
        session.recover(client_id=1)
        assert session.missing() == []

    def test_missing_reports_unrepaired_losses(self):
        bodies = [b"G" * 48]
        session, _ = make_session(bodies)
        session.store(0, chunks(b"G" * 48)[0])
        assert session.missing() == [1, 2]

    def test_multi_round_fresh_seq_numbers(self):
        bodies = [b"H" * 48]
        session, payload = make_session(bodies)
        parts = chunks(payload.body)
        session.store(0, parts[0])
        session.add_round((wire.RetEmission(served=((1, 1),)),))
        # round lost too; next round repairs both outstanding
        session.add_round((wire.RetEmission(served=((1, 1),)),
                           wire.RetEmission(served=((1, 2),))))
        assert session.total + 1 not in session.fresh
        session.store(session.total + 1, parts[1])
        session.store(session.total + 2, parts[2])
        session.recover(client_id=1)
        assert session.missing() == []
        assert session.assemble_body() == payload.body


class _StubTransport:
    def __init__(self):
        self.now = 0.0
        self.sent = []
        self.connected = False

    def set_control_handler(self, fn):
        self.on_frame = fn

    def set_multicast_handler(self, fn):
        self.on_datagram = fn

    def connect(self):
        self.connected = True

    def disconnect(self):
        self.connected = False

    def send_control(self, data):
        self.sent.append(wire.decode_message(data))


class TestClientProtocol:
    def test_join_advertises_cache_sorted(self):
        transport = _StubTransport()
        cache = SegmentCache()
        cache.put(ref(2, 1, 4), b"abcd")
        cache.put(ref(1, 5, 4), b"efgh")
        client = EdgeClient(3, transport, cache)
        client.start()
        join = transport.sent[0]
        assert isinstance(join, wire.JoinAdvert)
        assert join.client_id == 3
        assert join.cache_entries == ((1, 5), (2, 1))

    def test_cache_hit_served_locally(self):
        transport = _StubTransport()
        cache = SegmentCache()
        cache.put(ref(1, 1, 4), b"wxyz")
        client = EdgeClient(1, transport, cache)
        client.start()
        got = []
        client.request_segment(ref(1, 1, 4), got.append)
        assert got == [b"wxyz"]
        assert len(transport.sent) == 1  # just the join, no SEG_REQ

    def test_request_sends_seg_req(self):
        transport = _StubTransport()
        client = EdgeClient(4, transport, SegmentCache())
        client.start()
        client.request_segment(ref(7, 2, 10), lambda b: None)
        req = transport.sent[-1]
        assert req == wire.SegReq(client_id=4, file_id=7, segment_index=2)

    def test_seg_data_fallback_delivers(self):
        transport = _StubTransport()
        client = EdgeClient(4, transport, SegmentCache())
        client.start()
        got = []
        client.request_segment(ref(7, 2, 4), got.append)
        frame = wire.encode_message(
            wire.SegData(client_id=4, file_id=7, segment_index=2, body=b"DATA"))
        transport.on_frame(frame)
        assert got == [b"DATA"]
        assert client.stats[-1].ref.key == (7, 2)

    def test_err_reply_fails_request(self):
        transport = _StubTransport()
        client = EdgeClient(4, transport, SegmentCache())
        client.start()
        errors = []
        client.request_segment(ref(7, 9, 4), lambda b: None, errors.append)
        frame = wire.encode_message(
            wire.ErrReply(wire.ERR_UNKNOWN_SEGMENT, 7, 9, "nope"))
        transport.on_frame(frame)
        assert len(errors) == 1
        assert "nope" in str(errors[0])

    def test_foreign_group_datagrams_ignored(self):
        transport = _StubTransport()
        client = EdgeClient(4, transport, SegmentCache())
        client.start()
        datagram = wire.encode_message(wire.UdpPkt(42, 0, b"junk"))
        transport.on_datagram(datagram)  # no session for group 42
        transport.on_datagram(b"\x00\x01")  # not even a frame
        assert client.errors == []


class TestLocalProxy:
    @pytest.fixture
    def proxy(self):
        store = {(1, 1): b"segment-one"}

        def resolver(file_id, segment_index):
            if file_id == 9:
                raise TimeoutError()
            if file_id == 8:
                raise RuntimeError("upstream broke")
            return store[(file_id, segment_index)]

        p = LocalProxy(resolver)
        import threading
        threading.Thread(target=p.serve_forever, daemon=True).start()
        yield p
        p.shutdown()

    def _get(self, proxy, path):
        url = f"http://127.0.0.1:{proxy.port}{path}"
        try:
            with urllib.request.urlopen(url, timeout=5) as resp:
                return resp.status, resp.read()
        except urllib.error.HTTPError as e:
            return e.code, e.read()

    def test_status_codes(self, proxy):
        assert self._get(proxy, "/video/1/1") == (200, b"segment-one")
        assert self._get(proxy, "/video/1/2")[0] == 404   # unknown segment
        assert self._get(proxy, "/video/1/0")[0] == 404   # bad index
        assert self._get(proxy, "/video/x/1")[0] == 400   # malformed
        assert self._get(proxy, "/other/1/1")[0] == 400
        assert self._get(proxy, "/video/9/1")[0] == 504   # timeout
        assert self._get(proxy, "/video/8/1")[0] == 502   # upstream error
