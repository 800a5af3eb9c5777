"""Real-socket transports: executor semantics and a loopback smoke test."""

import socket
import threading
import time

import pytest

from xcast.catalog import Catalog, SegmentStore, SyntheticOrigin, synthetic_body
from xcast.client import SegmentCache, EdgeClient
from xcast.server import EdgeServer, ServerConfig
from xcast.sockets import (ClientSocketTransport, SerialExecutor,
                           ServerSocketTransport, SocketTimerHandle)


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


class TestSerialExecutor:
    def test_runs_in_submission_order_on_one_thread(self):
        ex = SerialExecutor("t")
        seen = []
        done = threading.Event()
        for i in range(200):
            ex.submit(lambda i=i: seen.append((i, threading.get_ident())))
        ex.submit(done.set)
        assert done.wait(2.0)
        ex.shutdown()
        assert [i for i, _ in seen] == list(range(200))
        assert len({tid for _, tid in seen}) == 1
        assert seen[0][1] != threading.get_ident()

    def test_exception_does_not_kill_the_worker(self, capsys):
        ex = SerialExecutor("t")
        done = threading.Event()
        ex.submit(lambda: 1 / 0)
        ex.submit(done.set)
        assert done.wait(2.0)
        ex.shutdown()

    def test_shutdown_drains_pending_work(self):
        ex = SerialExecutor("t")
        seen = []
        for i in range(50):
            ex.submit(seen.append, i)
        ex.shutdown()
        assert seen == list(range(50))


class TestTimerHandle:
    def test_cancel_prevents_fire(self):
        fired = threading.Event()
        t = threading.Timer(0.05, fired.set)
        h = SocketTimerHandle(t)
        t.start()
        h.cancel()
        assert h.cancelled
        assert not fired.wait(0.15)

    def test_fires_when_not_cancelled(self):
        fired = threading.Event()
        t = threading.Timer(0.01, fired.set)
        h = SocketTimerHandle(t)
        t.start()
        assert fired.wait(1.0)
        assert not h.cancelled


def multicast_loopback_available() -> bool:
    try:
        s = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        s.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP,
                     socket.inet_aton("239.77.0.99")
                     + socket.inet_aton("127.0.0.1"))
        s.close()
        return True
    except OSError:
        return False


@pytest.mark.skipif(not multicast_loopback_available(),
                    reason="no multicast loopback in this environment")
class TestLoopbackSmoke:
    def test_two_clients_stream_over_real_sockets(self):
        port = free_port()
        mc_port = free_port()
        files = {1: (30_000,) * 2, 2: (30_000,) * 2}
        catalog = Catalog(files)
        server_transport = ServerSocketTransport(
            host="127.0.0.1", port=port, group="239.77.0.2",
            multicast_port=mc_port, rate_bps=24e6)
        server = EdgeServer(ServerConfig(), catalog,
                            SegmentStore(catalog, SyntheticOrigin()),
                            server_transport)
        server.start()
        server_transport.start()
        clients = []
        try:
            results = {1: {}, 2: {}}
            events = {1: threading.Event(), 2: threading.Event()}
            def chain(cid, client, idx=1):
                if idx > 2:
                    events[cid].set()
                    return
                ref = catalog.ref(cid, idx)
                client.request_segment(
                    ref,
                    lambda body, ref=ref: (results[cid].__setitem__(ref.key,
                                                                    body),
                                           chain(cid, client, idx + 1)))

            for cid, other in ((1, 2), (2, 1)):
                cache = SegmentCache()
                for idx in (1, 2):
                    cache.put(catalog.ref(other, idx),
                              synthetic_body(other, idx, 30_000))
                transport = ClientSocketTransport(
                    cid, server_host="127.0.0.1", server_port=port,
                    group="239.77.0.2", multicast_port=mc_port)
                client = EdgeClient(cid, transport, cache)
                clients.append((client, transport))
                transport.connect()
                client.start()
                chain(cid, client)
            assert events[1].wait(10.0) and events[2].wait(10.0)
            for cid in (1, 2):
                for idx in (1, 2):
                    assert results[cid][(cid, idx)] == synthetic_body(
                        cid, idx, 30_000)
            # deliveries must have come over the multicast path, not the
            # round-limit unicast fallback
            assert all(not rep.fallback_clients and not rep.aborted
                       for rep in server.session_reports)
        finally:
            for client, transport in clients:
                transport.disconnect()
            server_transport.stop()

    def test_client_connect_refused(self):
        transport = ClientSocketTransport(1, server_host="127.0.0.1",
                                          server_port=free_port(),
                                          multicast_port=free_port())
        with pytest.raises(OSError):
            transport.connect()
