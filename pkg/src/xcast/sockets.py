"""Real-network transports: TCP control channel plus UDP multicast.

These expose the same duck-typed surface as the simulator transports
(`now`, `call_at`, handler setters, `send_control`, `multicast`), so the
server and client engines run unchanged on either. All protocol state is
driven from a single worker thread per endpoint; socket reader threads
and timers only post work onto that thread.
"""

from __future__ import annotations

import queue
import socket
import struct
import threading
import time
from typing import Callable

from .wire import read_frame

DEFAULT_CONTROL_PORT = 7700
DEFAULT_MULTICAST_GROUP = "239.77.0.1"
DEFAULT_MULTICAST_PORT = 7701


class SerialExecutor:
    """Single consumer thread; everything submitted runs in order."""

    def __init__(self, name: str):
        self._queue: queue.Queue = queue.Queue()
        self._thread = threading.Thread(target=self._run, name=name, daemon=True)
        self._closed = False
        self._thread.start()

    def submit(self, fn: Callable, *args):
        if not self._closed:
            self._queue.put((fn, args))

    def _run(self):
        while True:
            item = self._queue.get()
            if item is None:
                return
            fn, args = item
            try:
                fn(*args)
            except Exception:  # noqa: BLE001 - a handler bug must not kill the loop
                import traceback
                traceback.print_exc()

    def shutdown(self):
        self._closed = True
        self._queue.put(None)
        self._thread.join(timeout=2.0)


class SocketTimerHandle:
    """Cancelable wrapper around threading.Timer."""

    def __init__(self, timer: threading.Timer):
        self._timer = timer
        self.cancelled = False

    def cancel(self):
        self.cancelled = True
        self._timer.cancel()


class _Clock:
    def __init__(self):
        self._t0 = time.monotonic()

    @property
    def now(self) -> float:
        return time.monotonic() - self._t0


class _ConnReader(threading.Thread):
    """Reads length-prefixed frames off one TCP socket."""

    def __init__(self, sock: socket.socket, conn_id: int,
                 on_frame: Callable[[int, bytes], None],
                 on_close: Callable[[int], None]):
        super().__init__(name=f"conn-{conn_id}", daemon=True)
        self.sock = sock
        self.conn_id = conn_id
        self.on_frame = on_frame
        self.on_close = on_close

    def run(self):
        buf = b""
        try:
            while True:
                chunk = self.sock.recv(65536)
                if not chunk:
                    break
                buf += chunk
                while True:
                    frame, buf = read_frame(buf)
                    if frame is None:
                        break
                    self.on_frame(self.conn_id, frame)
        except OSError:
            pass
        finally:
            self.on_close(self.conn_id)


class ServerSocketTransport:
    """Listens for control connections and owns the multicast sender.

    Multicast sends are paced to the configured link rate so a burst of
    datagrams does not outrun receiver buffers; the pacing sleep runs on
    the worker thread, which also serializes the protocol state exactly
    like the shared radio does.
    """

    def __init__(self, host: str = "0.0.0.0", port: int = DEFAULT_CONTROL_PORT,
                 group: str = DEFAULT_MULTICAST_GROUP,
                 multicast_port: int = DEFAULT_MULTICAST_PORT,
                 rate_bps: float = 24e6, ttl: int = 1):
        self._clock = _Clock()
        self.host = host
        self.port = port
        self.group = group
        self.multicast_port = multicast_port
        self.rate_bps = rate_bps
        self._executor = SerialExecutor("server-work")
        self._on_frame: Callable[[int, bytes], None] | None = None
        self._on_disconnect: Callable[[int], None] | None = None
        self._conns: dict[int, socket.socket] = {}
        self._conn_lock = threading.Lock()
        self._next_conn = 0
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._closed = False

        self._mc_sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._mc_sock.setsockopt(socket.IPPROTO_IP, socket.IP_MULTICAST_TTL,
                                 struct.pack("b", ttl))
        self.bytes_control_tx = 0
        self.bytes_multicast_tx = 0

    @property
    def now(self) -> float:
        return self._clock.now

    def call_at(self, t: float, fn: Callable, *args,
                label: str | None = None) -> SocketTimerHandle:
        delay = max(0.0, t - self.now)
        timer = threading.Timer(delay, self._executor.submit, (fn, *args))
        timer.daemon = True
        handle = SocketTimerHandle(timer)
        timer.start()
        return handle

    def set_control_handler(self, fn: Callable[[int, bytes], None]):
        self._on_frame = fn

    def set_disconnect_handler(self, fn: Callable[[int], None]):
        self._on_disconnect = fn

    def start(self):
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, self.port))
        listener.listen(32)
        self._listener = listener
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               name="accept", daemon=True)
        self._accept_thread.start()

    def _accept_loop(self):
        assert self._listener is not None
        while not self._closed:
            try:
                sock, _addr = self._listener.accept()
            except OSError:
                return
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with self._conn_lock:
                self._next_conn += 1
                conn_id = self._next_conn
                self._conns[conn_id] = sock
            _ConnReader(sock, conn_id, self._frame_arrived,
                        self._conn_closed).start()

    def _frame_arrived(self, conn_id: int, frame: bytes):
        if self._on_frame is not None:
            self._executor.submit(self._on_frame, conn_id, frame)

    def _conn_closed(self, conn_id: int):
        with self._conn_lock:
            sock = self._conns.pop(conn_id, None)
        if sock is not None:
            try:
                sock.close()
            except OSError:
                pass
            if self._on_disconnect is not None:
                self._executor.submit(self._on_disconnect, conn_id)

    def send_control(self, conn_id: int, data: bytes):
        with self._conn_lock:
            sock = self._conns.get(conn_id)
        if sock is None:
            return
        self.bytes_control_tx += len(data)
        try:
            sock.sendall(data)
        except OSError:
            self._conn_closed(conn_id)

    def multicast(self, data: bytes) -> float:
        self.bytes_multicast_tx += len(data)
        self._mc_sock.sendto(data, (self.group, self.multicast_port))
        airtime = len(data) * 8 / self.rate_bps
        time.sleep(airtime)
        return self.now

    def stop(self):
        self._closed = True
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._conn_lock:
            conns = list(self._conns.values())
            self._conns.clear()
        for sock in conns:
            try:
                sock.close()
            except OSError:
                pass
        self._mc_sock.close()
        self._executor.shutdown()


class ClientSocketTransport:
    """One TCP control link plus membership in the multicast group."""

    def __init__(self, client_id: int, server_host: str = "127.0.0.1",
                 server_port: int = DEFAULT_CONTROL_PORT,
                 group: str = DEFAULT_MULTICAST_GROUP,
                 multicast_port: int = DEFAULT_MULTICAST_PORT,
                 join_interface: str = "0.0.0.0"):
        self._clock = _Clock()
        self.client_id = client_id
        self.server_host = server_host
        self.server_port = server_port
        self.group = group
        self.multicast_port = multicast_port
        self.join_interface = join_interface
        self._executor = SerialExecutor(f"client-{client_id}")
        self._on_frame: Callable[[bytes], None] | None = None
        self._on_datagram: Callable[[bytes], None] | None = None
        self._tcp: socket.socket | None = None
        self._udp: socket.socket | None = None
        self.connected = False
        self.bytes_control_tx = 0

    @property
    def now(self) -> float:
        return self._clock.now

    def call_at(self, t: float, fn: Callable, *args,
                label: str | None = None) -> SocketTimerHandle:
        delay = max(0.0, t - self.now)
        timer = threading.Timer(delay, self._executor.submit, (fn, *args))
        timer.daemon = True
        handle = SocketTimerHandle(timer)
        timer.start()
        return handle

    def set_control_handler(self, fn: Callable[[bytes], None]):
        self._on_frame = fn

    def set_multicast_handler(self, fn: Callable[[bytes], None]):
        self._on_datagram = fn

    def connect(self):
        tcp = socket.create_connection((self.server_host, self.server_port),
                                       timeout=10.0)
        tcp.settimeout(None)
        tcp.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._tcp = tcp

        udp = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        udp.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        # must bind the wildcard address: binding a unicast address would
        # filter out datagrams whose destination is the group
        udp.bind(("", self.multicast_port))
        membership = struct.pack("4s4s", socket.inet_aton(self.group),
                                 socket.inet_aton(self.join_interface))
        udp.setsockopt(socket.IPPROTO_IP, socket.IP_ADD_MEMBERSHIP, membership)
        self._udp = udp

        self.connected = True
        threading.Thread(target=self._tcp_loop, name=f"ctl-{self.client_id}",
                         daemon=True).start()
        threading.Thread(target=self._udp_loop, name=f"mc-{self.client_id}",
                         daemon=True).start()

    def _tcp_loop(self):
        assert self._tcp is not None
        buf = b""
        try:
            while True:
                chunk = self._tcp.recv(65536)
                if not chunk:
                    break
                buf += chunk
                while True:
                    frame, buf = read_frame(buf)
                    if frame is None:
                        break
                    if self._on_frame is not None:
                        self._executor.submit(self._on_frame, frame)
        except OSError:
            pass
        finally:
            self.connected = False

    def _udp_loop(self):
        assert self._udp is not None
        try:
            while True:
                data, _addr = self._udp.recvfrom(65536)
                if self._on_datagram is not None:
                    self._executor.submit(self._on_datagram, data)
        except OSError:
            return

    def send_control(self, data: bytes):
        if not self.connected or self._tcp is None:
            raise ConnectionError(f"client {self.client_id} is not connected")
        self.bytes_control_tx += len(data)
        self._tcp.sendall(data)

    def disconnect(self):
        self.connected = False
        for sock in (self._tcp, self._udp):
            if sock is not None:
                try:
                    sock.close()
                except OSError:
                    pass
        self._executor.shutdown()
