"""Binary control-header and data-packet codec.

Every message is framed the same way:

    u32  length of everything after this field (big-endian)
    u8   message type tag
    ...  fixed-width big-endian fields in declaration order,
         then variable-length records

Type tags:

    0x01 SEG_INFO     transmission announcement, unicast per group member
    0x02 UDP_PKT      one multicast data packet
    0x03 EOD          end of the current packet burst
    0x04 RET_REQ      client -> server list of missing seq_nos (empty = done)
    0x05 RET_INFO     which packets each retransmission emission XORs together
    0x06 JOIN_ADVERT  client join with full cache advertisement
    0x07 SEG_REQ      client -> server segment request
    0x08 SEG_DATA     direct unicast segment delivery (retransmission-limit
                      fallback path)
    0x09 ERR          error reply on the control channel

Control messages ride a reliable stream (TCP), UDP_PKT rides UDP multicast;
the length prefix is carried on both so a datagram and a stream frame look
identical. Field-by-field layouts are documented in docs/protocol.md and
pinned by golden vectors under tests/golden/.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass


class WireError(Exception):
    """Base class for codec failures."""


class EncodeError(WireError):
    """Message violates a field range or invariant at encode time."""


class MalformedMessage(WireError):
    """Byte stream cannot be parsed (truncation, bad length prefix)."""

    def __init__(self, msg: str, offset: int = 0):
        super().__init__(f"{msg} (offset {offset})")
        self.offset = offset


class UnknownType(WireError):
    pass


class InvariantViolation(WireError):
    """Parsed cleanly but the field values contradict each other."""


TAG_SEG_INFO = 0x01
TAG_UDP_PKT = 0x02
TAG_EOD = 0x03
TAG_RET_REQ = 0x04
TAG_RET_INFO = 0x05
TAG_JOIN_ADVERT = 0x06
TAG_SEG_REQ = 0x07
TAG_SEG_DATA = 0x08
TAG_ERR = 0x09

MAX_U8 = 0xFF
MAX_U16 = 0xFFFF
MAX_U32 = 0xFFFFFFFF

DEFAULT_PAYLOAD_SIZE = 1400


def packet_count(body_len: int, payload_size: int) -> int:
    return max(1, -(-body_len // payload_size))


@dataclass(frozen=True)
class SegInfoMember:
    client_id: int
    file_id: int
    segment_index: int
    segment_length: int


@dataclass(frozen=True)
class SegInfo:
    """Announces one coded (or plain) segment transmission to its group."""

    segment_group_id: int
    members: tuple[SegInfoMember, ...]
    total_udp_packets: int
    payload_size: int

    def check(self):
        if not self.members:
            raise InvariantViolation("SEG_INFO needs at least one member")
        if self.payload_size <= 0:
            raise InvariantViolation("payload_size must be positive")
        longest = max(m.segment_length for m in self.members)
        if self.total_udp_packets != packet_count(longest, self.payload_size):
            raise InvariantViolation(
                f"total_udp_packets {self.total_udp_packets} != "
                f"ceil({longest}/{self.payload_size})")


@dataclass(frozen=True)
class UdpPkt:
    segment_group_id: int
    udp_seq_no: int
    payload: bytes


@dataclass(frozen=True)
class Eod:
    segment_group_id: int


@dataclass(frozen=True)
class RetReq:
    """Missing seq_nos after a burst; an empty list means fully received."""

    segment_group_id: int
    client_id: int
    seq_nos: tuple[int, ...]

    @property
    def udp_pkt_count(self) -> int:
        return len(self.seq_nos)


@dataclass(frozen=True)
class RetEmission:
    served: tuple[tuple[int, int], ...]  # (client_id, udp_seq_no) pairs

    @property
    def coded_degree(self) -> int:
        return len(self.served)


@dataclass(frozen=True)
class RetInfo:
    segment_group_id: int
    emissions: tuple[RetEmission, ...]

    def check(self):
        for em in self.emissions:
            if not 1 <= em.coded_degree <= 3:
                raise InvariantViolation(f"coded_degree {em.coded_degree} not in 1..3")
            if len(set(em.served)) != len(em.served):
                raise InvariantViolation("duplicate served pair in emission")


@dataclass(frozen=True)
class JoinAdvert:
    client_id: int
    cache_entries: tuple[tuple[int, int], ...]  # (file_id, segment_index)

    def check(self):
        if len(set(self.cache_entries)) != len(self.cache_entries):
            raise InvariantViolation("duplicate cache entry in join advert")


@dataclass(frozen=True)
class SegReq:
    client_id: int
    file_id: int
    segment_index: int


@dataclass(frozen=True)
class SegData:
    """Unicast fallback delivery of a whole segment over the control channel."""

    client_id: int
    file_id: int
    segment_index: int
    body: bytes


@dataclass(frozen=True)
class ErrReply:
    code: int
    file_id: int
    segment_index: int
    detail: str


ERR_UNKNOWN_CLIENT = 1
ERR_UNKNOWN_SEGMENT = 2
ERR_ORIGIN_FETCH = 3
ERR_QUEUE_FULL = 4
ERR_DELIVERY_FAILED = 5

Message = (SegInfo | UdpPkt | Eod | RetReq | RetInfo | JoinAdvert
           | SegReq | SegData | ErrReply)


def _u8(v: int, what: str) -> bytes:
    if not 0 <= v <= MAX_U8:
        raise EncodeError(f"{what} {v} out of u8 range")
    return struct.pack(">B", v)


def _u16(v: int, what: str) -> bytes:
    if not 0 <= v <= MAX_U16:
        raise EncodeError(f"{what} {v} out of u16 range")
    return struct.pack(">H", v)


def _u32(v: int, what: str) -> bytes:
    if not 0 <= v <= MAX_U32:
        raise EncodeError(f"{what} {v} out of u32 range")
    return struct.pack(">I", v)


def encode_message(msg: Message) -> bytes:
    """Serialize a message, length prefix included.

    Encoding is canonical: equal values always produce identical bytes.
    Raises EncodeError on range overflow or invariant violations.
    """
    if isinstance(msg, SegInfo):
        try:
            msg.check()
        except InvariantViolation as e:
            raise EncodeError(str(e)) from e
        parts = [_u8(TAG_SEG_INFO, "tag"), _u16(msg.segment_group_id, "group"),
                 _u8(len(msg.members), "member_count")]
        for m in msg.members:
            parts += [_u32(m.client_id, "client_id"), _u32(m.file_id, "file_id"),
                      _u32(m.segment_index, "segment_index"),
                      _u32(m.segment_length, "segment_length")]
        parts += [_u16(msg.total_udp_packets, "total_udp_packets"),
                  _u16(msg.payload_size, "payload_size")]
    elif isinstance(msg, UdpPkt):
        parts = [_u8(TAG_UDP_PKT, "tag"), _u16(msg.segment_group_id, "group"),
                 _u16(msg.udp_seq_no, "udp_seq_no"), msg.payload]
    elif isinstance(msg, Eod):
        parts = [_u8(TAG_EOD, "tag"), _u16(msg.segment_group_id, "group")]
    elif isinstance(msg, RetReq):
        parts = [_u8(TAG_RET_REQ, "tag"), _u16(msg.segment_group_id, "group"),
                 _u32(msg.client_id, "client_id"), _u16(len(msg.seq_nos), "udp_pkt_count")]
        parts += [_u16(s, "seq_no") for s in msg.seq_nos]
    elif isinstance(msg, RetInfo):
        try:
            msg.check()
        except InvariantViolation as e:
            raise EncodeError(str(e)) from e
        parts = [_u8(TAG_RET_INFO, "tag"), _u16(msg.segment_group_id, "group"),
                 _u16(len(msg.emissions), "emission_count")]
        for em in msg.emissions:
            parts.append(_u8(em.coded_degree, "coded_degree"))
            for cid, seq in em.served:
                parts += [_u32(cid, "client_id"), _u16(seq, "udp_seq_no")]
    elif isinstance(msg, JoinAdvert):
        try:
            msg.check()
        except InvariantViolation as e:
            raise EncodeError(str(e)) from e
        parts = [_u8(TAG_JOIN_ADVERT, "tag"), _u32(msg.client_id, "client_id"),
                 _u32(len(msg.cache_entries), "cache_entry_count")]
        for fid, idx in msg.cache_entries:
            parts += [_u32(fid, "file_id"), _u32(idx, "segment_index")]
    elif isinstance(msg, SegReq):
        parts = [_u8(TAG_SEG_REQ, "tag"), _u32(msg.client_id, "client_id"),
                 _u32(msg.file_id, "file_id"), _u32(msg.segment_index, "segment_index")]
    elif isinstance(msg, SegData):
        parts = [_u8(TAG_SEG_DATA, "tag"), _u32(msg.client_id, "client_id"),
                 _u32(msg.file_id, "file_id"), _u32(msg.segment_index, "segment_index"),
                 msg.body]
    elif isinstance(msg, ErrReply):
        detail = msg.detail.encode("utf-8")
        parts = [_u8(TAG_ERR, "tag"), _u16(msg.code, "code"),
                 _u32(msg.file_id, "file_id"), _u32(msg.segment_index, "segment_index"),
                 _u16(len(detail), "detail length"), detail]
    else:
        raise EncodeError(f"not a wire message: {type(msg).__name__}")
    body = b"".join(parts)
    return _u32(len(body), "message length") + body


class _Reader:
    def __init__(self, data: bytes, base: int = 0):
        self.data = data
        self.pos = 0
        self.base = base  # offset of data[0] in the original buffer

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise MalformedMessage("truncated field", self.base + self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def rest(self) -> bytes:
        out = self.data[self.pos:]
        self.pos = len(self.data)
        return out

    def done(self):
        if self.pos != len(self.data):
            raise MalformedMessage(
                f"{len(self.data) - self.pos} trailing bytes", self.base + self.pos)


def decode_message(data: bytes) -> Message:
    """Parse one framed message; the exact inverse of encode_message.

    Raises MalformedMessage / UnknownType / InvariantViolation, never
    anything else, for arbitrary input bytes.
    """
    if len(data) < 5:
        raise MalformedMessage("shorter than frame header", 0)
    (length,) = struct.unpack(">I", data[:4])
    if length != len(data) - 4:
        raise MalformedMessage(f"length prefix {length} != body {len(data) - 4}", 0)
    r = _Reader(data[4:], base=4)
    tag = r.u8()
    if tag == TAG_SEG_INFO:
        group = r.u16()
        count = r.u8()
        members = tuple(SegInfoMember(r.u32(), r.u32(), r.u32(), r.u32())
                        for _ in range(count))
        msg = SegInfo(group, members, r.u16(), r.u16())
        r.done()
        msg.check()
        return msg
    if tag == TAG_UDP_PKT:
        return UdpPkt(r.u16(), r.u16(), r.rest())
    if tag == TAG_EOD:
        msg = Eod(r.u16())
        r.done()
        return msg
    if tag == TAG_RET_REQ:
        group, cid, count = r.u16(), r.u32(), r.u16()
        msg = RetReq(group, cid, tuple(r.u16() for _ in range(count)))
        r.done()
        return msg
    if tag == TAG_RET_INFO:
        group = r.u16()
        count = r.u16()
        emissions = []
        for _ in range(count):
            degree = r.u8()
            emissions.append(RetEmission(tuple((r.u32(), r.u16()) for _ in range(degree))))
        msg = RetInfo(group, tuple(emissions))
        r.done()
        msg.check()
        return msg
    if tag == TAG_JOIN_ADVERT:
        cid = r.u32()
        count = r.u32()
        msg = JoinAdvert(cid, tuple((r.u32(), r.u32()) for _ in range(count)))
        r.done()
        msg.check()
        return msg
    if tag == TAG_SEG_REQ:
        msg = SegReq(r.u32(), r.u32(), r.u32())
        r.done()
        return msg
    if tag == TAG_SEG_DATA:
        return SegData(r.u32(), r.u32(), r.u32(), r.rest())
    if tag == TAG_ERR:
        code, fid, idx = r.u16(), r.u32(), r.u32()
        raw = r.take(r.u16())
        try:
            detail = raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedMessage("detail is not valid UTF-8", 4 + r.pos) from e
        msg = ErrReply(code, fid, idx, detail)
        r.done()
        return msg
    raise UnknownType(f"unknown message tag 0x{tag:02x}")


def read_frame(buffer: bytes) -> tuple[bytes | None, bytes]:
    """Split one complete frame off the front of a stream buffer.

    Returns (frame, remainder); frame is None while the buffer is still
    short. Raises MalformedMessage for an absurd length prefix.
    """
    if len(buffer) < 4:
        return None, buffer
    (length,) = struct.unpack(">I", buffer[:4])
    if length > 0x7FFFFFFF:
        raise MalformedMessage(f"implausible frame length {length}", 0)
    end = 4 + length
    if len(buffer) < end:
        return None, buffer
    return buffer[:end], buffer[end:]
