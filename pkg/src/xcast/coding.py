"""Index coding primitives: codability tests, greedy coding-set selection,
and XOR encode/decode for segments of unequal length.

Everything in this module is a pure function over value types and safe to
call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field


class CodingError(Exception):
    """Invalid input to an encode operation."""


class DecodeError(Exception):
    """Side information does not match the coded payload."""


@dataclass(frozen=True, order=True)
class SegmentRef:
    """Identity of one video segment: (file_id, segment_index) plus its size.

    (file_id, segment_index) is globally unique within a catalog and the
    size is immutable once registered; segment indices start at 1.
    """

    file_id: int
    segment_index: int
    size_bytes: int

    def __post_init__(self):
        if self.segment_index < 1:
            raise ValueError(f"segment_index must be >= 1, got {self.segment_index}")
        if self.size_bytes < 0:
            raise ValueError("size_bytes must be non-negative")

    @property
    def key(self) -> tuple[int, int]:
        return (self.file_id, self.segment_index)

    def __repr__(self):
        return f"f{self.file_id}^({self.segment_index})"


@dataclass
class ClientState:
    """One client: the segment it currently wants and the set it has cached.

    In HTTP streaming a client requests one segment at a time, so `wanted`
    holds at most one ref, and a client never wants what it already caches.
    """

    client_id: int
    wanted: set[SegmentRef] = field(default_factory=set)
    cached: set[SegmentRef] = field(default_factory=set)

    def check(self):
        if len(self.wanted) > 1:
            raise ValueError(f"client {self.client_id} wants {len(self.wanted)} segments")
        if self.wanted & self.cached:
            raise ValueError(f"client {self.client_id} wants a segment it caches")


@dataclass(frozen=True)
class CodingSet:
    """An ordered group of (client, segment) pairs whose requests are coded
    together, with per-member arrival timestamps."""

    members: tuple[tuple[int, SegmentRef], ...]
    arrival_times: tuple[float, ...]

    def __post_init__(self):
        if len(self.members) != len(self.arrival_times):
            raise ValueError("one arrival time per member required")
        refs = [ref for _, ref in self.members]
        if len(set(refs)) != len(refs):
            raise ValueError("coding set members must be distinct segments")

    @property
    def refs(self) -> tuple[SegmentRef, ...]:
        return tuple(ref for _, ref in self.members)

    @property
    def earliest_arrival(self) -> float:
        return min(self.arrival_times)

    @property
    def transmit_size(self) -> int:
        """Bytes this set puts on the air: the XOR body is as long as the
        largest member segment."""
        return max(ref.size_bytes for _, ref in self.members)


@dataclass(frozen=True)
class CodedPayload:
    """XOR combination of one or more segment bodies.

    The body is as long as the largest input; shorter inputs are zero-padded
    on the right, so the tail of the longest segment rides through uncoded.
    True per-member lengths travel in `segment_lengths`.
    """

    segment_lengths: tuple[int, ...]
    body: bytes
    member_refs: tuple[SegmentRef, ...] = ()

    def __post_init__(self):
        if len(self.body) != max(self.segment_lengths):
            raise ValueError("body length must equal the largest segment length")


def is_codable(a: ClientState, b: ClientState) -> bool:
    """True iff a's want is cached at b and b's want is cached at a.

    Total function: malformed or empty wanted sets simply yield False.
    """
    if not a.wanted or not b.wanted:
        return False
    return a.wanted <= b.cached and b.wanted <= a.cached


def extend_codable(coding_set: CodingSet, candidate: ClientState,
                   client_states: dict[int, ClientState]) -> bool:
    """True iff `candidate` is pairwise codable with every member of the set:
    its want is cached at each member's client, and each member's segment is
    cached at the candidate.

    Vacuously true for an empty set (candidate must still want something).
    Raises KeyError for a member client missing from `client_states`.
    """
    if not candidate.wanted:
        return False
    (want,) = candidate.wanted
    for client_id, ref in coding_set.members:
        owner = client_states[client_id]
        if want not in owner.cached:
            return False
        if ref not in candidate.cached:
            return False
        if ref == want:
            return False
    return True


def select_coding_partner(r: CodingSet, queue: list[CodingSet],
                          client_states: dict[int, ClientState],
                          size_affinity: float = 0.8) -> int | None:
    """Greedy coding-set selection for an incoming single request `r`.

    Builds I, the queue entries codable with r; restricts to J, those with
    the most segments already coded together; within J prefers entries whose
    on-air size is similar to r's (ratio >= size_affinity); finally picks the
    entry whose earliest member arrived first, breaking exact ties by queue
    position. Returns the queue index, or None when nothing is codable.
    """
    if len(r.members) != 1:
        raise ValueError("incoming request must be a single-member set")
    (req_client, req_ref), = r.members
    candidate = client_states[req_client]

    codable = [i for i, entry in enumerate(queue)
               if extend_codable(entry, candidate, client_states)]
    if not codable:
        return None

    max_members = max(len(queue[i].members) for i in codable)
    best = [i for i in codable if len(queue[i].members) == max_members]

    def similar(i: int) -> bool:
        a, b = req_ref.size_bytes, queue[i].transmit_size
        if max(a, b) == 0:
            return True
        return min(a, b) / max(a, b) >= size_affinity

    tier = [i for i in best if similar(i)]
    if tier:
        best = tier

    return min(best, key=lambda i: (queue[i].earliest_arrival, i))


def xor_bytes(a: bytes, b: bytes) -> bytes:
    """Bytewise XOR with the shorter input zero-padded on the right."""
    n = max(len(a), len(b))
    x = int.from_bytes(a, "little") ^ int.from_bytes(b, "little")
    return x.to_bytes(n, "little")


def xor_encode(bodies: list[bytes], member_refs: tuple[SegmentRef, ...] = ()) -> CodedPayload:
    """XOR one or more segment bodies into a CodedPayload.

    A single body passes through unchanged. Raises CodingError on an empty
    input list or an empty body.
    """
    if not bodies:
        raise CodingError("nothing to encode")
    if any(len(b) == 0 for b in bodies):
        raise CodingError("cannot encode an empty segment body")
    lengths = tuple(len(b) for b in bodies)
    n = max(lengths)
    acc = 0
    for b in bodies:
        acc ^= int.from_bytes(b, "little")
    return CodedPayload(segment_lengths=lengths, body=acc.to_bytes(n, "little"),
                        member_refs=member_refs)


def xor_decode(payload: CodedPayload, my_index: int, side_info: list[bytes]) -> bytes:
    """Recover member `my_index` from a coded payload using the bodies of all
    other members, supplied in member order.

    Raises DecodeError when the side bodies do not match the recorded
    lengths (count or per-body length).
    """
    k = len(payload.segment_lengths)
    if not 0 <= my_index < k:
        raise DecodeError(f"member index {my_index} out of range for {k} members")
    if len(side_info) != k - 1:
        raise DecodeError(f"need {k - 1} side segments, got {len(side_info)}")
    other_lengths = [n for i, n in enumerate(payload.segment_lengths) if i != my_index]
    for body, expect in zip(side_info, other_lengths):
        if len(body) != expect:
            raise DecodeError(f"side segment length {len(body)} != recorded {expect}")
    acc = int.from_bytes(payload.body, "little")
    for body in side_info:
        acc ^= int.from_bytes(body, "little")
    mine = payload.segment_lengths[my_index]
    return acc.to_bytes(len(payload.body), "little")[:mine]
