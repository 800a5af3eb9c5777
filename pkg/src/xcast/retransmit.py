"""Coded retransmission of lost multicast packets.

Lost (client, packet) records form an undirected graph whose edges mark
mutual reception: two losses can share one XORed retransmission when each
requesting client already holds the other's packet. The planner greedily
peels 3-cliques, then pairs up the rest with a maximum matching, then sends
whatever is left uncoded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx

from .coding import xor_bytes

Vertex = tuple[int, int]  # (client_id, packet_seq_no)


class RetransmissionError(Exception):
    pass


@dataclass
class RetransmissionGraph:
    """Mutual-reception graph over lost packets."""

    vertices: list[Vertex]
    edges: set[frozenset] = field(default_factory=set)

    def neighbors(self, v: Vertex) -> set[Vertex]:
        return {u for e in self.edges if v in e for u in e if u != v}

    def adjacent(self, u: Vertex, v: Vertex) -> bool:
        return frozenset((u, v)) in self.edges


@dataclass(frozen=True)
class CodedRetransmission:
    """One retransmission emission: the XOR of `degree` lost packets and the
    (client, seq_no) losses it repairs."""

    payload: bytes
    served: tuple[Vertex, ...]

    @property
    def degree(self) -> int:
        return len(self.served)


def build_retransmission_graph(loss_reports: dict[int, set[int]],
                               group_members: set[int]) -> RetransmissionGraph:
    """Build the graph from per-client missing-packet reports.

    One vertex per (client, lost seq_no). An edge joins two vertices exactly
    when each client received the other's lost packet, which is what makes a
    pairwise XOR decodable at both ends. A client never helps itself, and two
    clients that lost the same packet cannot help each other.

    Raises RetransmissionError for a report from outside the group.
    """
    for client_id in loss_reports:
        if client_id not in group_members:
            raise RetransmissionError(f"loss report from non-member client {client_id}")

    vertices = sorted((cid, seq) for cid, lost in loss_reports.items() for seq in lost)
    edges = set()
    for i, (ci, pi) in enumerate(vertices):
        for cj, pj in vertices[i + 1:]:
            if ci == cj:
                continue
            if pi not in loss_reports[cj] and pj not in loss_reports[ci]:
                edges.add(frozenset(((ci, pi), (cj, pj))))
    return RetransmissionGraph(vertices=vertices, edges=edges)


def _first_triangle(vertices: list[Vertex], adj: dict[Vertex, set[Vertex]], alive: set[Vertex]):
    # lexicographically first 3-clique over ascending (client_id, seq_no)
    for i, a in enumerate(vertices):
        na = adj[a] & alive
        for j in range(i + 1, len(vertices)):
            b = vertices[j]
            if b not in na:
                continue
            common = na & adj[b]
            later = [v for v in common if v > b]
            if later:
                return (a, b, min(later))
    return None


def plan_retransmissions(graph: RetransmissionGraph,
                         packet_bodies: dict[int, bytes]) -> list[CodedRetransmission]:
    """Plan one emission per 3-clique, matched pair, or leftover vertex.

    Every vertex is served by exactly one emission, and every emission is
    decodable by each client it serves (that client holds all other packets
    in the XOR). Packets of unequal length are zero-padded before XOR.

    Raises RetransmissionError when a packet body is missing.
    """
    for _, seq in graph.vertices:
        if seq not in packet_bodies:
            raise RetransmissionError(f"no body for packet {seq}")

    remaining = sorted(graph.vertices)
    adj: dict[Vertex, set[Vertex]] = {v: set() for v in remaining}
    for e in graph.edges:
        u, v = tuple(e)
        adj[u].add(v)
        adj[v].add(u)

    emissions: list[CodedRetransmission] = []

    def emit(group: tuple[Vertex, ...]):
        body = b""
        for _, seq in group:
            body = xor_bytes(body, packet_bodies[seq])
        emissions.append(CodedRetransmission(payload=body, served=group))

    alive = set(remaining)
    while True:
        tri = _first_triangle(remaining, adj, alive)
        if tri is None:
            break
        emit(tri)
        alive -= set(tri)
        remaining = [v for v in remaining if v in alive]

    g = nx.Graph()
    g.add_nodes_from(remaining)
    g.add_edges_from(sorted((min(u, v), max(u, v))
                            for u, v in ((w, x) for w in remaining for x in adj[w])
                            if u in alive and v in alive and u < v))
    matching = nx.max_weight_matching(g, maxcardinality=True)
    for pair in sorted(tuple(sorted(p)) for p in matching):
        emit(pair)

    matched = {v for pair in matching for v in pair}
    for v in remaining:
        if v not in matched:
            emit((v,))

    return emissions
