"""Semi-informed social graphs.

A :class:`Network` is an immutable undirected simple graph stored in CSR
form, with one :class:`NodeState` per node and one transmission probability
per undirected edge. Builders return new networks instead of mutating.
"""

from __future__ import annotations

import dataclasses
import io
import os
import random
from enum import IntEnum
from typing import BinaryIO, Iterable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import EmptyTargetSet, Infeasible, InvalidParameters, ParseError


class NodeState(IntEnum):
    SENSITIVE = 0
    INFORMED = 1
    UNINFORMED = 2


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclasses.dataclass(frozen=True, eq=False)
class Network:
    """Undirected simple graph with node states and edge probabilities.

    ``edges`` holds each undirected edge once as ``(u, v)`` with ``u < v``,
    sorted lexicographically; ``edge_prob[k]`` belongs to ``edges[k]``.
    ``indptr``/``indices`` give every node's neighbours in ascending order and
    ``csr_edge`` maps each CSR slot back to its edge id.
    """

    node_count: int
    indptr: np.ndarray
    indices: np.ndarray
    csr_edge: np.ndarray
    edges: np.ndarray
    edge_prob: np.ndarray
    states: np.ndarray
    id_map: np.ndarray | None = None

    @classmethod
    def from_edges(
        cls,
        node_count: int,
        src: Iterable[int] | np.ndarray,
        dst: Iterable[int] | np.ndarray,
        id_map: np.ndarray | None = None,
    ) -> "Network":
        """Build a network, dropping self-loops and duplicate edges."""
        u = np.asarray(src, dtype=np.int64).ravel()
        v = np.asarray(dst, dtype=np.int64).ravel()
        if u.shape != v.shape:
            raise InvalidParameters("src and dst must have equal length")
        if u.size and (min(u.min(), v.min()) < 0 or max(u.max(), v.max()) >= node_count):
            raise InvalidParameters("edge endpoint outside 0..node_count-1")
        keep = u != v
        lo = np.minimum(u[keep], v[keep])
        hi = np.maximum(u[keep], v[keep])
        key = np.unique(lo * node_count + hi)
        lo, hi = key // node_count, key % node_count
        edges = np.stack([lo, hi], axis=1) if key.size else np.zeros((0, 2), np.int64)

        eid = np.arange(key.size, dtype=np.int64)
        rows = np.concatenate([lo, hi])
        cols = np.concatenate([hi, lo])
        slot_edge = np.concatenate([eid, eid])
        order = np.lexsort((cols, rows))
        rows, cols, slot_edge = rows[order], cols[order], slot_edge[order]
        indptr = np.zeros(node_count + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=node_count), out=indptr[1:])
        return cls(
            node_count=int(node_count),
            indptr=_frozen(indptr),
            indices=_frozen(cols),
            csr_edge=_frozen(slot_edge),
            edges=_frozen(edges),
            edge_prob=_frozen(np.zeros(key.size)),
            states=_frozen(np.full(node_count, NodeState.INFORMED, dtype=np.int8)),
            id_map=None if id_map is None else _frozen(np.asarray(id_map)),
        )

    @property
    def edge_count(self) -> int:
        return int(self.edges.shape[0])

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def degree(self, node: int) -> int:
        return int(self.indptr[node + 1] - self.indptr[node])

    def neighbors(self, node: int) -> np.ndarray:
        return self.indices[self.indptr[node] : self.indptr[node + 1]]

    def adjacency(self) -> list[list[int]]:
        return [self.neighbors(i).tolist() for i in range(self.node_count)]

    def edge_id(self, u: int, v: int) -> int:
        row = self.neighbors(u)
        pos = int(np.searchsorted(row, v))
        if pos >= row.size or row[pos] != v:
            raise KeyError((u, v))
        return int(self.csr_edge[self.indptr[u] + pos])

    def prob(self, u: int, v: int) -> float:
        return float(self.edge_prob[self.edge_id(u, v)])

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors(u)
        pos = int(np.searchsorted(row, v))
        return pos < row.size and row[pos] == v

    def nodes_in(self, state: NodeState) -> np.ndarray:
        return np.flatnonzero(self.states == state)

    @property
    def sensitive_mask(self) -> np.ndarray:
        return self.states == NodeState.SENSITIVE

    def with_edge_prob(self, edge_prob: np.ndarray) -> "Network":
        edge_prob = np.asarray(edge_prob, dtype=float)
        if edge_prob.shape != (self.edge_count,):
            raise InvalidParameters("edge_prob must have one entry per edge")
        if edge_prob.size and (edge_prob.min() < 0 or edge_prob.max() > 1):
            raise InvalidParameters("edge probabilities must lie in [0, 1]")
        return dataclasses.replace(self, edge_prob=_frozen(edge_prob.copy()))

    def with_states(self, states: np.ndarray) -> "Network":
        states = np.asarray(states, dtype=np.int8)
        if states.shape != (self.node_count,):
            raise InvalidParameters("states must have one entry per node")
        return dataclasses.replace(self, states=_frozen(states.copy()))

    def check_invariants(self) -> None:
        """Full scan of the structural invariants; raises AssertionError."""
        adj = self.adjacency()
        for i, row in enumerate(adj):
            assert i not in row, f"self-loop at {i}"
            assert row == sorted(set(row)), f"unsorted or duplicate neighbours at {i}"
            for j in row:
                assert i in adj[j], f"asymmetric edge {i}-{j}"
        assert int(self.degrees.sum()) == 2 * self.edge_count
        assert np.all((self.edge_prob >= 0) & (self.edge_prob <= 1))
        assert set(np.unique(self.states).tolist()) <= {int(s) for s in NodeState}


@dataclasses.dataclass(frozen=True, eq=False)
class TargetSet:
    """The bandit instance hidden in a semi-informed network.

    Entry ``i`` describes target edge ``target_edges[i]`` = (sensitive node,
    uninformed node) with destination degree ``D[i]`` and current probability
    ``beta0[i]``. ``D[sort_permutation]`` is non-decreasing.
    """

    target_node_ids: np.ndarray
    target_edges: np.ndarray
    D: np.ndarray
    beta0: np.ndarray
    sort_permutation: np.ndarray

    @property
    def m(self) -> int:
        return int(self.D.size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TargetSet):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f.name), getattr(other, f.name))
            for f in dataclasses.fields(self)
        )


def generate_ba(n: int, p: int, seed: int) -> Network:
    """Barabási-Albert graph grown from a path of ``p`` seed nodes.

    Each of the ``n - p`` later nodes attaches ``p`` distinct edges to
    existing nodes drawn proportionally to degree (repeated-nodes list). The
    first new node can only reach the ``p`` seed nodes, so it takes all of
    them.
    """
    if p < 1 or n <= p:
        raise InvalidParameters(f"need n > p >= 1, got n={n}, p={p}")
    rng = random.Random(seed)
    src: list[int] = []
    dst: list[int] = []
    repeated: list[int] = []
    for a in range(p - 1):
        src.append(a)
        dst.append(a + 1)
        repeated += (a, a + 1)
    for new in range(p, n):
        if new == p:
            targets = list(range(p))
        else:
            chosen: set[int] = set()
            targets = []
            while len(targets) < p:
                t = repeated[rng.randrange(len(repeated))]
                if t not in chosen:
                    chosen.add(t)
                    targets.append(t)
        for t in targets:
            src.append(new)
            dst.append(t)
            repeated += (new, t)
    return Network.from_edges(n, src, dst)


def _open_bytes(source: BinaryIO | bytes | str | os.PathLike) -> tuple[BinaryIO, bool]:
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(source), True
    if isinstance(source, (str, os.PathLike)):
        return open(source, "rb"), True
    return source, False


def load_edge_list(source: BinaryIO | bytes | str | os.PathLike) -> Network:
    """Parse a SNAP-style edge list.

    Lines starting with ``#`` and blank lines are skipped; every other line
    must hold at least two integer tokens. Original ids are compacted to
    ``0..n-1``; ``Network.id_map[k]`` is the original id of node ``k``.
    """
    stream, owned = _open_bytes(source)
    src: list[int] = []
    dst: list[int] = []
    try:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.strip()
            if not line or line.startswith(b"#"):
                continue
            parts = line.split()
            if len(parts) < 2:
                raise ParseError(f"expected two node ids, got {raw!r}", lineno)
            try:
                a, b = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"non-integer token in {raw!r}", lineno) from None
            src.append(a)
            dst.append(b)
    finally:
        if owned:
            stream.close()
    if not src:
        return Network.from_edges(0, [], [], id_map=np.zeros(0, np.int64))
    ids, inverse = np.unique(np.array(src + dst, dtype=np.int64), return_inverse=True)
    k = len(src)
    return Network.from_edges(ids.size, inverse[:k], inverse[k:], id_map=ids)


def write_edge_list(net: Network, sink: BinaryIO) -> None:
    ids = net.id_map if net.id_map is not None else np.arange(net.node_count)
    sink.write(f"# nodes {net.node_count} edges {net.edge_count}\n".encode())
    for u, v in net.edges:
        sink.write(f"{ids[u]} {ids[v]}\n".encode())


def sample_edge_weights(net: Network, xi: float, seed: int | np.random.Generator) -> Network:
    """Draw every edge probability independently from U(0, xi)."""
    if not 0 < xi <= 1:
        raise InvalidParameters(f"xi must lie in (0, 1], got {xi}")
    rng = np.random.default_rng(seed)
    return net.with_edge_prob(rng.uniform(0.0, xi, size=net.edge_count))


def _connected_seed_set(net: Network, size: int, rng: np.random.Generator) -> list[int]:
    graph = csr_matrix(
        (np.ones(net.indices.size), net.indices, net.indptr),
        shape=(net.node_count, net.node_count),
    )
    _, labels = connected_components(graph, directed=False)
    comp_sizes = np.bincount(labels)
    eligible = np.flatnonzero(comp_sizes[labels] >= size)
    if eligible.size == 0:
        raise Infeasible(f"no connected component has {size} nodes")
    start = int(eligible[rng.integers(eligible.size)])
    chosen = [start]
    members = {start}
    frontier: list[int] = []
    in_frontier: set[int] = set()
    for v in net.neighbors(start).tolist():
        frontier.append(v)
        in_frontier.add(v)
    while len(chosen) < size:
        k = int(rng.integers(len(frontier)))
        frontier[k], frontier[-1] = frontier[-1], frontier[k]
        node = frontier.pop()
        chosen.append(node)
        members.add(node)
        for v in net.neighbors(node).tolist():
            if v not in members and v not in in_frontier:
                frontier.append(v)
                in_frontier.add(v)
    return chosen


def assign_states(
    net: Network,
    seed_count: int,
    uninformed_fraction: float,
    seed: int | np.random.Generator,
) -> Network:
    """Mark a random connected set Sensitive and block part of its boundary.

    The sensitive set grows from a random start by picking uniformly from the
    current frontier. Of the non-sensitive nodes adjacent to it,
    ``round(uninformed_fraction * k)`` chosen uniformly become Uninformed;
    every other non-sensitive node is Informed.
    """
    if not 1 <= seed_count <= net.node_count:
        raise InvalidParameters(f"seed_count must be in 1..{net.node_count}")
    if not 0 <= uninformed_fraction <= 1:
        raise InvalidParameters("uninformed_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    sensitive = _connected_seed_set(net, seed_count, rng)
    states = np.full(net.node_count, NodeState.INFORMED, dtype=np.int8)
    states[sensitive] = NodeState.SENSITIVE
    boundary = np.unique(np.concatenate([net.neighbors(s) for s in sensitive]))
    boundary = boundary[states[boundary] != NodeState.SENSITIVE]
    n_block = int(np.floor(uninformed_fraction * boundary.size + 0.5))
    blocked = rng.permutation(boundary)[:n_block]
    states[blocked] = NodeState.UNINFORMED
    return net.with_states(states)


def extract_target_set(net: Network) -> TargetSet:
    """All (sensitive, uninformed neighbour) edges, in ascending node order.

    A node adjacent to several sensitive nodes contributes one entry per
    such edge. ``D`` counts every incident edge of the destination.
    """
    nodes: list[int] = []
    pairs: list[tuple[int, int]] = []
    probs: list[float] = []
    degrees = net.degrees
    for s in net.nodes_in(NodeState.SENSITIVE).tolist():
        lo, hi = net.indptr[s], net.indptr[s + 1]
        for slot in range(lo, hi):
            v = int(net.indices[slot])
            if net.states[v] == NodeState.UNINFORMED:
                nodes.append(v)
                pairs.append((s, v))
                probs.append(float(net.edge_prob[net.csr_edge[slot]]))
    if not nodes:
        raise EmptyTargetSet("no sensitive node has an uninformed neighbour")
    D = degrees[np.array(nodes)].astype(np.int64)
    return TargetSet(
        target_node_ids=_frozen(np.array(nodes, dtype=np.int64)),
        target_edges=_frozen(np.array(pairs, dtype=np.int64)),
        D=_frozen(D),
        beta0=_frozen(np.array(probs)),
        sort_permutation=_frozen(np.argsort(D, kind="stable")),
    )
