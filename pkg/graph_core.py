"""
Graph representation and combinatorial oracles.
Simple undirected graphs, node permutations, k-hop subgraphs,
1-WL color refinement and brute-force isomorphism for small graphs.
"""
import itertools
import logging
from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from errors import GraphError

logger = logging.getLogger(__name__)

# 8! = 40320 permutations; anything larger goes through WL instead
MAX_BRUTEFORCE_NODES = 8


@dataclass(frozen=True, eq=False)
class Graph:
    """Simple undirected graph. Build it with build_graph()."""
    node_count: int
    edges: FrozenSet[Tuple[int, int]]  # (i, j) with i < j
    adjacency: Tuple[Tuple[int, ...], ...]  # sorted neighbor lists
    degrees: np.ndarray  # int64, read-only

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self.node_count == other.node_count and self.edges == other.edges

    def __hash__(self) -> int:
        return hash((self.node_count, self.edges))

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def sorted_edges(self) -> List[Tuple[int, int]]:
        return sorted(self.edges)

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    @cached_property
    def adjacency_matrix(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency matrix A."""
        n = self.node_count
        if not self.edges:
            return sp.csr_matrix((n, n), dtype=np.float64)
        pairs = np.array(self.sorted_edges(), dtype=np.int64)
        rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
        cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
        data = np.ones(len(rows), dtype=np.float64)
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    @cached_property
    def gin_operator(self) -> sp.csr_matrix:
        """A + I: self term plus plain neighbor sum."""
        return (self.adjacency_matrix + sp.identity(self.node_count, format="csr")).tocsr()

    @cached_property
    def gcn_operator(self) -> sp.csr_matrix:
        """D̃^-1/2 (A + I) D̃^-1/2 with D̃ = D + I."""
        inv_sqrt = 1.0 / np.sqrt(self.degrees.astype(np.float64) + 1.0)
        scale = sp.diags(inv_sqrt)
        return (scale @ self.gin_operator @ scale).tocsr()

    @cached_property
    def mean_operator(self) -> sp.csr_matrix:
        """(D + I)^-1 (A + I): average over the closed neighborhood."""
        inv = 1.0 / (self.degrees.astype(np.float64) + 1.0)
        return (sp.diags(inv) @ self.gin_operator).tocsr()


@dataclass(frozen=True)
class Permutation:
    """Node relabeling: node i becomes node mapping[i]."""
    mapping: Tuple[int, ...]

    def __post_init__(self):
        if sorted(self.mapping) != list(range(len(self.mapping))):
            raise GraphError(f"Not a permutation of 0..{len(self.mapping) - 1}: {list(self.mapping)}")

    def __len__(self) -> int:
        return len(self.mapping)

    def __getitem__(self, i: int) -> int:
        return self.mapping[i]

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(tuple(range(n)))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(tuple(int(v) for v in rng.permutation(n)))

    def inverse(self) -> "Permutation":
        inv = [0] * len(self.mapping)
        for i, target in enumerate(self.mapping):
            inv[target] = i
        return Permutation(tuple(inv))

    def apply_rows(self, x: np.ndarray) -> np.ndarray:
        """P·x: row i of x moves to row mapping[i]."""
        x = np.asarray(x)
        if x.shape[0] != len(self.mapping):
            raise GraphError(
                f"Permutation of size {len(self.mapping)} cannot reorder {x.shape[0]} rows"
            )
        out = np.empty_like(x)
        out[np.asarray(self.mapping, dtype=np.int64)] = x
        return out


@dataclass(frozen=True)
class WlColoring:
    """Result of 1-WL color refinement."""
    colors: Tuple[int, ...]
    rounds: int

    def partition(self) -> List[List[int]]:
        return wl_partition(self)


def build_graph(node_count: int, edge_list: Iterable[Sequence[int]]) -> Graph:
    """
    Build a simple undirected graph.

    Args:
        node_count: Number of nodes
        edge_list: Index pairs; each unordered pair may appear once

    Returns:
        Graph with sorted adjacency lists

    Raises:
        GraphError: Negative node count, out-of-range index, self-loop or duplicate edge
    """
    if node_count < 0:
        raise GraphError(f"node_count must be non-negative, got {node_count}")

    edges = set()
    neighbors: List[List[int]] = [[] for _ in range(node_count)]
    for pair in edge_list:
        i, j = int(pair[0]), int(pair[1])
        if not (0 <= i < node_count and 0 <= j < node_count):
            raise GraphError(f"Edge ({i}, {j}) has an index outside 0..{node_count - 1}")
        if i == j:
            raise GraphError(f"Self-loop ({i}, {j}) is not allowed")
        key = (min(i, j), max(i, j))
        if key in edges:
            raise GraphError(f"Duplicate edge ({i}, {j})")
        edges.add(key)
        neighbors[i].append(j)
        neighbors[j].append(i)

    adjacency = tuple(tuple(sorted(nbrs)) for nbrs in neighbors)
    degrees = np.array([len(nbrs) for nbrs in adjacency], dtype=np.int64)
    degrees.setflags(write=False)
    return Graph(
        node_count=node_count,
        edges=frozenset(edges),
        adjacency=adjacency,
        degrees=degrees,
    )


def path_graph(n: int) -> Graph:
    return build_graph(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(n: int) -> Graph:
    """Node 0 joined to nodes 1..n-1."""
    return build_graph(n, [(0, i) for i in range(1, n)])


def complete_graph(n: int) -> Graph:
    return build_graph(n, itertools.combinations(range(n), 2))


def erdos_renyi_graph(n: int, p: float, seed: int) -> Graph:
    """G(n, p) random graph; deterministic for a given seed."""
    rng = np.random.default_rng(seed)
    pairs = list(itertools.combinations(range(n), 2))
    keep = rng.random(len(pairs)) < p
    return build_graph(n, [pair for pair, k in zip(pairs, keep) if k])


def disjoint_union(graphs: Sequence[Graph]) -> Tuple[Graph, np.ndarray]:
    """
    Place graphs side by side as one graph.

    Returns:
        (union, offsets) where graph k occupies nodes offsets[k]:offsets[k + 1]
    """
    offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
    edges: List[Tuple[int, int]] = []
    for k, g in enumerate(graphs):
        base = int(offsets[k])
        edges.extend((base + i, base + j) for i, j in g.sorted_edges())
        offsets[k + 1] = base + g.node_count
    return build_graph(int(offsets[-1]), edges), offsets


def permute_graph(g: Graph, p: Permutation) -> Graph:
    """
    Relabel nodes: edge (i, j) becomes (p[i], p[j]).

    Raises:
        GraphError: Permutation size differs from node count
    """
    if len(p) != g.node_count:
        raise GraphError(
            f"Permutation size {len(p)} does not match node count {g.node_count}"
        )
    return build_graph(g.node_count, [(p[i], p[j]) for i, j in g.sorted_edges()])


def k_hop_subgraph(
    g: Graph, seeds: Iterable[int], k: int
) -> Tuple[Graph, Tuple[int, ...]]:
    """
    Node-induced subgraph on every node within distance k of a seed.

    Args:
        g: Source graph
        seeds: Nonempty set of seed node indices
        k: Hop count (>= 1)

    Returns:
        (subgraph, node_map) where node_map[new_index] = original index
    """
    seed_set = sorted(set(int(s) for s in seeds))
    if not seed_set:
        raise GraphError("k_hop_subgraph needs at least one seed node")
    if k < 1:
        raise GraphError(f"k must be >= 1, got {k}")
    for s in seed_set:
        if not 0 <= s < g.node_count:
            raise GraphError(f"Seed {s} outside 0..{g.node_count - 1}")

    distance: Dict[int, int] = {s: 0 for s in seed_set}
    queue = deque(seed_set)
    while queue:
        u = queue.popleft()
        if distance[u] == k:
            continue
        for v in g.adjacency[u]:
            if v not in distance:
                distance[v] = distance[u] + 1
                queue.append(v)

    node_map = tuple(sorted(distance))
    new_index = {old: new for new, old in enumerate(node_map)}
    sub_edges = [
        (new_index[i], new_index[j])
        for i, j in g.sorted_edges()
        if i in new_index and j in new_index
    ]
    return build_graph(len(node_map), sub_edges), node_map


def _canonicalize(signatures: Sequence) -> Tuple[int, ...]:
    """Relabel arbitrary hashable signatures as 0, 1, ... in first-occurrence order."""
    ids: Dict = {}
    return tuple(ids.setdefault(sig, len(ids)) for sig in signatures)


def wl_refine(
    g: Graph, initial_colors: Optional[Sequence[int]] = None, rounds: int = 1
) -> WlColoring:
    """
    1-WL color refinement.

    Each round recolors node i by (color[i], sorted neighbor colors) and
    canonicalizes ids in first-occurrence order.

    Args:
        g: Graph to refine
        initial_colors: Starting colors (uniform when None)
        rounds: Number of refinement rounds (>= 0)

    Returns:
        WlColoring after the requested number of rounds
    """
    if initial_colors is None:
        initial_colors = [0] * g.node_count
    if len(initial_colors) != g.node_count:
        raise GraphError(
            f"initial_colors has length {len(initial_colors)}, graph has {g.node_count} nodes"
        )
    if rounds < 0:
        raise GraphError(f"rounds must be >= 0, got {rounds}")

    colors = _canonicalize([int(c) for c in initial_colors])
    for _ in range(rounds):
        colors = _canonicalize([
            (colors[i], tuple(sorted(colors[j] for j in g.adjacency[i])))
            for i in range(g.node_count)
        ])
    return WlColoring(colors=colors, rounds=rounds)


def wl_partition(coloring: WlColoring) -> List[List[int]]:
    """Color classes as sorted node lists, ordered by color id."""
    classes: Dict[int, List[int]] = {}
    for node, color in enumerate(coloring.colors):
        classes.setdefault(color, []).append(node)
    return [classes[c] for c in sorted(classes)]


def wl_graph_histograms(graphs: Sequence[Graph], rounds: int) -> List[Tuple[int, ...]]:
    """
    Graph-level WL signatures comparable across a collection of graphs.

    Colors are canonicalized jointly over all graphs each round, so two graphs
    get equal sorted color histograms iff 1-WL cannot tell them apart within
    `rounds` rounds.
    """
    labels = [[0] * g.node_count for g in graphs]
    for _ in range(rounds):
        ids: Dict = {}
        labels = [
            [
                ids.setdefault(
                    (colors[i], tuple(sorted(colors[j] for j in g.adjacency[i]))), len(ids)
                )
                for i in range(g.node_count)
            ]
            for g, colors in zip(graphs, labels)
        ]
    return [tuple(sorted(colors)) for colors in labels]


def _check_bruteforce_size(g: Graph) -> None:
    if g.node_count > MAX_BRUTEFORCE_NODES:
        raise GraphError(
            f"Brute-force search limited to {MAX_BRUTEFORCE_NODES} nodes, got {g.node_count}"
        )


def _mapping_preserves_edges(g1: Graph, g2: Graph, mapping: Sequence[int]) -> bool:
    return all((min(mapping[i], mapping[j]), max(mapping[i], mapping[j])) in g2.edges
               for i, j in g1.edges)


def is_isomorphic_bruteforce(g1: Graph, g2: Graph) -> bool:
    """
    Exhaustive isomorphism test for graphs with at most 8 nodes.

    Returns:
        True iff some permutation maps g1's edge set onto g2's
    """
    _check_bruteforce_size(g1)
    _check_bruteforce_size(g2)
    if g1.node_count != g2.node_count or g1.edge_count != g2.edge_count:
        return False
    if sorted(g1.degrees.tolist()) != sorted(g2.degrees.tolist()):
        return False

    for mapping in itertools.permutations(range(g1.node_count)):
        # degree-preserving candidates only
        if any(g1.degrees[i] != g2.degrees[mapping[i]] for i in range(g1.node_count)):
            continue
        if _mapping_preserves_edges(g1, g2, mapping):
            return True
    return False


def automorphisms(g: Graph) -> List[Permutation]:
    """All automorphisms of a graph with at most 8 nodes."""
    _check_bruteforce_size(g)
    found = []
    for mapping in itertools.permutations(range(g.node_count)):
        if any(g.degrees[i] != g.degrees[mapping[i]] for i in range(g.node_count)):
            continue
        if _mapping_preserves_edges(g, g, mapping):
            found.append(Permutation(tuple(mapping)))
    return found
