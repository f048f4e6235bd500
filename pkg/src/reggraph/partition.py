"""Balanced k-way partitioning by BFS region growing plus one refinement sweep.

This is a light stand-in for multilevel partitioners: it only has to cut the
registration graph into local batches of roughly ``NODES_PER_PART`` nodes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import DynamicHeteroGraph, NodeType, normalize_adjacency
from .models import GraphInputs
from .numerics.sparse import SparseMatrix

NODES_PER_PART = 512


class PartitionError(ValueError):
    pass


def default_k(n_nodes: int) -> int:
    return max(1, math.ceil(n_nodes / NODES_PER_PART))


def _adjacency(graph) -> sp.csr_matrix:
    if isinstance(graph, DynamicHeteroGraph):
        a = graph.adjacency("union")
    else:
        a = sp.csr_matrix(graph)
        a = ((a + a.T) > 0).astype(np.float64)
    a = sp.csr_matrix(a)
    a.setdiag(0)
    a.eliminate_zeros()
    a.sort_indices()
    return a


def edge_cut(adj: sp.csr_matrix, assignment: np.ndarray) -> int:
    coo = sp.triu(adj, k=1).tocoo()
    return int(np.count_nonzero(assignment[coo.row] != assignment[coo.col]))


@dataclass
class PartitionPlan:
    k: int
    assignment: np.ndarray
    sizes: np.ndarray
    edge_cut: int
    initial_cut: int = 0
    moves: list = field(default_factory=list)  # (node, from, to, cut_before, cut_after)

    def core(self, part_id: int) -> np.ndarray:
        if not 0 <= part_id < self.k:
            raise PartitionError(f"part id {part_id} outside 0..{self.k - 1}")
        return np.flatnonzero(self.assignment == part_id)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node_idx", "part_id"])
        w.writerows((i, int(p)) for i, p in enumerate(self.assignment))
        return buf.getvalue()

    def summary_json(self) -> str:
        return json.dumps({"k": self.k, "sizes": [int(s) for s in self.sizes], "edge_cut": self.edge_cut})


def partition(graph, k: int | None = None, balance_slack: float = 0.2, seed: int | None = None) -> PartitionPlan:
    """Split nodes into ``k`` parts of near-equal size with a small edge cut.

    Parts are grown breadth-first from the lowest-ranked unassigned node
    (ranks are the node order, or a permutation drawn from ``seed``) until
    they hold their share of the remaining nodes.  One boundary sweep then
    moves nodes that strictly reduce the cut while keeping every part within
    ``(1 +/- balance_slack) * n / k``.
    """
    adj = _adjacency(graph)
    n = adj.shape[0]
    k = default_k(n) if k is None else int(k)
    if k < 1:
        raise PartitionError("k must be at least 1")
    if k > n:
        raise PartitionError(f"k={k} exceeds the number of nodes {n}")
    if balance_slack < 0:
        raise PartitionError("balance_slack must be non-negative")

    order = np.arange(n) if seed is None else np.random.default_rng(seed).permutation(n)
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    indptr, indices = adj.indptr, adj.indices

    assignment = np.full(n, -1, dtype=np.int64)
    cursor = 0
    remaining = n
    for part in range(k):
        target = math.ceil(remaining / (k - part))
        size = 0
        queue: deque = deque()
        while size < target:
            if not queue:
                while assignment[order[cursor]] != -1:
                    cursor += 1
                start = order[cursor]
                assignment[start] = part
                size += 1
                queue.append(start)
                continue
            v = queue.popleft()
            nbrs = indices[indptr[v]:indptr[v + 1]]
            nbrs = nbrs[assignment[nbrs] == -1]
            for u in nbrs[np.argsort(rank[nbrs], kind="stable")]:
                if size >= target:
                    break
                assignment[u] = part
                size += 1
                queue.append(u)
        remaining -= size

    sizes = np.bincount(assignment, minlength=k)
    cut = edge_cut(adj, assignment)
    plan = PartitionPlan(k, assignment, sizes, cut, initial_cut=cut)
    _refine(plan, adj, balance_slack, order)
    return plan


def _refine(plan: PartitionPlan, adj: sp.csr_matrix, slack: float, order: np.ndarray):
    n, k = adj.shape[0], plan.k
    hi = max(math.ceil(n / k), math.floor((1 + slack) * n / k))
    lo = min(math.floor(n / k), math.ceil((1 - slack) * n / k))
    lo = max(lo, 1)
    a, sizes = plan.assignment, plan.sizes
    indptr, indices = adj.indptr, adj.indices
    cut = plan.edge_cut
    for v in order:
        nbrs = indices[indptr[v]:indptr[v + 1]]
        if nbrs.size == 0:
            continue
        counts = np.bincount(a[nbrs], minlength=k)
        cur = a[v]
        counts_other = counts.copy()
        counts_other[cur] = -1
        best = int(np.argmax(counts_other))
        gain = int(counts[best] - counts[cur])
        if gain <= 0 or sizes[best] + 1 > hi or sizes[cur] - 1 < lo:
            continue
        a[v] = best
        sizes[cur] -= 1
        sizes[best] += 1
        plan.moves.append((int(v), int(cur), best, cut, cut - gain))
        cut -= gain
    plan.edge_cut = cut


@dataclass
class Subgraph:
    """Induced subgraph over one part plus its halo, with local indexing.

    ``global_idx[:n_core]`` are the part's own nodes; the rest is halo.
    """

    global_idx: np.ndarray
    n_core: int
    node_types: list
    struct_edges: tuple
    time_edges: tuple

    @property
    def n_nodes(self) -> int:
        return self.global_idx.size

    def local_index(self) -> dict:
        return {int(g): i for i, g in enumerate(self.global_idx)}

    def account_local(self) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.node_types) if t is NodeType.ACCOUNT], dtype=np.int64)

    def _adj(self, edges) -> sp.csr_matrix:
        src, dst = edges
        n = self.n_nodes
        return sp.coo_matrix(
            (np.ones(2 * src.size), (np.concatenate([src, dst]), np.concatenate([dst, src]))), shape=(n, n)
        ).tocsr()

    def normalized(self, which: str) -> SparseMatrix:
        if which == "structural":
            a = self._adj(self.struct_edges)
        elif which == "temporal":
            a = self._adj(self.time_edges)
        else:
            a = self._adj(self.struct_edges) + self._adj(self.time_edges)
        return normalize_adjacency(a, self_loops=True)

    def inputs(self, features: np.ndarray, dtype=np.float64) -> GraphInputs:
        return GraphInputs(
            features=np.asarray(features[self.global_idx], dtype=dtype),
            account_idx=self.account_local(),
            a_struct=self.normalized("structural").astype(dtype),
            a_time=self.normalized("temporal").astype(dtype),
            a_union=self.normalized("union").astype(dtype),
        )

    def labels(self, node_labels: np.ndarray) -> np.ndarray:
        """Local labels; halo nodes are always unlabelled (-1)."""
        out = np.full(self.n_nodes, -1, dtype=np.int64)
        out[: self.n_core] = node_labels[self.global_idx[: self.n_core]]
        return out


def extract_subgraph(graph: DynamicHeteroGraph, plan: PartitionPlan, part_id: int, halo: int = 1) -> Subgraph:
    if halo < 0:
        raise PartitionError("halo must be non-negative")
    core = plan.core(part_id)
    adj = graph.adjacency("union")
    inside = np.zeros(graph.num_nodes, dtype=bool)
    inside[core] = True
    frontier = inside.copy()
    for _ in range(halo):
        reach = np.asarray(adj[np.flatnonzero(frontier)].sum(axis=0)).ravel() > 0
        frontier = reach & ~inside
        inside |= reach
    halo_nodes = np.flatnonzero(inside & (plan.assignment != part_id))
    global_idx = np.concatenate([core, halo_nodes]).astype(np.int64)
    local = np.full(graph.num_nodes, -1, dtype=np.int64)
    local[global_idx] = np.arange(global_idx.size)

    def induced(kind):
        src, dst = graph.edge_arrays(kind)
        keep = (local[src] >= 0) & (local[dst] >= 0)
        return local[src[keep]], local[dst[keep]]

    return Subgraph(
        global_idx=global_idx,
        n_core=core.size,
        node_types=[graph.node_types[i] for i in global_idx],
        struct_edges=induced("structural"),
        time_edges=induced("temporal"),
    )
