"""Unrolled dynamic heterogeneous registration graph.

Accounts link to linking entities (email, address, phone, ip) that are
instantiated once per week in which they are used.  Every per-week entity
node is tied by one temporal edge to a hub node for that entity, so the
temporal part of the graph is a forest of stars.  Structural and temporal
edges share one node index space, assigned in insertion order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .numerics.sparse import SparseMatrix

FORMAT_VERSION = 1


class NodeType(str, Enum):
    ACCOUNT = "account"
    ADDRESS = "address"
    IP = "ip"
    PHONE = "phone"
    EMAIL = "email"
    HUB = "hub"


ENTITY_TYPES = (NodeType.EMAIL, NodeType.ADDRESS, NodeType.PHONE, NodeType.IP)

SUBGRAPHS = ("structural", "temporal", "union")


class GraphError(ValueError):
    pass


class DuplicateAccountError(GraphError):
    pass


class TimeStepError(GraphError):
    pass


class FrozenGraphError(GraphError):
    pass


def normalize_key(value: str) -> str:
    """Canonical entity identity: lower case, trimmed, inner whitespace collapsed."""
    return " ".join(str(value).lower().split())


@dataclass(frozen=True)
class NodeRef:
    node_type: NodeType
    key: str
    time_step: int | None = None
    t_range: tuple[int, int] | None = None
    entity: NodeType | None = None  # the linking-entity type a hub aggregates


@dataclass(frozen=True)
class EdgeRecord:
    src: int
    dst: int
    temporal: bool
    entity: NodeType

    @property
    def kind(self) -> str:
        return f"{'temporal' if self.temporal else 'structural'}:{self.entity.value}"


@dataclass
class Census:
    accounts: int = 0
    entity_nodes: dict = field(default_factory=lambda: {t.value: 0 for t in ENTITY_TYPES})
    hubs: dict = field(default_factory=lambda: {t.value: 0 for t in ENTITY_TYPES})
    structural: dict = field(default_factory=lambda: {t.value: 0 for t in ENTITY_TYPES})
    temporal: dict = field(default_factory=lambda: {t.value: 0 for t in ENTITY_TYPES})

    @property
    def total_nodes(self) -> int:
        return self.accounts + sum(self.entity_nodes.values()) + sum(self.hubs.values())

    @property
    def structural_edges(self) -> int:
        return sum(self.structural.values())

    @property
    def temporal_edges(self) -> int:
        return sum(self.temporal.values())

    @property
    def total_edges(self) -> int:
        return self.structural_edges + self.temporal_edges

    def rows(self) -> list[tuple[str, int]]:
        out = [("nodes.account", self.accounts)]
        out += [(f"nodes.{k}", v) for k, v in self.entity_nodes.items()]
        out += [(f"nodes.hub.{k}", v) for k, v in self.hubs.items()]
        out += [(f"edges.structural.{k}", v) for k, v in self.structural.items()]
        out += [(f"edges.temporal.{k}", v) for k, v in self.temporal.items()]
        out += [("nodes.total", self.total_nodes), ("edges.total", self.total_edges)]
        return out


class DynamicHeteroGraph:
    """Mutable until :meth:`freeze`; read-only (and shareable) afterwards."""

    def __init__(self, T: int, d_account: int = 0):
        if T < 1:
            raise GraphError("T must be at least 1")
        self.T = int(T)
        self.d_account = int(d_account)
        self.node_types: list[NodeType] = []
        self.node_keys: list[str] = []
        self.node_time: list[int] = []  # 0 for hubs
        self.hub_entity: dict[int, NodeType] = {}
        self.hub_range: dict[int, list[int]] = {}
        self.edge_src: list[int] = []
        self.edge_dst: list[int] = []
        self.edge_temporal: list[bool] = []
        self.edge_entity: list[NodeType] = []
        self.account_index: dict[str, int] = {}
        self.node_index: dict[tuple[NodeType, str, int], int] = {}
        self.hub_index: dict[tuple[NodeType, str], int] = {}
        self.frozen = False
        self._adj_cache: dict = {}

    # construction -------------------------------------------------------

    def _new_node(self, node_type, key, t) -> int:
        idx = len(self.node_types)
        self.node_types.append(node_type)
        self.node_keys.append(key)
        self.node_time.append(t)
        return idx

    def _new_edge(self, src, dst, temporal, entity):
        self.edge_src.append(src)
        self.edge_dst.append(dst)
        self.edge_temporal.append(temporal)
        self.edge_entity.append(entity)

    def add_registration(self, account_id: str, time_step: int, entities: dict) -> int:
        """Insert one account and link it to its entities at ``time_step``.

        ``entities`` maps a linking-entity type (NodeType or its string value)
        to a raw key; empty or missing values are skipped.  Returns the index
        of the new account node.
        """
        if self.frozen:
            raise FrozenGraphError("graph is frozen")
        if account_id in self.account_index:
            raise DuplicateAccountError(f"duplicate account id {account_id!r}")
        if not isinstance(time_step, (int, np.integer)) or not 1 <= time_step <= self.T:
            raise TimeStepError(f"time step {time_step!r} outside 1..{self.T} for {account_id!r}")
        time_step = int(time_step)
        links = []
        for etype in ENTITY_TYPES:
            raw = entities.get(etype, entities.get(etype.value))
            if raw is None:
                continue
            key = normalize_key(raw)
            if key:
                links.append((etype, key))
        if not links:
            raise GraphError(f"account {account_id!r} has no linking entity")

        acct = self._new_node(NodeType.ACCOUNT, account_id, time_step)
        self.account_index[account_id] = acct
        for etype, key in links:
            node = self.node_index.get((etype, key, time_step))
            if node is None:
                node = self._new_node(etype, key, time_step)
                self.node_index[(etype, key, time_step)] = node
                hub = self.hub_index.get((etype, key))
                if hub is None:
                    hub = self._new_node(NodeType.HUB, key, 0)
                    self.hub_index[(etype, key)] = hub
                    self.hub_entity[hub] = etype
                    self.hub_range[hub] = [time_step, time_step]
                else:
                    rng = self.hub_range[hub]
                    rng[0] = min(rng[0], time_step)
                    rng[1] = max(rng[1], time_step)
                self._new_edge(node, hub, True, etype)
            self._new_edge(acct, node, False, etype)
        return acct

    def freeze(self) -> "DynamicHeteroGraph":
        """Build the adjacency caches and forbid further mutation."""
        self.frozen = True
        for kind in SUBGRAPHS:
            self.normalized_adjacency(kind, self_loops=True)
        return self

    # queries ------------------------------------------------------------

    @property
    def num_nodes(self) -> int:
        return len(self.node_types)

    @property
    def num_edges(self) -> int:
        return len(self.edge_src)

    def node(self, idx: int) -> NodeRef:
        ntype = self.node_types[idx]
        if ntype is NodeType.HUB:
            return NodeRef(ntype, self.node_keys[idx], None, tuple(self.hub_range[idx]), self.hub_entity[idx])
        return NodeRef(ntype, self.node_keys[idx], self.node_time[idx])

    def edge(self, i: int) -> EdgeRecord:
        return EdgeRecord(self.edge_src[i], self.edge_dst[i], self.edge_temporal[i], self.edge_entity[i])

    def edges(self):
        for i in range(self.num_edges):
            yield self.edge(i)

    def account_nodes(self) -> np.ndarray:
        return np.array([i for i, t in enumerate(self.node_types) if t is NodeType.ACCOUNT], dtype=np.int64)

    def time_steps(self) -> np.ndarray:
        """Per-node week index; hubs report 0."""
        return np.asarray(self.node_time, dtype=np.int64)

    def census(self) -> Census:
        c = Census()
        for idx, ntype in enumerate(self.node_types):
            if ntype is NodeType.ACCOUNT:
                c.accounts += 1
            elif ntype is NodeType.HUB:
                c.hubs[self.hub_entity[idx].value] += 1
            else:
                c.entity_nodes[ntype.value] += 1
        for temporal, entity in zip(self.edge_temporal, self.edge_entity):
            (c.temporal if temporal else c.structural)[entity.value] += 1
        return c

    def edge_arrays(self, subgraph: str = "union") -> tuple[np.ndarray, np.ndarray]:
        if subgraph not in SUBGRAPHS:
            raise GraphError(f"unknown subgraph {subgraph!r}")
        src = np.asarray(self.edge_src, dtype=np.int64)
        dst = np.asarray(self.edge_dst, dtype=np.int64)
        if subgraph == "union":
            return src, dst
        temporal = np.asarray(self.edge_temporal, dtype=bool)
        sel = temporal if subgraph == "temporal" else ~temporal
        return src[sel], dst[sel]

    def adjacency(self, subgraph: str = "union") -> sp.csr_matrix:
        """Symmetric 0/1 adjacency of the chosen edge kind."""
        src, dst = self.edge_arrays(subgraph)
        n = self.num_nodes
        a = sp.coo_matrix(
            (np.ones(2 * src.size), (np.concatenate([src, dst]), np.concatenate([dst, src]))),
            shape=(n, n),
        ).tocsr()
        a.sum_duplicates()
        a.data[:] = 1.0
        return a

    def normalized_adjacency(self, subgraph: str = "structural", self_loops: bool = True) -> SparseMatrix:
        key = (subgraph, self_loops)
        cached = self._adj_cache.get(key)
        if cached is not None:
            return cached
        out = normalize_adjacency(self.adjacency(subgraph), self_loops)
        if self.frozen:
            self._adj_cache[key] = out
        return out

    def entity_key(self, idx: int) -> tuple:
        """Index-free identity of a node (stable across rebuilds)."""
        ntype = self.node_types[idx]
        if ntype is NodeType.HUB:
            return ("hub", self.hub_entity[idx].value, self.node_keys[idx])
        return (ntype.value, self.node_keys[idx], self.node_time[idx])

    def keyed_edges(self, subgraph: str = "union") -> list[tuple]:
        src, dst = self.edge_arrays(subgraph)
        return sorted((self.entity_key(int(s)), self.entity_key(int(d))) for s, d in zip(src, dst))

    def snapshot_edges(self, t: int) -> list[tuple]:
        """Structural edges of week ``t``, keyed by identity rather than index."""
        src, dst = self.edge_arrays("structural")
        times = self.time_steps()
        return sorted(
            (self.entity_key(int(s)), self.entity_key(int(d)))
            for s, d in zip(src, dst)
            if times[s] == t
        )

    # serialization -----------------------------------------------------

    def to_jsonl(self) -> str:
        lines = [json.dumps({"version": FORMAT_VERSION, "T": self.T, "d_account": self.d_account})]
        for idx, ntype in enumerate(self.node_types):
            if ntype is NodeType.HUB:
                rec = {"idx": idx, "type": "hub", "entity": self.hub_entity[idx].value,
                       "key": self.node_keys[idx], "t_range": list(self.hub_range[idx])}
            else:
                rec = {"idx": idx, "type": ntype.value, "key": self.node_keys[idx], "t": self.node_time[idx]}
            lines.append(json.dumps(rec))
        for i in range(self.num_edges):
            lines.append(json.dumps({"src": self.edge_src[i], "dst": self.edge_dst[i], "kind": self.edge(i).kind}))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "DynamicHeteroGraph":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise GraphError("empty graph file")
        header = json.loads(lines[0])
        if header.get("version") != FORMAT_VERSION:
            raise GraphError(f"unsupported graph format version {header.get('version')!r}")
        g = cls(header["T"], header.get("d_account", 0))
        for ln in lines[1:]:
            rec = json.loads(ln)
            if "idx" in rec:
                if rec["idx"] != g.num_nodes:
                    raise GraphError(f"node index {rec['idx']} out of order")
                ntype = NodeType(rec["type"])
                if ntype is NodeType.HUB:
                    etype = NodeType(rec["entity"])
                    idx = g._new_node(ntype, rec["key"], 0)
                    g.hub_entity[idx] = etype
                    g.hub_range[idx] = [int(x) for x in rec["t_range"]]
                    g.hub_index[(etype, rec["key"])] = idx
                else:
                    idx = g._new_node(ntype, rec["key"], int(rec["t"]))
                    if ntype is NodeType.ACCOUNT:
                        g.account_index[rec["key"]] = idx
                    else:
                        g.node_index[(ntype, rec["key"], int(rec["t"]))] = idx
            else:
                family, entity = rec["kind"].split(":")
                g._new_edge(int(rec["src"]), int(rec["dst"]), family == "temporal", NodeType(entity))
        return g

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "DynamicHeteroGraph":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def normalize_adjacency(a, self_loops: bool = True) -> SparseMatrix:
    """Symmetric normalisation ``D^-1/2 (A [+ I]) D^-1/2``.

    With self-loops an isolated node gets weight 1 on itself; without them
    its row stays empty.
    """
    a = sp.csr_matrix(a, dtype=np.float64)
    n = a.shape[0]
    if self_loops:
        a = a + sp.identity(n, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    with np.errstate(divide="ignore"):
        inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(deg), 0.0)
    d = sp.diags(inv_sqrt)
    out = (d @ a @ d).tocsr()
    out.eliminate_zeros()
    return SparseMatrix.from_scipy(out)


@dataclass
class FeatureTable:
    """Dense node features; rows of non-account nodes start at zero."""

    values: np.ndarray

    @classmethod
    def zeros(cls, n_nodes: int, d: int, dtype=np.float64) -> "FeatureTable":
        return cls(np.zeros((n_nodes, d), dtype=dtype))

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class LabelTable:
    """Per-node labels: 0 benign, 1 suspicious, -1 unknown or not an account."""

    labels: np.ndarray

    @property
    def labeled(self) -> np.ndarray:
        return self.labels >= 0


def validate(graph: DynamicHeteroGraph) -> list[str]:
    """Check the structural invariants; returns a list of violations (empty if valid)."""
    problems = []
    types = graph.node_types
    times = graph.node_time
    temporal_deg = np.zeros(graph.num_nodes, dtype=np.int64)
    hub_times: dict[int, list[int]] = {}
    for e in graph.edges():
        s, d = e.src, e.dst
        if e.temporal:
            if types[s] not in ENTITY_TYPES or types[d] is not NodeType.HUB:
                problems.append(f"temporal edge {s}-{d} must join an entity node to a hub")
                continue
            if graph.hub_entity[d] is not types[s] or graph.node_keys[d] != graph.node_keys[s]:
                problems.append(f"temporal edge {s}-{d} joins different entities")
            temporal_deg[s] += 1
            hub_times.setdefault(d, []).append(times[s])
        else:
            ends = {types[s], types[d]}
            if NodeType.ACCOUNT not in ends or NodeType.HUB in ends or len(ends) != 2:
                problems.append(f"structural edge {s}-{d} is not account-entity")
            elif times[s] != times[d]:
                problems.append(f"structural edge {s}-{d} crosses time steps")
    for idx, ntype in enumerate(types):
        if ntype in ENTITY_TYPES and temporal_deg[idx] != 1:
            problems.append(f"entity node {idx} has temporal degree {temporal_deg[idx]}")
    for hub, ts in hub_times.items():
        if len(set(ts)) != len(ts):
            problems.append(f"hub {hub} has repeated time steps")
        if [min(ts), max(ts)] != graph.hub_range[hub]:
            problems.append(f"hub {hub} range {graph.hub_range[hub]} does not match {ts}")
    return problems
