import json
import math

import numpy as np
import pytest
import scipy.sparse as sp

from reggraph.graph import DynamicHeteroGraph, NodeType
from reggraph.partition import (
    PartitionError,
    PartitionPlan,
    default_k,
    edge_cut,
    extract_subgraph,
    partition,
)


def random_graph(rng, n=2000, avg_deg=6):
    m = n * avg_deg // 2
    src, dst = rng.integers(0, n, m), rng.integers(0, n, m)
    keep = src != dst
    a = sp.coo_matrix((np.ones(keep.sum()), (src[keep], dst[keep])), shape=(n, n)).tocsr()
    return ((a + a.T) > 0).astype(float)


def brute_cut(a, assignment):
    coo = sp.triu(a, k=1).tocoo()
    return sum(1 for i, j in zip(coo.row, coo.col) if assignment[i] != assignment[j])


def test_default_k_rule():
    assert default_k(1) == 1 and default_k(512) == 1 and default_k(513) == 2
    assert default_k(11169 * 3) == math.ceil(11169 * 3 / 512)


def test_single_part_has_no_cut(small_built):
    plan = partition(small_built.graph, k=1)
    assert plan.edge_cut == 0 and plan.sizes.tolist() == [small_built.graph.num_nodes]


def test_default_k_applied(small_built):
    plan = partition(small_built.graph)
    assert plan.k == default_k(small_built.graph.num_nodes)


def test_two_cliques_split_cleanly():
    block = np.ones((6, 6)) - np.eye(6)
    a = sp.block_diag([block, block]).tocsr()
    plan = partition(a, k=2, balance_slack=0.0)
    assert plan.edge_cut == 0
    assert plan.sizes.tolist() == [6, 6]
    assert len(set(plan.assignment[:6])) == 1 and len(set(plan.assignment[6:])) == 1


@pytest.mark.parametrize("trial", range(20))
def test_random_graph_balance_and_cut_beats_random(trial):
    rng = np.random.default_rng(trial)
    a = random_graph(rng)
    n, k = a.shape[0], 4
    plan = partition(a, k=k, balance_slack=0.2, seed=trial)
    assert np.all(plan.sizes >= 0.8 * n / k) and np.all(plan.sizes <= 1.2 * n / k)
    assert plan.edge_cut == brute_cut(a, plan.assignment)
    assert plan.edge_cut <= edge_cut(a, rng.integers(0, k, n))


def test_refinement_moves_strictly_reduce_cut():
    rng = np.random.default_rng(3)
    a = random_graph(rng, n=1500)
    plan = partition(a, k=3, seed=1)
    assert plan.moves, "expected the sweep to find improving moves"
    cut = plan.initial_cut
    for _, src, dst, before, after in plan.moves:
        assert src != dst and before == cut and after < before
        cut = after
    assert cut == plan.edge_cut == edge_cut(a, plan.assignment)


def test_core_sets_partition_nodes(small_built):
    plan = partition(small_built.graph, k=5, seed=0)
    cores = [plan.core(p) for p in range(plan.k)]
    allnodes = np.concatenate(cores)
    assert allnodes.size == small_built.graph.num_nodes
    assert np.array_equal(np.sort(allnodes), np.arange(small_built.graph.num_nodes))


def test_errors():
    a = sp.csr_matrix(np.ones((3, 3)) - np.eye(3))
    with pytest.raises(PartitionError):
        partition(a, k=4)
    with pytest.raises(PartitionError):
        partition(a, k=0)
    plan = partition(a, k=1)
    with pytest.raises(PartitionError):
        plan.core(1)


def _phone_example():
    g = DynamicHeteroGraph(T=2, d_account=2)
    g.add_registration("a", 1, {"phone": "555"})
    g.add_registration("b", 2, {"phone": "555"})
    g.freeze()
    return g


def test_halo_brings_in_phone_but_not_its_hub():
    g = _phone_example()
    acct_a = g.account_nodes()[0]
    assignment = np.ones(g.num_nodes, dtype=np.int64)
    assignment[acct_a] = 0
    plan = PartitionPlan(2, assignment, np.bincount(assignment), 0)
    sub = extract_subgraph(g, plan, 0, halo=1)
    types = sub.node_types
    assert sub.n_core == 1 and types[0] is NodeType.ACCOUNT
    assert NodeType.PHONE in types[1:] and NodeType.HUB not in types
    labels = sub.labels(np.arange(g.num_nodes))
    assert labels[0] == acct_a and np.all(labels[1:] == -1)


def test_halo_zero_on_single_part_is_identity(small_built):
    g = small_built.graph
    sub = extract_subgraph(g, partition(g, k=1), 0, halo=0)
    assert np.array_equal(sub.global_idx, np.arange(g.num_nodes))
    a = sub.normalized("union").to_dense() if g.num_nodes < 3000 else None
    if a is not None:
        assert np.allclose(a, g.normalized_adjacency("union").to_dense())
    with pytest.raises(PartitionError):
        extract_subgraph(g, partition(g, k=1), 0, halo=-1)


def test_serialization():
    a = sp.block_diag([np.ones((3, 3)) - np.eye(3)] * 2).tocsr()
    plan = partition(a, k=2)
    lines = plan.to_csv().splitlines()
    assert lines[0] == "node_idx,part_id" and len(lines) == 7
    doc = json.loads(plan.summary_json())
    assert doc == {"k": 2, "sizes": [3, 3], "edge_cut": 0}
