"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s``.  The trend test
trains three models on five desk-scale datasets and takes several minutes.
"""
import csv
import json
import math
import subprocess
import sys
import time
import zlib
from collections import Counter

import numpy as np
import pytest
import scipy.sparse as sp

from reggraph.evaluation import TrainConfig, average_precision, bench, train
from reggraph.graph import ENTITY_TYPES, NodeType, normalize_adjacency, validate
from reggraph.ingest import TimeWindowing, build_graph
from reggraph.models import GraphInputs, ModelConfig, build_model, gcn_conv
from reggraph.numerics import ops
from reggraph.numerics.autodiff import Tensor
from reggraph.numerics.sparse import SparseMatrix
from reggraph.partition import default_k, edge_cut, partition
from reggraph.synthgen import CENSUS_ACCOUNTS, CENSUS_NODES, GeneratorConfig, generate

from tests.oracles import (
    brute_force_ap,
    dense_adjacencies,
    dense_forward,
    dense_gat_layer,
    dense_gcn_conv,
    dense_norm_adj,
    gradcheck,
    perturb,
    random_edges,
    random_registration_graph,
    tensor,
)

KINDS = ("mlp", "gcn", "gat", "dhgreg")

# reference benchmark: desk-scale data, best grid cell, narrowed hidden width
REFERENCE_MODEL = dict(n_layer=4, dropout=0.1, n_hid=64)
TREND_SEEDS = (0, 1, 2, 3, 4)


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def reference_graph(seed=0):
    cfg = GeneratorConfig(seed=seed)
    return build_graph(generate(cfg), TimeWindowing(cfg.origin), T_max=cfg.T)


# 1 ----------------------------------------------------------------------

def _projection(rng, out):
    """Random scalar readout so every output entry gets a distinct weight."""
    r = Tensor(rng.normal(size=(out.data.shape[1], 1)))
    return ops.sum_all(ops.matmul(out, r))


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _op_cases():
    """name -> builder(rng) returning (loss_fn, {name: tensor})."""

    def spmm(rng):
        a = SparseMatrix.from_scipy(sp.random(9, 7, density=0.4, random_state=rng, format="csr"))
        x = tensor(rng.normal(size=(7, 4)))
        return (lambda: _projection(np.random.default_rng(1), ops.spmm(a, x))), {"x": x}

    def linear(rng):
        x, w, b = tensor(rng.normal(size=(6, 5))), tensor(rng.normal(size=(5, 3))), tensor(rng.normal(size=3))
        return (lambda: _projection(np.random.default_rng(1), ops.linear(x, w, b))), {"x": x, "w": w, "b": b}

    def relu(rng):
        x = tensor(_away_from_zero(rng, (6, 4)))
        return (lambda: _projection(np.random.default_rng(1), ops.relu(x))), {"x": x}

    def dropout(rng):
        x = tensor(rng.normal(size=(8, 4)))
        return (lambda: _projection(np.random.default_rng(1),
                                    ops.dropout(x, 0.3, True, np.random.default_rng(2)))), {"x": x}

    def layer_norm(rng):
        x, g, b = tensor(rng.normal(size=(5, 6))), tensor(rng.normal(size=6)), tensor(rng.normal(size=6))
        return (lambda: _projection(np.random.default_rng(1), ops.layer_norm(x, g, b))), {"x": x, "g": g, "b": b}

    def take_rows(rng):
        x = tensor(rng.normal(size=(7, 3)))
        idx = rng.integers(0, 7, size=9)
        return (lambda: _projection(np.random.default_rng(1), ops.take_rows(x, idx))), {"x": x}

    def add(rng):
        x, y = tensor(rng.normal(size=(4, 3))), tensor(rng.normal(size=(4, 3)))
        return (lambda: _projection(np.random.default_rng(1), ops.add(x, y))), {"x": x, "y": y}

    def cross_entropy(rng):
        z = tensor(rng.normal(size=(10, 2)))
        y = rng.integers(0, 2, 10)
        mask = rng.random(10) < 0.7
        mask[0] = True
        return (lambda: ops.softmax_cross_entropy(z, y, mask)), {"z": z}

    def gat_attention(rng):
        n, heads, f = 7, 2, 3
        a = normalize_adjacency(sp.csr_matrix(np.triu(rng.random((n, n)) < 0.4, 1) * 1.0 +
                                              np.triu(rng.random((n, n)) < 0.4, 1).T * 1.0))
        z, s, d = tensor(rng.normal(size=(n, heads * f))), tensor(rng.normal(size=(heads, f))), \
            tensor(rng.normal(size=(heads, f)))
        concat = bool(rng.integers(2))
        return (lambda: _projection(np.random.default_rng(1), ops.gat_attention(z, s, d, a, heads, concat))), \
            {"z": z, "a_src": s, "a_dst": d}

    def conv(rng):
        n = 8
        raw = np.zeros((n, n))
        for i, j in random_edges(rng, n, 0.3):
            raw[i, j] = raw[j, i] = 1
        a = normalize_adjacency(raw)
        x, w = tensor(rng.normal(size=(n, 4))), tensor(rng.normal(size=(4, 5)))
        g, b = tensor(rng.normal(size=5)), tensor(rng.normal(size=5))
        return (lambda: _projection(np.random.default_rng(1), gcn_conv(a, x, w, g, b))), \
            {"x": x, "w": w, "gain": g, "bias": b}

    return {f.__name__: f for f in (spmm, linear, relu, dropout, layer_norm, take_rows, add, cross_entropy,
                                     gat_attention, conv)}


def _model_case(kind):
    def build(rng):
        g, x, labels = random_registration_graph(rng, n_accounts=int(rng.integers(3, 7)))
        cfg = ModelConfig(model_kind=kind, n_layer=4, n_hid=16, dropout=0.1, d_in=x.shape[1])
        model = perturb(build_model(cfg, seed=int(rng.integers(1 << 30))), rng)
        inputs = GraphInputs.from_graph(g, x)
        y = labels[inputs.account_idx]
        drop_seed = int(rng.integers(1 << 30))

        def loss():
            out = model.forward(inputs, training=True, rng=np.random.default_rng(drop_seed))
            return ops.softmax_cross_entropy(out.logits, y)

        return loss, model.params
    return build


def test_criterion_1_gradient_correctness(capsys):
    cases = dict(_op_cases())
    cases.update({f"model:{k}": _model_case(k) for k in KINDS})
    trials, worst = 20, {}
    start = time.perf_counter()
    for name, build in cases.items():
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        worst[name] = 0.0
        for _ in range(trials):
            loss, tensors = build(rng)
            errs = gradcheck(loss, tensors, rng=rng, max_coords=3 if name.startswith("model") else 12, h=1e-6)
            worst[name] = max(worst[name], max(errs.values()))
    elapsed = time.perf_counter() - start
    bad = {k: v for k, v in worst.items() if not v < 1e-4}
    ok = not bad and elapsed < 60
    verdict(capsys, 1, ok, f"{len(cases)} ops/models x {trials} trials, worst rel err "
                           f"{max(worst.values()):.2e} (limit 1e-4), {elapsed:.1f}s (limit 60s)"
                           + (f", failing {bad}" if bad else ""))


# 2 ----------------------------------------------------------------------

def test_criterion_2_sparse_dense_oracles(capsys):
    trials, worst = 50, Counter()
    rng = np.random.default_rng(2024)
    for t in range(trials):
        # gcn_conv on an arbitrary graph of up to 64 nodes
        n = int(rng.integers(1, 65))
        edges = random_edges(rng, n, float(rng.uniform(0, 0.3)))
        a_dense = dense_norm_adj(n, edges)
        raw = np.zeros((n, n))
        for i, j in edges:
            raw[i, j] = raw[j, i] = 1
        a = normalize_adjacency(raw)
        x, w = rng.normal(size=(n, 6)), rng.normal(size=(6, 4))
        g, b = rng.normal(size=4), rng.normal(size=4)
        got = gcn_conv(a, Tensor(x), Tensor(w), Tensor(g), Tensor(b)).data
        worst["gcn_conv"] = max(worst["gcn_conv"], np.max(np.abs(got - dense_gcn_conv(a_dense, x, w, g, b))))

        # one attention layer, both head policies
        heads = 4
        z = rng.normal(size=(n, 6))
        w_att = rng.normal(size=(6, heads * 3))
        s, d = rng.normal(size=(heads, 3)), rng.normal(size=(heads, 3))
        concat = bool(t % 2)
        got = ops.gat_attention(Tensor(z @ w_att), Tensor(s), Tensor(d), a, heads, concat).data
        want = dense_gat_layer(a_dense != 0, z, w_att, s, d, heads, concat)
        worst["gat_layer"] = max(worst["gat_layer"], np.max(np.abs(got - want)))

        # full forwards on a registration graph
        graph, feats, _ = random_registration_graph(rng)
        a_s, a_t, a_u = dense_adjacencies(graph)
        inputs = GraphInputs.from_graph(graph, feats)
        for kind in ("gcn", "dhgreg"):
            cfg = ModelConfig(model_kind=kind, n_layer=int(rng.choice([2, 4])), n_hid=8, d_in=feats.shape[1])
            model = perturb(build_model(cfg, seed=t), rng)
            got = model.forward(inputs).logits.data
            want = dense_forward(kind, model.state_dict(), cfg.n_layer, feats, graph.account_nodes(), a_s, a_t, a_u)
            worst[f"{kind}_forward"] = max(worst[f"{kind}_forward"], np.max(np.abs(got - want)))
    ok = all(v < 1e-10 for v in worst.values())
    detail = ", ".join(f"{k} {v:.1e}" for k, v in sorted(worst.items()))
    verdict(capsys, 2, ok, f"{trials} trials each on graphs <= 64 nodes, max abs diff: {detail} (limit 1e-10)")


# 3 ----------------------------------------------------------------------

def test_criterion_3_average_precision_oracle(capsys):
    rng = np.random.default_rng(3)
    worst = 0.0
    for t in range(100):
        n = int(rng.integers(1, 300))
        scores = rng.integers(0, 6, n).astype(float) if t % 3 == 0 else rng.normal(size=n)
        labels = (rng.random(n) < rng.uniform(0.05, 0.9)).astype(int)
        labels[rng.integers(n)] = 1
        worst = max(worst, abs(average_precision(scores, labels) - brute_force_ap(scores, labels)))
    hand = average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 0])
    ok = worst < 1e-12 and abs(hand - 5 / 6) < 1e-12
    verdict(capsys, 3, ok, f"100 random instances, max diff vs brute force {worst:.1e}; hand case {hand:.6f}")


# 4 ----------------------------------------------------------------------

def _snapshot_consistent(graph, records, win, T):
    by_week = {}
    for r in records:
        by_week.setdefault(win.time_step(r.timestamp), []).append(r)
    for t in range(1, T + 1):
        snap = build_graph(by_week.get(t, []), win, T_max=T).graph if t in by_week else None
        want = snap.snapshot_edges(t) if snap is not None else []
        if graph.snapshot_edges(t) != want:
            return False
    return True


def test_criterion_4_graph_invariants(capsys):
    failures, worst_dev = [], 0.0
    for seed in range(10):
        cfg = GeneratorConfig(seed=seed)
        records = generate(cfg)
        win = TimeWindowing(cfg.origin)
        g = build_graph(records, win, T_max=cfg.T).graph
        problems = validate(g)  # bipartite structural edges, stars, time locality, hub ranges
        c = g.census()
        types = Counter(t.value if t is not NodeType.HUB else "hub." + g.hub_entity[i].value
                        for i, t in enumerate(g.node_types))
        additive = (c.total_nodes == g.num_nodes == sum(types.values())
                    and c.structural_edges + c.temporal_edges == g.num_edges
                    and all(c.hubs[t.value] == types["hub." + t.value] for t in ENTITY_TYPES))
        unrolled = _snapshot_consistent(g, records, win, cfg.T)
        scale = cfg.n_accounts / CENSUS_ACCOUNTS
        devs = {t: abs(c.hubs[t] - n * scale) / (n * scale) for t, n in CENSUS_NODES.items()}
        worst_dev = max(worst_dev, max(devs.values()))
        if problems or not additive or not unrolled or max(devs.values()) > 0.15:
            failures.append((seed, problems[:3], additive, unrolled, devs))
    ok = not failures
    verdict(capsys, 4, ok, f"10 seeds x {GeneratorConfig().n_accounts} accounts, T=16: invariants hold on "
                           f"{10 - len(failures)}/10, worst census deviation {worst_dev:.1%} (limit 15%)"
                           + (f", failures {failures}" if failures else ""))


# 5 ----------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_5_trend_reproduction(capsys):
    start = time.perf_counter()
    results = {k: [] for k in ("mlp", "gcn", "dhgreg")}
    for seed in TREND_SEEDS:
        built = reference_graph(seed)
        g, x, y = built.graph, built.features.values, built.labels.labels
        for kind in results:
            cfg = TrainConfig(model=ModelConfig(model_kind=kind, **REFERENCE_MODEL), dtype="float32")
            results[kind].append(train(g, x, y, cfg, seed=seed).report.test_ap[0])
    elapsed = time.perf_counter() - start
    mean = {k: float(np.mean(v)) for k, v in results.items()}
    gap = mean["dhgreg"] - mean["mlp"]
    ordering = mean["dhgreg"] > mean["gcn"] > mean["mlp"]
    ok = ordering and gap >= 0.02 and elapsed < 1800
    per_seed = "; ".join(f"{k} " + ",".join(f"{v:.4f}" for v in vals) for k, vals in results.items())
    verdict(capsys, 5, ok, f"mean test AP dhgreg {mean['dhgreg']:.4f}, gcn {mean['gcn']:.4f}, "
                           f"mlp {mean['mlp']:.4f}; ordering dhgreg>gcn>mlp {ordering}; dhgreg-mlp {gap:+.4f} "
                           f"(need >= 0.02); {elapsed / 60:.1f} min (limit 30) [{per_seed}]")


# 6 ----------------------------------------------------------------------

def test_criterion_6_timing_ordering(capsys):
    built = reference_graph(0)
    g, x, y = built.graph, built.features.values, built.labels.labels
    t = {k: bench(g, x, y, ModelConfig(model_kind=k, **REFERENCE_MODEL), epochs=20, warmup=3, dtype="float32")
         for k in ("gcn", "gat", "dhgreg")}
    ok = t["gcn"] < t["gat"] and t["dhgreg"] <= 1.5 * t["gat"]
    verdict(capsys, 6, ok, f"s/epoch gcn {t['gcn']:.3f}, gat {t['gat']:.3f}, dhgreg {t['dhgreg']:.3f}; "
                           f"need gcn < gat and dhgreg <= 1.5 x gat")


# 7 ----------------------------------------------------------------------

def test_criterion_7_early_stopping_and_determinism(capsys):
    cfg = GeneratorConfig(n_accounts=1500, seed=7)
    built = build_graph(generate(cfg), TimeWindowing(cfg.origin), T_max=cfg.T)
    g, x, y = built.graph, built.features.values, built.labels.labels
    model = ModelConfig(model_kind="dhgreg", n_layer=4, n_hid=32, dropout=0.1)
    frozen = train(g, x, y, TrainConfig(model=model, lr=0.0, patience=10, max_epochs=200), seed=0).report

    def ticking():
        state = [0.0]

        def clock():
            state[0] += 0.125
            return state[0]
        return clock

    tc = TrainConfig(model=model, max_epochs=60, patience=10)
    a = train(g, x, y, tc, seed=11, clock=ticking()).report
    b = train(g, x, y, tc, seed=11, clock=ticking()).report
    same = a.to_json() == b.to_json()
    ok = frozen.epochs == [11] and same
    verdict(capsys, 7, ok, f"lr=0, patience 10 stopped after {frozen.epochs[0]} epochs (need 11); "
                           f"repeat run with the same seed bit-identical: {same}")


# 8 ----------------------------------------------------------------------

def test_criterion_8_partitioner(capsys):
    built = reference_graph(0)
    n = built.graph.num_nodes
    plan = partition(built.graph)
    k_ok = plan.k == math.ceil(n / 512) and plan.k == default_k(n)
    cores = np.sort(np.concatenate([plan.core(p) for p in range(plan.k)]))
    cover_ok = np.array_equal(cores, np.arange(n))
    ref_balance = plan.sizes.max() <= 1.2 * n / plan.k

    rng = np.random.default_rng(8)
    wins, balance_ok = 0, True
    for trial in range(20):
        m = 2000
        src, dst = rng.integers(0, m, 6 * m // 2), rng.integers(0, m, 6 * m // 2)
        keep = src != dst
        a = sp.coo_matrix((np.ones(keep.sum()), (src[keep], dst[keep])), shape=(m, m)).tocsr()
        a = ((a + a.T) > 0).astype(float)
        p = partition(a, k=4, balance_slack=0.2, seed=trial)
        balance_ok &= bool(np.all(p.sizes <= 1.2 * m / 4) and np.all(p.sizes >= 0.8 * m / 4))
        wins += int(p.edge_cut < edge_cut(a, rng.integers(0, 4, m)))
    ok = k_ok and cover_ok and ref_balance and balance_ok and wins == 20
    verdict(capsys, 8, ok, f"reference graph n={n}: k={plan.k} (ceil(n/512)={math.ceil(n / 512)}), "
                           f"cores cover nodes exactly {cover_ok}, balanced {ref_balance}; random graphs: "
                           f"balanced {balance_ok}, cut beats random assignment {wins}/20")


# 9 ----------------------------------------------------------------------

def test_criterion_9_end_to_end_cli(tmp_path, capsys):
    config = {
        "out": str(tmp_path / "run"),
        "generator": {"n_accounts": 2000, "seed": 1},
        "train": {"max_epochs": 40, "patience": 8, "dtype": "float32",
                  "model": {"model_kind": "dhgreg", "n_layer": 4, "dropout": 0.1, "n_hid": 32}},
    }
    path = tmp_path / "pipeline.json"
    path.write_text(json.dumps(config))
    script = [sys.executable, "-m", "reggraph.cli"]
    codes = {}
    for cmd in ("generate", "build-graph", "train", "evaluate"):
        proc = subprocess.run(script + [cmd, "--config", str(path), "--quiet"], capture_output=True, text=True)
        codes[cmd] = proc.returncode
        if proc.returncode:
            break
    board = tmp_path / "run" / "leaderboard.csv"
    rows = list(csv.DictReader(board.open())) if board.exists() else []
    ok = all(c == 0 for c in codes.values()) and len(codes) == 4 and len(rows) >= 1
    verdict(capsys, 9, ok, f"exit codes {codes}; leaderboard rows {len(rows)}"
                           + (f" (columns {list(rows[0])})" if rows else ""))
