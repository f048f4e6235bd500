"""Train the four model families on one small synthetic dataset.

A features-only MLP is the floor; the graph models add what shared
entities reveal about rings.  Takes about a minute.

Run: python3 demos/02_compare_models.py
"""
from reggraph.evaluation import TrainConfig, train, week_split
from reggraph.ingest import TimeWindowing, build_graph
from reggraph.models import ModelConfig
from reggraph.synthgen import GeneratorConfig, generate

cfg = GeneratorConfig(n_accounts=4000, seed=1)
built = build_graph(generate(cfg), TimeWindowing(cfg.origin), T_max=cfg.T)
g, x, y = built.graph, built.features.values, built.labels.labels

split = week_split(g, y)
print(f"train weeks {split.train_weeks}, val {split.val_weeks}, test {split.test_weeks}")
print(f"test prevalence {y[g.account_nodes()][split.test].mean():.3f}")

print(f"{'model':8s} {'val AP':>7s} {'test AP':>8s} {'epochs':>7s} {'s/epoch':>8s}")
for kind in ("mlp", "gcn", "gat", "dhgreg"):
    tc = TrainConfig(model=ModelConfig(model_kind=kind, n_layer=4, dropout=0.1, n_hid=32),
                     dtype="float32", max_epochs=300, patience=32)
    rep = train(g, x, y, tc, seed=0).report
    print(f"{kind:8s} {rep.val_ap[0]:7.4f} {rep.test_ap[0]:8.4f} {rep.epochs[0]:7d} {rep.s_per_epoch[0]:8.3f}")
