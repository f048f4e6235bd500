"""Week-based splits, average precision, training with early stopping, grids."""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from itertools import product

import numpy as np

from .graph import DynamicHeteroGraph
from .models import GraphInputs, ModelConfig, build_model
from .numerics import ops
from .numerics.autodiff import NumericError, Tape
from .numerics.optim import AdamW
from .partition import default_k, extract_subgraph, partition

LEADERBOARD_COLUMNS = ("model", "n_layer", "dropout", "seed", "val_ap", "test_ap", "s_per_epoch", "epochs")


class SplitError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


# splits -----------------------------------------------------------------

@dataclass
class WeekSplit:
    """Boolean masks over the account rows (in ``graph.account_nodes()`` order)."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    train_weeks: tuple
    val_weeks: tuple
    test_weeks: tuple


def split_weeks(T: int, train_frac: float = 0.8, val_frac: float = 0.2) -> tuple[tuple, tuple, tuple]:
    if T < 5:
        raise SplitError(f"need at least 5 weeks to split, got T={T}")
    if not (0 < train_frac < 1 and 0 < val_frac < 1):
        raise SplitError("split fractions must lie in (0, 1)")
    n_fit = math.floor(train_frac * T + 1e-9)
    n_val = max(1, math.floor(val_frac * n_fit + 0.5))
    n_train = n_fit - n_val
    if n_train < 1 or n_fit >= T:
        raise SplitError(f"T={T} leaves an empty train, validation or test range")
    weeks = range(1, T + 1)
    return tuple(weeks[:n_train]), tuple(weeks[n_train:n_fit]), tuple(weeks[n_fit:])


def week_split(graph: DynamicHeteroGraph, labels: np.ndarray, train_frac: float = 0.8,
               val_frac: float = 0.2) -> WeekSplit:
    """Chronological split: early weeks train, the last fitting weeks validate, the rest test.

    ``labels`` is the per-node label array (-1 = unknown); unknown accounts
    are left out of every mask.
    """
    tr_w, va_w, te_w = split_weeks(graph.T, train_frac, val_frac)
    acc = graph.account_nodes()
    weeks = graph.time_steps()[acc]
    known = np.asarray(labels)[acc] >= 0
    train = np.isin(weeks, tr_w) & known
    val = np.isin(weeks, va_w) & known
    test = np.isin(weeks, te_w) & known
    for name, m in (("train", train), ("validation", val), ("test", test)):
        if not m.any():
            raise SplitError(f"{name} weeks contain no labelled accounts; cannot split")
    return WeekSplit(train, val, test, tr_w, va_w, te_w)


# metric -----------------------------------------------------------------

def average_precision(scores, labels) -> float:
    """Mean of precision@rank over the ranks of the positives.

    Sorting is by descending score with ties kept in input order.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    order = np.argsort(-scores, kind="stable")
    hits = labels[order] == 1
    n_pos = int(hits.sum())
    if n_pos == 0:
        raise ValueError("average precision needs at least one positive")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, n_pos + 1) / ranks))


# training ---------------------------------------------------------------

@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    lr: float = 0.001
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    max_epochs: int = 2048
    patience: int = 64
    train_frac: float = 0.8
    val_frac: float = 0.2
    seeds: tuple = (0,)
    dtype: str = "float64"
    full_batch: bool = True
    partition_k: int | None = None
    halo: int = 1

    def validate(self) -> "TrainConfig":
        self.model.validate()
        if not 0 < self.patience < self.max_epochs:
            raise ValueError("need 0 < patience < max_epochs")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        doc = dict(doc)
        model = ModelConfig(**doc.pop("model", {}))
        if "betas" in doc:
            doc["betas"] = tuple(doc["betas"])
        if "seeds" in doc:
            doc["seeds"] = tuple(doc["seeds"])
        return cls(model=model, **doc)


@dataclass
class MetricsReport:
    model: str
    n_layer: int
    dropout: float
    seeds: list
    val_ap: list
    test_ap: list
    s_per_epoch: list
    epochs: list
    best_epoch: list
    loss_curves: list

    @property
    def mean_test_ap(self) -> float:
        return float(np.mean(self.test_ap))

    @property
    def std_test_ap(self) -> float:
        return statistics.stdev(self.test_ap) if len(self.test_ap) > 1 else 0.0

    @property
    def mean_val_ap(self) -> float:
        return float(np.mean(self.val_ap))

    @property
    def mean_s_per_epoch(self) -> float:
        return float(np.mean(self.s_per_epoch))

    @classmethod
    def merge(cls, reports) -> "MetricsReport":
        reports = list(reports)
        head = reports[0]
        out = cls(head.model, head.n_layer, head.dropout, [], [], [], [], [], [], [])
        for r in reports:
            for name in ("seeds", "val_ap", "test_ap", "s_per_epoch", "epochs", "best_epoch", "loss_curves"):
                getattr(out, name).extend(getattr(r, name))
        return out

    def rows(self) -> list[dict]:
        return [
            {"model": self.model, "n_layer": self.n_layer, "dropout": self.dropout, "seed": s,
             "val_ap": v, "test_ap": t, "s_per_epoch": spe, "epochs": e}
            for s, v, t, spe, e in zip(self.seeds, self.val_ap, self.test_ap, self.s_per_epoch, self.epochs)
        ]

    def to_json(self) -> str:
        doc = asdict(self)
        doc.update(mean_test_ap=self.mean_test_ap, std_test_ap=self.std_test_ap,
                   mean_s_per_epoch=self.mean_s_per_epoch)
        return json.dumps(doc, indent=2)

    def to_csv(self) -> str:
        return rows_to_csv(self.rows())


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=LEADERBOARD_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: r[k] for k in LEADERBOARD_COLUMNS})
    return buf.getvalue()


@dataclass
class TrainResult:
    report: MetricsReport
    state: dict
    model: object


def positive_scores(model, inputs: GraphInputs) -> np.ndarray:
    """Suspicious-class probability per account row, eval mode."""
    out = model.forward(inputs, training=False)
    return ops.softmax(out.logits.data.astype(np.float64))[:, 1]


def _account_labels(labels: np.ndarray, inputs: GraphInputs) -> np.ndarray:
    return np.asarray(labels)[inputs.account_idx]


def _train_step(model, opt, inputs, y, mask, rng):
    opt.zero_grad()
    with Tape() as tape:
        out = model.forward(inputs, training=True, rng=rng)
        loss = ops.softmax_cross_entropy(out.logits, np.where(mask, y, 0), mask)
        tape.backward(loss)
    opt.step()
    return float(loss.data)


def train(graph: DynamicHeteroGraph, features: np.ndarray, labels: np.ndarray, config: TrainConfig,
          seed: int = 0, split: WeekSplit | None = None, clock=time.perf_counter, log=None) -> TrainResult:
    """Fit one model for one seed with validation-AP early stopping.

    The reported test AP comes from the parameters with the best
    validation AP.  ``clock`` supplies wall time for the s/epoch figure.
    """
    config.validate()
    dtype = np.dtype(config.dtype)
    mcfg = replace(config.model, d_in=features.shape[1])
    split = split or week_split(graph, labels, config.train_frac, config.val_frac)
    inputs = GraphInputs.from_graph(graph, features, dtype=dtype)
    y = _account_labels(labels, inputs)

    model = build_model(mcfg, seed=seed).astype(dtype)
    opt = AdamW(model.params, lr=config.lr, betas=config.betas, eps=config.eps,
                weight_decay=config.weight_decay, no_decay=model.no_decay)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))

    batches = None
    if not config.full_batch or config.partition_k:
        batches = _partition_batches(graph, features, labels, split, config, dtype)

    best_val, best_state, best_epoch, since = -np.inf, model.state_dict(), 0, 0
    losses, durations = [], []
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = clock()
        try:
            if batches is None:
                loss = _train_step(model, opt, inputs, y, split.train, rng)
            else:
                loss = float(np.mean([_train_step(model, opt, b_in, b_y, b_mask, rng)
                                      for b_in, b_y, b_mask in batches]))
            if not np.isfinite(loss):
                raise NumericError("non-finite loss")
            scores = positive_scores(model, inputs)
        except NumericError as exc:
            raise TrainingDiverged(f"{mcfg.model_kind} seed {seed} diverged at epoch {epoch}: {exc}") from exc
        val_ap = average_precision(scores[split.val], y[split.val])
        durations.append(clock() - t0)
        losses.append(loss)
        if log is not None:
            log(f"epoch={epoch} loss={loss:.6f} val_ap={val_ap:.6f} s_per_epoch={durations[-1]:.4f}")
        if val_ap > best_val:
            best_val, best_state, best_epoch, since = val_ap, model.state_dict(), epoch, 0
        else:
            since += 1
            if since >= config.patience:
                break

    model.load_state_dict(best_state)
    scores = positive_scores(model, inputs)
    test_ap = average_precision(scores[split.test], y[split.test])
    report = MetricsReport(
        model=mcfg.model_kind, n_layer=mcfg.n_layer, dropout=mcfg.dropout, seeds=[seed],
        val_ap=[float(best_val)], test_ap=[test_ap], s_per_epoch=[float(np.mean(durations))],
        epochs=[epoch], best_epoch=[best_epoch], loss_curves=[losses],
    )
    return TrainResult(report, best_state, model)


def _partition_batches(graph, features, labels, split, config, dtype):
    k = config.partition_k or default_k(graph.num_nodes)
    plan = partition(graph, k)
    acc = graph.account_nodes()
    train_nodes = np.zeros(graph.num_nodes, dtype=bool)
    train_nodes[acc[split.train]] = True
    batches = []
    for part in range(plan.k):
        sub = extract_subgraph(graph, plan, part, halo=config.halo)
        b_inputs = sub.inputs(features, dtype=dtype)
        local_acc = b_inputs.account_idx
        b_mask = (local_acc < sub.n_core) & train_nodes[sub.global_idx[local_acc]]
        if not b_mask.any():
            continue
        b_y = np.asarray(labels)[sub.global_idx[local_acc]]
        batches.append((b_inputs, b_y, b_mask))
    return batches


def run_seeds(graph, features, labels, config: TrainConfig, seeds=None, **kw) -> MetricsReport:
    seeds = config.seeds if seeds is None else seeds
    return MetricsReport.merge(train(graph, features, labels, config, seed=s, **kw).report for s in seeds)


# grid -------------------------------------------------------------------

def _grid_job(args):
    graph, features, labels, config, seed = args
    return train(graph, features, labels, config, seed=seed).report


def grid_run(graph, features, labels, base: TrainConfig, models=("dhgreg",), n_layers=(4, 8, 12),
             dropouts=(0.1, 0.25, 0.5), seeds=None, jobs: int = 1):
    """Train the full cross product and rank configurations by mean validation AP.

    Returns ``(leaderboard_rows, best)`` where ``best`` maps each model kind to
    its selected row group (config with the highest mean validation AP).
    """
    seeds = tuple(base.seeds if seeds is None else seeds)
    cells = []
    for kind, n_layer, p in product(models, n_layers, dropouts):
        cfg = replace(base, model=replace(base.model, model_kind=kind, n_layer=n_layer, dropout=p))
        cells.extend((graph, features, labels, cfg, s) for s in seeds)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_grid_job, cells))
    else:
        reports = [_grid_job(c) for c in cells]
    rows = [r for rep in reports for r in rep.rows()]
    return rank_leaderboard(rows)


def rank_leaderboard(rows):
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["model"], r["n_layer"], r["dropout"]), []).append(r)
    mean_val = {key: float(np.mean([r["val_ap"] for r in g])) for key, g in groups.items()}
    ranked = sorted(groups, key=lambda key: -mean_val[key])
    ordered = [r for key in ranked for r in sorted(groups[key], key=lambda r: r["seed"])]
    best = {}
    for key in ranked:
        best.setdefault(key[0], {
            "model": key[0], "n_layer": key[1], "dropout": key[2], "mean_val_ap": mean_val[key],
            "mean_test_ap": float(np.mean([r["test_ap"] for r in groups[key]])),
        })
    return ordered, best


# timing -----------------------------------------------------------------

def bench(graph, features, labels, model_config: ModelConfig, epochs: int = 20, warmup: int = 3,
          seed: int = 0, dtype="float64", clock=time.perf_counter) -> float:
    """Mean seconds per training step over ``epochs`` timed steps after ``warmup``."""
    dtype = np.dtype(dtype)
    inputs = GraphInputs.from_graph(graph, features, dtype=dtype)
    y = _account_labels(labels, inputs)
    mask = y >= 0
    model = build_model(replace(model_config, d_in=features.shape[1]), seed=seed).astype(dtype)
    opt = AdamW(model.params, no_decay=model.no_decay)
    rng = np.random.default_rng(seed)
    times = []
    for i in range(warmup + epochs):
        t0 = clock()
        _train_step(model, opt, inputs, y, mask, rng)
        if i >= warmup:
            times.append(clock() - t0)
    return float(np.mean(times))
