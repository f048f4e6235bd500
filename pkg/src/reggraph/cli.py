"""Command line: generate -> build-graph -> train -> evaluate, plus grid, bench, census.

A JSON config file may hold ``generator``, ``train``, ``grid``, ``bench`` and
``paths`` sections.  Flags override file values, which override defaults.
Every command writes ``<command>.resolved.json`` to the output directory;
passing that file back through ``--config`` repeats the run.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluation
from .evaluation import TrainConfig, average_precision, positive_scores, rank_leaderboard, rows_to_csv
from .graph import DynamicHeteroGraph
from .ingest import TimeWindowing, build_graph, read_records
from .models import GraphInputs, MODEL_KINDS, ModelConfig, build_model
from .numerics import checkpoint
from .synthgen import GeneratorConfig, describe, generate, write_dataset

DEFAULT_OUT = "dhgreg_out"
COMMANDS = ("generate", "build-graph", "train", "evaluate", "grid", "bench", "census")

# flag dest -> config key; model keys live under train.model
_TRAIN_FLAGS = {
    "lr": "lr", "max_epochs": "max_epochs", "patience": "patience", "seeds": "seeds",
    "train_frac": "train_frac", "partition_k": "partition_k", "halo": "halo",
    "full_batch": "full_batch", "dtype": "dtype",
}
_MODEL_FLAGS = {"model": "model_kind", "n_layer": "n_layer", "n_hid": "n_hid", "dropout": "dropout",
                "n_heads": "n_heads"}
_GEN_FLAGS = {"n_accounts": "n_accounts", "feature_signal": "feature_signal", "weeks": "T"}


class CliError(Exception):
    pass


def _csv_list(cast):
    def parse(text):
        try:
            return [cast(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("shared")
    g.add_argument("--config", type=Path, help="JSON config file")
    g.add_argument("--out", type=Path, help=f"output directory (default $DHGREG_OUT or ./{DEFAULT_OUT})")
    g.add_argument("--seed", type=int, help="generator seed, or the single training seed")
    g.add_argument("--seeds", type=_csv_list(int), help="comma-separated training seeds")
    g.add_argument("--model", choices=MODEL_KINDS)
    g.add_argument("--n-layer", type=int)
    g.add_argument("--n-hid", type=int)
    g.add_argument("--dropout", type=float)
    g.add_argument("--n-heads", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--beta1", type=float)
    g.add_argument("--beta2", type=float)
    g.add_argument("--max-epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--train-frac", type=float)
    g.add_argument("--partition-k", type=int)
    g.add_argument("--halo", type=int)
    g.add_argument("--full-batch", action=argparse.BooleanOptionalAction, default=None)
    g.add_argument("--dtype", choices=("float32", "float64"))
    g.add_argument("--jobs", type=int, default=None, help="parallel grid workers")
    g.add_argument("--input", type=Path, help="dataset (generate output) or graph file to read")
    g.add_argument("--n-accounts", type=int)
    g.add_argument("--feature-signal", type=float)
    g.add_argument("--weeks", type=int, help="number of weekly time steps T")
    g.add_argument("--models", type=_csv_list(str), help="grid/bench model kinds")
    g.add_argument("--n-layers", type=_csv_list(int), help="grid n_layer values")
    g.add_argument("--dropouts", type=_csv_list(float), help="grid dropout values")
    g.add_argument("--epochs", type=int, help="bench: timed epochs")
    g.add_argument("--warmup", type=int, help="bench: warm-up epochs")
    g.add_argument("--quiet", action="store_true", help="suppress per-epoch log lines on stdout")

    parser = argparse.ArgumentParser(prog="reggraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "write a synthetic registration dataset",
        "build-graph": "turn a dataset into the unrolled graph plus node data",
        "train": "train one configuration over the given seeds",
        "evaluate": "score saved checkpoints into a leaderboard CSV",
        "grid": "train the n_layer x dropout grid and rank it",
        "bench": "time training epochs per model",
        "census": "print node and edge counts of a graph",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


# config resolution ------------------------------------------------------

def _defaults() -> dict:
    train = TrainConfig().to_dict()
    return {
        "generator": json.loads(GeneratorConfig().to_json()),
        "train": train,
        "grid": {"models": ["dhgreg"], "n_layers": [4, 8, 12], "dropouts": [0.1, 0.25, 0.5], "jobs": 1},
        "bench": {"models": list(MODEL_KINDS), "epochs": 20, "warmup": 3},
        "paths": {},
    }


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("entity_sharing",
                                                                            "entity_presence"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then command-line flags."""
    cfg = _defaults()
    if args.config is not None:
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CliError(f"cannot read config {args.config}: {exc.strerror}") from exc
        except json.JSONDecodeError as exc:
            raise CliError(f"config {args.config} is not valid JSON: {exc.msg}") from exc
        unknown = set(doc) - set(cfg) - {"out"}
        if unknown:
            raise CliError(f"unknown config sections: {sorted(unknown)}")
        cfg = _merge(cfg, doc)

    gen, train, model = cfg["generator"], cfg["train"], cfg["train"]["model"]
    for dest, key in _GEN_FLAGS.items():
        if getattr(args, dest) is not None:
            gen[key] = getattr(args, dest)
    for dest, key in _TRAIN_FLAGS.items():
        if getattr(args, dest) is not None:
            train[key] = getattr(args, dest)
    for dest, key in _MODEL_FLAGS.items():
        if getattr(args, dest) is not None:
            model[key] = getattr(args, dest)
    if args.beta1 is not None or args.beta2 is not None:
        b1, b2 = train["betas"]
        train["betas"] = [args.beta1 if args.beta1 is not None else b1, args.beta2 if args.beta2 is not None else b2]
    if args.seed is not None:
        gen["seed"] = args.seed
        if args.seeds is None:
            train["seeds"] = [args.seed]
    for dest in ("models", "n_layers", "dropouts", "jobs"):
        if getattr(args, dest) is not None:
            cfg["grid"][dest] = getattr(args, dest)
    if args.models is not None:
        cfg["bench"]["models"] = args.models
    for dest in ("epochs", "warmup"):
        if getattr(args, dest) is not None:
            cfg["bench"][dest] = getattr(args, dest)

    out = args.out or cfg.get("out") or os.environ.get("DHGREG_OUT") or DEFAULT_OUT
    cfg["out"] = str(out)
    paths = cfg["paths"]
    paths.setdefault("dataset", str(Path(out) / "dataset.jsonl"))
    paths.setdefault("graph", str(Path(out) / "graph.jsonl"))
    paths.setdefault("node_data", str(Path(out) / "node_data.npz"))
    paths.setdefault("checkpoints", str(Path(out) / "checkpoints"))
    if args.input is not None:
        key = "dataset" if args.command == "build-graph" else "graph"
        paths[key] = str(args.input)
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig.from_dict(cfg["train"]).validate()
    except TypeError as exc:
        raise CliError(f"bad train config: {exc}") from exc


def _write_json(path: Path, doc) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# data loading -----------------------------------------------------------

def _load_graph(cfg: dict):
    gpath, npath = Path(cfg["paths"]["graph"]), Path(cfg["paths"]["node_data"])
    for p in (gpath, npath):
        if not p.exists():
            raise CliError(f"missing {p}; run build-graph first")
    graph = DynamicHeteroGraph.load(gpath).freeze()
    with np.load(npath) as data:
        features, labels = data["features"], data["labels"]
    if features.shape[0] != graph.num_nodes or labels.shape[0] != graph.num_nodes:
        raise CliError(f"{npath} does not match {gpath} ({features.shape[0]} vs {graph.num_nodes} nodes)")
    return graph, features, labels


# commands ---------------------------------------------------------------

def cmd_generate(cfg, args, say):
    gcfg = GeneratorConfig.from_dict(cfg["generator"]).validate()
    records = generate(gcfg)
    path = Path(cfg["paths"]["dataset"])
    path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(records, path, gcfg)
    s = describe(records)
    say(f"wrote {len(records)} records to {path} (prevalence {s.prevalence:.4f}, rings {s.ring_count})")


def cmd_build_graph(cfg, args, say):
    src = Path(cfg["paths"]["dataset"])
    if not src.exists():
        raise CliError(f"missing dataset {src}; run generate first")
    report = read_records(src)
    if report.errors:
        err_path = Path(cfg["out"]) / "parse_errors.csv"
        err_path.parent.mkdir(parents=True, exist_ok=True)
        err_path.write_text(report.errors_csv(), encoding="utf-8")
        say(f"{len(report.errors)} malformed lines skipped, see {err_path}")
    origin = cfg["generator"].get("origin")
    windowing = TimeWindowing(origin) if origin is not None else TimeWindowing.from_records(report.records)
    built = build_graph(report.records, windowing, T_max=cfg["generator"]["T"])
    gpath = Path(cfg["paths"]["graph"])
    gpath.parent.mkdir(parents=True, exist_ok=True)
    built.graph.save(gpath)
    np.savez(cfg["paths"]["node_data"], features=built.features.values, labels=built.labels.labels,
             origin=np.int64(windowing.origin), window_length=np.int64(windowing.window_length))
    c = built.graph.census()
    say(f"wrote {gpath}: {c.total_nodes} nodes, {c.total_edges} edges")


def _epoch_logger(say, prefix):
    return lambda line: say(f"{prefix} {line}")


def cmd_train(cfg, args, say):
    tc = _train_config(cfg)
    graph, features, labels = _load_graph(cfg)
    ckdir = Path(cfg["paths"]["checkpoints"])
    ckdir.mkdir(parents=True, exist_ok=True)
    reports = []
    for seed in tc.seeds:
        m = tc.model
        name = checkpoint.checkpoint_name(m.model_kind, m.n_layer, m.dropout, seed)
        log = None if args.quiet else _epoch_logger(say, f"[{name}]")
        result = evaluation.train(graph, features, labels, tc, seed=seed, log=log)
        rep = result.report
        checkpoint.save(ckdir / name, result.state, meta={"model": replace(m, d_in=features.shape[1]).to_dict()})
        _write_json(ckdir / f"{name}.json", {
            "checkpoint": name, "seed": seed, "train": tc.to_dict(),
            "metrics": {k: v[0] for k, v in (("val_ap", rep.val_ap), ("test_ap", rep.test_ap),
                                             ("s_per_epoch", rep.s_per_epoch), ("epochs", rep.epochs),
                                             ("best_epoch", rep.best_epoch))},
        })
        say(f"{name}: val_ap={rep.val_ap[0]:.4f} test_ap={rep.test_ap[0]:.4f} "
            f"epochs={rep.epochs[0]} s_per_epoch={rep.s_per_epoch[0]:.4f}")
        reports.append(rep)
    merged = evaluation.MetricsReport.merge(reports)
    stem = f"metrics-{tc.model.model_kind}-{tc.model.n_layer}-{tc.model.dropout}"
    (Path(cfg["out"]) / f"{stem}.json").write_text(merged.to_json() + "\n", encoding="utf-8")
    (Path(cfg["out"]) / f"{stem}.csv").write_text(merged.to_csv(), encoding="utf-8")
    say(f"mean test AP {merged.mean_test_ap:.4f} +/- {merged.std_test_ap:.4f} over {len(tc.seeds)} seed(s)")


def cmd_evaluate(cfg, args, say):
    graph, features, labels = _load_graph(cfg)
    ckdir = Path(cfg["paths"]["checkpoints"])
    manifests = sorted(ckdir.glob("*.ckpt.json"))
    if not manifests:
        raise CliError(f"no checkpoint manifests in {ckdir}; run train first")
    rows = []
    for mpath in manifests:
        man = json.loads(mpath.read_text(encoding="utf-8"))
        tc = TrainConfig.from_dict(man["train"])
        state, meta = checkpoint.load(ckdir / man["checkpoint"])
        dtype = next(iter(state.values())).dtype
        model = build_model(ModelConfig(**meta["model"])).astype(dtype)
        model.load_state_dict(state)
        inputs = GraphInputs.from_graph(graph, features, dtype=dtype)
        split = evaluation.week_split(graph, labels, tc.train_frac, tc.val_frac)
        y = np.asarray(labels)[inputs.account_idx]
        scores = positive_scores(model, inputs)
        rows.append({
            "model": model.config.model_kind, "n_layer": model.config.n_layer, "dropout": model.config.dropout,
            "seed": man["seed"],
            "val_ap": average_precision(scores[split.val], y[split.val]),
            "test_ap": average_precision(scores[split.test], y[split.test]),
            "s_per_epoch": man["metrics"]["s_per_epoch"], "epochs": man["metrics"]["epochs"],
        })
    ordered, best = rank_leaderboard(rows)
    out = Path(cfg["out"])
    (out / "leaderboard.csv").write_text(rows_to_csv(ordered), encoding="utf-8")
    _write_json(out / "best.json", best)
    say(f"wrote {out / 'leaderboard.csv'} ({len(ordered)} rows)")
    for kind, b in best.items():
        say(f"best {kind}: n_layer={b['n_layer']} dropout={b['dropout']} "
            f"val_ap={b['mean_val_ap']:.4f} test_ap={b['mean_test_ap']:.4f}")


def cmd_grid(cfg, args, say):
    tc = _train_config(cfg)
    graph, features, labels = _load_graph(cfg)
    grid = cfg["grid"]
    bad = set(grid["models"]) - set(MODEL_KINDS)
    if bad:
        raise CliError(f"unknown model kinds {sorted(bad)}")
    ordered, best = evaluation.grid_run(graph, features, labels, tc, models=grid["models"],
                                        n_layers=grid["n_layers"], dropouts=grid["dropouts"],
                                        jobs=int(grid.get("jobs") or 1))
    out = Path(cfg["out"])
    (out / "grid_leaderboard.csv").write_text(rows_to_csv(ordered), encoding="utf-8")
    _write_json(out / "grid_best.json", best)
    for kind, b in best.items():
        say(f"best {kind}: n_layer={b['n_layer']} dropout={b['dropout']} "
            f"val_ap={b['mean_val_ap']:.4f} test_ap={b['mean_test_ap']:.4f}")


def cmd_bench(cfg, args, say):
    tc = _train_config(cfg)
    graph, features, labels = _load_graph(cfg)
    b = cfg["bench"]
    if b["epochs"] < 1 or b["warmup"] < 0:
        raise CliError("bench needs epochs >= 1 and warmup >= 0")
    timings = {}
    for kind in b["models"]:
        mc = replace(tc.model, model_kind=kind)
        timings[kind] = evaluation.bench(graph, features, labels, mc, epochs=b["epochs"], warmup=b["warmup"],
                                         dtype=tc.dtype)
        say(f"{kind}: {timings[kind]:.4f} s/epoch")
    _write_json(Path(cfg["out"]) / "bench.json", timings)


def cmd_census(cfg, args, say):
    path = Path(cfg["paths"]["graph"])
    if not path.exists():
        raise CliError(f"missing graph {path}; run build-graph first")
    c = DynamicHeteroGraph.load(path).census()
    lines = ["key,count"] + [f"{k},{v}" for k, v in c.rows()]
    (Path(cfg["out"]) / "census.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    for line in lines:
        say(line)


HANDLERS = {
    "generate": cmd_generate, "build-graph": cmd_build_graph, "train": cmd_train, "evaluate": cmd_evaluate,
    "grid": cmd_grid, "bench": cmd_bench, "census": cmd_census,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    def say(line):
        print(line, flush=True)

    try:
        cfg = resolve(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / f"{args.command}.resolved.json", cfg)
        HANDLERS[args.command](cfg, args, say)
    except KeyboardInterrupt:
        print(json.dumps({"error": "Interrupted", "command": args.command}), file=sys.stderr)
        return 130
    except Exception as exc:  # one parsable line, no traceback
        print(json.dumps({"error": type(exc).__name__, "command": args.command, "message": str(exc)}),
              file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
