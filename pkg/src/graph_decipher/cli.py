"""``gd`` command line: train, eval, inspect, sweep, augment, gen-sbm, flops.

Exit codes: 0 ok, 1 usage or configuration error, 2 numeric failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .augment import (CLONE_EDGES, MODES, PAPER_RATIOS, SWEEP_MODES, alpha_from_model, clone_nodes,
                      extract_representative, ratio_sweep, rebalance_all)
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, GDError, NumericError, ParseError
from .flops import GraphStats, count_flops, count_params, flop_breakdown
from .graph import Dataset, SbmSpec, Split, generate_sbm, load_dataset, make_split, save_dataset
from .model import GraphContext, ModelConfig, init_params, model_forward
from .autodiff import Tensor
from .train import evaluate, train

log = logging.getLogger("gd")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

MODEL_KEYS = [f.name for f in dataclasses.fields(ModelConfig)]

DEFAULTS = {
    **ModelConfig().to_dict(),
    "nodes": None, "edges": None, "undirected": False, "sbm": None,
    "split_file": None, "train_per_class": 20, "n_val": 40, "n_test": None,
    "out": None, "checkpoint": None, "node_set": "test", "top_k": 5,
    "axis": "heads", "values": None, "seeds": None, "jobs": 1,
    "mode": "AP", "p_a": 0.5, "clone_edges": "inherit", "target_ratio": 1.5,
    "category": None, "count": None, "maj_class": 0, "min_class": 1,
    "stats": None, "n_nodes": None, "n_edges": None, "n_features": None, "n_classes": None,
    "breakdown": False, "sbm_seed": None,
}


class ConfigError(GDError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


# ----------------------------------------------------------------------------
# argument parsing

def _add_data(p):
    g = p.add_argument_group("data")
    g.add_argument("--nodes", help="nodes.tsv")
    g.add_argument("--edges", help="edges.tsv")
    g.add_argument("--undirected", action="store_true", help="store every edge in both directions")
    g.add_argument("--sbm", help="'default' or a JSON file of generator parameters")
    g.add_argument("--sbm-seed", type=int, help="override the generator seed")
    g.add_argument("--split-file", help="JSON {train, val, test} node index lists")
    g.add_argument("--train-per-class", type=int)
    g.add_argument("--n-val", type=int)
    g.add_argument("--n-test", type=int, help="default: every remaining labeled node")


def _add_model(p):
    g = p.add_argument_group("model")
    g.add_argument("--layers", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--pool", type=int)
    g.add_argument("--dropout", type=float)
    g.add_argument("--slope", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--no-fab", dest="use_fab", action="store_const", const=False,
                   help="node attention only (feature branch replaced by ones)")
    g.add_argument("--theta-init", choices=["xavier", "zeros"])


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gd", description="Dual-attention graph network toolkit.",
                     argument_default=argparse.SUPPRESS)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def cmd(name, help_):
        p = sub.add_parser(name, help=help_, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file of option values (flags take precedence)")
        p.add_argument("--seed", type=int)
        p.add_argument("--verbose", action="store_true")
        return p

    p = cmd("train", "train a model and write checkpoint, metrics and attention")
    _add_data(p)
    _add_model(p)
    p.add_argument("--out", help="output directory")

    p = cmd("eval", "evaluate a checkpoint")
    p.add_argument("--checkpoint")
    _add_data(p)
    p.add_argument("--node-set", choices=["train", "val", "test"])
    p.add_argument("--out")

    p = cmd("inspect", "dump attention coefficients of a checkpoint")
    p.add_argument("--checkpoint")
    _add_data(p)
    p.add_argument("--top-k", type=int)
    p.add_argument("--out")

    p = cmd("sweep", "sweep heads, pool size or imbalance ratio")
    _add_data(p)
    _add_model(p)
    p.add_argument("--axis", choices=["heads", "pool", "ratio"])
    p.add_argument("--values", help="comma-separated axis values")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--jobs", type=int)
    p.add_argument("--modes", dest="modes", help=f"ratio axis: comma-separated subset of {SWEEP_MODES}")
    p.add_argument("--maj-class", type=int)
    p.add_argument("--min-class", type=int)
    p.add_argument("--p-a", type=float)
    p.add_argument("--clone-edges", choices=list(CLONE_EDGES))
    p.add_argument("--out")

    p = cmd("augment", "clone minority nodes guided by a trained model's attention")
    _add_data(p)
    _add_model(p)
    p.add_argument("--checkpoint", help="trained model (default: train one first)")
    p.add_argument("--mode", choices=list(MODES))
    p.add_argument("--p-a", type=float)
    p.add_argument("--clone-edges", choices=list(CLONE_EDGES))
    p.add_argument("--target-ratio", type=float, help="rebalance every category to this ratio")
    p.add_argument("--category", type=int, help="clone only this category ...")
    p.add_argument("--count", type=int, help="... this many times")
    p.add_argument("--out")

    p = cmd("gen-sbm", "write a synthetic planted-partition dataset")
    p.add_argument("--sbm")
    p.add_argument("--sbm-seed", type=int)
    p.add_argument("--train-per-class", type=int)
    p.add_argument("--n-val", type=int)
    p.add_argument("--n-test", type=int)
    p.add_argument("--out")

    p = cmd("flops", "analytic MFLOPs and parameter count")
    _add_model(p)
    p.add_argument("--stats", choices=["cora"], help="preset graph size")
    _add_data(p)
    p.add_argument("--n-nodes", type=int)
    p.add_argument("--n-edges", type=int, help="directed edges without self-loops")
    p.add_argument("--n-features", type=int)
    p.add_argument("--n-classes", type=int)
    p.add_argument("--breakdown", action="store_true")
    p.add_argument("--out")
    return parser


def resolve(argv) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    args = vars(build_parser().parse_args(argv))
    opts = dict(DEFAULTS)
    opts["seed"] = 0
    if "config" in args:
        try:
            loaded = json.loads(Path(args["config"]).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {args['config']}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"{args['config']}: not valid JSON ({exc})") from exc
        if isinstance(loaded, dict) and isinstance(loaded.get("config"), dict):
            loaded = loaded["config"]  # a manifest written by an earlier run
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - set(DEFAULTS) - {"seed", "command", "modes"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        opts.update(loaded)
    opts.update({k: v for k, v in args.items() if k != "config"})
    return opts


def model_config(opts) -> ModelConfig:
    try:
        return ModelConfig.from_dict({k: opts[k] for k in MODEL_KEYS if k in opts})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model option: {exc}") from exc


# ----------------------------------------------------------------------------
# data

def sbm_spec(opts) -> SbmSpec:
    src = opts["sbm"]
    if src == "default":
        fields = {}
    elif isinstance(src, dict):
        fields = dict(src)
    else:
        try:
            fields = json.loads(Path(src).read_text())
        except ValueError as exc:
            raise ConfigError(f"{src}: not valid JSON ({exc})") from exc
    if opts.get("sbm_seed") is not None:
        fields["seed"] = opts["sbm_seed"]
    if "class_sizes" in fields and fields["class_sizes"] is not None:
        fields["class_sizes"] = tuple(fields["class_sizes"])
    try:
        return SbmSpec(**fields)
    except TypeError as exc:
        raise ConfigError(f"bad SBM parameters: {exc}") from exc


def data_source(opts) -> dict:
    has_files = opts.get("nodes") is not None or opts.get("edges") is not None
    has_sbm = opts.get("sbm") is not None
    if has_files == has_sbm:
        raise ConfigError("give exactly one data source: --nodes/--edges or --sbm")
    if has_files:
        if opts.get("nodes") is None or opts.get("edges") is None:
            raise ConfigError("--nodes and --edges go together")
        return {"nodes": str(opts["nodes"]), "edges": str(opts["edges"]),
                "undirected": bool(opts["undirected"])}
    return {"sbm": dataclasses.asdict(sbm_spec(opts))}


def load_source(src: dict) -> Dataset:
    if "sbm" in src:
        spec = dict(src["sbm"])
        if spec.get("class_sizes") is not None:
            spec["class_sizes"] = tuple(spec["class_sizes"])
        return generate_sbm(SbmSpec(**spec))
    return load_dataset(src["nodes"], src["edges"], src.get("undirected", False))


def resolve_split(ds: Dataset, opts) -> Split:
    if opts.get("split_file"):
        try:
            d = json.loads(Path(opts["split_file"]).read_text())
        except ValueError as exc:
            raise ConfigError(f"{opts['split_file']}: not valid JSON ({exc})") from exc
        return Split.from_dict(d)
    per_class = opts["train_per_class"]
    n_val = opts["n_val"]
    labeled = int(np.sum(ds.labels.labels >= 0))
    n_test = opts["n_test"]
    if n_test is None:
        n_test = labeled - per_class * ds.n_classes - n_val
        if n_test < 0:
            raise ConfigError("not enough labeled nodes for the requested train/val sizes")
    return make_split(ds.labels, per_class, n_val, n_test, opts["seed"])


# ----------------------------------------------------------------------------
# artifacts

def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def out_dir(opts, required=True) -> Path | None:
    if opts.get("out") is None:
        if required:
            raise ConfigError("--out is required")
        return None
    p = Path(opts["out"])
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_manifest(out: Path, command: str, opts: dict, extra: dict | None = None) -> None:
    cfg = {k: v for k, v in opts.items() if k in DEFAULTS or k in ("seed", "modes")}
    _dump(out / "manifest.json", {"command": command, "seed": opts["seed"], "config": cfg,
                                  "version": __version__, "kernel_backend": kernels.BACKEND,
                                  **(extra or {})})


def attention_dump(ctx: GraphContext, params, config: ModelConfig, top_k: int) -> dict:
    _, state = model_forward(ctx, params, config, training=False)
    layers = []
    for li, layer in enumerate(state.layers):
        entry = {"layer": li, "categories": [],
                 "beta": {"src": state.src.tolist(), "dst": state.dst.tolist(),
                          "head_mean": layer["beta"].mean(axis=0).tolist()}}
        if layer["alpha"] is not None:
            alpha = layer["alpha"].mean(axis=0)
            for c in range(alpha.shape[0]):
                entry["categories"].append({
                    "category": c, "alpha": alpha[c].tolist(),
                    "mask_ones_per_channel": layer["mask_ones"][c].astype(int).tolist()})
        layers.append(entry)
    out = {"layers": layers}
    if state.layers and state.layers[0]["alpha"] is not None:
        alpha = state.mean_alpha(0)
        F = alpha.shape[1]
        if top_k > F:
            log.warning("top-k %d exceeds the %d feature dimensions; using %d", top_k, F, F)
            top_k = F
        out["top_k"] = {"k": top_k, "dims": {
            str(c): np.argsort(-alpha[c], kind="stable")[:top_k].tolist() for c in range(alpha.shape[0])}}
    return out


def _params_to_tensors(raw: dict) -> dict:
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in raw.items()}


def _load_model(opts):
    if not opts.get("checkpoint"):
        raise ConfigError("--checkpoint is required")
    try:
        raw, meta = load_checkpoint(opts["checkpoint"])
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from exc
    config = ModelConfig.from_dict(meta["config"])
    if opts.get("nodes") or opts.get("sbm"):
        ds = load_source(data_source(opts))
    else:
        ds = load_source(meta["data"])
    split = Split.from_dict(meta["split"])
    params = _params_to_tensors(raw)
    expected = init_params(config, ds.n_features, ds.n_classes)
    if set(expected) != set(params) or any(expected[k].shape != params[k].shape for k in params):
        raise ConfigError("checkpoint does not match the dataset's shape")
    return ds, split, config, params, meta


# ----------------------------------------------------------------------------
# commands

def run_train(ds: Dataset, split: Split, config: ModelConfig):
    ctx = GraphContext.build(ds, split)
    t0 = time.perf_counter()
    params, history = train(ctx, split, config)
    wall = time.perf_counter() - t0
    test = evaluate(params, ctx, split, config, split.test) if split.test.size else None
    metrics = {
        "seed": config.seed, "config": config.to_dict(), "epochs_run": history.epochs_run,
        "best_epoch": history.best_epoch, "train_loss": history.train_loss, "val_acc": history.val_acc,
        "test_metrics": test.to_dict() if test else None,
        "mflops": count_flops(config, GraphStats.from_dataset(ds, split)),
        "params": count_params(config, ds.n_features, ds.n_classes),
        "wall_clock_seconds": wall,
    }
    return ctx, params, metrics


def cmd_train(opts) -> int:
    out = out_dir(opts)
    config = model_config(opts)
    src = data_source(opts)
    ds = load_source(src)
    split = resolve_split(ds, opts)
    ctx, params, metrics = run_train(ds, split, config)
    save_checkpoint(out / "checkpoint.bin", params,
                    {"config": config.to_dict(), "data": src, "split": split.to_dict(),
                     "n_features": ds.n_features, "n_classes": ds.n_classes})
    _dump(out / "metrics.json", metrics)
    _dump(out / "attention.json", attention_dump(ctx, params, config, opts["top_k"]))
    write_manifest(out, "train", opts, {"data": src})
    acc = metrics["test_metrics"]["accuracy"] if metrics["test_metrics"] else float("nan")
    print(f"trained {metrics['epochs_run']} epochs, test accuracy {acc:.4f} -> {out}")
    return EXIT_OK


def cmd_eval(opts) -> int:
    ds, split, config, params, meta = _load_model(opts)
    nodes = getattr(split, opts["node_set"])
    m = evaluate(params, ds, split, config, nodes)
    result = {"node_set": opts["node_set"], **m.to_dict()}
    out = out_dir(opts, required=False)
    if out:
        _dump(out / "eval.json", result)
        write_manifest(out, "eval", opts, {"data": meta["data"]})
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


def cmd_inspect(opts) -> int:
    ds, split, config, params, meta = _load_model(opts)
    dump = attention_dump(GraphContext.build(ds, split), params, config, opts["top_k"])
    out = out_dir(opts, required=False)
    if out:
        _dump(out / "attention.json", dump)
        write_manifest(out, "inspect", opts, {"data": meta["data"]})
    else:
        print(json.dumps(dump, sort_keys=True))
    return EXIT_OK


def _int_list(s, what) -> list[int]:
    if isinstance(s, (list, tuple)):
        return [int(v) for v in s]
    try:
        return [int(v) for v in str(s).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{what} must be comma-separated integers") from None


def _sweep_cell(args):
    axis, value, seed, ds, split, base = args
    config = dataclasses.replace(base, seed=seed, **{axis: value})
    _, _, metrics = run_train(ds, split, config)
    return metrics


def cmd_sweep(opts) -> int:
    out = out_dir(opts)
    base = model_config(opts)
    seeds = _int_list(opts["seeds"], "--seeds") if opts.get("seeds") else [opts["seed"]]
    ds = load_source(data_source(opts))
    split = resolve_split(ds, opts)
    axis = opts["axis"]
    if axis == "ratio":
        ratios = _int_list(opts["values"], "--values") if opts.get("values") else list(PAPER_RATIOS)
        modes = tuple(opts["modes"].split(",")) if opts.get("modes") else SWEEP_MODES
        report = ratio_sweep(ds, split, opts["maj_class"], opts["min_class"], modes, ratios, seeds,
                             base, opts["p_a"], opts["clone_edges"], opts["jobs"])
        (out / "sweep.tsv").write_text(report.to_tsv())
        (out / "summary.json").write_text(report.summary_json())
    else:
        default = {"heads": [2, 4, 6, 8, 10], "pool": [1, 2, 3]}[axis]
        values = _int_list(opts["values"], "--values") if opts.get("values") else default
        cells = [(axis, v, s, ds, split, base) for v in values for s in seeds]
        if opts["jobs"] > 1:
            with ProcessPoolExecutor(max_workers=opts["jobs"]) as pool:
                results = list(pool.map(_sweep_cell, cells))
        else:
            results = [_sweep_cell(c) for c in cells]
        lines = [f"{axis}\tseed\taccuracy\tmacro_AP\tmflops\tparams"]
        summary = {}
        for (_, v, s, *_), m in zip(cells, results):
            t = m["test_metrics"] or {"accuracy": float("nan"), "macro_AP": float("nan")}
            lines.append(f"{v}\t{s}\t{t['accuracy']:.6f}\t{t['macro_AP']:.6f}\t{m['mflops']:.4f}\t{m['params']}")
            summary.setdefault(str(v), []).append(t["accuracy"])
        (out / "sweep.tsv").write_text("\n".join(lines) + "\n")
        _dump(out / "summary.json", {v: {"mean_accuracy": float(np.mean(a))} for v, a in summary.items()})
    write_manifest(out, "sweep", opts)
    print(f"sweep over {axis} written to {out}")
    return EXIT_OK


def cmd_augment(opts) -> int:
    out = out_dir(opts)
    if opts.get("checkpoint"):
        ds, split, config, params, _ = _load_model(opts)
    else:
        config = model_config(opts)
        ds = load_source(data_source(opts))
        split = resolve_split(ds, opts)
        _, params, _ = run_train(ds, split, config)
    alpha = alpha_from_model(GraphContext.build(ds, split), params, config)
    if opts.get("category") is not None:
        if opts.get("count") is None:
            raise ConfigError("--category needs --count")
        rep = extract_representative(alpha)
        new_ds, new_split = clone_nodes(ds, split, opts["category"], opts["count"], opts["mode"],
                                        rep, opts["p_a"], opts["seed"], opts["clone_edges"])
    else:
        new_ds, new_split = rebalance_all(ds, split, alpha, opts["target_ratio"], opts["mode"],
                                          opts["p_a"], opts["seed"], opts["clone_edges"])
    save_dataset(new_ds, out / "nodes.tsv", out / "edges.tsv")
    _dump(out / "split.json", new_split.to_dict())
    counts = np.bincount(new_ds.labels.labels[new_split.train], minlength=new_ds.n_classes)
    _dump(out / "augment.json", {"added_nodes": new_ds.n_nodes - ds.n_nodes,
                                 "train_counts": counts.tolist(),
                                 "representative_dims": [d.tolist() for d in
                                                         extract_representative(alpha).dims]})
    write_manifest(out, "augment", opts)
    print(f"added {new_ds.n_nodes - ds.n_nodes} nodes -> {out}")
    return EXIT_OK


def cmd_gen_sbm(opts) -> int:
    out = out_dir(opts)
    if opts.get("sbm") is None:
        opts["sbm"] = "default"
    spec = sbm_spec(opts)
    ds = generate_sbm(spec)
    save_dataset(ds, out / "nodes.tsv", out / "edges.tsv")
    _dump(out / "split.json", resolve_split(ds, opts).to_dict())
    _dump(out / "signal_dims.json", spec.signal_dims().tolist())
    write_manifest(out, "gen-sbm", opts, {"sbm": dataclasses.asdict(spec)})
    print(f"{ds.n_nodes} nodes, {ds.graph.n_edges} directed edges -> {out}")
    return EXIT_OK


def cmd_flops(opts) -> int:
    config = model_config(opts)
    if opts.get("stats") == "cora":
        stats = GraphStats.cora()
    elif opts.get("nodes") or opts.get("sbm"):
        ds = load_source(data_source(opts))
        stats = GraphStats.from_dataset(ds, resolve_split(ds, opts))
    else:
        need = ["n_nodes", "n_edges", "n_features", "n_classes"]
        if any(opts.get(k) is None for k in need):
            raise ConfigError("give --stats, a data source, or all of --n-nodes --n-edges "
                              "--n-features --n-classes")
        stats = GraphStats(*(opts[k] for k in need))
    result = {"mflops": count_flops(config, stats),
              "params": count_params(config, stats.n_features, stats.n_classes),
              "stats": dataclasses.asdict(stats)}
    if opts["breakdown"]:
        result["breakdown"] = flop_breakdown(config, stats)
    out = out_dir(opts, required=False)
    if out:
        _dump(out / "flops.json", result)
        write_manifest(out, "flops", opts)
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "inspect": cmd_inspect, "sweep": cmd_sweep,
            "augment": cmd_augment, "gen-sbm": cmd_gen_sbm, "flops": cmd_flops}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        opts = resolve(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ConfigError as exc:
        print(f"gd: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"gd: error: {exc}", file=sys.stderr)
        return EXIT_IO
    logging.basicConfig(level=logging.INFO if opts.get("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[opts["command"]](opts)
    except NumericError as exc:
        print(f"gd: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, OSError) as exc:
        print(f"gd: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (GDError, ValueError, KeyError) as exc:
        print(f"gd: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
