"""Command-line entry point: ``dlsm {stats,train,eval,repro}``.

Every ``ModelConfig`` field can be set with ``--key value`` (hyphens and
underscores are interchangeable). Precedence: flag > ``--config`` file > default.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric/training error.
"""

import argparse
import csv
import datetime
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import file_digest, load_checkpoint, save_checkpoint
from .config import ModelConfig, write_config_file
from .errors import DataError, DLSMError, UsageError
from .evaluation import (
    community_detection_eval,
    degree_factor_report,
    export_embeddings,
    format_mean_sd,
    link_prediction_eval,
    write_factor_series,
)
from .graph import descriptive_stats, load_attributes, load_edge_list, load_labels, preprocess, split_edges
from .trainer import HISTORY_COLUMNS, train

log = logging.getLogger("dlsm")

# name -> (edge file, directed, label file or None) relative to --data-dir
DATASETS = {
    "polblogs": ("polblogs.txt", True, "polblogs_labels.txt"),
    "emails": ("email-Eu-core.txt", True, "email-Eu-core-department-labels.txt"),
    "wikivote": ("wiki-Vote.txt", True, None),
    "dblp": ("dblp.txt", True, None),
}

# generated graphs, addressable by name in ``repro``
SYNTHETIC = ("synthetic-blocks", "synthetic-powerlaw", "synthetic-2000")

METHOD_NAMES = {"distance": "DLSM", "inner_product": "DLSM-IP"}


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _split_overrides(extra):
    """Turn leftover ``--key value`` / ``--key=value`` tokens into a dict."""
    out = {}
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--"):
            raise UsageError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
        else:
            if i + 1 >= len(extra):
                raise UsageError(f"flag --{key} needs a value")
            i += 1
            value = extra[i]
        out[key.replace("-", "_")] = value
        i += 1
    return out


def resolve_config(config_path, overrides, seed=None):
    if seed is not None:
        overrides = {**overrides, "seed": str(seed)}
    if config_path:
        cfg = ModelConfig.from_file(config_path, overrides)
    else:
        cfg = ModelConfig.from_strings(overrides)
    return cfg.validate()


def load_graph(path, directed=True, attributes=None):
    g = load_edge_list(path, directed=directed)
    if attributes:
        g = load_attributes(attributes, g)
    return preprocess(g)


def _write_history(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_manifest(outdir, command, argv, config, inputs, seeds, started, extra=None):
    """Record how to rerun the command and the digest of every output file."""
    outdir = Path(outdir)
    outputs = {}
    for p in sorted(outdir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            outputs[p.relative_to(outdir).as_posix()] = file_digest(p)
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "config": None if config is None else config.to_dict(),
        "config_hash": None if config is None else config.hash(),
        "inputs": {str(p): file_digest(p) for p in inputs if p},
        "seeds": list(seeds),
        "outdir": str(outdir),
        "outputs": outputs,
        "started": started,
        "finished": _now(),
    }
    if extra:
        manifest.update(extra)
    _write_json(manifest, outdir / "manifest.json")
    return manifest


def cmd_stats(args, overrides):
    if overrides:
        raise UsageError(f"stats takes no config flags, got --{next(iter(overrides))}")
    g = load_graph(args.graph, directed=not args.undirected_input)
    print(descriptive_stats(g).to_json(indent=2))
    return 0


def train_run(g, config, outdir, progress=None):
    """split -> train -> checkpoint + history in ``outdir``; returns the model."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    split = split_edges(g, config.split, config.seed)
    model = train(g, split, config, progress=progress)
    save_checkpoint(model, outdir / "checkpoint")
    _write_history(model.history, outdir / "history.csv")
    write_config_file(config, outdir / "config.txt")
    return model


def _progress(verbose):
    if not verbose:
        return None
    return lambda r: print(f"epoch {r['epoch']:4d}  loss {r['total']:.4f}  val_auc {r['val_auc']:.4f}", file=sys.stderr)


def cmd_train(args, overrides):
    started = _now()
    config = resolve_config(args.config, overrides, args.seed)
    g = load_graph(args.graph, directed=not args.undirected_input, attributes=args.attributes)
    model = train_run(g, config, args.outdir, _progress(args.verbose))
    write_manifest(
        args.outdir, "train", sys.argv[1:], config, [args.graph, args.config, args.attributes], [config.seed], started,
        {"best_epoch": model.best_epoch, "best_val_auc": model.best_val_auc},
    )
    print(json.dumps({"checkpoint": str(Path(args.outdir) / "checkpoint"), "best_val_auc": model.best_val_auc}))
    return 0


def evaluate(model, task, outdir, truth=None, graph=None, plot=False, k=None, min_community_size=1):
    """Run one evaluation task and write ``outdir/eval/<task>.json`` (and plot series)."""
    outdir = Path(outdir)
    (outdir / "eval").mkdir(parents=True, exist_ok=True)
    if task == "lp":
        report = link_prediction_eval(model)
    elif task == "cd":
        if truth is None:
            raise UsageError("community detection needs --truth")
        report = community_detection_eval(model, truth, k=k, min_community_size=min_community_size)
    elif task == "factors":
        report = degree_factor_report(model, graph)
        write_factor_series(report, outdir / "plots", plot=plot)
    else:
        raise UsageError(f"unknown task {task!r}")
    (outdir / "eval" / f"{task}.json").write_text(report.to_json(indent=2) + "\n", encoding="utf-8")
    return report


def cmd_eval(args, overrides):
    if overrides:
        raise UsageError(f"eval takes no config flags, got --{next(iter(overrides))}")
    if args.task == "cd" and not args.truth:
        raise UsageError("task cd requires --truth")
    started = _now()
    model = load_checkpoint(args.checkpoint)
    outdir = Path(args.outdir or Path(args.checkpoint).parent)
    truth = load_labels(args.truth) if args.truth else None
    graph = load_graph(args.graph) if args.graph else None
    report = evaluate(model, args.task, outdir, truth, graph, args.plot, args.k, args.min_community_size)
    if args.embeddings:
        export_embeddings(model, args.embeddings)
    write_manifest(
        outdir, "eval", sys.argv[1:], model.config, [args.checkpoint, args.truth, args.graph], [model.config.seed], started
    )
    print(report.to_json(indent=2))
    return 0


def dataset_graph(name, data_dir=None):
    """``(graph, truth or None, input files)`` for a registered or synthetic dataset."""
    from . import synthetic

    if name == "synthetic-blocks":
        g, truth = synthetic.degree_corrected_blocks(seed=0)
        return g, truth, []
    if name == "synthetic-powerlaw":
        return synthetic.chung_lu_directed(1000, 2.5, seed=0), None, []
    if name == "synthetic-2000":
        g, truth = synthetic.degree_corrected_blocks(n=2000, k=4, avg_degree=10.0, seed=0)
        return g, truth, []
    if name not in DATASETS:
        raise UsageError(f"unknown dataset {name!r}; known: {sorted(DATASETS) + list(SYNTHETIC)}")
    edge_file, directed, label_file = DATASETS[name]
    data_dir = Path(data_dir or os.environ.get("DLSM_DATA", "data"))
    path = data_dir / edge_file
    if not path.exists():
        raise DataError(f"dataset {name!r} not found: expected {path}")
    g = load_graph(path, directed)
    truth = None
    inputs = [path]
    if label_file and (data_dir / label_file).exists():
        truth = load_labels(data_dir / label_file)
        inputs.append(data_dir / label_file)
    return g, truth, inputs


def repro(name, n_seeds, outdir, base_config, modes=("distance",), tasks=("lp",), data_dir=None, min_community_size=1, verbose=False):
    """Seeds ``1..n_seeds`` through split/train/eval, resuming finished runs.

    A run counts as finished when all its ``eval/<task>.json`` files exist.
    Failures are recorded per seed and the aggregate covers completed runs.

    Returns:
        ``(rows, failures)`` where rows map method name to per-metric value lists.
    """
    outdir = Path(outdir)
    g, truth, inputs = dataset_graph(name, data_dir)
    if "cd" in tasks and truth is None:
        raise UsageError(f"dataset {name!r} has no ground-truth communities for task cd")
    results = {}
    failures = []
    for mode in modes:
        method = METHOD_NAMES[mode]
        vals = results.setdefault(method, {"AUC": [], "AP": [], "ACC": []})
        for seed in range(1, n_seeds + 1):
            run_dir = outdir / f"{method}" / f"seed_{seed}"
            reports = {t: run_dir / "eval" / f"{t}.json" for t in tasks}
            if not all(p.exists() for p in reports.values()):
                try:
                    config = base_config.replace(seed=seed, mode=mode).validate()
                    model = train_run(g, config, run_dir, _progress(verbose))
                    for t in tasks:
                        evaluate(model, t, run_dir, truth, g, min_community_size=min_community_size)
                except Exception as exc:  # one bad seed must not sink the aggregate
                    failures.append({"method": method, "seed": seed, "error": f"{type(exc).__name__}: {exc}"})
                    log.warning("%s seed %d failed: %s", method, seed, exc)
                    continue
            for t, p in reports.items():
                rep = json.loads(p.read_text(encoding="utf-8"))
                if t == "lp":
                    vals["AUC"].append(rep["auc"])
                    vals["AP"].append(rep["ap"])
                elif t == "cd":
                    vals["ACC"].append(rep["accuracy"])
    return results, failures, inputs


def write_tables(results, dataset, outdir):
    """One CSV per metric: rows are methods, the column is the dataset, cells are mean±sd."""
    written = []
    for metric in ("AUC", "AP", "ACC"):
        rows = [(method, vals[metric]) for method, vals in results.items() if vals[metric]]
        if not rows:
            continue
        path = Path(outdir) / f"table_{metric.lower()}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["method", dataset])
            for method, values in rows:
                w.writerow([method, format_mean_sd(values)])
        written.append(path)
    return written


def cmd_repro(args, overrides):
    started = _now()
    base = resolve_config(args.config, overrides)
    modes = tuple(m.strip() for m in args.modes.split(","))
    tasks = tuple(t.strip() for t in args.tasks.split(","))
    for m in modes:
        if m not in METHOD_NAMES:
            raise UsageError(f"unknown mode {m!r}")
    for t in tasks:
        if t not in ("lp", "cd"):
            raise UsageError(f"repro tasks are lp and cd, got {t!r}")
    if args.n_seeds < 1:
        raise UsageError("--n-seeds must be at least 1")
    Path(args.outdir).mkdir(parents=True, exist_ok=True)
    results, failures, inputs = repro(
        args.dataset, args.n_seeds, args.outdir, base, modes, tasks, args.data_dir, args.min_community_size, args.verbose
    )
    _write_json(failures, Path(args.outdir) / "failures.json")
    write_tables(results, args.dataset, args.outdir)
    write_manifest(
        args.outdir, "repro", sys.argv[1:], base, [args.config, *inputs], list(range(1, args.n_seeds + 1)), started,
        {"dataset": args.dataset, "modes": list(modes), "tasks": list(tasks)},
    )
    summary = {
        method: {k: format_mean_sd(v) for k, v in vals.items() if v} for method, vals in results.items()
    }
    print(json.dumps({"dataset": args.dataset, "summary": summary, "failures": len(failures)}, indent=2))
    return 0 if not failures else 4


def build_parser():
    p = argparse.ArgumentParser(prog="dlsm", description=__doc__.splitlines()[0], allow_abbrev=False)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stats", allow_abbrev=False, help="descriptive statistics of an edge list (JSON)")
    s.add_argument("graph")
    s.add_argument("--undirected-input", action="store_true", help="insert every edge in both directions")
    s.set_defaults(func=cmd_stats)

    t = sub.add_parser("train", allow_abbrev=False, help="split, train and checkpoint one run")
    t.add_argument("graph")
    t.add_argument("--outdir", required=True)
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--attributes", help="CSV of node features (label first)")
    t.add_argument("--undirected-input", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", allow_abbrev=False, help="evaluate a checkpoint (JSON report)")
    e.add_argument("checkpoint")
    e.add_argument("--task", choices=("lp", "cd", "factors"), required=True)
    e.add_argument("--truth", help="ground-truth communities, one 'node community' per line")
    e.add_argument("--graph", help="edge list for degrees (factors); defaults to the split's edges")
    e.add_argument("--outdir")
    e.add_argument("--k", type=int)
    e.add_argument("--min-community-size", type=int, default=1)
    e.add_argument("--plot", action="store_true", help="also render PNGs (needs matplotlib)")
    e.add_argument("--embeddings", help="write the embedding CSV here")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("repro", allow_abbrev=False, help="repeat split/train/eval over seeds and tabulate mean±sd")
    r.add_argument("dataset", help=f"one of {sorted(DATASETS) + list(SYNTHETIC)}")
    r.add_argument("--n-seeds", type=int, default=10)
    r.add_argument("--outdir", required=True)
    r.add_argument("--config")
    r.add_argument("--data-dir")
    r.add_argument("--modes", default="distance")
    r.add_argument("--tasks", default="lp")
    r.add_argument("--min-community-size", type=int, default=1)
    r.set_defaults(func=cmd_repro)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args, _split_overrides(extra))
    except DLSMError as exc:
        print(f"dlsm: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"dlsm: error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
