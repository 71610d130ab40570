"""Command-line entry point: ``hg2v <subcommand> [options]``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical abort.
Every artifact gets a ``<file>.config.json`` sidecar with the resolved
arguments and seed.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DataError, NumericalError, ShapeError

log = logging.getLogger("hg2v")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class UsageError(Exception):
    pass


# --- helpers ----------------------------------------------------------------

def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("HG2V_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"HG2V_THREADS must be an integer, got {env!r}")
    return 1


def _resolved(args) -> dict:
    out = {k: v for k, v in vars(args).items() if k not in ("func",)}
    out["threads"] = _threads(args)
    out["version"] = __version__
    return out


def _sidecar(path, args, **extra) -> None:
    cfg = _resolved(args)
    cfg.update(extra)
    Path(str(path) + ".config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True, default=str))


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> list:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}")


def load_dataset(path):
    """``(graphs, meta, pyramids)`` from a container file or a TU directory."""
    from .formats import load_tu_dataset, read_container

    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file or directory")
    if path.is_dir():
        graphs, meta = load_tu_dataset(path)
        return graphs, meta, None
    graphs, meta, pyramids, _ = read_container(path)
    return graphs, meta, pyramids


def parse_hyper(text: str, base=None):
    """``"d=16,a=2,L=3"`` -> HyperParams (unspecified fields from ``base``)."""
    from dataclasses import asdict

    from .trainer import HyperParams

    fields = asdict(base) if base is not None else {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "=" not in part:
            raise UsageError(f"bad hyperparameter item {part!r}; use key=value")
        key, val = (s.strip() for s in part.split("=", 1))
        if key not in HyperParams.__dataclass_fields__:
            raise UsageError(f"unknown hyperparameter {key!r}")
        kind = HyperParams.__dataclass_fields__[key].type
        fields[key] = (float(val) if kind == "float" else val.lower() in ("1", "true", "yes")
                       if kind == "bool" else int(val))
    try:
        return HyperParams(**fields)
    except ValueError as exc:
        raise UsageError(str(exc))


def parse_grid(text: str, base):
    if text == "default":
        return [parse_hyper(f"d={d},a=2,L=3", base) for d in (16, 128)]
    return [parse_hyper(item, base) for item in text.split(";") if item.strip()]


def _hyper_from_args(args):
    from .trainer import HyperParams

    try:
        return HyperParams(d=args.d, a=args.a, L=args.levels, epochs=args.epochs, batch_graphs=args.batch,
                           lr0=args.lr, seed=args.seed, ratio=args.ratio, k=args.k)
    except ValueError as exc:
        raise UsageError(str(exc))


def write_embeddings_tsv(path, embeddings, labels, ids=None) -> None:
    ids = range(len(embeddings)) if ids is None else ids
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["graph_id", "label"] + [f"e{i}" for i in range(embeddings.shape[1])])
        for gid, lab, row in zip(ids, labels, embeddings):
            w.writerow([gid, "" if lab is None else lab] + [repr(float(v)) for v in row])


def read_embeddings_tsv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh, delimiter="\t"))
    if not rows or rows[0][:2] != ["graph_id", "label"]:
        raise DataError(f"{path}: not an embedding TSV (missing header)")
    try:
        ids = np.array([int(r[0]) for r in rows[1:]])
        labels = [None if r[1] == "" else int(r[1]) for r in rows[1:]]
        emb = np.array([[float(v) for v in r[2:]] for r in rows[1:]])
    except ValueError as exc:
        raise DataError(f"{path}: malformed row ({exc})")
    return ids, labels, emb


# --- subcommands ------------------------------------------------------------

def cmd_ingest(args):
    from .formats import load_tu_dataset, write_container

    graphs, meta = load_tu_dataset(args.input, args.name, normalize=not args.no_normalize)
    write_container(args.out, graphs, meta, config=_resolved(args))
    _sidecar(args.out, args)
    print(f"{meta.name}: {len(graphs)} graphs, {meta.num_classes} classes, "
          f"feature dim {meta.feature_dim} ({meta.feature_kind})")


def cmd_gen_dla(args):
    from .formats import write_container
    from .graphcore import DatasetMeta, normalize_features
    from .synth import dla_dataset

    graphs = dla_dataset(args.count, args.nodes, args.seed, tuple(_floats(args.stickiness)))
    if args.normalize:
        graphs = normalize_features(graphs)
    meta = DatasetMeta("DLA", len(_floats(args.stickiness)), 2, "continuous",
                       {"stickiness": _floats(args.stickiness)})
    write_container(args.out, graphs, meta, config=_resolved(args))
    _sidecar(args.out, args)
    print(f"DLA: {len(graphs)} graphs of {args.nodes} nodes")


def cmd_img2graph(args):
    from .formats import write_container
    from .graphcore import DatasetMeta, normalize_features
    from .synth import images_to_graphs, load_idx_images, load_idx_labels

    images = load_idx_images(args.images)
    labels = load_idx_labels(args.labels) if args.labels else None
    if labels is not None and len(labels) != len(images):
        raise DataError(f"{len(images)} images but {len(labels)} labels")
    if args.limit:
        images = images[:args.limit]
        labels = None if labels is None else labels[:args.limit]
    graphs = images_to_graphs(images, labels, args.threshold, strict=not args.inclusive)
    if args.normalize:
        graphs = normalize_features(graphs)
    n_cls = 0 if labels is None else int(np.unique(labels).size)
    meta = DatasetMeta(args.name, n_cls, 3, "continuous", {"threshold": args.threshold})
    write_container(args.out, graphs, meta, config=_resolved(args))
    _sidecar(args.out, args)
    print(f"{args.name}: {len(graphs)} image graphs")


def cmd_coarsen(args):
    from .coarsen import build_pyramids
    from .formats import write_container

    graphs, meta, _ = load_dataset(args.input)
    pyrs = build_pyramids(graphs, args.levels, args.ratio, args.k, workers=_threads(args))
    write_container(args.out, graphs, meta, pyramids=pyrs, config=_resolved(args))
    _sidecar(args.out, args)
    sizes = np.array([p.sizes() for p in pyrs])
    print("mean level sizes: " + " ".join(f"{v:.1f}" for v in sizes.mean(axis=0)))


def cmd_wl_sens(args):
    from .synth import TOPOLOGIES
    from .wl import edge_removal_experiment

    kinds = TOPOLOGIES if args.topology == "all" else [args.topology]
    if any(k not in TOPOLOGIES for k in kinds):
        raise UsageError(f"unknown topology {args.topology!r}")
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "depth", "removed", "mean_similarity"])
        for kind in kinds:
            res = edge_removal_experiment(kind, args.graphs, args.nodes, range(1, args.removals + 1),
                                          range(1, args.depths + 1), args.seed)
            for (k, d), v in sorted(res.items(), key=lambda kv: (kv[0][1], kv[0][0])):
                w.writerow([kind, d, k, f"{v:.6f}"])
    _sidecar(args.out, args)


def cmd_spectra_corr(args):
    from .coarsen import align_pyramid, build_pyramids
    from .spectral import spectra_correlation_experiment

    graphs, meta, pyrs = load_dataset(args.input)
    levels = _ints(args.levels)
    depth = max(levels)
    if pyrs is None or any(p.depth < depth for p in pyrs):
        pyrs = build_pyramids(graphs, depth, workers=_threads(args))
    pyrs = [align_pyramid(p, depth) for p in pyrs]
    res = spectra_correlation_experiment(pyrs, args.pairs, args.runs, levels, args.seed)
    header, rows = res.rows()
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    _sidecar(args.out, args)
    summary = {"dataset": meta.name, "levels": levels,
               "per_run": {str(k): v for k, v in res.per_run.items()},
               "mean": {str(k): v for k, v in res.mean.items()}}
    if args.report:
        Path(args.report).write_text(json.dumps(summary, indent=2))
        _sidecar(args.report, args)
    print(json.dumps(summary["mean"]))


def cmd_train(args):
    from .trainer import train

    graphs, meta, pyrs = load_dataset(args.input)
    hyper = _hyper_from_args(args)
    if args.mode == "wl_loukas_baseline":
        raise UsageError("mode wl_loukas_baseline has no GNN checkpoint; use `eval --mode wl_loukas_baseline`")
    model, tlog = train(graphs, hyper, args.mode, pyramids=pyrs, workers=_threads(args))
    model.save(args.model)
    _sidecar(args.model, args, feature_dim=model.feature_dim)
    if args.loss_log:
        with open(args.loss_log, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "batch", "lr", "loss"])
            step = 0
            for e, losses in enumerate(tlog.epoch_losses):
                for b, v in enumerate(losses):
                    w.writerow([e, b, f"{tlog.lrs[step]:.6e}", repr(v)])
                    step += 1
        _sidecar(args.loss_log, args)
    last = np.mean(tlog.epoch_losses[-1]) if tlog.epoch_losses else float("nan")
    print(f"trained {len(graphs)} graphs; last epoch mean loss {last:.5f}")


def cmd_embed(args):
    from .trainer import ModelParams, embed_dataset, prepare_pyramids

    graphs, meta, pyrs = load_dataset(args.input)
    model = ModelParams.load(args.model, _model_hyper(args.model))
    if graphs and graphs[0].feature_dim != model.feature_dim:
        raise ShapeError(f"dataset feature dim {graphs[0].feature_dim} != model feature dim {model.feature_dim}")
    pyrs = prepare_pyramids(graphs, model.hyper, "full", pyramids=pyrs, workers=_threads(args))
    emb = embed_dataset(model, pyrs)
    write_embeddings_tsv(args.out, emb, [g.label for g in graphs])
    _sidecar(args.out, args)
    print(f"wrote {emb.shape[0]} embeddings of length {emb.shape[1]}")


def _model_hyper(model_path):
    """Training-time hyperparameters (ratio, k) recovered from the checkpoint sidecar if present."""
    from .trainer import HyperParams

    side = Path(str(model_path) + ".config.json")
    if not side.exists():
        return None
    cfg = json.loads(side.read_text())
    keep = {k: cfg[k] for k in ("ratio", "k", "seed") if k in cfg}
    return HyperParams(**keep)


def cmd_eval(args):
    from .evaluation import evaluate, evaluate_embedder, graph_labels
    from .trainer import HyperParams

    graphs, meta, pyrs = load_dataset(args.input)
    base = HyperParams(epochs=args.epochs, seed=args.seed)
    if args.mode == "wl_loukas_baseline":
        from .graph2vec import G2VParams, baseline_embedder

        report = evaluate_embedder(baseline_embedder(graphs, workers=_threads(args)), graph_labels(graphs),
                                   [G2VParams(seed=args.seed)], args.runs, seed=args.seed, dataset=meta.name,
                                   hyper={"mode": args.mode})
    else:
        grid = parse_grid(args.grid, base)
        report = evaluate(graphs, grid, args.runs, args.mode, meta.name, args.seed, workers=_threads(args),
                          pyramids=pyrs)
    Path(args.report).write_text(json.dumps(report.to_dict(), indent=2, default=str))
    _sidecar(args.report, args)
    print(report.summary())
    print(report.note)


def cmd_transfer(args):
    from .evaluation import transfer_eval
    from .trainer import HyperParams

    ga, ma, _ = load_dataset(args.train)
    gb, mb, _ = load_dataset(args.infer)
    hyper = parse_hyper(args.model_hyper, HyperParams(epochs=args.epochs, seed=args.seed))
    rep = transfer_eval(ga, gb, hyper, args.runs, args.seed, train_name=ma.name, infer_name=mb.name,
                        workers=_threads(args))
    out = json.dumps(rep.to_dict(), indent=2, default=str)
    if args.report:
        Path(args.report).write_text(out)
        _sidecar(args.report, args)
    print(f"{ma.name} -> {mb.name}: mean accuracy {100 * rep.mean:.1f}")


def cmd_neighbors(args):
    from .evaluation import nearest_neighbors

    ids, _, emb = read_embeddings_tsv(args.emb)
    queries = _ints(args.query)
    try:
        res = nearest_neighbors(emb, queries, args.k, ids)
    except KeyError as exc:
        raise DataError(str(exc))
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query", "rank", "neighbor", "distance"])
        for q, lst in zip(queries, res):
            for r, (nid, dist) in enumerate(lst, start=1):
                w.writerow([q, r, nid, repr(dist)])
    _sidecar(args.out, args)


def cmd_probe(args):
    from .oracles import continuity_probe
    from .trainer import ModelParams

    graphs, meta, _ = load_dataset(args.input)
    if not 0 <= args.graph < len(graphs):
        raise UsageError(f"graph index {args.graph} outside 0..{len(graphs) - 1}")
    model = ModelParams.load(args.model, _model_hyper(args.model))
    res = continuity_probe(model, graphs[args.graph], _floats(args.eps), args.draws, args.seed)
    lines = ["eps,deviation"] + [f"{e!r},{v!r}" for e, v in res.items()]
    if args.out:
        Path(args.out).write_text("\n".join(lines) + "\n")
        _sidecar(args.out, args)
    print("\n".join(lines))


# --- parser -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: usage: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hg2v", description="Hierarchical graph embeddings: data tools, training and evaluation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=func)
        sp.add_argument("--threads", type=int, default=None, help="worker count (default: HG2V_THREADS or 1)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("-v", "--verbose", action="count", default=0)
        return sp

    sp = add("ingest", cmd_ingest, "convert a TU-format directory into a container file")
    sp.add_argument("--tu", "--in", dest="input", required=True)
    sp.add_argument("--name", default=None)
    sp.add_argument("--no-normalize", action="store_true", help="keep raw continuous attributes")
    sp.add_argument("--out", required=True)

    sp = add("gen-dla", cmd_gen_dla, "generate the two-class aggregation dataset")
    sp.add_argument("--count", type=int, default=200)
    sp.add_argument("--nodes", type=int, default=200)
    sp.add_argument("--stickiness", default="1.0,0.05")
    sp.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--out", required=True)

    sp = add("img2graph", cmd_img2graph, "convert IDX images into pixel graphs")
    sp.add_argument("--idx", "--images", dest="images", required=True)
    sp.add_argument("--labels", default=None)
    sp.add_argument("--threshold", type=float, default=0.0)
    sp.add_argument("--inclusive", action="store_true", help="keep pixels >= threshold instead of >")
    sp.add_argument("--limit", type=int, default=0)
    sp.add_argument("--name", default="images")
    sp.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--out", required=True)

    sp = add("coarsen", cmd_coarsen, "attach coarsening pyramids to a dataset")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--levels", type=int, default=3)
    sp.add_argument("--ratio", type=float, default=0.5)
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--out", required=True)

    sp = add("wl-sens", cmd_wl_sens, "WL similarity under random edge removal")
    sp.add_argument("--kind", "--topology", dest="topology", default="all", help="cycle, tree3, wheel, ladder or all")
    sp.add_argument("--graphs", type=int, default=100)
    sp.add_argument("--nodes", type=int, default=500)
    sp.add_argument("--removals", type=int, default=10)
    sp.add_argument("--depths", type=int, default=5)
    sp.add_argument("--out", required=True)

    sp = add("spectra-corr", cmd_spectra_corr, "correlation of spectral distances across coarsening levels")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--pairs", type=int, default=1000)
    sp.add_argument("--runs", type=int, default=10)
    sp.add_argument("--levels", default="1,2")
    sp.add_argument("--out", required=True)
    sp.add_argument("--report", default=None)

    sp = add("train", cmd_train, "unsupervised training")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--d", type=int, default=16)
    sp.add_argument("--a", type=int, default=2)
    sp.add_argument("--levels", type=int, default=3)
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--batch", type=int, default=8)
    sp.add_argument("--lr", type=float, default=1e-3)
    sp.add_argument("--ratio", type=float, default=0.5)
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--mode", choices=["full", "no_coarsen", "wl_loukas_baseline"], default="full")
    sp.add_argument("--model", required=True)
    sp.add_argument("--loss-log", default=None)

    sp = add("embed", cmd_embed, "embed a dataset with a trained model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", required=True)

    sp = add("eval", cmd_eval, "classification protocol with repeated splits")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--grid", default="default", help='"default" or "d=16,a=2,L=3;d=128,a=2,L=3"')
    sp.add_argument("--runs", type=int, default=10)
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--mode", choices=["full", "no_coarsen", "wl_loukas_baseline"], default="full")
    sp.add_argument("--report", required=True)

    sp = add("transfer", cmd_transfer, "train on one dataset, classify another")
    sp.add_argument("--train", required=True)
    sp.add_argument("--infer", required=True)
    sp.add_argument("--model-hyper", default="d=16,a=2,L=3")
    sp.add_argument("--runs", type=int, default=10)
    sp.add_argument("--epochs", type=int, default=10)
    sp.add_argument("--report", default=None)

    sp = add("neighbors", cmd_neighbors, "nearest neighbors in embedding space")
    sp.add_argument("--emb", required=True)
    sp.add_argument("--query", required=True)
    sp.add_argument("--k", type=int, default=6)
    sp.add_argument("--out", required=True)

    sp = add("probe", cmd_probe, "feature-perturbation continuity probe")
    sp.add_argument("--model", required=True)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--graph", type=int, default=0)
    sp.add_argument("--eps", default="1e-1,1e-2,1e-3,1e-4")
    sp.add_argument("--draws", type=int, default=20)
    sp.add_argument("--out", default=None)
    return p


def dispatch(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_help()
        return EXIT_USAGE
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    try:
        log.info("config %s", json.dumps(_resolved(args), sort_keys=True, default=str))
        args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: numerical: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    log.info("%s finished in %.1fs", args.command, time.perf_counter() - t0)
    return 0


def main() -> None:
    sys.exit(dispatch())
