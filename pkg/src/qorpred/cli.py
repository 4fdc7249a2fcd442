"""``qor`` command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import gradcheck as gc
from .bundle import load_bundle, save_bundle
from .circuit import load_graph
from .config import GRAPH_EXTRACTORS, SEQ_EXTRACTORS, load_run_config, parse_pairs
from .corpus import load_corpus
from .datagen import SynthSpec, gen_corpus
from .errors import ConfigError, ParameterError, QorError, TokenError
from .model import evaluate, label_stats, predict, split_dataset, train, write_history
from .rng import default_seed, make_rng
from .sequence import parse_sequence

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

BUNDLE_FILE = "model.qorf"
HISTORY_FILE = "history.csv"
MANIFEST_FILE = "manifest.txt"
SCATTER_FILE = "scatter.tsv"
BENCH_TABLE = "bench.txt"
BENCH_CELLS = "bench_cells.tsv"
BENCH_RUNS = "bench_runs.tsv"

# flag name -> RunConfig key
RUN_FLAGS = {
    "seq_extractor": str,
    "graph_extractor": str,
    "dropout": float,
    "lr": float,
    "batch_size": int,
    "epochs": int,
    "seed": int,
    "seeds": int,
    "corpus": str,
    "out": str,
}


class UsageError(QorError):
    pass


def _add_run_flags(p, keys=RUN_FLAGS):
    p.add_argument("--config", help="key=value run config file")
    for key in keys:
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=RUN_FLAGS[key], default=None)
    p.add_argument("--symmetrize-edges", dest="symmetrize_edges", action="store_const",
                   const="true", default=None)
    p.add_argument("--set", dest="extra", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key")


def _run_config(args):
    """Flags override the config file, which overrides QOR_SEED and the defaults."""
    overrides = {}
    file_pairs = parse_pairs(Path(args.config).read_text(encoding="utf-8")) if args.config else {}
    if "seed" not in file_pairs:
        overrides["seed"] = str(default_seed())
    for item in args.extra:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    for key in list(RUN_FLAGS) + ["symmetrize_edges"]:
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = str(value)
    return load_run_config(args.config, overrides)


def _require(value, flag):
    if not value:
        raise UsageError(f"{flag} is required")
    return value


def _out_dir(path):
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------

def cmd_gen(args):
    seed = default_seed() if args.seed is None else args.seed
    try:
        spec = SynthSpec(circuits=args.circuits, min_nodes=args.min_nodes, max_nodes=args.max_nodes,
                         seqs=args.seqs, seq_len=args.seq_len, seed=seed, noise=args.noise)
    except ParameterError as exc:
        raise UsageError(str(exc)) from None
    corpus = gen_corpus(spec, _out_dir(args.out))
    print(f"wrote {len(corpus.records)} records over {len(corpus.graphs)} circuits to {args.out}")
    return EXIT_OK


def write_manifest(path, cfg, corpus, bundle):
    """Run config (loadable with ``--config``) plus provenance comment lines."""
    lines = [
        f"# corpus_checksum={corpus.checksum}",
        f"# model_fingerprint={cfg.model_config().fingerprint().hex()}",
        f"# label_mean={bundle.label_mean!r}",
        f"# label_std={bundle.label_std!r}",
    ]
    Path(path).write_text(cfg.to_text() + "\n".join(lines) + "\n", encoding="utf-8")


def _scatter(path, result, bundle):
    raw_targets = bundle.denormalize(result.targets)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("target\tprediction\n")
        for t, p in zip(raw_targets, result.predictions_raw):
            fh.write(f"{float(t)!r}\t{float(p)!r}\n")


def cmd_train(args):
    cfg = _run_config(args)
    corpus = load_corpus(_require(cfg.corpus, "--corpus"))
    out = _out_dir(_require(cfg.out, "--out"))

    def progress(s):
        if not args.quiet:
            print(f"epoch {s.epoch:3d}  loss {s.train_loss:.4f}  train_mae {s.train_mae:.4f}"
                  f"  val_mae {s.val_mae:.4f}  ({s.seconds:.1f}s)", flush=True)

    result = train(corpus, cfg, progress=progress)
    save_bundle(result.bundle, out / BUNDLE_FILE)
    write_history(result.history, out / HISTORY_FILE)
    write_manifest(out / MANIFEST_FILE, cfg, corpus, result.bundle)
    if result.split.test:
        test = evaluate(result.bundle, corpus, result.split.test)
        _scatter(out / SCATTER_FILE, test, result.bundle)
        print(f"test_mae={test.mae!r} test_mae_nodes={test.mae_raw!r} best_epoch={result.best_epoch}")
    print(f"wrote {out / BUNDLE_FILE}")
    return EXIT_OK


def cmd_eval(args):
    bundle = load_bundle(args.bundle)
    corpus = load_corpus(args.corpus)
    if args.split == "all":
        indices = None
    else:
        split = split_dataset(corpus, rng=make_rng(bundle.seed))
        indices = getattr(split, args.split)
    result = evaluate(bundle, corpus, indices)
    print(f"split={args.split} records={len(result.predictions)} mae={result.mae!r} "
          f"mae_nodes={result.mae_raw!r}")
    if args.scatter:
        _scatter(args.scatter, result, bundle)
    return EXIT_OK


def cmd_predict(args):
    seq = parse_sequence(args.seq)
    bundle = load_bundle(args.bundle)
    if args.config:
        expected = load_run_config(args.config).model_config()
        if expected.fingerprint() != bundle.config.fingerprint():
            raise QorError("bundle was built for a different model config")
    if len(seq) != bundle.config.seq_len:
        raise UsageError(f"sequence has {len(seq)} tokens; bundle expects {bundle.config.seq_len}")
    g = load_graph(args.graph)
    value = predict(bundle, g, seq)
    print(f"prediction={value!r} normalized={float(bundle.normalize(value))!r}")
    return EXIT_OK


def cmd_gradcheck(args):
    names = args.only or list(gc.CHECKS)
    unknown = [n for n in names if n not in gc.CHECKS]
    if unknown:
        raise UsageError(f"unknown check {unknown[0]!r}")
    failed = 0
    t0 = time.perf_counter()
    for r in gc.run_all(names, args.seed):
        status = "ok" if r.ok else "FAIL"
        failed += not r.ok
        print(f"{r.name:28s} worst_rel_err={r.worst:.3e} entries={r.entries:4d} {status}", flush=True)
    print(f"{len(names)} checks, {failed} failed, tolerance {gc.TOLERANCE:g}, "
          f"{time.perf_counter() - t0:.1f}s")
    return EXIT_OK if failed == 0 else EXIT_RUNTIME


# --------------------------------------------------------------------------
# benchmark matrix

def baseline_mae(corpus, split):
    """Test MAE of predicting the training-label mean, in normalized units."""
    mu, sd = label_stats(corpus.labels(split.train))
    return math.fsum(abs(y - mu) / sd for y in corpus.labels(split.test)) / len(split.test)


def bench_cell(corpus, cfg, seq_kind, graph_kind, seeds):
    """Train one extractor pair over ``seeds``; returns per-seed (mae, baseline, seconds)."""
    runs = []
    for seed in seeds:
        cell_cfg = cfg.replace(seq_extractor=seq_kind, graph_extractor=graph_kind, seed=seed)
        t0 = time.perf_counter()
        result = train(corpus, cell_cfg)
        mae = evaluate(result.bundle, corpus, result.split.test).mae
        runs.append((mae, baseline_mae(corpus, result.split), time.perf_counter() - t0))
    return runs


def format_table(cells, seq_kinds, graph_kinds):
    header = f"{'':12s}" + "".join(f"{g:>26s}" for g in graph_kinds)
    lines = [header]
    for s in seq_kinds:
        row = f"{s:12s}"
        for g in graph_kinds:
            c = cells[(s, g)]
            if c["status"] != "ok":
                row += f"{'FAILED':>26s}"
            else:
                row += f"{c['mean']:.3f}±{c['std']:.3f} ({c['seconds']:.0f}s)".rjust(26)
        lines.append(row)
    return "\n".join(lines)


def cmd_bench(args):
    cfg = _run_config(args)
    corpus = load_corpus(_require(cfg.corpus, "--corpus"))
    out = _out_dir(_require(cfg.out, "--out"))
    seq_kinds = args.seq_kinds or list(SEQ_EXTRACTORS)
    graph_kinds = args.graph_kinds or list(GRAPH_EXTRACTORS)
    seeds = [cfg.seed + k for k in range(cfg.seeds)]
    cells, run_lines = {}, []
    for s in seq_kinds:
        for g in graph_kinds:
            try:
                runs = bench_cell(corpus, cfg, s, g, seeds)
            except QorError as exc:
                cells[(s, g)] = {"status": f"failed: {exc}"}
                print(f"{s}+{g}: FAILED ({exc})", file=sys.stderr, flush=True)
                continue
            maes = np.array([r[0] for r in runs])
            cell = {
                "status": "ok" if np.isfinite(maes).all() else "failed: non-finite MAE",
                "mean": float(maes.mean()),
                "std": float(maes.std()),
                "baseline": float(np.mean([r[1] for r in runs])),
                "seconds": float(sum(r[2] for r in runs)),
            }
            cells[(s, g)] = cell
            for seed, (mae, base, sec) in zip(seeds, runs):
                run_lines.append(f"{s}\t{g}\t{seed}\t{mae!r}\t{base!r}\t{sec:.3f}")
            print(f"{s}+{g}: mae {cell['mean']:.4f}±{cell['std']:.4f} "
                  f"baseline {cell['baseline']:.4f} ({cell['seconds']:.1f}s)", flush=True)

    table = format_table(cells, seq_kinds, graph_kinds)
    baselines = [c["baseline"] for c in cells.values() if "baseline" in c]
    footer = (f"test MAE (normalized), mean±std over seeds {seeds}; "
              f"constant-mean baseline {np.mean(baselines):.3f}" if baselines else "all cells failed")
    (out / BENCH_TABLE).write_text(table + "\n" + footer + "\n", encoding="utf-8")
    with open(out / BENCH_CELLS, "w", encoding="utf-8") as fh:
        fh.write("seq\tgraph\tstatus\tmean_mae\tstd_mae\tbaseline_mae\tseconds\n")
        for (s, g), c in cells.items():
            if c["status"] == "ok":
                fh.write(f"{s}\t{g}\tok\t{c['mean']!r}\t{c['std']!r}\t{c['baseline']!r}\t{c['seconds']:.3f}\n")
            else:
                fh.write(f"{s}\t{g}\t{c['status']}\tnan\tnan\tnan\tnan\n")
    (out / BENCH_RUNS).write_text("seq\tgraph\tseed\tmae\tbaseline_mae\tseconds\n"
                                  + "".join(line + "\n" for line in run_lines), encoding="utf-8")
    print(table)
    print(footer)
    return EXIT_OK if all(c["status"] == "ok" for c in cells.values()) else EXIT_RUNTIME


# --------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="qor", description="QoR prediction for synthesis sequences")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--circuits", type=int, default=10)
    p.add_argument("--seqs", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--min-nodes", type=int, default=30)
    p.add_argument("--max-nodes", type=int, default=80)
    p.add_argument("--seq-len", type=int, default=20)
    p.add_argument("--noise", type=float, default=0.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one model")
    _add_run_flags(p)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a bundle on a corpus")
    p.add_argument("--bundle", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--scatter", help="write target/prediction pairs here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="train every extractor pair over several seeds")
    _add_run_flags(p)
    p.add_argument("--seq-kinds", nargs="+", choices=SEQ_EXTRACTORS)
    p.add_argument("--graph-kinds", nargs="+", choices=GRAPH_EXTRACTORS)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("predict", help="predict the node count for one circuit and sequence")
    p.add_argument("--bundle", required=True)
    p.add_argument("--graph", required=True)
    p.add_argument("--seq", required=True, help="tokens, or a ';'-separated script")
    p.add_argument("--config", help="reject bundles built for a different config")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--only", nargs="+")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, TokenError) as exc:
        print(f"qor {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (QorError, OSError, UnicodeDecodeError) as exc:
        print(f"qor {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
