"""Command-line entry point: ``adagcn train|eval|gen-synth|sweep|export``.

Exit codes: 0 success, 2 invalid input or configuration, 3 training diverged.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data import (SyntheticConfig, apply_controls, generate_pair, load_network, prepare_pair,
                   save_pair)
from .graph import ConfigError, GraphDataError, reindex_attributes, renormalized_filter
from .metrics import export_embeddings, macro_f1, micro_f1, threshold_predict
from .model import load_checkpoint, predict_scores, save_checkpoint
from .trainer import TrainConfig, TrainingError, evaluate_during_training, train

log = logging.getLogger("adagcn")

EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3

# flag name -> TrainConfig field
CONFIG_FLAGS = {
    "lambda": "lam", "gamma": "gamma", "nd": "n_d", "ni": "n_i", "epochs": "epochs",
    "seed": "seed", "mode": "mode", "variant": "variant", "dropout": "dropout",
    "lr_critic": "lr_critic", "lr_generator": "lr_generator", "weight_decay": "weight_decay",
    "widths": "widths", "eval_every": "eval_every", "decay_start": "decay_start",
    "decay_period": "decay_period", "decay_factor": "decay_factor", "activation": "activation",
    "output_activation": "output_activation", "critic_hidden": "critic_hidden",
    "critic_activation": "critic_activation",
}
CONTROL_KEYS = ("source_rate", "target_rate", "common_attr_rate")
INT_KEYS = {"nd", "ni", "epochs", "seed", "eval_every", "decay_start", "decay_period",
            "critic_hidden"}
GRID_ALIASES = {"ra": "common_attr_rate", "lam": "lambda", "n_d": "nd", "n_i": "ni"}


class UsageError(Exception):
    pass


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _csv_floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(","))


def _csv_ints(text: str) -> tuple:
    return tuple(int(t) for t in text.split(","))


# -- shared argument groups ----------------------------------------------------

def add_data_args(p: argparse.ArgumentParser, required: bool = True):
    g = p.add_argument_group("data")
    g.add_argument("--source-edges", required=required)
    g.add_argument("--source-feats", required=required)
    g.add_argument("--source-labels", required=required)
    g.add_argument("--target-edges", required=required)
    g.add_argument("--target-feats", required=required)
    g.add_argument("--target-labels", help="ground truth; used for training only with --target-rate")


def add_config_args(p: argparse.ArgumentParser):
    g = p.add_argument_group("training")
    g.add_argument("--variant", choices=["gcn", "igcn"])
    g.add_argument("--lambda", dest="lambda", type=float)
    g.add_argument("--gamma", type=float)
    g.add_argument("--nd", type=int)
    g.add_argument("--ni", type=int)
    g.add_argument("--epochs", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--mode", choices=["multi-label", "multi-class"])
    g.add_argument("--dropout", type=float)
    g.add_argument("--lr-critic", type=float)
    g.add_argument("--lr-generator", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--widths", type=_csv_ints, help="comma-separated layer widths")
    g.add_argument("--eval-every", type=int)
    g.add_argument("--decay-start", type=int)
    g.add_argument("--decay-period", type=int)
    g.add_argument("--decay-factor", type=float)
    g.add_argument("--activation")
    g.add_argument("--output-activation")
    g.add_argument("--critic-hidden", type=int)
    g.add_argument("--critic-activation")
    g.add_argument("--source-rate", type=float)
    g.add_argument("--target-rate", type=float)
    g.add_argument("--common-attr-rate", type=float)
    g.add_argument("--threads", type=int, default=1,
                   help="BLAS threads; >1 may break bitwise reproducibility")


def config_from_args(args, overrides: dict | None = None) -> TrainConfig:
    values = {}
    for flag, fld in CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[fld] = v
    for flag, v in (overrides or {}).items():
        if flag in CONFIG_FLAGS:
            values[CONFIG_FLAGS[flag]] = v
    return TrainConfig(**values)


def controls_from_args(args) -> dict:
    return {k: getattr(args, k, None) for k in CONTROL_KEYS}


def data_paths(args) -> dict:
    keys = ("source_edges", "source_feats", "source_labels", "target_edges", "target_feats",
            "target_labels")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None)}


def load_pair(paths: dict, controls: dict, seed: int):
    for k, p in paths.items():
        if not Path(p).is_file():
            raise UsageError(f"--{k.replace('_', '-')}: no such file {p}")
    source = load_network(paths["source_edges"], paths["source_feats"], paths["source_labels"])
    target = load_network(paths["target_edges"], paths["target_feats"], paths.get("target_labels"))
    return prepare_pair(source, target, source_rate=controls.get("source_rate"),
                        target_rate=controls.get("target_rate"),
                        common_rate=controls.get("common_attr_rate"), seed=seed)


def _limit_threads(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        log.warning("threadpoolctl unavailable; BLAS thread count left unchanged")
        return None
    return threadpool_limits(limits=n)


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _checkpoint_meta(pair, config: TrainConfig) -> dict:
    return {"union_vocab": pair.union_vocab, "mode": config.mode,
            "num_labels": pair.num_labels,
            "target_labeled": [int(i) for i in pair.target.labeled]}


# -- train -----------------------------------------------------------------------

def run_training(config: TrainConfig, paths: dict, controls: dict, out: Path,
                 command: str = "train") -> int:
    out.mkdir(parents=True, exist_ok=True)
    paths = {k: str(Path(v).resolve()) for k, v in paths.items()}
    pair = load_pair(paths, controls, config.seed)
    manifest = {
        "tool": "adagcn", "version": __version__, "command": command,
        "config": config.to_dict(), "seed": config.seed, "controls": controls,
        "data": {k: str(v) for k, v in paths.items()},
        "digests": {k: sha256(v) for k, v in paths.items()},
        "artifacts": {"checkpoint": "checkpoint.bin", "history": "history.jsonl"},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    try:
        params, history = train(pair, config)
    except TrainingError as err:
        if err.params is not None:
            save_checkpoint(out / "last_good.bin", err.params, _checkpoint_meta(pair, config))
        print(f"training diverged: {err}; last finite parameters in {out / 'last_good.bin'}",
              file=sys.stderr)
        return EXIT_DIVERGED
    save_checkpoint(out / "checkpoint.bin", params, _checkpoint_meta(pair, config))
    _write_jsonl(out / "history.jsonl", history.records())
    if history.snapshots:
        print(json.dumps(history.snapshots[-1], sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    if args.manifest:
        manifest = json.loads(Path(args.manifest).read_text())
        config = TrainConfig(**manifest["config"])
        paths = manifest["data"]
        for k, digest in manifest.get("digests", {}).items():
            if not Path(paths[k]).is_file() or sha256(paths[k]) != digest:
                raise UsageError(f"input {paths[k]} is missing or changed since the manifest")
        controls = manifest["controls"]
    else:
        missing = [k for k in ("source_edges", "source_feats", "source_labels",
                               "target_edges", "target_feats") if not getattr(args, k)]
        if missing:
            raise UsageError("missing " + ", ".join("--" + m.replace("_", "-") for m in missing))
        config = config_from_args(args)
        paths = data_paths(args)
        controls = controls_from_args(args)
    if not args.out:
        raise UsageError("--out is required")
    return run_training(config, paths, controls, Path(args.out))


# -- eval / export -------------------------------------------------------------

def _load_target_for_checkpoint(args, meta):
    vocab = meta["union_vocab"]
    target = load_network(args.target_edges, args.target_feats, args.target_labels)
    if args.source_edges or args.source_feats:
        source = load_network(args.source_edges, args.source_feats, args.source_labels)
        union = sorted(set(source.attribute_vocab) | set(target.attribute_vocab))
        if union != vocab:
            raise UsageError(f"data has {len(union)} attributes; checkpoint expects {len(vocab)}")
    unknown = set(target.attribute_vocab) - set(vocab)
    if unknown:
        raise UsageError(f"target has {len(unknown)} attributes unknown to the checkpoint "
                         f"(width mismatch), e.g. {sorted(unknown)[:3]}")
    target = reindex_attributes(target, vocab)
    target.num_labels = max(target.num_labels, meta["num_labels"])
    return target


def evaluate_checkpoint(checkpoint, target, meta, split: str = "all") -> dict:
    params, _ = load_checkpoint(checkpoint)
    mode = meta["mode"]
    nodes = target.truth_nodes()
    if split == "target-unlabeled-only":
        nodes = np.setdiff1d(nodes, np.asarray(meta["target_labeled"], dtype=np.int64))
    if len(nodes) == 0:
        raise UsageError("no target nodes with ground-truth labels to score")
    scores = predict_scores(params, renormalized_filter(target), target.features, mode)[nodes]
    pred = threshold_predict(scores, mode)
    truth = [target.labels[i] for i in nodes]
    return {"micro_f1": micro_f1(pred, truth, meta["num_labels"]),
            "macro_f1": macro_f1(pred, truth, meta["num_labels"]), "nodes": int(len(nodes))}


def cmd_eval(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"no checkpoint at {args.checkpoint}")
    if not args.target_labels:
        raise UsageError("--target-labels is required for evaluation")
    _, meta = load_checkpoint(args.checkpoint)
    target = _load_target_for_checkpoint(args, meta)
    print(json.dumps(evaluate_checkpoint(args.checkpoint, target, meta, args.split),
                     sort_keys=True))
    return EXIT_OK


def cmd_export(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"no checkpoint at {args.checkpoint}")
    params, meta = load_checkpoint(args.checkpoint)
    pair = load_pair(data_paths(args), {}, 0)
    if pair.union_vocab != meta["union_vocab"]:
        raise UsageError("data attributes do not match the checkpoint")
    export_embeddings(params, pair, args.out)
    return EXIT_OK


# -- synthetic data ------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    cfg = SyntheticConfig(nodes=args.nodes, num_labels=args.labels, p_in=args.p_in,
                          p_out=args.p_out, signature=args.signature, noise=args.noise,
                          q_sig=args.q_sig, q_noise=args.q_noise, common_rate=args.ra,
                          overlap=args.overlap, seed=args.seed)
    pair = generate_pair(cfg)
    out = Path(args.out)
    paths = save_pair(pair, out)
    manifest = {"tool": "adagcn", "version": __version__, "command": "gen-synth",
                "config": cfg.to_dict(), "requested_rate": cfg.common_rate,
                "achieved_rate": pair.common_attribute_rate(),
                "files": {k: p.name for k, p in paths.items()},
                "digests": {k: sha256(p) for k, p in paths.items()}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(json.dumps({"achieved_rate": manifest["achieved_rate"]}))
    return EXIT_OK


# -- sweeps ---------------------------------------------------------------------

def parse_grid(items: list[str]) -> dict[str, list]:
    """``name=v1,v2,...`` or ``name=start:stop:step`` (inclusive) per axis."""
    grid = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"bad grid axis {item!r}")
        name, values = item.split("=", 1)
        name = GRID_ALIASES.get(name.strip(), name.strip()).replace("-", "_")
        if name not in CONFIG_FLAGS and name not in CONTROL_KEYS:
            raise UsageError(f"unknown grid axis {name!r}")
        if ":" in values:
            start, stop, step = (float(x) for x in values.split(":"))
            if step <= 0:
                raise UsageError(f"grid step must be positive in {item!r}")
            count = int(np.floor((stop - start) / step + 1e-9)) + 1
            vals = [round(start + k * step, 10) for k in range(count)]
        else:
            vals = [float(x) for x in values.split(",") if x.strip()]
        if not vals:
            raise UsageError(f"empty grid axis {name!r}")
        grid[name] = [int(v) for v in vals] if name in INT_KEYS else vals
    return grid


def _run_cell(task) -> dict:
    cell, seed, base, paths, controls = task
    overrides = {**cell, "seed": seed}
    values = {**base, **{CONFIG_FLAGS[k]: v for k, v in overrides.items() if k in CONFIG_FLAGS}}
    config = TrainConfig(**values)
    ctrl = {**controls, **{k: v for k, v in cell.items() if k in CONTROL_KEYS}}
    pair = load_pair(paths, ctrl, seed)
    params, _ = train(pair, config)
    snap = evaluate_during_training(params, pair, config.mode)
    if snap is None:
        raise UsageError("sweeps need target ground-truth labels (--target-labels)")
    return {**cell, "seed": seed, **snap}


def cmd_sweep(args) -> int:
    if not args.grid:
        raise UsageError("empty grid: give at least one --grid")
    grid = parse_grid(args.grid)
    base = config_from_args(args).to_dict()
    if args.variant is None and "ni" in grid:
        base["variant"] = "igcn"
    paths = data_paths(args)
    controls = controls_from_args(args)
    seeds = list(args.seeds)
    axes = list(grid)
    cells = [dict(zip(axes, combo)) for combo in itertools.product(*grid.values())]
    tasks = [(cell, s, base, paths, controls) for cell in cells for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_run_cell, tasks))
    else:
        rows = [_run_cell(t) for t in tasks]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fields = ["kind", *axes, "seed", "micro_f1", "macro_f1", "micro_f1_std", "macro_f1_std", "runs"]
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({"kind": "run", **{a: r[a] for a in axes}, "seed": r["seed"],
                        "micro_f1": repr(r["micro_f1"]), "macro_f1": repr(r["macro_f1"])})
        for cell in cells:
            runs = [r for r in rows if all(r[a] == cell[a] for a in axes)]
            mi = np.array([r["micro_f1"] for r in runs])
            ma = np.array([r["macro_f1"] for r in runs])
            w.writerow({"kind": "mean", **cell, "seed": "", "micro_f1": repr(float(mi.mean())),
                        "macro_f1": repr(float(ma.mean())), "micro_f1_std": repr(float(mi.std())),
                        "macro_f1_std": repr(float(ma.std())), "runs": len(runs)})
    manifest = {"tool": "adagcn", "version": __version__, "command": "sweep", "grid": grid,
                "seeds": seeds, "base_config": base, "controls": controls,
                "data": {k: str(v) for k, v in paths.items()},
                "digests": {k: sha256(v) for k, v in paths.items()}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adagcn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a source/target pair")
    add_data_args(p, required=False)
    add_config_args(p)
    p.add_argument("--out")
    p.add_argument("--manifest", help="replay the run recorded in this manifest")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on the target network")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target-edges", required=True)
    p.add_argument("--target-feats", required=True)
    p.add_argument("--target-labels")
    p.add_argument("--source-edges")
    p.add_argument("--source-feats")
    p.add_argument("--source-labels")
    p.add_argument("--split", choices=["all", "target-unlabeled-only"], default="all")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-synth", help="write a synthetic source/target dataset")
    d = SyntheticConfig()
    p.add_argument("--out", required=True)
    p.add_argument("--nodes", type=int, default=d.nodes)
    p.add_argument("--labels", type=int, default=d.num_labels)
    p.add_argument("--p-in", type=float, default=d.p_in)
    p.add_argument("--p-out", type=float, default=d.p_out)
    p.add_argument("--signature", type=int, default=d.signature)
    p.add_argument("--noise", type=int, default=d.noise)
    p.add_argument("--q-sig", type=_csv_floats, default=d.q_sig, help="source,target")
    p.add_argument("--q-noise", type=_csv_floats, default=d.q_noise, help="source,target")
    p.add_argument("--ra", type=float, default=d.common_rate)
    p.add_argument("--overlap", type=float, default=d.overlap)
    p.add_argument("--seed", type=int, default=d.seed)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("sweep", help="grid of training runs aggregated into a CSV")
    add_data_args(p)
    add_config_args(p)
    p.add_argument("--grid", action="append", default=[],
                   help="e.g. ni=0,1,5,10,25 or lambda=0.4:2.0:0.4; repeat for more axes")
    p.add_argument("--seeds", type=_csv_ints, default=(0,))
    p.add_argument("--jobs", type=int, default=1, help="parallel runs (processes)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("export", help="write node embeddings as TSV")
    p.add_argument("--checkpoint", required=True)
    add_data_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    limiter = _limit_threads(getattr(args, "threads", 1) or 1)
    try:
        return args.func(args)
    except (UsageError, ConfigError, GraphDataError, ValueError, OSError) as err:
        print(f"adagcn {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


if __name__ == "__main__":
    sys.exit(main())
