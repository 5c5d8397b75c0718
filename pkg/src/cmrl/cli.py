"""Command-line surface: dataset generation, training, evaluation, protocols.

Every command validates its flags, runs, and persists its fully resolved
configuration beside its outputs so any result can be reproduced from disk.
Exit codes: 0 success, 2 usage or validation error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import reporting
from .disentangle import GumbelConfig
from .graphs import DatasetError, load_dataset, save_dataset, scaffold_ood_split, SplitPlan
from .model import build_model, load_checkpoint, ModelConfig, toy_batch
from .synthetic import BiasedPairConfig, bias_of, make_dataset
from .tensor import NumericsError
from .training import (
    bias_sweep,
    cross_validate,
    DEFAULT_SWEEP_LEVELS,
    evaluate,
    random_holdout_split,
    sweep_data_config,
    synthetic_default_config,
    train,
    TrainConfig,
    TrainingDiverged,
)

log = logging.getLogger("cmrl")


def _load_config(path: str | None, overrides: dict) -> TrainConfig:
    doc = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(doc) - known
    if unknown:
        raise DatasetError(f"config {path}: unknown keys {sorted(unknown)}")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**doc)


def _write_config_beside(doc: dict, out_path: str) -> None:
    if os.path.isdir(out_path) or out_path.endswith(os.sep):
        target = os.path.join(out_path, "config.json")
    else:
        target = out_path + ".config.json"
    os.makedirs(os.path.dirname(target) or ".", exist_ok=True)
    reporting.write_json(doc, target)


def _cmd_gen_synthetic(args) -> int:
    cfg = BiasedPairConfig(
        bias=args.bias,
        n_graphs_per_combo=args.graphs_per_combo,
        n_pos_pairs_per_shortcut=args.pairs_per_shortcut,
        n_neg_pairs_per_shortcut=args.pairs_per_shortcut,
    )
    rng = np.random.default_rng(np.random.SeedSequence([args.seed, 77]))
    dataset = make_dataset(cfg, rng)
    save_dataset(dataset, args.out)
    _write_config_beside({**dataclasses.asdict(cfg), "seed": args.seed}, args.out)
    print(f"wrote {len(dataset.pairs)} pairs over {len(dataset.graphs)} graphs "
          f"(bias {bias_of(dataset):.4f}) to {args.out}")
    return 0


def _load_split(args, n: int, seed: int) -> SplitPlan:
    if getattr(args, "split", None):
        with open(args.split, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        return SplitPlan(
            train=doc["train"], valid=doc["valid"], test=doc["test"],
            mode=doc.get("mode", "file"), meta=doc.get("meta", {}),
        )
    return random_holdout_split(n, seed)


def _cmd_train(args) -> int:
    cfg = _load_config(args.config, {"seed": args.seed, "task": args.task})
    dataset = load_dataset(args.data)
    if cfg.task != dataset.task:
        raise DatasetError(
            f"config task {cfg.task!r} does not match dataset task {dataset.task!r}"
        )
    split = _load_split(args, len(dataset), cfg.seed)
    report = train(dataset, split, cfg, out_dir=args.out)
    print(f"best epoch {report.best_epoch}; test metrics: "
          f"{json.dumps(report.test, sort_keys=True)}")
    return 0


def _cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    with open(os.path.join(args.run, "config.json"), "r", encoding="utf-8") as fh:
        cfg = TrainConfig(**json.load(fh))
    model_cfg = ModelConfig(
        feature_width=dataset.feature_width,
        task=cfg.task,
        edge_feature_width=dataset.edge_feature_width,
        hidden_dim=cfg.hidden_dim,
        encoder_layers=cfg.encoder_layers,
        encoder_variant=cfg.encoder_variant,
        set2set_steps=cfg.set2set_steps,
        head_layers=cfg.head_layers,
    )
    state = build_model(model_cfg, np.random.default_rng(0))
    load_checkpoint(state, os.path.join(args.run, "checkpoint.bin"))
    metrics = evaluate(state, dataset.pairs, cfg.task,
                       head=cfg.predict_head, temperature=cfg.temperature)
    out = {"metrics": metrics, "n_pairs": len(dataset.pairs)}
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        reporting.write_json(out, os.path.join(args.out, "eval.json"))
        _write_config_beside(dataclasses.asdict(cfg), args.out + os.sep)
        if args.dump_interactions:
            _dump_interactions(state, dataset, args.out, cfg)
    print(json.dumps(out, sort_keys=True))
    return 0


def _dump_interactions(state, dataset, out_dir, cfg) -> None:
    from .disentangle import export_importances, gumbel_sigmoid, importance
    from .model import forward_pair

    gcfg = GumbelConfig(temperature=cfg.temperature, mode="deterministic")
    imap_dir = os.path.join(out_dir, "interactions")
    os.makedirs(imap_dir, exist_ok=True)
    imp_path = os.path.join(out_dir, "importances.txt")
    if os.path.exists(imp_path):
        os.remove(imp_path)
    for sample in dataset.pairs:
        fwd = forward_pair(state, sample.g1, sample.g2, gcfg)
        reporting.dump_interaction_map(
            fwd.emb.imap.data, os.path.join(imap_dir, f"{sample.pair_id}.txt")
        )
        export_importances(imp_path, sample.g1.graph_id, fwd.dis)


def _cmd_cv(args) -> int:
    cfg = _load_config(args.config, {"seed": args.seed, "task": args.task})
    dataset = load_dataset(args.data)
    if cfg.task != dataset.task:
        raise DatasetError(
            f"config task {cfg.task!r} does not match dataset task {dataset.task!r}"
        )
    result = cross_validate(dataset, cfg, k=args.k, repeats=args.repeats)
    os.makedirs(args.out, exist_ok=True)
    reporting.write_json(result, os.path.join(args.out, "cv.json"))
    reporting.write_json(result["config"], os.path.join(args.out, "config.json"))
    reporting.write_cv_csv(result, os.path.join(args.out, "cv.csv"))
    print(json.dumps(result["aggregate"], sort_keys=True))
    return 0


def _cmd_ood_split(args) -> int:
    dataset = load_dataset(args.data)
    plan = scaffold_ood_split(dataset, c=args.scaffold_c,
                              valid_fraction=args.valid_fraction, seed=args.seed)
    doc = {"train": plan.train, "valid": plan.valid, "test": plan.test,
           "mode": plan.mode, "meta": plan.meta}
    reporting.write_json(doc, args.out)
    _write_config_beside({"scaffold_c": args.scaffold_c, "seed": args.seed,
                          "valid_fraction": args.valid_fraction, "data": args.data}, args.out)
    print(f"train={len(plan.train)} valid={len(plan.valid)} test={len(plan.test)}")
    return 0


def _cmd_bias_sweep(args) -> int:
    levels = [float(x) for x in args.levels.split(",")] if args.levels else list(DEFAULT_SWEEP_LEVELS)
    if args.config:
        cfg = _load_config(args.config, {"seed": args.seed})
    else:
        cfg = synthetic_default_config(seed=args.seed if args.seed is not None else 0)
        if args.epochs is not None:
            cfg = dataclasses.replace(cfg, max_epochs=args.epochs)
    seeds = list(range(args.n_seeds))
    data_cfg = sweep_data_config(levels[0])
    if args.graphs_per_combo is not None or args.pairs_per_shortcut is not None:
        data_cfg = BiasedPairConfig(
            bias=levels[0],
            n_graphs_per_combo=args.graphs_per_combo or data_cfg.n_graphs_per_combo,
            n_pos_pairs_per_shortcut=args.pairs_per_shortcut or data_cfg.n_pos_pairs_per_shortcut,
            n_neg_pairs_per_shortcut=args.pairs_per_shortcut or data_cfg.n_neg_pairs_per_shortcut,
        )
    sweep = bias_sweep(levels, cfg, seeds=seeds, data_cfg=data_cfg)
    os.makedirs(args.out, exist_ok=True)
    reporting.write_json(sweep, os.path.join(args.out, "sweep.json"))
    reporting.write_json(sweep["config"], os.path.join(args.out, "config.json"))
    reporting.render_sweep_figures(sweep, args.out)
    print(json.dumps({"gap": sweep["gap"]}, sort_keys=True))
    return 0


def _cmd_gradcheck(args) -> int:
    from .objectives import full_loss_gradcheck

    samples, state = toy_batch(seed=0)
    err = full_loss_gradcheck(samples, state, eps=args.eps)
    print(f"gradcheck max relative error: {err:.3e}")
    return 0 if err < 1e-4 else 1


def _cmd_report(args) -> int:
    path = args.data
    if os.path.isdir(path):
        with open(os.path.join(path, "report.json"), "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        written = reporting.render_run_figures(doc, args.out)
    else:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        if "cells" in doc:
            written = reporting.render_sweep_figures(doc, args.out)
        else:
            written = reporting.render_run_figures(doc, args.out)
    print(f"wrote {len(written)} figure(s) to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a biased synthetic pair dataset")
    p.add_argument("--bias", type=float, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--graphs-per-combo", type=int, default=2000)
    p.add_argument("--pairs-per-shortcut", type=int, default=10000)
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("train", help="train on a pair dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--task", choices=("regression", "classification"))
    p.add_argument("--split", help="split-plan JSON (e.g. from ood-split)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True, help="training output directory")
    p.add_argument("--out")
    p.add_argument("--dump-interactions", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("cv", help="repeated k-fold cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int)
    p.add_argument("--task", choices=("regression", "classification"))
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("ood-split", help="scaffold-based OOD split plan")
    p.add_argument("--data", required=True)
    p.add_argument("--scaffold-c", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--valid-fraction", type=float, default=0.5)
    p.set_defaults(func=_cmd_ood_split)

    p = sub.add_parser("bias-sweep", help="train full/no-causal across bias levels")
    p.add_argument("--levels", help="comma-separated bias levels")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--n-seeds", type=int, default=3)
    p.add_argument("--graphs-per-combo", type=int)
    p.add_argument("--pairs-per-shortcut", type=int)
    p.set_defaults(func=_cmd_bias_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check on the builtin toy batch")
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("report", help="render figures for a run or sweep")
    p.add_argument("--data", required=True, help="run directory or sweep.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingDiverged, NumericsError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
