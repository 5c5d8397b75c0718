"""Optimization loop, evaluation metrics, cross-validation, and bias sweeps.

A run is deterministic given its seed: parameter init, batch shuffling, gate
noise, blend noise, and confounder sampling each draw from an independent
stream derived from (seed, purpose, epoch), so disabling one consumer never
shifts another.  The reported test metric always comes from the parameter
snapshot at the best validation epoch.
"""

from __future__ import annotations

import dataclasses
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .disentangle import GumbelConfig
from .encoder import encode, mlp
from .graphs import PairDataset, PairSample, SplitPlan
from .model import ModelConfig, ModelState, build_model, forward_pair, named_parameters
from .objectives import LossBreakdown, total_loss
from .synthetic import BiasedPairConfig, make_dataset
from . import tensor as T

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """A loss term went non-finite during optimization."""


@dataclass
class TrainConfig:
    hidden_dim: int = 32
    batch_size: int = 128
    max_epochs: int = 100
    lr: float = 1e-3
    lambda1: float = 1e-2
    lambda2: float = 1e-2
    temperature: float = 1.0
    k_int: int = 1
    seed: int = 0
    task: str = "classification"
    encoder_variant: str = "edge"
    encoder_layers: int = 3
    set2set_steps: int = 3
    head_layers: int = 3
    predict_head: str = "causal"
    plateau_factor: float = 0.1
    plateau_patience: int = 20
    early_stop_patience: int = 50
    share_heads: bool = False

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("loss weights must be non-negative")
        for name in ("hidden_dim", "batch_size", "max_epochs", "k_int"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0 or self.temperature <= 0:
            raise ValueError("lr and temperature must be positive")
        if self.predict_head not in ("causal", "sup"):
            raise ValueError(f"unknown predict_head {self.predict_head!r}")


def synthetic_default_config(**overrides) -> TrainConfig:
    """Defaults for the synthetic benchmark: d=32, batch 128, lr 1e-3, t=1.0,
    lambda1 = lambda2 = 1e-2, at most 100 epochs."""
    cfg = TrainConfig(
        hidden_dim=32,
        batch_size=128,
        max_epochs=100,
        lr=1e-3,
        lambda1=1e-2,
        lambda2=1e-2,
        temperature=1.0,
        task="classification",
        encoder_variant="gin",
        head_layers=2,
    )
    return replace(cfg, **overrides)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adaptive moment estimation with per-parameter step counts.

    Parameters whose grad is None this step are left untouched (their moment
    estimates do not decay), so skipping a loss term leaves its private heads
    exactly as they were.
    """

    def __init__(self, params: Sequence[tuple[str, T.Tensor]], lr: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self._m = {name: np.zeros_like(p.data) for name, p in self.params}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params}
        self._t = {name: 0 for name, _ in self.params}

    def zero_grad(self):
        for _, p in self.params:
            p.grad = None

    def step(self):
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingDiverged(f"non-finite gradient for parameter {name}")
            self._t[name] += 1
            t = self._t[name]
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1**t)
            v_hat = v / (1.0 - self.beta2**t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# metrics


def rmse(preds: np.ndarray, targets: np.ndarray) -> float:
    d = np.asarray(preds, dtype=np.float64) - np.asarray(targets, dtype=np.float64)
    return float(np.sqrt(np.mean(d * d)))


def accuracy(scores: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    pred = (np.asarray(scores) > threshold).astype(np.float64)
    return float(np.mean(pred == np.asarray(labels)))


def auroc(scores: np.ndarray, labels: np.ndarray) -> Optional[float]:
    """Rank-based AUROC with tie averaging; None when only one class present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n_pos = int(np.sum(labels == 1.0))
    n_neg = int(np.sum(labels == 0.0))
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average rank, 1-based
        i = j + 1
    rank_sum_pos = float(np.sum(ranks[labels == 1.0]))
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def predict(
    state: ModelState,
    samples: Sequence[PairSample],
    head: str = "causal",
    temperature: float = 1.0,
) -> np.ndarray:
    """Deterministic-mode predictions (logits or regression values), shape (B,).

    Per-atom encodings are cached per graph object, so shared graphs across
    pairs are encoded once.
    """
    gumbel_cfg = GumbelConfig(temperature=temperature, mode="deterministic")
    cache: dict[int, T.Tensor] = {}

    def enc(graph):
        key = id(graph)
        if key not in cache:
            cache[key] = encode(graph, state.encoder)
        return cache[key]

    rows_a, rows_b = [], []
    with_dis = head == "causal"
    for s in samples:
        fwd = forward_pair(
            state, s.g1, s.g2, gumbel_cfg,
            with_disentangle=with_dis, e1=enc(s.g1), e2=enc(s.g2),
        )
        rows_a.append(fwd.dis.z_c1 if with_dis else fwd.emb.zg1)
        rows_b.append(fwd.emb.zg2)
    x = T.concat([T.concat([a, b], axis=-1) for a, b in zip(rows_a, rows_b)], axis=0)
    params = state.f_causal if head == "causal" else state.f_sup
    return mlp(x, params).data.reshape(-1)


def evaluate(
    state: ModelState,
    samples: Sequence[PairSample],
    task: str,
    head: str = "causal",
    temperature: float = 1.0,
) -> dict:
    """Task metrics in deterministic disentangler mode."""
    if not samples:
        return {}
    out = predict(state, samples, head=head, temperature=temperature)
    ys = np.array([s.y for s in samples])
    if task == "regression":
        return {"rmse": rmse(out, ys)}
    probs = 1.0 / (1.0 + np.exp(-out))
    return {"auroc": auroc(probs, ys), "accuracy": accuracy(probs, ys)}


def _primary_metric(metrics: dict, task: str) -> float:
    if task == "regression":
        return metrics["rmse"]
    if metrics.get("auroc") is None:
        return metrics["accuracy"]
    return metrics["auroc"]


def _improved(candidate: float, best: Optional[float], task: str) -> bool:
    if best is None:
        return True
    return candidate < best if task == "regression" else candidate > best


# ---------------------------------------------------------------------------
# training


@dataclass
class RunReport:
    config: dict
    split: dict
    history: list[dict] = field(default_factory=list)
    steps: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_valid: Optional[float] = None
    test: dict = field(default_factory=dict)
    test_sup: dict = field(default_factory=dict)
    stopped_epoch: int = -1
    timing: dict = field(default_factory=dict)  # excluded from determinism checks

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _stream(seed: int, purpose: int, epoch: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose, epoch]))


_INIT, _SHUFFLE, _GUMBEL, _EPS, _BANK = 1, 2, 3, 4, 5


def train(
    dataset: PairDataset,
    split: SplitPlan,
    cfg: TrainConfig,
    out_dir: Optional[str] = None,
) -> RunReport:
    """Optimize the full objective on the split's train pairs.

    Adam (beta 0.9/0.999, eps 1e-8) minimizes the final loss; the learning
    rate drops by ``plateau_factor`` after ``plateau_patience`` epochs without
    validation improvement, parameters snapshot at the best validation metric,
    and training stops early after ``early_stop_patience`` flat epochs.
    """
    t_start = time.monotonic()
    train_samples = [dataset.pairs[i] for i in split.train]
    valid_samples = [dataset.pairs[i] for i in split.valid]
    test_samples = [dataset.pairs[i] for i in split.test]
    if not train_samples:
        raise ValueError("train: split has no training pairs")

    model_cfg = ModelConfig(
        feature_width=dataset.feature_width,
        task=cfg.task,
        edge_feature_width=dataset.edge_feature_width,
        hidden_dim=cfg.hidden_dim,
        encoder_layers=cfg.encoder_layers,
        encoder_variant=cfg.encoder_variant,
        set2set_steps=cfg.set2set_steps,
        head_layers=cfg.head_layers,
        share_heads=cfg.share_heads,
    )
    state = build_model(model_cfg, _stream(cfg.seed, _INIT))
    opt = Adam(named_parameters(state), lr=cfg.lr)
    gumbel_cfg = GumbelConfig(temperature=cfg.temperature, mode="stochastic")

    report = RunReport(
        config=dataclasses.asdict(cfg),
        split={"mode": split.mode, "meta": split.meta,
               "sizes": {"train": len(train_samples), "valid": len(valid_samples), "test": len(test_samples)}},
    )
    best_snapshot = None
    flat_epochs = 0
    n = len(train_samples)

    for epoch in range(cfg.max_epochs):
        perm = _stream(cfg.seed, _SHUFFLE, epoch).permutation(n)
        rng_gumbel = _stream(cfg.seed, _GUMBEL, epoch)
        rng_eps = _stream(cfg.seed, _EPS, epoch)
        rng_bank = _stream(cfg.seed, _BANK, epoch)
        sums = {"l_sup": 0.0, "l_causal": 0.0, "l_kl": 0.0, "l_int": 0.0, "l_final": 0.0}
        n_steps = 0
        for start in range(0, n, cfg.batch_size):
            batch = [train_samples[int(i)] for i in perm[start : start + cfg.batch_size]]
            with T.Tape() as tape:
                loss, breakdown, _ = total_loss(
                    batch, state, cfg.lambda1, cfg.lambda2, cfg.k_int,
                    gumbel_cfg, rng_gumbel, rng_eps, rng_bank,
                )
                _check_finite(breakdown, epoch, n_steps)
                opt.zero_grad()
                tape.backward(loss)
            opt.step()
            rec = {"epoch": epoch, "step": n_steps, "l_sup": breakdown.l_sup,
                   "l_causal": breakdown.l_causal, "l_kl": breakdown.l_kl,
                   "l_int": breakdown.l_int, "l_final": breakdown.l_final}
            report.steps.append(rec)
            for key in sums:
                sums[key] += rec[key]
            n_steps += 1

        valid_metrics = evaluate(state, valid_samples, cfg.task,
                                 head=cfg.predict_head, temperature=cfg.temperature)
        valid_metric = _primary_metric(valid_metrics, cfg.task) if valid_metrics else None
        epoch_rec = {"epoch": epoch, "lr": opt.lr,
                     **{k: v / max(1, n_steps) for k, v in sums.items()},
                     "valid": valid_metrics}
        report.history.append(epoch_rec)

        # without a validation set there is nothing to schedule or stop on
        if valid_metric is not None:
            if _improved(valid_metric, report.best_valid, cfg.task):
                report.best_valid = valid_metric
                report.best_epoch = epoch
                best_snapshot = {name: p.data.copy() for name, p in named_parameters(state)}
                flat_epochs = 0
            else:
                flat_epochs += 1
                if flat_epochs >= cfg.early_stop_patience:
                    report.stopped_epoch = epoch
                    break
                if flat_epochs % cfg.plateau_patience == 0:
                    opt.lr *= cfg.plateau_factor

    if best_snapshot is not None:
        for name, p in named_parameters(state):
            p.data = best_snapshot[name]
    report.test = evaluate(state, test_samples, cfg.task,
                           head=cfg.predict_head, temperature=cfg.temperature)
    report.test_sup = evaluate(state, test_samples, cfg.task,
                               head="sup", temperature=cfg.temperature)
    report.timing = {"wall_time_s": time.monotonic() - t_start}

    if out_dir is not None:
        from . import reporting

        reporting.write_run_outputs(report, state, out_dir)
    report._state = state  # transient handle for callers; not serialized
    return report


def _check_finite(breakdown: LossBreakdown, epoch: int, step: int) -> None:
    for name in ("l_sup", "l_causal", "l_kl", "l_int", "l_final"):
        if not np.isfinite(getattr(breakdown, name)):
            raise TrainingDiverged(
                f"loss term {name} is non-finite at epoch {epoch}, step {step}"
            )


# ---------------------------------------------------------------------------
# protocols


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("CMRL_THREADS", "1")))
    except ValueError:
        return 1


def _derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _cv_job(args):
    dataset, plan, cfg = args
    report = train(dataset, plan, cfg)
    return report.to_dict()


def cross_validate(
    dataset: PairDataset,
    cfg: TrainConfig,
    k: int,
    repeats: int,
    valid_fraction: float = 0.5,
) -> dict:
    """k-fold cross-validation repeated; k * repeats runs, aggregated.

    Per-run seeds derive from (cfg.seed, run index); mean and population
    standard deviation are reported per test metric.
    """
    from .graphs import kfold_splits

    plans = kfold_splits(len(dataset), k, repeats, seed=cfg.seed, valid_fraction=valid_fraction)
    jobs = [
        (dataset, plan, replace(cfg, seed=_derive_seed(cfg.seed, 101, i)))
        for i, plan in enumerate(plans)
    ]
    workers = _workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_cv_job, jobs))
    else:
        reports = [_cv_job(j) for j in jobs]

    metric_keys = sorted(
        k for k in reports[0]["test"]
        if all(r["test"].get(k) is not None for r in reports)
    )
    aggregate = {"runs": len(reports), "mean": {}, "std": {}}
    for key in metric_keys:
        values = np.array([r["test"][key] for r in reports], dtype=np.float64)
        aggregate["mean"][key] = float(values.mean())
        aggregate["std"][key] = float(values.std())  # population std (ddof=0)
    return {"aggregate": aggregate, "reports": reports,
            "config": dataclasses.asdict(cfg), "k": k, "repeats": repeats}


def random_holdout_split(n: int, seed: int, fractions=(0.6, 0.2, 0.2)) -> SplitPlan:
    """Random train/valid/test split by the given fractions."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    perm = rng.permutation(n)
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    return SplitPlan(
        train=[int(i) for i in perm[:n_train]],
        valid=[int(i) for i in perm[n_train : n_train + n_valid]],
        test=[int(i) for i in perm[n_train + n_valid :]],
        mode="random_holdout",
        meta={"fractions": list(fractions)},
    )


DEFAULT_SWEEP_LEVELS = (0.5, 0.4, 0.3, 0.2, 0.1)
DEFAULT_SWEEP_SEEDS = (0, 1, 2)


def sweep_data_config(bias: float) -> BiasedPairConfig:
    """Desk-scale dataset profile for bias sweeps (runtime-bounded)."""
    return BiasedPairConfig(
        bias=bias, n_graphs_per_combo=50,
        n_pos_pairs_per_shortcut=300, n_neg_pairs_per_shortcut=300,
    )


def sweep_train_config(**overrides) -> TrainConfig:
    """Training profile for bias sweeps.

    Synthetic defaults with one runtime-driven adjustment: batch 32, because
    the 720-pair training split yields only 6 optimizer steps per epoch at
    batch 128, which does not train within the epoch budget.
    """
    cfg = synthetic_default_config(batch_size=32, max_epochs=30)
    return replace(cfg, **overrides)


def _ablated(cfg: TrainConfig, ablation: str) -> TrainConfig:
    if ablation == "full":
        return cfg
    if ablation == "no_causal":
        return replace(cfg, lambda1=0.0, lambda2=0.0, predict_head="sup")
    raise ValueError(f"unknown ablation {ablation!r}")


def _sweep_cell(args):
    cfg, bias, level_idx, seed, ablations, data_cfg = args
    data_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 201, level_idx, seed]))
    dataset = make_dataset(dataclasses.replace(data_cfg, bias=bias), data_rng)
    split = random_holdout_split(len(dataset), _derive_seed(cfg.seed, 202, level_idx, seed))
    results = []
    for ablation in ablations:
        run_cfg = replace(_ablated(cfg, ablation), seed=_derive_seed(cfg.seed, 203, level_idx, seed))
        report = train(dataset, split, run_cfg)
        results.append({
            "bias": bias, "seed": seed, "ablation": ablation,
            "test": report.test, "best_epoch": report.best_epoch,
            "epochs_run": len(report.history),
            "wall_time_s": report.timing["wall_time_s"],
        })
        log.info("sweep cell b=%.2f seed=%d %s: acc=%.4f (%.1fs)",
                 bias, seed, ablation, report.test.get("accuracy", float("nan")),
                 report.timing["wall_time_s"])
    return results


def bias_sweep(
    levels: Sequence[float],
    cfg: TrainConfig,
    ablations: Sequence[str] = ("full", "no_causal"),
    seeds: Sequence[int] = DEFAULT_SWEEP_SEEDS,
    data_cfg: Optional[BiasedPairConfig] = None,
) -> dict:
    """Train each ablation at each bias level over several seeds.

    Every (level, seed) cell generates its own dataset and a random 60/20/20
    split shared by all ablations, so gaps compare like with like.  Reports
    mean/std test accuracy per (level, ablation) plus the full-minus-ablation
    accuracy gap per level.
    """
    for b in levels:
        if not 0.0 < b < 1.0:
            raise ValueError(f"bias level {b} outside (0, 1)")
    base_data = data_cfg if data_cfg is not None else sweep_data_config(0.5)
    jobs = [
        (cfg, float(b), li, int(s), tuple(ablations), base_data)
        for li, b in enumerate(levels)
        for s in seeds
    ]
    workers = _workers()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cell_lists = list(pool.map(_sweep_cell, jobs))
    else:
        cell_lists = [_sweep_cell(j) for j in jobs]
    cells = [c for cell in cell_lists for c in cell]

    aggregate: dict[str, dict] = {}
    gap: dict[str, float] = {}
    for b in levels:
        key = f"{b:g}"
        aggregate[key] = {}
        for ablation in ablations:
            values = [c["test"]["accuracy"] for c in cells
                      if c["bias"] == b and c["ablation"] == ablation]
            arr = np.array(values, dtype=np.float64)
            aggregate[key][ablation] = {
                "mean": float(arr.mean()), "std": float(arr.std()), "values": values,
            }
        if "full" in ablations and "no_causal" in ablations:
            gap[key] = aggregate[key]["full"]["mean"] - aggregate[key]["no_causal"]["mean"]
    return {
        "levels": [float(b) for b in levels],
        "seeds": [int(s) for s in seeds],
        "ablations": list(ablations),
        "config": dataclasses.asdict(cfg),
        "data_config": dataclasses.asdict(base_data),
        "cells": cells,
        "aggregate": aggregate,
        "gap": gap,
    }
