"""Training objectives: supervised, causal, shortcut-KL, and intervention losses.

The intervention loss realizes the conditional backdoor adjustment: each
sample's prediction is repeated with shortcut readouts generated by pairing
*other* graphs from the batch against the sample's own second graph, so the
confounder values are drawn conditionally on that paired graph.  The final
objective is L_sup + L_causal + lambda1 * L_KL + lambda2 * L_int.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .disentangle import GumbelConfig, shortcut_readout
from .encoder import MLPParams, mlp
from .graphs import PairSample
from .interaction import cross_embed, interaction_map
from .model import ModelState, PairForward, forward_pair, parameter_vector, view_state
from .tensor import Tensor, gradcheck

log = logging.getLogger(__name__)


def task_loss(pred: Tensor, y: Tensor, task: str) -> Tensor:
    """Batch RMSE for regression; mean binary cross-entropy on logits otherwise."""
    if pred.shape != y.shape:
        raise T.ShapeError(f"task_loss: prediction shape {pred.shape} != target shape {y.shape}")
    if task == "regression":
        diff = pred - y
        return T.sqrt(T.mean(diff * diff))
    if task == "classification":
        if not np.all((y.data == 0.0) | (y.data == 1.0)):
            raise ValueError("task_loss: classification targets must be exactly 0 or 1")
        # BCE(sigmoid(z), y) = softplus(z) - y*z, elementwise
        return T.mean(T.softplus(pred) - y * pred)
    raise ValueError(f"task_loss: unknown task {task!r}")


def kl_loss(z_s1: Tensor, g_shortcut: MLPParams, task: str) -> Tensor:
    """Divergence of the shortcut head's output from a non-informative target.

    Classification: KL(q || uniform) with q the 2-class softmax of the head.
    Regression: the head emits (mean, log variance) of a Gaussian, scored by
    KL(N(mu, sigma^2) || N(0, 1)) = (mu^2 + sigma^2 - 1 - log sigma^2) / 2.
    Both are averaged over the batch and are non-negative.
    """
    out = mlp(z_s1, g_shortcut)
    if out.shape[1] != 2:
        raise T.ShapeError(f"kl_loss: shortcut head must emit 2 values, got {out.shape}")
    if task == "classification":
        q = T.softmax(out)
        per_sample = T.sum(q * T.log(q), axis=1, keepdims=True) + math.log(2.0)
        return T.mean(per_sample)
    if task == "regression":
        mu = T.narrow(out, -1, 0, 1)
        logvar = T.narrow(out, -1, 1, 1)
        var = T.exp(logvar)  # raises on non-finite variance
        return T.mean((mu * mu + var - 1.0 - logvar) * 0.5)
    raise ValueError(f"kl_loss: unknown task {task!r}")


@dataclass(eq=False)
class ConfounderBank:
    """Per-sample shortcut readouts from re-paired batch graphs.

    ``entries[b][k]`` is the shortcut readout of (alternative graph j, own
    paired graph of sample b); ``indices[b][k] == j != b``.
    """

    entries: list[list[Tensor]]
    indices: list[list[int]]


def build_confounder_bank(
    batch: Sequence[PairForward],
    state: ModelState,
    k_int: int,
    gumbel_cfg: GumbelConfig,
    rng: Optional[np.random.Generator],
) -> ConfounderBank:
    """Sample K alternative first graphs per sample and read their shortcuts.

    Sampling is uniform without replacement over the other batch indices
    (ascending, so K = batch-1 reproduces full enumeration bit-exactly); each
    entry re-pairs the alternative graph's atom embeddings against the
    sample's own second graph, which conditions the confounder draw on it.
    """
    n = len(batch)
    if n < 2:
        raise ValueError("build_confounder_bank: need a batch of at least 2 samples")
    if not 1 <= k_int <= n - 1:
        raise ValueError(f"build_confounder_bank: k_int={k_int} not in [1, {n - 1}]")
    entries: list[list[Tensor]] = []
    indices: list[list[int]] = []
    for b, fwd in enumerate(batch):
        others = np.array([j for j in range(n) if j != b])
        if k_int == n - 1:
            chosen = others
        else:
            if rng is None:
                raise ValueError("build_confounder_bank: sampling needs an explicit rng")
            chosen = np.sort(rng.choice(others, size=k_int, replace=False))
        row = []
        for j in chosen:
            alt = batch[int(j)].emb.e1
            own = fwd.emb.e2
            imap = interaction_map(alt, own)
            h1_alt = T.concat([alt, cross_embed(imap, own)], axis=-1)
            row.append(
                shortcut_readout(h1_alt, state.importance, gumbel_cfg, rng, state.readout1)
            )
        entries.append(row)
        indices.append([int(j) for j in chosen])
    return ConfounderBank(entries=entries, indices=indices)


def intervention_loss(
    z_c1: Tensor,
    z_g2: Tensor,
    bank: ConfounderBank,
    y: Tensor,
    f_int: MLPParams,
    task: str,
) -> Tensor:
    """Mean task loss over bank slots of predictions from (zC1, zG2, zS~1).

    This is the Monte Carlo estimate of the backdoor sum: an average of
    per-confounder prediction losses with confounders drawn given each
    sample's paired graph.
    """
    if not bank.entries or not bank.entries[0]:
        raise ValueError("intervention_loss: empty confounder bank")
    k = len(bank.entries[0])
    total = None
    for slot in range(k):
        stacked = T.concat([row[slot] for row in bank.entries], axis=0)
        pred = mlp(T.concat([z_c1, z_g2, stacked], axis=-1), f_int)
        term = task_loss(pred, y, task)
        total = term if total is None else total + term
    return total * (1.0 / k)


@dataclass
class LossBreakdown:
    l_sup: float
    l_causal: float
    l_kl: float
    l_int: float
    l_final: float
    lambda1: float
    lambda2: float

    def recombined(self) -> float:
        """Recompute l_final from the parts in the same association order."""
        return self.l_sup + self.l_causal + self.lambda1 * self.l_kl + self.lambda2 * self.l_int


def total_loss(
    samples: Sequence[PairSample],
    state: ModelState,
    lambda1: float,
    lambda2: float,
    k_int: int,
    gumbel_cfg: GumbelConfig,
    rng_gumbel: Optional[np.random.Generator],
    rng_eps: Optional[np.random.Generator],
    rng_bank: Optional[np.random.Generator],
    batch_forward: Optional[Sequence[PairForward]] = None,
) -> tuple[Tensor, LossBreakdown, list[PairForward]]:
    """The full objective on one batch; returns the differentiable scalar.

    Zero-weight terms are skipped entirely (not multiplied by zero), so a run
    with lambda1 = lambda2 = 0 consumes no KL/bank randomness and its
    gradients match an L_sup + L_causal objective exactly.  A singleton batch
    skips the intervention term with a warning.
    """
    task = state.config.task
    if batch_forward is None:
        batch_forward = [
            forward_pair(state, s.g1, s.g2, gumbel_cfg, rng_gumbel, rng_eps, y=s.y)
            for s in samples
        ]
    y = T.constant(np.array([[s.y] for s in samples]))
    zg1 = T.concat([f.emb.zg1 for f in batch_forward], axis=0)
    zg2 = T.concat([f.emb.zg2 for f in batch_forward], axis=0)
    zc1 = T.concat([f.dis.z_c1 for f in batch_forward], axis=0)
    zs1 = T.concat([f.dis.z_s1 for f in batch_forward], axis=0)

    l_sup = task_loss(mlp(T.concat([zg1, zg2], axis=-1), state.f_sup), y, task)
    l_causal = task_loss(mlp(T.concat([zc1, zg2], axis=-1), state.f_causal), y, task)
    l_final = l_sup + l_causal

    l_kl_value = 0.0
    if lambda1 != 0.0:
        l_kl = kl_loss(zs1, state.g_shortcut, task)
        l_final = l_final + lambda1 * l_kl
        l_kl_value = l_kl.item()

    l_int_value = 0.0
    if lambda2 != 0.0:
        if len(samples) < 2:
            log.warning("batch of size 1: intervention loss skipped")
        else:
            bank = build_confounder_bank(batch_forward, state, k_int, gumbel_cfg, rng_bank)
            l_int = intervention_loss(zc1, zg2, bank, y, state.f_int, task)
            l_final = l_final + lambda2 * l_int
            l_int_value = l_int.item()

    breakdown = LossBreakdown(
        l_sup=l_sup.item(),
        l_causal=l_causal.item(),
        l_kl=l_kl_value,
        l_int=l_int_value,
        l_final=l_final.item(),
        lambda1=lambda1,
        lambda2=lambda2,
    )
    return l_final, breakdown, list(batch_forward)


def full_loss_gradcheck(
    samples: Sequence[PairSample],
    state: ModelState,
    eps: float = 1e-5,
    lambda1: float = 1e-2,
    lambda2: float = 1e-2,
    noise_seed: int = 13,
) -> float:
    """Finite-difference check of the full objective over all parameters.

    Stochasticity is frozen: the gate noise is pinned at u = 0.5
    (deterministic mode) and the blend noise is a fixed draw, so the loss is
    a deterministic function of the packed parameter vector.
    """
    gcfg = GumbelConfig(temperature=1.0, mode="deterministic")
    rng = np.random.default_rng(np.random.SeedSequence([noise_seed]))
    frozen_eps = [
        rng.standard_normal((s.g1.num_nodes, 2 * state.config.hidden_dim)) for s in samples
    ]

    def f(flat: Tensor) -> Tensor:
        probe = view_state(state, flat)
        batch = [
            forward_pair(probe, s.g1, s.g2, gcfg, y=s.y, eps_override=frozen_eps[i])
            for i, s in enumerate(samples)
        ]
        loss, _, _ = total_loss(
            samples, probe, lambda1, lambda2, k_int=len(samples) - 1,
            gumbel_cfg=gcfg, rng_gumbel=None, rng_eps=None, rng_bank=None,
            batch_forward=batch,
        )
        return loss

    flat = Tensor(parameter_vector(state), requires_grad=True)
    return gradcheck(f, flat, eps=eps)
