"""Atom-importance scoring and the causal/shortcut split of fused embeddings.

Each atom of graph 1 gets an importance score.  A relaxed Bernoulli gate
turns scores into soft masks: the causal matrix keeps high-importance rows
and blends low-importance rows toward molecule-statistics noise, while the
shortcut matrix keeps exactly the complement.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .encoder import MLPParams, Set2SetParams, mlp, set2set
from .tensor import ShapeError, Tensor

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-6
VARIANCE_FLOOR = 1e-8


@dataclass
class GumbelConfig:
    """Relaxation controls: temperature > 0 and the noise mode.

    Deterministic mode fixes the uniform draw at exactly 0.5 (zero logistic
    noise), which makes inference a pure function of its inputs.
    """

    temperature: float = 1.0
    mode: str = "stochastic"

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError(f"gumbel temperature must be > 0, got {self.temperature}")
        if self.mode not in ("stochastic", "deterministic"):
            raise ValueError(f"unknown gumbel mode {self.mode!r}")


@dataclass(eq=False)
class DisentangleOutput:
    p: Tensor  # (N, 1) importance in (0, 1)
    lam: Tensor  # (N, 1) relaxed gate in (0, 1)
    c1: Tensor  # (N, 2d) causal matrix
    s1: Tensor  # (N, 2d) shortcut matrix
    z_c1: Tensor  # (1, 4d)
    z_s1: Tensor  # (1, 4d)
    eps_used: np.ndarray  # (N, 2d) noise actually blended into c1


def importance(h1: Tensor, params: MLPParams) -> Tensor:
    """Per-atom importance p = sigmoid(mlp(H1 row)), shape (N, 1)."""
    logits = mlp(h1, params)
    if logits.shape[1] != 1:
        raise ShapeError(f"importance: expected one logit per atom, got shape {logits.shape}")
    return T.sigmoid(logits)


def gumbel_sigmoid(p: Tensor, cfg: GumbelConfig, rng: Optional[np.random.Generator]) -> Tensor:
    """Relaxed Bernoulli gate lambda = sigmoid((logit(p) + logit(u)) / t).

    ``u`` is Uniform(0,1) in stochastic mode and exactly 0.5 in deterministic
    mode; the draw is treated as a constant, so gradient flows only to ``p``
    (and none through the [PROB_CLAMP, 1 - PROB_CLAMP] input clamp).  As
    t -> 0+ the gate distribution converges to Bernoulli(p); at t = 1 and
    u = 0.5 the gate equals p itself.
    """
    if cfg.mode == "stochastic":
        if rng is None:
            raise ValueError("gumbel_sigmoid: stochastic mode needs an explicit rng")
        u = np.clip(rng.uniform(size=p.shape), PROB_CLAMP, 1.0 - PROB_CLAMP)
        noise = np.log(u) - np.log1p(-u)
    else:
        noise = 0.0
    pc = np.clip(p.data, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inv_t = 1.0 / cfg.temperature
    arg = (np.log(pc) - np.log1p(-pc) + noise) * inv_t
    lam = 0.5 * (np.tanh(0.5 * arg) + 1.0)

    def bwd(g, store):
        inside = (p.data >= PROB_CLAMP) & (p.data <= 1.0 - PROB_CLAMP)
        T.accumulate_grad(
            store, p, g * lam * (1.0 - lam) * inv_t / (pc * (1.0 - pc)) * inside
        )

    return T.fused_op(lam, p.requires_grad, bwd)


def mask_split(
    h1: Tensor,
    lam: Tensor,
    rng: Optional[np.random.Generator],
    eps_override: Optional[np.ndarray] = None,
    deterministic: bool = False,
) -> tuple[Tensor, Tensor, np.ndarray]:
    """(causal, shortcut, noise): C = lam*H + (1-lam)*eps, S = (1-lam)*H.

    Noise is drawn per atom and dimension from Normal(mu, sigma^2) with mu
    and sigma^2 the gradient-detached per-dimension statistics of H1's rows
    (variance floored at ``VARIANCE_FLOOR``).  Deterministic mode uses the
    mean itself; ``eps_override`` freezes the noise for gradient checks.
    """
    n = h1.shape[0]
    if lam.shape != (n, 1):
        raise ShapeError(f"disentangle: gate shape {lam.shape} does not match {n} atoms")
    mu = h1.data.mean(axis=0)
    if eps_override is not None:
        eps = np.asarray(eps_override, dtype=np.float64)
        if eps.shape != h1.data.shape:
            raise ShapeError(f"disentangle: eps shape {eps.shape} != {h1.data.shape}")
    elif deterministic:
        eps = np.broadcast_to(mu, h1.data.shape).copy()
    else:
        if rng is None:
            raise ValueError("disentangle: stochastic mode needs an explicit rng")
        var = np.maximum(h1.data.var(axis=0), VARIANCE_FLOOR)
        eps = mu + np.sqrt(var) * rng.standard_normal(size=h1.data.shape)
    eps_t = T.constant(eps)
    drop = 1.0 - lam
    c1 = lam * h1 + drop * eps_t
    s1 = drop * h1
    return c1, s1, eps


def disentangle(
    h1: Tensor,
    p: Tensor,
    lam: Tensor,
    rng: Optional[np.random.Generator],
    readout: Set2SetParams,
    eps_override: Optional[np.ndarray] = None,
    deterministic: bool = False,
) -> DisentangleOutput:
    """Split H1 into causal and shortcut matrices with their readouts."""
    c1, s1, eps = mask_split(h1, lam, rng, eps_override=eps_override, deterministic=deterministic)
    return DisentangleOutput(
        p=p,
        lam=lam,
        c1=c1,
        s1=s1,
        z_c1=set2set(c1, readout),
        z_s1=set2set(s1, readout),
        eps_used=eps,
    )


def shortcut_readout(
    h1: Tensor,
    importance_params: MLPParams,
    gumbel_cfg: GumbelConfig,
    rng: Optional[np.random.Generator],
    readout: Set2SetParams,
) -> Tensor:
    """Readout of the shortcut matrix only (the confounder-bank path)."""
    p = importance(h1, importance_params)
    lam = gumbel_sigmoid(p, gumbel_cfg, rng)
    return set2set((1.0 - lam) * h1, readout)


def export_importances(path, graph_id: str, out: DisentangleOutput, append: bool = True) -> None:
    """Append per-atom 'graph_id atom_index p lambda' lines for inspection."""
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        for i in range(out.p.shape[0]):
            fh.write(f"{graph_id} {i} {out.p.data[i, 0]!r} {out.lam.data[i, 0]!r}\n")
