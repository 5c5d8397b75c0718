"""Cross-graph interaction map and fused pair embeddings.

The interaction map holds cosine similarities between per-atom embeddings of
the two graphs.  Attending each graph's atoms over the other graph's rows
yields cross embeddings, which are concatenated onto the originals and pooled
into molecule-level readouts.  Both contractions run as fused operations with
closed-form backwards; sums over node axes are value-canonical, so outputs
are bitwise stable under node relabeling of the contracted graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoder import Set2SetParams, set2set
from .tensor import ShapeError, Tensor

ZERO_NORM_GUARD = 1e-8


@dataclass(eq=False)
class PairEmbedding:
    """Fused atom matrices and molecule-level readouts for one pair.

    ``e1``/``e2`` are kept so confounder-bank construction can re-pair
    encoder outputs without re-encoding.
    """

    e1: Tensor
    e2: Tensor
    imap: Tensor
    h1: Tensor
    h2: Tensor
    zg1: Tensor
    zg2: Tensor


def interaction_map(e1: Tensor, e2: Tensor) -> Tensor:
    """Pairwise cosine similarities, shape (N1, N2), entries in [-1, 1].

    Rows or columns whose embedding norm falls below ``ZERO_NORM_GUARD``
    yield exact zeros, and no gradient flows through the guard.  A final
    clip absorbs the <= 1 ulp excursions of dot/norm rounding.
    """
    if e1.ndim != 2 or e2.ndim != 2 or e1.shape[1] != e2.shape[1]:
        raise ShapeError(
            f"interaction_map: embedding shapes {e1.shape} and {e2.shape} do not share a width"
        )
    guard_sq = ZERO_NORM_GUARD * ZERO_NORM_GUARD
    x1, x2 = e1.data, e2.data
    sq1 = (x1 * x1).sum(axis=1, keepdims=True)
    sq2 = (x2 * x2).sum(axis=1, keepdims=True)
    live1 = sq1 >= guard_sq
    live2 = sq2 >= guard_sq
    n1 = np.sqrt(np.maximum(sq1, guard_sq))
    n2 = np.sqrt(np.maximum(sq2, guard_sq))
    raw = x1 @ x2.T
    denom = n1 @ n2.T
    val = raw / denom
    masked = val * (live1 & live2.T)
    out_data = np.clip(masked, -1.0, 1.0)
    rg = e1.requires_grad or e2.requires_grad

    def bwd(g, store):
        g = g * ((masked >= -1.0) & (masked <= 1.0))
        g = g * (live1 & live2.T)
        d_raw = g / denom
        d_denom = -g * val / denom
        if e1.requires_grad:
            d_sq1 = (d_denom @ n2) * (0.5 / n1) * live1
            T.accumulate_grad(store, e1, d_raw @ x2 + 2.0 * x1 * d_sq1)
        if e2.requires_grad:
            d_sq2 = (d_denom.T @ n1) * (0.5 / n2) * live2
            T.accumulate_grad(store, e2, d_raw.T @ x1 + 2.0 * x2 * d_sq2)

    return T.fused_op(out_data, rg, bwd)


def cross_embed(imap: Tensor, e_other: Tensor) -> Tensor:
    """Attend atoms over the other graph: rows of ``imap @ e_other``.

    The contraction runs over the other graph's node axis with canonical
    summation, so the result is bitwise stable under that graph's relabeling.
    """
    n1, n2 = imap.shape
    if e_other.ndim != 2 or e_other.shape[0] != n2:
        raise ShapeError(
            f"cross_embed: map shape {imap.shape} does not match embeddings {e_other.shape}"
        )
    prod = imap.data[:, :, None] * e_other.data[None, :, :]
    out_data = np.sort(prod, axis=1).sum(axis=1)
    rg = imap.requires_grad or e_other.requires_grad

    def bwd(g, store):
        if imap.requires_grad:
            T.accumulate_grad(store, imap, g @ e_other.data.T)
        if e_other.requires_grad:
            T.accumulate_grad(store, e_other, imap.data.T @ g)

    return T.fused_op(out_data, rg, bwd)


def fuse(
    e1: Tensor,
    e2: Tensor,
    imap: Tensor,
    readout1: Set2SetParams,
    readout2: Set2SetParams,
) -> PairEmbedding:
    """Build H1 = (E1 || I*E2), H2 = (E2 || I^T*E1) and their readouts."""
    if imap.shape != (e1.shape[0], e2.shape[0]):
        raise ShapeError(
            f"fuse: interaction map shape {imap.shape} does not match "
            f"({e1.shape[0]}, {e2.shape[0]})"
        )
    h1 = T.concat([e1, cross_embed(imap, e2)], axis=-1)
    h2 = T.concat([e2, cross_embed(T.transpose(imap), e1)], axis=-1)
    return PairEmbedding(
        e1=e1,
        e2=e2,
        imap=imap,
        h1=h1,
        h2=h2,
        zg1=set2set(h1, readout1),
        zg2=set2set(h2, readout2),
    )
