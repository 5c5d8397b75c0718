"""Message-passing graph encoders, MLP blocks, and the Set2Set readout.

Three encoder variants sit behind one config switch: edge-conditioned message
passing (default), sum aggregation with an MLP update, and mean aggregation
with a linear update.  All neighborhood reductions go through
``canonical_sum`` so per-atom embeddings are exactly permutation equivariant.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graphs import Graph
from .tensor import ShapeError, Tensor

VARIANTS = ("edge", "gin", "gcn")


@dataclass(eq=False)
class DenseParams:
    w: Tensor
    b: Tensor


@dataclass(eq=False)
class MLPParams:
    """Affine-activation stack; the final layer is linear unless configured."""

    layers: list[DenseParams]
    activation: str = "relu"
    final_activation: str | None = None


@dataclass(eq=False)
class EncoderParams:
    variant: str
    num_layers: int
    hidden_dim: int
    edge_width: int
    in_proj: DenseParams
    layers: list[dict[str, DenseParams]] = field(default_factory=list)


@dataclass(eq=False)
class Set2SetParams:
    steps: int
    wx: Tensor  # (2w, 4w) input->gates
    wh: Tensor  # (w, 4w) hidden->gates
    b: Tensor  # (1, 4w)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_dense(rng: np.random.Generator, n_in: int, n_out: int) -> DenseParams:
    # small uniform bias keeps pre-activations off exact ReLU kinks at init
    bound = 1.0 / np.sqrt(n_in)
    return DenseParams(
        w=Tensor(glorot(rng, n_in, n_out), requires_grad=True),
        b=Tensor(rng.uniform(-bound, bound, size=(1, n_out)), requires_grad=True),
    )


def init_mlp(
    rng: np.random.Generator,
    widths: list[int],
    activation: str = "relu",
    final_activation: str | None = None,
) -> MLPParams:
    layers = [init_dense(rng, widths[i], widths[i + 1]) for i in range(len(widths) - 1)]
    return MLPParams(layers=layers, activation=activation, final_activation=final_activation)


def init_encoder(
    rng: np.random.Generator,
    in_width: int,
    hidden_dim: int,
    num_layers: int = 3,
    variant: str = "edge",
    edge_width: int = 0,
) -> EncoderParams:
    if variant not in VARIANTS:
        raise ValueError(f"unknown encoder variant {variant!r}")
    d = hidden_dim
    layers = []
    for _ in range(num_layers):
        if variant == "edge":
            layers.append(
                {"msg": init_dense(rng, d + edge_width, d), "upd": init_dense(rng, 2 * d, d)}
            )
        elif variant == "gin":
            layers.append({"m1": init_dense(rng, d, d), "m2": init_dense(rng, d, d)})
        else:
            layers.append({"lin": init_dense(rng, d, d)})
    return EncoderParams(
        variant=variant,
        num_layers=num_layers,
        hidden_dim=d,
        edge_width=edge_width,
        in_proj=init_dense(rng, in_width, d),
        layers=layers,
    )


def init_set2set(rng: np.random.Generator, width: int, steps: int = 3) -> Set2SetParams:
    return Set2SetParams(
        steps=steps,
        wx=Tensor(glorot(rng, 2 * width, 4 * width), requires_grad=True),
        wh=Tensor(glorot(rng, width, 4 * width), requires_grad=True),
        b=Tensor(np.zeros((1, 4 * width)), requires_grad=True),
    )


def mlp(x: Tensor, params: MLPParams) -> Tensor:
    out = x
    last = len(params.layers) - 1
    for i, layer in enumerate(params.layers):
        act = params.activation if i < last else params.final_activation
        out = T.affine(out, layer.w, layer.b, activation=act)
    return out


def _neighborhood_sum(values: Tensor, slot_index: np.ndarray) -> Tensor:
    """Per-node sum of gathered rows; a zero pad row absorbs empty slots."""
    width = values.shape[1]
    padded = T.concat([values, T.constant(np.zeros((1, width)))], axis=0)
    gathered = T.take_rows(padded, slot_index)  # (N, max_slots, width)
    return T.canonical_sum(gathered, axis=1)


def encode(graph: Graph, params: EncoderParams) -> Tensor:
    """Per-atom embeddings, shape (N, d); equivariant under node relabeling."""
    if graph.feature_width != params.in_proj.w.shape[0]:
        raise ShapeError(
            f"encode: node feature width {graph.feature_width} does not match "
            f"encoder input width {params.in_proj.w.shape[0]}"
        )
    h = T.affine(T.constant(graph.x), params.in_proj.w, params.in_proj.b)
    if params.num_layers == 0:
        return h

    if params.variant == "edge":
        src, dst_slot, edge_x2 = graph.directed_edge_index
        if params.edge_width > 0:
            if edge_x2 is None or edge_x2.shape[1] != params.edge_width:
                raise ShapeError(
                    f"encode: encoder expects edge feature width {params.edge_width}, "
                    f"graph {graph.graph_id!r} does not match"
                )
        for layer in params.layers:
            h_src = T.take_rows(h, src)  # (2E, d)
            if params.edge_width > 0:
                msg_in = T.concat([h_src, T.constant(edge_x2)], axis=-1)
            else:
                msg_in = h_src
            msgs = T.affine(msg_in, layer["msg"].w, layer["msg"].b, activation="relu")
            agg = _neighborhood_sum(msgs, dst_slot)
            h = T.affine(T.concat([h, agg], axis=-1), layer["upd"].w, layer["upd"].b,
                         activation="relu")
        return h

    nbr_idx, deg = graph.neighbor_index
    if params.variant == "gin":
        for layer in params.layers:
            agg = _neighborhood_sum(h, nbr_idx)
            z = T.affine(h + agg, layer["m1"].w, layer["m1"].b, activation="relu")
            h = T.affine(z, layer["m2"].w, layer["m2"].b, activation="relu")
        return h

    # gcn: mean over closed neighborhood, then a single affine map
    inv_count = T.constant(1.0 / (deg + 1.0))
    for layer in params.layers:
        agg = (_neighborhood_sum(h, nbr_idx) + h) * inv_count
        h = T.affine(agg, layer["lin"].w, layer["lin"].b, activation="relu")
    return h


def set2set(h: Tensor, params: Set2SetParams) -> Tensor:
    """Attention-plus-recurrence readout of a node set, shape (1, 2*width).

    Each step: the recurrent cell emits a query, attention over rows of ``h``
    produces a read vector, and (query, read) feed the next step.  Output is
    the final (query, read) concatenation; exactly permutation invariant.
    """
    if h.ndim != 2 or h.shape[0] < 1:
        raise ShapeError(f"set2set: need a non-empty (N, width) input, got {h.shape}")
    return _set2set_sheets(T.reshape(h, (1,) + h.shape), params)


def set2set_stack(hs: list[Tensor], params: Set2SetParams) -> Tensor:
    """Readouts of several equally-shaped node matrices in one pass, (B, 2w).

    Row i of the result equals the readout of ``hs[i]``; stacking shares the
    recurrent and attention work across matrices of the same graph.
    """
    if not hs:
        raise ShapeError("set2set_stack: empty input list")
    n, width = hs[0].shape
    stacked = T.reshape(T.concat(hs, axis=0), (len(hs), n, width))
    return _set2set_sheets(stacked, params)


def _set2set_sheets(h3: Tensor, params: Set2SetParams) -> Tensor:
    """Shared readout loop over a (B, N, width) stack; returns (B, 2*width)."""
    n_sheets, _, width = h3.shape
    if params.wh.shape[0] != width:
        raise ShapeError(
            f"set2set: input width {width} does not match readout width {params.wh.shape[0]}"
        )
    q = T.constant(np.zeros((n_sheets, width)))
    c = T.constant(np.zeros((n_sheets, width)))
    r = T.constant(np.zeros((n_sheets, width)))
    for _ in range(params.steps):
        q, c = T.lstm_cell(T.concat([q, r], axis=-1), q, c, params.wx, params.wh, params.b)
        r = T.attend_read(h3, q)
    return T.concat([q, r], axis=-1)
