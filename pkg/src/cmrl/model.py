"""Model state: encoder, readouts, importance scorer, and predictor heads.

One shared encoder embeds both graphs of a pair (and one readout serves all
side-1 matrices), a second readout serves the paired graph, and four separate
heads consume the molecule-level vectors.  Checkpoints are a flat binary of
named float64 parameter blocks with a JSON header.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, fields, is_dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .disentangle import DisentangleOutput, GumbelConfig, gumbel_sigmoid, importance, mask_split
from .encoder import (
    EncoderParams,
    MLPParams,
    Set2SetParams,
    encode,
    init_encoder,
    init_mlp,
    init_set2set,
    set2set,
    set2set_stack,
)
from .graphs import Graph, PairSample
from .interaction import PairEmbedding, cross_embed, interaction_map
from .tensor import Tensor


@dataclass
class ModelConfig:
    feature_width: int
    task: str
    edge_feature_width: int = 0
    hidden_dim: int = 32
    encoder_layers: int = 3
    encoder_variant: str = "edge"
    set2set_steps: int = 3
    head_layers: int = 3
    share_heads: bool = False  # recorded; heads are always separate


@dataclass(eq=False)
class ModelState:
    """All learnable parameters plus the config they were built from."""

    config: ModelConfig
    encoder: EncoderParams
    readout1: Set2SetParams
    readout2: Set2SetParams
    importance: MLPParams
    f_sup: MLPParams
    f_causal: MLPParams
    f_int: MLPParams
    g_shortcut: MLPParams


def _head_widths(in_width: int, out_width: int, layers: int, d: int) -> list[int]:
    hidden = [4 * d, 2 * d] + [2 * d] * max(0, layers - 3)
    return [in_width] + hidden[: max(0, layers - 1)] + [out_width]


def build_model(cfg: ModelConfig, rng: np.random.Generator) -> ModelState:
    d = cfg.hidden_dim
    return ModelState(
        config=cfg,
        encoder=init_encoder(
            rng,
            cfg.feature_width,
            d,
            num_layers=cfg.encoder_layers,
            variant=cfg.encoder_variant,
            edge_width=cfg.edge_feature_width,
        ),
        readout1=init_set2set(rng, 2 * d, steps=cfg.set2set_steps),
        readout2=init_set2set(rng, 2 * d, steps=cfg.set2set_steps),
        importance=init_mlp(rng, [2 * d, d, 1]),
        f_sup=init_mlp(rng, _head_widths(8 * d, 1, cfg.head_layers, d)),
        f_causal=init_mlp(rng, _head_widths(8 * d, 1, cfg.head_layers, d)),
        f_int=init_mlp(rng, _head_widths(12 * d, 1, cfg.head_layers, d)),
        g_shortcut=init_mlp(rng, _head_widths(4 * d, 2, cfg.head_layers, d)),
    )


def named_parameters(obj, prefix: str = "") -> list[tuple[str, Tensor]]:
    """Enumerate (dotted_name, tensor) pairs in a stable traversal order."""
    out: list[tuple[str, Tensor]] = []
    if isinstance(obj, Tensor):
        if obj.requires_grad:
            out.append((prefix, obj))
    elif is_dataclass(obj) and not isinstance(obj, type):
        for f in fields(obj):
            out.extend(named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name))
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            out.extend(named_parameters(item, f"{prefix}[{i}]"))
    elif isinstance(obj, dict):
        for key in obj:
            out.extend(named_parameters(obj[key], f"{prefix}.{key}"))
    return out


def zero_grads(state: ModelState) -> None:
    for _, p in named_parameters(state):
        p.grad = None


def parameter_vector(state: ModelState) -> np.ndarray:
    return np.concatenate([p.data.reshape(-1) for _, p in named_parameters(state)])


def set_parameter_vector(state: ModelState, vec: np.ndarray) -> None:
    offset = 0
    for _, p in named_parameters(state):
        n = p.data.size
        p.data = vec[offset : offset + n].reshape(p.data.shape).copy()
        offset += n
    if offset != vec.size:
        raise ValueError(f"parameter vector length {vec.size} != model size {offset}")


def gradient_vector(state: ModelState) -> np.ndarray:
    chunks = []
    for _, p in named_parameters(state):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        chunks.append(g.reshape(-1))
    return np.concatenate(chunks)


def _rebuild_with_views(obj, take):
    if isinstance(obj, Tensor):
        return take(obj) if obj.requires_grad else obj
    if is_dataclass(obj) and not isinstance(obj, type):
        kwargs = {f.name: _rebuild_with_views(getattr(obj, f.name), take) for f in fields(obj)}
        return type(obj)(**kwargs)
    if isinstance(obj, list):
        return [_rebuild_with_views(o, take) for o in obj]
    if isinstance(obj, tuple):
        return tuple(_rebuild_with_views(o, take) for o in obj)
    if isinstance(obj, dict):
        return {k: _rebuild_with_views(v, take) for k, v in obj.items()}
    return obj


def view_state(state: ModelState, flat: Tensor) -> ModelState:
    """A state whose parameters are differentiable views of one flat tensor.

    Traversal order matches :func:`named_parameters`, so ``flat`` should hold
    :func:`parameter_vector` of the same state.  Useful for whole-model
    finite-difference checks: any loss of the view state is a function of
    ``flat`` alone.
    """
    cursor = {"offset": 0}

    def take(p: Tensor) -> Tensor:
        size = p.data.size
        piece = T.narrow(flat, 0, cursor["offset"], size)
        cursor["offset"] += size
        return T.reshape(piece, p.data.shape)

    rebuilt = _rebuild_with_views(state, take)
    if cursor["offset"] != flat.data.size:
        raise ValueError(
            f"view_state: flat vector length {flat.data.size} != model size {cursor['offset']}"
        )
    return rebuilt


# ---------------------------------------------------------------------------
# forward pass


@dataclass(eq=False)
class PairForward:
    emb: PairEmbedding
    dis: Optional[DisentangleOutput]
    y: float


def forward_pair(
    state: ModelState,
    g1: Graph,
    g2: Graph,
    gumbel_cfg: GumbelConfig,
    rng_gumbel: Optional[np.random.Generator] = None,
    rng_eps: Optional[np.random.Generator] = None,
    y: float = 0.0,
    with_disentangle: bool = True,
    eps_override: Optional[np.ndarray] = None,
    e1: Optional[Tensor] = None,
    e2: Optional[Tensor] = None,
) -> PairForward:
    """Embed one pair; pass cached ``e1``/``e2`` to skip re-encoding.

    The side-1 readouts of H1, C1, and S1 run as one stacked pass, which is
    row-for-row the same readout a separate call would produce.
    """
    if e1 is None:
        e1 = encode(g1, state.encoder)
    if e2 is None:
        e2 = encode(g2, state.encoder)
    imap = interaction_map(e1, e2)
    h1 = T.concat([e1, cross_embed(imap, e2)], axis=-1)
    h2 = T.concat([e2, cross_embed(T.transpose(imap), e1)], axis=-1)
    zg2 = set2set(h2, state.readout2)
    dis = None
    if with_disentangle:
        p = importance(h1, state.importance)
        lam = gumbel_sigmoid(p, gumbel_cfg, rng_gumbel)
        c1, s1, eps = mask_split(
            h1, lam, rng_eps,
            eps_override=eps_override,
            deterministic=gumbel_cfg.mode == "deterministic",
        )
        z3 = set2set_stack([h1, c1, s1], state.readout1)
        zg1 = T.narrow(z3, 0, 0, 1)
        dis = DisentangleOutput(
            p=p, lam=lam, c1=c1, s1=s1,
            z_c1=T.narrow(z3, 0, 1, 1), z_s1=T.narrow(z3, 0, 2, 1), eps_used=eps,
        )
    else:
        zg1 = set2set(h1, state.readout1)
    emb = PairEmbedding(e1=e1, e2=e2, imap=imap, h1=h1, h2=h2, zg1=zg1, zg2=zg2)
    return PairForward(emb=emb, dis=dis, y=y)


# ---------------------------------------------------------------------------
# checkpoints: magic, header length, JSON header, raw little-endian float64


_MAGIC = b"CMRLCKPT"


def save_checkpoint(state: ModelState, path) -> None:
    params = named_parameters(state)
    header = {name: list(p.data.shape) for name, p in params}
    blob = json.dumps(header, sort_keys=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(state: ModelState, path) -> None:
    params = dict(named_parameters(state))
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        if set(header) != set(params):
            raise ValueError(f"{path}: checkpoint parameters do not match this model")
        for name, shape in header.items():
            p = params[name]
            if list(p.data.shape) != shape:
                raise ValueError(f"{path}: shape mismatch for {name}: {shape} vs {p.data.shape}")
            raw = fh.read(8 * int(np.prod(shape)))
            p.data = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


# ---------------------------------------------------------------------------
# frozen toy data for gradient checks


def toy_batch(seed: int = 0):
    """A deterministic 2-pair batch of 3-atom graphs plus a small model."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    graphs = []
    for k in range(4):
        graphs.append(
            Graph(
                num_nodes=3,
                x=rng.normal(size=(3, 2)),
                edges=np.array([[0, 1], [1, 2]]),
                graph_id=f"toy{k}",
            )
        )
    samples = [
        PairSample(g1=graphs[0], g2=graphs[1], y=0.25, pair_id="t0"),
        PairSample(g1=graphs[2], g2=graphs[3], y=-0.5, pair_id="t1"),
    ]
    cfg = ModelConfig(
        feature_width=2,
        task="regression",
        hidden_dim=3,
        encoder_layers=2,
        encoder_variant="edge",
        set2set_steps=2,
        head_layers=2,
    )
    state = build_model(cfg, rng)
    return samples, state
