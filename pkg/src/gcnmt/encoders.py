"""Source-side encoders: embeddings, BiRNN/CNN bases, and GCN layers.

The GCN update for node v sums gated messages over its neighborhood:

    h'_v = relu( sum_{u in N(v)} g(u,v) * (W_dir(u,v) h_u + b_lab(u,v)) )

with N(v) covering annotated in-edges, annotated out-edges and a self
loop. Direction-specific matrices, per-label bias vectors and per-edge
scalar gates are all learned. Layers stack, each wrapped in a residual
connection, and a layer may read the semantic graph, the syntactic graph,
both at once (distinct W per graph, shared self-loop) or neither
(self-loop ablation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ConfigError, ExperimentConfig
from .corpus import Batch
from .tensor import (
    Tensor,
    concat,
    gather_rows,
    matmul,
    relu,
    reshape,
    scatter_add_rows,
    sigmoid,
    slice_rows,
    stack0,
    tanh,
    transpose,
)

LOOP_LABEL = "<loop>"

INIT_SCALE = 0.08


def _uniform(rng, shape, scale=INIT_SCALE) -> Tensor:
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)


@dataclass
class GruParams:
    """Update/reset-gate recurrence weights; w_* read the input, u_* the state."""

    w_z: Tensor
    u_z: Tensor
    b_z: Tensor
    w_r: Tensor
    u_r: Tensor
    b_r: Tensor
    w_h: Tensor
    u_h: Tensor
    b_h: Tensor

    def named(self, prefix: str):
        return {f"{prefix}.{k}": getattr(self, k) for k in
                ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")}


def init_gru(rng, in_dim: int, hidden: int) -> GruParams:
    return GruParams(
        w_z=_uniform(rng, (in_dim, hidden)), u_z=_uniform(rng, (hidden, hidden)),
        b_z=_uniform(rng, (hidden,)),
        w_r=_uniform(rng, (in_dim, hidden)), u_r=_uniform(rng, (hidden, hidden)),
        b_r=_uniform(rng, (hidden,)),
        w_h=_uniform(rng, (in_dim, hidden)), u_h=_uniform(rng, (hidden, hidden)),
        b_h=_uniform(rng, (hidden,)),
    )


def gru_cell(x_t, h_prev, params: GruParams):
    """One GRU step; accepts a single vector or a (batch, dim) matrix."""
    z = sigmoid(matmul(x_t, params.w_z) + matmul(h_prev, params.u_z) + params.b_z)
    r = sigmoid(matmul(x_t, params.w_r) + matmul(h_prev, params.u_r) + params.b_r)
    cand = tanh(matmul(x_t, params.w_h) + matmul(r * h_prev, params.u_h) + params.b_h)
    return z * h_prev + (1.0 - z) * cand


def birnn_encode(embeddings, fwd: GruParams, bwd: GruParams):
    """Concatenate forward and backward GRU states per position.

    ``embeddings`` is (len, emb) for one sentence or (len, batch, emb) for a
    batch; the output matches with last dimension 2 * hidden.
    """
    emb = embeddings if isinstance(embeddings, Tensor) else Tensor(embeddings)
    n = emb.shape[0]
    if n < 1:
        raise ValueError("birnn_encode: empty input")
    hidden = fwd.u_z.shape[0]
    state_shape = (hidden,) if emb.ndim == 2 else (emb.shape[1], hidden)
    h = Tensor(np.zeros(state_shape))
    forward = []
    for t in range(n):
        h = gru_cell(_row(emb, t), h, fwd)
        forward.append(h)
    h = Tensor(np.zeros(state_shape))
    backward_states = [None] * n
    for t in reversed(range(n)):
        h = gru_cell(_row(emb, t), h, bwd)
        backward_states[t] = h
    rows = [concat([f, b], axis=-1) for f, b in zip(forward, backward_states)]
    return stack0(rows)


def _row(t: Tensor, i: int) -> Tensor:
    return reshape(slice_rows(t, i, i + 1), t.shape[1:])


def cnn_encode(embeddings, w_filter: Tensor, b_filter: Tensor, window: int):
    """Per-position affine over a zero-padded window of width ``window``, ReLU."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"cnn window must be odd and >= 1, got {window}")
    emb = embeddings if isinstance(embeddings, Tensor) else Tensor(embeddings)
    n = emb.shape[0]
    half = window // 2
    shifts = []
    for offset in range(-half, half + 1):
        if offset == 0:
            shifts.append(emb)
            continue
        keep = max(0, n - abs(offset))
        pad = Tensor(np.zeros((n - keep,) + emb.shape[1:]))
        if keep == 0:
            shifts.append(pad)
        elif offset < 0:
            shifts.append(concat([pad, slice_rows(emb, 0, keep)], axis=0))
        else:
            shifts.append(concat([slice_rows(emb, offset, offset + keep), pad], axis=0))
    stacked = concat(shifts, axis=-1)
    return relu(matmul(stacked, w_filter) + b_filter)


@dataclass
class GcnGraphParams:
    """Per-graph direction matrices, label biases and gate parameters."""

    w_in: Tensor
    w_out: Tensor
    b_in: Tensor        # (n_labels, d)
    b_out: Tensor       # (n_labels, d)
    gate_w_in: Tensor   # (d,)
    gate_w_out: Tensor  # (d,)
    gate_b_in: Tensor   # (n_labels,)
    gate_b_out: Tensor  # (n_labels,)

    def named(self, prefix: str):
        return {f"{prefix}.{k}": getattr(self, k) for k in
                ("w_in", "w_out", "b_in", "b_out",
                 "gate_w_in", "gate_w_out", "gate_b_in", "gate_b_out")}


@dataclass
class GcnLayerParams:
    """One GCN layer: per-graph parameters plus the shared self-loop block."""

    graphs: dict          # graph name -> GcnGraphParams
    w_loop: Tensor
    b_loop: Tensor
    gate_w_loop: Tensor
    gate_b_loop: Tensor   # shape (1,)

    def named(self, prefix: str):
        out = {f"{prefix}.{k}": getattr(self, k) for k in
               ("w_loop", "b_loop", "gate_w_loop", "gate_b_loop")}
        for name, gp in self.graphs.items():
            out.update(gp.named(f"{prefix}.{name}"))
        return out


def init_gcn_layer(rng, d: int, label_counts: dict) -> GcnLayerParams:
    """``label_counts`` maps graph name -> label inventory size."""
    graphs = {}
    for name, n_labels in label_counts.items():
        graphs[name] = GcnGraphParams(
            w_in=_uniform(rng, (d, d)), w_out=_uniform(rng, (d, d)),
            b_in=_uniform(rng, (n_labels, d)), b_out=_uniform(rng, (n_labels, d)),
            gate_w_in=_uniform(rng, (d,)), gate_w_out=_uniform(rng, (d,)),
            gate_b_in=_uniform(rng, (n_labels,)), gate_b_out=_uniform(rng, (n_labels,)),
        )
    # near-identity self-loop transform keeps the base encoder signal early on
    w_loop = Tensor(0.5 * np.eye(d) + rng.uniform(-0.01, 0.01, size=(d, d)),
                    requires_grad=True)
    return GcnLayerParams(
        graphs=graphs,
        w_loop=w_loop,
        b_loop=_uniform(rng, (d,)),
        gate_w_loop=_uniform(rng, (d,)),
        gate_b_loop=_uniform(rng, (1,)),
    )


def gate(h_u, direction: str, label_id: int, params: GcnLayerParams, graph: str = None):
    """Scalar edge gate: sigmoid(h_u . gate_w[dir] + gate_b[dir, label])."""
    if direction == "loop":
        return sigmoid(matmul(h_u, params.gate_w_loop)
                       + reshape(params.gate_b_loop, ()))
    if graph is None:
        if len(params.graphs) != 1:
            raise ValueError("gate: graph name required for multi-graph layers")
        graph = next(iter(params.graphs))
    gp = params.graphs[graph]
    if direction == "in":
        w, b = gp.gate_w_in, gp.gate_b_in
    elif direction == "out":
        w, b = gp.gate_w_out, gp.gate_b_out
    else:
        raise ValueError(f"unknown direction {direction!r}")
    return sigmoid(matmul(h_u, w) + _row(b, label_id))


def gcn_layer(H, edges, params: GcnLayerParams, edge_retain: float = 1.0, rng=None):
    """Apply one gated GCN layer to node states ``H`` (n_nodes, d).

    ``edges`` maps graph name -> list of (head, dep, label_id); a bare list
    is accepted when the layer reads a single graph. During training each
    annotated-edge message is dropped independently with probability
    1 - edge_retain; self-loop messages are never dropped.
    """
    H = H if isinstance(H, Tensor) else Tensor(H)
    n = H.shape[0]
    if not isinstance(edges, dict):
        if len(params.graphs) > 1:
            raise ValueError("gcn_layer: dict of edge lists required for fused layers")
        name = next(iter(params.graphs)) if params.graphs else "sem"
        edges = {name: edges}

    loop_gate = sigmoid(matmul(H, reshape(params.gate_w_loop, (-1, 1)))
                        + params.gate_b_loop)
    total = loop_gate * (matmul(H, params.w_loop) + params.b_loop)

    for name, gp in params.graphs.items():
        edge_list = edges.get(name, [])
        if not edge_list:
            continue
        heads = np.asarray([e[0] for e in edge_list], dtype=np.intp)
        deps = np.asarray([e[1] for e in edge_list], dtype=np.intp)
        labs = np.asarray([e[2] for e in edge_list], dtype=np.intp)
        if heads.max(initial=-1) >= n or deps.max(initial=-1) >= n \
                or heads.min(initial=0) < 0 or deps.min(initial=0) < 0:
            raise ValueError(f"gcn_layer: edge endpoint out of range for {n} nodes")
        # in: dependent v receives from head u; out: head u receives from v
        for src, dst, w, b, gw, gb in (
            (heads, deps, gp.w_in, gp.b_in, gp.gate_w_in, gp.gate_b_in),
            (deps, heads, gp.w_out, gp.b_out, gp.gate_w_out, gp.gate_b_out),
        ):
            h_src = gather_rows(H, src)
            msg = matmul(h_src, w) + gather_rows(b, labs)
            g = sigmoid(matmul(h_src, reshape(gw, (-1, 1)))
                        + reshape(gather_rows(gb, labs), (-1, 1)))
            msg = g * msg
            if edge_retain < 1.0:
                if rng is None:
                    raise ValueError("gcn_layer: edge dropout requires an rng")
                keep = (rng.random(len(src)) < edge_retain).astype(np.float64)
                msg = msg * Tensor(keep[:, None])
            total = total + scatter_add_rows(msg, dst, n)
    return relu(total)


@dataclass
class GcnBlock:
    graphs: tuple
    layers: list


@dataclass
class EncoderOutput:
    states: Tensor        # (batch, len, width) or (len, width)
    mask: np.ndarray      # bool, matching leading dims


@dataclass
class EncoderStack:
    """Embeddings, one base encoder, and the configured GCN blocks."""

    embedding: Tensor
    kind: str                      # birnn | cnn
    gru_fwd: GruParams | None
    gru_bwd: GruParams | None
    cnn_w: Tensor | None
    cnn_b: Tensor | None
    cnn_window: int
    blocks: list                   # list[GcnBlock]
    label_vocabs: dict             # graph name -> LabelVocab

    def parameters(self):
        out = {"encoder.embedding": self.embedding}
        if self.kind == "birnn":
            out.update(self.gru_fwd.named("encoder.gru_fwd"))
            out.update(self.gru_bwd.named("encoder.gru_bwd"))
        else:
            out["encoder.cnn.w"] = self.cnn_w
            out["encoder.cnn.b"] = self.cnn_b
        for bi, block in enumerate(self.blocks):
            for li, layer in enumerate(block.layers):
                out.update(layer.named(f"gcn.{bi}.{li}"))
        return out


def build_encoder(cfg: ExperimentConfig, vocab_size: int, label_vocabs: dict,
                  rng) -> EncoderStack:
    cfg.validate()
    emb = _uniform(rng, (vocab_size, cfg.emb_size))
    gru_fwd = gru_bwd = cnn_w = cnn_b = None
    if cfg.encoder == "birnn":
        gru_fwd = init_gru(rng, cfg.emb_size, cfg.hidden_size)
        gru_bwd = init_gru(rng, cfg.emb_size, cfg.hidden_size)
    else:
        cnn_w = _uniform(rng, (cfg.cnn_window * cfg.emb_size, cfg.hidden_size))
        cnn_b = _uniform(rng, (cfg.hidden_size,))
    d = cfg.enc_width
    blocks = []
    for graphs, k in cfg.blocks:
        for g in graphs:
            if g not in label_vocabs:
                raise ConfigError(f"recipe needs {g!r} labels but none were provided")
        counts = {g: len(label_vocabs[g]) for g in graphs}
        layers = [init_gcn_layer(rng, d, counts) for _ in range(k)]
        blocks.append(GcnBlock(graphs=tuple(graphs), layers=layers))
    return EncoderStack(
        embedding=emb, kind=cfg.encoder,
        gru_fwd=gru_fwd, gru_bwd=gru_bwd,
        cnn_w=cnn_w, cnn_b=cnn_b, cnn_window=cfg.cnn_window,
        blocks=blocks, label_vocabs=dict(label_vocabs),
    )


def encode_pipeline(batch: Batch, config: ExperimentConfig, params: EncoderStack,
                    mode: str = "infer", edge_retain: float = 1.0, rng=None,
                    src_ids=None) -> EncoderOutput:
    """Embed, run the base encoder, then the residual GCN stack.

    ``src_ids`` overrides ``batch.src`` (the training loop passes
    word-dropped ids). Edge dropout applies only when ``mode == "train"``.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be train or infer, got {mode!r}")
    ids = batch.src if src_ids is None else src_ids
    B, L = ids.shape
    emb = gather_rows(params.embedding, ids.T)  # (L, B, emb)
    if params.kind == "birnn":
        base = birnn_encode(emb, params.gru_fwd, params.gru_bwd)
    else:
        base = cnn_encode(emb, params.cnn_w, params.cnn_b, params.cnn_window)
    d = base.shape[-1]
    H = reshape(transpose(base, (1, 0, 2)), (B * L, d))

    retain = edge_retain if mode == "train" else 1.0
    for block, (graphs, _) in zip(params.blocks, config.blocks):
        edges = {}
        for g in graphs:
            per_sent = batch.sem_edges if g == "sem" else batch.syn_edges
            if per_sent is None:
                raise ValueError(f"recipe reads {g!r} graph absent from the batch")
            vocab = params.label_vocabs[g]
            flat = []
            for i, sent_edges in enumerate(per_sent):
                off = i * L
                flat.extend((off + u, off + v, vocab.id(lab))
                            for u, v, lab in sent_edges)
            edges[g] = flat
        for layer in block.layers:
            H = gcn_layer(H, edges, layer, edge_retain=retain, rng=rng) + H
    states = reshape(H, (B, L, d))
    return EncoderOutput(states=states, mask=batch.src_mask.copy())
