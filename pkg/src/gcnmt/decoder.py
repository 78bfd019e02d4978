"""Attention-based GRU decoder with greedy and beam search.

Scoring is additive attention over encoder states; the GRU consumes the
previous target embedding concatenated with the context vector, and the
output projection reads [state; context; previous embedding]. Beam search
is length-unnormalized: finished hypotheses compete in a completed pool
and the highest-scoring completed hypothesis wins (best live one at
max_len if nothing finished).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import BOS, EOS
from .encoders import EncoderOutput, GruParams, _uniform, gru_cell, init_gru
from .tensor import (
    Tensor,
    concat,
    gather_rows,
    log_softmax,
    matmul,
    no_grad,
    reshape,
    softmax,
    tanh,
    tsum,
)


@dataclass
class AttentionParams:
    u_dec: Tensor    # (dec_hidden, attn)
    v_enc: Tensor    # (enc_width, attn)
    score_v: Tensor  # (attn,)

    def named(self, prefix: str):
        return {f"{prefix}.{k}": getattr(self, k) for k in
                ("u_dec", "v_enc", "score_v")}


@dataclass
class DecoderParams:
    embedding: Tensor          # (tgt_vocab, emb)
    gru: GruParams             # input dim = emb + enc_width
    attn: AttentionParams
    w_init: Tensor             # (enc_width, dec_hidden)
    b_init: Tensor
    w_out: Tensor              # (dec_hidden + enc_width + emb, tgt_vocab)
    b_out: Tensor

    def named(self, prefix: str = "decoder"):
        out = {f"{prefix}.embedding": self.embedding,
               f"{prefix}.w_init": self.w_init, f"{prefix}.b_init": self.b_init,
               f"{prefix}.w_out": self.w_out, f"{prefix}.b_out": self.b_out}
        out.update(self.gru.named(f"{prefix}.gru"))
        out.update(self.attn.named(f"{prefix}.attn"))
        return out


def build_decoder(vocab_size: int, emb_size: int, dec_hidden: int, enc_width: int,
                  attn_size: int, rng) -> DecoderParams:
    return DecoderParams(
        embedding=_uniform(rng, (vocab_size, emb_size)),
        gru=init_gru(rng, emb_size + enc_width, dec_hidden),
        attn=AttentionParams(
            u_dec=_uniform(rng, (dec_hidden, attn_size)),
            v_enc=_uniform(rng, (enc_width, attn_size)),
            score_v=_uniform(rng, (attn_size,)),
        ),
        w_init=_uniform(rng, (enc_width, dec_hidden)),
        b_init=_uniform(rng, (dec_hidden,)),
        w_out=_uniform(rng, (dec_hidden + enc_width + emb_size, vocab_size)),
        b_out=_uniform(rng, (vocab_size,)),
    )


@dataclass
class Hypothesis:
    """Beam-search bookkeeping: token ids, cumulative log-prob, decoder state."""

    tokens: list = field(default_factory=list)
    score: float = 0.0
    state: Tensor | None = None

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS

    def translation(self):
        return self.tokens[:-1] if self.finished else list(self.tokens)


def attention(s_prev: Tensor, enc: EncoderOutput, params: AttentionParams):
    """Masked additive attention; returns (weights, context).

    Per sentence: s_prev (h,), states (len, d) -> weights (len,), context (d,).
    Batched: s_prev (B, h), states (B, len, d) -> (B, len), (B, d).
    """
    states = enc.states
    if not bool(np.asarray(enc.mask).any(axis=-1).all()):
        raise ValueError("attention: all source positions masked")
    proj_s = matmul(s_prev, params.u_dec)
    proj_e = matmul(states, params.v_enc)
    if states.ndim == 3:
        proj_s = reshape(proj_s, (proj_s.shape[0], 1, proj_s.shape[-1]))
    scores = matmul(tanh(proj_e + proj_s), params.score_v)
    weights = softmax(scores, mask=enc.mask, axis=-1)
    if states.ndim == 3:
        context = tsum(reshape(weights, weights.shape + (1,)) * states, axis=1)
    else:
        context = matmul(weights, states)
    return weights, context


def init_state(enc: EncoderOutput, params: DecoderParams) -> Tensor:
    """tanh-affine of the masked average of encoder states."""
    mask = np.asarray(enc.mask, dtype=np.float64)
    denom = mask.sum(axis=-1, keepdims=True)
    avg = tsum(enc.states * Tensor(mask[..., None] / denom[..., None]), axis=-2)
    return tanh(matmul(avg, params.w_init) + params.b_init)


def decoder_step(y_prev_id, s_prev: Tensor, enc: EncoderOutput,
                 params: DecoderParams):
    """One decoding step; returns (new state, unnormalized vocab logits)."""
    ids = np.asarray(y_prev_id, dtype=np.intp)
    emb = gather_rows(params.embedding, ids)
    _, context = attention(s_prev, enc, params.attn)
    x = concat([emb, context], axis=-1)
    s_t = gru_cell(x, s_prev, params.gru)
    logits = matmul(concat([s_t, context, emb], axis=-1), params.w_out) + params.b_out
    return s_t, logits


def _sentence_view(enc: EncoderOutput, i: int) -> EncoderOutput:
    states = reshape(gather_rows(enc.states, np.asarray([i])), enc.states.shape[1:])
    return EncoderOutput(states=states, mask=enc.mask[i])


def score_sequence(enc: EncoderOutput, params: DecoderParams, tokens) -> float:
    """Cumulative log-probability of ``tokens`` (EOS appended if absent)."""
    seq = list(tokens)
    if not seq or seq[-1] != EOS:
        seq = seq + [EOS]
    with no_grad():
        s = init_state(enc, params)
        prev = BOS
        total = 0.0
        for tok in seq:
            s, logits = decoder_step(prev, s, enc, params)
            total += float(log_softmax(logits).data[tok])
            prev = tok
    return total


def greedy_decode(enc: EncoderOutput, params: DecoderParams, max_len: int):
    """Argmax decoding for a single sentence; returns ids without BOS/EOS."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    with no_grad():
        s = init_state(enc, params)
        prev = BOS
        out = []
        for _ in range(max_len):
            s, logits = decoder_step(prev, s, enc, params)
            tok = int(np.argmax(logits.data))
            if tok == EOS:
                break
            out.append(tok)
            prev = tok
    return out


def greedy_decode_batch(enc: EncoderOutput, params: DecoderParams, max_len: int):
    """Batched argmax decoding; returns one id list per sentence."""
    with no_grad():
        B = enc.states.shape[0]
        s = init_state(enc, params)
        prev = np.full(B, BOS, dtype=np.intp)
        done = np.zeros(B, dtype=bool)
        outs = [[] for _ in range(B)]
        for _ in range(max_len):
            s, logits = decoder_step(prev, s, enc, params)
            toks = np.argmax(logits.data, axis=-1)
            for i in range(B):
                if done[i]:
                    continue
                if toks[i] == EOS:
                    done[i] = True
                else:
                    outs[i].append(int(toks[i]))
            prev = np.where(done, EOS, toks).astype(np.intp)
            if done.all():
                break
    return outs


def beam_decode(enc: EncoderOutput, params: DecoderParams, beam: int,
                max_len: int) -> Hypothesis:
    """Length-unnormalized beam search over one sentence."""
    if beam < 1:
        raise ValueError("beam must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    with no_grad():
        live = [Hypothesis(tokens=[], score=0.0, state=init_state(enc, params))]
        completed = []
        for _ in range(max_len):
            candidates = []
            for hyp in live:
                prev = hyp.tokens[-1] if hyp.tokens else BOS
                s_t, logits = decoder_step(prev, hyp.state, enc, params)
                logprobs = log_softmax(logits).data
                for tok in range(logprobs.shape[-1]):
                    candidates.append(
                        (hyp.score + float(logprobs[tok]), tok, hyp, s_t))
            candidates.sort(key=lambda c: (-c[0], c[1]))
            live = []
            for score, tok, hyp, s_t in candidates[:beam]:
                new = Hypothesis(tokens=hyp.tokens + [tok], score=score, state=s_t)
                if tok == EOS:
                    completed.append(new)
                else:
                    live.append(new)
            if not live:
                break
        pool = completed if completed else live
        return max(pool, key=lambda h: h.score)
