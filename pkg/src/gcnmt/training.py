"""Maximum-likelihood training: loss, dropout, Adam, the training loop.

Batches are bucketed by exact source length, so a batched forward pass is
numerically identical to encoding each sentence alone. The loop is
deterministic given the seed: initialization, shuffling and dropout all
draw from one generator in a fixed order.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, TrainConfig
from .corpus import PAD, UNK, Batch, make_batch, rejoin_bpe
from .decoder import decoder_step, greedy_decode_batch, init_state
from .encoders import encode_pipeline
from .model import Model, build_model, save_model
from .tensor import Tensor, backward, gather_rows, log_softmax, reshape, stack0, tsum, zero_grads


def nll_loss(logits, targets, mask):
    """Mean negative log-likelihood over unmasked steps.

    ``logits`` has vocabulary on the last axis; ``targets`` and ``mask``
    match the leading axes.
    """
    logits_t = logits if isinstance(logits, Tensor) else Tensor(logits)
    targets = np.asarray(targets, dtype=np.intp)
    mask = np.asarray(mask, dtype=np.float64)
    if logits_t.shape[:-1] != targets.shape or targets.shape != mask.shape:
        raise ValueError(
            f"nll_loss shapes disagree: logits {logits_t.shape}, "
            f"targets {targets.shape}, mask {mask.shape}")
    total = mask.sum()
    if total == 0:
        raise ValueError("nll_loss: all target steps masked")
    vocab = logits_t.shape[-1]
    lsm = log_softmax(logits_t, axis=-1)
    flat = reshape(lsm, (-1,))
    picks = gather_rows(flat, np.arange(targets.size) * vocab + targets.ravel())
    return -tsum(picks * Tensor(mask.ravel())) / total


def word_dropout(ids, retain: float, rng, mode: str = "train"):
    """Replace non-special tokens by UNK with probability 1 - retain."""
    if not 0.0 < retain <= 1.0:
        raise ValueError(f"retain must lie in (0, 1], got {retain}")
    ids = np.asarray(ids, dtype=np.intp)
    if mode != "train" or retain == 1.0:
        return ids.copy()
    drop = rng.random(ids.shape) >= retain
    drop &= ids >= 4  # PAD/UNK/BOS/EOS are exempt
    out = ids.copy()
    out[drop] = UNK
    return out


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    moments: dict = field(default_factory=dict)


def adam_step(params: dict, state: AdamState, lr: float, l2: float = 0.0) -> None:
    """Bias-corrected Adam update in place; L2 is added to the gradients."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        grad = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"adam_step: non-finite gradient for {name}")
        g = grad + l2 * p.data
        if name not in state.moments:
            state.moments[name] = (np.zeros_like(p.data), np.zeros_like(p.data))
        m, v = state.moments[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.moments[name] = (m, v)
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def teacher_forcing_loss(model: Model, batch: Batch, mode: str, train_cfg: TrainConfig,
                         rng) -> Tensor:
    """Cross-entropy of the batch under teacher forcing."""
    if mode == "train":
        src_ids = word_dropout(batch.src, train_cfg.word_retain, rng, mode)
        tgt_in = word_dropout(batch.tgt[:, :-1], train_cfg.word_retain, rng, mode)
    else:
        src_ids = batch.src
        tgt_in = batch.tgt[:, :-1]
    tgt_out = batch.tgt[:, 1:]
    mask = tgt_out != PAD
    enc = encode_pipeline(batch, model.config, model.encoder, mode=mode,
                          edge_retain=train_cfg.edge_retain, rng=rng,
                          src_ids=src_ids)
    s = init_state(enc, model.decoder)
    step_logits = []
    for t in range(tgt_in.shape[1]):
        s, logits = decoder_step(tgt_in[:, t], s, enc, model.decoder)
        step_logits.append(logits)
    all_logits = stack0(step_logits)  # (T, B, vocab)
    return nll_loss(all_logits, tgt_out.T, mask.T)


def bucket_batches(pairs, src_vocab, tgt_vocab, bpe, train_cfg: TrainConfig, rng=None):
    """Group sentence pairs into batches of uniform source length."""
    order = list(range(len(pairs)))
    if rng is not None:
        rng.shuffle(order)
    buckets = {}
    for i in order:
        buckets.setdefault(len(pairs[i][0].tokens), []).append(pairs[i])
    batches = []
    for length in sorted(buckets):
        group = buckets[length]
        for i in range(0, len(group), train_cfg.batch_size):
            batches.append(make_batch(group[i:i + train_cfg.batch_size],
                                      src_vocab, tgt_vocab, bpe,
                                      max_len=train_cfg.max_sentence_len))
    return batches


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    val_bleu: float
    seconds: float


@dataclass
class TrainResult:
    model: Model
    history: list
    best_epoch: int
    best_val_bleu: float
    best_checkpoint: str | None


def translate_pairs(model: Model, pairs, src_vocab, tgt_vocab, bpe,
                    train_cfg: TrainConfig):
    """Greedy-decode a list of pairs; returns detokenized word lists."""
    hyps = []
    batches = bucket_batches(pairs, src_vocab, tgt_vocab, bpe, train_cfg)
    for batch in batches:
        enc = encode_pipeline(batch, model.config, model.encoder, mode="infer")
        for ids in greedy_decode_batch(enc, model.decoder,
                                       model.config.max_decode_len):
            pieces = [tgt_vocab.token(i) for i in ids]
            hyps.append(rejoin_bpe(pieces) if bpe is not None else pieces)
    return hyps


def train(train_cfg: TrainConfig, exp_cfg: ExperimentConfig, train_pairs,
          val_pairs, src_vocab, tgt_vocab, bpe, label_vocabs,
          out_dir=None) -> TrainResult:
    """Train a model from scratch; returns history and the best model.

    Writes per-epoch checkpoints and a tab-separated metrics log under
    ``out_dir`` when given; the final ``best.npz`` checkpoint is the epoch
    with the highest validation BLEU.
    """
    from .evaluation import bleu  # local import to avoid a module cycle

    train_cfg.validate()
    exp_cfg.validate()
    if not train_pairs:
        raise ValueError("train: empty corpus")
    rng = np.random.default_rng(train_cfg.rng_seed)
    model = build_model(exp_cfg, len(src_vocab), len(tgt_vocab), label_vocabs, rng)
    params = model.parameters()
    state = AdamState()
    refs = [list(tgt) for _, tgt in val_pairs]
    history = []
    best_epoch, best_bleu = 0, -1.0
    best_path = None
    metrics_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        metrics_fh = open(os.path.join(out_dir, "metrics.tsv"), "w", encoding="utf-8")
    try:
        for epoch in range(1, train_cfg.epochs + 1):
            t0 = time.time()
            batches = bucket_batches(train_pairs, src_vocab, tgt_vocab, bpe,
                                     train_cfg, rng=rng)
            total_loss, total_steps = 0.0, 0
            for batch in batches:
                loss = teacher_forcing_loss(model, batch, "train", train_cfg, rng)
                value = loss.item()
                if not np.isfinite(value):
                    raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
                n_steps = int((batch.tgt[:, 1:] != PAD).sum())
                total_loss += value * n_steps
                total_steps += n_steps
                zero_grads(params)
                backward(loss)
                adam_step(params, state, train_cfg.learning_rate, train_cfg.l2_coeff)
            train_loss = total_loss / max(1, total_steps)
            val_bleu = 0.0
            if val_pairs:
                hyps = translate_pairs(model, val_pairs, src_vocab, tgt_vocab, bpe,
                                       train_cfg)
                val_bleu = bleu(hyps, refs).bleu
            seconds = time.time() - t0
            history.append(EpochMetrics(epoch, train_loss, val_bleu, seconds))
            if metrics_fh is not None:
                metrics_fh.write(f"{epoch}\t{train_loss:.6f}\t{val_bleu:.2f}\t"
                                 f"{seconds:.2f}\n")
                metrics_fh.flush()
            if out_dir is not None and epoch % train_cfg.checkpoint_every == 0:
                save_model(os.path.join(out_dir, f"epoch_{epoch:04d}.npz"), model)
            if val_bleu > best_bleu:
                best_bleu, best_epoch = val_bleu, epoch
                if out_dir is not None:
                    best_path = os.path.join(out_dir, "best.npz")
                    save_model(best_path, model)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return TrainResult(model=model, history=history, best_epoch=best_epoch,
                       best_val_bleu=best_bleu, best_checkpoint=best_path)
