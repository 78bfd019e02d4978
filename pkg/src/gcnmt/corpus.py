"""Corpus ingestion: annotated sentences, vocabularies, BPE, batching.

Annotated corpora arrive as column text (CoNLL-2009 style), one token per
line, blank line between sentences. Columns are whitespace separated:

    ID FORM HEAD DEPREL PRED APRED_1 ... APRED_k

* ID        1-based token index.
* FORM      surface token.
* HEAD      1-based index of the syntactic head, 0 for the root.
* DEPREL    dependency label of the HEAD -> ID edge ("root" when HEAD=0).
* PRED      "Y" if the token is a predicate, "_" otherwise.
* APRED_j   role label if this token is an argument of the j-th predicate
            (predicates ordered by position), "_" otherwise.

Every row of a sentence must carry 5 + (number of predicates) columns.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

PAD, UNK, BOS, EOS = 0, 1, 2, 3
SPECIALS = ("<pad>", "<unk>", "<bos>", "<eos>")

BPE_EOW = "</w>"
BPE_JOIN = "@@"

UNK_LABEL = "<unk-label>"


class CorpusError(ValueError):
    """Malformed corpus input."""


@dataclass
class AnnotatedSentence:
    """Token sequence plus labeled directed graphs over token positions.

    Edges run head -> dependent: a semantic edge points from the predicate
    position to the argument position and carries the role label.
    """

    tokens: list
    sem_edges: list = field(default_factory=list)
    syn_edges: list = field(default_factory=list)

    def validate(self) -> None:
        n = len(self.tokens)
        for u, v, lab in self.sem_edges + self.syn_edges:
            if not (0 <= u < n and 0 <= v < n):
                raise CorpusError(f"edge ({u},{v},{lab}) out of range for {n} tokens")
            if u == v:
                raise CorpusError(f"self-referential edge at position {u}")


def ingest_conll(text: str):
    """Parse column-format text into a list of AnnotatedSentence."""
    sentences = []
    block = []
    block_start = 1
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.strip()
        if line:
            if not block:
                block_start = lineno
            block.append((lineno, line))
        elif block:
            sentences.append(_parse_block(block, block_start))
            block = []
    if block:
        sentences.append(_parse_block(block, block_start))
    return sentences


def _parse_block(block, block_start: int) -> AnnotatedSentence:
    rows = [line.split() for _, line in block]
    n = len(rows)
    ncols = len(rows[0])
    for (lineno, _), cols in zip(block, rows):
        if len(cols) != ncols:
            raise CorpusError(f"line {lineno}: ragged columns ({len(cols)} vs {ncols})")
        if len(cols) < 5:
            raise CorpusError(f"line {lineno}: expected at least 5 columns")
    tokens = []
    pred_positions = [i for i, cols in enumerate(rows) if cols[4] == "Y"]
    if ncols != 5 + len(pred_positions):
        raise CorpusError(
            f"line {block_start}: {len(pred_positions)} predicates require "
            f"{5 + len(pred_positions)} columns, found {ncols}"
        )
    syn_edges = []
    sem_edges = []
    for i, ((lineno, _), cols) in enumerate(zip(block, rows)):
        try:
            idx = int(cols[0])
            head = int(cols[2])
        except ValueError as e:
            raise CorpusError(f"line {lineno}: non-integer index/head") from e
        if idx != i + 1:
            raise CorpusError(f"line {lineno}: token index {idx}, expected {i + 1}")
        if not (0 <= head <= n):
            raise CorpusError(f"line {lineno}: head index {head} out of range (1..{n})")
        if head == idx:
            raise CorpusError(f"line {lineno}: self-referential head")
        tokens.append(cols[1])
        if head > 0:
            syn_edges.append((head - 1, i, cols[3]))
        for k, role in enumerate(cols[5:]):
            if role == "_":
                continue
            pred = pred_positions[k]
            if pred == i:
                raise CorpusError(f"line {lineno}: predicate is its own argument")
            sem_edges.append((pred, i, role))
    return AnnotatedSentence(tokens=tokens, sem_edges=sem_edges, syn_edges=syn_edges)


def serialize_conll(sentences) -> str:
    """Inverse of ingest_conll; round-trips every well-formed sentence."""
    out = []
    for sent in sentences:
        sent.validate()
        n = len(sent.tokens)
        heads = {}
        for u, v, lab in sent.syn_edges:
            if v in heads:
                raise CorpusError(f"token {v} has more than one syntactic head")
            heads[v] = (u + 1, lab)
        pred_positions = sorted({u for u, _, _ in sent.sem_edges})
        roles = {}
        for u, v, lab in sent.sem_edges:
            key = (pred_positions.index(u), v)
            if key in roles:
                raise CorpusError(f"duplicate role for predicate {u}, argument {v}")
            roles[key] = lab
        for i, tok in enumerate(sent.tokens):
            head, deprel = heads.get(i, (0, "root"))
            cols = [str(i + 1), tok, str(head), deprel]
            cols.append("Y" if i in pred_positions else "_")
            for k in range(len(pred_positions)):
                cols.append(roles.get((k, i), "_"))
            out.append("\t".join(cols))
        out.append("")
    return "\n".join(out) + ("\n" if out else "")


class Vocabulary:
    """Token <-> id map with reserved specials PAD=0, UNK=1, BOS=2, EOS=3."""

    def __init__(self, tokens):
        self.id_to_token = list(SPECIALS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    def id(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.id_to_token:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            entries = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if tuple(entries[:4]) != SPECIALS:
            raise CorpusError(f"{path}: vocabulary file must start with {SPECIALS}")
        return cls(entries[4:])


def build_vocab(corpus, min_count: int = 1) -> Vocabulary:
    """Keep tokens with count >= min_count, ordered by frequency then lexically."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    for sent in corpus:
        counts.update(sent)
    for special in SPECIALS:
        counts.pop(special, None)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(kept)


class BpeModel:
    """Ordered merge table; the end-of-word marker is appended to final chars."""

    def __init__(self, merges):
        self.merges = [tuple(m) for m in merges]
        self._cache = {}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for a, b in self.merges:
                fh.write(f"{a} {b}\n")

    @classmethod
    def load(cls, path) -> "BpeModel":
        merges = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                parts = line.rstrip("\n").split(" ")
                if len(parts) != 2:
                    raise CorpusError(f"{path} line {lineno}: expected two symbols")
                merges.append((parts[0], parts[1]))
        return cls(merges)


def _word_symbols(token: str):
    return list(token[:-1]) + [token[-1] + BPE_EOW]


def _merge_symbols(symbols, pair):
    a, b = pair
    out = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def learn_bpe(corpus, num_merges: int) -> BpeModel:
    """Greedy most-frequent-pair merges; ties broken lexicographically."""
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    word_freq = Counter()
    for sent in corpus:
        word_freq.update(tok for tok in sent if tok)
    words = {w: _word_symbols(w) for w in word_freq}
    merges = []
    for _ in range(num_merges):
        pair_counts = Counter()
        for w, syms in words.items():
            freq = word_freq[w]
            for a, b in zip(syms, syms[1:]):
                pair_counts[(a, b)] += freq
        if not pair_counts:
            break
        top = max(pair_counts.values())
        best = min(p for p, c in pair_counts.items() if c == top)
        merges.append(best)
        for w in words:
            words[w] = _merge_symbols(words[w], best)
    return BpeModel(merges)


def apply_bpe(model: BpeModel, token: str):
    """Deterministic segmentation; inner pieces carry the join marker."""
    if not token:
        return []
    cached = model._cache.get(token)
    if cached is not None:
        return list(cached)
    symbols = _word_symbols(token)
    for pair in model.merges:
        if len(symbols) == 1:
            break
        symbols = _merge_symbols(symbols, pair)
    pieces = [s + BPE_JOIN for s in symbols[:-1]]
    pieces.append(symbols[-1][: -len(BPE_EOW)])
    model._cache[token] = tuple(pieces)
    return pieces


def segment(model, tokens):
    """Apply BPE to a token list; ``model`` may be None (word-level identity)."""
    if model is None:
        return list(tokens)
    out = []
    for tok in tokens:
        out.extend(apply_bpe(model, tok))
    return out


def rejoin_bpe(pieces):
    """Undo apply_bpe over a sentence: glue marker-carrying pieces back together."""
    words = []
    current = ""
    for piece in pieces:
        if piece.endswith(BPE_JOIN):
            current += piece[: -len(BPE_JOIN)]
        else:
            words.append(current + piece)
            current = ""
    if current:
        words.append(current)
    return words


class LabelVocab:
    """Edge-label inventory with a reserved UNK entry for rare/unseen labels."""

    def __init__(self, labels):
        self.labels = [UNK_LABEL] + [l for l in labels if l != UNK_LABEL]
        self.index = {l: i for i, l in enumerate(self.labels)}

    def __len__(self):
        return len(self.labels)

    def id(self, label: str) -> int:
        return self.index.get(label, 0)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for lab in self.labels:
                fh.write(lab + "\n")

    @classmethod
    def load(cls, path) -> "LabelVocab":
        with open(path, encoding="utf-8") as fh:
            labels = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if not labels or labels[0] != UNK_LABEL:
            raise CorpusError(f"{path}: label file must start with {UNK_LABEL}")
        return cls(labels[1:])


def build_label_vocab(edge_lists, min_count: int = 2) -> LabelVocab:
    """Labels seen fewer than min_count times fold into the UNK entry."""
    counts = Counter(lab for edges in edge_lists for _, _, lab in edges)
    kept = sorted(
        (l for l, c in counts.items() if c >= min_count),
        key=lambda l: (-counts[l], l),
    )
    return LabelVocab(kept)


@dataclass
class Batch:
    """Padded id matrices plus per-sentence edge lists.

    ``tgt`` rows read BOS, target ids, EOS, PAD...; slice [:, :-1] for
    teacher-forcing inputs and [:, 1:] for prediction targets.
    """

    src: np.ndarray
    tgt: np.ndarray
    src_len: np.ndarray
    sem_edges: list
    syn_edges: list
    src_mask: np.ndarray

    @property
    def size(self) -> int:
        return self.src.shape[0]


def make_batch(pairs, src_vocab: Vocabulary, tgt_vocab: Vocabulary, bpe=None,
               max_len: int | None = None) -> Batch:
    """Map (AnnotatedSentence, target tokens) pairs to a padded Batch.

    Source stays word-level; the target side is BPE-segmented when a model
    is given, then id-mapped with BOS/EOS framing.
    """
    if not pairs:
        raise ValueError("make_batch: empty sentence list")
    src_ids = []
    tgt_ids = []
    sem_edges = []
    syn_edges = []
    for sent, tgt_tokens in pairs:
        sent.validate()
        if max_len is not None and len(sent.tokens) > max_len:
            raise CorpusError(
                f"source sentence of length {len(sent.tokens)} exceeds max {max_len}"
            )
        pieces = segment(bpe, tgt_tokens)
        if max_len is not None and len(pieces) > max_len:
            raise CorpusError(
                f"target sentence of length {len(pieces)} exceeds max {max_len}"
            )
        src_ids.append([src_vocab.id(t) for t in sent.tokens])
        tgt_ids.append([BOS] + [tgt_vocab.id(t) for t in pieces] + [EOS])
        sem_edges.append(list(sent.sem_edges))
        syn_edges.append(list(sent.syn_edges))
    max_src = max(len(s) for s in src_ids)
    max_tgt = max(len(t) for t in tgt_ids)
    src = np.full((len(pairs), max_src), PAD, dtype=np.intp)
    tgt = np.full((len(pairs), max_tgt), PAD, dtype=np.intp)
    src_len = np.zeros(len(pairs), dtype=np.intp)
    for i, (s, t) in enumerate(zip(src_ids, tgt_ids)):
        src[i, : len(s)] = s
        tgt[i, : len(t)] = t
        src_len[i] = len(s)
    src_mask = np.arange(max_src)[None, :] < src_len[:, None]
    return Batch(src=src, tgt=tgt, src_len=src_len, sem_edges=sem_edges,
                 syn_edges=syn_edges, src_mask=src_mask)
