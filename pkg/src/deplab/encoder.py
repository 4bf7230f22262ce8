"""Token representations and the stacked BiLSTM sentence encoder.

Each token is represented as x_i = e(w_i) concatenated with e(t_i); the
contextual vector v(x_i) is the top-layer BiLSTM output at position i,
or x_i itself in direct (no-recurrence) mode. A token can be excluded
from encoding, in which case the shortened sequence is what the BiLSTM
sees and the excluded position falls back to the learned MISSING vector
downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .autodiff import ContractError, ParameterStore, Tape, Value
from .treebank import Sentence

UNK_ID = 0


class ConfigurationError(ValueError):
    """Invalid build-time configuration (empty corpus, bad mode, bad dims)."""


class Vocab:
    """Word and POS id tables with training frequencies for word dropout.

    Ids follow first-occurrence order starting at 1; id 0 is UNK. A
    dedicated root id sits past the last real word so that ordinary ids
    match first-occurrence order exactly.
    """

    def __init__(self, words: List[str], pos_tags: List[str], counts: Dict[str, int]):
        self.words = list(words)
        self.pos_tags = list(pos_tags)
        self.counts = dict(counts)
        self._word_ids = {w: i + 1 for i, w in enumerate(self.words)}
        self._pos_ids = {p: i + 1 for i, p in enumerate(self.pos_tags)}

    @property
    def root_word_id(self) -> int:
        return len(self.words) + 1

    @property
    def root_pos_id(self) -> int:
        return len(self.pos_tags) + 1

    @property
    def word_table_size(self) -> int:
        return len(self.words) + 2  # UNK + words + root

    @property
    def pos_table_size(self) -> int:
        return len(self.pos_tags) + 2

    def word_id(self, form: str) -> int:
        return self._word_ids.get(form, UNK_ID)

    def pos_id(self, tag: str) -> int:
        return self._pos_ids.get(tag, UNK_ID)

    def count(self, form: str) -> int:
        return self.counts.get(form, 0)

    def to_dict(self) -> dict:
        return {"words": self.words, "pos_tags": self.pos_tags, "counts": self.counts}

    @classmethod
    def from_dict(cls, data: dict) -> "Vocab":
        return cls(data["words"], data["pos_tags"],
                   {w: int(c) for w, c in data["counts"].items()})


def build_vocab(sentences: List[Sentence]) -> Vocab:
    """First-occurrence ids and frequency counts from the training corpus."""
    if not sentences:
        raise ConfigurationError("build_vocab: empty training corpus")
    words: List[str] = []
    pos_tags: List[str] = []
    counts: Dict[str, int] = {}
    seen_w: Dict[str, bool] = {}
    seen_p: Dict[str, bool] = {}
    for sent in sentences:
        for tok in sent.tokens:
            if tok.form not in seen_w:
                seen_w[tok.form] = True
                words.append(tok.form)
            counts[tok.form] = counts.get(tok.form, 0) + 1
            if tok.upos not in seen_p:
                seen_p[tok.upos] = True
                pos_tags.append(tok.upos)
    return Vocab(words, pos_tags, counts)


@dataclass
class EncoderParams:
    """Handles to the encoder's parameters inside a ParameterStore."""

    mode: str                       # "bilstm" or "direct"
    word_dim: int
    pos_dim: int
    lstm_dim: int
    layers: int
    feed_root: bool
    word_emb: Value
    pos_emb: Value
    missing: Value
    lstm: List[Dict[str, Tuple[Value, Value, Value]]] = field(default_factory=list)

    @property
    def input_dim(self) -> int:
        return self.word_dim + self.pos_dim

    @property
    def output_dim(self) -> int:
        return 2 * self.lstm_dim if self.mode == "bilstm" else self.input_dim


def build_encoder_params(store: ParameterStore, vocab: Vocab, mode: str,
                         word_dim: int = 100, pos_dim: int = 20,
                         lstm_dim: int = 125, layers: int = 2,
                         feed_root: bool = False,
                         rng: Optional[np.random.Generator] = None) -> EncoderParams:
    """Register encoder parameters; registration order fixes the init stream."""
    if mode not in ("bilstm", "direct"):
        raise ConfigurationError(f"unknown encoder mode {mode!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    word_emb = store.add_glorot("enc.word_emb", (vocab.word_table_size, word_dim), rng)
    pos_emb = store.add_glorot("enc.pos_emb", (vocab.pos_table_size, pos_dim), rng)
    lstm: List[Dict[str, Tuple[Value, Value, Value]]] = []
    if mode == "bilstm":
        for layer in range(layers):
            din = (word_dim + pos_dim) if layer == 0 else 2 * lstm_dim
            per_dir = {}
            for direction in ("fwd", "bwd"):
                w = store.add_glorot(f"enc.l{layer}.{direction}.w", (4 * lstm_dim, din), rng)
                u = store.add_glorot(f"enc.l{layer}.{direction}.u", (4 * lstm_dim, lstm_dim), rng)
                b = store.add_zeros(f"enc.l{layer}.{direction}.b", (4 * lstm_dim, 1))
                per_dir[direction] = (w, u, b)
            lstm.append(per_dir)
    out_dim = 2 * lstm_dim if mode == "bilstm" else word_dim + pos_dim
    missing = store.add_glorot("enc.missing", (out_dim, 1), rng)
    return EncoderParams(mode=mode, word_dim=word_dim, pos_dim=pos_dim,
                         lstm_dim=lstm_dim, layers=layers, feed_root=feed_root,
                         word_emb=word_emb, pos_emb=pos_emb, missing=missing,
                         lstm=lstm)


@dataclass
class EncodedSentence:
    """Per-token x and v Values keyed by original 1-based token index."""

    sentence: Sentence
    tape: Tape
    x: Dict[int, Value]
    v: Dict[int, Value]
    excluded: Optional[int]
    missing: Value

    def v_or_missing(self, index: int) -> Value:
        """v(x_index); MISSING for the root (0), excluded, or out-of-range slots."""
        got = self.v.get(index)
        return got if got is not None else self.missing


def encode(sentence: Sentence, params: EncoderParams, vocab: Vocab,
           exclude: Optional[int] = None, training: bool = False,
           rng: Optional[np.random.Generator] = None,
           word_dropout_alpha: float = 0.25,
           tape: Optional[Tape] = None) -> EncodedSentence:
    """Encode one sentence onto a Tape.

    With exclude=j the BiLSTM consumes the physically shortened sequence;
    v-vectors keep their original indices and index j is simply absent.
    Word dropout (training only) replaces a form by UNK with probability
    alpha/(alpha + count(w)), drawn once per included token in order.
    """
    n = len(sentence)
    if n == 0:
        raise ContractError("encode: empty sentence")
    if exclude is not None and not 1 <= exclude <= n:
        raise ContractError(f"encode: exclude={exclude} out of range 1..{n}")
    if training and rng is None:
        raise ContractError("encode: training=True requires an rng for word dropout")
    if tape is None:
        tape = Tape()

    indices = [i for i in range(1, n + 1) if i != exclude]
    xs: Dict[int, Value] = {}
    seq: List[Tuple[int, Value]] = []
    if params.feed_root:
        root_x = tape.concat([tape.lookup(params.word_emb, vocab.root_word_id),
                              tape.lookup(params.pos_emb, vocab.root_pos_id)])
        seq.append((0, root_x))
    for i in indices:
        tok = sentence.tokens[i - 1]
        wid = vocab.word_id(tok.form)
        if training:
            keep_prob = vocab.count(tok.form) / (word_dropout_alpha + vocab.count(tok.form))
            if rng.random() >= keep_prob:
                wid = UNK_ID
        x = tape.concat([tape.lookup(params.word_emb, wid),
                         tape.lookup(params.pos_emb, vocab.pos_id(tok.upos))])
        xs[i] = x
        seq.append((i, x))

    vs: Dict[int, Value] = {}
    if params.mode == "direct":
        for i, x in seq:
            vs[i] = x
    else:
        layer_in = [x for _, x in seq]
        for layer in range(params.layers):
            wf, uf, bf = params.lstm[layer]["fwd"]
            wb, ub, bb = params.lstm[layer]["bwd"]
            zero = Value.const(np.zeros((params.lstm_dim, 1)))
            h, c = zero, zero
            fwd: List[Value] = []
            for x in layer_in:
                h, c = tape.lstm_cell(x, h, c, wf, uf, bf)
                fwd.append(h)
            h, c = zero, zero
            bwd: List[Value] = [None] * len(layer_in)  # type: ignore[list-item]
            for pos in range(len(layer_in) - 1, -1, -1):
                h, c = tape.lstm_cell(layer_in[pos], h, c, wb, ub, bb)
                bwd[pos] = h
            layer_in = [tape.concat([f, b]) for f, b in zip(fwd, bwd)]
        for (i, _), v in zip(seq, layer_in):
            vs[i] = v

    return EncodedSentence(sentence=sentence, tape=tape, x=xs, v=vs,
                           excluded=exclude, missing=params.missing)
