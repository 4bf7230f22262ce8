"""Token-exclusion ablation: train and evaluate parsers that, at every
decision, drop one token at a fixed structural position from the
sequence encoder.

A spec names one position. For the transition parser that is a
configuration role (s0, s1L, b0, ...) resolved against the live
configuration; for the graph parser a relation of the scored arc (h, d)
read off the gold tree (sibling: another gold dependent of h; child: a
gold child of d; grandparent: the gold head of h) or a surface offset
of the dependent like d+2. Resolving relations against the candidate
head rather than the dependent's own gold arc keeps the exclusion
pattern independent of the answer: which token goes missing never tells
the scorer where d is actually attached. When several tokens qualify
one is picked uniformly at random; when none does, the decision uses
the ordinary encoding. Exclusion applies at training and, by default,
at evaluation as well.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tape, Value
from .encoder import ConfigurationError, EncodedSentence, encode
from .evaluation import EvalReport, las, seed_stats
from .graph import NEG, GraphModel, ScoredArcs, decode, label_scores, score_arcs, \
    sibling_decomposition
from .transition import (Configuration, DecodeError, OracleState,
                         TransitionModel, extract_features, oracle_transition,
                         score_transitions)
from .treebank import DepTree, Sentence, Token

_TRANSITION_POSITION = re.compile(r"^(s[012]|b[01])(L|Lx|R|Rx)?$")
_GRAPH_OFFSET = re.compile(r"^d([+-]\d+)$")
_GRAPH_RELATIONS = ("sibling", "child", "grandparent")

DROPPED_FORM = "\x00dropped"      # never a vocabulary entry, so maps to UNK


@dataclass(frozen=True)
class AblationSpec:
    """One parser kind plus one structural position to ablate."""

    parser: str        # "transition" or "graph"
    position: str

    def __post_init__(self):
        if self.parser == "transition":
            if not _TRANSITION_POSITION.match(self.position):
                raise ConfigurationError(
                    f"unknown transition position {self.position!r}")
        elif self.parser == "graph":
            if self.position not in _GRAPH_RELATIONS:
                match = _GRAPH_OFFSET.match(self.position)
                if not match or int(match.group(1)) == 0:
                    raise ConfigurationError(
                        f"unknown graph relation {self.position!r}")
        else:
            raise ConfigurationError(f"unknown parser kind {self.parser!r}")


# ---- position resolution ---------------------------------------------


def _owner_children(owner: int, config: Configuration, role: str) -> List[int]:
    kids = config.children.get(owner, [])
    left = sorted(k for k in kids if k < owner)
    right = sorted(k for k in kids if k > owner)
    if role == "L":
        return left[:1]
    if role == "Lx":
        return left[1:]
    if role == "R":
        return right[-1:]
    return right[:-1]              # Rx


def _transition_candidates(position: str, config: Configuration) -> List[int]:
    match = _TRANSITION_POSITION.match(position)
    core, role = match.group(1), match.group(2)
    if core.startswith("s"):
        item = config.stack_item(int(core[1]))
        if item is None or item == 0:
            return []
    else:
        item = config.buffer_item(int(core[1]))
        if item is None:
            return []
    if role is None:
        return [item]
    return _owner_children(item, config, role)


def _graph_candidates(position: str, arc: Tuple[int, int],
                      heads: Sequence[int]) -> List[int]:
    head, dep = arc
    n = len(heads)
    if position == "sibling":
        return [k for k in range(1, n + 1) if k != dep and heads[k - 1] == head]
    if position == "child":
        return [k for k in range(1, n + 1) if heads[k - 1] == dep]
    if position == "grandparent":
        if head == 0:
            return []
        grand = heads[head - 1]
        return [grand] if grand != 0 else []
    offset = int(_GRAPH_OFFSET.match(position).group(1))
    k = dep + offset
    return [k] if 1 <= k <= n and k != dep else []


def select_drop_token(spec: AblationSpec, context,
                      rng: np.random.Generator) -> Optional[int]:
    """Token to exclude for one decision, or None if the slot is empty.

    context is the live Configuration for transition specs, or a tuple
    ((head, dependent), gold head list) for graph specs. Several
    qualifying tokens are resolved by a uniform random pick.
    """
    if spec.parser == "transition":
        candidates = _transition_candidates(spec.position, context)
    else:
        arc, heads = context
        candidates = _graph_candidates(spec.position, arc, heads)
    if not candidates:
        return None
    if len(candidates) == 1:
        return candidates[0]
    return int(candidates[int(rng.integers(0, len(candidates)))])


# ---- shared machinery ------------------------------------------------


def _dropout_shadow(sentence: Sentence, vocab, alpha: float,
                    rng: np.random.Generator) -> Sentence:
    """Pre-draw word dropout once per sentence so every exclusion variant
    sees the same replacement pattern (the cache stays bit-exact)."""
    if alpha <= 0.0:
        return sentence
    forms = []
    changed = False
    for tok in sentence.tokens:
        count = vocab.count(tok.form)
        keep = count / (alpha + count)
        if rng.random() >= keep:
            forms.append(DROPPED_FORM)
            changed = True
        else:
            forms.append(tok.form)
    if not changed:
        return sentence
    tokens = [Token(index=t.index, form=f, upos=t.upos, gold_head=t.gold_head,
                    gold_label=t.gold_label) for t, f in zip(sentence.tokens, forms)]
    return Sentence(tokens=tokens, sent_id=sentence.sent_id)


class EncodingCache:
    """At most one encoding per excluded index (plus the unexcluded one)."""

    def __init__(self, sentence: Sentence, model, tape: Tape):
        self.sentence = sentence
        self.model = model
        self.tape = tape
        self.store: Dict[Optional[int], EncodedSentence] = {}

    def get(self, exclude: Optional[int]) -> EncodedSentence:
        enc = self.store.get(exclude)
        if enc is None:
            enc = encode(self.sentence, self.model.encoder, self.model.vocab,
                         exclude=exclude, tape=self.tape)
            self.store[exclude] = enc
        return enc

    def __len__(self) -> int:
        return len(self.store)


# ---- transition parser -----------------------------------------------


def _check_spec(model, spec: AblationSpec) -> None:
    wants = "transition" if isinstance(model, TransitionModel) else "graph"
    if spec.parser != wants:
        raise ConfigurationError(
            f"spec targets the {spec.parser} parser but the model is {wants}")


def train_epoch_transition_ablated(model: TransitionModel, spec: AblationSpec,
                                   sentences: Sequence[Sentence],
                                   rng: np.random.Generator,
                                   learning_rate: float = 0.001,
                                   word_dropout_alpha: float = 0.25,
                                   dropout_rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    """Static-oracle epoch where each decision's features come from an
    encoding that excludes the spec position's token (when occupied).

    rng draws the drop choices; dropout_rng (defaults to rng) draws word
    dropout, so the two consumers can run on independent streams.
    """
    _check_spec(model, spec)
    droprng = rng if dropout_rng is None else dropout_rng
    total_loss = 0.0
    total_steps = 0
    violations = 0
    for sentence in sentences:
        tape = Tape()
        shadow = _dropout_shadow(sentence, model.vocab, word_dropout_alpha, droprng)
        cache = EncodingCache(shadow, model, tape)
        state = OracleState.for_tree(sentence.gold_tree())
        config = Configuration(len(sentence))
        feats: List[Value] = []
        gold_ids: List[int] = []
        legal_sets: List[List[int]] = []
        while not config.is_terminal():
            t = oracle_transition(config, state)
            drop = select_drop_token(spec, config, rng)
            enc = cache.get(drop)
            feats.append(extract_features(config, enc, model.feature_set))
            gold_ids.append(model.transition_id(t))
            legal_sets.append(model.legal_ids(config))
            config.apply(t)
        if not feats:
            continue
        scores = score_transitions(tape.hstack(feats), model, tape)
        loss_terms: List[Value] = []
        for col, (gold, legal) in enumerate(zip(gold_ids, legal_sets)):
            column = scores.data[:, col]
            best_bad, best_score = -1, -np.inf
            for tid in legal:
                if tid != gold and column[tid] > best_score:
                    best_bad, best_score = tid, column[tid]
            total_steps += 1
            if best_bad < 0:
                continue
            margin = 1.0 + best_score - column[gold]
            if margin > 0.0:
                violations += 1
                total_loss += margin
                loss_terms.append(tape.sub(tape.pick(scores, best_bad, col),
                                           tape.pick(scores, gold, col)))
        if loss_terms:
            loss = loss_terms[0]
            for term in loss_terms[1:]:
                loss = tape.add(loss, term)
            model.store.accumulate(tape.backward(loss))
            model.store.adam_step(learning_rate)
    return {"loss": total_loss, "steps": float(total_steps),
            "violations": float(violations)}


def parse_transition_ablated(model: TransitionModel, spec: AblationSpec,
                             sentence: Sentence,
                             rng: np.random.Generator) -> DepTree:
    """Greedy decode with the same per-decision exclusion as training."""
    _check_spec(model, spec)
    n = len(sentence)
    tape = Tape()
    cache = EncodingCache(sentence, model, tape)
    config = Configuration(n)
    limit = max(8, 4 * n * n)
    steps = 0
    while not config.is_terminal():
        if steps >= limit:
            raise DecodeError(
                f"parse: no terminal configuration after {limit} transitions")
        drop = select_drop_token(spec, config, rng)
        enc = cache.get(drop)
        legal = model.legal_ids(config)
        feats = extract_features(config, enc, model.feature_set)
        scores = score_transitions(feats, model, tape).data[:, 0]
        masked = np.full_like(scores, -np.inf)
        masked[legal] = scores[legal]
        config.apply(model.transition_from_id(int(np.argmax(masked))))
        steps += 1
    return config.tree(fallback_label=model.labels[0] if model.labels else "dep")


# ---- graph parser ----------------------------------------------------


def _assemble_ablated_scores(model: GraphModel, spec: AblationSpec,
                             sentence: Sentence, gold_heads: Sequence[int],
                             cache: EncodingCache,
                             rng: np.random.Generator):
    """Per-arc exclusion: every pair (h, d) is scored under its own
    drop choice, resolved in fixed (h, d) order so one rng replays.
    Returns the assembled arc matrix, the sibling tensor for order-2
    models, the per-arc exclusions, and the ScoredArcs of each
    encoding variant."""
    n = len(sentence)
    excl_by_arc: Dict[Tuple[int, int], Optional[int]] = {}
    for h in range(n + 1):
        for d in range(1, n + 1):
            if d == h:
                continue
            excl_by_arc[(h, d)] = select_drop_token(spec, ((h, d), gold_heads),
                                                    rng)
    variants: Dict[Optional[int], ScoredArcs] = {}
    for drop in set(excl_by_arc.values()):
        variants[drop] = score_arcs(cache.get(drop), model)
    matrix = np.full((n + 1, n + 1), NEG)
    sib = np.full((n + 1, n + 1, n + 1), NEG) if model.order == 2 else None
    for (h, d), drop in excl_by_arc.items():
        scored = variants[drop]
        matrix[h, d] = scored.matrix[h, d]
        if sib is not None:
            sib[h, d, :] = scored.sib_matrix[h, d, :]
    return matrix, sib, excl_by_arc, variants


def _ablated_tree_terms(tree_heads: Sequence[int], excl_by_arc, variants,
                        order: int) -> List[Tuple[ScoredArcs, int]]:
    """(variant, column) pairs whose picks sum to the tree's score."""
    terms = []
    if order == 1:
        for d, h in enumerate(tree_heads, start=1):
            scored = variants[excl_by_arc[(h, d)]]
            terms.append((scored, scored.col_of[(h, d)]))
    else:
        for h, d, s in sibling_decomposition(tree_heads):
            scored = variants[excl_by_arc[(h, d)]]
            terms.append((scored, scored.sib_col_of[(h, d, s)]))
    return terms


def train_epoch_graph_ablated(model: GraphModel, spec: AblationSpec,
                              sentences: Sequence[Sentence],
                              rng: np.random.Generator,
                              learning_rate: float = 0.001,
                              hamming_weight: float = 1.0,
                              word_dropout_alpha: float = 0.25,
                              dropout_rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    """Structured-hinge epoch with per-arc gold-tree exclusions.

    rng draws the drop choices; dropout_rng (defaults to rng) draws word
    dropout, so the two consumers can run on independent streams.
    """
    _check_spec(model, spec)
    droprng = rng if dropout_rng is None else dropout_rng
    total_loss = 0.0
    total_label_loss = 0.0
    tree_errors = 0
    for sentence in sentences:
        tape = Tape()
        shadow = _dropout_shadow(sentence, model.vocab, word_dropout_alpha, droprng)
        cache = EncodingCache(shadow, model, tape)
        gold = sentence.gold_heads
        n = len(gold)
        matrix, sib, excl_by_arc, variants = _assemble_ablated_scores(
            model, spec, sentence, gold, cache, rng)

        augmented = matrix + hamming_weight
        for d, h in enumerate(gold, start=1):
            augmented[h, d] -= hamming_weight
        assembled = ScoredArcs(enc=cache.get(None), matrix=augmented,
                               value=None, col_of={}, sib_matrix=sib)
        pred = decode(model.decoder if model.order == 1 else "eisner2",
                      assembled).heads

        loss_terms: List[Value] = []
        if pred != gold:
            tree_errors += 1
            hamming = sum(1 for p, g in zip(pred, gold) if p != g)
            pred_sum = gold_sum = None
            for scored, col in _ablated_tree_terms(pred, excl_by_arc, variants,
                                                   model.order):
                value = scored.value if model.order == 1 else scored.sib_value
                term = tape.pick(value, 0, col)
                pred_sum = term if pred_sum is None else tape.add(pred_sum, term)
            for scored, col in _ablated_tree_terms(gold, excl_by_arc, variants,
                                                   model.order):
                value = scored.value if model.order == 1 else scored.sib_value
                term = tape.pick(value, 0, col)
                gold_sum = term if gold_sum is None else tape.add(gold_sum, term)
            structural = float(pred_sum.data[0, 0] - gold_sum.data[0, 0]) \
                + hamming_weight * hamming
            if structural > 0.0:
                total_loss += structural
                loss_terms.append(tape.sub(pred_sum, gold_sum))

        base_enc = cache.get(None)
        gold_arcs = [(h, d) for d, h in enumerate(gold, start=1)]
        lab = label_scores(base_enc, model, gold_arcs)
        for col in range(n):
            gold_id = model.labels.index(sentence.gold_labels[col])
            column = lab.data[:, col]
            best_bad, best_score = -1, -np.inf
            for k in range(len(model.labels)):
                if k != gold_id and column[k] > best_score:
                    best_bad, best_score = k, column[k]
            if best_bad < 0:
                continue
            margin = 1.0 + best_score - column[gold_id]
            if margin > 0.0:
                total_label_loss += margin
                loss_terms.append(tape.sub(tape.pick(lab, best_bad, col),
                                           tape.pick(lab, gold_id, col)))

        if loss_terms:
            loss = loss_terms[0]
            for term in loss_terms[1:]:
                loss = tape.add(loss, term)
            model.store.accumulate(tape.backward(loss))
            model.store.adam_step(learning_rate)
    return {"loss": total_loss, "label_loss": total_label_loss,
            "tree_errors": float(tree_errors)}


def parse_graph_ablated(model: GraphModel, spec: AblationSpec,
                        sentence: Sentence,
                        rng: np.random.Generator) -> DepTree:
    """Decode with the training-time exclusion policy (gold-tree relations)."""
    _check_spec(model, spec)
    tape = Tape()
    cache = EncodingCache(sentence, model, tape)
    gold = sentence.gold_heads
    matrix, sib, _, _ = _assemble_ablated_scores(model, spec, sentence, gold,
                                                 cache, rng)
    assembled = ScoredArcs(enc=cache.get(None), matrix=matrix, value=None,
                           col_of={}, sib_matrix=sib)
    tree = decode(model.decoder if model.order == 1 else "eisner2", assembled)
    base_enc = cache.get(None)
    arcs = [(h, d) for d, h in enumerate(tree.heads, start=1)]
    lab = label_scores(base_enc, model, arcs)
    labels = [model.labels[int(k)] for k in np.argmax(lab.data, axis=0)]
    return DepTree(list(tree.heads), labels)


# ---- dispatch, evaluation, comparison --------------------------------


def train_epoch_ablated(model, spec: Optional[AblationSpec],
                        sentences: Sequence[Sentence], rng: np.random.Generator,
                        learning_rate: float = 0.001,
                        word_dropout_alpha: float = 0.25,
                        dropout_rng: Optional[np.random.Generator] = None) -> Dict[str, float]:
    """One epoch; spec None falls back to the model's ordinary trainer."""
    if spec is None:
        droprng = rng if dropout_rng is None else dropout_rng
        if isinstance(model, TransitionModel):
            from .transition import train_epoch
            return train_epoch(model, sentences, droprng, learning_rate=learning_rate,
                               word_dropout_alpha=word_dropout_alpha)
        from .graph import train_epoch
        return train_epoch(model, sentences, droprng, learning_rate=learning_rate,
                           word_dropout_alpha=word_dropout_alpha)
    if isinstance(model, TransitionModel):
        return train_epoch_transition_ablated(model, spec, sentences, rng,
                                              learning_rate=learning_rate,
                                              word_dropout_alpha=word_dropout_alpha,
                                              dropout_rng=dropout_rng)
    return train_epoch_graph_ablated(model, spec, sentences, rng,
                                     learning_rate=learning_rate,
                                     word_dropout_alpha=word_dropout_alpha,
                                     dropout_rng=dropout_rng)


def parse_ablated(model, spec: Optional[AblationSpec], sentence: Sentence,
                  rng: np.random.Generator) -> DepTree:
    if spec is None:
        if isinstance(model, TransitionModel):
            from .transition import parse
            return parse(model, sentence)
        from .graph import parse
        return parse(model, sentence)
    if isinstance(model, TransitionModel):
        return parse_transition_ablated(model, spec, sentence, rng)
    return parse_graph_ablated(model, spec, sentence, rng)


def evaluate_ablated(model, spec: Optional[AblationSpec],
                     sentences: Sequence[Sentence], seed: int = 0) -> EvalReport:
    """Parse a corpus under the exclusion policy and score it."""
    rng = np.random.default_rng(seed)
    trees = [parse_ablated(model, spec, sentence, rng) for sentence in sentences]
    return las(sentences, trees)


def compare(baseline_scores: Sequence[float],
            ablated_by_spec: Dict[str, Sequence[float]]) -> List[tuple]:
    """(spec, mean_las, baseline_las, drop, stddev, n_seeds) rows, biggest
    drop first."""
    if not baseline_scores:
        raise ConfigurationError("compare: no baseline scores")
    base_mean, _ = seed_stats(list(baseline_scores))
    rows = []
    for name, scores in ablated_by_spec.items():
        if not scores:
            raise ConfigurationError(f"compare: no scores for spec {name!r}")
        mean, std = seed_stats(list(scores))
        rows.append((name, mean, base_mean, base_mean - mean, std, len(scores)))
    rows.sort(key=lambda row: (-row[3], row[0]))
    return rows


def write_ablation_tsv(sink, rows: Sequence[tuple]) -> None:
    sink.write("spec\tmean_las\tbaseline_las\tdrop\tstddev\tn_seeds\n")
    for name, mean, base, drop, std, count in rows:
        sink.write(f"{name}\t{mean:.2f}\t{base:.2f}\t{drop:.2f}\t{std:.2f}\t{count}\n")
