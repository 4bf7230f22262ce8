"""Derivative-based attribution: how much each input representation x_i
contributes to an encoder vector or to a parser's decision score.

impact(i -> target) = 100 * ||d target / d x_i|| / sum_j ||d target / d x_j||

using the Frobenius norm for vector targets and the l2 norm for scalar
scores. Each record carries a bucket label under one of three taxonomies:
distance x relation to the target token (gold tree), parser-configuration
position, or position relative to a predicted arc.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, TextIO, Tuple

import numpy as np

from .autodiff import Tape, Value, jacobian_batched
from .encoder import ConfigurationError, EncodedSentence, encode
from .transition import Configuration, extract_features, score_transitions
from .treebank import Sentence

DISTANCE_RELATION = "distance_relation"
CONFIG_POSITION = "config_position"
TREE_POSITION = "tree_position"


class UndefinedImpactError(ArithmeticError):
    """Every source gradient is zero; the normalized impact does not exist."""


@dataclass
class ImpactRecord:
    sent_id: str
    source: int
    target: str
    impact: float
    taxonomy: str
    bucket: str


# ---- core attribution ------------------------------------------------


def _normalize(norms: Dict[int, float]) -> Dict[int, float]:
    total = sum(norms.values())
    if total <= 0.0:
        raise UndefinedImpactError("all source gradients are zero")
    return {i: 100.0 * v / total for i, v in norms.items()}


def impact_lstm(enc: EncodedSentence, target: int,
                source: Optional[int] = None):
    """Impact of every included token on the encoder vector v(x_target).

    Returns a dict keyed by source index summing to 100, or the single
    percentage when source is given. One matrix-seeded backward computes
    all Jacobians at once.
    """
    if target not in enc.v:
        raise ConfigurationError(f"no encoder vector for token {target}")
    if enc.v.get(target) is enc.x.get(target):
        raise ConfigurationError("impact over an encoder requires sequence context; "
                                 "direct mode vectors depend only on themselves")
    sources = sorted(enc.x)
    jac = jacobian_batched(enc.tape, enc.v[target], [enc.x[i] for i in sources])
    norms = {i: float(np.linalg.norm(jac[enc.x[i]])) for i in sources}
    impacts = _normalize(norms)
    return impacts if source is None else impacts[source]


def impact_score(enc: EncodedSentence, score: Value,
                 source: Optional[int] = None):
    """Impact of every included token on one scalar decision score."""
    if score.size != 1:
        raise ConfigurationError(f"decision score must be scalar, got {score.shape}")
    sources = sorted(enc.x)
    grads = enc.tape.backward(score, wrt=[enc.x[i] for i in sources])
    norms = {}
    for i in sources:
        g = grads.get(enc.x[i])
        norms[i] = float(np.linalg.norm(g)) if g is not None else 0.0
    impacts = _normalize(norms)
    return impacts if source is None else impacts[source]


# ---- bucket taxonomies -----------------------------------------------


def distance_relation_bucket(source: int, target: int,
                             heads: Sequence[int], cap: int = 15) -> str:
    """Signed offset (clipped to +-cap) crossed with the gold-tree relation."""
    offset = source - target
    if offset > cap:
        offset = cap
    elif offset < -cap:
        offset = -cap
    if heads[target - 1] == source:
        relation = "head"
    elif heads[source - 1] == target:
        relation = "child"
    elif heads[target - 1] != 0 and heads[heads[target - 1] - 1] == source:
        relation = "grandparent"
    elif heads[source - 1] == heads[target - 1]:
        relation = "sibling"
    else:
        relation = "other"
    return f"{offset:+d}:{relation}"


def _child_role(source: int, owner: int, config: Configuration,
                prefix: str) -> Optional[str]:
    kids = config.children.get(owner, [])
    left = sorted(k for k in kids if k < owner)
    right = sorted(k for k in kids if k > owner)
    if source in left:
        return f"{prefix}L" if source == left[0] else f"{prefix}Lx"
    if source in right:
        return f"{prefix}R" if source == right[-1] else f"{prefix}Rx"
    return None


def config_position_bucket(source: int, config: Configuration) -> str:
    """Role of a token relative to the current parser configuration.

    Core positions first (s0, s1, s2, b0, b1), then child roles by stack
    depth with L/R the outermost child and Lx/Rx the remaining ones,
    then b0 children, then "other".
    """
    stack_items = [config.stack_item(depth) for depth in range(3)]
    buffer_items = [config.buffer_item(pos) for pos in range(2)]
    for name, item in zip(("s0", "s1", "s2"), stack_items):
        if item is not None and item != 0 and item == source:
            return name
    for name, item in zip(("b0", "b1"), buffer_items):
        if item == source:
            return name
    for name, item in zip(("s0", "s1", "s2"), stack_items):
        if item is not None and item != 0:
            role = _child_role(source, item, config, name)
            if role:
                return role
    if buffer_items[0] is not None:
        role = _child_role(source, buffer_items[0], config, "b0")
        if role:
            return role
    return "other"


def tree_position_bucket(source: int, head: int, dep: int,
                         heads: Sequence[int], offset_cap: int = 3) -> str:
    """Role of a token relative to a predicted arc (head, dep).

    Structural roles take precedence: the arc ends themselves, children
    of the dependent (c), co-dependents of the head (s), the head's own
    head (g). Remaining tokens get the nearest signed offset from either
    arc end, "h+2"-style, out to offset_cap; everything else is "other".
    """
    if source == head:
        return "h"
    if source == dep:
        return "d"
    if heads[source - 1] == dep:
        return "c"
    if head != 0 and heads[source - 1] == head:
        return "s"
    if head != 0 and heads[head - 1] == source:
        return "g"
    candidates = []
    if head != 0 and abs(source - head) <= offset_cap:
        candidates.append((abs(source - head), 0, f"h{source - head:+d}"))
    if abs(source - dep) <= offset_cap:
        candidates.append((abs(source - dep), 1, f"d{source - dep:+d}"))
    if candidates:
        return min(candidates)[2]
    return "other"


# ---- corpus sweeps ---------------------------------------------------


def collect_vector_impacts(sentences: Sequence[Sentence], encoder, vocab,
                           cap: int = 15) -> List[ImpactRecord]:
    """Fig-4 style records: impact of every token on every encoder vector,
    bucketed by offset and gold-tree relation."""
    records = []
    for idx, sentence in enumerate(sentences):
        enc = encode(sentence, encoder, vocab)
        heads = sentence.gold_heads
        sid = sentence.sent_id or f"s{idx}"
        for target in sorted(enc.v):
            if target == 0:        # fed-root vector is not a sentence token
                continue
            impacts = impact_lstm(enc, target)
            for source, value in impacts.items():
                if source == target:
                    bucket = "+0:self"
                else:
                    bucket = distance_relation_bucket(source, target, heads, cap)
                records.append(ImpactRecord(sent_id=sid, source=source,
                                            target=f"v{target}", impact=value,
                                            taxonomy=DISTANCE_RELATION,
                                            bucket=bucket))
    return records


def collect_transition_impacts(model, sentences: Sequence[Sentence],
                               max_steps_factor: int = 4) -> List[ImpactRecord]:
    """Fig-5a style records: impact on the chosen transition's score at
    every decision while greedily parsing each sentence."""
    records = []
    for idx, sentence in enumerate(sentences):
        sid = sentence.sent_id or f"s{idx}"
        enc = encode(sentence, model.encoder, model.vocab)
        config = Configuration(len(sentence))
        steps = 0
        budget = max_steps_factor * (len(sentence) + 1) ** 2
        while not config.is_terminal() and steps < budget:
            feats = extract_features(config, enc, model.feature_set)
            scores = score_transitions(feats, model, enc.tape)
            masked = np.full(scores.shape[0], -np.inf)
            for tid in model.legal_ids(config):
                masked[tid] = scores.data[tid, 0]
            chosen = int(np.argmax(masked))
            sc = enc.tape.pick(scores, chosen, 0)
            impacts = impact_score(enc, sc)
            for source, value in impacts.items():
                bucket = config_position_bucket(source, config)
                records.append(ImpactRecord(sent_id=sid, source=source,
                                            target=f"step{steps}", impact=value,
                                            taxonomy=CONFIG_POSITION,
                                            bucket=bucket))
            config.apply(model.transition_from_id(chosen))
            steps += 1
    return records


def collect_graph_impacts(model, sentences: Sequence[Sentence],
                          offset_cap: int = 3) -> List[ImpactRecord]:
    """Fig-5b style records: impact on each predicted arc's score, bucketed
    by position relative to that arc in the full predicted tree."""
    from .graph import decode, score_arcs

    records = []
    for idx, sentence in enumerate(sentences):
        sid = sentence.sent_id or f"s{idx}"
        enc = encode(sentence, model.encoder, model.vocab)
        scored = score_arcs(enc, model)
        tree = decode(model, scored)
        if scored.sib_col_of is None:
            keys = [((h, d), scored.col_of[(h, d)])
                    for d, h in enumerate(tree.heads, start=1)]
        else:
            from .graph import sibling_decomposition
            keys = [((h, d), scored.sib_col_of[(h, d, s)])
                    for h, d, s in sibling_decomposition(tree.heads)]
        value = scored.value if scored.sib_col_of is None else scored.sib_value
        for (head, dep), col in keys:
            sc = enc.tape.pick(value, 0, col)
            impacts = impact_score(enc, sc)
            for source, imp in impacts.items():
                bucket = tree_position_bucket(source, head, dep, tree.heads,
                                              offset_cap)
                records.append(ImpactRecord(sent_id=sid, source=source,
                                            target=f"arc{head}-{dep}", impact=imp,
                                            taxonomy=TREE_POSITION,
                                            bucket=bucket))
    return records


# ---- aggregation and output ------------------------------------------


def aggregate(records: Sequence[ImpactRecord]) -> List[Tuple[str, float, int]]:
    """(bucket, mean impact, count) rows sorted by mean impact descending."""
    sums: Dict[str, float] = {}
    counts: Dict[str, int] = {}
    for rec in records:
        sums[rec.bucket] = sums.get(rec.bucket, 0.0) + rec.impact
        counts[rec.bucket] = counts.get(rec.bucket, 0) + 1
    rows = [(bucket, sums[bucket] / counts[bucket], counts[bucket])
            for bucket in sums]
    rows.sort(key=lambda row: (-row[1], row[0]))
    return rows


def write_impact_tsv(sink: TextIO, taxonomy: str,
                     rows: Sequence[Tuple[str, float, int]]) -> None:
    sink.write("taxonomy\tbucket\tmean_impact\tcount\n")
    for bucket, mean, count in rows:
        sink.write(f"{taxonomy}\t{bucket}\t{mean:.4f}\t{count}\n")
