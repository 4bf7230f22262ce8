"""Graph-based parsing: arc-factored and adjacent-sibling scoring with
projective (Eisner) and non-projective (Chu-Liu-Edmonds) decoding.

Scores live in (n+1)x(n+1) matrices indexed [head][dependent] with the
artificial root as node 0; the diagonal and column 0 are impossible.
All decoders enforce root arity exactly one. Training is a structured
hinge against the cost-augmented best tree, with labels trained by a
per-arc multiclass hinge on the gold arcs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import ParameterStore, Tape, Value
from .encoder import ConfigurationError, EncodedSentence, EncoderParams, Vocab, encode
from .treebank import DepTree, Sentence

NEG = -1e12          # effectively minus infinity, safe under addition

DIST_CLIP = 10       # signed distance buckets -10..10 plus two overflow ids
DIST_BUCKETS = 2 * DIST_CLIP + 3


def distance_bucket(head: int, dep: int) -> int:
    delta = head - dep
    if delta < -DIST_CLIP:
        return 0
    if delta > DIST_CLIP:
        return DIST_BUCKETS - 1
    return delta + DIST_CLIP + 1


@dataclass
class GraphModel:
    """Encoder plus scoring MLPs; exactly one of arc/sibling scoring is active."""

    store: ParameterStore
    encoder: EncoderParams
    vocab: Vocab
    labels: List[str]
    order: int                      # 1 = arc-factored, 2 = adjacent-sibling
    decoder: str                    # "eisner", "eisner2", or "cle"
    use_dist: bool
    neighbor_radius: int            # 0, 1, or 2 positions on each side
    score_w1: Value
    score_b1: Value
    score_w2: Value
    score_b2: Value
    label_w1: Value
    label_b1: Value
    label_w2: Value
    label_b2: Value
    dist_emb: Optional[Value]       # (dist_dim, DIST_BUCKETS) when use_dist

    @property
    def pair_extra_dim(self) -> int:
        extra = 4 * self.neighbor_radius * self.encoder.output_dim
        if self.use_dist and self.dist_emb is not None:
            extra += self.dist_emb.shape[0]
        return extra


def build_graph_model(store: ParameterStore, encoder: EncoderParams, vocab: Vocab,
                      labels: List[str], order: int = 1, decoder: str = "eisner",
                      use_dist: bool = False, neighbor_radius: int = 0,
                      hidden_dim: int = 100, dist_dim: int = 20,
                      rng: Optional[np.random.Generator] = None) -> GraphModel:
    if order not in (1, 2):
        raise ConfigurationError(f"graph model order must be 1 or 2, got {order}")
    if decoder not in ("eisner", "eisner2", "cle"):
        raise ConfigurationError(f"unknown decoder {decoder!r}")
    if (order == 2) != (decoder == "eisner2"):
        raise ConfigurationError(f"decoder {decoder!r} does not match order {order}")
    if neighbor_radius not in (0, 1, 2):
        raise ConfigurationError(f"neighbor radius must be 0, 1, or 2, got {neighbor_radius}")
    if rng is None:
        rng = np.random.default_rng(0)
    dim = encoder.output_dim
    extra = 4 * neighbor_radius * dim + (dist_dim if use_dist else 0)
    score_in = (2 if order == 1 else 3) * dim + extra
    score_w1 = store.add_glorot("g.score.w1", (hidden_dim, score_in), rng)
    score_b1 = store.add_zeros("g.score.b1", (hidden_dim, 1))
    score_w2 = store.add_glorot("g.score.w2", (1, hidden_dim), rng)
    score_b2 = store.add_zeros("g.score.b2", (1, 1))
    label_w1 = store.add_glorot("g.label.w1", (hidden_dim, 2 * dim), rng)
    label_b1 = store.add_zeros("g.label.b1", (hidden_dim, 1))
    label_w2 = store.add_glorot("g.label.w2", (len(labels), hidden_dim), rng)
    label_b2 = store.add_zeros("g.label.b2", (len(labels), 1))
    dist_emb = store.add_glorot("g.dist", (dist_dim, DIST_BUCKETS), rng) if use_dist else None
    return GraphModel(store=store, encoder=encoder, vocab=vocab, labels=list(labels),
                      order=order, decoder=decoder, use_dist=use_dist,
                      neighbor_radius=neighbor_radius,
                      score_w1=score_w1, score_b1=score_b1,
                      score_w2=score_w2, score_b2=score_b2,
                      label_w1=label_w1, label_b1=label_b1,
                      label_w2=label_w2, label_b2=label_b2,
                      dist_emb=dist_emb)


@dataclass
class ScoredArcs:
    """Forward scores plus handles back into the tape for training."""

    enc: EncodedSentence
    matrix: np.ndarray                           # (n+1, n+1), NEG where impossible
    value: Value                                 # (1, m) scores, one column per pair
    col_of: Dict[Tuple[int, int], int]
    sib_matrix: Optional[np.ndarray] = None      # (n+1, n+1, n+1), s=0 means none
    sib_value: Optional[Value] = None
    sib_col_of: Optional[Dict[Tuple[int, int, int], int]] = None


def _token_columns(enc: EncodedSentence, n: int) -> Tuple[Value, int]:
    """Stack v(0), v(1..n) and MISSING into one matrix; returns it and the missing column."""
    cols = [enc.v_or_missing(0)]
    cols.extend(enc.v_or_missing(i) for i in range(1, n + 1))
    cols.append(enc.missing)
    return enc.tape.hstack(cols), n + 1


def _neighbor_col(token: int, offset: int, n: int, missing_col: int) -> int:
    pos = token + offset
    return pos if 1 <= pos <= n else missing_col


def _mlp(tape: Tape, w1: Value, b1: Value, w2: Value, b2: Value, x: Value) -> Value:
    return tape.affine(w2, tape.tanh(tape.affine(w1, x, b1)), b2)


def score_arcs(enc: EncodedSentence, model: GraphModel) -> ScoredArcs:
    """Score every head/dependent pair (and sibling triple for order 2) in one batch."""
    n = len(enc.sentence)
    tape = enc.tape
    vmat, missing_col = _token_columns(enc, n)

    pairs = [(h, d) for d in range(1, n + 1) for h in range(0, n + 1) if h != d]
    col_of = {pair: i for i, pair in enumerate(pairs)}
    if model.order == 1:
        keys = pairs
        key_cols = col_of
    else:
        keys = []
        for h, d in pairs:
            lo, hi = (h, d) if h < d else (d, h)
            keys.append((h, d, 0))
            keys.extend((h, d, s) for s in range(lo + 1, hi))
        key_cols = {key: i for i, key in enumerate(keys)}

    def surface_parts(hs: List[int], ds: List[int]) -> List[Value]:
        parts = []
        for radius in range(1, model.neighbor_radius + 1):
            for base in (hs, ds):
                for sign in (-1, 1):
                    idx = [_neighbor_col(t, sign * radius, n, missing_col) for t in base]
                    parts.append(tape.gather_cols(vmat, idx))
        if model.use_dist and model.dist_emb is not None:
            buckets = [distance_bucket(h, d) for h, d in zip(hs, ds)]
            parts.append(tape.gather_cols(model.dist_emb, buckets))
        return parts

    if model.order == 1:
        hs = [h for h, _ in keys]
        ds = [d for _, d in keys]
        inputs = [tape.gather_cols(vmat, hs), tape.gather_cols(vmat, ds)]
        inputs += surface_parts(hs, ds)
    else:
        hs = [h for h, _, _ in keys]
        ds = [d for _, d, _ in keys]
        ss = [s if s else missing_col for _, _, s in keys]
        inputs = [tape.gather_cols(vmat, hs), tape.gather_cols(vmat, ds),
                  tape.gather_cols(vmat, ss)]
        inputs += surface_parts(hs, ds)

    scores = _mlp(tape, model.score_w1, model.score_b1,
                  model.score_w2, model.score_b2, tape.concat(inputs))

    matrix = np.full((n + 1, n + 1), NEG)
    if model.order == 1:
        for (h, d), col in key_cols.items():
            matrix[h, d] = scores.data[0, col]
        return ScoredArcs(enc=enc, matrix=matrix, value=scores, col_of=key_cols)

    sib_matrix = np.full((n + 1, n + 1, n + 1), NEG)
    for (h, d, s), col in key_cols.items():
        sib_matrix[h, d, s] = scores.data[0, col]
    zero_arcs = np.zeros((n + 1, n + 1))
    zero_arcs[:, 0] = NEG
    np.fill_diagonal(zero_arcs, NEG)
    return ScoredArcs(enc=enc, matrix=zero_arcs, value=scores, col_of={},
                      sib_matrix=sib_matrix, sib_value=scores, sib_col_of=key_cols)


# ---- decoders --------------------------------------------------------


def eisner_decode(scores: np.ndarray) -> DepTree:
    """Highest-scoring projective tree, root arity one; O(n^3) span DP."""
    n = scores.shape[0] - 1
    if n < 1:
        raise ConfigurationError("eisner_decode: empty sentence")
    if n == 1:
        return DepTree([0])
    size = n + 1
    cl = np.zeros((size, size))     # complete, head at right end
    cr = np.zeros((size, size))     # complete, head at left end
    il = np.zeros((size, size))     # incomplete, arc t -> s
    ir = np.zeros((size, size))     # incomplete, arc s -> t
    b_il = np.zeros((size, size), dtype=int)
    b_ir = np.zeros((size, size), dtype=int)
    b_cl = np.zeros((size, size), dtype=int)
    b_cr = np.zeros((size, size), dtype=int)

    for span in range(1, n):
        for s in range(1, n - span + 1):
            t = s + span
            vals = cr[s, s:t] + cl[s + 1:t + 1, t]
            r = int(np.argmax(vals))
            b_ir[s, t] = b_il[s, t] = s + r
            ir[s, t] = vals[r] + scores[s, t]
            il[s, t] = vals[r] + scores[t, s]
            vals = ir[s, s + 1:t + 1] + cr[s + 1:t + 1, t]
            r = int(np.argmax(vals))
            b_cr[s, t] = s + 1 + r
            cr[s, t] = vals[r]
            vals = cl[s, s:t] + il[s:t, t]
            r = int(np.argmax(vals))
            b_cl[s, t] = s + r
            cl[s, t] = vals[r]

    totals = np.array([scores[0, r] + cl[1, r] + cr[r, n] for r in range(1, n + 1)])
    root = 1 + int(np.argmax(totals))
    heads = [0] * (n + 1)

    def rec_cr(s: int, t: int) -> None:
        if s == t:
            return
        r = b_cr[s, t]
        rec_ir(s, r)
        rec_cr(r, t)

    def rec_cl(s: int, t: int) -> None:
        if s == t:
            return
        r = b_cl[s, t]
        rec_cl(s, r)
        rec_il(r, t)

    def rec_ir(s: int, t: int) -> None:
        heads[t] = s
        r = b_ir[s, t]
        rec_cr(s, r)
        rec_cl(r + 1, t)

    def rec_il(s: int, t: int) -> None:
        heads[s] = t
        r = b_il[s, t]
        rec_cr(s, r)
        rec_cl(r + 1, t)

    heads[root] = 0
    rec_cl(1, root)
    rec_cr(root, n)
    return DepTree(heads[1:])


def eisner2_decode(scores: np.ndarray, sib: np.ndarray) -> DepTree:
    """Projective decoding under arc + adjacent-inner-sibling factors.

    sib[h, d, s] scores d attaching to h with inner adjacent sibling s;
    s = 0 stands for "d is the innermost dependent on its side".
    """
    n = scores.shape[0] - 1
    if n < 1:
        raise ConfigurationError("eisner2_decode: empty sentence")
    if n == 1:
        return DepTree([0])
    size = n + 1
    cl = np.zeros((size, size))
    cr = np.zeros((size, size))
    il = np.zeros((size, size))
    ir = np.zeros((size, size))
    sb = np.zeros((size, size))     # both ends dependents of one head, adjacent
    b_cl = np.zeros((size, size), dtype=int)
    b_cr = np.zeros((size, size), dtype=int)
    b_sb = np.zeros((size, size), dtype=int)
    b_il = np.zeros((size, size, 2), dtype=int)   # (case, sibling split)
    b_ir = np.zeros((size, size, 2), dtype=int)

    for span in range(1, n):
        for s in range(1, n - span + 1):
            t = s + span
            vals = cr[s, s:t] + cl[s + 1:t + 1, t]
            q = int(np.argmax(vals))
            sb[s, t] = vals[q]
            b_sb[s, t] = s + q

            best, case, split = cl[s + 1, t] + sib[s, t, 0], 0, 0
            for r in range(s + 1, t):
                cand = ir[s, r] + sb[r, t] + sib[s, t, r]
                if cand > best:
                    best, case, split = cand, 1, r
            ir[s, t] = best + scores[s, t]
            b_ir[s, t] = (case, split)

            best, case, split = cr[s, t - 1] + sib[t, s, 0], 0, 0
            for r in range(s + 1, t):
                cand = sb[s, r] + il[r, t] + sib[t, s, r]
                if cand > best:
                    best, case, split = cand, 1, r
            il[s, t] = best + scores[t, s]
            b_il[s, t] = (case, split)

            vals = ir[s, s + 1:t + 1] + cr[s + 1:t + 1, t]
            r = int(np.argmax(vals))
            b_cr[s, t] = s + 1 + r
            cr[s, t] = vals[r]
            vals = cl[s, s:t] + il[s:t, t]
            r = int(np.argmax(vals))
            b_cl[s, t] = s + r
            cl[s, t] = vals[r]

    totals = np.array([scores[0, r] + sib[0, r, 0] + cl[1, r] + cr[r, n]
                       for r in range(1, n + 1)])
    root = 1 + int(np.argmax(totals))
    heads = [0] * (n + 1)

    def rec_cr(s: int, t: int) -> None:
        if s == t:
            return
        r = b_cr[s, t]
        rec_ir(s, r)
        rec_cr(r, t)

    def rec_cl(s: int, t: int) -> None:
        if s == t:
            return
        r = b_cl[s, t]
        rec_cl(s, r)
        rec_il(r, t)

    def rec_sb(s: int, t: int) -> None:
        q = b_sb[s, t]
        rec_cr(s, q)
        rec_cl(q + 1, t)

    def rec_ir(s: int, t: int) -> None:
        heads[t] = s
        case, r = b_ir[s, t]
        if case == 0:
            rec_cl(s + 1, t)
        else:
            rec_ir(s, r)
            rec_sb(r, t)

    def rec_il(s: int, t: int) -> None:
        heads[s] = t
        case, r = b_il[s, t]
        if case == 0:
            rec_cr(s, t - 1)
        else:
            rec_sb(s, r)
            rec_il(r, t)

    heads[root] = 0
    rec_cl(1, root)
    rec_cr(root, n)
    return DepTree(heads[1:])


def _best_incoming(scores: np.ndarray, nodes: List[int], dest: int) -> Tuple[int, float]:
    best_u, best_w = -1, -np.inf
    for u in nodes:
        if u != dest and scores[u, dest] > best_w:
            best_u, best_w = u, scores[u, dest]
    return best_u, best_w


def _cle(scores: np.ndarray, root: int, nodes: List[int]) -> Dict[int, int]:
    """Plain max arborescence over the given nodes by recursive contraction."""
    parent: Dict[int, int] = {}
    for v in nodes:
        if v == root:
            continue
        u, _ = _best_incoming(scores, nodes, v)
        parent[v] = u

    cycle = None
    for start in parent:
        seen = []
        v = start
        while v != root and v in parent and v not in seen:
            seen.append(v)
            v = parent[v]
        if v != root and v in seen:
            cycle = seen[seen.index(v):]
            break
    if cycle is None:
        return parent

    cyc = set(cycle)
    super_node = max(nodes) + 1
    reduced = [v for v in nodes if v not in cyc] + [super_node]
    m = super_node + 1
    red_scores = np.full((m, m), NEG)
    into_choice: Dict[int, Tuple[int, int]] = {}   # external u -> (u, best member)
    out_choice: Dict[int, int] = {}                # external v -> best member
    for u in nodes:
        if u in cyc:
            continue
        for v in nodes:
            if v in cyc:
                continue
            red_scores[u, v] = scores[u, v]
    for v in nodes:
        if v in cyc:
            continue
        best_m, best_w = -1, -np.inf
        for u in cycle:
            if scores[u, v] > best_w:
                best_m, best_w = u, scores[u, v]
        red_scores[super_node, v] = best_w
        out_choice[v] = best_m
    cycle_weight = sum(scores[parent[v], v] for v in cycle)
    for u in nodes:
        if u in cyc:
            continue
        best_m, best_w = -1, -np.inf
        for v in cycle:
            w = scores[u, v] - scores[parent[v], v]
            if w > best_w:
                best_m, best_w = v, w
        red_scores[u, super_node] = best_w
        into_choice[u] = (u, best_m)

    sub = _cle(red_scores, root, reduced)
    result: Dict[int, int] = {}
    entry_u = sub[super_node]
    _, entry_v = into_choice[entry_u]
    for v, u in sub.items():
        if v == super_node:
            continue
        result[v] = out_choice[v] if u == super_node else u
    for v in cycle:
        result[v] = entry_u if v == entry_v else parent[v]
    return result


def cle_decode(scores: np.ndarray) -> DepTree:
    """Maximum spanning arborescence with exactly one root dependent.

    Runs plain Chu-Liu-Edmonds once per root-child candidate with the
    other root arcs disabled, keeping the best total.
    """
    n = scores.shape[0] - 1
    if n < 1:
        raise ConfigurationError("cle_decode: empty sentence")
    if n == 1:
        return DepTree([0])
    clean = np.maximum(scores, NEG)
    best_heads, best_total = None, -np.inf
    for r in range(1, n + 1):
        work = clean.copy()
        work[0, :] = NEG
        work[0, r] = clean[0, r]
        parent = _cle(work, 0, list(range(n + 1)))
        total = sum(work[parent[v], v] for v in range(1, n + 1))
        if total > best_total + 1e-12:
            best_total = total
            best_heads = [parent[v] for v in range(1, n + 1)]
    return DepTree(best_heads)


def decode(model_or_name, scored: ScoredArcs) -> DepTree:
    name = model_or_name.decoder if isinstance(model_or_name, GraphModel) else model_or_name
    if name == "eisner":
        return eisner_decode(scored.matrix)
    if name == "eisner2":
        if scored.sib_matrix is None:
            raise ConfigurationError("eisner2 decoding needs sibling scores")
        return eisner2_decode(scored.matrix, scored.sib_matrix)
    if name == "cle":
        return cle_decode(scored.matrix)
    raise ConfigurationError(f"unknown decoder {name!r}")


# ---- labels ----------------------------------------------------------


def label_scores(enc: EncodedSentence, model: GraphModel,
                 arcs: Sequence[Tuple[int, int]]) -> Value:
    """(|labels|, len(arcs)) score matrix for the given head/dependent pairs."""
    tape = enc.tape
    n = len(enc.sentence)
    vmat, _ = _token_columns(enc, n)
    hs = [h for h, _ in arcs]
    ds = [d for _, d in arcs]
    inputs = tape.concat([tape.gather_cols(vmat, hs), tape.gather_cols(vmat, ds)])
    return _mlp(tape, model.label_w1, model.label_b1,
                model.label_w2, model.label_b2, inputs)


def label_arcs(enc: EncodedSentence, tree: DepTree, model: GraphModel) -> DepTree:
    arcs = [(h, d) for d, h in enumerate(tree.heads, start=1)]
    scores = label_scores(enc, model, arcs)
    picks = np.argmax(scores.data, axis=0)
    labels = [model.labels[int(k)] for k in picks]
    return DepTree(list(tree.heads), labels)


# ---- sibling decomposition (used for order-2 loss) -------------------


def sibling_decomposition(heads: Sequence[int]) -> List[Tuple[int, int, int]]:
    """(h, d, inner adjacent sibling or 0) for every dependent d."""
    n = len(heads)
    triples = []
    for h in range(0, n + 1):
        deps = [d for d in range(1, n + 1) if heads[d - 1] == h]
        left = sorted([d for d in deps if d < h], reverse=True)
        right = sorted([d for d in deps if d > h])
        for side in (left, right):
            prev = 0
            for d in side:
                triples.append((h, d, prev))
                prev = d
    return triples


# ---- training and parsing --------------------------------------------


def _tree_score_value(scored: ScoredArcs, heads: Sequence[int]) -> List[Tuple[int, int]]:
    """Tape columns whose sum scores the tree under the model's factorization."""
    if scored.sib_col_of is None:
        return [(0, scored.col_of[(h, d)]) for d, h in enumerate(heads, start=1)]
    return [(0, scored.sib_col_of[(h, d, s)]) for h, d, s in sibling_decomposition(heads)]


def train_epoch(model: GraphModel, sentences: Sequence[Sentence],
                rng: np.random.Generator, learning_rate: float = 0.001,
                hamming_weight: float = 1.0, word_dropout_alpha: float = 0.25,
                exclude_per_sentence: Optional[Dict[int, Optional[int]]] = None) -> Dict[str, float]:
    """Structured hinge with cost-augmented decoding plus per-arc label hinge.

    The cost-augmented search adds hamming_weight to every non-gold arc
    and runs the model's own decoder; the gold tree is scored as-is even
    when it is not projective. One Adam step per sentence.
    """
    total_loss = 0.0
    total_label_loss = 0.0
    tree_errors = 0
    for pos, sentence in enumerate(sentences):
        exclude = exclude_per_sentence.get(pos) if exclude_per_sentence else None
        tape = Tape()
        enc = encode(sentence, model.encoder, model.vocab, exclude=exclude,
                     training=True, rng=rng,
                     word_dropout_alpha=word_dropout_alpha, tape=tape)
        scored = score_arcs(enc, model)
        gold = sentence.gold_heads
        n = len(gold)

        augmented = scored.matrix.copy()
        augmented += hamming_weight
        for d, h in enumerate(gold, start=1):
            augmented[h, d] -= hamming_weight
        aug_scored = ScoredArcs(enc=enc, matrix=augmented, value=scored.value,
                                col_of=scored.col_of, sib_matrix=scored.sib_matrix,
                                sib_value=scored.sib_value, sib_col_of=scored.sib_col_of)
        pred = decode(model, aug_scored).heads

        loss_terms: List[Value] = []
        if pred != gold:
            tree_errors += 1
            hamming = sum(1 for p, g in zip(pred, gold) if p != g)
            pred_cols = _tree_score_value(scored, pred)
            gold_cols = _tree_score_value(scored, gold)
            score_val = scored.value if scored.sib_col_of is None else scored.sib_value
            pred_sum = None
            for row, col in pred_cols:
                term = tape.pick(score_val, row, col)
                pred_sum = term if pred_sum is None else tape.add(pred_sum, term)
            gold_sum = None
            for row, col in gold_cols:
                term = tape.pick(score_val, row, col)
                gold_sum = term if gold_sum is None else tape.add(gold_sum, term)
            structural = float(pred_sum.data[0, 0] - gold_sum.data[0, 0]) \
                + hamming_weight * hamming
            if structural > 0.0:
                total_loss += structural
                loss_terms.append(tape.sub(pred_sum, gold_sum))

        gold_arcs = [(h, d) for d, h in enumerate(gold, start=1)]
        lab = label_scores(enc, model, gold_arcs)
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


def parse(model: GraphModel, sentence: Sentence,
          exclude: Optional[int] = None,
          enc: Optional[EncodedSentence] = None) -> DepTree:
    """score_arcs, decode with the model's decoder, then label the arcs."""
    if enc is None:
        enc = encode(sentence, model.encoder, model.vocab, exclude=exclude)
    scored = score_arcs(enc, model)
    tree = decode(model, scored)
    return label_arcs(enc, tree, model)
