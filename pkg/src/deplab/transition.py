"""Arc-standard transition parsing with online reordering (SWAP).

The system keeps an artificial root at the bottom of the stack, applies
arc transitions between the two topmost stack items, and handles
non-projective trees by swapping stack items back to the buffer. The
static oracle follows the projective order pi and delays swaps while the
stack top and the buffer front belong to the same maximal projective
component, which empirically minimizes swap counts.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .autodiff import ContractError, ParameterStore, Tape, Value
from .encoder import EncodedSentence, EncoderParams, Vocab, encode
from .treebank import DepTree, Sentence, projective_order

SHIFT = "shift"
SWAP = "swap"
LEFT_ARC = "left"
RIGHT_ARC = "right"

SIMPLE = ("s0", "s1", "b0")
EXTENDED = ("s0", "s1", "s2", "b0", "s0L", "s0R", "s1L", "s1R", "s2L", "s2R", "b0L")


class OracleError(RuntimeError):
    """The static oracle was queried on a configuration it cannot handle."""


class DecodeError(RuntimeError):
    """Greedy decoding failed to terminate within the step budget."""


@dataclass(frozen=True)
class Transition:
    kind: str
    label: Optional[str] = None     # set for arc transitions only


class Configuration:
    """Stack / buffer / arc-set state; token 0 is the artificial root."""

    def __init__(self, n: int):
        self.n = n
        self.stack: List[int] = [0]
        self.buffer: deque = deque(range(1, n + 1))
        self.heads: Dict[int, int] = {}
        self.labels: Dict[int, str] = {}
        self.children: Dict[int, List[int]] = {}

    def stack_item(self, depth: int) -> Optional[int]:
        """s0 is depth 0 (top of stack)."""
        return self.stack[-1 - depth] if len(self.stack) > depth else None

    def buffer_item(self, pos: int) -> Optional[int]:
        return self.buffer[pos] if len(self.buffer) > pos else None

    def is_terminal(self) -> bool:
        return len(self.stack) == 1 and not self.buffer

    def legal(self) -> Set[str]:
        kinds: Set[str] = set()
        if self.buffer:
            kinds.add(SHIFT)
        if len(self.stack) >= 2:
            s0, s1 = self.stack[-1], self.stack[-2]
            kinds.add(RIGHT_ARC)
            if s1 != 0:
                kinds.add(LEFT_ARC)
            if 0 < s1 < s0:
                kinds.add(SWAP)
        return kinds

    def apply(self, transition: Transition) -> None:
        kind = transition.kind
        if kind not in self.legal():
            raise ContractError(f"apply: {kind} illegal in this configuration")
        if kind == SHIFT:
            self.stack.append(self.buffer.popleft())
        elif kind == SWAP:
            s1 = self.stack.pop(-2)
            self.buffer.appendleft(s1)
        else:
            if kind == LEFT_ARC:
                dep = self.stack.pop(-2)
                head = self.stack[-1]
            else:
                dep = self.stack.pop()
                head = self.stack[-1]
            if dep in self.heads:
                raise ContractError(f"apply: token {dep} already has a head")
            self.heads[dep] = head
            self.labels[dep] = transition.label or "dep"
            self.children.setdefault(head, []).append(dep)

    def tree(self, fallback_label: str = "dep") -> DepTree:
        heads = [self.heads.get(i, 0) for i in range(1, self.n + 1)]
        labels = [self.labels.get(i, fallback_label) for i in range(1, self.n + 1)]
        return DepTree(heads, labels)


# ---- static oracle ---------------------------------------------------


def projective_components(tree: DepTree) -> List[int]:
    """Component id per node 0..n; the root always sits in its own component.

    A component is a maximal chunk that can reduce in place by plain
    arc-standard steps: working outward from each node, a child joins its
    head's chunk only if the child's own subtree is already one closed
    chunk sitting directly adjacent to the chunk grown so far. Delaying a
    swap while the stack top and the buffer front share a component lets
    the chunk assemble before anything is reordered past it.
    """
    n = len(tree)
    children = tree.children()
    lo = list(range(n + 1))
    hi = list(range(n + 1))

    comp = list(range(n + 1))

    def find(a: int) -> int:
        while comp[a] != a:
            comp[a] = comp[comp[a]]
            a = comp[a]
        return a

    closed = [True] * (n + 1)

    def walk(node: int) -> None:
        for ch in children[node]:
            walk(ch)
            lo[node] = min(lo[node], lo[ch])
            hi[node] = max(hi[node], hi[ch])
        if node == 0:
            return
        left = [c for c in children[node] if c < node]
        right = [c for c in children[node] if c > node]
        edge = node
        for ch in reversed(left):            # innermost left child first
            if closed[ch] and hi[ch] == edge - 1:
                comp[find(ch)] = find(node)
                edge = lo[ch]
            else:
                closed[node] = False
                break
        edge = node
        for ch in right:                     # innermost right child first
            if closed[ch] and lo[ch] == edge + 1:
                comp[find(ch)] = find(node)
                edge = hi[ch]
            else:
                closed[node] = False
                break

    walk(0)
    result = [find(i) for i in range(n + 1)]
    result[0] = -1
    return result


@dataclass
class OracleState:
    """Gold-tree context precomputed once per sentence."""

    tree: DepTree
    pi: List[int]
    components: List[int]
    gold_children_count: List[int]

    @classmethod
    def for_tree(cls, tree: DepTree) -> "OracleState":
        counts = [0] * (len(tree) + 1)
        for head in tree.heads:
            counts[head] += 1
        return cls(tree=tree, pi=projective_order(tree),
                   components=projective_components(tree),
                   gold_children_count=counts)

    def rank(self, token: int) -> int:
        return self.pi[token - 1]


def oracle_transition(config: Configuration, state: OracleState,
                      lazy: bool = True) -> Transition:
    """Next transition of the static oracle (lazy or eager swap policy)."""
    heads = state.tree.heads
    labels = state.tree.labels or ["dep"] * len(heads)
    if len(config.stack) >= 2:
        s0, s1 = config.stack[-1], config.stack[-2]
        if s1 != 0 and heads[s1 - 1] == s0 \
                and len(config.children.get(s1, [])) == state.gold_children_count[s1]:
            return Transition(LEFT_ARC, labels[s1 - 1])
        if heads[s0 - 1] == s1 \
                and len(config.children.get(s0, [])) == state.gold_children_count[s0]:
            return Transition(RIGHT_ARC, labels[s0 - 1])
        if 0 < s1 < s0 and state.rank(s1) > state.rank(s0):
            b0 = config.buffer[0] if config.buffer else None
            if not lazy or b0 is None \
                    or state.components[s0] != state.components[b0]:
                return Transition(SWAP)
    if config.buffer:
        return Transition(SHIFT)
    raise OracleError("oracle: no applicable transition (unreachable configuration)")


def oracle_sequence(tree: DepTree, lazy: bool = True) -> List[Transition]:
    """Full oracle path for a gold tree from the initial configuration."""
    state = OracleState.for_tree(tree)
    config = Configuration(len(tree))
    seq: List[Transition] = []
    limit = 4 * (len(tree) + 1) ** 2
    while not config.is_terminal():
        if len(seq) > limit:
            raise OracleError("oracle: sequence exceeded step budget")
        t = oracle_transition(config, state, lazy=lazy)
        config.apply(t)
        seq.append(t)
    return seq


# ---- features and scoring --------------------------------------------


def _resolve_descriptor(desc: str, config: Configuration) -> Optional[int]:
    """Token index for a positional descriptor, None when the slot is empty."""
    place, pos = desc[0], int(desc[1])
    base = config.stack_item(pos) if place == "s" else config.buffer_item(pos)
    if len(desc) == 2:
        return base
    if base is None:
        return None
    kids = config.children.get(base)
    if not kids:
        return None
    return min(kids) if desc[2] == "L" else max(kids)


def extract_features(config: Configuration, enc: EncodedSentence,
                     feature_set: Sequence[str]) -> Value:
    """Concatenate v-vectors (or MISSING) for each descriptor, in order."""
    parts = []
    for desc in feature_set:
        token = _resolve_descriptor(desc, config)
        parts.append(enc.missing if token is None else enc.v_or_missing(token))
    return enc.tape.concat(parts)


@dataclass
class TransitionModel:
    """Encoder plus a one-hidden-layer MLP over concatenated feature vectors."""

    store: ParameterStore
    encoder: EncoderParams
    vocab: Vocab
    labels: List[str]
    feature_set: Tuple[str, ...]
    w1: Value
    b1: Value
    w2: Value
    b2: Value

    @property
    def num_transitions(self) -> int:
        return 2 + 2 * len(self.labels)

    def transition_id(self, t: Transition) -> int:
        if t.kind == SHIFT:
            return 0
        if t.kind == SWAP:
            return 1
        offset = 2 if t.kind == LEFT_ARC else 2 + len(self.labels)
        return offset + self.labels.index(t.label)

    def transition_from_id(self, tid: int) -> Transition:
        if tid == 0:
            return Transition(SHIFT)
        if tid == 1:
            return Transition(SWAP)
        tid -= 2
        if tid < len(self.labels):
            return Transition(LEFT_ARC, self.labels[tid])
        return Transition(RIGHT_ARC, self.labels[tid - len(self.labels)])

    def legal_ids(self, config: Configuration) -> List[int]:
        kinds = config.legal()
        ids = []
        if SHIFT in kinds:
            ids.append(0)
        if SWAP in kinds:
            ids.append(1)
        if LEFT_ARC in kinds:
            ids.extend(range(2, 2 + len(self.labels)))
        if RIGHT_ARC in kinds:
            ids.extend(range(2 + len(self.labels), self.num_transitions))
        return ids


def build_transition_model(store: ParameterStore, encoder: EncoderParams,
                           vocab: Vocab, labels: List[str],
                           feature_set: Sequence[str] = SIMPLE,
                           hidden_dim: int = 100,
                           rng: Optional[np.random.Generator] = None) -> TransitionModel:
    if rng is None:
        rng = np.random.default_rng(0)
    input_dim = len(feature_set) * encoder.output_dim
    out_dim = 2 + 2 * len(labels)
    w1 = store.add_glorot("tr.w1", (hidden_dim, input_dim), rng)
    b1 = store.add_zeros("tr.b1", (hidden_dim, 1))
    w2 = store.add_glorot("tr.w2", (out_dim, hidden_dim), rng)
    b2 = store.add_zeros("tr.b2", (out_dim, 1))
    return TransitionModel(store=store, encoder=encoder, vocab=vocab,
                           labels=list(labels), feature_set=tuple(feature_set),
                           w1=w1, b1=b1, w2=w2, b2=b2)


def score_transitions(features: Value, model: TransitionModel, tape: Tape) -> Value:
    """MLP scores; one column per feature column (supports batched columns)."""
    hidden = tape.tanh(tape.affine(model.w1, features, model.b1))
    return tape.affine(model.w2, hidden, model.b2)


# ---- training and decoding -------------------------------------------


def train_epoch(model: TransitionModel, sentences: Sequence[Sentence],
                rng: np.random.Generator, learning_rate: float = 0.001,
                word_dropout_alpha: float = 0.25,
                exclude_per_sentence: Optional[Dict[int, Optional[int]]] = None) -> Dict[str, float]:
    """One pass of static-oracle training with per-sentence Adam updates.

    Loss per configuration: max(0, 1 + best incorrect legal score - oracle
    score). The parser always follows the oracle transition, so training
    never explores its own errors. exclude_per_sentence maps a sentence's
    position to a token index withheld from encoding (ablation training).
    """
    total_loss = 0.0
    total_steps = 0
    violations = 0
    for pos, sentence in enumerate(sentences):
        exclude = exclude_per_sentence.get(pos) if exclude_per_sentence else None
        tape = Tape()
        enc = encode(sentence, model.encoder, model.vocab, exclude=exclude,
                     training=True, rng=rng,
                     word_dropout_alpha=word_dropout_alpha, tape=tape)
        state = OracleState.for_tree(sentence.gold_tree())
        config = Configuration(len(sentence))
        feats: List[Value] = []
        gold_ids: List[int] = []
        legal_sets: List[List[int]] = []
        while not config.is_terminal():
            t = oracle_transition(config, state)
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


def parse(model: TransitionModel, sentence: Sentence,
          exclude: Optional[int] = None,
          enc: Optional[EncodedSentence] = None) -> DepTree:
    """Greedy decode; raises DecodeError if 4n^2 transitions do not finish."""
    if enc is None:
        enc = encode(sentence, model.encoder, model.vocab, exclude=exclude)
    n = len(sentence)
    config = Configuration(n)
    limit = max(8, 4 * n * n)
    steps = 0
    while not config.is_terminal():
        if steps >= limit:
            raise DecodeError(f"parse: no terminal configuration after {limit} transitions")
        legal = model.legal_ids(config)
        feats = extract_features(config, enc, model.feature_set)
        scores = score_transitions(feats, model, enc.tape).data[:, 0]
        masked = np.full_like(scores, -np.inf)
        masked[legal] = scores[legal]
        config.apply(model.transition_from_id(int(np.argmax(masked))))
        steps += 1
    return config.tree(fallback_label=model.labels[0] if model.labels else "dep")
