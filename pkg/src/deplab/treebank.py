"""CoNLL-U reading/writing, tree validation, projectivity and projective order."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, Sequence, TextIO, Union


class ConlluFormatError(ValueError):
    """Malformed CoNLL-U input (bad ID/HEAD field, ragged columns)."""


class TreeValidationError(ValueError):
    """A sentence whose HEAD column does not encode a single rooted tree."""


@dataclass
class Token:
    index: int                      # 1-based position in the sentence
    form: str
    upos: str
    gold_head: int                  # 0 = artificial root
    gold_label: str
    predicted_head: Optional[int] = None
    predicted_label: Optional[str] = None


@dataclass
class Sentence:
    tokens: List[Token] = field(default_factory=list)
    sent_id: Optional[str] = None

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self) -> Iterator[Token]:
        return iter(self.tokens)

    @property
    def gold_heads(self) -> List[int]:
        return [t.gold_head for t in self.tokens]

    @property
    def gold_labels(self) -> List[str]:
        return [t.gold_label for t in self.tokens]

    def gold_tree(self) -> "DepTree":
        return DepTree(self.gold_heads, self.gold_labels)


@dataclass
class DepTree:
    """Heads (and optionally labels) for tokens 1..n; heads[i-1] is the head of token i."""

    heads: List[int]
    labels: Optional[List[str]] = None

    def __len__(self) -> int:
        return len(self.heads)

    def children(self) -> List[List[int]]:
        """Child lists indexed 0..n, each sorted by token index."""
        childs: List[List[int]] = [[] for _ in range(len(self.heads) + 1)]
        for dep, head in enumerate(self.heads, start=1):
            childs[head].append(dep)
        return childs


_FIELD_ID, _FIELD_FORM, _FIELD_UPOS, _FIELD_HEAD, _FIELD_DEPREL = 0, 1, 3, 6, 7
_NUM_FIELDS = 10


def _iter_blocks(lines: Iterable[str]) -> Iterator[tuple]:
    """Yield (block_lines, first_line_number, sent_id) per blank-line-separated block."""
    block: List[tuple] = []
    sent_id = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not line.strip():
            if block:
                yield block, block[0][0], sent_id
            block, sent_id = [], None
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("sent_id"):
                _, _, value = body.partition("=")
                sent_id = value.strip() or None
            continue
        block.append((lineno, line))
    if block:
        yield block, block[0][0], sent_id


def parse_conllu(source: Union[str, TextIO, Iterable[str]], validate: bool = True) -> List[Sentence]:
    """Parse CoNLL-U text into Sentences.

    Comment lines, multiword-token ranges (IDs with '-') and empty nodes (IDs
    with '.') are skipped. Only ID, FORM, UPOS, HEAD and DEPREL are consumed.
    With validate=True every sentence must encode a single tree rooted at the
    artificial node 0; system-output files can be read with validate=False
    (format and HEAD-range checks only).
    """
    if isinstance(source, str):
        lines: Iterable[str] = source.splitlines()
    else:
        lines = source

    sentences: List[Sentence] = []
    for block, first_lineno, sent_id in _iter_blocks(lines):
        tokens: List[Token] = []
        for lineno, line in block:
            cols = line.split("\t")
            if len(cols) == 1:
                cols = line.split()
            if len(cols) < _NUM_FIELDS:
                raise ConlluFormatError(f"line {lineno}: expected {_NUM_FIELDS} columns, got {len(cols)}")
            tok_id = cols[_FIELD_ID]
            if "-" in tok_id or "." in tok_id:
                continue
            try:
                index = int(tok_id)
            except ValueError:
                raise ConlluFormatError(f"line {lineno}: malformed token id {tok_id!r}") from None
            try:
                head = int(cols[_FIELD_HEAD])
            except ValueError:
                raise ConlluFormatError(f"line {lineno}: malformed head {cols[_FIELD_HEAD]!r}") from None
            tokens.append(Token(index=index, form=cols[_FIELD_FORM], upos=cols[_FIELD_UPOS],
                                gold_head=head, gold_label=cols[_FIELD_DEPREL]))
        if not tokens:
            continue
        sentence = Sentence(tokens, sent_id=sent_id)
        name = sent_id or f"sentence at line {first_lineno}"
        _check_heads_in_range(sentence, name)
        if validate:
            validate_tree(sentence, name)
        sentences.append(sentence)
    return sentences


def read_conllu(path: str, validate: bool = True) -> List[Sentence]:
    with open(path, encoding="utf-8") as handle:
        return parse_conllu(handle, validate=validate)


def _check_heads_in_range(sentence: Sentence, name: str) -> None:
    n = len(sentence)
    for position, token in enumerate(sentence, start=1):
        if token.index != position:
            raise TreeValidationError(f"{name}: token ids not contiguous (saw {token.index} at position {position})")
        if not 0 <= token.gold_head <= n:
            raise TreeValidationError(f"{name}: head {token.gold_head} of token {token.index} out of range 0..{n}")
        if token.gold_head == token.index:
            raise TreeValidationError(f"{name}: token {token.index} is its own head")


def validate_tree(sentence: Sentence, name: Optional[str] = None) -> None:
    """Require gold heads to form a single tree rooted at node 0."""
    name = name or sentence.sent_id or "sentence"
    heads = sentence.gold_heads
    n = len(heads)
    roots = [i for i in range(1, n + 1) if heads[i - 1] == 0]
    if len(roots) != 1:
        raise TreeValidationError(f"{name}: expected exactly one child of the root, found {len(roots)}")
    # every token must reach node 0; a cycle never does
    for start in range(1, n + 1):
        seen = set()
        node = start
        while node != 0:
            if node in seen:
                raise TreeValidationError(f"{name}: cycle through token {start}")
            seen.add(node)
            node = heads[node - 1]


def write_conllu(sentences: Iterable[Sentence], sink: TextIO, predicted: bool = False) -> None:
    """Write sentences in 10-column CoNLL-U; unused columns are '_'.

    With predicted=True the HEAD/DEPREL columns carry predicted annotations
    (falling back to gold when a token has none).
    """
    for sentence in sentences:
        if sentence.sent_id is not None:
            sink.write(f"# sent_id = {sentence.sent_id}\n")
        for token in sentence:
            if predicted and token.predicted_head is not None:
                head, label = token.predicted_head, token.predicted_label or "_"
            else:
                head, label = token.gold_head, token.gold_label
            cols = [str(token.index), token.form, "_", token.upos, "_", "_", str(head), label, "_", "_"]
            sink.write("\t".join(cols) + "\n")
        sink.write("\n")


def conllu_to_string(sentences: Iterable[Sentence], predicted: bool = False) -> str:
    import io

    buf = io.StringIO()
    write_conllu(sentences, buf, predicted=predicted)
    return buf.getvalue()


def is_projective(tree: Union[DepTree, Sequence[int]]) -> bool:
    """True iff no two arcs cross, arcs spanning (min(h,d), max(h,d))."""
    heads = tree.heads if isinstance(tree, DepTree) else list(tree)
    spans = [(min(h, d), max(h, d)) for d, h in enumerate(heads, start=1)]
    for i in range(len(spans)):
        a, b = spans[i]
        for j in range(i + 1, len(spans)):
            c, d = spans[j]
            if a < c < b < d or c < a < d < b:
                return False
    return True


def projective_order(tree: Union[DepTree, Sequence[int]]) -> List[int]:
    """Permutation pi over tokens 1..n from the inorder traversal of the tree.

    Children are visited in surface-index order, interleaved with their head;
    sorting the tokens by pi makes the tree projective. pi[i-1] is the rank
    (1-based) of token i.
    """
    heads = tree.heads if isinstance(tree, DepTree) else list(tree)
    n = len(heads)
    children: List[List[int]] = [[] for _ in range(n + 1)]
    for dep, head in enumerate(heads, start=1):
        children[head].append(dep)

    order: List[int] = []
    stack: List[tuple] = [(0, False)]
    while stack:
        node, emit = stack.pop()
        if emit:
            if node != 0:
                order.append(node)
            continue
        items = sorted(children[node] + ([node] if node != 0 else []))
        for item in reversed(items):
            if item == node:
                stack.append((node, True))
            else:
                stack.append((item, False))
    pi = [0] * n
    for rank, token in enumerate(order, start=1):
        pi[token - 1] = rank
    return pi
