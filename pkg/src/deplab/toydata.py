"""Deterministic synthetic treebank generator.

Produces small English-like sentences with a fixed grammar: clauses with
subject/object noun phrases, determiners, adjectives, adverbs, noun and
clause coordination, and adpositional phrases whose attachment site is
decided lexically by the adposition (of/under/over modify nouns,
with/near/about modify verbs). The locative adpositions at/by default
to modifying the verb; they attach to the object noun exactly when the
subject is a place noun AND the object's determiner is a quantifier
(every/some). The cue is deliberately split across two tokens sitting
under the two competing heads, so no single word decides the
attachment on its own; a small random remainder goes against the rule,
which keeps the corpus off the deterministic ceiling. A configurable
fraction of sentences extraposes a
subject modifier to the sentence end, which makes them non-projective.
Word forms are drawn with Zipf-like rank weights so the corpus has a
realistic frequency profile for word dropout.

Everything is a pure function of the generator passed in, so one seed
reproduces the corpus byte for byte.
"""

from __future__ import annotations

import argparse
from typing import List, Optional, Tuple

import numpy as np

from .treebank import Sentence, Token, validate_tree, write_conllu

NOUNS = ["house", "dog", "man", "garden", "cat", "city", "woman", "river",
         "bird", "door", "horse", "road", "tree", "car", "book", "child",
         "fish", "stone", "letter", "friend", "mountain", "teacher", "boat",
         "apple", "window", "king", "song", "cloud", "bridge", "lamp"]
PLACE_NOUNS = frozenset(["house", "garden", "city", "river", "door", "road",
                         "mountain", "boat", "window", "bridge"])
VERBS = ["chased", "saw", "liked", "found", "made", "took", "kept", "heard",
         "held", "moved", "watched", "followed"]
IVERBS = ["slept", "ran", "fell", "smiled", "waited", "jumped", "arrived",
          "laughed"]
ADJS = ["big", "small", "old", "young", "red", "fast", "slow", "quiet",
        "bright", "dark"]
DETS = ["the", "a", "every", "some"]
QUANT_DETS = frozenset(["every", "some"])
ADVS = ["today", "often", "quietly", "soon", "early", "late"]
CONJS = ["and", "or"]

# adposition -> preferred attachment site of its phrase
ADP_ATTACH = {"of": "noun", "under": "noun", "over": "noun",
              "with": "verb", "near": "verb", "about": "verb"}
NOUN_ADPS = [a for a, site in ADP_ATTACH.items() if site == "noun"]
VERB_ADPS = [a for a, site in ADP_ATTACH.items() if site == "verb"]
# locative adpositions without a lexical preference of their own
AMBI_ADPS = ["at", "by"]

POS_TAGS = ("NOUN", "VERB", "ADJ", "DET", "ADP", "ADV", "CCONJ")
LABELS = ("root", "nsubj", "obj", "det", "amod", "case", "nmod", "obl",
          "advmod", "conj", "cc")


def _pick(rng: np.random.Generator, forms: List[str]) -> str:
    """Rank-weighted draw: P(rank r) proportional to 1/r."""
    weights = 1.0 / np.arange(1, len(forms) + 1)
    return forms[int(rng.choice(len(forms), p=weights / weights.sum()))]


def _append(toks: List[list], form: str, upos: str, head: int, label: str) -> int:
    toks.append([form, upos, head, label])
    return len(toks)


def _noun_phrase(toks: List[list], rng: np.random.Generator, rich: bool,
                 conj_p: float = 0.0) -> int:
    """Append det (adj*) noun (cc noun)?; returns the head noun's index.

    The noun's own head/label are placeholders for the caller to fill.
    """
    det_pos = _append(toks, _pick(rng, DETS), "DET", 0, "det")
    adj_positions = []
    if rich:
        while len(adj_positions) < 2 and rng.random() < 0.3:
            adj_positions.append(_append(toks, _pick(rng, ADJS), "ADJ", 0, "amod"))
    noun = _append(toks, _pick(rng, NOUNS), "NOUN", 0, "_")
    toks[det_pos - 1][2] = noun
    for pos in adj_positions:
        toks[pos - 1][2] = noun
    if rng.random() < conj_p:
        cc_pos = _append(toks, _pick(rng, CONJS), "CCONJ", 0, "cc")
        second = _append(toks, _pick(rng, NOUNS), "NOUN", noun, "conj")
        toks[cc_pos - 1][2] = second
    return noun


def _adp_phrase(toks: List[list], rng: np.random.Generator, target: int,
                label: str, adps: List[str]) -> None:
    """Append adp + bare noun phrase attached to target."""
    adp_pos = _append(toks, _pick(rng, adps), "ADP", 0, "case")
    noun = _noun_phrase(toks, rng, rich=False)
    toks[adp_pos - 1][2] = noun
    toks[noun - 1][2] = target
    toks[noun - 1][3] = label


def _clause(toks: List[list], rng: np.random.Generator,
            profile: str) -> Tuple[int, int]:
    """Append one clause; returns (verb index, subject noun index)."""
    rich = profile != "short"
    subj = _noun_phrase(toks, rng, rich=rich, conj_p=0.1 if rich else 0.0)
    transitive = rich and rng.random() < 0.8
    if rich and not transitive and rng.random() < 0.4:
        # appended before the verb so the nmod arc nests under nsubj
        _adp_phrase(toks, rng, subj, "nmod", NOUN_ADPS)
    verb = _append(toks, _pick(rng, VERBS if transitive else IVERBS),
                   "VERB", 0, "root")
    toks[subj - 1][2] = verb
    toks[subj - 1][3] = "nsubj"
    obj = None
    if transitive:
        obj = _noun_phrase(toks, rng, rich=True, conj_p=0.15)
        toks[obj - 1][2] = verb
        toks[obj - 1][3] = "obj"
    take_ambi = rich and obj is not None and rng.random() < 0.8
    if rich and rng.random() < 0.5:
        # a clause that takes a locative gets no other object PP, so the
        # locative is always adjacent to the object it may modify
        if obj is None:
            _adp_phrase(toks, rng, verb, "obl", VERB_ADPS)
        elif not take_ambi:
            _adp_phrase(toks, rng, obj, "nmod", NOUN_ADPS)
    if take_ambi:
        adp = _pick(rng, AMBI_ADPS)
        obj_det = next(t[0] for t in toks if t[2] == obj and t[1] == "DET")
        to_obj = toks[subj - 1][0] in PLACE_NOUNS and obj_det in QUANT_DETS
        if rng.random() < 0.04:
            to_obj = not to_obj
        if to_obj:
            _adp_phrase(toks, rng, obj, "nmod", [adp])
        else:
            _adp_phrase(toks, rng, verb, "obl", [adp])
    if rich and rng.random() < 0.3:
        _append(toks, _pick(rng, ADVS), "ADV", verb, "advmod")
    return verb, subj


def generate_sentence(rng: np.random.Generator, sent_id: Optional[str] = None,
                      long_p: float = 0.25,
                      nonproj_p: float = 0.08) -> Sentence:
    toks: List[list] = []
    if rng.random() < long_p:
        profile = "long"
    elif rng.random() < 0.3:
        profile = "short"
    else:
        profile = "medium"
    verb, subj = _clause(toks, rng, profile)
    toks[verb - 1][2] = 0
    toks[verb - 1][3] = "root"
    if profile == "long":
        cc_pos = _append(toks, _pick(rng, CONJS), "CCONJ", 0, "cc")
        verb2, _ = _clause(toks, rng, "medium")
        toks[verb2 - 1][2] = verb
        toks[verb2 - 1][3] = "conj"
        toks[cc_pos - 1][2] = verb2
    if rng.random() < nonproj_p:
        # extraposed subject modifier: its arc back to the subject crosses
        # the root arc, so the sentence is non-projective
        _adp_phrase(toks, rng, subj, "nmod", NOUN_ADPS)
    tokens = [Token(index=i, form=f, upos=u, gold_head=h, gold_label=lab)
              for i, (f, u, h, lab) in enumerate(toks, start=1)]
    sentence = Sentence(tokens=tokens, sent_id=sent_id)
    validate_tree(sentence)
    return sentence


def generate_corpus(n_sentences: int, rng: np.random.Generator,
                    long_p: float = 0.25, nonproj_p: float = 0.08,
                    id_prefix: str = "toy") -> List[Sentence]:
    return [generate_sentence(rng, sent_id=f"{id_prefix}-{i + 1:04d}",
                              long_p=long_p, nonproj_p=nonproj_p)
            for i in range(n_sentences)]


def generate_split(seed: int, n_train: int = 500,
                   n_dev: int = 100) -> Tuple[List[Sentence], List[Sentence]]:
    """Standard experiment split; dev skews long so that token pairs at
    surface distance >= 10 occur."""
    train_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    dev_rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    train = generate_corpus(n_train, train_rng, id_prefix="train")
    dev = generate_corpus(n_dev, dev_rng, long_p=0.5, id_prefix="dev")
    return train, dev


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        description="write a synthetic train/dev treebank pair")
    parser.add_argument("train_path")
    parser.add_argument("dev_path")
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--train-size", type=int, default=500)
    parser.add_argument("--dev-size", type=int, default=100)
    args = parser.parse_args(argv)
    train, dev = generate_split(args.seed, args.train_size, args.dev_size)
    for path, sentences in ((args.train_path, train), (args.dev_path, dev)):
        with open(path, "w", encoding="utf-8") as sink:
            write_conllu(sentences, sink)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
