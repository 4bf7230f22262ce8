"""Shared numeric oracles for the test suite.

Everything here is deliberately independent of the library internals:
finite differences, hand-rolled reference implementations, and small
random-instance generators used to cross-check the real code.
"""

from __future__ import annotations

from typing import Callable, Dict, List, Sequence

import numpy as np


def central_difference(fn: Callable[[np.ndarray], float], x: np.ndarray,
                       step: float = 1e-5) -> np.ndarray:
    """Gradient of a scalar function by central differences, entry by entry."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + step
        hi = fn(x)
        x[idx] = orig - step
        lo = fn(x)
        x[idx] = orig
        grad[idx] = (hi - lo) / (2.0 * step)
        it.iternext()
    return grad


def relative_error(got: np.ndarray, want: np.ndarray) -> float:
    """Max abs difference scaled by the larger magnitude, floored at 1."""
    denom = max(1.0, float(np.abs(got).max(initial=0.0)), float(np.abs(want).max(initial=0.0)))
    return float(np.abs(got - want).max(initial=0.0)) / denom


def random_tree(rng: np.random.Generator, n: int) -> List[int]:
    """Uniform-ish random rooted tree over n tokens as a head list (root head 0)."""
    heads = [0] * (n + 1)
    order = list(rng.permutation(np.arange(1, n + 1)))
    for pos, node in enumerate(order):
        if pos == 0:
            heads[int(node)] = 0
        else:
            heads[int(node)] = int(order[int(rng.integers(0, pos))])
    return heads[1:]


def tree_score(heads: Sequence[int], scores: np.ndarray) -> float:
    """Sum of arc scores for a head list; scores[h, d] with d 1-based columns."""
    return float(sum(scores[h, d] for d, h in enumerate(heads, start=1)))


def enumerate_trees(n: int):
    """All single-root dependency trees over tokens 1..n as head lists.

    Brute force over head assignments with cycle and root-arity filters;
    usable up to n = 6 or so.
    """
    import itertools

    for assignment in itertools.product(range(0, n + 1), repeat=n):
        heads = list(assignment)
        if any(h == d for d, h in enumerate(heads, start=1)):
            continue
        if sum(1 for h in heads if h == 0) != 1:
            continue
        ok = True
        for start in range(1, n + 1):
            seen = set()
            node = start
            while node != 0:
                if node in seen:
                    ok = False
                    break
                seen.add(node)
                node = heads[node - 1]
            if not ok:
                break
        if ok:
            yield heads


def enumerate_projective_trees(n: int):
    """Single-root projective trees over 1..n, filtered from the full set."""
    for heads in enumerate_trees(n):
        if _projective(heads):
            yield heads


def _projective(heads: Sequence[int]) -> bool:
    arcs = [(min(h, d), max(h, d)) for d, h in enumerate(heads, start=1)]
    for i in range(len(arcs)):
        a, b = arcs[i]
        for j in range(i + 1, len(arcs)):
            c, d = arcs[j]
            if a < c < b < d or c < a < d < b:
                return False
    return True


def best_tree_brute_force(scores: np.ndarray, projective: bool) -> tuple:
    """Exhaustive argmax over (projective) single-root trees; returns (heads, score)."""
    n = scores.shape[1] - 1
    gen = enumerate_projective_trees(n) if projective else enumerate_trees(n)
    best_heads, best = None, -np.inf
    for heads in gen:
        s = tree_score(heads, scores)
        if s > best + 1e-12:
            best, best_heads = s, list(heads)
    return best_heads, best


def best_sibling_tree_brute_force(arc_scores: np.ndarray, sib_scores: np.ndarray) -> tuple:
    """Exhaustive argmax over projective trees under arc + adjacent-sibling scoring.

    sib_scores[h, d, s]: d attaches to h with s the adjacent inner sibling
    (s = 0 when d is the innermost dependent on its side of h).
    """
    n = arc_scores.shape[1] - 1
    best_heads, best = None, -np.inf
    for heads in enumerate_projective_trees(n):
        s = sibling_tree_score(heads, arc_scores, sib_scores)
        if s > best + 1e-12:
            best, best_heads = s, list(heads)
    return best_heads, best


def sibling_tree_score(heads: Sequence[int], arc_scores: np.ndarray,
                       sib_scores: np.ndarray) -> float:
    """Score of one tree under first-order + adjacent-sibling factors."""
    total = 0.0
    n = len(heads)
    for h in range(0, n + 1):
        deps = [d for d in range(1, n + 1) if heads[d - 1] == h]
        left = sorted([d for d in deps if d < h], reverse=True)
        right = sorted([d for d in deps if d > h])
        for side in (left, right):
            prev = 0
            for d in side:
                total += arc_scores[h, d] + sib_scores[h, d, prev]
                prev = d
    return total
