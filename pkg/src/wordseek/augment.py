"""Pseudoword generation.

Random per-character insert/delete/replace/keep editing produces words that
stay close to their source, rebalancing the pairwise-similarity distribution
of a query set toward the high-similarity end.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import InvalidInputError
from .similarity import Charset, Word, normalized_similarity


class EditOp(Enum):
    INSERT = "insert"
    DELETE = "delete"
    REPLACE = "replace"
    KEEP = "keep"


_OPS = (EditOp.INSERT, EditOp.DELETE, EditOp.REPLACE, EditOp.KEEP)


@dataclass(frozen=True)
class EditOperatorRatios:
    """Sampling weights for the four edit operators."""

    insert: float = 1.0
    delete: float = 1.0
    replace: float = 1.0
    keep: float = 5.0

    def __post_init__(self):
        w = (self.insert, self.delete, self.replace, self.keep)
        if any(x < 0 for x in w):
            raise InvalidInputError("operator weights must be non-negative")
        if sum(w) == 0:
            raise InvalidInputError("at least one operator weight must be positive")

    def probabilities(self) -> np.ndarray:
        w = np.array([self.insert, self.delete, self.replace, self.keep], dtype=np.float64)
        return w / w.sum()


def sample_operators(
    n: int, ratios: EditOperatorRatios, rng: np.random.Generator
) -> tuple[EditOp, ...]:
    """One i.i.d. operator per character position."""
    if n < 1:
        raise InvalidInputError("operator sequence length must be >= 1")
    draws = rng.choice(4, size=n, p=ratios.probabilities())
    return tuple(_OPS[d] for d in draws)


def apply_operators(
    word: Word, ops: Sequence[EditOp], random_chars: Sequence[int]
) -> tuple[int, ...]:
    """Deterministic edit pass; ``random_chars`` feeds inserts and replacements in order.

    May return an empty tuple when every character is deleted; callers that
    need a valid word resample instead.
    """
    if len(ops) != len(word):
        raise InvalidInputError("operator sequence length must equal word length")
    chars = iter(random_chars)
    out: list[int] = []
    for m, op in zip(word.indices, ops):
        if op is EditOp.INSERT:
            out.append(m)
            out.append(next(chars))
        elif op is EditOp.DELETE:
            continue
        elif op is EditOp.REPLACE:
            out.append(next(chars))
        else:
            out.append(m)
    return tuple(out)


def augment(
    word: Word,
    ratios: EditOperatorRatios,
    charset: Charset,
    rng: np.random.Generator,
    max_len: int | None = None,
) -> Word:
    """Generate a pseudoword near ``word``.

    Inserted/replacement characters are uniform over the charset. An all-delete
    draw would yield an empty word, so the operator sequence is resampled until
    the output is non-empty.
    """
    while True:
        ops = sample_operators(len(word), ratios, rng)
        needed = sum(op in (EditOp.INSERT, EditOp.REPLACE) for op in ops)
        chars = rng.integers(0, len(charset), size=needed)
        out = apply_operators(word, ops, [int(c) for c in chars])
        if out:
            break
    if max_len is not None and len(out) > max_len:
        out = out[:max_len]
    return Word(charset, out)


def augment_query_set(
    queries: Sequence[Word],
    ratios: EditOperatorRatios,
    charset: Charset,
    rng: np.random.Generator,
    max_len: int | None = None,
) -> list[Word]:
    """Originals followed by one pseudoword per original; output size 2N."""
    if len(queries) == 0:
        raise InvalidInputError("query set must be non-empty")
    return list(queries) + [augment(q, ratios, charset, rng, max_len=max_len) for q in queries]


def similarity_histogram(words: Sequence[Word], bins: int) -> np.ndarray:
    """Frequencies of pairwise normalized similarity over all unordered pairs."""
    if len(words) < 2:
        raise InvalidInputError("histogram needs at least two words")
    if bins < 2:
        raise InvalidInputError("histogram needs at least two bins")
    sims = [normalized_similarity(a, b) for a, b in itertools.combinations(words, 2)]
    counts, _ = np.histogram(sims, bins=bins, range=(0.0, 1.0))
    return counts / counts.sum()


def high_similarity_mass(words: Sequence[Word], threshold: float = 0.5) -> float:
    """Fraction of unordered pairs with similarity >= threshold."""
    sims = [normalized_similarity(a, b) for a, b in itertools.combinations(words, 2)]
    return float(np.mean([s >= threshold for s in sims]))
