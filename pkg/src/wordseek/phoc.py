"""Pyramidal histogram-of-characters encoding and ranking baseline."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, InvalidInputError
from .similarity import Charset, Word

DEFAULT_LEVELS = (2, 3, 4, 5)


@dataclass(eq=False)
class PHOCVector:
    bits: np.ndarray
    levels: tuple[int, ...]

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if not np.all((self.bits == 0) | (self.bits == 1)):
            raise InvalidInputError("PHOC bits must be binary")

    def __len__(self) -> int:
        return len(self.bits)


def phoc_dimension(charset: Charset, levels: Sequence[int] = DEFAULT_LEVELS) -> int:
    if len(levels) == 0:
        raise InvalidInputError("levels must be non-empty")
    return sum(levels) * len(charset)


def phoc_encode(
    word: Word, charset: Charset, levels: Sequence[int] = DEFAULT_LEVELS
) -> PHOCVector:
    """Binary occupancy of characters over pyramid regions.

    Character i of an n-character word spans [i/n, (i+1)/n); region r at a
    level with L splits spans [r/L, (r+1)/L). The (level, region, char) bit is
    set when the overlap covers at least half of the character span. Spans are
    compared exactly with rational arithmetic so the 50% boundary is stable.
    """
    if len(levels) == 0:
        raise InvalidInputError("levels must be non-empty")
    if word.charset != charset:
        raise InvalidInputError("word charset does not match encoding charset")
    n = len(word)
    bits = np.zeros(phoc_dimension(charset, levels), dtype=np.uint8)
    offset = 0
    for level in levels:
        for r in range(level):
            r_lo = Fraction(r, level)
            r_hi = Fraction(r + 1, level)
            for i, char_index in enumerate(word.indices):
                c_lo = Fraction(i, n)
                c_hi = Fraction(i + 1, n)
                overlap = min(r_hi, c_hi) - max(r_lo, c_lo)
                if overlap * 2 * n >= 1:  # overlap >= half the 1/n char span
                    bits[offset + r * len(charset) + char_index] = 1
        offset += level * len(charset)
    return PHOCVector(bits=bits, levels=tuple(levels))


def phoc_rank(
    query: Word,
    predicted: Sequence[np.ndarray],
    charset: Charset,
    levels: Sequence[int] = DEFAULT_LEVELS,
) -> tuple[float, list[tuple[int, float]]]:
    """Score proposals by cosine against the query's PHOC.

    Returns (image score, proposals ranked by descending score). The image
    score is the maximum proposal score; with no proposals it is -1.
    """
    q = phoc_encode(query, charset, levels).bits.astype(np.float64)
    qn = np.linalg.norm(q)
    scores = []
    for k, vec in enumerate(predicted):
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != q.shape:
            raise InvalidInputError(f"predicted vector {k} has shape {v.shape}, want {q.shape}")
        vn = np.linalg.norm(v)
        if vn == 0.0:
            raise DegenerateInputError(f"predicted vector {k} has zero norm")
        scores.append(float(q @ v / (qn * vn)))
    ranked = sorted(enumerate(scores), key=lambda kv: (-kv[1], kv[0]))
    image_score = ranked[0][1] if ranked else -1.0
    return image_score, ranked
