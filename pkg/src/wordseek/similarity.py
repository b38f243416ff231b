"""String similarity and cross-modal cosine scoring.

Supervision side: Levenshtein distance normalized by the longer word,
collected into target matrices. Prediction side: cosine similarity between
flattened, tanh-squashed sequence features.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DegenerateInputError, InvalidInputError

LATIN_LOWER = "abcdefghijklmnopqrstuvwxyz0123456789"


@dataclass(frozen=True)
class Charset:
    """Ordered symbol inventory; index order is the label encoding.

    The CTC blank is reserved at ``len(symbols)``, outside the symbol range.
    ``fold_case`` lowercases text before lookup (retrieval benchmarks are
    typically case-insensitive).
    """

    symbols: tuple[str, ...]
    fold_case: bool = False

    def __post_init__(self):
        if not self.symbols:
            raise InvalidInputError("charset must contain at least one symbol")
        if len(set(self.symbols)) != len(self.symbols):
            raise InvalidInputError("charset symbols must be unique")

    @cached_property
    def _index(self) -> dict[str, int]:
        return {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    @property
    def blank_index(self) -> int:
        return len(self.symbols)

    def index_of(self, symbol: str) -> int:
        if self.fold_case:
            symbol = symbol.lower()
        try:
            return self._index[symbol]
        except KeyError:
            raise InvalidInputError(f"symbol {symbol!r} not in charset") from None

    def symbol_at(self, index: int) -> str:
        if not 0 <= index < len(self.symbols):
            raise InvalidInputError(f"index {index} outside charset of size {len(self)}")
        return self.symbols[index]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.symbols) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path, fold_case: bool = False) -> "Charset":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(lines), fold_case=fold_case)

    @classmethod
    def latin_lower(cls) -> "Charset":
        """Default 36-symbol charset (a-z, 0-9) with case folding enabled."""
        return cls(tuple(LATIN_LOWER), fold_case=True)


@dataclass(frozen=True)
class Word:
    """Non-empty sequence of charset indices."""

    charset: Charset
    indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.indices) == 0:
            raise InvalidInputError("word must be non-empty")
        n = len(self.charset)
        if any(not 0 <= i < n for i in self.indices):
            raise InvalidInputError(f"word indices out of range for charset of size {n}")

    @classmethod
    def from_text(cls, text: str, charset: Charset) -> "Word":
        return cls(charset, tuple(charset.index_of(c) for c in text))

    @property
    def text(self) -> str:
        return "".join(self.charset.symbols[i] for i in self.indices)

    def __len__(self) -> int:
        return len(self.indices)


def words_from_texts(texts: Iterable[str], charset: Charset) -> list[Word]:
    return [Word.from_text(t, charset) for t in texts]


@dataclass(eq=False)
class SimilarityMatrix:
    """Labeled rows x cols of similarity scores."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (len(self.row_labels), len(self.col_labels))
        if self.values.shape != expected:
            raise InvalidInputError(
                f"matrix shape {self.values.shape} does not match labels {expected}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(eq=False)
class SequenceFeature:
    """Stack of per-item sequence features, shape (count, T, C)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise InvalidInputError(f"expected (count, T, C), got shape {self.values.shape}")
        _, t, c = self.values.shape
        if t < 1 or c < 1:
            raise InvalidInputError("sequence features need T >= 1 and C >= 1")
        if not np.all(np.isfinite(self.values)):
            raise InvalidInputError("sequence features must be finite")

    @property
    def count(self) -> int:
        return self.values.shape[0]

    @property
    def steps(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


def levenshtein(a: Word, b: Word) -> int:
    """Minimal number of single-symbol edits (insert/delete/substitute) a -> b."""
    if a.charset != b.charset:
        raise InvalidInputError("words must share a charset")
    x, y = a.indices, b.indices
    if len(x) > len(y):
        x, y = y, x
    previous = list(range(len(x) + 1))
    for i, cy in enumerate(y, start=1):
        current = [i] + [0] * len(x)
        for j, cx in enumerate(x, start=1):
            cost = 0 if cx == cy else 1
            current[j] = min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
        previous = current
    return previous[len(x)]


def normalized_similarity(a: Word, b: Word) -> float:
    """1 - edit_distance / max(|a|, |b|); 1.0 iff the words are equal."""
    return 1.0 - levenshtein(a, b) / max(len(a), len(b))


def target_matrix(rows: Sequence[Word], cols: Sequence[Word]) -> SimilarityMatrix:
    """Pairwise normalized similarity used as the training target."""
    if len(rows) == 0 or len(cols) == 0:
        raise InvalidInputError("target matrix needs at least one row and one column")
    values = np.empty((len(rows), len(cols)), dtype=np.float64)
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            values[i, j] = normalized_similarity(r, c)
    return SimilarityMatrix(
        row_labels=tuple(w.text for w in rows),
        col_labels=tuple(w.text for w in cols),
        values=values,
    )


def cosine_rows(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Cosine of every row of u against every row of v; rows must be nonzero."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.ndim != 2 or v.ndim != 2 or u.shape[1] != v.shape[1]:
        raise InvalidInputError(f"incompatible row shapes {u.shape} and {v.shape}")
    un = np.linalg.norm(u, axis=1)
    vn = np.linalg.norm(v, axis=1)
    if np.any(un == 0.0) or np.any(vn == 0.0):
        raise DegenerateInputError("zero-norm vector in cosine computation")
    return (u @ v.T) / np.outer(un, vn)


def cosine_matrix(f: SequenceFeature, e: SequenceFeature) -> SimilarityMatrix:
    """Cosine similarity between tanh-squashed, flattened sequence features."""
    if (f.steps, f.channels) != (e.steps, e.channels):
        raise InvalidInputError(
            f"feature shapes differ: (T,C)={(f.steps, f.channels)} vs {(e.steps, e.channels)}"
        )
    fu = np.tanh(f.values.reshape(f.count, -1))
    ev = np.tanh(e.values.reshape(e.count, -1))
    values = cosine_rows(fu, ev)
    return SimilarityMatrix(
        row_labels=tuple(str(i) for i in range(f.count)),
        col_labels=tuple(str(j) for j in range(e.count)),
        values=values,
    )
