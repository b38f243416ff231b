"""Independent reference implementations used only to check the package.

Everything here is deliberately written in the most literal way possible
(full DP tables, exhaustive search, plain loops) and never calls into the
code under test.
"""

from __future__ import annotations

from collections import deque

import numpy as np


def dp_levenshtein(a: str, b: str) -> int:
    """Full (len+1) x (len+1) dynamic-programming table."""
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        table[i][0] = i
    for j in range(m + 1):
        table[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            table[i][j] = min(
                table[i - 1][j] + 1,
                table[i][j - 1] + 1,
                table[i - 1][j - 1] + cost,
            )
    return table[n][m]


def bfs_edit_distance(a: str, b: str, alphabet: str, max_depth: int) -> int | None:
    """Breadth-first search over edit scripts; None if b unreachable in max_depth."""
    if a == b:
        return 0
    frontier = {a}
    for depth in range(1, max_depth + 1):
        nxt = set()
        for s in frontier:
            for i in range(len(s) + 1):
                for c in alphabet:
                    nxt.add(s[:i] + c + s[i:])  # insert
            for i in range(len(s)):
                nxt.add(s[:i] + s[i + 1 :])  # delete
                for c in alphabet:
                    nxt.add(s[:i] + c + s[i + 1 :])  # substitute
        if b in nxt:
            return depth
        frontier = nxt
    return None


def normalized_sim(a: str, b: str) -> float:
    return 1.0 - dp_levenshtein(a, b) / max(len(a), len(b))


def brute_force_ap(relevance) -> float:
    """Average of precision@k over relevant ranks, computed by re-counting."""
    precisions = []
    for k in range(1, len(relevance) + 1):
        if relevance[k - 1]:
            hits = sum(relevance[:k])
            precisions.append(hits / k)
    return sum(precisions) / len(precisions)


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized cross-correlation of two equal-shaped arrays."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    denom = np.linalg.norm(a) * np.linalg.norm(b)
    if denom == 0:
        return 1.0 if np.allclose(a, b) else 0.0
    return float(a @ b / denom)


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Gradient of scalar f at x via central differences, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.ravel()
    xf = x.ravel()
    for i in range(x.size):
        orig = xf[i]
        xf[i] = orig + h
        hi = f(x)
        xf[i] = orig - h
        lo = f(x)
        xf[i] = orig
        flat[i] = (hi - lo) / (2 * h)
    return grad


def random_word(rng: np.random.Generator, alphabet: str, min_len=1, max_len=10) -> str:
    n = int(rng.integers(min_len, max_len + 1))
    return "".join(alphabet[int(i)] for i in rng.integers(0, len(alphabet), size=n))
