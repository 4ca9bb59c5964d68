"""Independent brute-force reference implementations used by the tests.

These deliberately share no code with the library: the span oracle
enumerates every start position with a plain edit-distance table, the
fusion oracle recomputes scores from raw store contents.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _best_span_codes(h: np.ndarray, s: np.ndarray) -> tuple[int, int, int]:
    n = len(h)
    m = len(s)
    best_d = n + m + 1
    best_i = 0
    best_len = 0
    cur = np.empty(n + 1, dtype=np.int32)
    new = np.empty(n + 1, dtype=np.int32)
    for i in range(n + 1):
        width = n - i
        for t in range(width + 1):
            cur[t] = t
        for p in range(1, m + 1):
            new[0] = p
            for t in range(1, width + 1):
                d = cur[t - 1] + (0 if h[i + t - 1] == s[p - 1] else 1)
                if cur[t] + 1 < d:
                    d = cur[t] + 1
                if new[t - 1] + 1 < d:
                    d = new[t - 1] + 1
                new[t] = d
            cur, new = new, cur
        for t in range(width + 1):
            if cur[t] < best_d:
                best_d = cur[t]
                best_i = i
                best_len = t
    return best_d, best_i, best_len


def brute_force_best_span(haystack: str, needle: str) -> tuple[int, int, int]:
    """(start, end, distance) of the minimal-distance substring.

    Ties resolved by smaller distance, then smaller start, then smaller
    length, exactly as the library promises.
    """
    assert needle, "oracle requires a non-empty needle"
    h = np.frombuffer(haystack.encode("utf-32-le"), dtype=np.uint32).astype(np.int64)
    s = np.frombuffer(needle.encode("utf-32-le"), dtype=np.uint32).astype(np.int64)
    d, i, length = _best_span_codes(h, s)
    return i, i + length, d


def plain_levenshtein(a: str, b: str) -> int:
    """Textbook O(len(a)*len(b)) edit distance, no tricks."""
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1,
                           prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[len(b)]
