"""Numpy fallback for the extremal-expectation kernel.

Mirrors the compiled kernel's semantics exactly: same greedy assignment,
same destination-id tie break, same +inf handling.  Rows are processed one
at a time so every accumulation stays local to its row; this keeps the
fallback bit-for-bit comparable with the compiled kernel at the cost of a
Python-level loop.
"""

import numpy as np


def extremal_rows(values, row_ptr, cols, plow, phigh, maximize, out):
    """Fill out[r] with the extremal expectation of each CSR row.

    values are indexed by the entries of cols.  Empty rows produce NaN.
    """
    nrows = row_ptr.shape[0] - 1
    for r in range(nrows):
        start = row_ptr[r]
        stop = row_ptr[r + 1]
        if stop == start:
            out[r] = np.nan
            continue
        dst = cols[start:stop]
        v = values[dst]
        lo = plow[start:stop]
        hi = phigh[start:stop]

        key = -v if maximize else v
        order = np.lexsort((dst, key))
        lo_s = lo[order]
        hi_s = hi[order]
        v_s = v[order]

        budget = 1.0 - lo_s.sum()
        if budget < 0.0:
            budget = 0.0
        delta = hi_s - lo_s
        prefix = np.cumsum(delta) - delta
        extra = np.clip(budget - prefix, 0.0, delta)
        p = lo_s + extra

        pos = p > 0.0
        if np.any(pos & np.isinf(v_s)):
            out[r] = np.inf
            continue
        out[r] = float(np.dot(p[pos], v_s[pos]))
