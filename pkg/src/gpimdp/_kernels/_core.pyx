# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled kernel for extremal expectations over interval distribution rows.

A row is a set of destination intervals [lo_j, hi_j] constraining a
probability distribution (sum lo <= 1 <= sum hi, lo <= hi).  The extremal
expectation of a value vector over all feasible distributions is reached by
an order-based greedy assignment: visit destinations in value order
(ascending to minimize, descending to maximize), hand each its upper bound
until the remaining mass is pinned by the lower bounds of the rest.

Every destination owns at least its lower bound, so the baseline
sum(value * lo) is accumulated during the fill and only the extra mass is
distributed in value order.  A binary heap serves the order lazily: the
budget is usually exhausted after a handful of pops, which beats sorting
whole rows.

Values may contain +inf (used for hop distances); any positive mass placed
on an infinite value makes the row expectation +inf.  -inf is not supported.
"""

from libc.stdlib cimport free, malloc
from libc.math cimport INFINITY, NAN, isinf


ctypedef struct Entry:
    double val
    double lo
    double hi
    long long dst


cdef inline bint _before(const Entry *a, const Entry *b, bint maximize) noexcept nogil:
    if a.val != b.val:
        if maximize:
            return a.val > b.val
        return a.val < b.val
    # equal values: destination id ascending keeps assignments deterministic
    return a.dst < b.dst


cdef inline void _sift_down(Entry *heap, Py_ssize_t size, Py_ssize_t i,
                            bint maximize) noexcept nogil:
    cdef Py_ssize_t child
    cdef Entry tmp
    while True:
        child = 2 * i + 1
        if child >= size:
            return
        if child + 1 < size and _before(&heap[child + 1], &heap[child], maximize):
            child += 1
        if _before(&heap[child], &heap[i], maximize):
            tmp = heap[i]
            heap[i] = heap[child]
            heap[child] = tmp
            i = child
        else:
            return


def extremal_rows(double[::1] values, long long[::1] row_ptr, long long[::1] cols,
                  double[::1] plow, double[::1] phigh, bint maximize,
                  double[::1] out):
    """Fill out[r] with the extremal expectation of each CSR row.

    values are indexed by the entries of cols.  Empty rows produce NaN.
    """
    cdef Py_ssize_t nrows = row_ptr.shape[0] - 1
    cdef Py_ssize_t r, i, k, start, size, max_k = 0
    cdef double budget, acc, add
    cdef bint has_inf
    cdef Entry *heap
    cdef Entry top

    for r in range(nrows):
        k = row_ptr[r + 1] - row_ptr[r]
        if k > max_k:
            max_k = k
    if max_k == 0:
        for r in range(nrows):
            out[r] = NAN
        return

    heap = <Entry *> malloc(max_k * sizeof(Entry))
    if heap == NULL:
        raise MemoryError()

    try:
        with nogil:
            for r in range(nrows):
                start = row_ptr[r]
                k = row_ptr[r + 1] - start
                if k == 0:
                    out[r] = NAN
                    continue
                # baseline: every destination keeps its lower bound
                budget = 1.0
                acc = 0.0
                has_inf = False
                for i in range(k):
                    heap[i].val = values[cols[start + i]]
                    heap[i].lo = plow[start + i]
                    heap[i].hi = phigh[start + i]
                    heap[i].dst = cols[start + i]
                    budget -= heap[i].lo
                    if heap[i].lo > 0.0:
                        if isinf(heap[i].val):
                            has_inf = True
                        else:
                            acc += heap[i].lo * heap[i].val
                if budget < 0.0:
                    budget = 0.0
                # lazy value order: pop until the extra mass runs out
                if budget > 0.0 and not has_inf:
                    size = k
                    for i in range((k >> 1) - 1, -1, -1):
                        _sift_down(heap, size, i, maximize)
                    while size > 0 and budget > 0.0:
                        top = heap[0]
                        add = top.hi - top.lo
                        if add > budget:
                            add = budget
                        if add > 0.0:
                            if isinf(top.val):
                                has_inf = True
                                break
                            acc += add * top.val
                            budget -= add
                        size -= 1
                        heap[0] = heap[size]
                        _sift_down(heap, size, 0, maximize)
                out[r] = INFINITY if has_inf else acc
    finally:
        free(heap)
