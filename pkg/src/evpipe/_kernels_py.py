"""Pure numpy implementations of the hot loops.

Mirrors ``_ckernels.pyx`` function for function; used when the compiled
extension is unavailable or ``EVPIPE_PURE_PYTHON`` is set.
"""

import numpy as np


def histogram2c(x, y, p, height, width):
    """(2, height, width) int64 counts; channel 0 positive, channel 1 negative."""
    plane = height * width
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    channel = (np.asarray(p) == 0).astype(np.int64)
    flat = channel * plane + y * width + x
    counts = np.bincount(flat, minlength=2 * plane)
    return counts.reshape(2, height, width)


def adaptive_search(t, cells, anchor, q, t_th, a_th, ncells):
    """Grow [anchor - q*k, anchor + q*k) until duration > t_th and cell excess > a_th.

    Returns (sid, eid, k) with eid exclusive, or (-1, -1, k_last) when the
    window covers the whole stream without satisfying both conditions.
    """
    n = len(t)
    counts = np.zeros(ncells, dtype=np.int64)
    sid = eid = anchor
    k = 0
    while True:
        k += 1
        new_sid = max(anchor - q * k, 0)
        new_eid = min(anchor + q * k, n)
        if new_sid < sid:
            counts += np.bincount(cells[new_sid:sid], minlength=ncells)
        if new_eid > eid:
            counts += np.bincount(cells[eid:new_eid], minlength=ncells)
        sid, eid = new_sid, new_eid
        if eid > sid:
            duration = t[eid - 1] - t[sid]
            excess = counts.max() - counts.sum() / ncells
            if excess > a_th and duration > t_th:
                return sid, eid, k
        if sid == 0 and eid == n:
            return -1, -1, k


def grid_threshold_search(cells, start, threshold, ncells):
    """Smallest end (exclusive) such that some cell in cells[start:end] holds > threshold events."""
    tail = np.asarray(cells[start:])
    need = int(threshold) + 1
    best = -1
    for c in range(ncells):
        hits = np.flatnonzero(tail == c)
        if len(hits) >= need:
            end = start + int(hits[need - 1]) + 1
            if best < 0 or end < best:
                best = end
    return best
