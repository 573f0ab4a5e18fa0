"""Hot inner loops: Levenshtein distance and the GRU time recurrence.

Every kernel exists twice: an explicit-loop version compiled with numba
(``*_loop``) and a vectorised pure-numpy version (``*_np``).  The public
names dispatch on :data:`mmkws._accel.HAVE_NUMBA`; both versions are
exercised by the test-suite and compared in ``benchmarks/bench_kernels.py``.
"""
import numpy as np

from ._accel import HAVE_NUMBA, njit


# --------------------------------------------------------------------------
# Levenshtein distance


@njit
def levenshtein_loop(a, b, bound):
    """Unit-cost edit distance; returns ``bound + 1`` once it must exceed ``bound``.

    Pass ``bound < 0`` to disable the early exit.
    """
    n = a.shape[0]
    m = b.shape[0]
    if bound >= 0 and abs(n - m) > bound:
        return bound + 1
    if n == 0:
        return m
    if m == 0:
        return n
    prev = np.empty(m + 1, dtype=np.int64)
    cur = np.empty(m + 1, dtype=np.int64)
    for j in range(m + 1):
        prev[j] = j
    for i in range(1, n + 1):
        cur[0] = i
        row_min = i
        ai = a[i - 1]
        for j in range(1, m + 1):
            best = prev[j - 1] + (0 if ai == b[j - 1] else 1)
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if cur[j - 1] + 1 < best:
                best = cur[j - 1] + 1
            cur[j] = best
            if best < row_min:
                row_min = best
        if bound >= 0 and row_min > bound:
            return bound + 1
        prev, cur = cur, prev
    d = prev[m]
    if bound >= 0 and d > bound:
        return bound + 1
    return d


def levenshtein_np(a, b, bound=-1):
    """Row-vectorised edit distance (insertions resolved by a running minimum)."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    n, m = a.shape[0], b.shape[0]
    if bound >= 0 and abs(n - m) > bound:
        return bound + 1
    if n == 0 or m == 0:
        d = max(n, m)
        return bound + 1 if 0 <= bound < d else d
    ramp = np.arange(m + 1, dtype=np.int64)
    prev = ramp.copy()
    for i in range(1, n + 1):
        tmp = np.empty(m + 1, dtype=np.int64)
        tmp[0] = i
        np.minimum(prev[1:] + 1, prev[:-1] + (b != a[i - 1]), out=tmp[1:])
        # cur[j] = min_k<=j tmp[k] + (j - k)
        prev = np.minimum.accumulate(tmp - ramp) + ramp
        if bound >= 0 and prev.min() > bound:
            return bound + 1
    d = int(prev[m])
    return bound + 1 if 0 <= bound < d else d


@njit
def _distances_to_loop(query, flat, offsets, bound):
    out = np.empty(offsets.shape[0] - 1, dtype=np.int64)
    for k in range(out.shape[0]):
        out[k] = levenshtein_loop(query, flat[offsets[k]:offsets[k + 1]], bound)
    return out


def _distances_to_np(query, flat, offsets, bound):
    return np.array(
        [levenshtein_np(query, flat[offsets[k]:offsets[k + 1]], bound) for k in range(len(offsets) - 1)],
        dtype=np.int64,
    )


def levenshtein(a, b, bound=-1):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if HAVE_NUMBA:
        return int(levenshtein_loop(a, b, bound))
    return int(levenshtein_np(a, b, bound))


def distances_to(query, flat, offsets, bound=-1):
    """Edit distances from ``query`` to every sequence of a packed corpus.

    ``flat[offsets[k]:offsets[k+1]]`` is the k-th corpus sequence.
    """
    query = np.asarray(query, dtype=np.int64)
    if HAVE_NUMBA:
        return _distances_to_loop(query, flat, offsets, bound)
    return _distances_to_np(query, flat, offsets, bound)


# --------------------------------------------------------------------------
# GRU recurrence
#
# Gate layout along the last axis of ``gx``/``wh``/``bh``: [reset, update, new].
# ``gx`` already holds x @ W_x + b_x; the kernels handle the hidden-to-hidden
# half.  Steps at t >= lengths[b] leave the hidden state untouched.


@njit
def _sig(v):
    return 1.0 / (1.0 + np.exp(-v))


@njit
def gru_forward_loop(gx, wh, bh, lengths):
    B, T, H3 = gx.shape
    H = H3 // 3
    hs = np.zeros((B, T + 1, H))
    r = np.zeros((B, T, H))
    z = np.zeros((B, T, H))
    n = np.zeros((B, T, H))
    ghn = np.zeros((B, T, H))
    gh = np.empty(H3)
    for b in range(B):
        for t in range(T):
            if t >= lengths[b]:
                for k in range(H):
                    hs[b, t + 1, k] = hs[b, t, k]
                continue
            for j in range(H3):
                acc = bh[j]
                for k in range(H):
                    acc += hs[b, t, k] * wh[k, j]
                gh[j] = acc
            for k in range(H):
                rk = _sig(gx[b, t, k] + gh[k])
                zk = _sig(gx[b, t, H + k] + gh[H + k])
                nk = np.tanh(gx[b, t, 2 * H + k] + rk * gh[2 * H + k])
                r[b, t, k] = rk
                z[b, t, k] = zk
                n[b, t, k] = nk
                ghn[b, t, k] = gh[2 * H + k]
                hs[b, t + 1, k] = (1.0 - zk) * nk + zk * hs[b, t, k]
    return hs, r, z, n, ghn


@njit
def gru_backward_loop(dh_final, wh, lengths, hs, r, z, n, ghn):
    B, T1, H = hs.shape
    T = T1 - 1
    dgx = np.zeros((B, T, 3 * H))
    dwh = np.zeros((H, 3 * H))
    dbh = np.zeros(3 * H)
    dgh = np.empty(3 * H)
    for b in range(B):
        dh = dh_final[b].copy()
        for t in range(min(lengths[b], T) - 1, -1, -1):
            dprev = np.zeros(H)
            for k in range(H):
                zk = z[b, t, k]
                nk = n[b, t, k]
                rk = r[b, t, k]
                dn = dh[k] * (1.0 - zk)
                dz = dh[k] * (hs[b, t, k] - nk)
                dprev[k] = dh[k] * zk
                dan = dn * (1.0 - nk * nk)
                dr = dan * ghn[b, t, k]
                dar = dr * rk * (1.0 - rk)
                daz = dz * zk * (1.0 - zk)
                dgx[b, t, k] = dar
                dgx[b, t, H + k] = daz
                dgx[b, t, 2 * H + k] = dan
                dgh[k] = dar
                dgh[H + k] = daz
                dgh[2 * H + k] = dan * rk
            for j in range(3 * H):
                g = dgh[j]
                dbh[j] += g
                for k in range(H):
                    dwh[k, j] += hs[b, t, k] * g
                    dprev[k] += g * wh[k, j]
            dh = dprev
    return dgx, dwh, dbh


def _sig_np(v):
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0, e) / (1.0 + e)


def gru_forward_np(gx, wh, bh, lengths):
    B, T, H3 = gx.shape
    H = H3 // 3
    hs = np.zeros((B, T + 1, H))
    r = np.zeros((B, T, H))
    z = np.zeros((B, T, H))
    n = np.zeros((B, T, H))
    ghn = np.zeros((B, T, H))
    lengths = np.asarray(lengths)
    for t in range(T):
        h = hs[:, t]
        gh = h @ wh + bh
        rt = _sig_np(gx[:, t, :H] + gh[:, :H])
        zt = _sig_np(gx[:, t, H:2 * H] + gh[:, H:2 * H])
        nt = np.tanh(gx[:, t, 2 * H:] + rt * gh[:, 2 * H:])
        live = (t < lengths)[:, None]
        hs[:, t + 1] = np.where(live, (1.0 - zt) * nt + zt * h, h)
        r[:, t] = np.where(live, rt, 0.0)
        z[:, t] = np.where(live, zt, 0.0)
        n[:, t] = np.where(live, nt, 0.0)
        ghn[:, t] = np.where(live, gh[:, 2 * H:], 0.0)
    return hs, r, z, n, ghn


def gru_backward_np(dh_final, wh, lengths, hs, r, z, n, ghn):
    B, T1, H = hs.shape
    T = T1 - 1
    lengths = np.asarray(lengths)
    dgx = np.zeros((B, T, 3 * H))
    dwh = np.zeros((H, 3 * H))
    dbh = np.zeros(3 * H)
    dh = np.array(dh_final, dtype=np.float64)
    for t in range(T - 1, -1, -1):
        live = (t < lengths)[:, None]
        h = hs[:, t]
        zt, nt, rt = z[:, t], n[:, t], r[:, t]
        dn = dh * (1.0 - zt)
        dz = dh * (h - nt)
        dan = dn * (1.0 - nt * nt)
        dar = dan * ghn[:, t] * rt * (1.0 - rt)
        daz = dz * zt * (1.0 - zt)
        dgh = np.concatenate([dar, daz, dan * rt], axis=1) * live
        dgx[:, t] = np.concatenate([dar, daz, dan], axis=1) * live
        dwh += h.T @ dgh
        dbh += dgh.sum(axis=0)
        dh = np.where(live, dh * zt + dgh @ wh.T, dh)
    return dgx, dwh, dbh


def gru_forward(gx, wh, bh, lengths):
    lengths = np.asarray(lengths, dtype=np.int64)
    if HAVE_NUMBA:
        return gru_forward_loop(gx, wh, bh, lengths)
    return gru_forward_np(gx, wh, bh, lengths)


def gru_backward(dh_final, wh, lengths, cache):
    lengths = np.asarray(lengths, dtype=np.int64)
    if HAVE_NUMBA:
        return gru_backward_loop(np.ascontiguousarray(dh_final), wh, lengths, *cache)
    return gru_backward_np(dh_final, wh, lengths, *cache)


# --------------------------------------------------------------------------
# pruned k-nearest scan


@njit
def topk_scan_loop(query, flat, offsets, k):
    """Distances to every packed sequence with a shrinking cut-off.

    Entries that provably cannot reach the k smallest distances (ties
    included) come back as -1; every other entry is exact.
    """
    N = offsets.shape[0] - 1
    out = np.empty(N, dtype=np.int64)
    best = np.full(k, np.iinfo(np.int64).max, dtype=np.int64)  # sorted ascending
    filled = 0
    for c in range(N):
        bound = best[k - 1] if filled >= k else -1
        d = levenshtein_loop(query, flat[offsets[c]:offsets[c + 1]], bound)
        if bound >= 0 and d > bound:
            out[c] = -1
            continue
        out[c] = d
        # insert d into the sorted buffer
        pos = k - 1
        if d < best[pos]:
            while pos > 0 and best[pos - 1] > d:
                best[pos] = best[pos - 1]
                pos -= 1
            best[pos] = d
        filled += 1
    return out


def topk_scan_np(query, flat, offsets, k):
    N = len(offsets) - 1
    out = np.empty(N, dtype=np.int64)
    best = []
    for c in range(N):
        bound = best[k - 1] if len(best) >= k else -1
        d = levenshtein_np(query, flat[offsets[c]:offsets[c + 1]], bound)
        if bound >= 0 and d > bound:
            out[c] = -1
            continue
        out[c] = d
        best.append(d)
        best.sort()
        del best[k:]
    return out


def topk_scan(query, flat, offsets, k):
    query = np.asarray(query, dtype=np.int64)
    if HAVE_NUMBA:
        return topk_scan_loop(query, flat, offsets, int(k))
    return topk_scan_np(query, flat, offsets, int(k))
