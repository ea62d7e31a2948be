"""Compiled scan kernels.

All kernels address items by norm-sorted position and users by row. A user's
buffer ``(topk_items[u], topk_ips[u])`` is kept descending by inner product,
ties by ascending item position; ``pos[u]`` counts the leading items already
evaluated for that user, so ``j < pos[u]`` means position ``j`` was scanned.

Exact inner products always come from ``udata``/``pdata`` in the caller's
original coordinates and are summed left to right, so every code path (and
the brute-force baseline) sees bit-identical values and breaks ties the same
way. ``uhead``/``phead`` are the rotated leading coordinates used only for the
head/tail bound.

Bound comparisons add ``BOUND_SLACK * |u| * |p|`` to every bound so that
rounding in a computed inner product can never push it above its own bound.
"""

import numba as nb
import numpy as np

nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

BOUND_SLACK = 1e-12

NOT_MEMBER = 0
MEMBER = 1
UNRESOLVED = 2

# query stat slots
ST_IP = 0
ST_STAGE1 = 1
ST_STAGE2 = 2
ST_STAGE3 = 3
ST_STAGE4 = 4
ST_RESOLVED = 5
ST_RESOLVE_SCANNED = 6
ST_RESOLVE_IP = 7
N_STATS = 8


@nb.njit(cache=True, inline="always")
def _dot(a, b, length):
    s = 0.0
    for t in range(length):
        s += a[t] * b[t]
    return s


@nb.njit(cache=True)
def dot(a, b):
    return _dot(a, b, a.shape[0])


@nb.njit(cache=True)
def row_dots(urow, pdata, cols):
    """Exact products of one user with the items at ``cols``."""
    out = np.empty(cols.shape[0])
    for t in range(cols.shape[0]):
        out[t] = _dot(urow, pdata[cols[t]], urow.shape[0])
    return out


@nb.njit(cache=True)
def _insert(topk_items, topk_ips, fill, u, j, ip):
    kmax = topk_ips.shape[1]
    f = fill[u]
    if f < kmax:
        i = f
        fill[u] = f + 1
    else:
        i = kmax - 1
    # j is larger than every buffered position, so it goes after equal values
    while i > 0 and topk_ips[u, i - 1] < ip:
        topk_ips[u, i] = topk_ips[u, i - 1]
        topk_items[u, i] = topk_items[u, i - 1]
        i -= 1
    topk_ips[u, i] = ip
    topk_items[u, i] = j


@nb.njit(cache=True)
def _is_stop(u, j, udata, unorm, pnorm, topk_ips, fill):
    """True when no item at position >= j can enter the user's full buffer."""
    kmax = topk_ips.shape[1]
    if fill[u] < kmax:
        return False
    cs = unorm[u] * pnorm[j]
    return cs + BOUND_SLACK * cs <= topk_ips[u, kmax - 1]


@nb.njit(cache=True)
def scan_user(u, start, limit, udata, unorm, utail, uhead, pdata, pnorm, ptail, phead,
              topk_items, topk_ips, fill):
    """Filtered scan of positions [start, limit).

    Returns (stop_position, stopped, inner_products). ``stopped`` means the
    Cauchy-Schwarz stop fired at ``stop_position``.
    """
    kmax = topk_ips.shape[1]
    d = udata.shape[1]
    ips = 0
    un = unorm[u]
    for j in range(start, limit):
        full = fill[u] == kmax
        if full:
            theta = topk_ips[u, kmax - 1]
            cs = un * pnorm[j]
            slack = BOUND_SLACK * cs
            if cs + slack <= theta:
                return j, True, ips
            pb = _dot(uhead[u], phead[j], uhead.shape[1]) + utail[u] * ptail[j]
            if pb + slack <= theta:
                continue
            ip = _dot(udata[u], pdata[j], d)
            ips += 1
            if ip > theta:
                _insert(topk_items, topk_ips, fill, u, j, ip)
        else:
            ip = _dot(udata[u], pdata[j], d)
            ips += 1
            _insert(topk_items, topk_ips, fill, u, j, ip)
    return limit, False, ips


@nb.njit(cache=True)
def _first_stop(u, lo, udata, unorm, pnorm, topk_ips, fill):
    """Smallest position >= lo where the stop condition holds, or m if none."""
    hi = pnorm.shape[0]
    while lo < hi:
        mid = (lo + hi) // 2
        if _is_stop(u, mid, udata, unorm, pnorm, topk_ips, fill):
            hi = mid
        else:
            lo = mid + 1
    return lo


@nb.njit(cache=True, parallel=True)
def uniform_scan_kernel(limit, udata, unorm, utail, uhead, pdata, pnorm, ptail, phead,
                        topk_items, topk_ips, fill, pos, certified, ip_count, first_stop):
    n = udata.shape[0]
    m = pdata.shape[0]
    for u in nb.prange(n):
        end, stopped, ips = scan_user(u, 0, limit, udata, unorm, utail, uhead, pdata, pnorm,
                                      ptail, phead, topk_items, topk_ips, fill)
        ip_count[u] = ips
        pos[u] = end
        if stopped or end >= m or _is_stop(u, end, udata, unorm, pnorm, topk_ips, fill):
            certified[u] = True
            first_stop[u] = end
        else:
            first_stop[u] = _first_stop(u, end, udata, unorm, pnorm, topk_ips, fill)


@nb.njit(cache=True)
def dynamic_scan_kernel(order, base_budget, budget_cap, udata, unorm, utail, uhead, pdata, pnorm,
                        ptail, phead, topk_items, topk_ips, fill, pos, certified, ip_count,
                        granted):
    """Sequential top-up scans in rank order with a shared leftover pool.

    Returns (items_accessed, pool_left).
    """
    m = pdata.shape[0]
    pool = 0
    spent = 0
    for r in range(order.shape[0]):
        u = order[r]
        b = base_budget[r] + pool
        pool = 0
        if b > budget_cap - spent:
            b = max(budget_cap - spent, 0)
        granted[r] = b
        start = pos[u]
        limit = min(start + b, m)
        end, stopped, ips = scan_user(u, start, limit, udata, unorm, utail, uhead, pdata, pnorm,
                                      ptail, phead, topk_items, topk_ips, fill)
        ip_count[u] += ips
        used = end - start
        spent += used
        pos[u] = end
        if stopped or end >= m or _is_stop(u, end, udata, unorm, pnorm, topk_ips, fill):
            certified[u] = True
            pool += b - used
    return spent, pool


@nb.njit(cache=True, parallel=True)
def upper_bound_kernel(pending, nchunks, udata, unorm, utail, uhead, pdata, pnorm, ptail, phead,
                       topk_items, topk_ips, fill, pos, lam):
    """Per-(item, rank) increments, accumulated privately per chunk then merged.

    ``diff[j, r]`` counts users for whom item j is credited at every k > r,
    so a cumulative sum over r gives the table.
    """
    m = pdata.shape[0]
    kmax = topk_ips.shape[1]
    n = udata.shape[0]
    diffs = np.zeros((nchunks, m, kmax), dtype=np.int64)
    npend = pending.shape[0]
    for c in nb.prange(nchunks):
        lo = c * npend // nchunks
        hi = (c + 1) * npend // nchunks
        for idx in range(lo, hi):
            u = pending[idx]
            un = unorm[u]
            best = -np.inf
            for j in range(pos[u], m):
                cs = un * pnorm[j]
                slack = BOUND_SLACK * cs
                if cs + slack <= topk_ips[u, kmax - 1]:
                    # every later item is bounded by this product
                    if cs + slack > best:
                        best = cs + slack
                    break
                bound = _dot(uhead[u], phead[j], uhead.shape[1]) + utail[u] * ptail[j] + slack
                if bound > best:
                    best = bound
                # first rank whose buffered value the bound reaches
                a, b = 0, kmax
                while a < b:
                    mid = (a + b) // 2
                    if topk_ips[u, mid] <= bound:
                        b = mid
                    else:
                        a = mid + 1
                if a < kmax:
                    diffs[c, j, a] += 1
            lam[u] = best
    diff = np.zeros((m, kmax), dtype=np.int64)
    for c in range(nchunks):
        diff += diffs[c]
    for u in range(n):
        for r in range(fill[u]):
            diff[topk_items[u, r], r] += 1
    for r in range(1, kmax):
        for j in range(m):
            diff[j, r] += diff[j, r - 1]
    return diff


@nb.njit(cache=True)
def decide(u, j, k, udata, unorm, utail, uhead, pdata, pnorm, ptail, phead,
           topk_items, topk_ips, pos, lam, stats):
    """Is item j in the exact top-k of user u? One of NOT_MEMBER, MEMBER, UNRESOLVED."""
    if j < pos[u]:
        stats[ST_STAGE1] += 1
        for r in range(k):
            if topk_items[u, r] == j:
                # unscanned items cannot outrank j unless their bound exceeds it
                if topk_ips[u, r] >= lam[u]:
                    return MEMBER
                return UNRESOLVED
        return NOT_MEMBER
    theta = topk_ips[u, k - 1]
    cs = unorm[u] * pnorm[j]
    slack = BOUND_SLACK * cs
    if cs + slack <= theta:
        stats[ST_STAGE2] += 1
        return NOT_MEMBER
    if _dot(uhead[u], phead[j], uhead.shape[1]) + utail[u] * ptail[j] + slack <= theta:
        stats[ST_STAGE3] += 1
        return NOT_MEMBER
    ip = _dot(udata[u], pdata[j], udata.shape[1])
    stats[ST_IP] += 1
    stats[ST_STAGE4] += 1
    if ip <= theta:
        return NOT_MEMBER
    # strict: an unscanned item before j with an equal product would win the tie
    if ip > lam[u]:
        return MEMBER
    return UNRESOLVED


@nb.njit(cache=True)
def resolve(u, udata, unorm, utail, uhead, pdata, pnorm, ptail, phead, topk_items, topk_ips, fill,
            pos, lam, certified, stats):
    m = pdata.shape[0]
    start = pos[u]
    if certified[u]:
        return
    end, stopped, ips = scan_user(u, start, m, udata, unorm, utail, uhead, pdata, pnorm, ptail, phead,
                                  topk_items, topk_ips, fill)
    pos[u] = end
    certified[u] = True
    lam[u] = -np.inf
    stats[ST_RESOLVED] += 1
    stats[ST_RESOLVE_SCANNED] += end - start
    stats[ST_RESOLVE_IP] += ips
    stats[ST_IP] += ips


@nb.njit(cache=True)
def inc_rmips_kernel(j, k, xs, x_len, udata, unorm, utail, uhead, pdata, pnorm, ptail, phead,
                     topk_items, topk_ips, fill, pos, lam, certified, score, finalized, stats):
    """Count users of xs[:x_len] holding item j in their top-k.

    Users resolved along the way leave xs (compacted in place) after crediting
    the not-yet-finalized items of their top-k. Returns (count, new_x_len).
    """
    count = 0
    keep = 0
    for idx in range(x_len):
        u = xs[idx]
        res = decide(u, j, k, udata, unorm, utail, uhead, pdata, pnorm, ptail, phead,
                     topk_items, topk_ips, pos, lam, stats)
        if res == MEMBER:
            count += 1
        elif res == UNRESOLVED:
            resolve(u, udata, unorm, utail, uhead, pdata, pnorm, ptail, phead, topk_items, topk_ips,
                    fill, pos, lam, certified, stats)
            for r in range(k):
                it = topk_items[u, r]
                if it == j:
                    count += 1
                elif not finalized[it]:
                    score[it] += 1
            continue
        xs[keep] = u
        keep += 1
    finalized[j] = True
    return count, keep


@nb.njit(cache=True)
def early_stop_scores(k, udata, unorm, pdata, pnorm):
    """Per-user exact top-k on the norm-sorted order with the Cauchy-Schwarz stop."""
    n = udata.shape[0]
    m = pdata.shape[0]
    d = udata.shape[1]
    score = np.zeros(m, dtype=np.int64)
    best_ip = np.empty(k)
    best_it = np.empty(k, dtype=np.int64)
    for u in range(n):
        f = 0
        for j in range(m):
            if f == k:
                cs = unorm[u] * pnorm[j]
                if cs + BOUND_SLACK * cs <= best_ip[k - 1]:
                    break
            ip = _dot(udata[u], pdata[j], d)
            if f < k:
                i = f
                f += 1
            elif ip > best_ip[k - 1]:
                i = k - 1
            else:
                continue
            while i > 0 and best_ip[i - 1] < ip:
                best_ip[i] = best_ip[i - 1]
                best_it[i] = best_it[i - 1]
                i -= 1
            best_ip[i] = ip
            best_it[i] = j
        for r in range(k):
            score[best_it[r]] += 1
    return score
