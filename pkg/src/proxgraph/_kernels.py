"""JIT-compiled inner loops.

Everything here operates on plain arrays so numba can compile it; the public
modules wrap these with validation, counters, and friendlier types. Distance
arithmetic is float64 accumulation over float32 data, sequential order, no
fastmath: results are bit-reproducible across runs.

Eval-count conventions: every function returns how many full distance
evaluations it performed so callers can feed DistanceCounter / SearchStats.
"""

from __future__ import annotations

import numpy as np
from numba import njit

ND_NONE = 0
ND_RELATIVE = 1  # keep iff d(center, cand) < d(kept, cand)
ND_RELAXED = 2  # keep iff d(center, cand) < alpha * d(kept, cand)
ND_ANGLE = 3  # keep iff angle at center > threshold (compared via cosine)


@njit(cache=True, inline="always")
def vec_dist(a, b):
    s = 0.0
    for j in range(a.shape[0]):
        t = a[j] - b[j]
        s += t * t
    return np.sqrt(s)


@njit(cache=True, inline="always")
def row_query_dist(data, i, q):
    s = 0.0
    for j in range(q.shape[0]):
        t = np.float64(data[i, j]) - q[j]
        s += t * t
    return np.sqrt(s)


@njit(cache=True, inline="always")
def row_row_dist(data, i, j):
    s = 0.0
    for c in range(data.shape[1]):
        t = np.float64(data[i, c]) - np.float64(data[j, c])
        s += t * t
    return np.sqrt(s)


@njit(cache=True, inline="always")
def mat_row_dist(vecs, i, j):
    s = 0.0
    for c in range(vecs.shape[1]):
        t = vecs[i, c] - vecs[j, c]
        s += t * t
    return np.sqrt(s)


@njit(cache=True, inline="always")
def _buffer_insert(ids, dists, expanded, size, cap, nid, nd):
    """Insert (nd, nid) into the sorted linear buffer; evict the tail if full.

    Order is lexicographic on (distance, id) so argmin ties resolve to the
    smaller id. Returns the new occupancy.
    """
    lo = 0
    hi = size
    while lo < hi:
        mid = (lo + hi) >> 1
        if dists[mid] < nd or (dists[mid] == nd and ids[mid] < nid):
            lo = mid + 1
        else:
            hi = mid
    pos = lo
    if size == cap:
        if pos == cap:
            return size
        last = cap - 1
    else:
        last = size
    i = last
    while i > pos:
        ids[i] = ids[i - 1]
        dists[i] = dists[i - 1]
        expanded[i] = expanded[i - 1]
        i -= 1
    ids[pos] = nid
    dists[pos] = nd
    expanded[pos] = False
    if size < cap:
        return size + 1
    return size


@njit(cache=True)
def beam_search(adj, lengths, data, seed_ids, q, width, marks, tag):
    """Best-first traversal keeping the `width` closest evaluated nodes.

    The candidate set is one sorted linear buffer; a node's distance is
    computed at most once (marks[node] == tag means already evaluated), and
    nodes evicted from the buffer are never re-admitted. The loop ends when
    every buffer entry has been expanded.

    Returns (ids, dists, size, hops, evals, seeds_used); ids/dists are the
    full buffer in ascending order.
    """
    cand_ids = np.empty(width, np.int64)
    cand_dists = np.empty(width, np.float64)
    expanded = np.zeros(width, np.bool_)
    size = 0
    evals = 0
    for s in range(seed_ids.shape[0]):
        sid = seed_ids[s]
        if marks[sid] == tag:
            continue
        marks[sid] = tag
        d = row_query_dist(data, sid, q)
        evals += 1
        size = _buffer_insert(cand_ids, cand_dists, expanded, size, width, sid, d)
    seeds_used = evals
    hops = 0
    while True:
        best = -1
        for i in range(size):
            if not expanded[i]:
                best = i
                break
        if best < 0:
            break
        node = cand_ids[best]
        expanded[best] = True
        hops += 1
        for e in range(lengths[node]):
            nb = np.int64(adj[node, e])
            if marks[nb] == tag:
                continue
            marks[nb] = tag
            d = row_query_dist(data, nb, q)
            evals += 1
            size = _buffer_insert(cand_ids, cand_dists, expanded, size, width, nb, d)
    return cand_ids[:size], cand_dists[:size], size, hops, evals, seeds_used


@njit(cache=True, inline="always")
def nd_keeps(kind, alpha, cos_threshold, d_kept, d_cand, d_pair):
    """Diversification predicate for one (kept, candidate) comparison.

    d_kept / d_cand are distances to the center, d_pair is the kept-candidate
    distance. Ties reject. The angle rule compares cosines via the law of
    cosines; a degenerate zero-length leg counts as angle zero (reject).
    """
    if kind == ND_NONE:
        return True
    if kind == ND_RELATIVE:
        return d_cand < d_pair
    if kind == ND_RELAXED:
        return d_cand < alpha * d_pair
    if d_kept <= 0.0 or d_cand <= 0.0:
        return False
    cos_angle = (d_kept * d_kept + d_cand * d_cand - d_pair * d_pair) / (2.0 * d_kept * d_cand)
    return cos_angle < cos_threshold


@njit(cache=True)
def prune_vectors(vecs, dists, max_keep, kind, alpha, cos_threshold):
    """Greedy diversification over candidates sorted ascending by distance.

    vecs holds absolute candidate positions, dists their distances to the
    center. Returns (kept candidate indices, pair evals, candidates considered).
    """
    m = dists.shape[0]
    kept = np.empty(min(max_keep, m), np.int64)
    nkept = 0
    evals = 0
    considered = 0
    for j in range(m):
        if nkept == max_keep:
            break
        considered += 1
        keep = True
        if kind != ND_NONE:
            for t in range(nkept):
                i = kept[t]
                d_pair = mat_row_dist(vecs, i, j)
                evals += 1
                if not nd_keeps(kind, alpha, cos_threshold, dists[i], dists[j], d_pair):
                    keep = False
                    break
        if keep:
            kept[nkept] = j
            nkept += 1
    return kept[:nkept], evals, considered


@njit(cache=True)
def _prune_rows(data, ids, dists, max_keep, kind, alpha, cos_threshold, out, out_dists):
    """Same greedy rule as prune_vectors but over dataset rows; fills `out`."""
    m = dists.shape[0]
    nkept = 0
    evals = 0
    considered = 0
    for j in range(m):
        if nkept == max_keep:
            break
        considered += 1
        keep = True
        if kind != ND_NONE:
            for t in range(nkept):
                d_pair = row_row_dist(data, out[t], ids[j])
                evals += 1
                if not nd_keeps(kind, alpha, cos_threshold, out_dists[t], dists[j], d_pair):
                    keep = False
                    break
        if keep:
            out[nkept] = ids[j]
            out_dists[nkept] = dists[j]
            nkept += 1
    return nkept, evals, considered


@njit(cache=True)
def connect_reverse(adj, lengths, data, v, kept, kind, alpha, cos_threshold):
    """Add arc u -> v for every u in kept; re-prune u's list when it overflows.

    The overflow re-prune recomputes u's neighbor distances (counted), sorts
    candidates ascending by (distance, id), and applies the same greedy rule.
    Returns (evals, prune_calls, considered_total, kept_total, ratio_sum).
    """
    cap = adj.shape[1]
    evals = 0
    prune_calls = 0
    considered_total = 0
    kept_total = 0
    ratio_sum = 0.0
    tmp_ids = np.empty(cap + 1, np.int64)
    tmp_dists = np.empty(cap + 1, np.float64)
    keep_buf = np.empty(cap + 1, np.int64)
    keep_dists = np.empty(cap + 1, np.float64)
    for t in range(kept.shape[0]):
        u = kept[t]
        present = False
        for e in range(lengths[u]):
            if adj[u, e] == v:
                present = True
                break
        if present:
            continue
        if lengths[u] < cap:
            adj[u, lengths[u]] = v
            lengths[u] += 1
            continue
        m = cap + 1
        for e in range(cap):
            tmp_ids[e] = adj[u, e]
        tmp_ids[cap] = v
        ids_sorted = np.sort(tmp_ids[:m])
        for e in range(m):
            tmp_dists[e] = row_row_dist(data, u, ids_sorted[e])
        evals += m
        order = np.argsort(tmp_dists[:m], kind="mergesort")
        sorted_ids = ids_sorted[order]
        sorted_dists = tmp_dists[:m][order]
        nkept, p_evals, considered = _prune_rows(
            data, sorted_ids, sorted_dists, cap, kind, alpha, cos_threshold,
            keep_buf, keep_dists)
        evals += p_evals
        prune_calls += 1
        considered_total += considered
        kept_total += nkept
        ratio_sum += (considered - nkept) / considered
        for e in range(nkept):
            adj[u, e] = keep_buf[e]
        lengths[u] = nkept
    return evals, prune_calls, considered_total, kept_total, ratio_sum


@njit(cache=True)
def reachable_count(adj, lengths, entry):
    """Number of nodes reachable from entry along directed edges (entry included)."""
    n = lengths.shape[0]
    seen = np.zeros(n, np.uint8)
    stack = np.empty(n, np.int64)
    top = 0
    stack[top] = entry
    top += 1
    seen[entry] = 1
    count = 1
    while top > 0:
        top -= 1
        u = stack[top]
        for e in range(lengths[u]):
            nb = adj[u, e]
            if seen[nb] == 0:
                seen[nb] = 1
                stack[top] = nb
                top += 1
                count += 1
    return count


@njit(cache=True, inline="always")
def _knn_propose(nbr_ids, nbr_dists, host, cand, d):
    """Offer cand to host's neighbor list; keep the k closest. Returns 1 on change."""
    k = nbr_ids.shape[1]
    if d >= nbr_dists[host, k - 1]:
        return 0
    for t in range(k):
        if nbr_ids[host, t] == cand:
            return 0
    pos = k - 1
    while pos > 0 and nbr_dists[host, pos - 1] > d:
        nbr_ids[host, pos] = nbr_ids[host, pos - 1]
        nbr_dists[host, pos] = nbr_dists[host, pos - 1]
        pos -= 1
    nbr_ids[host, pos] = cand
    nbr_dists[host, pos] = d
    return 1


@njit(cache=True)
def nndescent_sweep(data, nbr_ids, nbr_dists):
    """One neighborhood-propagation pass over each node's local join set.

    The join set of u is its out-neighbors plus the nodes pointing at u;
    every pair in it proposes both ways. Forward-only joins stall: a node
    nobody points at would never receive a proposal, so refinement plateaus
    far from the true graph. Lists stay sorted ascending; a proposal lands
    only if strictly closer than the current worst and not already present.
    Returns (changes, evals).
    """
    n, k = nbr_ids.shape
    rev_count = np.zeros(n, np.int64)
    for u in range(n):
        for a in range(k):
            rev_count[nbr_ids[u, a]] += 1
    rev_start = np.zeros(n + 1, np.int64)
    for u in range(n):
        rev_start[u + 1] = rev_start[u] + rev_count[u]
    rev = np.empty(rev_start[n], np.int64)
    fill = rev_start[:n].copy()
    for u in range(n):
        for a in range(k):
            t = nbr_ids[u, a]
            rev[fill[t]] = u
            fill[t] += 1

    local = np.empty(k + int(rev_count.max()), np.int64)
    changes = 0
    evals = 0
    for u in range(n):
        m = 0
        for a in range(k):
            local[m] = nbr_ids[u, a]
            m += 1
        for t in range(rev_start[u], rev_start[u + 1]):
            local[m] = rev[t]
            m += 1
        sub = np.sort(local[:m])
        w = 0
        for t in range(m):
            if t == 0 or sub[t] != sub[t - 1]:
                sub[w] = sub[t]
                w += 1
        for a in range(w):
            x = sub[a]
            for b in range(a + 1, w):
                y = sub[b]
                d = row_row_dist(data, x, y)
                evals += 1
                changes += _knn_propose(nbr_ids, nbr_dists, x, y, d)
                changes += _knn_propose(nbr_ids, nbr_dists, y, x, d)
    return changes, evals


@njit(cache=True)
def rows_query_dists(data, ids, q):
    """Distances from q to the given dataset rows; len(ids) evaluations."""
    out = np.empty(ids.shape[0], np.float64)
    for t in range(ids.shape[0]):
        out[t] = row_query_dist(data, ids[t], q)
    return out
