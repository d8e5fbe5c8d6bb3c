"""Compiled kernels for tree growth and traversal.

Everything in here works on flat arrays so it can be jitted with numba and
released from the GIL. The public wrappers live in :mod:`rfkernels.trees`
and :mod:`rfkernels.forest`.
"""
import numba as nb
import numpy as np

UNIFORM = 0
EXTRA_TREES = 1
SOFTMAX = 2
BREIMAN = 3

SUPPORT_CELL = 0
SUPPORT_SAMPLES = 1

LEAF = -1


@nb.njit(cache=True, nogil=True)
def split_score(X, t, idx, start, end, j, thr, n_total):
    """Score of splitting ``idx[start:end]`` at ``x_j < thr``.

    Returns ``(delta, n_left, n_right)`` with delta expressed under the
    empirical measure, ``0/0 = 0`` on empty children.
    """
    s0 = 0.0
    s1 = 0.0
    n0 = 0
    n1 = 0
    for q in range(start, end):
        i = idx[q]
        if X[i, j] < thr:
            s0 += t[i]
            n0 += 1
        else:
            s1 += t[i]
            n1 += 1
    d = 0.0
    if n0 > 0:
        d += s0 * s0 / n0
    if n1 > 0:
        d += s1 * s1 / n1
    return d / n_total, n0, n1


@nb.njit(cache=True, nogil=True)
def _partition(X, idx, start, end, j, thr):
    lo = start
    hi = end - 1
    while lo <= hi:
        if X[idx[lo], j] < thr:
            lo += 1
        else:
            tmp = idx[lo]
            idx[lo] = idx[hi]
            idx[hi] = tmp
            hi -= 1
    return lo


@nb.njit(cache=True, nogil=True)
def _softmax_pick(scores, valid, beta):
    mx = -np.inf
    for k in range(scores.shape[0]):
        if valid[k] and scores[k] > mx:
            mx = scores[k]
    total = 0.0
    w = np.zeros(scores.shape[0])
    for k in range(scores.shape[0]):
        if valid[k]:
            w[k] = np.exp(beta * (scores[k] - mx))
            total += w[k]
    r = np.random.random() * total
    acc = 0.0
    last = -1
    for k in range(scores.shape[0]):
        if valid[k]:
            last = k
            acc += w[k]
            if r < acc:
                return k
    return last


@nb.njit(cache=True, nogil=True)
def _best_exhaustive(X, t, idx, start, end, j, n_total, min_leaf):
    """Exhaustive midpoint search along axis ``j``; returns (delta, thr)."""
    cnt = end - start
    vals = np.empty(cnt)
    tv = np.empty(cnt)
    for q in range(cnt):
        vals[q] = X[idx[start + q], j]
        tv[q] = t[idx[start + q]]
    order = np.argsort(vals, kind="mergesort")
    total = 0.0
    for q in range(cnt):
        total += tv[q]
    best = -np.inf
    best_thr = np.nan
    s0 = 0.0
    for q in range(cnt - 1):
        s0 += tv[order[q]]
        v0 = vals[order[q]]
        v1 = vals[order[q + 1]]
        if v1 <= v0:
            continue
        n0 = q + 1
        n1 = cnt - n0
        if n0 < min_leaf or n1 < min_leaf:
            continue
        s1 = total - s0
        d = (s0 * s0 / n0 + s1 * s1 / n1) / n_total
        if d > best:
            best = d
            thr = 0.5 * (v0 + v1)
            if thr <= v0:
                thr = v1
            best_thr = thr
    return best, best_thr


@nb.njit(cache=True, nogil=True)
def grow_tree(X, t, strategy, max_depth, n_candidates, beta, max_features,
              min_leaf, min_gain, bootstrap, filter_candidates,
              support, stop_on_pure, capacity, seed):
    """Grow one tree by depth-first recursive splitting.

    ``max_depth < 0`` means unlimited. Node ``v`` covers ``[lower[v], upper[v])``
    (closed at 1); child 0 takes ``x_j < threshold`` and child 1 the rest.
    """
    np.random.seed(seed)
    n, p = X.shape
    if bootstrap:
        idx = np.random.randint(0, n, n)
    else:
        idx = np.arange(n)
    n_total = float(n)

    feature = np.full(capacity, LEAF, dtype=np.int64)
    threshold = np.zeros(capacity)
    frac = np.zeros(capacity)
    left = np.full(capacity, LEAF, dtype=np.int64)
    right = np.full(capacity, LEAF, dtype=np.int64)
    gain = np.zeros(capacity)
    depth = np.zeros(capacity, dtype=np.int64)
    lower = np.zeros((capacity, p))
    upper = np.ones((capacity, p))
    start = np.zeros(capacity, dtype=np.int64)
    end = np.zeros(capacity, dtype=np.int64)
    end[0] = n

    filtering = strategy == EXTRA_TREES or strategy == BREIMAN or (
        strategy == SOFTMAX and filter_candidates)
    cand_j = np.zeros(max(n_candidates, 1), dtype=np.int64)
    cand_u = np.zeros(max(n_candidates, 1))
    cand_thr = np.zeros(max(n_candidates, 1))
    cand_d = np.zeros(max(n_candidates, 1))
    cand_ok = np.zeros(max(n_candidates, 1), dtype=np.bool_)

    stack = np.zeros(capacity, dtype=np.int64)
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        v = stack[top]
        s = start[v]
        e = end[v]
        cnt = e - s
        if max_depth >= 0 and depth[v] >= max_depth:
            continue
        if n_nodes + 2 > capacity:
            continue

        tot = 0.0
        tmin = np.inf
        tmax = -np.inf
        for q in range(s, e):
            val = t[idx[q]]
            tot += val
            if val < tmin:
                tmin = val
            if val > tmax:
                tmax = val
        base = tot * tot / cnt / n_total if cnt > 0 else 0.0

        j_best = -1
        thr_best = 0.0
        u_best = 0.0
        d_best = -np.inf

        if strategy == UNIFORM:
            while True:
                j = np.random.randint(0, p)
                u = np.random.random()
                a = lower[v, j]
                b = upper[v, j]
                thr = a + u * (b - a)
                if u > 0.0 and a < thr < b:
                    break
            d, n0, n1 = split_score(X, t, idx, s, e, j, thr, n_total)
            j_best = j
            thr_best = thr
            u_best = u
            d_best = d
        else:
            if filtering and cnt < 2 * min_leaf:
                continue
            if stop_on_pure and strategy != SOFTMAX and cnt > 0 and tmax <= tmin:
                continue

            if strategy == EXTRA_TREES:
                perm = np.random.permutation(p)
                visited = 0
                for jj in range(p):
                    if visited >= max_features:
                        break
                    j = perm[jj]
                    a = lower[v, j]
                    b = upper[v, j]
                    if support == SUPPORT_SAMPLES:
                        lo = np.inf
                        hi = -np.inf
                        for q in range(s, e):
                            xv = X[idx[q], j]
                            if xv < lo:
                                lo = xv
                            if xv > hi:
                                hi = xv
                        if hi <= lo:
                            continue
                        visited += 1
                        u_raw = np.random.random()
                        thr = lo + u_raw * (hi - lo)
                    else:
                        visited += 1
                        u_raw = np.random.random()
                        thr = a + u_raw * (b - a)
                    if not (a < thr < b):
                        continue
                    d, n0, n1 = split_score(X, t, idx, s, e, j, thr, n_total)
                    if n0 < min_leaf or n1 < min_leaf:
                        continue
                    if d > d_best:
                        d_best = d
                        j_best = j
                        thr_best = thr
                        u_best = (thr - a) / (b - a)
            elif strategy == SOFTMAX:
                any_ok = False
                for k in range(n_candidates):
                    j = np.random.randint(0, p)
                    u = np.random.random()
                    a = lower[v, j]
                    b = upper[v, j]
                    thr = a + u * (b - a)
                    cand_j[k] = j
                    cand_u[k] = u
                    cand_thr[k] = thr
                    ok = a < thr < b
                    d = 0.0
                    if ok:
                        d, n0, n1 = split_score(X, t, idx, s, e, j, thr, n_total)
                        if filter_candidates and (n0 < min_leaf or n1 < min_leaf):
                            ok = False
                    cand_d[k] = d
                    cand_ok[k] = ok
                    any_ok = any_ok or ok
                if not any_ok:
                    continue
                k = _softmax_pick(cand_d[:n_candidates], cand_ok[:n_candidates], beta)
                j_best = cand_j[k]
                thr_best = cand_thr[k]
                u_best = cand_u[k]
                d_best = cand_d[k]
            else:
                perm = np.random.permutation(p)
                for jj in range(min(max_features, p)):
                    j = perm[jj]
                    d, thr = _best_exhaustive(X, t, idx, s, e, j, n_total, min_leaf)
                    if d > d_best:
                        a = lower[v, j]
                        b = upper[v, j]
                        d_best = d
                        j_best = j
                        thr_best = thr
                        u_best = (thr - a) / (b - a)

            if j_best < 0:
                continue
            if min_gain > 0.0 and d_best - base < min_gain:
                continue

        mid = _partition(X, idx, s, e, j_best, thr_best)
        c0 = n_nodes
        c1 = n_nodes + 1
        n_nodes += 2
        feature[v] = j_best
        threshold[v] = thr_best
        frac[v] = u_best
        gain[v] = max(d_best - base, 0.0)
        left[v] = c0
        right[v] = c1
        for c in (c0, c1):
            depth[c] = depth[v] + 1
            for jj in range(p):
                lower[c, jj] = lower[v, jj]
                upper[c, jj] = upper[v, jj]
        upper[c0, j_best] = thr_best
        lower[c1, j_best] = thr_best
        start[c0] = s
        end[c0] = mid
        start[c1] = mid
        end[c1] = e
        stack[top] = c1
        stack[top + 1] = c0
        top += 2

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            frac[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), gain[:n_nodes].copy(),
            depth[:n_nodes].copy(), lower[:n_nodes].copy(),
            upper[:n_nodes].copy())


@nb.njit(cache=True, nogil=True)
def apply_packed(Z, feature, threshold, left, right, node_offset, leaf_id):
    """Global leaf id of every row of ``Z`` in every packed tree, shape (s, M)."""
    s = Z.shape[0]
    M = node_offset.shape[0] - 1
    out = np.empty((s, M), dtype=np.int64)
    for m in range(M):
        base = node_offset[m]
        for i in range(s):
            v = base
            while feature[v] >= 0:
                if Z[i, feature[v]] < threshold[v]:
                    v = base + left[v]
                else:
                    v = base + right[v]
            out[i, m] = leaf_id[v]
    return out


@nb.njit(cache=True, nogil=True)
def apply_truncated(Z, feature, threshold, left, right, node_offset, depth,
                    max_depth):
    """Global node id reached by each row when descent stops at ``max_depth``."""
    s = Z.shape[0]
    M = node_offset.shape[0] - 1
    out = np.empty((s, M), dtype=np.int64)
    for m in range(M):
        base = node_offset[m]
        for i in range(s):
            v = base
            while feature[v] >= 0 and depth[v] < max_depth:
                if Z[i, feature[v]] < threshold[v]:
                    v = base + left[v]
                else:
                    v = base + right[v]
            out[i, m] = v
    return out


@nb.njit(cache=True, nogil=True)
def path_masks(Z, feature, threshold, left, right, node_offset, leaf_id):
    """Leaf ids plus a bitmask of the axes tested on each root-to-leaf path.

    Only valid for ``p <= 64``.
    """
    s = Z.shape[0]
    M = node_offset.shape[0] - 1
    ids = np.empty((s, M), dtype=np.int64)
    masks = np.zeros((s, M), dtype=np.uint64)
    one = np.uint64(1)
    for m in range(M):
        base = node_offset[m]
        for i in range(s):
            v = base
            bits = np.uint64(0)
            while feature[v] >= 0:
                bits |= one << np.uint64(feature[v])
                if Z[i, feature[v]] < threshold[v]:
                    v = base + left[v]
                else:
                    v = base + right[v]
            ids[i, m] = leaf_id[v]
            masks[i, m] = bits
    return ids, masks


@nb.njit(cache=True, nogil=True)
def predict_replaced(Z, j, column, base_ids, masks, feature, threshold, left, right,
                     node_offset, leaf_id, leaf_value):
    """Forest predictions with column ``j`` of ``Z`` replaced by ``column``.

    Paths that never test axis ``j`` keep their cached leaf; the others are
    traversed again. ``base_ids`` and ``masks`` are tree-major, shape (M, s).
    """
    s = Z.shape[0]
    M = node_offset.shape[0] - 1
    out = np.zeros(s)
    bit = np.uint64(1) << np.uint64(j)
    for m in range(M):
        base = node_offset[m]
        for i in range(s):
            if masks[m, i] & bit:
                v = base
                while feature[v] >= 0:
                    f = feature[v]
                    x = column[i] if f == j else Z[i, f]
                    if x < threshold[v]:
                        v = base + left[v]
                    else:
                        v = base + right[v]
                out[i] += leaf_value[leaf_id[v]]
            else:
                out[i] += leaf_value[base_ids[m, i]]
    return out / M


@nb.njit(cache=True, nogil=True)
def leaf_smooth(ids_t, leaf_offset, counts, V):
    """``(1/M) sum_m`` of the leaf-mean of ``V`` over the leaf of each row.

    ``ids_t`` holds global leaf ids with shape ``(M, n)``; leaves of tree
    ``m`` occupy ``leaf_offset[m]:leaf_offset[m + 1]``. Empty leaves are
    never looked up from a training row, so they need no guard here.
    """
    M, n = ids_t.shape
    q = V.shape[1]
    out = np.zeros((n, q))
    width = 0
    for m in range(M):
        width = max(width, leaf_offset[m + 1] - leaf_offset[m])
    sums = np.zeros((width, q))
    for m in range(M):
        off = leaf_offset[m]
        nl = leaf_offset[m + 1] - off
        sums[:nl] = 0.0
        for i in range(n):
            leaf = ids_t[m, i] - off
            for k in range(q):
                sums[leaf, k] += V[i, k]
        for leaf in range(nl):
            c = counts[off + leaf]
            if c > 0:
                for k in range(q):
                    sums[leaf, k] /= c
        for i in range(n):
            leaf = ids_t[m, i] - off
            for k in range(q):
                out[i, k] += sums[leaf, k]
    return out / M
