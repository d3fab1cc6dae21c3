"""Hot loops: tree growing, tree descent and randomized descent.

Trees are flat arrays indexed by node id.  ``var[i] < 0`` marks a terminal
node; internal nodes send ``x[var] <= cut`` to ``left`` and the rest to
``right``.  Everything here is numba-compatible and also runs unjitted.
"""

import numpy as np

from ._accel import njit

# relative band inside which two split gains count as tied
_TIE_RTOL = 1e-12


@njit
def grow_kernel(X, y, min_node, max_depth, mtry, keys):
    """Grow one CART regression tree.

    ``keys`` holds one row of uniforms per split evaluation; the ``mtry``
    smallest keys of a row pick that node's candidate variables.  It is only
    read when ``mtry < d``.  ``max_depth < 0`` means unlimited.
    """
    n, d = X.shape
    cap = 2 * n + 1
    var = np.full(cap, -1, np.int64)
    cut = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.full(cap, np.nan)
    count = np.zeros(cap, np.int64)
    start = np.zeros(cap, np.int64)
    stop = np.zeros(cap, np.int64)
    depth = np.zeros(cap, np.int64)
    gains = np.zeros(cap)

    idx = np.arange(n)
    buf = np.empty(n, np.int64)
    xs = np.empty(n)
    ys = np.empty(n)
    cand = np.empty(d, np.int64)
    stack = np.empty(cap, np.int64)

    stop[0] = n
    stack[0] = 0
    sp = 1
    nn = 1
    n_eval = 0
    while sp > 0:
        sp -= 1
        nid = stack[sp]
        s = start[nid]
        e = stop[nid]
        cnt = e - s
        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(s, e):
            yi = y[idx[i]]
            total += yi
            if yi < ymin:
                ymin = yi
            if yi > ymax:
                ymax = yi
        mean = total / cnt
        value[nid] = mean
        count[nid] = cnt
        if cnt < 2 * min_node or ymin == ymax:
            continue
        if max_depth >= 0 and depth[nid] >= max_depth:
            continue

        if mtry < d:
            order = np.argsort(keys[n_eval])
            n_eval += 1
            chosen = np.sort(order[:mtry])
            nc = mtry
            for i in range(nc):
                cand[i] = chosen[i]
        else:
            nc = d
            for i in range(d):
                cand[i] = i

        best_var, best_cut, best_gain = split_search(X, y, idx[s:e], cand[:nc], min_node, mean, xs, ys)
        if best_var < 0:
            continue

        nl = 0
        for i in range(s, e):
            row = idx[i]
            if X[row, best_var] <= best_cut:
                buf[nl] = row
                nl += 1
        k = nl
        for i in range(s, e):
            row = idx[i]
            if X[row, best_var] > best_cut:
                buf[k] = row
                k += 1
        for i in range(cnt):
            idx[s + i] = buf[i]

        var[nid] = best_var
        cut[nid] = best_cut
        gains[nid] = best_gain
        lc = nn
        rc = nn + 1
        nn += 2
        left[nid] = lc
        right[nid] = rc
        start[lc] = s
        stop[lc] = s + nl
        start[rc] = s + nl
        stop[rc] = e
        depth[lc] = depth[nid] + 1
        depth[rc] = depth[nid] + 1
        stack[sp] = rc
        stack[sp + 1] = lc
        sp += 2

    label = label_terminals(left[:nn], right[:nn], 0)
    return (var[:nn].copy(), cut[:nn].copy(), left[:nn].copy(), right[:nn].copy(),
            value[:nn].copy(), count[:nn].copy(), label, gains[:nn].copy())


@njit
def split_search(X, y, rows, cand, min_node, mean, xs, ys):
    """Best (var, cut, sse_reduction) over ``cand`` for the given rows.

    Cuts are observed values; a cut sends ``x <= cut`` left and must leave
    ``min_node`` rows on each side.  Ties go to the earlier candidate, then
    to the smaller cut.  Returns ``var = -1`` when no split reduces the SSE.
    ``xs`` and ``ys`` are scratch buffers of length >= len(rows).
    """
    cnt = rows.shape[0]
    node_sse = 0.0
    for i in range(cnt):
        r = y[rows[i]] - mean
        node_sse += r * r
    floor = _TIE_RTOL * node_sse
    best_gain = 0.0
    best_var = -1
    best_cut = 0.0
    for c in range(cand.shape[0]):
        j = cand[c]
        tot = 0.0
        for i in range(cnt):
            row = rows[i]
            xs[i] = X[row, j]
            ys[i] = y[row] - mean
            tot += ys[i]
        order = np.argsort(xs[:cnt], kind="mergesort")
        cl = 0.0
        for i in range(cnt - 1):
            cl += ys[order[i]]
            nl = i + 1
            nr = cnt - nl
            if nr < min_node:
                break
            if nl < min_node:
                continue
            xa = xs[order[i]]
            if xa == xs[order[i + 1]]:
                continue
            cr = tot - cl
            gain = cl * cl / nl + cr * cr / nr - tot * tot / cnt
            if gain > floor and (best_var < 0 or gain > best_gain * (1.0 + _TIE_RTOL)):
                best_gain = gain
                best_var = j
                best_cut = xa
    return best_var, best_cut, best_gain


@njit
def label_terminals(left, right, root):
    """Number terminal nodes 1..M in left-to-right order; internal nodes get -1."""
    nn = left.shape[0]
    label = np.full(nn, -1, np.int64)
    stack = np.empty(nn + 1, np.int64)
    stack[0] = root
    sp = 1
    m = 0
    while sp > 0:
        sp -= 1
        nid = stack[sp]
        if left[nid] < 0:
            m += 1
            label[nid] = m
        else:
            stack[sp] = right[nid]
            stack[sp + 1] = left[nid]
            sp += 2
    return label


@njit
def apply_kernel(var, cut, left, right, root, X):
    """Terminal node id reached by every row of ``X``."""
    N = X.shape[0]
    out = np.empty(N, np.int64)
    for r in range(N):
        node = root
        while left[node] >= 0:
            if X[r, var[node]] <= cut[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = node
    return out


@njit
def forest_apply_kernel(var, cut, left, right, roots, X):
    """Terminal node ids of a packed forest, shape (rows, trees)."""
    N = X.shape[0]
    B = roots.shape[0]
    out = np.empty((N, B), np.int64)
    for r in range(N):
        for b in range(B):
            node = roots[b]
            while left[node] >= 0:
                if X[r, var[node]] <= cut[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[r, b] = node
    return out


@njit
def forest_predict_kernel(var, cut, left, right, value, roots, X):
    """Ensemble mean prediction, trees summed in index order."""
    N = X.shape[0]
    B = roots.shape[0]
    out = np.empty(N)
    for r in range(N):
        acc = 0.0
        for b in range(B):
            node = roots[b]
            while left[node] >= 0:
                if X[r, var[node]] <= cut[node]:
                    node = left[node]
                else:
                    node = right[node]
            acc += value[node]
        out[r] = acc / B
    return out


@njit
def noised_walk_kernel(var, cut, left, right, root, X, noised, splits_only, bits):
    """Randomized descent for every (replicate, row).

    ``bits[r, i]`` is a vector of uint64 words; coin ``k`` along a path is
    bit ``k % 64`` of word ``k // 64`` (0 = left, 1 = right).  In full-random
    mode every node from the first noised split downwards flips a coin; in
    splits-only mode just the nodes splitting on a noised variable do.
    """
    R = bits.shape[0]
    N = X.shape[0]
    out = np.empty((R, N), np.int64)
    one = np.uint64(1)
    for rep in range(R):
        for r in range(N):
            node = root
            randomizing = False
            k = 0
            while left[node] >= 0:
                j = var[node]
                if noised[j]:
                    randomizing = True
                flip = noised[j] if splits_only else randomizing
                if flip:
                    word = bits[rep, r, k >> 6]
                    bit = (word >> np.uint64(k & 63)) & one
                    k += 1
                    if bit == one:
                        node = right[node]
                    else:
                        node = left[node]
                elif X[r, j] <= cut[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[rep, r] = node
    return out
