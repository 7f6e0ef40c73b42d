"""Compiled kernels for histogram tree induction, prediction and pruning.

Rows carry three statistics: ``s1`` (weighted target sum, or gradient),
``s2`` (weight, or hessian) and ``cnt`` (sample count used by the
min-samples rules). Features are pre-binned so that ``bin <= b`` is the
same event as ``x <= threshold[b]``. Histograms are stored flat: feature
``f`` owns rows ``offset[f] : offset[f] + n_bins[f]``. Histogram passes read
a CSR list of the (feature, bin) entries with bin > 0, which is short for
one-hot encoded rows.

Split score per child is ``s1^2 / (s2 + lam)``. Mode 0 (CART, lam = 0) uses
the plain decrease in weighted sum of squares; mode 1 (Newton) halves it
and subtracts ``gamma``.
"""

import numpy as np
from numba import njit

LEAF = -1
MAX_LEVELS = 512


@njit(cache=True)
def _sample_features(cands, n_cands, k, out):
    """Write a sorted uniform random k-subset of cands[:n_cands] into out[:k]."""
    tmp = cands[:n_cands].copy()
    for i in range(k):
        j = i + np.random.randint(0, n_cands - i)
        t = tmp[i]
        tmp[i] = tmp[j]
        tmp[j] = t
    res = np.sort(tmp[:k])
    for i in range(k):
        out[i] = res[i]
    return k


@njit(cache=True)
def _totals(s1, s2, cnt, rows, start, end, mode):
    S = 0.0
    W = 0.0
    C = 0.0
    Q = 0.0
    tmin = np.inf
    tmax = -np.inf
    for i in range(start, end):
        r = rows[i]
        S += s1[r]
        W += s2[r]
        C += cnt[r]
        if mode == 0 and s2[r] > 0.0:
            t = s1[r] / s2[r]
            Q += s1[r] * t
            tmin = min(tmin, t)
            tmax = max(tmax, t)
    pure = mode == 0 and tmax <= tmin
    return S, W, C, Q, pure


@njit(cache=True)
def _fill_hist(sp_ptr, sp_feat, sp_bin, offset, n_bins, s1, s2, cnt, rows, start, end,
               feats, nf, feat_on, h, S, W, C):
    """Histogram from the sparse (bin > 0) entries; bin 0 is the node total minus the rest."""
    for t in range(nf):
        f = feats[t]
        feat_on[f] = True
        for b in range(offset[f], offset[f] + n_bins[f]):
            h[b, 0] = 0.0
            h[b, 1] = 0.0
            h[b, 2] = 0.0
    for i in range(start, end):
        r = rows[i]
        a = s1[r]
        w = s2[r]
        c = cnt[r]
        for j in range(sp_ptr[r], sp_ptr[r + 1]):
            f = sp_feat[j]
            if feat_on[f]:
                b = offset[f] + sp_bin[j]
                h[b, 0] += a
                h[b, 1] += w
                h[b, 2] += c
    for t in range(nf):
        f = feats[t]
        feat_on[f] = False
        o = offset[f]
        a = S
        w = W
        c = C
        for b in range(o + 1, o + n_bins[f]):
            a -= h[b, 0]
            w -= h[b, 1]
            c -= h[b, 2]
        h[o, 0] = a
        h[o, 1] = w
        h[o, 2] = c


@njit(cache=True)
def _subtract_hist(parent, child, offset, n_bins, feats, nf):
    """parent -= child over the bins of feats (parent becomes the sibling)."""
    for t in range(nf):
        f = feats[t]
        for b in range(offset[f], offset[f] + n_bins[f]):
            parent[b, 0] -= child[b, 0]
            parent[b, 1] -= child[b, 1]
            parent[b, 2] -= child[b, 2]


@njit(cache=True)
def _scan(h, offset, n_bins, feats, nf, mode, lam, gamma, min_samples_leaf,
          min_child_weight, S, W, C, Q):
    """Best (feature, bin, gain); ties keep the lowest feature then lowest bin."""
    parent = S * S / (W + lam) if W + lam > 0 else 0.0
    if mode == 0:
        tol = 1e-12 * Q
    else:
        tol = 1e-12 * (abs(parent) + 1e-300)
    best_gain = 0.0
    best_f = -1
    best_b = -1
    for t in range(nf):
        f = feats[t]
        o = offset[f]
        sl = 0.0
        wl = 0.0
        cl = 0.0
        for b in range(n_bins[f] - 1):
            sl += h[o + b, 0]
            wl += h[o + b, 1]
            cl += h[o + b, 2]
            cr = C - cl
            if cl < min_samples_leaf:
                continue
            if cr < min_samples_leaf:
                break
            wr = W - wl
            if mode == 0:
                if wl <= 0.0 or wr <= 0.0:
                    continue
            elif wl < min_child_weight or wr < min_child_weight:
                continue
            sr = S - sl
            gain = sl * sl / (wl + lam) + sr * sr / (wr + lam) - parent
            if mode == 1:
                gain = 0.5 * gain - gamma
            if gain > best_gain and gain > tol:
                best_gain = gain
                best_f = f
                best_b = b
    return best_f, best_b, best_gain


@njit(cache=True)
def _node_feats(depth, tree_feats, colsample_level, max_features, level_feats, level_n,
                feats, scratch):
    """Candidate features for a node at the given depth; returns their count."""
    n_tree = tree_feats.shape[0]
    if colsample_level < 1.0:
        lvl = min(depth, MAX_LEVELS - 1)
        if level_n[lvl] < 0:
            k = max(1, int(colsample_level * n_tree))
            level_n[lvl] = _sample_features(tree_feats, n_tree, k, scratch)
            for i in range(k):
                level_feats[lvl, i] = scratch[i]
        nf = level_n[lvl]
        for i in range(nf):
            feats[i] = level_feats[lvl, i]
    else:
        nf = n_tree
        for i in range(nf):
            feats[i] = tree_feats[i]
    if 0 < max_features < nf:
        for i in range(nf):
            scratch[i] = feats[i]
        nf = _sample_features(scratch, nf, max_features, feats)
    return nf


@njit(cache=True)
def build_tree(Xb, sp_ptr, sp_feat, sp_bin, offset, n_bins, s1, s2, cnt, rows_in, tree_feats, mode, lam, gamma,
               max_depth, min_samples_split, min_samples_leaf, min_child_weight,
               max_features, colsample_level, max_leaves, best_first, n_slots, seed):
    """Grow one tree; returns node arrays and the leaf index of every row (-1 if unused).

    With ``max_features == 0`` each node's histogram over ``tree_feats`` is
    cached (up to ``n_slots`` at a time) and a split builds only the smaller
    child's histogram; the larger one is the parent minus the smaller.
    """
    np.random.seed(seed)
    n, d = Xb.shape
    rows = rows_in.copy()
    n_rows = rows.shape[0]
    cap = 2 * n_rows + 1
    feature = np.full(cap, LEAF, dtype=np.int64)
    bin_thr = np.full(cap, -1, dtype=np.int64)
    left = np.full(cap, LEAF, dtype=np.int64)
    right = np.full(cap, LEAF, dtype=np.int64)
    value = np.zeros(cap)
    node_sum = np.zeros(cap)
    weight = np.zeros(cap)
    count = np.zeros(cap)
    sumsq = np.zeros(cap)
    depth = np.zeros(cap, dtype=np.int64)
    node_start = np.zeros(cap, dtype=np.int64)
    node_end = np.zeros(cap, dtype=np.int64)
    cand_f = np.full(cap, -1, dtype=np.int64)
    cand_b = np.full(cap, -1, dtype=np.int64)
    cand_gain = np.zeros(cap)
    slot_of = np.full(cap, -1, dtype=np.int64)

    total_bins = offset[d - 1] + n_bins[d - 1] if d > 0 else 0
    n_tree = tree_feats.shape[0]
    use_cache = max_features == 0 and n_slots > 0
    pool = np.empty((n_slots if use_cache else 0, total_bins, 3))
    free = np.arange(pool.shape[0] - 1, -1, -1)
    n_free = pool.shape[0]
    build_hist = np.zeros((total_bins, 3))
    small_hist = np.zeros((total_bins, 3))
    scratch_node = -1
    feat_on = np.zeros(d, dtype=np.bool_)
    level_feats = np.zeros((MAX_LEVELS, max(n_tree, 1)), dtype=np.int64)
    level_n = np.full(MAX_LEVELS, -1, dtype=np.int64)
    feats = np.zeros(max(n_tree, 1), dtype=np.int64)
    scratch = np.zeros(max(n_tree, 1), dtype=np.int64)
    buf = np.zeros(n_rows, dtype=np.int64)
    pending = np.zeros(cap, dtype=np.int64)
    n_pending = 0
    head = 0

    n_nodes = 1
    n_leaves = 1
    node_end[0] = n_rows
    # evaluation queue: nodes whose totals/candidates are not computed yet
    todo = np.zeros(2, dtype=np.int64)
    todo[0] = 0
    n_todo = 1
    parent_slot = -1
    while True:
        # totals for the nodes just created
        ok = np.zeros(2, dtype=np.bool_)
        for j in range(n_todo):
            k = todo[j]
            S, W, C, Q, pure = _totals(s1, s2, cnt, rows, node_start[k], node_end[k], mode)
            node_sum[k] = S
            weight[k] = W
            count[k] = C
            sumsq[k] = Q
            if mode == 0:
                value[k] = S / W if W > 0 else 0.0
            else:
                value[k] = -S / (W + lam) if W + lam > 0 else 0.0
            ok[j] = (depth[k] < max_depth and C >= min_samples_split
                     and C >= 2 * min_samples_leaf and n_tree > 0 and not pure)

        # histograms: smaller sibling built, larger one derived from the parent
        if use_cache and n_todo == 2 and parent_slot >= 0 and (ok[0] or ok[1]):
            a = todo[0]
            b2 = todo[1]
            if node_end[a] - node_start[a] <= node_end[b2] - node_start[b2]:
                small, large, ok_small, ok_large = a, b2, ok[0], ok[1]
            else:
                small, large, ok_small, ok_large = b2, a, ok[1], ok[0]
            if n_free > 0:
                n_free -= 1
                s_slot = free[n_free]
                hs = pool[s_slot]
            else:
                s_slot = -1
                hs = small_hist
            _fill_hist(sp_ptr, sp_feat, sp_bin, offset, n_bins, s1, s2, cnt, rows,
                       node_start[small], node_end[small], tree_feats, n_tree, feat_on, hs,
                       node_sum[small], weight[small], count[small])
            if ok_large:
                _subtract_hist(pool[parent_slot], hs, offset, n_bins, tree_feats, n_tree)
                slot_of[large] = parent_slot
            else:
                free[n_free] = parent_slot
                n_free += 1
            if ok_small:
                if s_slot >= 0:
                    slot_of[small] = s_slot
                else:
                    scratch_node = small
            elif s_slot >= 0:
                free[n_free] = s_slot
                n_free += 1
            parent_slot = -1
        elif parent_slot >= 0:
            free[n_free] = parent_slot
            n_free += 1
            parent_slot = -1

        for j in range(n_todo):
            if not ok[j]:
                continue
            k = todo[j]
            nf = _node_feats(depth[k], tree_feats, colsample_level, max_features,
                             level_feats, level_n, feats, scratch)
            if slot_of[k] >= 0:
                h = pool[slot_of[k]]
            elif k == scratch_node:
                h = small_hist
            else:
                if use_cache and n_free > 0:
                    n_free -= 1
                    slot_of[k] = free[n_free]
                    h = pool[slot_of[k]]
                    _fill_hist(sp_ptr, sp_feat, sp_bin, offset, n_bins, s1, s2, cnt, rows,
                               node_start[k], node_end[k], tree_feats, n_tree, feat_on, h,
                               node_sum[k], weight[k], count[k])
                else:
                    h = build_hist
                    _fill_hist(sp_ptr, sp_feat, sp_bin, offset, n_bins, s1, s2, cnt, rows,
                               node_start[k], node_end[k], feats, nf, feat_on, h,
                               node_sum[k], weight[k], count[k])
            bf, bb, bg = _scan(h, offset, n_bins, feats, nf, mode, lam, gamma, min_samples_leaf,
                               min_child_weight, node_sum[k], weight[k], count[k], sumsq[k])
            if bf >= 0:
                cand_f[k] = bf
                cand_b[k] = bb
                cand_gain[k] = bg
                pending[n_pending] = k
                n_pending += 1
            elif slot_of[k] >= 0:
                free[n_free] = slot_of[k]
                n_free += 1
                slot_of[k] = -1

        scratch_node = -1

        # pick the next node to expand
        if head >= n_pending:
            break
        if max_leaves > 0 and n_leaves >= max_leaves:
            break
        if best_first:
            bi = head
            for i in range(head + 1, n_pending):
                if cand_gain[pending[i]] > cand_gain[pending[bi]]:
                    bi = i
            t = pending[head]
            pending[head] = pending[bi]
            pending[bi] = t
        k = pending[head]
        head += 1

        # stable partition of k's rows
        f = cand_f[k]
        thr = cand_b[k]
        s = node_start[k]
        e = node_end[k]
        nl = 0
        nr = 0
        for i in range(s, e):
            r = rows[i]
            if Xb[r, f] <= thr:
                rows[s + nl] = r
                nl += 1
            else:
                buf[nr] = r
                nr += 1
        for i in range(nr):
            rows[s + nl + i] = buf[i]
        feature[k] = f
        bin_thr[k] = thr
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        n_leaves += 1
        left[k] = lc
        right[k] = rc
        depth[lc] = depth[k] + 1
        depth[rc] = depth[k] + 1
        node_start[lc] = s
        node_end[lc] = s + nl
        node_start[rc] = s + nl
        node_end[rc] = e
        todo[0] = lc
        todo[1] = rc
        n_todo = 2
        parent_slot = slot_of[k]
        slot_of[k] = -1

    node_of_row = np.full(n, -1, dtype=np.int64)
    for k in range(n_nodes):
        if left[k] == LEAF:
            for i in range(node_start[k], node_end[k]):
                node_of_row[rows[i]] = k
    return (feature[:n_nodes].copy(), bin_thr[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), weight[:n_nodes].copy(),
            count[:n_nodes].copy(), sumsq[:n_nodes].copy(), node_sum[:n_nodes].copy(),
            depth[:n_nodes].copy(), node_of_row)


@njit(cache=True)
def apply_tree(X, feature, threshold, left, right):
    """Leaf node index for every row of X."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        k = 0
        while left[k] != LEAF:
            if X[i, feature[k]] <= threshold[k]:
                k = left[k]
            else:
                k = right[k]
        out[i] = k
    return out


@njit(cache=True)
def ccp_prune(left, right, risk, alpha):
    """Smallest subtree minimizing sum(leaf risk) + alpha * n_leaves.

    Children always carry larger indices than their parent, so one
    descending sweep is a post-order traversal. Returns pruned copies of
    left/right; nodes below a pruned node become unreachable.
    """
    n = left.shape[0]
    new_left = left.copy()
    new_right = right.copy()
    cost = np.zeros(n)
    for k in range(n - 1, -1, -1):
        if left[k] == LEAF:
            cost[k] = risk[k] + alpha
        else:
            sub = cost[left[k]] + cost[right[k]]
            own = risk[k] + alpha
            if own <= sub:
                new_left[k] = LEAF
                new_right[k] = LEAF
                cost[k] = own
            else:
                cost[k] = sub
    return new_left, new_right
