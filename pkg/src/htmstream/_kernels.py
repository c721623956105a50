"""Inner loops of the column projection and the temporal memory.

Every function here takes and mutates plain numpy arrays so the same code
runs compiled (numba) or interpreted.  The two scan kernels have
vectorized numpy twins used when numba is unavailable; outputs are
bit-identical between the two.

Segment storage: row ``s`` of ``syn_pre`` / ``syn_perm`` holds the synapses
of segment ``s``; a slot with ``syn_pre == -1`` is empty and slots never
move, so ``s * max_synapses + slot`` is a stable synapse reference.
``seg_cell[s] == -1`` marks a free segment.

Reverse index: the references of every synapse whose presynaptic cell is
``p`` live in a chain of fixed-size chunks starting at ``cell_head[p]``
(``cell_rcount[p]`` entries, last chunk ``cell_tail[p]``), so the per-step
activity scan touches only synapses from currently active cells.
"""

import numpy as np

from ._backend import HAS_NUMBA, jit

# counters
HWM = 0        # segment ids below this have been handed out
NFREE = 1      # size of the free-segment stack
ITER = 2
RNG = 3
CHWM = 4       # chunk ids below this have been handed out
CNFREE = 5     # size of the free-chunk stack
N_COUNTERS = 6

CHUNK = 16

_MINSTD_A = 48271
_MINSTD_M = 2147483647


@jit
def rng_below(counters, n):
    # Park-Miller minimal standard; products stay below 2**47 so int64 is exact
    s = (counters[RNG] * _MINSTD_A) % _MINSTD_M
    counters[RNG] = s
    return (s * n) >> 31


# -- column projection -----------------------------------------------------

@jit
def _project_columns_loop(active_bits, pools, k):
    ncols = pools.shape[1]
    overlaps = np.zeros(ncols, dtype=np.int32)
    for i in active_bits:
        row = pools[i]
        for c in range(ncols):
            if row[c]:
                overlaps[c] += 1
    order = np.argsort(-overlaps, kind="mergesort")
    return np.sort(order[:k]).astype(np.int32)


def _project_columns_numpy(active_bits, pools, k):
    overlaps = pools[active_bits].sum(axis=0, dtype=np.int32)
    order = np.argsort(-overlaps, kind="stable")
    return np.sort(order[:k]).astype(np.int32)


# -- reverse index -----------------------------------------------------------
#
# ``ix`` bundles (cell_head, cell_tail, cell_rcount, rev_ent, rev_perm,
# rev_next, rev_free, syn_rpos).  Chunk ``c`` owns flat positions
# ``c * CHUNK .. c * CHUNK + CHUNK - 1`` of ``rev_ent`` (synapse reference)
# and ``rev_perm`` (a copy of that synapse's permanence, so the activity
# scan reads memory in order).  ``syn_rpos[s, k]`` is the flat position
# holding synapse (s, k).

@jit
def _rev_append(p, s, k, maxm, perm, ix, counters):
    cell_head, cell_tail, cell_rcount, rev_ent, rev_perm, rev_next, rev_free, syn_rpos = ix
    n = cell_rcount[p]
    if n % CHUNK == 0:
        if counters[CNFREE] > 0:
            counters[CNFREE] -= 1
            ch = rev_free[counters[CNFREE]]
        else:
            ch = counters[CHWM]
            counters[CHWM] += 1
        rev_next[ch] = -1
        if n == 0:
            cell_head[p] = ch
        else:
            rev_next[cell_tail[p]] = ch
        cell_tail[p] = ch
    pos = cell_tail[p] * CHUNK + n % CHUNK
    rev_ent[pos] = s * maxm + k
    rev_perm[pos] = perm
    syn_rpos[s, k] = pos
    cell_rcount[p] = n + 1


@jit
def _rev_remove(p, s, k, maxm, ix, counters):
    cell_head, cell_tail, cell_rcount, rev_ent, rev_perm, rev_next, rev_free, syn_rpos = ix
    n = cell_rcount[p]
    pos = syn_rpos[s, k]
    tail = cell_tail[p]
    last = tail * CHUNK + (n - 1) % CHUNK
    if pos != last:
        moved = rev_ent[last]
        rev_ent[pos] = moved
        rev_perm[pos] = rev_perm[last]
        ms = moved // maxm
        syn_rpos[ms, moved - ms * maxm] = pos
    rev_ent[last] = -1
    syn_rpos[s, k] = -1
    n -= 1
    cell_rcount[p] = n
    if n % CHUNK == 0:
        # tail chunk emptied: release it and find the new tail
        rev_free[counters[CNFREE]] = tail
        counters[CNFREE] += 1
        if n == 0:
            cell_head[p] = -1
            cell_tail[p] = -1
        else:
            ch = cell_head[p]
            for _ in range(n // CHUNK - 1):
                ch = rev_next[ch]
            rev_next[ch] = -1
            cell_tail[p] = ch


@jit
def _set_perm(s, k, p, syn_perm, ix):
    syn_perm[s, k] = p
    ix[4][ix[7][s, k]] = p


# -- segment bookkeeping ---------------------------------------------------

@jit
def _destroy_synapse(s, slot, maxm, seg_nsyn, syn_pre, syn_perm, ix, counters):
    _rev_remove(syn_pre[s, slot], s, slot, maxm, ix, counters)
    syn_pre[s, slot] = -1
    syn_perm[s, slot] = np.float32(0.0)
    seg_nsyn[s] -= 1


@jit
def _destroy_segment(s, maxm, seg_cell, seg_nsyn, syn_pre, syn_perm, cell_nseg, free_segs,
                     ix, counters):
    for k in range(syn_pre.shape[1]):
        if syn_pre[s, k] >= 0:
            _destroy_synapse(s, k, maxm, seg_nsyn, syn_pre, syn_perm, ix, counters)
    cell_nseg[seg_cell[s]] -= 1
    seg_cell[s] = -1
    free_segs[counters[NFREE]] = s
    counters[NFREE] += 1


@jit
def _create_segment(cell, max_segments_per_cell, maxm, seg_cell, seg_nsyn, seg_last,
                    syn_pre, syn_perm, cell_nseg, free_segs, ix, counters):
    if cell_nseg[cell] >= max_segments_per_cell:
        # evict the least recently used segment on this cell
        victim = -1
        oldest = 0
        for s in range(counters[HWM]):
            if seg_cell[s] == cell and (victim < 0 or seg_last[s] < oldest):
                victim = s
                oldest = seg_last[s]
        _destroy_segment(victim, maxm, seg_cell, seg_nsyn, syn_pre, syn_perm, cell_nseg,
                         free_segs, ix, counters)
    if counters[NFREE] > 0:
        counters[NFREE] -= 1
        s = free_segs[counters[NFREE]]
    else:
        s = counters[HWM]
        counters[HWM] += 1
    seg_cell[s] = cell
    seg_nsyn[s] = 0
    seg_last[s] = counters[ITER]
    cell_nseg[cell] += 1
    return s


@jit
def _adapt_segment(s, prev_active_mask, inc, dec, maxm, seg_nsyn, syn_pre, syn_perm,
                   ix, counters):
    zero = np.float32(0.0)
    one = np.float32(1.0)
    tiny = np.float32(1e-5)
    for k in range(syn_pre.shape[1]):
        pre = syn_pre[s, k]
        if pre < 0:
            continue
        p = syn_perm[s, k]
        if prev_active_mask[pre]:
            p = p + inc
        else:
            p = p - dec
        if p < zero:
            p = zero
        if p > one:
            p = one
        if p < tiny:
            _destroy_synapse(s, k, maxm, seg_nsyn, syn_pre, syn_perm, ix, counters)
        else:
            _set_perm(s, k, p, syn_perm, ix)


@jit
def _punish_segment(s, prev_active_mask, pred_dec, maxm, seg_nsyn, syn_pre, syn_perm,
                    ix, counters):
    zero = np.float32(0.0)
    tiny = np.float32(1e-5)
    for k in range(syn_pre.shape[1]):
        pre = syn_pre[s, k]
        if pre >= 0 and prev_active_mask[pre]:
            p = syn_perm[s, k] - pred_dec
            if p < zero:
                p = zero
            if p < tiny:
                _destroy_synapse(s, k, maxm, seg_nsyn, syn_pre, syn_perm, ix, counters)
            else:
                _set_perm(s, k, p, syn_perm, ix)


@jit
def _grow_synapses(s, n_desired, prev_winners, init_perm, max_synapses, scratch,
                   seg_nsyn, syn_pre, syn_perm, ix, counters):
    if n_desired <= 0 or prev_winners.size == 0:
        return
    width = syn_pre.shape[1]
    for k in range(width):
        if syn_pre[s, k] >= 0:
            scratch[syn_pre[s, k]] = True
    cand = np.empty(prev_winners.size, dtype=np.int32)
    ncand = 0
    for c in prev_winners:
        if not scratch[c]:
            cand[ncand] = c
            ncand += 1
    for k in range(width):
        if syn_pre[s, k] >= 0:
            scratch[syn_pre[s, k]] = False
    n = min(n_desired, ncand)
    if n <= 0:
        return
    overrun = seg_nsyn[s] + n - max_synapses
    while overrun > 0 and seg_nsyn[s] > 0:
        weakest = -1
        for k in range(width):
            if syn_pre[s, k] >= 0 and (weakest < 0 or syn_perm[s, k] < syn_perm[s, weakest]):
                weakest = k
        _destroy_synapse(s, weakest, max_synapses, seg_nsyn, syn_pre, syn_perm, ix, counters)
        overrun -= 1
    n = min(n, max_synapses - seg_nsyn[s])
    slot = 0
    # partial Fisher-Yates over the candidates
    for i in range(n):
        j = i + rng_below(counters, ncand - i)
        tmp = cand[i]
        cand[i] = cand[j]
        cand[j] = tmp
        while syn_pre[s, slot] >= 0:
            slot += 1
        syn_pre[s, slot] = cand[i]
        syn_perm[s, slot] = init_perm
        seg_nsyn[s] += 1
        _rev_append(cand[i], s, slot, max_synapses, init_perm, ix, counters)


# -- one compute step ------------------------------------------------------

@jit
def activate_cells(active_cols, cells_per_column, ncols,
                   active_segs, matching_segs, seg_npot,
                   prev_active_mask, prev_winners, scratch,
                   seg_cell, seg_nsyn, seg_last, syn_pre, syn_perm,
                   cell_nseg, free_segs, ix, counters,
                   init_perm, inc, dec, pred_dec,
                   new_synapse_count, max_segments_per_cell, max_synapses, learn):
    """Activate cells for this step's columns and apply learning.

    Returns (active_cells, winner_cells), both ascending.
    """
    cpc = cells_per_column
    maxm = max_synapses
    col_active = np.zeros(ncols, dtype=np.bool_)
    for c in active_cols:
        col_active[c] = True

    # previous-step active segments ordered by (cell, id)
    na = active_segs.size
    akeys = np.empty(na, dtype=np.int64)
    for i in range(na):
        akeys[i] = np.int64(seg_cell[active_segs[i]]) * 2147483648 + active_segs[i]
    aorder = active_segs[np.argsort(akeys, kind="mergesort")]

    # best matching segment per column (most potential synapses, then lowest id)
    best_seg = np.full(ncols, -1, dtype=np.int32)
    for s in matching_segs:
        c = seg_cell[s] // cpc
        b = best_seg[c]
        if b < 0 or seg_npot[s] > seg_npot[b] or (seg_npot[s] == seg_npot[b] and s < b):
            best_seg[c] = s

    nact = active_cols.size
    out_active = np.empty(nact * cpc, dtype=np.int32)
    out_winner = np.empty(nact * cpc, dtype=np.int32)
    n_out = 0
    n_win = 0
    ia = 0
    for c in active_cols:
        while ia < na and seg_cell[aorder[ia]] // cpc < c:
            ia += 1
        if ia < na and seg_cell[aorder[ia]] // cpc == c:
            last_cell = -1
            while ia < na and seg_cell[aorder[ia]] // cpc == c:
                s = aorder[ia]
                cell = seg_cell[s]
                if cell != last_cell:
                    out_active[n_out] = cell
                    n_out += 1
                    out_winner[n_win] = cell
                    n_win += 1
                    last_cell = cell
                if learn:
                    _adapt_segment(s, prev_active_mask, inc, dec, maxm, seg_nsyn, syn_pre,
                                   syn_perm, ix, counters)
                    _grow_synapses(s, new_synapse_count - seg_npot[s], prev_winners, init_perm,
                                   maxm, scratch, seg_nsyn, syn_pre, syn_perm, ix, counters)
                ia += 1
        else:
            base = c * cpc
            for i in range(cpc):
                out_active[n_out] = base + i
                n_out += 1
            b = best_seg[c]
            if b >= 0:
                winner = seg_cell[b]
                if learn:
                    _adapt_segment(b, prev_active_mask, inc, dec, maxm, seg_nsyn, syn_pre,
                                   syn_perm, ix, counters)
                    _grow_synapses(b, new_synapse_count - seg_npot[b], prev_winners, init_perm,
                                   maxm, scratch, seg_nsyn, syn_pre, syn_perm, ix, counters)
            else:
                winner = base
                for i in range(1, cpc):
                    if cell_nseg[base + i] < cell_nseg[winner]:
                        winner = base + i
                if learn and prev_winners.size > 0:
                    s = _create_segment(winner, max_segments_per_cell, maxm, seg_cell, seg_nsyn,
                                        seg_last, syn_pre, syn_perm, cell_nseg, free_segs,
                                        ix, counters)
                    _grow_synapses(s, min(new_synapse_count, prev_winners.size), prev_winners,
                                   init_perm, maxm, scratch, seg_nsyn, syn_pre, syn_perm,
                                   ix, counters)
            out_winner[n_win] = winner
            n_win += 1

    if learn and pred_dec > 0:
        for s in matching_segs:
            if seg_cell[s] >= 0 and not col_active[seg_cell[s] // cpc]:
                _punish_segment(s, prev_active_mask, pred_dec, maxm, seg_nsyn, syn_pre,
                                syn_perm, ix, counters)
                if seg_nsyn[s] == 0:
                    _destroy_segment(s, maxm, seg_cell, seg_nsyn, syn_pre, syn_perm, cell_nseg,
                                     free_segs, ix, counters)

    return out_active[:n_out], np.sort(out_winner[:n_win])


@jit
def _segment_activity_index(active_cells, touched_prev, maxm, ix, connected,
                            activation_threshold, min_threshold, seg_npot, seg_ncon):
    cell_head, cell_tail, cell_rcount, rev_ent, rev_perm, rev_next, rev_free, syn_rpos = ix
    for s in touched_prev:
        seg_npot[s] = 0
    cap = 0
    for p in active_cells:
        cap += cell_rcount[p]
    touched = np.empty(cap, dtype=np.int32)
    nt = 0
    for p in active_cells:
        ch = cell_head[p]
        remaining = cell_rcount[p]
        while remaining > 0:
            m = min(CHUNK, remaining)
            base = ch * CHUNK
            for pos in range(base, base + m):
                s = rev_ent[pos] // maxm
                if seg_npot[s] == 0:
                    touched[nt] = s
                    nt += 1
                seg_npot[s] += 1
                if rev_perm[pos] >= connected:
                    seg_ncon[s] += 1
            remaining -= m
            ch = rev_next[ch]
    touched = touched[:nt]
    act = np.empty(nt, dtype=np.int32)
    match = np.empty(nt, dtype=np.int32)
    na = 0
    nm = 0
    for s in touched:
        if seg_ncon[s] >= activation_threshold:
            act[na] = s
            na += 1
        if seg_npot[s] >= min_threshold:
            match[nm] = s
            nm += 1
        seg_ncon[s] = 0
    return np.sort(act[:na]), np.sort(match[:nm]), touched


def _segment_activity_numpy(active_mask, hwm, seg_cell, syn_pre, syn_perm,
                            connected, activation_threshold, min_threshold, seg_npot):
    if hwm == 0:
        empty = np.empty(0, dtype=np.int32)
        return empty, empty, empty
    pre = syn_pre[:hwm]
    hit = (pre >= 0) & active_mask[np.maximum(pre, 0)]
    npot = hit.sum(axis=1, dtype=np.int32)
    ncon = (hit & (syn_perm[:hwm] >= connected)).sum(axis=1, dtype=np.int32)
    seg_npot[:hwm] = npot
    alive = seg_cell[:hwm] >= 0
    act = np.flatnonzero(alive & (ncon >= activation_threshold)).astype(np.int32)
    match = np.flatnonzero(alive & (npot >= min_threshold)).astype(np.int32)
    touched = np.flatnonzero(npot).astype(np.int32)
    return act, match, touched


project_columns = _project_columns_loop if HAS_NUMBA else _project_columns_numpy


@jit
def prune_segments(victims, maxm, seg_cell, seg_nsyn, syn_pre, syn_perm, cell_nseg, free_segs,
                   ix, counters):
    for s in victims:
        _destroy_segment(s, maxm, seg_cell, seg_nsyn, syn_pre, syn_perm, cell_nseg, free_segs,
                         ix, counters)
