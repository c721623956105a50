"""Slow dictionary-based temporal memory used as a test oracle.

Written independently of the array kernels: segments are dicts, synapses are
per-segment slot lists, and every rule is applied in the most direct way.
Tie-breaking and random draws follow the same conventions as the package
(lowest id wins ties, Park-Miller draws for synapse sampling) so the two
can be compared step for step.
"""

import numpy as np

F32 = np.float32
MINSTD_A = 48271
MINSTD_M = 2147483647


class RefSegment:
    def __init__(self, cell, width, last):
        self.cell = cell
        self.slots = [None] * width  # None or [pre, perm]
        self.last = last

    def synapses(self):
        return [(k, syn) for k, syn in enumerate(self.slots) if syn is not None]


class ReferenceTM:
    def __init__(self, cfg):
        self.cfg = cfg
        self.segs = {}
        self.free = []
        self.hwm = 0
        self.iteration = 0
        self.rng = (cfg.seed % (MINSTD_M - 1)) + 1
        self.active = set()
        self.winners = []
        self.active_segs = []
        self.matching_segs = []
        self.npot = {}

    def _below(self, n):
        self.rng = (self.rng * MINSTD_A) % MINSTD_M
        return (self.rng * n) >> 31

    def _segments_of(self, cell):
        return sorted(s for s, seg in self.segs.items() if seg.cell == cell)

    def _destroy(self, s):
        del self.segs[s]
        self.free.append(s)

    def _create(self, cell):
        mine = self._segments_of(cell)
        if len(mine) >= self.cfg.max_segments_per_cell:
            self._destroy(min(mine, key=lambda s: (self.segs[s].last, s)))
        if self.free:
            s = self.free.pop()
        else:
            s = self.hwm
            self.hwm += 1
        self.segs[s] = RefSegment(cell, self.cfg.max_synapses_per_segment, self.iteration)
        return s

    def _adapt(self, s, prev_active):
        seg = self.segs[s]
        for k, (pre, perm) in seg.synapses():
            if pre in prev_active:
                perm = perm + F32(self.cfg.permanence_increment)
            else:
                perm = perm - F32(self.cfg.permanence_decrement)
            perm = min(max(perm, F32(0.0)), F32(1.0))
            seg.slots[k] = None if perm < F32(1e-5) else [pre, perm]

    def _punish(self, s, prev_active):
        seg = self.segs[s]
        for k, (pre, perm) in seg.synapses():
            if pre in prev_active:
                perm = max(perm - F32(self.cfg.predicted_decrement), F32(0.0))
                seg.slots[k] = None if perm < F32(1e-5) else [pre, perm]
        if not seg.synapses():
            self._destroy(s)

    def _grow(self, s, n_desired, prev_winners):
        seg = self.segs[s]
        present = {pre for _, (pre, _) in seg.synapses()}
        cand = [c for c in prev_winners if c not in present]
        n = min(n_desired, len(cand))
        if n <= 0:
            return
        limit = self.cfg.max_synapses_per_segment
        overrun = len(seg.synapses()) + n - limit
        while overrun > 0 and seg.synapses():
            k, _ = min(seg.synapses(), key=lambda ks: (ks[1][1], ks[0]))
            seg.slots[k] = None
            overrun -= 1
        n = min(n, limit - len(seg.synapses()))
        for i in range(n):
            j = i + self._below(len(cand) - i)
            cand[i], cand[j] = cand[j], cand[i]
            k = seg.slots.index(None)
            seg.slots[k] = [cand[i], F32(self.cfg.initial_permanence)]

    def step(self, columns, learn=True):
        cfg = self.cfg
        cpc = cfg.cells_per_column
        self.iteration += 1
        prev_active = self.active
        prev_winners = self.winners
        cols = sorted(int(c) for c in columns)
        col_set = set(cols)

        by_col = {}
        for s in self.active_segs:
            by_col.setdefault(self.segs[s].cell // cpc, []).append(s)
        best = {}
        for s in self.matching_segs:
            c = self.segs[s].cell // cpc
            key = (-self.npot[s], s)
            if c not in best or key < best[c][0]:
                best[c] = (key, s)

        active, winners = [], []
        for c in cols:
            if c in by_col:
                segs = sorted(by_col[c], key=lambda s: (self.segs[s].cell, s))
                for s in segs:
                    cell = self.segs[s].cell
                    if cell not in active:
                        active.append(cell)
                        winners.append(cell)
                    if learn:
                        self._adapt(s, prev_active)
                        self._grow(s, cfg.new_synapse_count - self.npot[s], prev_winners)
            else:
                active.extend(range(c * cpc, (c + 1) * cpc))
                if c in best:
                    s = best[c][1]
                    winner = self.segs[s].cell
                    if learn:
                        self._adapt(s, prev_active)
                        self._grow(s, cfg.new_synapse_count - self.npot[s], prev_winners)
                else:
                    counts = [len(self._segments_of(cell)) for cell in range(c * cpc, (c + 1) * cpc)]
                    winner = c * cpc + counts.index(min(counts))
                    if learn and prev_winners:
                        s = self._create(winner)
                        self._grow(s, min(cfg.new_synapse_count, len(prev_winners)), prev_winners)
                winners.append(winner)

        if learn and cfg.predicted_decrement > 0:
            for s in self.matching_segs:
                if s in self.segs and self.segs[s].cell // cpc not in col_set:
                    self._punish(s, prev_active)

        self.active = set(active)
        self.winners = sorted(winners)
        self.npot = {}
        act, match = [], []
        for s in sorted(self.segs):
            seg = self.segs[s]
            npot = ncon = 0
            for _, (pre, perm) in seg.synapses():
                if pre in self.active:
                    npot += 1
                    ncon += perm >= F32(cfg.connected_permanence)
            self.npot[s] = npot
            if ncon >= cfg.activation_threshold:
                act.append(s)
            if npot >= cfg.min_threshold:
                match.append(s)
        self.active_segs, self.matching_segs = act, match
        if learn:
            for s in act:
                self.segs[s].last = self.iteration
        return sorted({self.segs[s].cell // cpc for s in act})
