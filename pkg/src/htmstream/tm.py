"""Online sequence memory over column codes.

:class:`ColumnProjector` maps an encoder code onto columns with a fixed
random projection (top-k overlap, no proximal learning).
:class:`TemporalMemory` learns transitions between column codes with
per-cell distal segments and reports, after each step, the set of columns
it expects to be active next.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np

from . import _kernels as K
from ._backend import BACKEND, HAS_NUMBA
from .sdr import Sdr, SdrError

SNAPSHOT_VERSION = 2


@dataclass(frozen=True)
class TmConfig:
    column_count: int = 2048
    cells_per_column: int = 32
    activation_threshold: int = 13
    min_threshold: int = 10
    initial_permanence: float = 0.21
    connected_permanence: float = 0.50
    permanence_increment: float = 0.10
    permanence_decrement: float = 0.10
    predicted_decrement: float = 0.004
    max_segments_per_cell: int = 128
    max_synapses_per_segment: int = 128
    new_synapse_count: int = 20
    # live segments across the whole memory; the stalest are pruned beyond it (0 = unbounded)
    segment_budget: int = 32768
    seed: int = 1960
    # column projection
    column_sparsity: float = 0.02
    potential_pct: float = 0.5

    def __post_init__(self):
        if self.column_count <= 0:
            raise ValueError("column_count must be positive")
        if self.cells_per_column < 1:
            raise ValueError("cells_per_column must be >= 1")
        if self.min_threshold > self.activation_threshold:
            raise ValueError("min_threshold must not exceed activation_threshold")
        for name in ("initial_permanence", "connected_permanence", "permanence_increment",
                     "permanence_decrement", "predicted_decrement", "potential_pct"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.max_segments_per_cell < 1 or self.max_synapses_per_segment < 1:
            raise ValueError("segment and synapse limits must be positive")
        if self.segment_budget < 0:
            raise ValueError("segment_budget must be >= 0")
        if not 0.0 < self.column_sparsity <= 1.0:
            raise ValueError("column_sparsity must lie in (0, 1]")

    @property
    def active_columns(self) -> int:
        return max(1, int(round(self.column_sparsity * self.column_count)))

    @classmethod
    def from_dict(cls, d: dict) -> "TmConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown tm config keys: {sorted(unknown)}")
        return cls(**d)


class ColumnProjector:
    """Fixed seeded projection of an encoder code onto ``column_count`` columns.

    Each column sees a random ``potential_pct`` share of the input bits.  The
    winning columns are the top ``k`` by overlap, ties to the lower index.
    """

    def __init__(self, input_width: int, cfg: TmConfig):
        self.input_width = int(input_width)
        self.cfg = cfg
        rng = np.random.default_rng([cfg.seed, self.input_width])
        self.pools = rng.random((self.input_width, cfg.column_count)) < cfg.potential_pct
        self.k = cfg.active_columns

    def project(self, enc: Sdr) -> Sdr:
        if enc.width != self.input_width:
            raise SdrError(f"encoder width {enc.width} != configured {self.input_width}")
        if len(enc) == 0:
            return Sdr._trusted(self.cfg.column_count, np.empty(0, dtype=np.int32))
        cols = K.project_columns(enc.active, self.pools, self.k)
        return Sdr._trusted(self.cfg.column_count, cols)


@lru_cache(maxsize=8)
def _projector(input_width: int, cfg: TmConfig) -> ColumnProjector:
    return ColumnProjector(input_width, cfg)


def columns_from_encoding(enc: Sdr, cfg: TmConfig, input_width: int | None = None) -> Sdr:
    width = enc.width if input_width is None else input_width
    return _projector(width, cfg).project(enc)


class TemporalMemory:
    """Single-owner mutable sequence memory.

    ``step`` returns ``(active_columns, predicted_next)`` where
    ``predicted_next`` holds every column containing a cell with an active
    distal segment after this step.
    """

    def __init__(self, cfg: TmConfig = TmConfig()):
        self.cfg = cfg
        self.num_cells = cfg.column_count * cfg.cells_per_column
        self._init_storage(seg_capacity=1024, syn_capacity=min(32, cfg.max_synapses_per_segment))
        self.reset()
        self.backend = BACKEND

    def _init_storage(self, seg_capacity, syn_capacity, chunk_capacity=4096):
        self.seg_cell = np.full(seg_capacity, -1, dtype=np.int32)
        self.seg_nsyn = np.zeros(seg_capacity, dtype=np.int32)
        self.seg_last = np.zeros(seg_capacity, dtype=np.int64)
        self.seg_npot = np.zeros(seg_capacity, dtype=np.int32)
        self.seg_ncon = np.zeros(seg_capacity, dtype=np.int32)
        self.syn_pre = np.full((seg_capacity, syn_capacity), -1, dtype=np.int32)
        self.syn_perm = np.zeros((seg_capacity, syn_capacity), dtype=np.float32)
        self.free_segs = np.zeros(seg_capacity, dtype=np.int32)
        self.cell_nseg = np.zeros(self.num_cells, dtype=np.int32)
        self.scratch = np.zeros(self.num_cells, dtype=np.bool_)
        # presynaptic cell -> chain of chunks holding synapse references
        self.cell_head = np.full(self.num_cells, -1, dtype=np.int32)
        self.cell_tail = np.full(self.num_cells, -1, dtype=np.int32)
        self.cell_rcount = np.zeros(self.num_cells, dtype=np.int32)
        self.rev_ent = np.full(chunk_capacity * K.CHUNK, -1, dtype=np.int32)
        self.rev_perm = np.zeros(chunk_capacity * K.CHUNK, dtype=np.float32)
        self.rev_next = np.full(chunk_capacity, -1, dtype=np.int32)
        self.rev_free = np.zeros(chunk_capacity, dtype=np.int32)
        self.syn_rpos = np.full((seg_capacity, syn_capacity), -1, dtype=np.int32)
        self.touched = np.empty(0, dtype=np.int32)
        self.counters = np.zeros(K.N_COUNTERS, dtype=np.int64)
        self.counters[K.RNG] = (self.cfg.seed % (K._MINSTD_M - 1)) + 1

    @property
    def _ix(self):
        return (self.cell_head, self.cell_tail, self.cell_rcount, self.rev_ent, self.rev_perm,
                self.rev_next, self.rev_free, self.syn_rpos)

    def _rebuild_index(self) -> None:
        """Recreate the reverse index from the synapse table."""
        maxm = self.cfg.max_synapses_per_segment
        hwm = int(self.counters[K.HWM])
        pre = self.syn_pre[:hwm]
        segs, slots = np.nonzero(pre >= 0)
        cells = pre[segs, slots]
        order = np.argsort(cells, kind="stable")
        cells, segs, slots = cells[order], segs[order], slots[order]
        counts = np.bincount(cells, minlength=self.num_cells).astype(np.int32)
        nchunks = (counts + K.CHUNK - 1) // K.CHUNK
        first = np.concatenate([[0], np.cumsum(nchunks)[:-1]]).astype(np.int64)
        total = int(nchunks.sum())
        cap = max(4096, 2 * total)
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        rank = np.arange(cells.size) - starts[cells]
        pos = first[cells] * K.CHUNK + rank
        self.rev_ent = np.full(cap * K.CHUNK, -1, dtype=np.int32)
        self.rev_perm = np.zeros(cap * K.CHUNK, dtype=np.float32)
        self.rev_ent[pos] = segs * maxm + slots
        self.rev_perm[pos] = self.syn_perm[segs, slots]
        self.syn_rpos = np.full(self.syn_pre.shape, -1, dtype=np.int32)
        self.syn_rpos[segs, slots] = pos
        self.rev_next = np.full(cap, -1, dtype=np.int32)
        self.rev_free = np.zeros(cap, dtype=np.int32)
        has = nchunks > 0
        self.rev_next[:total] = np.arange(1, total + 1, dtype=np.int32)
        self.rev_next[(first + nchunks - 1)[has]] = -1
        self.cell_rcount = counts
        self.cell_head = np.where(has, first, -1).astype(np.int32)
        self.cell_tail = np.where(has, first + nchunks - 1, -1).astype(np.int32)
        self.counters[K.CHWM] = total
        self.counters[K.CNFREE] = 0

    def reset(self) -> None:
        """Forget the current sequence context; learned segments are kept."""
        self.active_cells = np.empty(0, dtype=np.int32)
        self.winner_cells = np.empty(0, dtype=np.int32)
        self.active_mask = np.zeros(self.num_cells, dtype=np.bool_)
        self.active_segs = np.empty(0, dtype=np.int32)
        self.matching_segs = np.empty(0, dtype=np.int32)
        self.seg_npot[self.touched] = 0
        self.touched = np.empty(0, dtype=np.int32)
        self._predicted = np.empty(0, dtype=np.int32)

    # -- storage growth ----------------------------------------------------

    def _prune(self, n_new: int) -> None:
        """Drop the least recently active tenth of the budget when it would overflow."""
        budget = self.cfg.segment_budget
        live_count = int(self.counters[K.HWM] - self.counters[K.NFREE])
        if budget == 0 or live_count + n_new <= budget:
            return
        hwm = int(self.counters[K.HWM])
        live = np.flatnonzero(self.seg_cell[:hwm] >= 0).astype(np.int32)
        n_drop = min(live.size, max(live_count + n_new - budget, budget // 10))
        last = self.seg_last[live].copy()
        # segments the next step reads from must survive
        last[np.isin(live, self.active_segs) | np.isin(live, self.matching_segs)] = np.iinfo(np.int64).max
        victims = live[np.lexsort((live, last))[:n_drop]]
        K.prune_segments(
            np.sort(victims), self.cfg.max_synapses_per_segment,
            self.seg_cell, self.seg_nsyn, self.syn_pre, self.syn_perm, self.cell_nseg,
            self.free_segs, self._ix, self.counters,
        )

    def _ensure_capacity(self, n_active_cols: int) -> None:
        cfg = self.cfg
        self._prune(n_active_cols)
        hwm = int(self.counters[K.HWM])
        cap = self.seg_cell.size
        if hwm + n_active_cols - int(self.counters[K.NFREE]) > cap:
            new = max(cap * 2, hwm + n_active_cols)
            if new * cfg.max_synapses_per_segment >= 2**31:
                raise MemoryError("segment table exceeds the synapse reference range")
            grow = new - cap
            self.seg_cell = np.concatenate([self.seg_cell, np.full(grow, -1, np.int32)])
            self.seg_nsyn = np.concatenate([self.seg_nsyn, np.zeros(grow, np.int32)])
            self.seg_last = np.concatenate([self.seg_last, np.zeros(grow, np.int64)])
            self.seg_npot = np.concatenate([self.seg_npot, np.zeros(grow, np.int32)])
            self.seg_ncon = np.concatenate([self.seg_ncon, np.zeros(grow, np.int32)])
            self.free_segs = np.concatenate([self.free_segs, np.zeros(grow, np.int32)])
            w = self.syn_pre.shape[1]
            self.syn_pre = np.concatenate([self.syn_pre, np.full((grow, w), -1, np.int32)])
            self.syn_perm = np.concatenate([self.syn_perm, np.zeros((grow, w), np.float32)])
            self.syn_rpos = np.concatenate([self.syn_rpos, np.full((grow, w), -1, np.int32)])
        w = self.syn_pre.shape[1]
        limit = cfg.max_synapses_per_segment
        if w < limit:
            longest = int(self.seg_nsyn[:hwm].max(initial=0))
            if longest + cfg.new_synapse_count > w:
                new_w = min(limit, max(2 * w, longest + cfg.new_synapse_count))
                pad = new_w - w
                n = self.syn_pre.shape[0]
                self.syn_pre = np.concatenate([self.syn_pre, np.full((n, pad), -1, np.int32)], axis=1)
                self.syn_perm = np.concatenate([self.syn_perm, np.zeros((n, pad), np.float32)], axis=1)
                self.syn_rpos = np.concatenate([self.syn_rpos, np.full((n, pad), -1, np.int32)], axis=1)
        # every new synapse may open a chunk
        need = (self.active_segs.size + n_active_cols) * cfg.new_synapse_count
        ccap = self.rev_next.size
        spare = ccap - int(self.counters[K.CHWM]) + int(self.counters[K.CNFREE])
        if need > spare:
            grow = max(ccap, need)
            self.rev_ent = np.concatenate([self.rev_ent, np.full(grow * K.CHUNK, -1, np.int32)])
            self.rev_perm = np.concatenate([self.rev_perm, np.zeros(grow * K.CHUNK, np.float32)])
            self.rev_next = np.concatenate([self.rev_next, np.full(grow, -1, np.int32)])
            self.rev_free = np.concatenate([self.rev_free, np.zeros(grow, np.int32)])

    # -- main step ---------------------------------------------------------

    def step(self, active_columns: Sdr, learn: bool = True) -> tuple[Sdr, Sdr]:
        cfg = self.cfg
        if active_columns.width != cfg.column_count:
            raise SdrError(f"column code width {active_columns.width} != {cfg.column_count}")
        cols = active_columns.active
        self._ensure_capacity(cols.size)
        self.counters[K.ITER] += 1
        active, winners = K.activate_cells(
            cols, cfg.cells_per_column, cfg.column_count,
            self.active_segs, self.matching_segs, self.seg_npot,
            self.active_mask, self.winner_cells, self.scratch,
            self.seg_cell, self.seg_nsyn, self.seg_last, self.syn_pre, self.syn_perm,
            self.cell_nseg, self.free_segs, self._ix, self.counters,
            np.float32(cfg.initial_permanence), np.float32(cfg.permanence_increment),
            np.float32(cfg.permanence_decrement), np.float32(cfg.predicted_decrement),
            cfg.new_synapse_count, cfg.max_segments_per_cell, cfg.max_synapses_per_segment,
            bool(learn),
        )
        self.active_cells = active
        self.winner_cells = winners
        mask = np.zeros(self.num_cells, dtype=np.bool_)
        mask[active] = True
        self.active_mask = mask
        connected = np.float32(cfg.connected_permanence)
        if HAS_NUMBA:
            self.active_segs, self.matching_segs, self.touched = K._segment_activity_index(
                active, self.touched, cfg.max_synapses_per_segment, self._ix, connected, cfg.activation_threshold, cfg.min_threshold,
                self.seg_npot, self.seg_ncon,
            )
        else:
            self.active_segs, self.matching_segs, self.touched = K._segment_activity_numpy(
                mask, int(self.counters[K.HWM]), self.seg_cell, self.syn_pre, self.syn_perm,
                connected, cfg.activation_threshold, cfg.min_threshold, self.seg_npot,
            )
        if learn and self.active_segs.size:
            self.seg_last[self.active_segs] = self.counters[K.ITER]
        cells = self.seg_cell[self.active_segs]
        self._predicted = np.unique(cells // cfg.cells_per_column).astype(np.int32)
        return active_columns, self.predicted_columns

    @property
    def predicted_columns(self) -> Sdr:
        return Sdr._trusted(self.cfg.column_count, self._predicted)

    @property
    def predictive_cells(self) -> np.ndarray:
        return np.unique(self.seg_cell[self.active_segs])

    # -- introspection -----------------------------------------------------

    @property
    def num_segments(self) -> int:
        hwm = int(self.counters[K.HWM])
        return int((self.seg_cell[:hwm] >= 0).sum())

    @property
    def num_synapses(self) -> int:
        return int(self.seg_nsyn.sum())

    def permanences(self) -> np.ndarray:
        hwm = int(self.counters[K.HWM])
        return self.syn_perm[:hwm][self.syn_pre[:hwm] >= 0]

    # -- snapshot ----------------------------------------------------------

    def save(self, path) -> None:
        """Write a versioned ``.npz`` snapshot (layout may change between versions)."""
        hwm = int(self.counters[K.HWM])
        np.savez_compressed(
            path,
            version=np.int64(SNAPSHOT_VERSION),
            config=np.array(json.dumps(asdict(self.cfg))),
            seg_cell=self.seg_cell[:hwm], seg_nsyn=self.seg_nsyn[:hwm],
            seg_last=self.seg_last[:hwm], seg_npot=self.seg_npot[:hwm],
            syn_pre=self.syn_pre[:hwm], syn_perm=self.syn_perm[:hwm],
            free_segs=self.free_segs[: int(self.counters[K.NFREE])],
            cell_nseg=self.cell_nseg, counters=self.counters,
            active_cells=self.active_cells, winner_cells=self.winner_cells,
            active_segs=self.active_segs, matching_segs=self.matching_segs,
            touched=self.touched, predicted=self._predicted,
        )

    @classmethod
    def load(cls, path) -> "TemporalMemory":
        with np.load(path) as z:
            version = int(z["version"])
            if version != SNAPSHOT_VERSION:
                raise ValueError(f"unsupported snapshot version {version}")
            tm = cls(TmConfig.from_dict(json.loads(str(z["config"]))))
            hwm = z["seg_cell"].size
            tm._init_storage(max(hwm, 1024), max(z["syn_pre"].shape[1], tm.syn_pre.shape[1]))
            w = z["syn_pre"].shape[1]
            tm.seg_cell[:hwm] = z["seg_cell"]
            tm.seg_nsyn[:hwm] = z["seg_nsyn"]
            tm.seg_last[:hwm] = z["seg_last"]
            tm.seg_npot[:hwm] = z["seg_npot"]
            tm.syn_pre[:hwm, :w] = z["syn_pre"]
            tm.syn_perm[:hwm, :w] = z["syn_perm"]
            nfree = z["free_segs"].size
            tm.free_segs[:nfree] = z["free_segs"]
            tm.cell_nseg[:] = z["cell_nseg"]
            tm.counters[:] = z["counters"]
            tm.active_cells = z["active_cells"]
            tm.winner_cells = z["winner_cells"]
            tm.active_mask[tm.active_cells] = True
            tm.active_segs = z["active_segs"]
            tm.matching_segs = z["matching_segs"]
            tm.touched = z["touched"]
            tm._predicted = z["predicted"]
            tm._rebuild_index()
        return tm
