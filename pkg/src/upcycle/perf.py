"""Operator-at-a-time timeline model: compute, cache fill, DRAM and barrier time."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

from .arch import MachineConfig, peak_ops
from .mapping import WorkDecomposition, decompose_group, group_nodes
from .workload import DataType, OperatorNode, TensorSpec, Trace


@dataclass
class LlcState:
    """Byte-granular LRU where every access scans a whole tensor.

    A tensor's bytes sit together in the recency stack with its first byte deepest,
    so spilling takes a tensor's low bytes first. Scans make hits all-or-nothing: a
    re-read hits only if the tensor plus everything touched since fits the capacity.
    Being a stack algorithm, the hit set only grows with capacity.
    """

    capacity: int
    # id -> [size, dirty bytes (always the top of the tensor), spilled bytes]
    resident: OrderedDict = field(default_factory=OrderedDict)
    # Dirty bytes spilled per tensor since the caller last cleared this.
    writebacks: dict = field(default_factory=dict)

    def copy(self) -> LlcState:
        return LlcState(self.capacity, OrderedDict((k, list(v)) for k, v in self.resident.items()),
                        dict(self.writebacks))

    def hit(self, tid: str) -> bool:
        """Scan ``tid`` for reading; True when every byte was still on chip."""
        entry = self.resident.get(tid)
        if entry is None:
            return False
        above = 0
        for k in reversed(self.resident):
            if k == tid:
                break
            above += self.resident[k][0]
        ok = entry[2] == 0 and entry[0] + above <= self.capacity
        entry[2] = 0
        self.resident.move_to_end(tid)
        return ok

    def fill(self, tid: str, size: int) -> None:
        """Bring ``tid`` on chip after a miss (clean)."""
        entry = self.resident.setdefault(tid, [size, 0, 0])
        entry[2] = 0
        self.resident.move_to_end(tid)

    def write(self, tid: str, size: int) -> None:
        self.resident[tid] = [size, size, 0]
        self.resident.move_to_end(tid)

    def settle(self) -> int:
        """Spill whatever no longer fits; returns dirty bytes written back."""
        total = 0
        above = 0
        gone = []
        for k in reversed(self.resident):
            entry = self.resident[k]
            size, dirty, spilled = entry
            now = min(size, max(0, size + above - self.capacity))
            if now > spilled:
                # Dirty bytes occupy [size - dirty, size); newly spilled are [spilled, now).
                wb = max(0, now - max(spilled, size - dirty))
                if wb:
                    self.writebacks[k] = self.writebacks.get(k, 0) + wb
                    total += wb
                entry[1] = min(dirty, size - now)
                entry[2] = now
            if now == size:
                gone.append(k)
            above += size
        for k in gone:
            del self.resident[k]
        return total

    def drop(self, tid: str) -> None:
        self.resident.pop(tid, None)


@dataclass(frozen=True)
class OperatorEstimate:
    node_ids: tuple[str, ...]
    kind: str
    shape: str
    dtype: str
    compute_time_s: float
    l1_time_s: float
    llc_time_s: float
    dram_time_s: float
    barrier_time_s: float
    operator_time_s: float
    achieved_ops: int
    utilization: float
    bound: str
    chunk_count: int
    waves: int
    dram_read_bytes: float
    dram_write_bytes: float
    llc_bytes: float
    l1_bytes: float
    simd_efficiency: float
    # Activity summed over all chunks, including padding (for energy).
    issued_ops: float = 0.0
    alu_slots: float = 0.0
    mem_slots: float = 0.0
    onchip_time_s: float = 0.0

    def row(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RunReport:
    trace: str
    mode: str
    batch: int
    config: str
    operators: tuple[OperatorEstimate, ...]
    total_time_s: float
    samples_per_s: float
    utilization: float
    total_ops: int
    dram_read_bytes: float
    dram_write_bytes: float
    llc_bytes: float
    l1_bytes: float
    time_by_kind: dict[str, float]
    peak_ops_per_s: float
    micro_batch: int | None = None  # sub-batch size when run as repeated passes

    @property
    def dram_bytes(self) -> float:
        return self.dram_read_bytes + self.dram_write_bytes

    def summary(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k != "operators"}
        d["operator_count"] = len(self.operators)
        return d


@dataclass(frozen=True)
class SimOptions:
    warm: bool = True  # steady state: weights left resident by a previous sample batch
    perfect_cache: bool = False  # every on-chip reuse hits; no LLC or DRAM time
    shrink: bool = True  # occupancy-aware chunk sizing
    fuse: bool = True  # element-wise consumers run in their producer's epilogue


def _shape_label(node: OperatorNode) -> str:
    p = node.params
    keys = {"MatMul": ("batch", "M", "N", "K"),
            "Elementwise": ("op", "count", "arity"),
            "LstmCell": ("batch", "I", "H", "grad"),
            "Requantize": ("count",)}.get(node.kind, ("N", "H", "W", "C", "K", "R", "S", "stride"))
    return " ".join(f"{k}={p[k]}" for k in keys if k in p)


def _group_tensors(group: Sequence[OperatorNode]) -> tuple[list[str], list[str]]:
    produced: list[str] = []
    seen = set()
    for n in group:
        for t in n.outputs:
            if t not in seen:
                seen.add(t)
                produced.append(t)
    inputs: list[str] = []
    for n in group:
        for t in n.inputs:
            if t not in seen:
                seen.add(t)
                inputs.append(t)
    return inputs, produced


def _peak(cfg: MachineConfig, dtype: DataType) -> float:
    return peak_ops(cfg, dtype)


def estimate_group(group: Sequence[OperatorNode], decomp: WorkDecomposition, cfg: MachineConfig,
                   llc: LlcState, tensors: dict[str, TensorSpec], dead_after: set[str] = frozenset(),
                   options: SimOptions = SimOptions()) -> tuple[OperatorEstimate, LlcState]:
    """Time one scheduling unit and advance the LLC state."""
    node = group[0]
    f = cfg.freq_hz * cfg.core_speedup
    vec_bytes = cfg.simd_bits / 8
    waves = decomp.waves(cfg.tiles) if decomp.chunk_count else 0
    phases = [(decomp, 1)]
    if decomp.chain_step is not None and decomp.chain_length:
        phases.append((decomp.chain_step, decomp.chain_length))
    phases += [(d, 1) for d in decomp.fused]
    core_cycles = l1_cycles = llc_cycles = onchip_cycles = 0.0
    issued = alu_slots = mem_slots = llc_bytes = 0.0
    for d, reps in phases:
        llc_bytes += reps * d.chunk_count * d.chunk_llc_bytes
        issued += reps * d.padded_ops
        alu_slots += reps * d.chunk_count * d.chunk_alu_slots
        mem_slots += reps * d.chunk_count * d.chunk_mem_slots
        w = reps * d.waves(cfg.tiles) if d.chunk_count else 0
        core_cycles += w * max(d.chunk_alu_slots, d.chunk_mem_slots)
        l1_cycles += w * d.chunk_mem_slots * vec_bytes / cfg.l1_fill_bytes_per_cycle_per_tile
        llc_cycles += w * math.ceil(d.chunk_llc_bytes / cfg.llc_fill_bytes_per_cycle_per_tile)
        # Phases run back to back, each bounded by its own slowest resource.
        onchip_cycles += w * d.chunk_cycles
    compute_t = core_cycles / f
    l1_t = l1_cycles / f
    llc_t = llc_cycles / f
    onchip_t = onchip_cycles / f
    syncs = 1 + decomp.chain_length
    barrier_t = syncs * cfg.barrier_cycles / cfg.freq_hz

    # LLC residency and DRAM traffic.
    llc = llc.copy()
    inputs, outputs = _group_tensors(group)
    inflation = dict(decomp.read_inflation)
    dram_read = dram_write = 0.0
    for idx, t in enumerate(inputs):
        size = tensors[t].nbytes
        if options.perfect_cache or llc.hit(t):
            continue
        dram_read += size * inflation.get(idx, 1.0)
        llc.fill(t, size)
    for t in outputs:
        llc.write(t, tensors[t].nbytes)
    # Spilled dirty bytes are charged to their producer afterwards (see _run).
    llc.settle()
    if not options.perfect_cache:
        if node.kind in ("MatMul", "Conv2D", "Conv2DdI", "Conv2DdW"):
            footprint = sum(tensors[t].nbytes for t in inputs + outputs)
            if footprint > llc.capacity and len(inputs) >= 2:
                passes = math.ceil(footprint / max(llc.capacity, 1))
                dram_read += (passes - 1) * min(tensors[t].nbytes for t in inputs)
    for t in dead_after:
        llc.drop(t)

    if options.perfect_cache:
        # Every reuse hits on chip: only core issue limits remain.
        llc_t = dram_t = 0.0
        onchip_t = compute_t
    else:
        dram_t = (dram_read + dram_write) / cfg.effective_mem_bw
    busy = max(onchip_t, dram_t)
    op_time = busy + barrier_t
    ops = decomp.ideal_ops
    peak = _peak(cfg, node.dtype)
    if busy == 0:
        bound = "barrier"
    elif dram_t >= busy:
        bound = "dram"
    elif llc_t >= busy:
        bound = "llc"
    elif decomp.chunk_count and decomp.chunk_count < cfg.tiles and not decomp.chain_length:
        bound = "occupancy"
    else:
        bound = "compute"
    util = ops / (op_time * peak) if op_time > 0 else 0.0
    est = OperatorEstimate(
        tuple(n.id for n in group), "LstmSequence" if decomp.chain_length or node.kind == "LstmCell"
        else node.kind, _shape_label(node) + (f" steps={len(group)}" if len(group) > 1 else ""),
        node.dtype.label, compute_t, l1_t, llc_t, dram_t, barrier_t, op_time, ops, util, bound,
        decomp.chunk_count, waves, dram_read, dram_write, llc_bytes,
        mem_slots * vec_bytes, decomp.simd_efficiency, issued, alu_slots, mem_slots, onchip_t)
    return est, llc


def charge_writeback(est: OperatorEstimate, nbytes: float, cfg: MachineConfig) -> OperatorEstimate:
    """Add spilled output bytes to an operator's DRAM traffic and re-time it."""
    if not nbytes:
        return est
    write = est.dram_write_bytes + nbytes
    dram_t = (est.dram_read_bytes + write) / cfg.effective_mem_bw
    busy = max(est.onchip_time_s, dram_t)
    op_time = busy + est.barrier_time_s
    util = est.utilization * est.operator_time_s / op_time
    bound = "dram" if dram_t >= busy else est.bound
    return replace(est, dram_write_bytes=write, dram_time_s=dram_t, operator_time_s=op_time,
                   utilization=util, bound=bound)


def _last_uses(groups: Sequence[Sequence[OperatorNode]]) -> dict[str, int]:
    last: dict[str, int] = {}
    for gi, group in enumerate(groups):
        for n in group:
            for t in n.inputs + n.outputs:
                last[t] = gi
    return last


def _run(trace: Trace, cfg: MachineConfig, llc: LlcState, options: SimOptions,
         decomps: Sequence[WorkDecomposition], groups) -> tuple[list[OperatorEstimate], LlcState]:
    last = _last_uses(groups)
    consumed = {t for n in trace.nodes for t in n.inputs}
    dead_at: dict[int, set[str]] = {}
    for t, gi in last.items():
        spec = trace.tensors[t]
        # Weights persist; graph outputs stay until evicted.
        if spec.role == "weight" or t not in consumed:
            continue
        dead_at.setdefault(gi, set()).add(t)
    # Charging spills to the producer keeps each operator's DRAM bytes non-increasing
    # in LLC capacity; charging them to whichever operator triggers the spill does not.
    producer = {t: gi for gi, g in enumerate(groups) for n in g for t in n.outputs}
    ests = []
    spilled: dict[int, float] = {}
    for gi, (group, decomp) in enumerate(zip(groups, decomps)):
        est, llc = estimate_group(group, decomp, cfg, llc, trace.tensors, dead_at.get(gi, set()),
                                  options)
        ests.append(est)
        for t, nbytes in llc.writebacks.items():
            if t in producer:
                spilled[producer[t]] = spilled.get(producer[t], 0.0) + nbytes
        llc.writebacks.clear()
    if not options.perfect_cache:
        ests = [charge_writeback(e, spilled.get(gi, 0.0), cfg) for gi, e in enumerate(ests)]
    return ests, llc


def simulate(trace: Trace, cfg: MachineConfig, options: SimOptions = SimOptions(),
             **kwargs) -> RunReport:
    """Fold the operator model over the trace in order with a persistent LLC state."""
    if kwargs:
        options = replace(options, **kwargs)
    groups = group_nodes(trace.nodes, options.fuse)
    decomps = [decompose_group(g, cfg, trace.tensors, options.shrink) for g in groups]
    llc = LlcState(cfg.llc_bytes)
    if options.warm and not options.perfect_cache:
        _, llc = _run(trace, cfg, llc, options, decomps, groups)
        for t in list(llc.resident):
            if trace.tensors[t].role != "weight":
                llc.drop(t)
            else:
                llc.resident[t][1] = 0
    ests, _ = _run(trace, cfg, llc, options, decomps, groups)
    return _report(trace, cfg, ests)


def _report(trace: Trace, cfg: MachineConfig, ests: Sequence[OperatorEstimate]) -> RunReport:
    total = sum(e.operator_time_s for e in ests)
    ops = sum(e.achieved_ops for e in ests)
    # Peak of the datatype mix, weighted by ops.
    denom = sum(e.achieved_ops / peak_ops(cfg, DataType.parse(e.dtype)) for e in ests)
    peak = ops / denom if denom else peak_ops(cfg, DataType.Int8)
    util = ops / (total * peak) if total > 0 else 0.0
    by_kind: dict[str, float] = {}
    for e in ests:
        by_kind[e.kind] = by_kind.get(e.kind, 0.0) + e.operator_time_s
    return RunReport(trace.name, trace.mode, trace.batch, cfg.name, tuple(ests), total,
                     trace.batch / total if total > 0 else math.inf, util, ops,
                     sum(e.dram_read_bytes for e in ests), sum(e.dram_write_bytes for e in ests),
                     sum(e.llc_bytes for e in ests), sum(e.l1_bytes for e in ests), by_kind, peak)


def micro_batch_sizes(batch: int) -> list[int]:
    """Powers of two dividing ``batch``, plus ``batch`` itself."""
    sizes = []
    s = 1
    while s <= batch:
        if batch % s == 0:
            sizes.append(s)
        s *= 2
    if batch not in sizes:
        sizes.append(batch)
    return sizes


BATCH_POLICIES = ("best", "full")


def simulate_batch(build: Callable[[int], Trace], batch: int, cfg: MachineConfig,
                   options: SimOptions = SimOptions(), policy: str = "best") -> RunReport:
    """Run ``batch`` samples as repeated passes of one sub-batch.

    ``build(s)`` returns the trace at batch ``s``. ``best`` tries every power-of-two
    divisor (splitting keeps activations inside the LLC) and keeps the fastest;
    ``full`` runs the whole batch in one pass.
    """
    if policy == "best":
        sizes = micro_batch_sizes(batch)
    elif policy == "full":
        sizes = [batch]
    else:
        raise ValueError(f"unknown batch policy {policy!r}; known: {BATCH_POLICIES}")
    best = None
    for s in sizes:
        run = simulate(build(s), cfg, options)
        passes = batch // s
        if best is None or run.total_time_s * passes < best[0].total_time_s * best[1]:
            best = (run, passes, s)
    run, passes, s = best
    total = run.total_time_s * passes
    return replace(run, batch=batch, total_time_s=total,
                   samples_per_s=batch / total if total > 0 else math.inf,
                   total_ops=run.total_ops * passes,
                   dram_read_bytes=run.dram_read_bytes * passes,
                   dram_write_bytes=run.dram_write_bytes * passes,
                   llc_bytes=run.llc_bytes * passes, l1_bytes=run.l1_bytes * passes,
                   time_by_kind={k: v * passes for k, v in run.time_by_kind.items()},
                   micro_batch=s)


INF_PERFECT = "inf+perfect"


def sensitivity_membw(trace: Trace, cfg: MachineConfig, bw_list: Sequence,
                      reference_bw: float = 900e9, options: SimOptions = SimOptions()) -> dict:
    """Throughput at each bandwidth relative to ``reference_bw``.

    Entries may be a number (bytes/s), ``math.inf``, or ``"inf+perfect"`` for
    infinite bandwidth with every on-chip reuse hitting.
    """
    ref = simulate(trace, replace(cfg, mem_bw_bytes_per_s=reference_bw), options)
    out = {}
    for bw in bw_list:
        if bw == INF_PERFECT:
            run = simulate(trace, replace(cfg, mem_bw_bytes_per_s=math.inf),
                           replace(options, perfect_cache=True))
        else:
            run = simulate(trace, replace(cfg, mem_bw_bytes_per_s=float(bw)), options)
        out[bw] = ref.total_time_s / run.total_time_s if run.total_time_s else math.inf
    return out
