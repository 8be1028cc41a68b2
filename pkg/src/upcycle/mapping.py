"""Lowering operators to parallel output chunks and register-tiled SIMD microkernels.

Every decomposition reduces to the same picture: a grid of independent output
chunks, each computed by one microkernel invocation loop on one tile. The
microkernel issues ``fmas_per_kstep`` vector FMAs and ``loads_per_kstep`` memory
ops per k-step and the tile dual-issues one of each per cycle, so a chunk costs
``max(alu slots, memory slots, LLC fill)`` cycles.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

from .arch import MachineConfig
from .workload import DataType, OperatorNode, op_count

SCRATCH_REGS = 2


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(frozen=True)
class Microkernel:
    vectorized_dim: str  # "M", "K" or "channel-block"
    tm: int
    tn: int
    tk: int  # reduction elements consumed per k-step
    vector_elems: int
    acc_ratio: int
    loads_per_kstep: int
    fmas_per_kstep: int
    needs_reduction: bool
    input_bytes: int
    downconvert: bool

    @property
    def acc_regs(self) -> int:
        return self.tm * self.tn

    @property
    def operand_regs(self) -> int:
        return self.tm + self.tn

    @property
    def regs_used(self) -> int:
        return self.acc_regs + self.operand_regs + SCRATCH_REGS

    @property
    def epilogue_alu(self) -> int:
        """Reductions plus requantize/downconvert ops after the k-loop."""
        outs = self.acc_regs
        alu = outs if self.downconvert else 0
        if self.needs_reduction:
            alu += outs
        return alu

    @property
    def epilogue_mem(self) -> int:
        return self.acc_regs

    def slots(self, ksteps: int) -> tuple[int, int]:
        """(ALU slots, memory slots) for one invocation over ``ksteps``."""
        return (ksteps * self.fmas_per_kstep + self.epilogue_alu,
                ksteps * self.loads_per_kstep + self.epilogue_mem)

    def cycles(self, ksteps: int) -> int:
        return max(self.slots(ksteps))


def make_microkernel(tm: int, tn: int, dtype: DataType, cfg: MachineConfig,
                     k_vectorized: bool = False) -> Microkernel:
    v = cfg.vector_elems(dtype)
    r = dtype.accumulator_ratio
    ib = dtype.input_bytes
    # Each broadcast group carries r consecutive reduction elements of one column.
    b_loads = ceil_div(tn * r * ib, cfg.line_bytes)
    if k_vectorized:
        if tm != 1:
            raise ValueError("K-vectorized kernels compute one output row")
        # One A vector plus one B vector per output column.
        return Microkernel("K", 1, tn, v * r, v, r, 1 + tn, tn, True, ib,
                           dtype is not DataType.FP32)
    return Microkernel("M", tm, tn, r, v, r, ceil_div(tm, r) + b_loads, tm * tn, False, ib,
                       dtype is not DataType.FP32)


def _feasible(tm: int, tn: int, cfg: MachineConfig) -> bool:
    return tm * tn + tm + tn + SCRATCH_REGS <= cfg.vrf_regs


def _register_optimal(cands: Iterable[tuple[int, int]], r: int) -> tuple[int, int]:
    return max(cands, key=lambda t: (t[0] * t[1], t[0] % r == 0, t[0]))


def _tile_candidates(M: int, N: int, cfg: MachineConfig, dtype: DataType) -> tuple[bool, list]:
    v = cfg.vector_elems(dtype)
    budget = cfg.vrf_regs - SCRATCH_REGS
    if M == 1:
        tn_cap = min(N, (budget - 1) // 2)
        return True, [(1, tn) for tn in range(1, tn_cap + 1)]
    tm_cap = ceil_div(M, v) if M >= v else 1
    cands = []
    for tm in range(1, min(tm_cap, budget) + 1):
        for tn in range(1, min(N, budget) + 1):
            if _feasible(tm, tn, cfg):
                cands.append((tm, tn))
    return False, cands


def select_matmul_tiling(M: int, N: int, K: int, cfg: MachineConfig,
                         dtype: DataType = DataType.Int8) -> Microkernel:
    """Register-optimal tile: maximize tm*tn, then prefer tm % r == 0, then larger tm."""
    if min(M, N, K) < 1:
        raise ValueError(f"degenerate MatMul shape {(M, N, K)}")
    assert cfg.vrf_regs >= 1 + 2 + SCRATCH_REGS
    kvec, cands = _tile_candidates(M, N, cfg, dtype)
    tm, tn = _register_optimal(cands, dtype.accumulator_ratio)
    return make_microkernel(tm, tn, dtype, cfg, kvec)


@dataclass(frozen=True)
class Traffic:
    l1_bytes: float = 0.0
    llc_bytes: float = 0.0
    dram_read_bytes: float = 0.0
    dram_write_bytes: float = 0.0


@dataclass(frozen=True)
class WorkDecomposition:
    kind: str
    chunk_count: int
    chunk_cycles: int  # one chunk on one tile, max of ALU/memory/LLC-fill
    chunk_alu_slots: int
    chunk_mem_slots: int
    chunk_llc_bytes: float
    chunk_work_ops: float  # padded ops per chunk
    ideal_ops: int
    microkernel: Microkernel | None
    simd_efficiency: float
    traffic: Traffic
    chain_length: int = 0
    chain_step: WorkDecomposition | None = None
    # Read traffic multiplier for the named input (min-tiling padding).
    read_inflation: tuple[tuple[int, float], ...] = ()
    flags: tuple[str, ...] = ()
    passes: int = 1
    # Element-wise consumers folded into this operator's epilogue.
    fused: tuple[WorkDecomposition, ...] = ()

    @property
    def padded_ops(self) -> float:
        return self.chunk_count * self.chunk_work_ops

    def waves(self, tiles: int) -> int:
        return ceil_div(self.chunk_count, tiles)

    def dump(self) -> dict:
        d = asdict(self)
        d["chain_step"] = self.chain_step.dump() if self.chain_step else None
        d["fused"] = [f.dump() for f in self.fused]
        return d


def dumps(decomps: Sequence[WorkDecomposition]) -> str:
    return json.dumps([d.dump() for d in decomps], indent=1)


# ---------------------------------------------------------------- GEMM core

@dataclass(frozen=True)
class _GemmShape:
    """A batched GEMM with pluggable panel footprints (convs reuse this)."""
    M: int
    N: int
    K: int
    batch: int = 1
    n_min: int = 1  # minimum chunk extent along N
    # Bytes fetched into L1 per chunk: a_panel(m_ext, kp) and b_panel(m_ext, n_ext, kp).
    a_panel: object = None
    b_panel: object = None
    fixed: tuple[int, int] | None = None  # force (tm, tn)
    extra_alu_per_acc: int = 0  # fused pointwise epilogue work
    b_resident_limit: int = 0  # B panel stays in L1 across a chain when it fits


def _gemm_candidate(shape: _GemmShape, tm: int, tn: int, kvec: bool, cfg: MachineConfig,
                    dtype: DataType) -> dict:
    mk = make_microkernel(tm, tn, dtype, cfg, kvec)
    v = mk.vector_elems
    ib = dtype.input_bytes
    m_ext = 1 if kvec else tm * v
    # Minimum N tiling only constrains the multi-broadcast (M-vectorized) form.
    inv = 1 if kvec else ceil_div(shape.n_min, tn)
    n_ext = tn * inv
    ksteps = ceil_div(shape.K, mk.tk)
    kp = ksteps * mk.tk
    alu, mem = mk.slots(ksteps)
    alu = (alu + shape.extra_alu_per_acc * mk.acc_regs) * inv
    mem = mem * inv
    a_bytes = shape.a_panel(m_ext, kp) if shape.a_panel else m_ext * kp * ib
    b_bytes = shape.b_panel(m_ext, n_ext, kp) if shape.b_panel else n_ext * kp * ib
    resident = 0 < b_bytes <= shape.b_resident_limit
    if resident:
        b_bytes = 0
    out_bytes = min(m_ext, shape.M) * n_ext * ib
    llc = a_bytes + b_bytes + out_bytes
    fill = cfg.llc_fill_bytes_per_cycle_per_tile
    cycles = max(alu, mem, math.ceil(llc / fill))
    chunks = ceil_div(shape.M, m_ext) * ceil_div(shape.N, n_ext) * shape.batch
    return {"mk": mk, "chunks": chunks, "cycles": cycles, "alu": alu, "mem": mem,
            "llc": llc, "work": 2 * m_ext * n_ext * kp,
            "ksteps": ksteps * inv, "resident": resident,
            "cost": ceil_div(chunks, cfg.tiles) * cycles}


def _plan_gemm(shape: _GemmShape, cfg: MachineConfig, dtype: DataType, shrink: bool) -> dict:
    """Pick the tile for a GEMM-like operator.

    With ``shrink`` chunks are made as small as possible while loads stay hidden
    behind FMAs, taking the tile with the shortest critical path (waves x chunk
    cycles). Without it the register-optimal tile is used.
    """
    kvec, cands = _tile_candidates(shape.M, shape.N, cfg, dtype)
    if shape.fixed is not None:
        return _gemm_candidate(shape, *shape.fixed, kvec, cfg, dtype)
    r = dtype.accumulator_ratio
    if not shrink:
        tm, tn = _register_optimal(cands, r)
        return _gemm_candidate(shape, tm, tn, kvec, cfg, dtype)
    evaluated = [_gemm_candidate(shape, tm, tn, kvec, cfg, dtype) for tm, tn in cands]
    hidden = [c for c in evaluated if c["mk"].loads_per_kstep <= c["mk"].fmas_per_kstep]
    pool = hidden or evaluated
    return min(pool, key=lambda c: (c["cost"], -c["mk"].acc_regs,
                                    c["mk"].tm % r != 0, -c["mk"].tm))


def _decomp_from_plan(kind: str, plan: dict, ideal: int, traffic: Traffic,
                      inflation=(), flags=(), passes: int = 1) -> WorkDecomposition:
    padded = plan["chunks"] * plan["work"]
    eff = min(1.0, ideal / padded) if padded else 1.0
    if plan.get("resident"):
        flags = tuple(flags) + ("l1-resident-weights",)
    return WorkDecomposition(kind, plan["chunks"], plan["cycles"], plan["alu"], plan["mem"],
                             plan["llc"], plan["work"], ideal, plan["mk"], eff, traffic,
                             read_inflation=tuple(inflation), flags=tuple(flags), passes=passes)


def _io_bytes(node: OperatorNode, tensors) -> tuple[list[float], float]:
    if not tensors:
        return [], 0.0
    reads = [tensors[t].nbytes for t in node.inputs]
    writes = float(sum(tensors[t].nbytes for t in node.outputs))
    return reads, writes


def _traffic(plan: dict, cfg: MachineConfig, reads: list[float], writes: float,
             inflation=()) -> Traffic:
    infl = dict(inflation)
    dram_read = sum(b * infl.get(i, 1.0) for i, b in enumerate(reads))
    vec_bytes = cfg.simd_bits // 8
    l1 = plan["chunks"] * plan["mem"] * vec_bytes
    return Traffic(l1, plan["chunks"] * plan["llc"], dram_read, writes)


# ---------------------------------------------------------------- MatMul

def _line_panel(ib: int, line: int):
    def b_panel(m_ext, n_ext, kp):
        return kp * ceil_div(n_ext * ib, line) * line
    return b_panel


def map_matmul(node: OperatorNode, cfg: MachineConfig, tensors=None,
               shrink: bool = True) -> WorkDecomposition:
    p = node.params
    dt = node.dtype
    v = cfg.vector_elems(dt)
    n_min, b_panel, inflation, flags = 1, None, [], []
    if p["layout"] == "MKKN" and p["M"] > 1:
        # B rows are N-contiguous: a chunk narrower than a vector wastes fetched lines.
        n_min = min(v, p["N"])
        b_panel = _line_panel(dt.input_bytes, cfg.line_bytes)
        if p["N"] < v:
            flags.append("min-tiling-padding")
            inflation.append((1, v / p["N"]))
    shape = _GemmShape(p["M"], p["N"], p["K"], p["batch"], n_min, b_panel=b_panel)
    plan = _plan_gemm(shape, cfg, dt, shrink)
    reads, writes = _io_bytes(node, tensors)
    if len(reads) < 2:
        inflation = []
    return _decomp_from_plan("MatMul", plan, op_count(node),
                             _traffic(plan, cfg, reads, writes, inflation), inflation, flags)


# ---------------------------------------------------------------- Conv2D

def _conv_reduction(C: int, R: int, S: int, v: int, r: int) -> tuple[int, str]:
    """Padded reduction length, repacking filter-major only when strictly better."""
    direct = ceil_div(C, v) * v * R * S
    repacked = ceil_div(C * R * S, r) * r
    if repacked < direct:
        return repacked, "repacked"
    return direct, "direct"


def conv_gemm_shape(node: OperatorNode, cfg: MachineConfig) -> tuple[_GemmShape, list[str]]:
    """Forward conv as GEMM: output channels x output pixels, reduced over C*R*S."""
    p = node.params
    dt = node.dtype
    v = cfg.vector_elems(dt)
    r = dt.accumulator_ratio
    ib = dt.input_bytes
    g = p["groups"]
    n_pix = p["N"] * node.P * node.Q
    R, S, stride = p["R"], p["S"], p["stride"]

    def patch_cols(n_ext):
        # Input columns touched by n_ext adjacent output pixels of one row.
        return (n_ext - 1) * stride + S

    if g == 1:
        kred, strategy = _conv_reduction(p["C"], R, S, v, r)
        if strategy == "repacked":
            b_panel = None
        else:
            cpad = kred // (R * S)

            def b_panel(m_ext, n_ext, kp):
                return cpad * R * patch_cols(n_ext) * ib
        return _GemmShape(p["K"], n_pix, kred, 1, b_panel=b_panel), [strategy]
    if g == p["C"] == p["K"]:
        # Depthwise: one channel per lane, filter taps form the reduction.
        def b_panel(m_ext, n_ext, kp):
            return m_ext * R * patch_cols(n_ext) * ib
        return _GemmShape(p["C"], n_pix, R * S, 1, b_panel=b_panel), ["depthwise"]
    return _GemmShape(p["K"] // g, n_pix, (p["C"] // g) * R * S, g), ["grouped"]


def map_conv2d(node: OperatorNode, cfg: MachineConfig, tensors=None,
               shrink: bool = True) -> WorkDecomposition:
    shape, flags = conv_gemm_shape(node, cfg)
    plan = _plan_gemm(shape, cfg, node.dtype, shrink)
    reads, writes = _io_bytes(node, tensors)
    return _decomp_from_plan("Conv2D", plan, op_count(node),
                             _traffic(plan, cfg, reads, writes), (), flags)


def _as_forward(node: OperatorNode, **params) -> OperatorNode:
    merged = {k: v for k, v in node.params.items() if k != "act"}
    merged.update(params)
    return OperatorNode(node.id, "Conv2D", merged, node.inputs, node.outputs, node.dtype)


def map_conv2d_di(node: OperatorNode, cfg: MachineConfig, tensors=None,
                  shrink: bool = True) -> WorkDecomposition:
    """Input gradient in stride x stride x C_b chunks over the input feature map."""
    p = node.params
    dt = node.dtype
    s = p["stride"]
    reads, writes = _io_bytes(node, tensors)
    if p["groups"] != 1:
        # Depthwise/grouped backward data is the same per-channel stencil as forward.
        plan = _plan_gemm(conv_gemm_shape(_as_forward(node), cfg)[0], cfg, dt, shrink)
        return _decomp_from_plan("Conv2DdI", plan, op_count(node),
                                 _traffic(plan, cfg, reads, writes), (), ("grouped",))
    if s == 1:
        # Unit stride: a forward conv of dY with the flipped filter.
        flipped = _as_forward(node, C=p["K"], K=p["C"], H=node.P, W=node.Q,
                              pad=p["R"] - 1 - p["pad"])
        plan = _plan_gemm(conv_gemm_shape(flipped, cfg)[0], cfg, dt, shrink)
        return _decomp_from_plan("Conv2DdI", plan, op_count(node),
                                 _traffic(plan, cfg, reads, writes), (), ("unit-stride",))
    ib = dt.input_bytes
    R, S, K, C = p["R"], p["S"], p["K"], p["C"]
    taps = K * ceil_div(R, s) * ceil_div(S, s)
    pix = s * s
    budget_tn = (cfg.vrf_regs - SCRATCH_REGS - 1) // 2
    passes = ceil_div(pix, budget_tn)
    tn = ceil_div(pix, passes)

    def a_panel(m_ext, kp):
        return m_ext * K * R * S * ib

    def b_panel(m_ext, n_ext, kp):
        return K * ceil_div(R + s - 1, s) * ceil_div(S + s - 1, s) * ib

    shape = _GemmShape(C, pix, taps, p["N"] * ceil_div(p["H"], s) * ceil_div(p["W"], s),
                       n_min=pix, a_panel=a_panel, b_panel=b_panel, fixed=(1, tn))
    plan = _plan_gemm(shape, cfg, dt, shrink)
    return _decomp_from_plan("Conv2DdI", plan, op_count(node),
                             _traffic(plan, cfg, reads, writes), (), ("strided",), passes)


def map_conv2d_dw(node: OperatorNode, cfg: MachineConfig, tensors=None,
                  shrink: bool = True) -> WorkDecomposition:
    """Weight gradient, one filter pixel per chunk, reduced over N*P*Q."""
    p = node.params
    dt = node.dtype
    v = cfg.vector_elems(dt)
    reads, writes = _io_bytes(node, tensors)
    red = p["N"] * node.P * node.Q
    g = p["groups"]
    rs = p["R"] * p["S"]
    if g == p["C"] == p["K"] and g > 1:
        shape = _GemmShape(p["C"], 1, red, rs)
        flags = ("depthwise",)
    else:
        fixed, n_min = None, 1
        if not shrink:
            # Block form: C_b x C_b filter block per pixel, split into register-sized passes.
            tn_max = (cfg.vrf_regs - SCRATCH_REGS - 1) // 2
            passes = ceil_div(v, tn_max)
            fixed, n_min = (1, ceil_div(v, passes)), v
        shape = _GemmShape(p["C"] // g, p["K"] // g, red, rs * g, n_min, fixed=fixed)
        flags = ()
    plan = _plan_gemm(shape, cfg, dt, shrink)
    return _decomp_from_plan("Conv2DdW", plan, op_count(node),
                             _traffic(plan, cfg, reads, writes), (), flags)


# ---------------------------------------------------------------- element-wise

# Vector ALU ops per output vector.
ELEMENTWISE_ALU_COST = {
    "Relu": 1, "Add": 1, "AddRelu": 2, "Copy": 1, "Concat": 1, "Scatter": 1,
    "Tanh": 8, "Sigmoid": 8, "Gelu": 10, "Softmax": 6, "LayerNorm": 8, "AddLayerNorm": 9,
    "ReluGrad": 2, "TanhGrad": 3, "SigmoidGrad": 3, "GeluGrad": 6, "SoftmaxGrad": 6,
    "LayerNormGrad": 12, "AvgPoolGrad": 1, "MaxPoolGrad": 2,
}


def elementwise_alu_cost(op: str, arity: int) -> int:
    if op in ("MaxPool", "AvgPool"):
        return max(1, arity - 1)
    return ELEMENTWISE_ALU_COST.get(op, 2)


def map_elementwise(node: OperatorNode, cfg: MachineConfig, tensors=None,
                    shrink: bool = True) -> WorkDecomposition:
    p = node.params
    dt = node.dtype
    ib = dt.input_bytes
    # Element-wise kernels operate on full-width vectors of the stored type.
    v = cfg.simd_bits // dt.input_bits
    count = p["count"]
    arity = p.get("arity", 1)
    op = p.get("op", "Requantize")
    vectors = ceil_div(count, v)
    chunks = max(1, min(cfg.tiles, vectors))
    per_chunk = ceil_div(vectors, chunks)
    alu = per_chunk * elementwise_alu_cost(op, arity)
    mem = per_chunk * (arity + 1)
    llc = per_chunk * v * (arity * ib + ib)
    cycles = max(alu, mem, math.ceil(llc / cfg.llc_fill_bytes_per_cycle_per_tile))
    padded = chunks * per_chunk * v
    eff = count / padded
    reads, writes = _io_bytes(node, tensors)
    if not tensors:
        reads, writes = [arity * count * ib], float(count * ib)
    traffic = Traffic(chunks * mem * (cfg.simd_bits // 8), chunks * llc, float(sum(reads)),
                      writes)
    work = per_chunk * v * arity
    return WorkDecomposition(node.kind, chunks, cycles, alu, mem, llc, work, op_count(node),
                             None, eff, traffic)


# ---------------------------------------------------------------- LSTM

LSTM_POINTWISE_ALU_PER_ACC = 3
LSTM_GRAD_POINTWISE_ALU_PER_ACC = 4


def lstm_chain_key(node: OperatorNode) -> tuple:
    """Nodes of one hidden chain share this key (kind, direction and recurrent weight)."""
    w = node.inputs[4] if not node.params["grad"] else node.inputs[2]
    return (node.params["grad"], w)


def map_lstm_sequence(nodes: Sequence[OperatorNode], cfg: MachineConfig, tensors=None,
                      shrink: bool = True) -> WorkDecomposition:
    """Batched input-weight products, then a sequential hidden chain."""
    if not nodes:
        raise ValueError("empty LSTM chain")
    p = nodes[0].params
    dt = nodes[0].dtype
    seq = len(nodes)
    b, i_dim, h = p["batch"], p["I"], p["H"]
    ideal = sum(op_count(n) for n in nodes)
    limit = cfg.l1_bytes // 2
    if p["grad"]:
        step_shape = _GemmShape(b, h, 4 * h, extra_alu_per_acc=LSTM_GRAD_POINTWISE_ALU_PER_ACC,
                                b_resident_limit=limit)
    else:
        step_shape = _GemmShape(b, 4 * h, h, extra_alu_per_acc=LSTM_POINTWISE_ALU_PER_ACC,
                                b_resident_limit=limit)
    step_plan = _plan_gemm(step_shape, cfg, dt, shrink)
    step_ideal = 2 * step_shape.M * step_shape.N * step_shape.K
    step = _decomp_from_plan("LstmStep", step_plan, step_ideal, Traffic(
        step_plan["chunks"] * step_plan["mem"] * (cfg.simd_bits // 8),
        step_plan["chunks"] * step_plan["llc"]))
    reads, writes = _group_io(nodes, tensors)
    if p["grad"]:
        # No batched phase: the first chain step stands in for it.
        plan, chain = step_plan, seq - 1
    else:
        plan = _plan_gemm(_GemmShape(seq * b, 4 * h, i_dim), cfg, dt, shrink)
        chain = seq
    padded = plan["chunks"] * plan["work"] + chain * step.padded_ops
    matmul_ideal = (seq * step_ideal if p["grad"]
                    else 2 * seq * b * 4 * h * i_dim + seq * step_ideal)
    eff = min(1.0, matmul_ideal / padded)
    vec_bytes = cfg.simd_bits // 8
    traffic = Traffic(plan["chunks"] * plan["mem"] * vec_bytes + chain * step.traffic.l1_bytes,
                      plan["chunks"] * plan["llc"] + chain * step.traffic.llc_bytes,
                      reads, writes)
    return WorkDecomposition("LstmSequence", plan["chunks"], plan["cycles"], plan["alu"],
                             plan["mem"], plan["llc"], plan["work"], ideal, plan["mk"], eff,
                             traffic, chain_length=chain, chain_step=step,
                             flags=("hidden-chain",) + step.flags)


def _group_io(nodes: Sequence[OperatorNode], tensors) -> tuple[float, float]:
    if not tensors:
        return 0.0, 0.0
    produced = {t for n in nodes for t in n.outputs}
    ins = {t for n in nodes for t in n.inputs if t not in produced}
    return (float(sum(tensors[t].nbytes for t in ins)),
            float(sum(tensors[t].nbytes for t in produced)))


# ---------------------------------------------------------------- dispatch

_MAPPERS = {
    "MatMul": map_matmul,
    "Conv2D": map_conv2d,
    "Conv2DdI": map_conv2d_di,
    "Conv2DdW": map_conv2d_dw,
    "Elementwise": map_elementwise,
    "Requantize": map_elementwise,
}


def decompose(node: OperatorNode, cfg: MachineConfig, tensors=None,
              shrink: bool = True) -> WorkDecomposition:
    if node.kind == "LstmCell":
        return map_lstm_sequence([node], cfg, tensors, shrink)
    return _MAPPERS[node.kind](node, cfg, tensors, shrink)


# Ops needing whole rows or windows, which an output chunk does not hold.
UNFUSABLE_OPS = frozenset({"MaxPool", "AvgPool", "Softmax", "SoftmaxGrad", "LayerNorm",
                           "AddLayerNorm", "LayerNormGrad", "Scatter", "Concat"})


def _fusable(node: OperatorNode, producer: OperatorNode) -> bool:
    """An element-wise op can run in its producer's epilogue when it consumes that
    producer's output element for element."""
    if node.kind != "Elementwise" or node.params["op"] in UNFUSABLE_OPS:
        return False
    if producer.kind == "LstmCell":
        return False
    return bool(set(node.inputs) & set(producer.outputs))


def group_nodes(nodes: Sequence[OperatorNode], fuse: bool = True) -> list[list[OperatorNode]]:
    """Split a node list into scheduling units.

    Consecutive steps of one LSTM chain form a unit, and with ``fuse`` an
    element-wise op joins the unit of the operator producing its input.
    """
    groups: list[list[OperatorNode]] = []
    for node in nodes:
        prev = groups[-1] if groups else None
        if (node.kind == "LstmCell" and prev and prev[0].kind == "LstmCell"
                and lstm_chain_key(prev[0]) == lstm_chain_key(node)):
            prev.append(node)
        elif fuse and prev and _fusable(node, prev[-1]):
            prev.append(node)
        else:
            groups.append([node])
    return groups


def decompose_group(group: Sequence[OperatorNode], cfg: MachineConfig, tensors=None,
                    shrink: bool = True) -> WorkDecomposition:
    if group[0].kind == "LstmCell":
        return map_lstm_sequence(group, cfg, tensors, shrink)
    head = decompose(group[0], cfg, tensors, shrink)
    if len(group) == 1:
        return head
    return replace(head, fused=tuple(decompose(n, cfg, tensors, shrink) for n in group[1:]),
                   ideal_ops=head.ideal_ops + sum(op_count(n) for n in group[1:]))
