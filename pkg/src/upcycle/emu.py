"""Functional emulator for the narrow SIMD ISA and the matmul kernels emitted for it.

Registers and memory are raw bytes. A vector register is viewed as ``V`` 32-bit
accumulator lanes, or as ``V`` groups of ``r`` narrow inputs, so one FMA performs
``acc[i] += sum_j a[i, j] * b[i, j]`` over ``r`` consecutive reduction elements.
Broadcast operands simply hold the same group in every lane.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .arch import MachineConfig
from .mapping import Microkernel, ceil_div, select_matmul_tiling
from .workload import DataType, OperatorNode

ALU_OPS = frozenset({"vfma_i8_i32", "vfma_f16_f32", "vfma_f32", "vadd", "vreduce_add",
                     "vrequant"})
MEM_OPS = frozenset({"vload", "vload_strided", "vload_multibroadcast", "vstore"})
FREE_OPS = frozenset({"prefetch", "barrier_hint"})
OPCODES = ALU_OPS | MEM_OPS | FREE_OPS


class EmuError(RuntimeError):
    """Out-of-bounds access, bad register index or malformed instruction."""


@dataclass(frozen=True)
class VInstruction:
    opcode: str
    dst: tuple[int, ...] = ()
    src: tuple[int, ...] = ()
    addr: int = 0
    stride: int = 0
    nbytes: int = 0
    accumulate: bool = True  # FMA: False overwrites the accumulator instead of adding
    shift: int = 0  # requantize right shift

    def __post_init__(self):
        if self.opcode not in OPCODES:
            raise EmuError(f"unknown opcode {self.opcode}")


@dataclass
class EmuState:
    vrf: np.ndarray  # (regs, simd_bytes) uint8
    memory: np.ndarray  # uint8
    alu_slots: int = 0
    mem_slots: int = 0

    @property
    def cycles(self) -> int:
        return max(self.alu_slots, self.mem_slots)


@dataclass(frozen=True)
class ExecResult:
    memory: np.ndarray
    cycle_count: int
    alu_slots: int
    mem_slots: int


_NARROW = {DataType.Int8: np.int8, DataType.FP16: np.float16, DataType.FP32: np.float32}
_ACC = {DataType.Int8: np.int32, DataType.FP16: np.float32, DataType.FP32: np.float32}
_FMA_OPCODE = {DataType.Int8: "vfma_i8_i32", DataType.FP16: "vfma_f16_f32",
               DataType.FP32: "vfma_f32"}
_FMA_TYPES = {"vfma_i8_i32": DataType.Int8, "vfma_f16_f32": DataType.FP16,
              "vfma_f32": DataType.FP32}


def execute(instrs: Sequence[VInstruction], memory: np.ndarray, cfg: MachineConfig,
            acc_dtype: DataType = DataType.Int8) -> ExecResult:
    """Run ``instrs`` on a copy of ``memory``; ``acc_dtype`` picks integer or float lanes
    for the type-generic ALU ops (vadd, vreduce_add, vrequant)."""
    simd_bytes = cfg.simd_bits // 8
    st = EmuState(np.zeros((cfg.vrf_regs, simd_bytes), np.uint8),
                  np.array(memory, dtype=np.uint8, copy=True))
    mem = st.memory
    size = mem.size
    regs = cfg.vrf_regs
    acc_t = _ACC[acc_dtype]

    def check_regs(idx):
        for r in idx:
            if not 0 <= r < regs:
                raise EmuError(f"register index {r} out of range (vrf has {regs})")

    def check_mem(addr, n):
        if addr < 0 or addr + n > size:
            raise EmuError(f"memory access [{addr}, {addr + n}) outside image of {size} bytes")

    for ins in instrs:
        op = ins.opcode
        check_regs(ins.dst)
        check_regs(ins.src)
        if op in FREE_OPS:
            continue
        if op in MEM_OPS:
            st.mem_slots += 1
        else:
            st.alu_slots += 1
        if op == "vload":
            n = ins.nbytes or simd_bytes
            check_mem(ins.addr, n)
            st.vrf[ins.dst[0]] = 0
            st.vrf[ins.dst[0], :n] = mem[ins.addr:ins.addr + n]
        elif op == "vload_strided":
            # One issue slot fills several registers from evenly strided lines.
            n = ins.nbytes or simd_bytes
            for i, d in enumerate(ins.dst):
                a = ins.addr + i * ins.stride
                check_mem(a, n)
                st.vrf[d] = 0
                st.vrf[d, :n] = mem[a:a + n]
        elif op == "vload_multibroadcast":
            # Consecutive groups of nbytes from one line, each broadcast to its own register.
            n = ins.nbytes
            total = n * len(ins.dst)
            check_mem(ins.addr, total)
            for i, d in enumerate(ins.dst):
                group = mem[ins.addr + i * n: ins.addr + (i + 1) * n]
                st.vrf[d] = np.tile(group, simd_bytes // n)
        elif op == "vstore":
            n = ins.nbytes  # explicit; zero spends the slot without writing
            check_mem(ins.addr, n)
            mem[ins.addr:ins.addr + n] = st.vrf[ins.src[0], :n]
        elif op in _FMA_TYPES:
            dt = _FMA_TYPES[op]
            narrow = _NARROW[dt]
            r = dt.accumulator_ratio
            a = st.vrf[ins.src[0]].view(narrow).reshape(-1, r)
            b = st.vrf[ins.src[1]].view(narrow).reshape(-1, r)
            acc = st.vrf[ins.dst[0]].view(_ACC[dt])
            if dt is DataType.Int8:
                dot = (a.astype(np.int64) * b.astype(np.int64)).sum(axis=1)
                base = acc.astype(np.int64) if ins.accumulate else 0
                acc[:] = (base + dot).astype(np.int32)
            else:
                # Products of narrow inputs are exact in fp32; one rounding per accumulate.
                dot = (a.astype(np.float64) * b.astype(np.float64)).sum(axis=1)
                base = acc.astype(np.float64) if ins.accumulate else 0.0
                acc[:] = (base + dot).astype(np.float32)
        elif op == "vadd":
            x = st.vrf[ins.src[0]].view(acc_t)
            y = st.vrf[ins.src[1]].view(acc_t)
            with np.errstate(over="ignore"):
                st.vrf[ins.dst[0]].view(acc_t)[:] = x + y
        elif op == "vreduce_add":
            x = st.vrf[ins.src[0]].view(acc_t)
            out = np.zeros(simd_bytes // 4, acc_t)
            if acc_t is np.int32:
                out[0] = np.int64(x.astype(np.int64).sum()).astype(np.int32)
            else:
                total = np.float32(0)
                for val in x:
                    total = np.float32(total + val)
                out[0] = total
            st.vrf[ins.dst[0]] = out.view(np.uint8)
        elif op == "vrequant":
            x = st.vrf[ins.src[0]].view(acc_t)
            out = np.zeros(simd_bytes, np.uint8)
            if acc_t is np.int32:
                v64 = x.astype(np.int64)
                if ins.shift > 0:
                    v64 = (v64 + (1 << (ins.shift - 1))) >> ins.shift
                q = np.clip(v64, -128, 127).astype(np.int8)
                out[:q.size] = q.view(np.uint8)
            else:
                h = x.astype(np.float16)
                out[:h.size * 2] = h.view(np.uint8)
            st.vrf[ins.dst[0]] = out
    return ExecResult(st.memory, st.cycles, st.alu_slots, st.mem_slots)


def instruction_census(instrs: Sequence[VInstruction]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for ins in instrs:
        counts[ins.opcode] = counts.get(ins.opcode, 0) + 1
    counts["alu_slots"] = sum(1 for i in instrs if i.opcode in ALU_OPS)
    counts["mem_slots"] = sum(1 for i in instrs if i.opcode in MEM_OPS)
    return counts


# ---------------------------------------------------------------- kernels

@dataclass(frozen=True)
class MatmulLayout:
    """Byte addresses of the packed operand panels and the output in a memory image."""
    M: int
    N: int
    K: int
    dtype: DataType
    mk: Microkernel
    a_addr: int
    b_addr: int
    c_addr: int
    out_bytes: int  # bytes per stored output element
    size: int
    m_blocks: int
    n_blocks: int
    ksteps: int

    @property
    def kp(self) -> int:
        return self.ksteps * self.mk.tk


@dataclass
class MatmulKernel:
    instructions: list[VInstruction]
    layout: MatmulLayout
    loop_body_fmas: int
    loop_body_loads: int
    chunks: int

    def census(self) -> dict[str, int]:
        return instruction_census(self.instructions)


def _layout(M: int, N: int, K: int, mk: Microkernel, dtype: DataType) -> MatmulLayout:
    ib = dtype.input_bytes
    v = mk.vector_elems
    ksteps = ceil_div(K, mk.tk)
    if mk.vectorized_dim == "K":
        m_blocks, n_blocks = M, ceil_div(N, mk.tn)
        a_bytes = M * ksteps * mk.tk * ib
        b_bytes = n_blocks * mk.tn * ksteps * mk.tk * ib
    else:
        m_blocks, n_blocks = ceil_div(M, mk.tm * v), ceil_div(N, mk.tn)
        a_bytes = m_blocks * ksteps * mk.tm * v * mk.tk * ib
        b_bytes = n_blocks * ksteps * mk.tn * mk.tk * ib
    out_bytes = ib if mk.downconvert else 4
    c_bytes = M * N * out_bytes
    a_addr = 0
    b_addr = a_addr + a_bytes
    c_addr = b_addr + b_bytes
    return MatmulLayout(M, N, K, dtype, mk, a_addr, b_addr, c_addr, out_bytes,
                        c_addr + c_bytes, m_blocks, n_blocks, ksteps)


def pack_operands(A: np.ndarray, B: np.ndarray, layout: MatmulLayout) -> np.ndarray:
    """Lay A and B out as zero-padded, line-aligned panels in kernel order."""
    mk = layout.mk
    dt = layout.dtype
    narrow = _NARROW[dt]
    M, N, K = layout.M, layout.N, layout.K
    kp = layout.kp
    r = mk.tk if mk.vectorized_dim == "M" else 1
    v = mk.vector_elems
    mem = np.zeros(layout.size, np.uint8)
    if mk.vectorized_dim == "K":
        ap = np.zeros((M, kp), narrow)
        ap[:, :K] = A
        bp = np.zeros((layout.n_blocks * mk.tn, kp), narrow)
        bp[:N, :K] = B.T
    else:
        mp = layout.m_blocks * mk.tm * v
        a_full = np.zeros((mp, kp), narrow)
        a_full[:M, :K] = A
        # [m_block][kstep][tm*V rows][r]
        ap = a_full.reshape(layout.m_blocks, mk.tm * v, layout.ksteps, r).transpose(0, 2, 1, 3)
        npad = layout.n_blocks * mk.tn
        b_full = np.zeros((kp, npad), narrow)
        b_full[:K, :N] = B
        # [n_block][kstep][tn cols][r]
        bp = b_full.reshape(layout.ksteps, r, layout.n_blocks, mk.tn).transpose(2, 0, 3, 1)
    a_bytes = np.ascontiguousarray(ap).view(np.uint8).ravel()
    b_bytes = np.ascontiguousarray(bp).view(np.uint8).ravel()
    mem[layout.a_addr:layout.a_addr + a_bytes.size] = a_bytes
    mem[layout.b_addr:layout.b_addr + b_bytes.size] = b_bytes
    return mem


def emit_matmul_kernel(mk: Microkernel, shape: tuple[int, int, int], dtype: DataType,
                       cfg: MachineConfig, shift: int = 0) -> MatmulKernel:
    """Emit the full loop nest (every output chunk) for C = A @ B."""
    M, N, K = shape
    if mk.regs_used > cfg.vrf_regs:
        raise ValueError(f"tile {mk.tm}x{mk.tn} needs {mk.regs_used} registers, "
                         f"only {cfg.vrf_regs} available")
    lay = _layout(M, N, K, mk, dtype)
    simd_bytes = cfg.simd_bits // 8
    ib = dtype.input_bytes
    fma = _FMA_OPCODE[dtype]
    v = mk.vector_elems
    tm, tn = mk.tm, mk.tn
    acc_regs = [list(range(i * tn, (i + 1) * tn)) for i in range(tm)]
    a_regs = list(range(tm * tn, tm * tn + tm))
    b_regs = list(range(tm * tn + tm, tm * tn + tm + tn))
    prog: list[VInstruction] = []
    ob = lay.out_bytes
    body_fmas = body_loads = 0
    if mk.vectorized_dim == "K":
        kstep_bytes = mk.tk * ib  # one full vector of reduction elements
        for m in range(M):
            for nb in range(lay.n_blocks):
                for ks in range(lay.ksteps):
                    a_addr = lay.a_addr + (m * lay.ksteps + ks) * kstep_bytes
                    prog.append(VInstruction("vload", (a_regs[0],), addr=a_addr, nbytes=simd_bytes))
                    for j in range(tn):
                        col = nb * tn + j
                        b_addr = lay.b_addr + (col * lay.ksteps + ks) * kstep_bytes
                        prog.append(VInstruction("vload", (b_regs[j],), addr=b_addr,
                                                 nbytes=simd_bytes))
                    for j in range(tn):
                        prog.append(VInstruction(fma, (acc_regs[0][j],), (a_regs[0], b_regs[j]),
                                                 accumulate=ks > 0))
                for j in range(tn):
                    acc = acc_regs[0][j]
                    prog.append(VInstruction("vreduce_add", (acc,), (acc,)))
                    if mk.downconvert:
                        prog.append(VInstruction("vrequant", (acc,), (acc,), shift=shift))
                    col = nb * tn + j
                    # A padded column still spends its store slot but writes nothing.
                    nbytes = ob if col < N else 0
                    addr = lay.c_addr + (m * N + min(col, N - 1)) * ob
                    prog.append(VInstruction("vstore", (), (acc,), addr=addr, nbytes=nbytes))
        body_fmas, body_loads = tn, 1 + tn
        chunks = M * lay.n_blocks
        return MatmulKernel(prog, lay, body_fmas, body_loads, chunks)
    r = mk.tk
    line = cfg.line_bytes
    a_group = simd_bytes  # bytes of one packed A register (V lanes x r inputs)
    b_group = r * ib  # bytes of one broadcast B group
    b_per_line = line // b_group
    for mb in range(lay.m_blocks):
        for nb in range(lay.n_blocks):
            for ks in range(lay.ksteps):
                a_base = lay.a_addr + ((mb * lay.ksteps + ks) * tm) * a_group
                for i0 in range(0, tm, r):
                    dst = tuple(a_regs[i0:i0 + r])
                    prog.append(VInstruction("vload_strided", dst, addr=a_base + i0 * a_group,
                                             stride=a_group, nbytes=a_group))
                b_base = lay.b_addr + ((nb * lay.ksteps + ks) * tn) * b_group
                for j0 in range(0, tn, b_per_line):
                    dst = tuple(b_regs[j0:j0 + b_per_line])
                    prog.append(VInstruction("vload_multibroadcast", dst,
                                             addr=b_base + j0 * b_group, nbytes=b_group))
                for i in range(tm):
                    for j in range(tn):
                        prog.append(VInstruction(fma, (acc_regs[i][j],), (a_regs[i], b_regs[j]),
                                                 accumulate=ks > 0))
            for i in range(tm):
                for j in range(tn):
                    acc = acc_regs[i][j]
                    if mk.downconvert:
                        prog.append(VInstruction("vrequant", (acc,), (acc,), shift=shift))
                    prog.extend(_store_column(lay, mb, nb, i, j, acc, v, ob))
    body_fmas = tm * tn
    body_loads = ceil_div(tm, r) + ceil_div(tn, b_per_line)
    return MatmulKernel(prog, lay, body_fmas, body_loads, lay.m_blocks * lay.n_blocks)


def _store_column(lay: MatmulLayout, mb: int, nb: int, i: int, j: int, reg: int, v: int,
                  ob: int) -> list[VInstruction]:
    """Store the valid rows of one output column; C is column-major so a register lands
    contiguously. Padded lanes are clipped and fully padded columns write nothing."""
    col = nb * lay.mk.tn + j
    row0 = (mb * lay.mk.tm + i) * v
    valid_rows = max(0, min(v, lay.M - row0))
    if col >= lay.N or valid_rows == 0:
        return [VInstruction("vstore", (), (reg,), addr=lay.c_addr, nbytes=0)]
    addr = lay.c_addr + (col * lay.M + row0) * ob
    return [VInstruction("vstore", (), (reg,), addr=addr, nbytes=valid_rows * ob)]


def unpack_output(memory: np.ndarray, layout: MatmulLayout) -> np.ndarray:
    """Read C (M x N) back from the image in its stored element type."""
    mk = layout.mk
    n = layout.M * layout.N
    raw = memory[layout.c_addr:layout.c_addr + n * layout.out_bytes]
    if layout.out_bytes == 4:
        vals = raw.view(np.int32 if layout.dtype is DataType.Int8 else np.float32)
    else:
        vals = raw.view(_NARROW[layout.dtype])
    if mk.vectorized_dim == "K":
        return vals.reshape(layout.M, layout.N).copy()
    return vals.reshape(layout.N, layout.M).T.copy()


@dataclass(frozen=True)
class MatmulRun:
    output: np.ndarray
    kernel: MatmulKernel
    result: ExecResult


def run_matmul(A: np.ndarray, B: np.ndarray, cfg: MachineConfig, dtype: DataType,
               mk: Microkernel | None = None, shift: int = 0,
               requantize: bool = True) -> MatmulRun:
    """Pack, emulate and unpack one MatMul. ``requantize=False`` stores raw accumulators."""
    dtype = DataType.parse(dtype)
    M, K = A.shape
    K2, N = B.shape
    if K != K2:
        raise ValueError(f"inner dimensions differ: {A.shape} @ {B.shape}")
    if mk is None:
        mk = select_matmul_tiling(M, N, K, cfg, dtype)
    if not requantize:
        mk = replace(mk, downconvert=False)
    kernel = emit_matmul_kernel(mk, (M, N, K), dtype, cfg, shift=shift)
    image = pack_operands(A, B, kernel.layout)
    res = execute(kernel.instructions, image, cfg, acc_dtype=dtype)
    return MatmulRun(unpack_output(res.memory, kernel.layout), kernel, res)


# ---------------------------------------------------------------- reference

def requantize_int32(acc: np.ndarray, shift: int) -> np.ndarray:
    """Round-half-up arithmetic right shift, then saturate to int8."""
    v = np.asarray(acc, dtype=np.int64)
    if shift > 0:
        v = (v + (1 << (shift - 1))) >> shift
    return np.clip(v, -128, 127).astype(np.int8)


def reference_matmul(A: np.ndarray, B: np.ndarray, dtype: DataType) -> np.ndarray:
    """Int8: exact int32 (wrapping) accumulators. Floats: float64 product of the inputs."""
    if DataType.parse(dtype) is DataType.Int8:
        return (A.astype(np.int64) @ B.astype(np.int64)).astype(np.int32)
    return A.astype(np.float64) @ B.astype(np.float64)


def reference_conv2d(x: np.ndarray, w: np.ndarray, stride: int = 1, pad: int = 0,
                     dtype: DataType = DataType.Int8) -> np.ndarray:
    """Direct NHWC x RSCK convolution by shifted-window accumulation."""
    n, h, wd, c = x.shape
    r, s, c2, k = w.shape
    if c != c2:
        raise ValueError(f"channel mismatch {c} vs {c2}")
    acc_t = np.int64 if DataType.parse(dtype) is DataType.Int8 else np.float64
    xp = np.pad(x.astype(acc_t), ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    p = (h + 2 * pad - r) // stride + 1
    q = (wd + 2 * pad - s) // stride + 1
    out = np.zeros((n, p, q, k), acc_t)
    wk = w.astype(acc_t)
    for i in range(r):
        for j in range(s):
            win = xp[:, i:i + stride * (p - 1) + 1:stride, j:j + stride * (q - 1) + 1:stride, :]
            out += win @ wk[i, j]
    return out.astype(np.int32) if acc_t is np.int64 else out


_ELEMENTWISE_REF = {
    "Relu": lambda x: np.maximum(x, 0),
    "Add": lambda x, y: x + y,
    "Mul": lambda x, y: x * y,
    "AddRelu": lambda x, y: np.maximum(x + y, 0),
    "Tanh": np.tanh,
    "Sigmoid": lambda x: 1.0 / (1.0 + np.exp(-x)),
}


def reference_compute(node: OperatorNode, inputs: Sequence[np.ndarray]) -> np.ndarray:
    """Naive reference for MatMul, Conv2D and a few element-wise ops."""
    p = node.params
    if node.kind == "MatMul":
        A, B = inputs
        batch = p.get("batch", 1)
        if batch > 1:
            return np.stack([reference_matmul(A[i], B[i], node.dtype) for i in range(batch)])
        return reference_matmul(A, B, node.dtype)
    if node.kind == "Conv2D":
        x, w = inputs
        return reference_conv2d(x, w, p.get("stride", 1), p.get("pad", 0), node.dtype)
    if node.kind == "Elementwise":
        fn = _ELEMENTWISE_REF.get(p["op"])
        if fn is None:
            raise NotImplementedError(f"no reference for element-wise {p['op']}")
        return fn(*inputs)
    raise NotImplementedError(f"no reference for {node.kind}")
