"""Operator traces: typed tensors, shaped operator nodes, op counting and census."""

from __future__ import annotations

import enum
import json
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

TRACE_SCHEMA_VERSION = 1

MODES = ("inference", "training", "pretrain", "finetune")

# Element-wise activations counted as primary ops in the census (with their grads).
NAMED_ACTIVATIONS = frozenset({"Relu", "Tanh", "Sigmoid", "AddRelu"})

PRIMARY_KINDS = frozenset({"MatMul", "Conv2D", "Conv2DdI", "Conv2DdW", "LstmCell"})

# Per hidden unit: 3 sigmoid, 2 tanh, 3 mul, 1 add.
LSTM_POINTWISE_OPS = 9
LSTM_POINTWISE_GRAD_OPS = 14


class TraceError(ValueError):
    """Base class for trace validation failures."""


class TraceFormatError(TraceError):
    pass


class DanglingReferenceError(TraceError):
    pass


class TopologyError(TraceError):
    pass


class DifferentiationError(TraceError):
    pass


class DataType(enum.Enum):
    """Input type plus the width it accumulates into."""

    Int8 = ("Int8", 8, 32)
    FP16 = ("FP16", 16, 32)
    FP32 = ("FP32", 32, 32)

    def __init__(self, label: str, input_bits: int, accumulator_bits: int):
        self.label = label
        self.input_bits = input_bits
        self.accumulator_bits = accumulator_bits

    @property
    def input_bytes(self) -> int:
        return self.input_bits // 8

    @property
    def accumulator_ratio(self) -> int:
        return self.accumulator_bits // self.input_bits

    @classmethod
    def parse(cls, text: str | DataType) -> DataType:
        if isinstance(text, DataType):
            return text
        for dt in cls:
            if dt.label.lower() == str(text).lower():
                return dt
        raise TraceFormatError(f"unknown dtype {text!r}")


@dataclass(frozen=True)
class TensorSpec:
    id: str
    dims: tuple[int, ...]
    layout: str
    dtype: DataType
    role: str = "activation"  # activation | weight | input

    def __post_init__(self):
        if any(d < 1 for d in self.dims):
            raise TraceFormatError(f"tensor {self.id}: extents must be >= 1, got {self.dims}")
        if self.layout and len(self.layout) != len(self.dims):
            raise TraceFormatError(
                f"tensor {self.id}: layout {self.layout!r} does not name {len(self.dims)} dims")

    @property
    def elements(self) -> int:
        return math.prod(self.dims)

    @property
    def nbytes(self) -> int:
        return self.elements * self.dtype.input_bytes


KIND_PARAMS = {
    "MatMul": ("M", "N", "K"),
    "Conv2D": ("N", "H", "W", "C", "K", "R", "S", "stride", "pad"),
    "Conv2DdI": ("N", "H", "W", "C", "K", "R", "S", "stride", "pad"),
    "Conv2DdW": ("N", "H", "W", "C", "K", "R", "S", "stride", "pad"),
    "Elementwise": ("op", "count", "arity"),
    "LstmCell": ("I", "H"),
    "Requantize": ("count",),
}

PARAM_DEFAULTS = {
    "MatMul": {"batch": 1, "layout": "MKKN"},
    "Conv2D": {"groups": 1},
    "Conv2DdI": {"groups": 1},
    "Conv2DdW": {"groups": 1},
    "LstmCell": {"batch": 1, "grad": 0},
}


def conv_output_extent(size: int, window: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - window) // stride + 1


@dataclass(frozen=True)
class OperatorNode:
    id: str
    kind: str
    params: dict[str, Any] = field(hash=False, compare=True)
    inputs: tuple[str, ...] = ()
    outputs: tuple[str, ...] = ()
    dtype: DataType = DataType.Int8

    def __post_init__(self):
        if self.kind not in KIND_PARAMS:
            raise TraceFormatError(f"node {self.id}: unknown kind {self.kind!r}")
        params = dict(PARAM_DEFAULTS.get(self.kind, {}))
        params.update(self.params)
        missing = [p for p in KIND_PARAMS[self.kind] if p not in params]
        if missing:
            raise TraceFormatError(f"node {self.id}: missing params {missing}")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        if self.kind.startswith("Conv2D"):
            if self.P < 1 or self.Q < 1:
                raise TraceFormatError(f"node {self.id}: empty conv output")
        if op_count(self) <= 0:
            raise TraceFormatError(f"node {self.id}: op count must be positive")

    def __getitem__(self, key: str) -> Any:
        return self.params[key]

    @property
    def P(self) -> int:
        p = self.params
        return conv_output_extent(p["H"], p["R"], p["stride"], p["pad"])

    @property
    def Q(self) -> int:
        p = self.params
        return conv_output_extent(p["W"], p["S"], p["stride"], p["pad"])

    @property
    def shape_key(self) -> tuple:
        return (self.kind, tuple(sorted(self.params.items())))


def op_count(node: OperatorNode) -> int:
    """Operations in one node; a multiply-accumulate counts as two."""
    p = node.params
    kind = node.kind
    if kind == "MatMul":
        return 2 * p["batch"] * p["M"] * p["N"] * p["K"]
    if kind in ("Conv2D", "Conv2DdI", "Conv2DdW"):
        cin = p["C"] // p["groups"]
        return 2 * p["N"] * p["K"] * node.P * node.Q * cin * p["R"] * p["S"]
    if kind == "Elementwise":
        return p["arity"] * p["count"]
    if kind == "Requantize":
        return p["count"]
    if kind == "LstmCell":
        b, i, h = p["batch"], p["I"], p["H"]
        if p["grad"]:
            return 2 * b * 4 * h * h + LSTM_POINTWISE_GRAD_OPS * b * h
        return 2 * b * 4 * h * (i + h) + LSTM_POINTWISE_OPS * b * h
    raise TraceFormatError(f"unknown kind {kind}")


def is_primary(node: OperatorNode) -> bool:
    if node.kind in PRIMARY_KINDS:
        return True
    if node.kind == "Elementwise":
        op = node.params["op"]
        return op in NAMED_ACTIVATIONS or op.removesuffix("Grad") in NAMED_ACTIVATIONS
    return False


@dataclass(frozen=True)
class Trace:
    name: str
    mode: str
    batch: int
    nodes: tuple[OperatorNode, ...]
    tensors: dict[str, TensorSpec] = field(hash=False)
    seq_len: int | None = None
    model: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise TraceFormatError(f"unknown mode {self.mode!r}")
        if self.batch < 1:
            raise TraceFormatError("batch must be >= 1")
        object.__setattr__(self, "nodes", tuple(self.nodes))
        validate(self)

    @property
    def total_ops(self) -> int:
        return sum(op_count(n) for n in self.nodes)

    def producers(self) -> dict[str, int]:
        return {t: i for i, n in enumerate(self.nodes) for t in n.outputs}


def validate(trace: Trace) -> None:
    produced: set[str] = set()
    all_outputs = Counter(t for n in trace.nodes for t in n.outputs)
    dup = [t for t, c in all_outputs.items() if c > 1]
    if dup:
        raise TopologyError(f"tensors produced more than once: {dup[:5]}")
    ids = Counter(n.id for n in trace.nodes)
    dup_ids = [i for i, c in ids.items() if c > 1]
    if dup_ids:
        raise TraceFormatError(f"duplicate node ids: {dup_ids[:5]}")
    for node in trace.nodes:
        for t in node.inputs + node.outputs:
            if t not in trace.tensors:
                raise DanglingReferenceError(f"node {node.id} references undeclared tensor {t}")
        for t in node.inputs:
            if t in all_outputs and t not in produced:
                raise TopologyError(f"node {node.id} consumes {t} before it is produced")
        produced.update(node.outputs)


# ---------------------------------------------------------------- file format

def _node_to_json(node: OperatorNode) -> dict:
    params = {k: v for k, v in node.params.items()
              if PARAM_DEFAULTS.get(node.kind, {}).get(k, object()) != v}
    return {"id": node.id, "kind": node.kind, "params": params,
            "inputs": list(node.inputs), "outputs": list(node.outputs),
            "dtype": node.dtype.label}


def trace_to_json(trace: Trace) -> dict:
    header: dict[str, Any] = {"name": trace.name, "mode": trace.mode, "batch": trace.batch}
    if trace.seq_len is not None:
        header["seq_len"] = trace.seq_len
    if trace.model is not None:
        header["model"] = trace.model
    return {
        "version": TRACE_SCHEMA_VERSION,
        "header": header,
        "tensors": [{"id": t.id, "dims": list(t.dims), "layout": t.layout,
                     "dtype": t.dtype.label, "role": t.role}
                    for t in trace.tensors.values()],
        "nodes": [_node_to_json(n) for n in trace.nodes],
    }


def trace_from_json(doc: dict) -> Trace:
    try:
        version = doc["version"]
        header = doc["header"]
        tensors_doc = doc["tensors"]
        nodes_doc = doc["nodes"]
    except (KeyError, TypeError) as exc:
        raise TraceFormatError(f"missing top-level field: {exc}") from None
    if version != TRACE_SCHEMA_VERSION:
        raise TraceFormatError(f"unsupported trace version {version!r}")
    try:
        tensors = {}
        for t in tensors_doc:
            spec = TensorSpec(t["id"], tuple(int(d) for d in t["dims"]), t.get("layout", ""),
                              DataType.parse(t["dtype"]), t.get("role", "activation"))
            tensors[spec.id] = spec
        nodes = [OperatorNode(n["id"], n["kind"], dict(n.get("params", {})),
                              tuple(n.get("inputs", ())), tuple(n.get("outputs", ())),
                              DataType.parse(n["dtype"]))
                 for n in nodes_doc]
        return Trace(header["name"], header["mode"], int(header["batch"]), tuple(nodes),
                     tensors, header.get("seq_len"), header.get("model"))
    except KeyError as exc:
        raise TraceFormatError(f"missing field {exc}") from None


def load_trace(path: str | Path) -> Trace:
    path = Path(path)
    with path.open() as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"{path}: {exc}") from None
    return trace_from_json(doc)


def save_trace(trace: Trace, path: str | Path) -> None:
    Path(path).write_text(json.dumps(trace_to_json(trace), separators=(",", ":")) + "\n")


# ---------------------------------------------------------------- census

@dataclass(frozen=True)
class CharacterizationSummary:
    name: str
    mode: str
    batch: int
    total_ops: int
    gops_per_sample: float
    distinct_shape_count: int
    primary_op_fraction: float

    def as_row(self) -> dict[str, Any]:
        return {"name": self.name, "mode": self.mode, "batch": self.batch,
                "gops_per_sample": round(self.gops_per_sample, 4),
                "distinct_shapes": self.distinct_shape_count,
                "primary_pct": round(100 * self.primary_op_fraction, 2)}


def characterize(trace: Trace) -> CharacterizationSummary:
    total = 0
    primary = 0
    shapes = set()
    for node in trace.nodes:
        ops = op_count(node)
        total += ops
        if is_primary(node):
            primary += ops
        shapes.add(node.shape_key)
    frac = primary / total if total else 0.0
    return CharacterizationSummary(trace.name, trace.mode, trace.batch, total,
                                   total / trace.batch / 1e9, len(shapes), frac)


def with_dtype(trace: Trace, dtype: DataType | str) -> Trace:
    """Same graph with every tensor and node retyped."""
    dt = DataType.parse(dtype)
    tensors = {k: replace(t, dtype=dt) for k, t in trace.tensors.items()}
    nodes = tuple(replace(n, dtype=dt) for n in trace.nodes)
    return replace(trace, nodes=nodes, tensors=tensors)


def concat(a: Trace, b: Trace, name: str | None = None) -> Trace:
    """Run two traces back to back; ids from ``b`` are prefixed to stay unique."""
    if a.batch != b.batch:
        raise TraceError("concatenated traces must share a batch size")

    def ren(t: str) -> str:
        return "b:" + t

    tensors = dict(a.tensors)
    for t in b.tensors.values():
        tensors[ren(t.id)] = replace(t, id=ren(t.id))
    nodes = list(a.nodes) + [replace(n, id=ren(n.id), inputs=tuple(map(ren, n.inputs)),
                                     outputs=tuple(map(ren, n.outputs)))
                             for n in b.nodes]
    return Trace(name or f"{a.name}+{b.name}", a.mode, a.batch, tuple(nodes), tensors)


# ---------------------------------------------------------------- backward

_TRANSPOSE_A = {"MK": "KM", "KM": "MK"}
_TRANSPOSE_B = {"KN": "NK", "NK": "KN"}


def _grad_op_name(op: str) -> tuple[str | None, int]:
    """Backward element-wise op for a forward op name, with its arity."""
    if op == "Add":
        return None, 0
    if op == "AvgPool":
        return "AvgPoolGrad", 1
    if op == "AddRelu":
        return "ReluGrad", 2
    if op == "AddLayerNorm":
        return "LayerNormGrad", 2
    return f"{op}Grad", 2


class _BackwardBuilder:
    def __init__(self, trace: Trace):
        self.trace = trace
        self.tensors = dict(trace.tensors)
        self.nodes: list[OperatorNode] = list(trace.nodes)
        self.grads: dict[str, str] = {}
        self.counter = 0

    def new_tensor(self, like: str, dims: tuple[int, ...] | None = None, prefix: str = "d") -> str:
        base = self.tensors[like]
        self.counter += 1
        tid = f"{prefix}{self.counter}:{like}"
        self.tensors[tid] = TensorSpec(tid, dims or base.dims, base.layout, base.dtype, "activation")
        return tid

    def emit(self, kind: str, params: dict, inputs, outputs, dtype: DataType) -> None:
        self.counter += 1
        self.nodes.append(OperatorNode(f"bwd{self.counter}:{kind}", kind, params,
                                       tuple(inputs), tuple(outputs), dtype))

    def contribute(self, tensor: str, grad: str, dtype: DataType) -> None:
        """Accumulate a gradient contribution into ``tensor``'s gradient."""
        if tensor not in self.grads:
            self.grads[tensor] = grad
            return
        total = self.new_tensor(tensor, prefix="dsum")
        count = self.tensors[tensor].elements
        self.emit("Elementwise", {"op": "Add", "count": count, "arity": 2},
                  (self.grads[tensor], grad), (total,), dtype)
        self.grads[tensor] = total

    def upstream(self, tensor: str) -> str:
        # Graph outputs (losses) seed their own gradient.
        if tensor not in self.grads:
            self.grads[tensor] = self.new_tensor(tensor, prefix="dseed")
        return self.grads[tensor]


def expand_backward(trace: Trace, mode: str = "training") -> Trace:
    """Append the gradient graph of a forward trace in reverse topological order."""
    if trace.mode != "inference":
        raise DifferentiationError(f"expand_backward needs a forward trace, got mode {trace.mode!r}")
    bb = _BackwardBuilder(trace)
    fwd = list(trace.nodes)
    i = len(fwd) - 1
    while i >= 0:
        node = fwd[i]
        if node.kind == "LstmCell":
            j = i
            weights = node.inputs[3:]
            while j - 1 >= 0 and fwd[j - 1].kind == "LstmCell" and fwd[j - 1].inputs[3:] == weights:
                j -= 1
            _lstm_chain_backward(bb, fwd[j:i + 1])
            i = j - 1
            continue
        _node_backward(bb, node)
        i -= 1
    return Trace(trace.name, mode, trace.batch, tuple(bb.nodes), bb.tensors,
                 trace.seq_len, trace.model)


def _activation_grad(bb: _BackwardBuilder, node: OperatorNode, dy: str) -> str:
    act = node.params.get("act")
    if not act:
        return dy
    y = node.outputs[0]
    g = bb.new_tensor(y, prefix="dact")
    bb.emit("Elementwise", {"op": f"{act}Grad", "count": bb.tensors[y].elements, "arity": 2},
            (y, dy), (g,), node.dtype)
    return g


def _node_backward(bb: _BackwardBuilder, node: OperatorNode) -> None:
    kind, p, dt = node.kind, node.params, node.dtype
    if kind == "Requantize":
        raise DifferentiationError(f"node {node.id}: Requantize is inference-only")
    if kind in ("Conv2DdI", "Conv2DdW") or (kind == "LstmCell" and p["grad"]):
        raise DifferentiationError(f"node {node.id}: {kind} is already a gradient op")
    dy = _activation_grad(bb, node, bb.upstream(node.outputs[0]))
    if kind == "Conv2D":
        x, w = node.inputs[0], node.inputs[1]
        conv = {k: v for k, v in p.items() if k != "act"}
        dx = bb.new_tensor(x)
        dw = bb.new_tensor(w)
        bb.emit("Conv2DdI", conv, (dy, w), (dx,), dt)
        bb.emit("Conv2DdW", conv, (x, dy), (dw,), dt)
        bb.contribute(x, dx, dt)
        bb.contribute(w, dw, dt)
    elif kind == "MatMul":
        a, b = node.inputs[0], node.inputs[1]
        lay = p["layout"]
        la, lb = lay[:2], lay[2:]
        da = bb.new_tensor(a)
        db = bb.new_tensor(b)
        weight_b = bb.tensors[b].role == "weight"
        # dA[M,K] = dC[M,N] . B^T[N,K]
        bb.emit("MatMul", {"M": p["M"], "N": p["K"], "K": p["N"], "batch": p["batch"],
                           "layout": "MK" + _TRANSPOSE_B[lb]}, (dy, b), (da,), dt)
        # dB[K,N] = A^T[K,M] . dC[M,N]; a shared weight reduces over the whole batch.
        if weight_b:
            db_params = {"M": p["K"], "N": p["N"], "K": p["M"] * p["batch"], "batch": 1}
        else:
            db_params = {"M": p["K"], "N": p["N"], "K": p["M"], "batch": p["batch"]}
        db_params["layout"] = _TRANSPOSE_A[la] + "KN"
        bb.emit("MatMul", db_params, (a, dy), (db,), dt)
        bb.contribute(a, da, dt)
        bb.contribute(b, db, dt)
    elif kind == "Elementwise":
        gop, arity = _grad_op_name(p["op"])
        y = node.outputs[0]
        if gop is None:
            g = dy
        else:
            g = bb.new_tensor(y, prefix="dew")
            srcs = (y, dy) if arity == 2 else (dy,)
            bb.emit("Elementwise", {"op": gop, "count": p["count"], "arity": arity}, srcs, (g,), dt)
        for x in node.inputs:
            if bb.tensors[x].elements == bb.tensors[y].elements:
                bb.contribute(x, g, dt)
            else:
                # Pooling: the gradient is scattered back to the larger input.
                gx = bb.new_tensor(x, prefix="dscatter")
                bb.emit("Elementwise", {"op": "Scatter", "count": bb.tensors[x].elements,
                                        "arity": 1}, (g,), (gx,), dt)
                bb.contribute(x, gx, dt)
    else:
        raise DifferentiationError(f"node {node.id}: cannot differentiate {kind}")


def _lstm_chain_backward(bb: _BackwardBuilder, chain: list[OperatorNode]) -> None:
    """Hidden chain backward step by step, then batched input/weight gradients."""
    first = chain[0]
    p, dt = first.params, first.dtype
    b, i_dim, h = p["batch"], p["I"], p["H"]
    steps = len(chain)
    dh_next = dc_next = None
    dgates = []
    w_ih, w_hh = first.inputs[3], first.inputs[4]
    for node in reversed(chain):
        h_t, c_t = node.outputs[0], node.outputs[1]
        srcs = [bb.upstream(h_t), c_t, w_hh]
        if dh_next is not None:
            srcs += [dh_next, dc_next]
        dg = bb.new_tensor(h_t, (b, 4 * h), prefix="dgates")
        dh_prev = bb.new_tensor(node.inputs[1], prefix="dh")
        dc_prev = bb.new_tensor(node.inputs[2], prefix="dc")
        bb.emit("LstmCell", {"I": i_dim, "H": h, "batch": b, "grad": 1},
                srcs, (dg, dh_prev, dc_prev), dt)
        dgates.append(dg)
        dh_next, dc_next = dh_prev, dc_prev
    xs = [n.inputs[0] for n in chain]
    dx_all = bb.new_tensor(xs[0], (steps * b, i_dim), prefix="dxseq")
    bb.emit("MatMul", {"M": steps * b, "N": i_dim, "K": 4 * h, "layout": "MKNK"},
            tuple(dgates) + (w_ih,), (dx_all,), dt)
    dwi = bb.new_tensor(w_ih)
    bb.emit("MatMul", {"M": i_dim, "N": 4 * h, "K": steps * b, "layout": "KMKN"},
            tuple(xs) + tuple(dgates), (dwi,), dt)
    dwh = bb.new_tensor(w_hh)
    hs = [n.inputs[1] for n in chain]
    bb.emit("MatMul", {"M": h, "N": 4 * h, "K": steps * b, "layout": "KMKN"},
            tuple(hs) + tuple(dgates), (dwh,), dt)
    for x in dict.fromkeys(xs):
        bb.contribute(x, dx_all, dt)


def iter_distinct_shapes(traces: Iterable[Trace]) -> dict[tuple, OperatorNode]:
    seen: dict[tuple, OperatorNode] = {}
    for tr in traces:
        for node in tr.nodes:
            seen.setdefault(node.shape_key, node)
    return seen
