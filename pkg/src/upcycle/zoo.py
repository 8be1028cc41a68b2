"""Builders for the shipped model traces.

Layer shapes follow the public reference architectures. Inference traces are Int8
and training traces are FP16, both produced from the same forward builder.
"""

from __future__ import annotations

from typing import Callable

from .workload import (DataType, OperatorNode, TensorSpec, Trace, conv_output_extent,
                       expand_backward)


_LAYOUTS = {2: "NC", 3: "BMN", 4: "NHWC"}


class GraphBuilder:
    def __init__(self, dtype: DataType):
        self.dtype = dtype
        self.tensors: dict[str, TensorSpec] = {}
        self.nodes: list[OperatorNode] = []

    def tensor(self, dims, layout: str, role: str = "activation", prefix: str = "t") -> str:
        tid = f"{prefix}{len(self.tensors)}"
        self.tensors[tid] = TensorSpec(tid, tuple(int(d) for d in dims), layout, self.dtype, role)
        return tid

    def node(self, kind: str, params: dict, inputs, outputs) -> None:
        nid = f"n{len(self.nodes)}"
        self.nodes.append(OperatorNode(nid, kind, params, tuple(inputs), tuple(outputs),
                                       self.dtype))

    # -- layers -------------------------------------------------------------
    def conv(self, x: str, k: int, r: int, stride: int = 1, pad: int | None = None,
             act: str | None = None) -> str:
        n, h, w, c = self.tensors[x].dims
        if pad is None:
            pad = r // 2
        p = conv_output_extent(h, r, stride, pad)
        q = conv_output_extent(w, r, stride, pad)
        wt = self.tensor((r, r, c, k), "RSCK", "weight", "w")
        y = self.tensor((n, p, q, k), "NHWC")
        params = {"N": n, "H": h, "W": w, "C": c, "K": k, "R": r, "S": r,
                  "stride": stride, "pad": pad}
        if act:
            params["act"] = act
        self.node("Conv2D", params, (x, wt), (y,))
        return y

    def eltwise(self, op: str, inputs: list[str], out_dims=None, arity: int | None = None) -> str:
        dims = out_dims or self.tensors[inputs[0]].dims
        y = self.tensor(dims, self.tensors[inputs[0]].layout if out_dims is None else _LAYOUTS[len(dims)])
        count = 1
        for d in dims:
            count *= d
        self.node("Elementwise", {"op": op, "count": count, "arity": arity or len(inputs)},
                  inputs, (y,))
        return y

    def pool(self, x: str, op: str, window: int, stride: int, pad: int = 0) -> str:
        n, h, w, c = self.tensors[x].dims
        p = conv_output_extent(h, window, stride, pad)
        q = conv_output_extent(w, window, stride, pad)
        return self.eltwise(op, [x], (n, p, q, c), arity=window * window)

    def global_pool(self, x: str) -> str:
        n, h, w, c = self.tensors[x].dims
        y = self.tensor((n, c), "NC")
        self.node("Elementwise", {"op": "AvgPool", "count": n * c, "arity": h * w}, (x,), (y,))
        return y

    def linear(self, x: str, n_out: int, rows: int | None = None) -> str:
        dims = self.tensors[x].dims
        m = rows if rows is not None else dims[0]
        k = dims[-1]
        wt = self.tensor((k, n_out), "KN", "weight", "w")
        y = self.tensor((m, n_out), "MN")
        self.node("MatMul", {"M": m, "N": n_out, "K": k}, (x, wt), (y,))
        return y

    def build(self, name: str, mode: str, batch: int, model: str,
              seq_len: int | None = None) -> Trace:
        return Trace(name, mode, batch, tuple(self.nodes), dict(self.tensors), seq_len, model)


# ---------------------------------------------------------------- CNNs

def _bottleneck(g: GraphBuilder, x: str, mid: int, out: int, stride: int) -> str:
    c = g.tensors[x].dims[3]
    y = g.conv(x, mid, 1, act="Relu")
    y = g.conv(y, mid, 3, stride=stride, act="Relu")
    y = g.conv(y, out, 1)
    if stride != 1 or c != out:
        sc = g.conv(x, out, 1, stride=stride)
    else:
        sc = x
    return g.eltwise("AddRelu", [y, sc])


def resnet50(batch: int, dtype: DataType) -> GraphBuilder:
    g = GraphBuilder(dtype)
    x = g.tensor((batch, 224, 224, 3), "NHWC", "input", "in")
    y = g.conv(x, 64, 7, stride=2, pad=3, act="Relu")
    y = g.pool(y, "MaxPool", 3, 2, 1)
    for mid, blocks, stride in ((64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)):
        for i in range(blocks):
            y = _bottleneck(g, y, mid, 4 * mid, stride if i == 0 else 1)
    y = g.global_pool(y)
    g.linear(y, 1000)
    return g


def _basic_block(g: GraphBuilder, x: str, out: int, stride: int) -> str:
    c = g.tensors[x].dims[3]
    y = g.conv(x, out, 3, stride=stride, act="Relu")
    y = g.conv(y, out, 3)
    if stride != 1 or c != out:
        sc = g.conv(x, out, 1, stride=stride)
    else:
        sc = x
    return g.eltwise("AddRelu", [y, sc])


def ssd_resnet34(batch: int, dtype: DataType, image: int = 300) -> GraphBuilder:
    """ResNet34 backbone (stage 3 kept at stride 8) with SSD extra layers and heads."""
    g = GraphBuilder(dtype)
    x = g.tensor((batch, image, image, 3), "NHWC", "input", "in")
    y = g.conv(x, 64, 7, stride=2, pad=3, act="Relu")
    y = g.pool(y, "MaxPool", 3, 2, 1)
    for out, blocks, stride in ((64, 3, 1), (128, 4, 2), (256, 6, 1)):
        for i in range(blocks):
            y = _basic_block(g, y, out, stride if i == 0 else 1)
    features = [y]
    for mid, out, stride, pad in ((256, 512, 2, 1), (256, 512, 2, 1), (128, 256, 2, 1),
                                  (128, 256, 1, 0), (128, 256, 1, 0)):
        y = g.conv(y, mid, 1, act="Relu")
        y = g.conv(y, out, 3, stride=stride, pad=pad, act="Relu")
        features.append(y)
    anchors = (4, 6, 6, 6, 4, 4)
    for f, a in zip(features, anchors):
        g.conv(f, 4 * a, 3)
        g.conv(f, 81 * a, 3)
    return g


# ---------------------------------------------------------------- transformers

BERT_SIZES = {"base": (768, 12, 12), "large": (1024, 16, 24)}


def bert(batch: int, dtype: DataType, size: str = "base", seq: int = 128) -> GraphBuilder:
    d, heads, layers = BERT_SIZES[size]
    hd = d // heads
    rows = batch * seq
    g = GraphBuilder(dtype)
    tok = g.tensor((rows, d), "MK", "input", "in")
    pos = g.tensor((rows, d), "MK", "weight", "w")
    x = g.eltwise("AddLayerNorm", [tok, pos])
    for _ in range(layers):
        q = g.linear(x, d)
        k = g.linear(x, d)
        v = g.linear(x, d)
        s = g.tensor((batch * heads, seq, seq), "BMN")
        g.node("MatMul", {"M": seq, "N": seq, "K": hd, "batch": batch * heads, "layout": "MKNK"},
               (q, k), (s,))
        pr = g.eltwise("Softmax", [s])
        ctx = g.tensor((rows, d), "MN")
        g.node("MatMul", {"M": seq, "N": hd, "K": seq, "batch": batch * heads}, (pr, v), (ctx,))
        o = g.linear(ctx, d)
        x = g.eltwise("AddLayerNorm", [o, x])
        h = g.linear(x, 4 * d)
        h = g.eltwise("Tanh", [h])
        o = g.linear(h, d)
        x = g.eltwise("AddLayerNorm", [o, x])
    return g


# ---------------------------------------------------------------- recurrent

# Chosen so batch-1 inference totals the published 12.8 GOPs per sample.
RNNT_SEQ = 218
RNNT_ENCODER = ((240, 1024), (1024, 1024), (2048, 1024), (1024, 1024), (1024, 1024))
RNNT_PREDICTION = ((320, 320), (320, 320))


def _lstm_layer(g: GraphBuilder, xs: list[str], i_dim: int, h_dim: int) -> list[str]:
    batch = g.tensors[xs[0]].dims[0]
    w_ih = g.tensor((i_dim, 4 * h_dim), "KN", "weight", "w")
    w_hh = g.tensor((h_dim, 4 * h_dim), "KN", "weight", "w")
    h = g.tensor((batch, h_dim), "MN", "input", "h0_")
    c = g.tensor((batch, h_dim), "MN", "input", "c0_")
    outs = []
    for x in xs:
        h_new = g.tensor((batch, h_dim), "MN")
        c_new = g.tensor((batch, h_dim), "MN")
        g.node("LstmCell", {"I": i_dim, "H": h_dim, "batch": batch},
               (x, h, c, w_ih, w_hh), (h_new, c_new))
        outs.append(h_new)
        h, c = h_new, c_new
    return outs


def rnnt(batch: int, dtype: DataType, seq: int = RNNT_SEQ) -> GraphBuilder:
    """LSTM RNN-T proxy: 5-layer encoder with time stacking, 2-layer predictor, joint net."""
    g = GraphBuilder(dtype)
    xs = [g.tensor((batch, 240), "MK", "input", "in") for _ in range(seq)]
    enc_in = xs
    for layer, (i_dim, h_dim) in enumerate(RNNT_ENCODER):
        if layer == 2:
            # Time-reduction stacks adjacent frames, halving the sequence.
            stacked = []
            for a, b in zip(enc_in[0::2], enc_in[1::2]):
                stacked.append(g.eltwise("Concat", [a, b], (batch, 2 * h_dim)))
            enc_in = stacked
        enc_in = _lstm_layer(g, enc_in, i_dim, h_dim)
    pred_steps = seq // 2
    pred = [g.tensor((batch, 320), "MK", "input", "in") for _ in range(pred_steps)]
    for i_dim, h_dim in RNNT_PREDICTION:
        pred = _lstm_layer(g, pred, i_dim, h_dim)
    # Joint network evaluated on the aligned (encoder, predictor) pairs.
    for e, p in zip(enc_in, pred):
        fe = g.linear(e, 512)
        fp = g.linear(p, 512)
        j = g.eltwise("AddRelu", [fe, fp])
        g.linear(j, 29)
    return g


# ---------------------------------------------------------------- small CNNs

def alexnet(batch: int, dtype: DataType) -> GraphBuilder:
    g = GraphBuilder(dtype)
    x = g.tensor((batch, 227, 227, 3), "NHWC", "input", "in")
    y = g.conv(x, 96, 11, stride=4, pad=0, act="Relu")
    y = g.pool(y, "MaxPool", 3, 2)
    y = g.conv(y, 256, 5, pad=2, act="Relu")
    y = g.pool(y, "MaxPool", 3, 2)
    y = g.conv(y, 384, 3, act="Relu")
    y = g.conv(y, 384, 3, act="Relu")
    y = g.conv(y, 256, 3, act="Relu")
    y = g.pool(y, "MaxPool", 3, 2)
    n, h, w, c = g.tensors[y].dims
    flat = g.tensor((n, h * w * c), "MK")
    g.node("Elementwise", {"op": "Copy", "count": n * h * w * c, "arity": 1}, (y,), (flat,))
    y = g.linear(flat, 4096)
    y = g.eltwise("Relu", [y])
    y = g.linear(y, 4096)
    y = g.eltwise("Relu", [y])
    g.linear(y, 1000)
    return g


def _depthwise(g: GraphBuilder, x: str, stride: int) -> str:
    n, h, w, c = g.tensors[x].dims
    p = conv_output_extent(h, 3, stride, 1)
    q = conv_output_extent(w, 3, stride, 1)
    wt = g.tensor((3, 3, 1, c), "RSCK", "weight", "w")
    y = g.tensor((n, p, q, c), "NHWC")
    g.node("Conv2D", {"N": n, "H": h, "W": w, "C": c, "K": c, "R": 3, "S": 3, "stride": stride,
                      "pad": 1, "groups": c, "act": "Relu"}, (x, wt), (y,))
    return y


def mobilenet(batch: int, dtype: DataType) -> GraphBuilder:
    g = GraphBuilder(dtype)
    x = g.tensor((batch, 224, 224, 3), "NHWC", "input", "in")
    y = g.conv(x, 32, 3, stride=2, act="Relu")
    for out, stride in ((64, 1), (128, 2), (128, 1), (256, 2), (256, 1), (512, 2),
                        (512, 1), (512, 1), (512, 1), (512, 1), (512, 1), (1024, 2), (1024, 1)):
        y = _depthwise(g, y, stride)
        y = g.conv(y, out, 1, act="Relu")
    y = g.global_pool(y)
    g.linear(y, 1000)
    return g


# ---------------------------------------------------------------- registry

MODELS: dict[str, Callable[..., GraphBuilder]] = {
    "resnet50": resnet50,
    "ssd_resnet34": ssd_resnet34,
    "bert_base_128": lambda b, dt: bert(b, dt, "base", 128),
    "bert_base_384": lambda b, dt: bert(b, dt, "base", 384),
    "bert_large_128": lambda b, dt: bert(b, dt, "large", 128),
    "bert_large_384": lambda b, dt: bert(b, dt, "large", 384),
    "rnnt": rnnt,
    "alexnet": alexnet,
    "mobilenet": mobilenet,
}

SEQ_LEN = {"bert_base_128": 128, "bert_base_384": 384, "bert_large_128": 128,
           "bert_large_384": 384, "rnnt": RNNT_SEQ}

# Shipped (model, mode) pairs; Bert training is the fine-tuning workload.
SHIPPED = (
    ("resnet50", "inference"), ("resnet50", "training"),
    ("ssd_resnet34", "inference"), ("ssd_resnet34", "training"),
    ("bert_base_128", "inference"), ("bert_base_384", "inference"),
    ("bert_large_128", "inference"), ("bert_large_384", "inference"),
    ("bert_large_128", "training"),
    ("rnnt", "inference"), ("rnnt", "training"),
    ("alexnet", "inference"), ("mobilenet", "inference"),
)


def default_dtype(mode: str) -> DataType:
    return DataType.Int8 if mode == "inference" else DataType.FP16


def build(model: str, mode: str = "inference", batch: int = 1,
          dtype: DataType | None = None) -> Trace:
    if model not in MODELS:
        raise KeyError(f"unknown model {model!r}; known: {sorted(MODELS)}")
    dt = dtype or default_dtype(mode)
    seq = SEQ_LEN.get(model)
    fwd = MODELS[model](batch, dt).build(trace_name(model, mode), "inference", batch, model, seq)
    if mode == "inference":
        return fwd
    return expand_backward(fwd, mode)


def trace_name(model: str, mode: str) -> str:
    return f"{model}_{'inf' if mode == 'inference' else 'train'}"
