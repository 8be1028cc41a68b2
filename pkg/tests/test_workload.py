import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from conftest import conv_trace, eltwise_trace, empty_trace, matmul_trace, zoo_trace
from upcycle.workload import (DanglingReferenceError, DataType, DifferentiationError,
                              OperatorNode, TensorSpec, TopologyError, Trace, TraceFormatError,
                              characterize, concat, expand_backward, load_trace, op_count,
                              save_trace, trace_from_json, trace_to_json, with_dtype)


def test_datatype_widths():
    assert (DataType.Int8.input_bits, DataType.Int8.accumulator_bits) == (8, 32)
    assert DataType.Int8.accumulator_ratio == 4
    assert DataType.FP16.accumulator_ratio == 2
    assert DataType.FP32.accumulator_ratio == 1
    assert DataType.parse("int8") is DataType.Int8
    with pytest.raises(TraceFormatError):
        DataType.parse("bf16")


def test_conv1_op_count():
    node = OperatorNode("c", "Conv2D", {"N": 1, "H": 224, "W": 224, "C": 3, "K": 64, "R": 7,
                                        "S": 7, "stride": 2, "pad": 3})
    assert (node.P, node.Q) == (112, 112)
    assert op_count(node) == 236_027_904


def test_matmul_op_count():
    assert op_count(OperatorNode("m", "MatMul", {"M": 128, "N": 768, "K": 768})) == 150_994_944


def test_elementwise_op_count():
    node = OperatorNode("e", "Elementwise", {"op": "Relu", "count": 802_816, "arity": 1})
    assert op_count(node) == 802_816


def test_backward_convs_share_forward_product():
    p = {"N": 2, "H": 28, "W": 28, "C": 32, "K": 64, "R": 3, "S": 3, "stride": 2, "pad": 1}
    fwd = op_count(OperatorNode("f", "Conv2D", p))
    assert op_count(OperatorNode("i", "Conv2DdI", p)) == fwd
    assert op_count(OperatorNode("w", "Conv2DdW", p)) == fwd


def test_missing_params_rejected():
    with pytest.raises(TraceFormatError):
        OperatorNode("m", "MatMul", {"M": 4, "N": 4})
    with pytest.raises(TraceFormatError):
        OperatorNode("x", "Gather", {})


def test_nonpositive_extent_rejected():
    with pytest.raises(TraceFormatError):
        TensorSpec("t", (4, 0), "MK", DataType.Int8)


def test_empty_trace_is_valid():
    t = empty_trace()
    assert t.total_ops == 0
    s = characterize(t)
    assert (s.total_ops, s.distinct_shape_count, s.gops_per_sample) == (0, 0, 0.0)


def test_dangling_reference():
    node = OperatorNode("n0", "Elementwise", {"op": "Relu", "count": 4, "arity": 1},
                        ("t9",), ("t1",))
    tensors = {"t1": TensorSpec("t1", (4,), "N", DataType.Int8)}
    with pytest.raises(DanglingReferenceError, match="t9"):
        Trace("bad", "inference", 1, (node,), tensors)


def test_consume_before_produce():
    tensors = {t: TensorSpec(t, (4,), "N", DataType.Int8) for t in ("a", "b", "c")}
    n0 = OperatorNode("n0", "Elementwise", {"op": "Relu", "count": 4, "arity": 1}, ("b",), ("c",))
    n1 = OperatorNode("n1", "Elementwise", {"op": "Relu", "count": 4, "arity": 1}, ("a",), ("b",))
    with pytest.raises(TopologyError):
        Trace("bad", "inference", 1, (n0, n1), tensors)


def test_single_node_characterization():
    t = matmul_trace(128, 768, 768)
    s = characterize(t)
    assert s.gops_per_sample == 150_994_944 / 1e9
    assert s.distinct_shape_count == 1
    assert s.primary_op_fraction == 1.0


def test_resnet50_census():
    s = characterize(zoo_trace("resnet50"))
    assert s.gops_per_sample == pytest.approx(7.8, rel=0.10)
    assert abs(s.distinct_shape_count - 30) <= 3
    assert s.primary_op_fraction >= 0.98


def test_bert_base_census():
    s = characterize(zoo_trace("bert_base_128"))
    assert s.gops_per_sample == pytest.approx(23.0, rel=0.10)
    assert s.distinct_shape_count == 8


def test_resnet50_training_shape_count():
    # The backward decomposition is not pinned down exactly; allow 15%.
    n = characterize(zoo_trace("resnet50", "training")).distinct_shape_count
    assert 81 * 0.85 <= n <= 81 * 1.15


def test_backward_of_single_conv():
    kinds = [n.kind for n in expand_backward(conv_trace()).nodes]
    assert kinds == ["Conv2D", "Conv2DdI", "Conv2DdW"]


def test_tanh_grad_has_two_inputs():
    bwd = expand_backward(eltwise_trace("Tanh", 100, 1))
    grad = bwd.nodes[-1]
    assert grad["op"] == "TanhGrad" and grad["arity"] == 2 and len(grad.inputs) == 2


def test_backward_needs_forward_trace():
    with pytest.raises(DifferentiationError):
        expand_backward(expand_backward(conv_trace()))


def test_training_is_about_three_times_inference():
    inf = characterize(zoo_trace("resnet50")).total_ops
    train = characterize(zoo_trace("resnet50", "training")).total_ops
    assert 2.9 < train / inf < 3.1


def test_json_round_trip(tmp_path):
    t = zoo_trace("bert_base_128")
    path = tmp_path / "t.json"
    save_trace(t, path)
    back = load_trace(path)
    assert back == t
    assert trace_to_json(back) == json.loads(path.read_text())


def test_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(TraceFormatError):
        load_trace(path)
    with pytest.raises(TraceFormatError):
        trace_from_json({"name": "x"})


def test_with_dtype_retypes_everything():
    t = with_dtype(conv_trace(), "FP16")
    assert {n.dtype for n in t.nodes} == {DataType.FP16}
    assert {s.dtype for s in t.tensors.values()} == {DataType.FP16}
    assert t.total_ops == conv_trace().total_ops


dims = st.integers(1, 512)


@given(dims, dims, dims)
def test_matmul_layout_does_not_change_ops(m, n, k):
    ops = {op_count(OperatorNode("m", "MatMul", {"M": m, "N": n, "K": k, "layout": lay}))
           for lay in ("MKKN", "MKNK", "KMKN")}
    assert ops == {2 * m * n * k}


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.sampled_from([7, 14, 28]), st.sampled_from([16, 64]),
       st.sampled_from([1, 3]), st.sampled_from([1, 2]))
def test_concat_is_additive(n, h, c, r, stride):
    a = conv_trace(n=n, h=h, c=c, k=c, r=r, stride=stride)
    b = matmul_trace(m=n * 4, n=c, k=c, batch=n)
    joined = concat(a, b)
    assert joined.total_ops == a.total_ops + b.total_ops
    assert len(joined.nodes) == len(a.nodes) + len(b.nodes)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 8), st.sampled_from(list(DataType)))
def test_gops_per_sample_is_batch_invariant_for_convs(batch, dtype):
    a = characterize(conv_trace(n=batch, dtype=dtype))
    b = characterize(conv_trace(n=1, dtype=dtype))
    assert math.isclose(a.gops_per_sample, b.gops_per_sample)
