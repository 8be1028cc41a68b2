import functools

import pytest

from upcycle import zoo
from upcycle.arch import preset
from upcycle.workload import DataType, Trace
from upcycle.zoo import GraphBuilder


# One "PASS/FAIL criterion N: ..." line per acceptance check, echoed in the summary.
ACCEPTANCE_LINES: list[str] = []


def acceptance(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def base():
    return preset("base")


@functools.lru_cache(maxsize=None)
def zoo_trace(model: str, mode: str = "inference", batch: int = 1) -> Trace:
    return zoo.build(model, mode, batch)


def conv_trace(n=1, h=14, c=64, k=64, r=3, stride=1, dtype=DataType.Int8, act=None) -> Trace:
    g = GraphBuilder(dtype)
    x = g.tensor((n, h, h, c), "NHWC", "input")
    g.conv(x, k, r, stride, act=act)
    return g.build("conv", "inference", n, "conv")


def matmul_trace(m=128, n=768, k=768, dtype=DataType.Int8, batch=1) -> Trace:
    g = GraphBuilder(dtype)
    x = g.tensor((m, k), "MK", "input")
    g.linear(x, n)
    return g.build("mm", "inference", batch, "mm")


def eltwise_trace(op="Relu", count=802_816, arity=1, dtype=DataType.Int8) -> Trace:
    g = GraphBuilder(dtype)
    ins = [g.tensor((count,), "N", "input") for _ in range(arity)]
    g.eltwise(op, ins, arity=arity)
    return g.build("elt", "inference", 1, "elt")


def empty_trace(mode="inference") -> Trace:
    return Trace("empty", mode, 1, (), {})
