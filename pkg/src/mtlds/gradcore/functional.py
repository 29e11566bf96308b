"""Readable wrappers over ``Graph.apply`` plus small compositions."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Tensor


def add(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.apply("add", [a, b])


def sub(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.apply("sub", [a, b])


def mul_elem(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.apply("mul_elem", [a, b])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    return a.graph.apply("matmul", [a, b])


def scale(x: Tensor, factor: float) -> Tensor:
    return x.graph.apply("scale", [x], factor=float(factor))


def neg(x: Tensor) -> Tensor:
    return x.graph.apply("neg", [x])


def abs_(x: Tensor) -> Tensor:
    return x.graph.apply("abs", [x])


def log(x: Tensor) -> Tensor:
    return x.graph.apply("log", [x])


def sigmoid(x: Tensor) -> Tensor:
    return x.graph.apply("sigmoid", [x])


def relu(x: Tensor) -> Tensor:
    return x.graph.apply("relu", [x])


def softmax_rows(x: Tensor) -> Tensor:
    return x.graph.apply("softmax_rows", [x])


def sum_all(x: Tensor) -> Tensor:
    return x.graph.apply("sum_all", [x])


def max_rows(x: Tensor) -> Tensor:
    return x.graph.apply("max_rows", [x])


def gather_rows(x: Tensor, indices: Sequence[int]) -> Tensor:
    return x.graph.apply("gather_rows", [x], indices=tuple(int(i) for i in indices))


def broadcast_row(v: Tensor, rows: int) -> Tensor:
    return v.graph.apply("broadcast_row", [v], rows=int(rows))


def broadcast_col(v: Tensor, cols: int) -> Tensor:
    return v.graph.apply("broadcast_col", [v], cols=int(cols))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    return x.graph.apply("clip", [x], lo=float(lo), hi=float(hi))


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / (x.rows * x.cols))


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    """Horizontal concatenation via constant selector matrices.

    ``concat(A, B) @ W == A @ W_top + B @ W_bottom``, so stacking columns is
    expressible as a sum of matmuls with 0/1 placement matrices.  Gradients
    flow through the matmuls as usual.
    """
    if not tensors:
        raise ValueError("concat_cols needs at least one tensor")
    if len(tensors) == 1:
        return tensors[0]
    g = tensors[0].graph
    total = sum(t.cols for t in tensors)
    out = None
    offset = 0
    for t in tensors:
        sel = np.zeros((t.cols, total))
        sel[:, offset:offset + t.cols] = np.eye(t.cols)
        term = matmul(t, g.constant(sel))
        out = term if out is None else add(out, term)
        offset += t.cols
    return out
