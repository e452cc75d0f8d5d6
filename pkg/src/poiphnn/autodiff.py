"""A small reverse-mode differentiation tape over numpy arrays.

Only the handful of operations the network needs are provided. Forward
results are independent of the order in which rows or segment members are
presented: dense products go through ``einsum`` (row-stable, unlike BLAS)
and segment sums add each segment's values in sorted order.
"""

from __future__ import annotations

import numpy as np


class Node:
    __slots__ = ("value", "grad", "requires_grad", "_backward")

    def __init__(self, value: np.ndarray, requires_grad: bool = False):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g


def canonical_segment_sum(vals: np.ndarray, seg: np.ndarray, num: int) -> np.ndarray:
    """Row-segment sum whose result depends only on the multiset of each segment's rows."""
    d = vals.shape[1]
    out = np.zeros((num, d))
    if seg.size == 0:
        return out
    counts = np.bincount(seg, minlength=num)
    order = np.argsort(seg, kind="stable")
    seg_sorted = seg[order]
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    pos = np.arange(seg.size) - starts[seg_sorted]
    padded = np.full((num, int(counts.max()), d), np.inf)
    padded[seg_sorted, pos] = vals[order]
    padded.sort(axis=1)
    padded[np.isposinf(padded)] = 0.0
    out = padded[:, 0].copy()
    for k in range(1, padded.shape[1]):
        out += padded[:, k]
    return out


class Tape:
    def __init__(self):
        self.nodes: list[Node] = []

    def _record(self, value, parents, backward) -> Node:
        node = Node(value, requires_grad=any(p.requires_grad for p in parents))
        if node.requires_grad:
            node._backward = backward
            self.nodes.append(node)
        return node

    def param(self, value: np.ndarray) -> Node:
        return Node(np.asarray(value, dtype=np.float64), requires_grad=True)

    @staticmethod
    def const(value) -> Node:
        return Node(np.asarray(value, dtype=np.float64))

    # -- operations -----------------------------------------------------

    def matmul(self, x: Node, w: Node) -> Node:
        out = np.einsum("ik,kj->ij", x.value, w.value)

        def back(g):
            x.accumulate(g @ w.value.T)
            w.accumulate(x.value.T @ g)

        return self._record(out, (x, w), back)

    def add_bias(self, x: Node, b: Node) -> Node:
        def back(g):
            x.accumulate(g)
            b.accumulate(g.sum(axis=0))

        return self._record(x.value + b.value, (x, b), back)

    def add(self, a: Node, b: Node) -> Node:
        def back(g):
            a.accumulate(g)
            b.accumulate(g)

        return self._record(a.value + b.value, (a, b), back)

    def mul(self, a: Node, b: Node) -> Node:
        def back(g):
            a.accumulate(g * b.value)
            b.accumulate(g * a.value)

        return self._record(a.value * b.value, (a, b), back)

    def leaky_relu(self, x: Node, slope: float) -> Node:
        slopes = np.where(x.value > 0, 1.0, slope)

        def back(g):
            x.accumulate(g * slopes)

        return self._record(x.value * slopes, (x,), back)

    def concat(self, parts: list[Node]) -> Node:
        widths = np.cumsum([p.value.shape[1] for p in parts])[:-1]

        def back(g):
            for p, gp in zip(parts, np.split(g, widths, axis=1)):
                p.accumulate(gp)

        return self._record(np.concatenate([p.value for p in parts], axis=1), parts, back)

    def gather(self, x: Node, idx: np.ndarray) -> Node:
        def back(g):
            gx = np.zeros_like(x.value)
            np.add.at(gx, idx, g)
            x.accumulate(gx)

        return self._record(x.value[idx], (x,), back)

    def segment_sum(self, x: Node, seg: np.ndarray, num: int) -> Node:
        def back(g):
            x.accumulate(g[seg])

        return self._record(canonical_segment_sum(x.value, seg, num), (x,), back)

    def segment_mean(self, x: Node, seg: np.ndarray, num: int) -> Node:
        counts = np.bincount(seg, minlength=num).astype(np.float64)
        inv = np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)[:, None]

        def back(g):
            x.accumulate((g * inv)[seg])

        return self._record(canonical_segment_sum(x.value, seg, num) * inv, (x,), back)

    def column(self, x: Node, j: int) -> Node:
        def back(g):
            gx = np.zeros_like(x.value)
            gx[:, j] = g
            x.accumulate(gx)

        return self._record(x.value[:, j].copy(), (x,), back)

    def bce_with_logits(self, z: Node, y: np.ndarray, weights: np.ndarray) -> Node:
        """``sum_i w_i * [softplus(z_i) - y_i z_i]``; the stable form of weighted BCE."""
        zv = z.value
        softplus = np.maximum(zv, 0.0) + np.log1p(np.exp(-np.abs(zv)))
        loss = float(np.sum(weights * (softplus - y * zv)))

        def back(g):
            z.accumulate(g * weights * (sigmoid(zv) - y))

        return self._record(np.asarray(loss), (z,), back)

    # -------------------------------------------------------------------

    def backward(self, out: Node, seed: float = 1.0) -> None:
        out.grad = np.full_like(out.value, seed, dtype=np.float64)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    ez = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))


def softplus(z):
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
