"""Segment-level (temporal) attention over the feature time axis.

Affine query/key/value maps act on an n x k band slice; inner-product
scores normalize over segments into a column-stochastic k x k weight
matrix that convexly remixes the value columns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node


@dataclass
class TemporalAttentionParams:
    """Query/key/value affine maps: weights n x n, biases n x k."""
    w_q: Node
    b_q: Node
    w_k: Node
    b_k: Node
    w_v: Node
    b_v: Node

    def nodes(self) -> dict[str, Node]:
        return {"temporal/w_q": self.w_q, "temporal/b_q": self.b_q,
                "temporal/w_k": self.w_k, "temporal/b_k": self.b_k,
                "temporal/w_v": self.w_v, "temporal/b_v": self.b_v}


def temporal_qkv(x: Node, params: TemporalAttentionParams) -> tuple[Node, Node, Node]:
    """Q = W_q^T X + B_q, and likewise for K and V."""
    q = ad.affine(ad.transpose(params.w_q), x, params.b_q)
    k = ad.affine(ad.transpose(params.w_k), x, params.b_k)
    v = ad.affine(ad.transpose(params.w_v), x, params.b_v)
    return q, k, v


def temporal_weights(q: Node, k: Node) -> Node:
    """Column-stochastic segment weights.

    Scores E = K^T Q (row i holds k_i^T Q); each column softmax-normalizes
    over rows, so column c weighs how much every segment contributes to
    output segment c.
    """
    scores = ad.matmul(ad.transpose(k), q)
    return ad.softmax(scores, axis=0)


def temporal_transform(v: Node, w_a: Node) -> Node:
    """X' = V W_A: every output column is a convex mix of value columns."""
    return ad.matmul(v, w_a)


def temporal_importance(w_a: np.ndarray) -> np.ndarray:
    """Row sums of the weight matrix; sums to k over all segments."""
    w = np.asarray(w_a)
    return w.sum(axis=1)
