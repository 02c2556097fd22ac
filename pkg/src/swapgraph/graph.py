"""Instance graphs over a batch of disentangled codes, and graph-convolution
propagation across them.

Each batch of w samples becomes a w-node graph: node features are the
concatenated texture + flattened structure codes, and edges come from a w x 2
matrix of cosine similarities against the batch-mean anchor codes.  The whole
construction is differentiable, so gradients flow from the classifier back
into the encoders.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, cosine_rows, matmul, power, transpose
from .disentangle import LatentCode
from .nn import Module, uniform_init


@dataclass
class InstanceGraph:
    """A fully materialized batch graph; every field stays on the tape."""

    x: Tensor        # (w, k) node features
    x_sc: Tensor     # (w, 2) cosine scores vs batch-mean anchors
    a_hat: Tensor    # (w, w) clamped affinities + self-loops
    d_hat: Tensor    # (w,)   degrees, each >= 1
    s: Tensor        # (w, w) symmetrically rescaled propagation matrix


def node_features(code: LatentCode) -> Tensor:
    """Concatenate texture and flattened structure codes row-wise."""
    w = code.z_tex.data.shape[0]
    return concat([code.z_tex, code.z_str.reshape(w, -1)], axis=1)


def similarity_scores(code: LatentCode) -> Tensor:
    """Score every sample against the batch-mean anchor codes.

    Row i is (cos(z_tex_i, mean z_tex), cos(z_str_i, mean z_str)); with a
    single-sample batch both entries are 1 (each code is its own anchor).
    """
    w = code.z_tex.data.shape[0]
    if w == 0:
        raise ValueError("similarity scores need at least one sample")
    str_flat = code.z_str.reshape(w, -1)
    tex_col = cosine_rows(code.z_tex, code.z_tex.mean(axis=0))
    str_col = cosine_rows(str_flat, str_flat.mean(axis=0))
    return concat([tex_col.reshape(w, 1), str_col.reshape(w, 1)], axis=1)


def build_adjacency(x_sc: Tensor) -> tuple[Tensor, Tensor]:
    """Raw affinities are the score-matrix Gram product; negatives clamp to
    zero, the diagonal is replaced by unit self-loops, and degrees are row
    sums (hence always >= 1)."""
    w = x_sc.data.shape[0]
    raw = matmul(x_sc, transpose(x_sc))
    off_diag = Tensor(1.0 - np.eye(w))
    a_hat = raw.relu() * off_diag + Tensor(np.eye(w))
    d_hat = a_hat.sum(axis=1)
    return a_hat, d_hat


def normalize_adjacency(a_hat: Tensor, d_hat: Tensor) -> Tensor:
    """S = D^{-1/2} A D^{-1/2}, computed elementwise with broadcasting."""
    if np.any(d_hat.data <= 0):
        raise AssertionError(f"degrees must be positive, got {d_hat.data}")
    w = d_hat.data.shape[0]
    inv_sqrt = power(d_hat, -0.5)
    return inv_sqrt.reshape(w, 1) * a_hat * inv_sqrt.reshape(1, w)


def build_graph(code: LatentCode) -> InstanceGraph:
    x_sc = similarity_scores(code)
    a_hat, d_hat = build_adjacency(x_sc)
    s = normalize_adjacency(a_hat, d_hat)
    return InstanceGraph(x=node_features(code), x_sc=x_sc, a_hat=a_hat, d_hat=d_hat, s=s)


def gcn_layer(s: Tensor, x: Tensor, weight: Tensor, activation: str = "relu") -> Tensor:
    """One propagation step: activation(S @ X @ W)."""
    if s.data.shape[0] != s.data.shape[1] or s.data.shape[1] != x.data.shape[0]:
        raise ValueError(
            f"propagation matrix {s.data.shape} does not match {x.data.shape[0]} nodes"
        )
    if x.data.shape[1] != weight.data.shape[0]:
        raise ValueError(
            f"feature width {x.data.shape[1]} does not match weight {weight.data.shape}"
        )
    z = matmul(matmul(s, x), weight)
    if activation == "relu":
        return z.relu()
    if activation == "none":
        return z
    raise ValueError(f"activation must be 'relu' or 'none', got {activation!r}")


class GcnStack(Module):
    """Two stacked propagation layers, ReLU between and none after.  A single
    instance serves the source and target graphs, so its weights are shared
    across domains."""

    def __init__(self, k: int, hidden: int, out: int, rng: np.random.Generator):
        self.w1 = uniform_init(rng, (k, hidden), k)
        self.w2 = uniform_init(rng, (hidden, out), hidden)

    def __call__(self, graph: InstanceGraph) -> Tensor:
        h = gcn_layer(graph.s, graph.x, self.w1, activation="relu")
        return gcn_layer(graph.s, h, self.w2, activation="none")


def gcn_forward(stack: GcnStack, graph: InstanceGraph) -> Tensor:
    return stack(graph)
