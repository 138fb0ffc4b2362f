"""Graph attention stack, emotion classifier, and adversarial domain head.

Attention coefficients are computed per node over its neighborhood
(self-loops always included), heads are averaged, and the classifier and
domain discriminator both consume the node-mean pooled representation.
The gradient reversal layer makes the discriminator adversarial.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import ConfigError, DataFormatError, ShapeError


# ---------------------------------------------------------------------------
# topology
# ---------------------------------------------------------------------------

@dataclass
class GraphTopology:
    """Symmetric neighbor structure over n nodes, self-loops included."""
    n: int
    mask: np.ndarray              # (n, n) of {0., 1.}

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=np.float64)
        if m.shape != (self.n, self.n):
            raise DataFormatError(f"topology mask shape {m.shape} != ({self.n}, {self.n})")
        if not np.all(np.diag(m) == 1.0):
            raise DataFormatError("topology must include every self-loop")
        if not np.array_equal(m, m.T):
            raise DataFormatError("topology must be symmetric")
        self.mask = m

    def neighbors(self, i: int) -> list[int]:
        return [j for j in range(self.n) if self.mask[i, j] > 0.0]


def full_topology(n: int) -> GraphTopology:
    return GraphTopology(n, np.ones((n, n)))


def distance_topology(coords: np.ndarray, threshold: float) -> GraphTopology:
    xyz = np.asarray(coords, dtype=np.float64)
    n = xyz.shape[0]
    d = np.linalg.norm(xyz[:, None, :] - xyz[None, :, :], axis=-1)
    mask = (d <= threshold).astype(np.float64)
    np.fill_diagonal(mask, 1.0)
    return GraphTopology(n, mask)


def default_coords() -> np.ndarray:
    text = resources.files("ltsgat.data").joinpath("coords32.json").read_text()
    return np.asarray(json.loads(text)["xyz"], dtype=np.float64)


def topology_from_spec(spec: dict, n: int) -> GraphTopology:
    """Build from {"mode": "full" | "distance", "threshold": r, "coords": ...}."""
    mode = spec.get("mode", "full")
    if mode == "full":
        return full_topology(n)
    if mode == "distance":
        if "threshold" not in spec:
            raise ConfigError("distance topology requires a 'threshold'")
        coords = np.asarray(spec["coords"]) if "coords" in spec else default_coords()
        if coords.shape[0] != n:
            raise ConfigError(f"topology coords for {coords.shape[0]} nodes, "
                              f"config has n={n}")
        return distance_topology(coords, float(spec["threshold"]))
    raise ConfigError(f"unknown topology mode {mode!r}")


# ---------------------------------------------------------------------------
# GAT layers
# ---------------------------------------------------------------------------

@dataclass
class GATHeadParams:
    w_s: Node                     # F' x F
    a_v: Node                     # 2F' x 1


@dataclass
class GATLayerParams:
    heads: list[GATHeadParams]

    def nodes(self, prefix: str) -> dict[str, Node]:
        out = {}
        for h, head in enumerate(self.heads):
            out[f"{prefix}/head{h}/w_s"] = head.w_s
            out[f"{prefix}/head{h}/a_v"] = head.a_v
        return out


def gat_coeffs(z: Node, topo: GraphTopology, head: GATHeadParams,
               slope: float = 0.2) -> tuple[Node, Node]:
    """Neighbor-normalized attention rows for one head.

    Scores e_ij = LeakyReLU(a_v^T [W_s z_i || W_s z_j]) factor into a
    left and right half of a_v, so the n x n score matrix is an outer sum
    of two projections. Returns (attention n x n, projected nodes n x F').
    """
    f_out = head.w_s.value.shape[0]
    proj = ad.matmul(z, ad.transpose(head.w_s))            # n x F'
    a_left = ad.take_rows(head.a_v, list(range(f_out)))
    a_right = ad.take_rows(head.a_v, list(range(f_out, 2 * f_out)))
    s_l = ad.matmul(proj, a_left)                          # n x 1
    s_r = ad.matmul(proj, a_right)                         # n x 1
    ones_row = ad.constant(np.ones((1, topo.n)))
    ones_col = ad.constant(np.ones((topo.n, 1)))
    scores = ad.leaky_relu(
        ad.add(ad.matmul(s_l, ones_row), ad.matmul(ones_col, ad.transpose(s_r))),
        slope)
    att = ad.softmax(scores, axis=1, mask=topo.mask)
    return att, proj


def gat_layer(z: Node, topo: GraphTopology, layer: GATLayerParams,
              slope: float = 0.2) -> Node:
    """Multi-head neighborhood aggregation, heads averaged then activated."""
    if not layer.heads:
        raise ConfigError("GAT layer needs at least one head")
    head_outs = []
    for head in layer.heads:
        att, proj = gat_coeffs(z, topo, head, slope)
        head_outs.append(ad.matmul(att, proj))
    total = head_outs[0]
    for extra in head_outs[1:]:
        total = ad.add(total, extra)
    return ad.leaky_relu(ad.scale(total, 1.0 / len(layer.heads)), slope)


def gat_stack(z: Node, topo: GraphTopology, layers: list[GATLayerParams],
              slope: float = 0.2) -> Node:
    """Composition of GAT layers; consecutive dimensions must chain."""
    if not layers:
        raise ConfigError("GAT stack needs at least one layer")
    out = z
    for i, layer in enumerate(layers):
        f_in = layer.heads[0].w_s.value.shape[1]
        if out.value.shape[1] != f_in:
            raise ConfigError(f"GAT layer {i} expects {f_in} input features, "
                              f"got {out.value.shape[1]}")
        out = gat_layer(out, topo, layer, slope)
    return out


# ---------------------------------------------------------------------------
# heads and losses
# ---------------------------------------------------------------------------

@dataclass
class ClassifierParams:
    w: Node                       # 2 x F'
    b: Node                       # 2 x 1

    def nodes(self) -> dict[str, Node]:
        return {"classifier/w": self.w, "classifier/b": self.b}


@dataclass
class DiscriminatorParams:
    w1: Node                      # hidden x F'
    b1: Node
    w2: Node                      # 2 x hidden
    b2: Node

    def nodes(self) -> dict[str, Node]:
        return {"discriminator/w1": self.w1, "discriminator/b1": self.b1,
                "discriminator/w2": self.w2, "discriminator/b2": self.b2}


def mean_pool(z: Node) -> Node:
    """Node-mean of the graph representation, as an F' x 1 column."""
    return ad.transpose(ad.mean(z, axis=0))


def classify(z: Node, params: ClassifierParams) -> Node:
    """Class probability pair from pooled node features."""
    logits = ad.affine(params.w, mean_pool(z), params.b)
    return ad.softmax(logits, axis=0)


PROB_FLOOR = 1e-15


def _floored(p_selected: Node, floor: Node) -> Node:
    # max(p, floor) composed as floor + relu(p - floor); exact for p >> floor
    return ad.add(ad.leaky_relu(ad.sub(p_selected, floor), slope=0.0), floor)


def classification_loss(probabilities: list[Node], labels: list[int]) -> Node:
    """Mean cross-entropy -ln p[y] over the batch.

    The selected probability is floored at 1e-15 before the log: under
    adversarial reversal the optimizer actively drives it toward zero,
    and an unfloored log would turn saturation into inf/NaN gradients.
    """
    if not probabilities:
        raise ShapeError("classification_loss over an empty batch")
    if len(probabilities) != len(labels):
        raise ShapeError(f"{len(probabilities)} probability pairs vs "
                         f"{len(labels)} labels")
    floor = ad.constant(np.full((1, 1), PROB_FLOOR))
    losses = [ad.scale(ad.log(_floored(ad.take_rows(p, [int(y)]), floor)), -1.0)
              for p, y in zip(probabilities, labels)]
    return ad.mean(ad.concat_cols(losses), axis=1)


def grad_reverse(x: Node, lam: float) -> Node:
    """Identity forward; backward multiplies the gradient by -lam."""
    if lam < 0:
        raise ConfigError(f"gradient reversal needs lam >= 0, got {lam}")
    return Node(x.value, (x,), (lambda g: (-lam) * g,), op="grad_reverse")


def domain_discriminate(z: Node, params: DiscriminatorParams, lam: float,
                        slope: float = 0.2) -> Node:
    """Domain probability pair from pooled features, behind the GRL."""
    pooled = grad_reverse(mean_pool(z), lam)
    hidden = ad.leaky_relu(ad.affine(params.w1, pooled, params.b1), slope)
    logits = ad.affine(params.w2, hidden, params.b2)
    return ad.softmax(logits, axis=0)


def total_loss(class_probs: list[Node], class_labels: list[int],
               domain_probs: list[Node], domain_labels: list[int]) -> tuple[Node, Node, Node]:
    """Composed objective: classification plus domain loss through the GRL.

    Returns (total, classification term, domain term). Because the domain
    probabilities already flow through grad_reverse, shared parameters
    receive grad(L_c) - lam * grad(L_d) while the discriminator receives
    +grad(L_d) from one backward pass.
    """
    l_c = classification_loss(class_probs, class_labels)
    l_d = classification_loss(domain_probs, domain_labels)
    return ad.add(l_c, l_d), l_c, l_d
