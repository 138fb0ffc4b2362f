"""Channel-sequence encoder: Bi-LSTM, region pooling, and region attention.

Channels are traversed as a sequence by two independent LSTM directions;
their states are grouped into cortical regions, embedded per region,
mixed by row-stochastic region attention, and broadcast back to nodes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .errors import DataFormatError


# ---------------------------------------------------------------------------
# region map
# ---------------------------------------------------------------------------

@dataclass
class RegionMap:
    """Partition of channel indices into named regions."""
    names: list[str]
    channels: list[list[int]]
    channel_names: list[str] | None = None

    def __post_init__(self):
        seen: set[int] = set()
        for name, chans in zip(self.names, self.channels):
            if not chans:
                raise DataFormatError(f"region {name!r} is empty")
            overlap = seen.intersection(chans)
            if overlap:
                raise DataFormatError(f"region {name!r} reuses channels {sorted(overlap)}")
            seen.update(chans)
        self._covered = seen

    @property
    def n_regions(self) -> int:
        return len(self.names)

    def validate_cover(self, n_channels: int) -> None:
        expected = set(range(n_channels))
        if self._covered != expected:
            missing = sorted(expected - self._covered)
            extra = sorted(self._covered - expected)
            raise DataFormatError(f"region map does not partition {n_channels} "
                                  f"channels: missing={missing} extra={extra}")

    def channels_of(self, name: str) -> list[int]:
        return self.channels[self.names.index(name)]

    def to_dict(self) -> dict:
        return {"regions": [{"name": n, "channels": list(c)}
                            for n, c in zip(self.names, self.channels)]}

    def region_of_channel(self, n_channels: int) -> list[int]:
        """For each channel index, the region index that owns it."""
        owner = [-1] * n_channels
        for r, chans in enumerate(self.channels):
            for c in chans:
                owner[c] = r
        return owner


def region_map_from_dict(data: dict) -> RegionMap:
    try:
        regions = data["regions"]
        names = [r["name"] for r in regions]
        channels = [list(map(int, r["channels"])) for r in regions]
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"malformed region map: {exc}") from exc
    return RegionMap(names, channels, data.get("channel_names"))


def load_region_map(path) -> RegionMap:
    with open(path) as fh:
        return region_map_from_dict(json.load(fh))


def default_region_map() -> RegionMap:
    text = resources.files("ltsgat.data").joinpath("regions32.json").read_text()
    return region_map_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# LSTM
# ---------------------------------------------------------------------------

@dataclass
class LSTMDirectionParams:
    """Gate weights over the concatenated [hidden; input] column."""
    w_in: Node
    b_in: Node
    w_fo: Node
    b_fo: Node
    w_ou: Node
    b_ou: Node
    w_c: Node
    b_c: Node

    def nodes(self, prefix: str) -> dict[str, Node]:
        return {f"{prefix}/w_in": self.w_in, f"{prefix}/b_in": self.b_in,
                f"{prefix}/w_fo": self.w_fo, f"{prefix}/b_fo": self.b_fo,
                f"{prefix}/w_ou": self.w_ou, f"{prefix}/b_ou": self.b_ou,
                f"{prefix}/w_c": self.w_c, f"{prefix}/b_c": self.b_c}


@dataclass
class LSTMParams:
    forward: LSTMDirectionParams
    backward: LSTMDirectionParams

    def nodes(self) -> dict[str, Node]:
        out = self.forward.nodes("lstm/fw")
        out.update(self.backward.nodes("lstm/bw"))
        return out


def lstm_cell(x: Node, h_prev: Node, c_prev: Node,
              params: LSTMDirectionParams) -> tuple[Node, Node]:
    """One gated step; columns of x/h/c may batch several samples."""
    z = ad.concat_rows([h_prev, x])
    mu = ad.sigmoid(ad.affine(params.w_in, z, params.b_in))
    tau = ad.sigmoid(ad.affine(params.w_fo, z, params.b_fo))
    o = ad.sigmoid(ad.affine(params.w_ou, z, params.b_ou))
    c_tilde = ad.tanh(ad.affine(params.w_c, z, params.b_c))
    c = ad.add(ad.hadamard(tau, c_prev), ad.hadamard(mu, c_tilde))
    h = ad.hadamard(o, ad.tanh(c))
    return h, c


def _run_direction(inputs: list[Node], params: LSTMDirectionParams,
                   d_h: int, batch: int) -> list[Node]:
    h = ad.constant(np.zeros((d_h, batch)))
    c = ad.constant(np.zeros((d_h, batch)))
    states = []
    for x in inputs:
        h, c = lstm_cell(x, h, c, params)
        states.append(h)
    return states


def bilstm_states(step_inputs: list[Node], params: LSTMParams, d_h: int,
                  batch: int) -> tuple[list[Node], list[Node]]:
    """Hidden states per channel for both directions, in channel order.

    step_inputs[i] is the (input_dim x batch) column block for channel i.
    Both directions start from zero states.
    """
    fwd = _run_direction(step_inputs, params.forward, d_h, batch)
    bwd = _run_direction(list(reversed(step_inputs)), params.backward, d_h, batch)
    bwd.reverse()
    return fwd, bwd


def bilstm_sequence(x_rows: Node, params: LSTMParams, d_h: int) -> Node:
    """S (n x 2*d_h) for a single sample whose rows are channel features."""
    n = x_rows.value.shape[0]
    steps = [ad.transpose(ad.take_rows(x_rows, [i])) for i in range(n)]
    fwd, bwd = bilstm_states(steps, params, d_h, 1)
    cols = [ad.concat_rows([fwd[i], bwd[i]]) for i in range(n)]
    return ad.transpose(ad.concat_cols(cols))


# ---------------------------------------------------------------------------
# region embedding and attention
# ---------------------------------------------------------------------------

@dataclass
class RegionAttentionParams:
    """Per-region input affines plus shared q/k/v maps on the embeddings."""
    w_g: list[Node]               # per region: m x (|region| * 2*d_h)
    b_g: list[Node]               # per region: m x 1
    w_q: Node                     # m x m
    b_q: Node                     # m x N
    w_k: Node
    b_k: Node
    w_v: Node
    b_v: Node

    def nodes(self) -> dict[str, Node]:
        out = {}
        for i, (w, b) in enumerate(zip(self.w_g, self.b_g)):
            out[f"region/embed{i}/w"] = w
            out[f"region/embed{i}/b"] = b
        out.update({"region/w_q": self.w_q, "region/b_q": self.b_q,
                    "region/w_k": self.w_k, "region/b_k": self.b_k,
                    "region/w_v": self.w_v, "region/b_v": self.b_v})
        return out


@dataclass
class NodeExpandParams:
    """Shared per-node affine lifting region embeddings to GAT inputs."""
    w_h: Node                     # F x m
    b_h: Node                     # F x 1

    def nodes(self) -> dict[str, Node]:
        return {"expand/w": self.w_h, "expand/b": self.b_h}


def embed_region(per_channel_states: list[tuple[Node, Node]], w_g: Node,
                 b_g: Node) -> Node:
    """Stack [h_fwd; h_bwd] for each member channel, then apply the affine.

    Returns an (m x batch) block; each column is one sample's embedding.
    """
    rows: list[Node] = []
    for h_f, h_b in per_channel_states:
        rows.append(h_f)
        rows.append(h_b)
    return ad.affine(w_g, ad.concat_rows(rows), b_g)


def partition_and_embed(s_rows: Node, region_map: RegionMap,
                        params: RegionAttentionParams) -> Node:
    """G (N x m) for a single sample from its S matrix (n x 2*d_h).

    Member rows of S stack into one column in map order before the
    region's affine, the same layout embed_region uses.
    """
    rows = []
    for r, chans in enumerate(region_map.channels):
        flat = ad.concat_rows(
            [ad.transpose(ad.take_rows(s_rows, [c])) for c in chans])
        rows.append(ad.transpose(ad.affine(params.w_g[r], flat, params.b_g[r])))
    return ad.concat_rows(rows)


def region_attention(g_t: Node, params: RegionAttentionParams) -> tuple[Node, Node]:
    """Row-stochastic mixing of region embeddings.

    `g_t` is m x N (embeddings as columns). Scores E[p, i] = q_p . k_i;
    each row normalizes over source regions i. Returns (H: N x m, W_r: N x N).
    """
    q = ad.affine(ad.transpose(params.w_q), g_t, params.b_q)
    k = ad.affine(ad.transpose(params.w_k), g_t, params.b_k)
    v = ad.affine(ad.transpose(params.w_v), g_t, params.b_v)
    scores = ad.matmul(ad.transpose(q), k)
    w_r = ad.softmax(scores, axis=1)
    h = ad.matmul(w_r, ad.transpose(v))
    return h, w_r


def region_importance(w_r: np.ndarray) -> np.ndarray:
    """Column sums: total attention each region receives; sums to N."""
    w = np.asarray(w_r)
    return w.sum(axis=0)


def expand_to_nodes(h: Node, channel_region: list[int],
                    params: NodeExpandParams) -> Node:
    """Every channel takes its region's row of H, then the shared affine."""
    gathered = ad.take_rows(h, channel_region)          # n x m
    return ad.transpose(ad.affine(params.w_h, ad.transpose(gathered), params.b_h))
