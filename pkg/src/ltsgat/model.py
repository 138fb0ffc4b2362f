"""Model assembly: parameter registry, initialization, and the forward pass.

The forward path per sample: segment attention per band (shared
parameters), Bi-LSTM over the channel sequence, region embedding and
region attention, re-expansion to node features, and the GAT stack.
Ablation flags swap skipped blocks for shape-preserving pass-throughs.
Batches are processed in one graph; the LSTM runs all samples as columns.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import graph as gr
from . import spatial as sp
from . import temporal as tp
from .autodiff import Node
from .config import TrainConfig
from .errors import ConfigError, ShapeError
from .spatial import RegionMap


def _init_rng(seed: int, name: str) -> np.random.Generator:
    # per-name streams keep initialization independent of registry layout
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def glorot_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


class ParamRegistry:
    """Ordered name -> parameter mapping with deterministic initialization."""

    def __init__(self, seed: int):
        self.seed = seed
        self._params: dict[str, Node] = {}

    def weight(self, name: str, rows: int, cols: int) -> Node:
        node = ad.parameter(glorot_uniform(_init_rng(self.seed, name), rows, cols))
        return self._register(name, node)

    def zeros(self, name: str, rows: int, cols: int) -> Node:
        return self._register(name, ad.parameter(np.zeros((rows, cols))))

    def _register(self, name: str, node: Node) -> Node:
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self._params[name] = node
        return node

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def __getitem__(self, name: str) -> Node:
        return self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def count_entries(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self._params.items()}

    def restore(self, snap: dict[str, np.ndarray]) -> None:
        for name, value in snap.items():
            self._params[name].value[...] = value


@dataclass
class ForwardResult:
    """Per-sample outputs of one forward pass."""
    z_prime: list[Node]                       # each n x F'
    temporal_weights: list[list[Node]]        # per sample, per band (k x k)
    region_weights: list[Node | None]         # per sample (N x N)


class Model:
    """The full network: parameters plus the composed forward computation."""

    def __init__(self, config: TrainConfig, region_map: RegionMap | None = None,
                 topology: gr.GraphTopology | None = None):
        config.validate()
        self.config = config
        if region_map is not None:
            self.region_map = region_map
        elif config.region_map is not None:
            self.region_map = sp.region_map_from_dict(config.region_map)
        elif config.region_map_path:
            self.region_map = sp.load_region_map(config.region_map_path)
        else:
            self.region_map = sp.default_region_map()
        self.region_map.validate_cover(config.n_channels)
        self.topology = topology or gr.topology_from_spec(config.topology,
                                                          config.n_channels)
        if self.topology.n != config.n_channels:
            raise ConfigError(f"topology has {self.topology.n} nodes, "
                              f"config expects {config.n_channels}")
        self.channel_region = self.region_map.region_of_channel(config.n_channels)
        self.registry = ParamRegistry(config.seed)
        self._build_params()

    # -- parameter construction ---------------------------------------------

    def _build_params(self) -> None:
        cfg = self.config
        reg = self.registry
        n, k = cfg.n_channels, cfg.segments
        feat = k * cfg.n_bands
        m = cfg.resolved_region_dim
        f_dim = cfg.gat_hidden

        if not cfg.disable_temporal:
            self.temporal = tp.TemporalAttentionParams(
                w_q=reg.weight("temporal/w_q", n, n),
                b_q=reg.zeros("temporal/b_q", n, k),
                w_k=reg.weight("temporal/w_k", n, n),
                b_k=reg.zeros("temporal/b_k", n, k),
                w_v=reg.weight("temporal/w_v", n, n),
                b_v=reg.zeros("temporal/b_v", n, k))
        else:
            self.temporal = None

        if not cfg.disable_spatial:
            d_h = cfg.lstm_hidden
            def direction(tag: str) -> sp.LSTMDirectionParams:
                width = d_h + feat
                return sp.LSTMDirectionParams(
                    w_in=reg.weight(f"lstm/{tag}/w_in", d_h, width),
                    b_in=reg.zeros(f"lstm/{tag}/b_in", d_h, 1),
                    w_fo=reg.weight(f"lstm/{tag}/w_fo", d_h, width),
                    b_fo=reg.zeros(f"lstm/{tag}/b_fo", d_h, 1),
                    w_ou=reg.weight(f"lstm/{tag}/w_ou", d_h, width),
                    b_ou=reg.zeros(f"lstm/{tag}/b_ou", d_h, 1),
                    w_c=reg.weight(f"lstm/{tag}/w_c", d_h, width),
                    b_c=reg.zeros(f"lstm/{tag}/b_c", d_h, 1))
            self.lstm = sp.LSTMParams(direction("fw"), direction("bw"))
            n_regions = self.region_map.n_regions
            w_g, b_g = [], []
            for r, chans in enumerate(self.region_map.channels):
                w_g.append(reg.weight(f"region/embed{r}/w", m, len(chans) * 2 * d_h))
                b_g.append(reg.zeros(f"region/embed{r}/b", m, 1))
            self.region = sp.RegionAttentionParams(
                w_g=w_g, b_g=b_g,
                w_q=reg.weight("region/w_q", m, m),
                b_q=reg.zeros("region/b_q", m, n_regions),
                w_k=reg.weight("region/w_k", m, m),
                b_k=reg.zeros("region/b_k", m, n_regions),
                w_v=reg.weight("region/w_v", m, m),
                b_v=reg.zeros("region/b_v", m, n_regions))
            self.expand = sp.NodeExpandParams(
                w_h=reg.weight("expand/w", f_dim, m),
                b_h=reg.zeros("expand/b", f_dim, 1))
            self.projector = None
        else:
            self.lstm = None
            self.region = None
            self.expand = None
            # shape-adapting pass-through: per-node affine feat -> F
            self.projector = sp.NodeExpandParams(
                w_h=reg.weight("projector/w", f_dim, feat),
                b_h=reg.zeros("projector/b", f_dim, 1))

        self.gat_layers: list[gr.GATLayerParams] = []
        for layer in range(cfg.gat_layers):
            f_in = f_dim  # first layer input F equals the hidden size F'
            heads = []
            for h in range(cfg.attention_heads):
                heads.append(gr.GATHeadParams(
                    w_s=reg.weight(f"gat/layer{layer}/head{h}/w_s", f_dim, f_in),
                    a_v=reg.weight(f"gat/layer{layer}/head{h}/a_v", 2 * f_dim, 1)))
            self.gat_layers.append(gr.GATLayerParams(heads))

        self.classifier = gr.ClassifierParams(
            w=reg.weight("classifier/w", 2, f_dim),
            b=reg.zeros("classifier/b", 2, 1))

        if not cfg.disable_domain_adaptation:
            self.discriminator = gr.DiscriminatorParams(
                w1=reg.weight("discriminator/w1", cfg.disc_hidden, f_dim),
                b1=reg.zeros("discriminator/b1", cfg.disc_hidden, 1),
                w2=reg.weight("discriminator/w2", 2, cfg.disc_hidden),
                b2=reg.zeros("discriminator/b2", 2, 1))
        else:
            self.discriminator = None

    # -- forward -------------------------------------------------------------

    def _temporal_block(self, x: np.ndarray) -> tuple[Node, list[Node]]:
        """Band-shared segment attention for one sample; returns X' and
        the per-band weight matrices."""
        cfg = self.config
        bands_out, weights = [], []
        for b in range(cfg.n_bands):
            xb = ad.constant(x[:, :, b])
            if self.temporal is None:
                bands_out.append(xb)
                continue
            q, k, v = tp.temporal_qkv(xb, self.temporal)
            w_a = tp.temporal_weights(q, k)
            weights.append(w_a)
            bands_out.append(tp.temporal_transform(v, w_a))
        xp = bands_out[0] if len(bands_out) == 1 else ad.concat_cols(bands_out)
        return xp, weights

    def _project_nodes(self, xp: Node) -> Node:
        p = self.projector
        return ad.transpose(ad.affine(p.w_h, ad.transpose(xp), p.b_h))

    def forward_batch(self, xs: np.ndarray) -> ForwardResult:
        """Forward a stack of samples, shape (B, n, k, d_b)."""
        cfg = self.config
        if xs.ndim != 4 or xs.shape[1:] != (cfg.n_channels, cfg.segments,
                                            cfg.n_bands):
            raise ShapeError(f"expected features (B, {cfg.n_channels}, "
                             f"{cfg.segments}, {cfg.n_bands}), got {xs.shape}")
        batch = xs.shape[0]
        n = cfg.n_channels
        xprimes, all_weights = [], []
        for s in range(batch):
            xp, weights = self._temporal_block(xs[s])
            xprimes.append(xp)
            all_weights.append(weights)

        if self.lstm is None:
            zs = [self._project_nodes(xp) for xp in xprimes]
            region_weights: list[Node | None] = [None] * batch
        else:
            stacked = xprimes[0] if batch == 1 else ad.concat_rows(xprimes)
            steps = []
            for i in range(n):
                idx = [s * n + i for s in range(batch)]
                steps.append(ad.transpose(ad.take_rows(stacked, idx)))
            h_fwd, h_bwd = sp.bilstm_states(steps, self.lstm, cfg.lstm_hidden,
                                            batch)
            g_blocks = []
            for r, chans in enumerate(self.region_map.channels):
                states = [(h_fwd[c], h_bwd[c]) for c in chans]
                g_blocks.append(sp.embed_region(states, self.region.w_g[r],
                                                self.region.b_g[r]))
            zs, region_weights = [], []
            for s in range(batch):
                cols = [ad.take_cols(bl, [s]) for bl in g_blocks]
                g_t = cols[0] if len(cols) == 1 else ad.concat_cols(cols)
                h, w_r = sp.region_attention(g_t, self.region)
                region_weights.append(w_r)
                zs.append(sp.expand_to_nodes(h, self.channel_region, self.expand))

        z_prime = [gr.gat_stack(z, self.topology, self.gat_layers,
                                cfg.leaky_slope) for z in zs]
        return ForwardResult(z_prime, all_weights, region_weights)

    def feedforward(self, x: np.ndarray) -> Node:
        """Z' (n x F') for a single feature tensor (n, k, d_b)."""
        return self.forward_batch(x[None, ...]).z_prime[0]

    # -- heads ----------------------------------------------------------------

    def class_probabilities(self, z_prime: Node) -> Node:
        return gr.classify(z_prime, self.classifier)

    def domain_probabilities(self, z_prime: Node, lam: float) -> Node:
        if self.discriminator is None:
            raise ConfigError("domain adaptation is disabled in this config")
        return gr.domain_discriminate(z_prime, self.discriminator, lam,
                                      self.config.leaky_slope)

    def predict(self, xs: np.ndarray) -> np.ndarray:
        """Class predictions (argmax) for a feature stack."""
        result = self.forward_batch(xs)
        probs = [self.class_probabilities(z).value for z in result.z_prime]
        return np.array([int(np.argmax(p)) for p in probs])

    def pooled_features(self, xs: np.ndarray) -> np.ndarray:
        """Node-mean of Z' per sample, the representation both heads see."""
        result = self.forward_batch(xs)
        return np.stack([gr.mean_pool(z).value[:, 0] for z in result.z_prime])


def analytic_param_count(config: TrainConfig, region_map: RegionMap | None = None) -> int:
    """Closed-form count of learnable entries from shapes alone."""
    cfg = config
    if region_map is None:
        if cfg.region_map is not None:
            region_map = sp.region_map_from_dict(cfg.region_map)
        elif cfg.region_map_path:
            region_map = sp.load_region_map(cfg.region_map_path)
        else:
            region_map = sp.default_region_map()
    n, k = cfg.n_channels, cfg.segments
    feat = k * cfg.n_bands
    m = cfg.resolved_region_dim
    f_dim = cfg.gat_hidden
    total = 0
    if not cfg.disable_temporal:
        total += 3 * (n * n + n * k)
    if not cfg.disable_spatial:
        d_h = cfg.lstm_hidden
        total += 2 * 4 * (d_h * (d_h + feat) + d_h)
        n_regions = region_map.n_regions
        total += sum(m * (len(c) * 2 * d_h) + m for c in region_map.channels)
        total += 3 * (m * m + m * n_regions)
        total += f_dim * m + f_dim
    else:
        total += f_dim * feat + f_dim
    total += cfg.gat_layers * cfg.attention_heads * (f_dim * f_dim + 2 * f_dim)
    total += 2 * f_dim + 2
    if not cfg.disable_domain_adaptation:
        total += cfg.disc_hidden * f_dim + cfg.disc_hidden + 2 * cfg.disc_hidden + 2
    return total
