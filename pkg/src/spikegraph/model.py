"""Backbone assembly: encoder, stacked SGC -> TSSA -> FSC blocks, wavelet
branch and classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, DimensionError
from .fsc import FrequencySpikingConv, Residual, block_compose
from .graph import SkeletonGraph, init_pa, load_graph, normalize_adjacency
from .lif import LIF, LifParams
from .mwtf import Classifier, WaveletBranch
from .numerics import Module
from .sgc import SpikeEncoder, SpikingGraphConv
from .tssa import TopologyShiftAttention

FULL_CHANNELS = ((3, 64), (64, 64), (64, 128), (128, 256))
TINY_CHANNELS = ((3, 16), (16, 16), (16, 32), (32, 64))


@dataclass(frozen=True)
class ModelConfig:
    channels: tuple = FULL_CHANNELS
    graph: str = "ntu"
    T: int = 16
    N: int = 3
    H: int = 4
    k: int = 8
    k_topo: int = 6
    M: int = 8
    J: object = 3
    num_classes: int = 60
    c_mid: int = 0
    groups: int = 8
    alpha: float = 0.7
    lam: float = 0.1
    beta: float = 1.0
    dropout: float = 0.3
    tau: float = 2.0
    v_rest: float = 0.0
    r: float = 1.0
    v_th: float = 1.0
    surrogate_width: float = 1.0
    scale_similarity: bool = True
    rebinarize: bool = False
    highpass: str = "scaled"
    aux_loss_weight: float = 0.03  # accepted for completeness; no auxiliary loss is defined
    seed: int = 0

    def __post_init__(self):
        chans = tuple(tuple(int(c) for c in pair) for pair in self.channels)
        object.__setattr__(self, "channels", chans)
        if not chans:
            raise ConfigError("need at least one backbone layer")
        for (a, b), (c, _) in zip(chans, chans[1:]):
            if b != c:
                raise ConfigError(f"channel chain breaks: layer outputs {b} but next expects {c}")
        if chans[0][0] != 3:
            raise ConfigError("the first layer consumes 3 coordinate channels")
        for name in ("T", "N", "H", "k", "k_topo", "M", "num_classes", "groups"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.J != "auto" and int(self.J) < 1:
            raise ConfigError("J must be positive or 'auto'")
        for _, c in chans:
            if c % self.H:
                raise ConfigError(f"{c} channels do not split into H={self.H} heads")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")

    @classmethod
    def tiny(cls, **overrides):
        return cls(channels=TINY_CHANNELS, **overrides)

    @property
    def lif(self) -> LifParams:
        return LifParams(self.tau, self.v_rest, self.r, self.v_th, self.surrogate_width)

    def to_dict(self):
        return asdict(self)


class Block(Module):
    """One backbone layer: SGC -> TSSA -> FSC, composed with a residual."""

    def __init__(self, c_in, c_out, a_norm, cfg: ModelConfig, rng, dtype, name):
        self.name = name
        self.pa = init_pa(a_norm, cfg.N, dtype)
        self.sgc = SpikingGraphConv(c_in, c_out, self.pa, lif=cfg.lif, rebinarize=cfg.rebinarize,
                                    rng=rng, dtype=dtype, name=f"{name}.sgc")
        self.tssa = TopologyShiftAttention(c_out, heads=cfg.H, k=cfg.k, alpha=cfg.alpha,
                                           scale_similarity=cfg.scale_similarity, lif=cfg.lif,
                                           rng=rng, dtype=dtype, name=f"{name}.tssa")
        self.fsc = FrequencySpikingConv(c_out, a_norm.shape[0], lif=cfg.lif, rng=rng, dtype=dtype,
                                        name=f"{name}.fsc")
        self.res = Residual(c_in, c_out, rng=rng, dtype=dtype)

    def forward(self, x):
        g_o = self.sgc.forward(x)
        g = self.tssa.forward(g_o, self.pa)
        f = self.fsc.forward(g)
        return block_compose(f, g, x, self.res)

    def backward(self, grad):
        g_g = grad + self.fsc.backward(grad)
        g_go = self.tssa.backward(g_g)
        return self.sgc.backward(g_go) + self.res.backward(grad)


class SpikingGraphNet(Module):
    def __init__(self, cfg: ModelConfig, graph: SkeletonGraph | None = None, dtype=np.float32):
        self.cfg = cfg
        self.graph = graph if graph is not None else load_graph(cfg.graph)
        self.dtype = dtype
        rng = np.random.default_rng(cfg.seed)
        a_norm = normalize_adjacency(self.graph.adjacency())
        widths = [c for _, c in cfg.channels]
        # the encoder lifts raw coordinates to the first layer's width
        self.encoder = SpikeEncoder(3, widths[0], lif=cfg.lif, rng=rng, dtype=dtype)
        self.blocks = []
        prev = widths[0]
        for i, (_, c_out) in enumerate(cfg.channels):
            self.blocks.append(Block(prev, c_out, a_norm, cfg, rng, dtype, f"block{i + 1}"))
            prev = c_out
        self.final_sn = LIF(cfg.lif, "final.sn")
        self.mwtf = WaveletBranch(prev, c_mid=cfg.c_mid or None, groups=cfg.groups, m=cfg.M,
                                  levels=cfg.J, k_topo=cfg.k_topo, lam=cfg.lam,
                                  highpass=cfg.highpass, lif=cfg.lif, rng=rng, dtype=dtype)
        self.head = Classifier(prev, cfg.num_classes, beta=cfg.beta, dropout=cfg.dropout,
                               rng=rng, dtype=dtype)
        self._cache = None

    @property
    def V(self) -> int:
        return self.graph.V

    def forward(self, x_raw):
        """x_raw: (B, T, 3, V) or (T, 3, V) raw coordinates -> logits."""
        x_raw = np.asarray(x_raw, dtype=self.dtype)
        if x_raw.ndim < 3 or x_raw.shape[-2] != 3:
            raise DimensionError(f"expected (..., T, 3, V) coordinates, got {x_raw.shape}")
        if x_raw.shape[-1] != self.V:
            raise DimensionError(f"model built for V={self.V}, input has {x_raw.shape[-1]} joints")
        x = self.encoder.forward(x_raw)
        for block in self.blocks:
            x = block.forward(x)
        spikes = self.final_sn.forward(x)
        x_hat = self.mwtf.forward(spikes, self.blocks[-1].pa)
        return self.head.forward(spikes, x_hat)

    def backward(self, grad_logits):
        g_spikes, g_xhat = self.head.backward(grad_logits)
        g_spikes = g_spikes + self.mwtf.backward(g_xhat)
        g = self.final_sn.backward(g_spikes)
        for block in reversed(self.blocks):
            g = block.backward(g)
        self.encoder.backward(g)

    def set_record(self, flag: bool):
        for blk in self.blocks:
            blk.tssa.record = flag
            blk.fsc.record = flag
        self.mwtf.record = flag

    def spiking_stages(self):
        return [m for m in self.modules() if isinstance(m, LIF)]


def build_model(cfg: ModelConfig | None = None, graph: SkeletonGraph | None = None,
                dtype=np.float32) -> SpikingGraphNet:
    return SpikingGraphNet(cfg or ModelConfig(), graph, dtype)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return float(loss), (grad / n).astype(logits.dtype)


def with_overrides(cfg: ModelConfig, **kw) -> ModelConfig:
    return replace(cfg, **kw)
