"""Operation counting, firing-rate measurement and energy estimation.

Counts are multiply-accumulates (one MAC = one FLOP). The first encoder
convolution consumes real-valued coordinates and is billed at the MAC
energy; every other layer is billed per synaptic operation at the
accumulate energy, with SOPs = rate * T * FLOPs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .fsc import FrequencySpikingConv
from .lif import LIF
from .model import ModelConfig, SpikingGraphNet, build_model
from .mwtf import padded_length, resolve_levels
from .numerics import Conv
from .sgc import SpikingGraphConv
from .tssa import TopologyShiftAttention

LAYER_KINDS = ("conv", "pa_matmul", "dft", "wavelet", "tssa_scores", "tssa_aggregate", "tatf", "fc")


@dataclass(frozen=True)
class EnergyModel:
    e_mac: float = 4.6e-12  # J per multiply-accumulate, 45 nm
    e_ac: float = 0.9e-12  # J per accumulate, 45 nm

    def __post_init__(self):
        if self.e_mac <= 0 or self.e_ac <= 0:
            raise ContractError("energy constants must be positive")


@dataclass
class LayerCost:
    name: str
    kind: str
    flops: int
    firing_rate: float = 0.0
    sops: float = 0.0
    is_first_encoder: bool = False


@dataclass
class CostReport:
    layers: list = field(default_factory=list)
    T: int = 16
    energy_mj: float = 0.0

    @property
    def total_flops(self) -> int:
        return int(sum(layer.flops for layer in self.layers))

    @property
    def total_sops(self) -> float:
        return float(sum(layer.sops for layer in self.layers if not layer.is_first_encoder))

    def to_csv(self, em: EnergyModel = EnergyModel()) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["layer", "flops", "fr", "sops", "energy_pj"])
        for layer in self.layers:
            w.writerow([layer.name, layer.flops, f"{layer.firing_rate:.6f}", f"{layer.sops:.1f}",
                        f"{layer_energy(layer, em) * 1e12:.3f}"])
        return buf.getvalue()

    def to_text(self, em: EnergyModel = EnergyModel()) -> str:
        lines = [f"{'layer':<32} {'kind':<15} {'FLOPs':>14} {'fr':>8} {'SOPs':>16}"]
        for layer in self.layers:
            lines.append(f"{layer.name:<32} {layer.kind:<15} {layer.flops:>14,d} "
                         f"{layer.firing_rate:>8.4f} {layer.sops:>16,.0f}")
        lines.append(f"total FLOPs {self.total_flops:,d} ({self.total_flops / 1e9:.3f} G)")
        lines.append(f"total SOPs  {self.total_sops:,.0f} ({self.total_sops / 1e9:.3f} G)")
        lines.append(f"energy      {energy(self, em):.6f} mJ")
        return "\n".join(lines)


def layer_flops(kind: str, **d) -> int:
    """Analytic MAC count of one layer for a (T, V) input."""
    t, v = d.get("t", 1), d.get("v", 1)
    if kind == "conv":
        return d["c_in"] // d.get("groups", 1) * d["c_out"] * t * v
    if kind == "pa_matmul":
        return d["c"] * v * v * t
    if kind == "dft":
        return 4 * v * v * t * d["c"]
    if kind == "wavelet":
        return 4 * d["m"] * d["m"] * t * v
    if kind == "tssa_scores":
        return v * v * d["c"] * t
    if kind == "tssa_aggregate":
        return d["k"] * v * d["c"] * t
    if kind == "tatf":
        return d["k"] * v * d["m"] * t
    if kind == "fc":
        return d["c_in"] * d["c_out"]
    raise ContractError(f"unknown layer kind {kind!r}")


def enumerate_layers(model: SpikingGraphNet, t: int | None = None) -> list[LayerCost]:
    """Every costed layer of ``model`` for ``t`` frames, in forward order."""
    cfg = model.cfg
    t = t or cfg.T
    v = model.V
    out: list[LayerCost] = []

    def add(name, kind, **dims):
        out.append(LayerCost(name, kind, layer_flops(kind, t=dims.pop("t", t), v=v, **dims)))

    for name, mod in model.named_modules():
        if isinstance(mod, Conv):
            add(name, "conv", c_in=mod.c_in, c_out=mod.c_out, groups=mod.groups)
        elif isinstance(mod, SpikingGraphConv):
            for n in range(len(mod.convs)):
                add(f"{name}.pa.{n}", "pa_matmul", c=mod.c_in)
        elif isinstance(mod, TopologyShiftAttention):
            add(f"{name}.scores", "tssa_scores", c=mod.channels)
            add(f"{name}.aggregate", "tssa_aggregate", c=mod.channels, k=mod.effective_k(v))
        elif isinstance(mod, FrequencySpikingConv):
            add(f"{name}.dft", "dft", c=mod.channels)
    mw = model.mwtf
    levels = resolve_levels(mw.levels, t)
    t_pad = padded_length(t)
    for j in range(levels):
        add(f"mwtf.level{j + 1}", "wavelet", m=mw.m, t=t_pad // 2 ** (j + 1))
    for j in range(levels - 1):
        add(f"mwtf.tatf{j + 1}", "tatf", m=mw.m, k=min(mw.k_topo, v))
    head = model.head
    add("head.fc", "fc", c_in=head.c_last, c_out=head.num_classes)
    out[0].is_first_encoder = out[0].name == "encoder.conv"
    order = {name: i for i, (name, _) in enumerate(model.named_modules())}
    return sorted(out, key=lambda c: _forward_rank(c.name, order))


def _forward_rank(name, order):
    # sub-op names such as blocks.0.sgc.pa.1 sort with their owning module
    parts = name.split(".")
    for cut in range(len(parts), 0, -1):
        key = ".".join(parts[:cut])
        if key in order:
            return (order[key], name)
    return (len(order), name)


def count_flops(cfg: ModelConfig | SpikingGraphNet, input_shape=None) -> list[LayerCost]:
    """Per-layer MACs for a config (or a built model); independent of data.

    ``input_shape`` is ``(T, V)``; V must match the configured graph.
    """
    model = cfg if isinstance(cfg, SpikingGraphNet) else build_model(cfg)
    t = input_shape[0] if input_shape else None
    if input_shape and input_shape[1] != model.V:
        raise ContractError(f"graph has {model.V} joints, input shape asks for {input_shape[1]}")
    return enumerate_layers(model, t)


def _activity(x) -> float:
    return float(np.count_nonzero(x)) / x.size if x is not None and x.size else 0.0


def _input_activity(model: SpikingGraphNet) -> dict[str, float]:
    act = {}
    for name, mod in model.named_modules():
        if isinstance(mod, Conv):
            act[name] = _activity(mod._cache)
        elif isinstance(mod, SpikingGraphConv):
            for n in range(len(mod.convs)):
                act[f"{name}.pa.{n}"] = _activity(mod._cache)
        elif isinstance(mod, TopologyShiftAttention):
            act[f"{name}.scores"] = 0.5 * (mod.q_sn.last_rate + mod.k_sn.last_rate)
            act[f"{name}.aggregate"] = mod.v_sn.last_rate
        elif isinstance(mod, FrequencySpikingConv):
            act[f"{name}.dft"] = _activity(mod._cache)
    down = model.mwtf.down_conv._cache
    down_act = 1.0 if down is not None else 0.0
    for j in range(8):
        act[f"mwtf.level{j + 1}"] = down_act
        act[f"mwtf.tatf{j + 1}"] = down_act
    act["head.fc"] = _activity(model.head._cache[2]) if model.head._cache else 0.0
    return act


def measure_firing_rate(model: SpikingGraphNet, batch, chunk: int = 64):
    """Mean spike rate of every SN stage, and input activity of every costed layer.

    Returns ``(stage_rates, layer_activity)``; both are averaged over the
    whole batch (processed in chunks, weighted by chunk size) in eval mode.
    """
    batch = np.asarray(batch)
    if batch.ndim == 3:
        batch = batch[None]
    if len(batch) == 0:
        raise ContractError("firing-rate measurement needs a non-empty batch")
    was_training = model.training
    model.eval()
    stages = {name: mod for name, mod in model.named_modules() if isinstance(mod, LIF)}
    stage_sum = {name: 0.0 for name in stages}
    act_sum: dict[str, float] = {}
    for start in range(0, len(batch), chunk):
        part = batch[start:start + chunk]
        model.forward(part)
        w = len(part)
        for name, mod in stages.items():
            stage_sum[name] += w * mod.last_rate
        for name, a in _input_activity(model).items():
            act_sum[name] = act_sum.get(name, 0.0) + w * a
    model.train(was_training)
    n = len(batch)
    return ({k: v / n for k, v in stage_sum.items()}, {k: v / n for k, v in act_sum.items()})


def sops(fr: float, t: int, flops: float) -> float:
    if not 0.0 <= fr <= 1.0:
        raise ContractError(f"firing rate {fr} outside [0, 1]")
    if t < 1:
        raise ContractError("need at least one time step")
    return fr * t * flops


def layer_energy(layer: LayerCost, em: EnergyModel = EnergyModel()) -> float:
    """Joules billed to one layer."""
    return em.e_mac * layer.flops if layer.is_first_encoder else em.e_ac * layer.sops


def energy(report: CostReport, em: EnergyModel = EnergyModel()) -> float:
    """Total energy in mJ: encoder MACs at e_mac plus all other SOPs at e_ac."""
    joules = sum(layer_energy(layer, em) for layer in report.layers)
    return joules * 1e3


def build_report(layers: list[LayerCost], rates: dict[str, float], t: int,
                 em: EnergyModel = EnergyModel()) -> CostReport:
    for layer in layers:
        if layer.is_first_encoder:
            layer.firing_rate, layer.sops = 1.0, 0.0
            continue
        layer.firing_rate = min(max(rates.get(layer.name, 0.0), 0.0), 1.0)
        layer.sops = sops(layer.firing_rate, t, layer.flops)
    report = CostReport(layers, t)
    report.energy_mj = energy(report, em)
    return report


def profile_model(model: SpikingGraphNet, batch, em: EnergyModel = EnergyModel()) -> CostReport:
    t = np.asarray(batch).shape[-3]
    layers = enumerate_layers(model, t)
    _, activity = measure_firing_rate(model, batch)
    return build_report(layers, activity, model.cfg.T, em)
