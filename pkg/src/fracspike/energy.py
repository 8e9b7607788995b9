"""Inference energy estimate from firing rates and per-layer operation counts.

Each layer costs ``E_op * T * R * FL`` where ``R`` is the firing rate of the
spikes it consumes (or produces, by the caller's convention), ``FL`` its
operation count per sample per step and ``E_op`` is ``E_AC`` for spike-driven
layers and ``E_MAC`` for a real-valued encoding layer.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence

logger = logging.getLogger(__name__)

E_MAC = 4.6e-12  # J per multiply-accumulate, 32-bit float, 45 nm
E_AC = 0.9e-12  # J per accumulate


@dataclass(frozen=True)
class EnergyModel:
    T: int = 16
    e_mac: float = E_MAC
    e_ac: float = E_AC

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be a positive integer")
        if self.e_mac < 0 or self.e_ac < 0:
            raise ValueError("per-operation energies must be non-negative")
        if (self.e_mac, self.e_ac) != (E_MAC, E_AC):
            logger.info("energy constants overridden: e_mac=%g J, e_ac=%g J", self.e_mac, self.e_ac)


@dataclass(frozen=True)
class LayerCost:
    """``kind`` is ``"dense"``, ``"conv"`` or ``"encoding"``.

    The encoding layer (first conv) is charged at ``E_MAC``, all others at ``E_AC``.
    """

    name: str
    flops: float
    rate: float
    kind: str = "dense"

    def __post_init__(self):
        if self.kind not in ("dense", "conv", "encoding"):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.flops < 0:
            raise ValueError(f"layer {self.name}: negative flops {self.flops}")
        if self.rate < 0:
            raise ValueError(f"layer {self.name}: negative firing rate {self.rate}")
        if self.rate > 1:
            raise ValueError(f"layer {self.name}: firing rate {self.rate} exceeds 1")


def dense_flops(n_in: int, n_out: int) -> int:
    """Two operations (multiply and add) per weight."""
    return 2 * n_in * n_out


def conv2d_flops(c_in: int, c_out: int, kernel: int, h_out: int, w_out: int) -> int:
    return 2 * c_in * c_out * kernel * kernel * h_out * w_out


def layer_energy(layer: LayerCost, model: EnergyModel) -> float:
    e_op = model.e_mac if layer.kind == "encoding" else model.e_ac
    return e_op * model.T * layer.rate * layer.flops


def estimate_energy(layers: Iterable[LayerCost], model: EnergyModel) -> Dict[str, object]:
    """Total joules and the per-layer breakdown (same order as ``layers``)."""
    breakdown: List[Dict[str, object]] = []
    total = 0.0
    for layer in layers:
        e = layer_energy(layer, model)
        breakdown.append({"name": layer.name, "kind": layer.kind, "flops": layer.flops, "rate": layer.rate, "joules": e})
        total += e
    return {"total_joules": total, "layers": breakdown, "T": model.T}


def dense_network_costs(dims: Sequence[int], rates: Sequence[float]) -> List[LayerCost]:
    """Costs for a dense stack; ``rates[l]`` is the output firing rate of layer ``l``."""
    if len(rates) != len(dims) - 1:
        raise ValueError(f"need {len(dims) - 1} rates, got {len(rates)}")
    return [
        LayerCost(f"fc{l + 1}", dense_flops(dims[l], dims[l + 1]), rates[l])
        for l in range(len(dims) - 1)
    ]
