"""Surrogate derivatives standing in for the Heaviside derivative.

Every function takes ``x = U - theta`` so the threshold shift lives with the
caller. ``primitive`` gives the matching smooth step, used by the
gradient-check mode of the network so forward and backward agree.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import special

KINDS = ("sigmoid", "arctan", "piecewise_linear", "gaussian")
DEFAULT_SCALE = {"sigmoid": 5.0, "arctan": 2.0, "piecewise_linear": 1.0, "gaussian": 1.0}

_SQRT_2PI = np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class SurrogateSpec:
    """Surrogate kind plus its width/sharpness parameter.

    ``scale`` is kappa for sigmoid and arctan, gamma for piecewise_linear and
    sigma for gaussian. ``None`` picks the kind's default.
    """

    kind: str = "sigmoid"
    scale: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown surrogate {self.kind!r}; expected one of {KINDS}")
        if self.scale is None:
            object.__setattr__(self, "scale", DEFAULT_SCALE[self.kind])
        if not self.scale > 0:
            raise ValueError(f"surrogate scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))


def surrogate_grad(spec: SurrogateSpec, x):
    """Surrogate derivative ``s(x)`` (non-negative, even, peaked at 0)."""
    x = np.asarray(x, dtype=np.float64)
    c = spec.scale
    if spec.kind == "sigmoid":
        # expit(-cx) instead of 1 - expit(cx) avoids cancellation in the tails
        return c * special.expit(c * x) * special.expit(-c * x)
    if spec.kind == "arctan":
        return c / (1.0 + (c * x) ** 2)
    if spec.kind == "piecewise_linear":
        return np.where(np.abs(x) <= c, 1.0 / (2.0 * c), 0.0)
    return np.exp(-(x**2) / (2.0 * c * c)) / (c * _SQRT_2PI)


def primitive(spec: SurrogateSpec, x):
    """Smooth step whose derivative is exactly ``surrogate_grad(spec, x)``.

    The arctan surrogate has total mass pi, so its primitive rises from 0 to pi.
    """
    x = np.asarray(x, dtype=np.float64)
    c = spec.scale
    if spec.kind == "sigmoid":
        return special.expit(c * x)
    if spec.kind == "arctan":
        return np.arctan(c * x) + np.pi / 2.0
    if spec.kind == "piecewise_linear":
        return np.clip((x + c) / (2.0 * c), 0.0, 1.0)
    return special.ndtr(x / c)


def backward_rule(spec: SurrogateSpec, upstream, x):
    """Chain rule through a spike: ``dL/dU = dL/dS * s(U - theta)``."""
    return np.asarray(upstream, dtype=np.float64) * surrogate_grad(spec, x)
