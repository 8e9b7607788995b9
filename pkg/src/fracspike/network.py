"""Dense multi-layer fractional spiking network.

The solver state of one sample is the flat vector::

    [U^(1), U^(2), ..., U^(L), S_sum]

where ``S_sum`` (same width as layer ``L``) integrates the output spikes.
Spikes are not solver state; they are recomputed from ``U`` whenever the
right-hand side is evaluated. Batches carry a leading sample axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .exceptions import DivergenceError, ShapeError
from .fde import SolverOptions, TimeGrid, Trajectory, check_alpha, solve_caputo_forward
from .neuron import NeuronParams
from .surrogate import SurrogateSpec, primitive, surrogate_grad


@dataclass
class LayerSpec:
    """One bias-free dense layer and the neurons it drives."""

    W: np.ndarray
    neuron: NeuronParams = field(default_factory=NeuronParams)

    def __post_init__(self):
        self.W = np.array(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise ShapeError(f"weight matrix must be 2-D, got shape {self.W.shape}")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("weight matrix has non-finite entries")

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def surrogate(self) -> SurrogateSpec:
        return self.neuron.surrogate


@dataclass
class NetworkSpec:
    """Layer stack sharing one fractional order.

    ``smooth`` switches the forward nonlinearity from the Heaviside step to
    the surrogate's primitive, making the network differentiable end to end
    (used for finite-difference gradient checks).
    """

    layers: List[LayerSpec]
    alpha: float = 1.0
    smooth: bool = False

    def __post_init__(self):
        self.alpha = check_alpha(self.alpha)
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        for i in range(1, len(self.layers)):
            if self.layers[i].in_dim != self.layers[i - 1].out_dim:
                raise ShapeError(
                    f"layer {i} expects {self.layers[i].in_dim} inputs but layer {i - 1} "
                    f"has {self.layers[i - 1].out_dim} outputs"
                )

    @classmethod
    def build(
        cls,
        dims: Sequence[int],
        alpha: float = 1.0,
        neuron: Optional[NeuronParams] = None,
        seed=None,
        smooth: bool = False,
    ) -> "NetworkSpec":
        """Random network with weights ``U(-1/sqrt(in), 1/sqrt(in))``."""
        if len(dims) < 2:
            raise ValueError("dims needs an input size and at least one layer size")
        rng = np.random.default_rng(seed)
        neuron = neuron or NeuronParams(alpha=alpha)
        layers = []
        for n_in, n_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(n_in)
            layers.append(LayerSpec(rng.uniform(-bound, bound, size=(n_out, n_in)), neuron))
        return cls(layers, alpha=alpha, smooth=smooth)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def dims(self) -> List[int]:
        return [self.in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def state_dim(self) -> int:
        return sum(layer.out_dim for layer in self.layers) + self.out_dim

    @property
    def n_params(self) -> int:
        return sum(layer.W.size for layer in self.layers)

    def slices(self) -> List[slice]:
        """Slots of each ``U^(l)`` followed by the ``S_sum`` slot."""
        out, start = [], 0
        for layer in self.layers:
            out.append(slice(start, start + layer.out_dim))
            start += layer.out_dim
        out.append(slice(start, start + self.out_dim))
        return out

    def weights(self) -> List[np.ndarray]:
        return [layer.W for layer in self.layers]

    def with_weights(self, weights: Sequence[np.ndarray]) -> "NetworkSpec":
        if len(weights) != len(self.layers):
            raise ShapeError("need one weight matrix per layer")
        layers = []
        for layer, W in zip(self.layers, weights):
            if np.shape(W) != layer.W.shape:
                raise ShapeError(f"weight shape {np.shape(W)} != {layer.W.shape}")
            layers.append(LayerSpec(np.array(W, dtype=np.float64), layer.neuron))
        return NetworkSpec(layers, alpha=self.alpha, smooth=self.smooth)

    def copy(self, **changes) -> "NetworkSpec":
        new = self.with_weights([W.copy() for W in self.weights()])
        return replace(new, **changes) if changes else new


def layer_spikes(layer: LayerSpec, U, smooth: bool = False):
    x = U - layer.neuron.theta
    if smooth:
        return primitive(layer.surrogate, x)
    return (x >= 0).astype(np.float64)


def layer_slopes(layer: LayerSpec, U):
    """Surrogate derivative of the spike output w.r.t. ``U``."""
    return surrogate_grad(layer.surrogate, U - layer.neuron.theta)


def _layer_rhs(layer: LayerSpec, U, X, S):
    p = layer.neuron
    # einsum keeps each row's reduction order independent of the batch size
    drive = p.R * np.einsum("...i,oi->...o", X, layer.W)
    if p.model == "lif":
        drive = drive - U
    if p.reset == "soft_subtract":
        drive = drive - _times_theta(S, p.theta)
    return drive / p.tau_alpha


def _times_theta(x, theta):
    """``x * theta`` with ``0 * inf`` read as 0 (a neuron that can never fire)."""
    if np.isfinite(theta):
        return x * theta
    with np.errstate(invalid="ignore"):
        return np.where(x != 0, x * theta, 0.0)


def dynamics(spec: NetworkSpec, state, x_in, check: bool = False):
    """Packed derivative and per-layer spikes for state(s) ``state``.

    ``state`` has shape ``(..., state_dim)`` and ``x_in`` ``(..., in_dim)``.
    """
    state = np.asarray(state, dtype=np.float64)
    if state.shape[-1] != spec.state_dim:
        raise ShapeError(f"state has {state.shape[-1]} entries, layout needs {spec.state_dim}")
    x = np.asarray(x_in, dtype=np.float64)
    if x.shape[-1] != spec.in_dim:
        raise ShapeError(f"input has {x.shape[-1]} features, network expects {spec.in_dim}")
    sl = spec.slices()
    out = np.empty_like(state)
    spikes = []
    for i, layer in enumerate(spec.layers):
        U = state[..., sl[i]]
        S = layer_spikes(layer, U, spec.smooth)
        out[..., sl[i]] = _layer_rhs(layer, U, x, S)
        if check and not np.all(np.isfinite(out[..., sl[i]])):
            raise DivergenceError(f"non-finite dynamics in layer {i}", layer=i)
        spikes.append(S)
        x = S
    out[..., sl[-1]] = spikes[-1]
    return out, spikes


def concat_dynamics(spec: NetworkSpec, t: float, state, input_fn: Callable[[float], np.ndarray]):
    """Right-hand side of the coupled system at time ``t``."""
    return dynamics(spec, state, input_fn(t))[0]


@dataclass
class NetworkState:
    """Result of a forward pass over a batch.

    ``trajectory.values`` has shape ``(N + 1, batch, state_dim)``; ``spikes[l]``
    has shape ``(N + 1, batch, n_l)``; ``inputs`` holds the frames fed to
    layer 1, shape ``(T, batch, in_dim)``.
    """

    spec: NetworkSpec
    trajectory: Trajectory
    spikes: List[np.ndarray]
    inputs: np.ndarray
    opts: SolverOptions

    @property
    def grid(self) -> TimeGrid:
        return self.trajectory.grid

    @property
    def batch_size(self) -> int:
        return self.trajectory.values.shape[1]

    def U(self, l: int) -> np.ndarray:
        return self.trajectory.values[..., self.spec.slices()[l]]

    def S_out(self, l: int) -> np.ndarray:
        return self.spikes[l]

    @property
    def S_sum(self) -> np.ndarray:
        return self.trajectory.values[..., self.spec.slices()[-1]]

    @property
    def counts(self) -> np.ndarray:
        """``S_sum(b)``, shape ``(batch, n_out)``."""
        return self.S_sum[-1]

    def input_at(self, k: int) -> np.ndarray:
        return self.inputs[min(k, len(self.inputs) - 1)]

    def layer_input(self, l: int, k: int) -> np.ndarray:
        return self.input_at(k) if l == 0 else self.spikes[l - 1][k]

    def firing_rates(self) -> List[float]:
        """Mean spikes per neuron per step over the ``N`` driving steps."""
        N = self.grid.N
        return [float(S[:N].mean()) for S in self.spikes]

    def spike_totals(self) -> List[float]:
        N = self.grid.N
        return [float(S[:N].sum()) for S in self.spikes]


def _as_frames(input_spikes, spec: NetworkSpec, grid: TimeGrid) -> np.ndarray:
    x = np.asarray(input_spikes, dtype=np.float64)
    if x.ndim == 2:
        x = x[:, None, :]
    if x.ndim != 3:
        raise ShapeError(f"input must be (T, batch, features), got shape {x.shape}")
    if x.shape[2] != spec.in_dim:
        raise ShapeError(f"input has {x.shape[2]} features, network expects {spec.in_dim}")
    if x.shape[0] not in (grid.N, grid.N + 1):
        raise ShapeError(f"input has {x.shape[0]} frames; grid needs {grid.N} or {grid.N + 1}")
    if x.shape[1] < 1:
        raise ShapeError("empty batch")
    return x


def forward(
    spec: NetworkSpec,
    input_spikes,
    grid: TimeGrid,
    opts: Optional[SolverOptions] = None,
) -> NetworkState:
    """Integrate the network over ``grid`` for a batch of input spike trains.

    Input frame ``k`` is held constant on ``[t_k, t_{k+1})``; with ``N``
    frames the last frame is reused at ``t_N``. All potentials start at 0.
    """
    opts = opts or SolverOptions()
    frames = _as_frames(input_spikes, spec, grid)
    B = frames.shape[1]
    N = grid.N
    spikes = [np.empty((N + 1, B, layer.out_dim)) for layer in spec.layers]
    hard = [
        i for i, layer in enumerate(spec.layers) if layer.neuron.reset == "hard_zero" and not spec.smooth
    ]
    sl = spec.slices()
    step = {"k": 0}

    def rhs(t, y):
        k = step["k"]
        try:
            dy, S = dynamics(spec, y, frames[min(k, len(frames) - 1)], check=True)
        except DivergenceError as exc:
            raise DivergenceError(f"{exc} at step {k}", step=k, layer=exc.layer) from None
        for i, s in enumerate(S):
            spikes[i][k] = s
        return dy

    def project(t, y):
        k = step["k"]
        step["k"] = k + 1
        if not hard:
            return y
        y = y.copy()
        for i in hard:
            y[..., sl[i]] *= 1.0 - spikes[i][k]
        return y

    traj = solve_caputo_forward(rhs, np.zeros((B, spec.state_dim)), grid, spec.alpha, opts, project=project)
    for S in spikes:
        S.flags.writeable = False
    return NetworkState(spec, traj, spikes, frames, opts)


def predict_counts(spec: NetworkSpec, input_spikes, grid: TimeGrid, opts=None) -> np.ndarray:
    return forward(spec, input_spikes, grid, opts).counts
