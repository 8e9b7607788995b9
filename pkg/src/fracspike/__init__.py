"""Fractional-order spiking neural networks trained with adjoint gradients."""

from .adjoint import BufferTracker, GradientSet, adjoint_rhs, backward
from .data_io import (
    encode_bernoulli,
    encode_poisson,
    inject_gaussian_noise,
    load_checkpoint,
    load_idx,
    save_checkpoint,
)
from .energy import EnergyModel, LayerCost, estimate_energy
from .estimator import FractionalSpikingClassifier
from .exceptions import (
    ConfigError,
    DivergenceError,
    FormatError,
    FracSpikeError,
    IndexOrderError,
    PrecisionError,
    SequencingError,
    ShapeError,
)
from .fde import SolverOptions, TimeGrid, Trajectory, mittag_leffler, solve_caputo_backward, solve_caputo_forward
from .network import LayerSpec, NetworkSpec, NetworkState, forward
from .neuron import NeuronParams, relaxation_curve, simulate_neuron
from .surrogate import SurrogateSpec, surrogate_grad
from .train import RunMetrics, TrainConfig, gradcheck, loss_and_grad, train_loop

__version__ = "0.1.0"

__all__ = [
    "BufferTracker",
    "ConfigError",
    "DivergenceError",
    "EnergyModel",
    "FormatError",
    "FracSpikeError",
    "FractionalSpikingClassifier",
    "GradientSet",
    "IndexOrderError",
    "LayerCost",
    "LayerSpec",
    "NetworkSpec",
    "NetworkState",
    "NeuronParams",
    "PrecisionError",
    "RunMetrics",
    "SequencingError",
    "ShapeError",
    "SolverOptions",
    "SurrogateSpec",
    "TimeGrid",
    "TrainConfig",
    "Trajectory",
    "adjoint_rhs",
    "backward",
    "encode_bernoulli",
    "encode_poisson",
    "estimate_energy",
    "forward",
    "gradcheck",
    "inject_gaussian_noise",
    "load_checkpoint",
    "load_idx",
    "loss_and_grad",
    "mittag_leffler",
    "relaxation_curve",
    "save_checkpoint",
    "simulate_neuron",
    "solve_caputo_backward",
    "solve_caputo_forward",
    "surrogate_grad",
    "train_loop",
]
