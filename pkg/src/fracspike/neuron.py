"""Membrane dynamics for (fractional) LIF and IF neurons."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import ShapeError
from .fde import SolverOptions, TimeGrid, Trajectory, check_alpha, mittag_leffler, solve_caputo_forward
from .surrogate import SurrogateSpec

RESETS = ("soft_subtract", "hard_zero")
MODELS = ("lif", "if_")


@dataclass(frozen=True)
class NeuronParams:
    alpha: float = 1.0
    tau_alpha: float = 1.0
    R: float = 1.0
    theta: float = 1.0
    reset: str = "soft_subtract"
    model: str = "lif"
    surrogate: SurrogateSpec = field(default_factory=SurrogateSpec)

    def __post_init__(self):
        object.__setattr__(self, "alpha", check_alpha(self.alpha))
        if not self.tau_alpha > 0:
            raise ValueError(f"tau_alpha must be positive, got {self.tau_alpha}")
        if not self.theta > 0:
            raise ValueError(f"theta must be positive, got {self.theta}")
        if self.reset not in RESETS:
            raise ValueError(f"unknown reset {self.reset!r}; expected one of {RESETS}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; expected one of {MODELS}")


def generate_spikes(U, theta):
    """Heaviside firing ``H(U - theta)`` with ``H(0) = 1``."""
    return (np.asarray(U, dtype=np.float64) >= theta).astype(np.float64)


def membrane_rhs(params: NeuronParams, U, I_in, S_out):
    """Right-hand side of ``tau * D^alpha U``, divided by tau.

    The soft reset is part of the dynamics (``- S_out * theta``); with a hard
    reset that term is left out and :func:`hard_reset` is applied to the state.
    """
    U = np.asarray(U, dtype=np.float64)
    I_in = np.asarray(I_in, dtype=np.float64)
    S_out = np.asarray(S_out, dtype=np.float64)
    if not (U.shape == I_in.shape == S_out.shape):
        raise ShapeError(f"shape mismatch: U{U.shape}, I_in{I_in.shape}, S_out{S_out.shape}")
    drive = params.R * I_in
    if params.model == "lif":
        drive = drive - U
    if params.reset == "soft_subtract" and np.isfinite(params.theta):
        drive = drive - S_out * params.theta
    return drive / params.tau_alpha


def hard_reset(U, theta):
    """Zero every potential at or above threshold."""
    U = np.asarray(U, dtype=np.float64)
    return U * (1.0 - generate_spikes(U, theta))


def steady_state_voltage(params: NeuronParams, I_const) -> float:
    return params.R * I_const


def relaxation_curve(params: NeuronParams, I_const, U0, grid: TimeGrid) -> Trajectory:
    """Closed-form sub-threshold response to a constant current.

    ``U(t) = R I + (U0 - R I) * E_alpha(-(t - a)^alpha / tau_alpha)``; the
    reported rhs values are the LIF right-hand side along that curve.
    """
    t = grid.points() - grid.a
    u_inf = steady_state_voltage(params, I_const)
    if U0 == u_inf:
        U = np.full(t.shape, float(u_inf))
    else:
        U = u_inf + (U0 - u_inf) * mittag_leffler(params.alpha, -(t**params.alpha) / params.tau_alpha)
    rhs = (u_inf - U) / params.tau_alpha
    return Trajectory(grid, U, rhs)


def simulate_neuron(
    params: NeuronParams,
    current: Callable[[float], np.ndarray],
    grid: TimeGrid,
    opts: Optional[SolverOptions] = None,
    U0=0.0,
    spiking: bool = True,
):
    """Integrate a population of independent neurons driven by ``current(t)``.

    Returns ``(trajectory, spikes)`` where ``spikes[k]`` is the spike vector
    emitted at grid point ``k``. With ``spiking=False`` the threshold is
    ignored (the Mittag-Leffler relaxation regime).
    """
    U0 = np.atleast_1d(np.asarray(U0, dtype=np.float64))
    theta = params.theta if spiking else np.inf

    def rhs(t, U):
        I = np.broadcast_to(np.asarray(current(t), dtype=np.float64), U.shape)
        return membrane_rhs(params, U, I, generate_spikes(U, theta))

    hard = spiking and params.reset == "hard_zero"
    fired = []

    def project(t, U):
        S = generate_spikes(U, theta)
        fired.append(S)
        return U * (1.0 - S) if hard else U

    traj = solve_caputo_forward(rhs, U0, grid, params.alpha, opts, project=project)
    return traj, np.stack(fired)
