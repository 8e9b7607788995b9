"""Adjoint (backward-in-time) gradients for the fractional spiking network.

Two backward integrators are provided.

``mode="discrete"`` (default) is the exact adjoint of the ABM predictor used
in the forward pass. Writing ``c_m`` for the normalised ABM weight at lag
``m`` and ``phi_N`` for the terminal condition, it sweeps ``j = N-1 .. 0``::

    psi_j = sum_{k=j+1}^{N} c_{k-j} phi_k      (mirrored memory sum)
    phi_j = J_j^T psi_j                        (surrogate Jacobian at t_j)
    dL/dW += psi_j^T dF_j/dW

so the gradient matches finite differences of the discrete forward map up to
rounding. The stored adjoint is ``lambda_j = psi_j / c_1``; for ``alpha = 1``
this is reverse-time Euler ``lambda_j = lambda_{j+1} + h J_{j+1}^T lambda_{j+1}``
started from ``lambda_{N-1} = lambda_N`` (the right-hand side at ``t_N`` never
feeds the forward state, so it carries no sensitivity).

``mode="caputo"`` integrates the right-sided Caputo system
``D_{b-}^alpha lambda = J^T lambda`` from ``lambda(b)`` with the mirrored
ABM solver, then applies a left-rectangle rule to ``int lambda^T dF/dW dt``.
It is first-order accurate in ``h`` and kept as a reference.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .exceptions import DivergenceError, SequencingError, ShapeError
from .fde import SolverOptions, TimeGrid, Trajectory, lag_weights, solve_caputo_backward
from .network import NetworkSpec, NetworkState, _times_theta, layer_slopes

MODES = ("discrete", "caputo")


class BufferTracker:
    """Counts the arrays the backward pass allocates, by kind.

    ``param`` buffers are shaped like a weight matrix, ``trajectory`` buffers
    hold one entry per grid point and ``step`` buffers are per-step scratch.
    """

    def __init__(self):
        self.counts = Counter()
        self.nbytes = Counter()

    def zeros(self, kind: str, shape) -> np.ndarray:
        arr = np.zeros(shape)
        self.counts[kind] += 1
        self.nbytes[kind] += arr.nbytes
        return arr


@dataclass
class AdjointTrajectory:
    grid: TimeGrid
    lam: np.ndarray  # (N + 1, batch, state_dim)


@dataclass
class GradientSet:
    """One gradient matrix per layer, shaped like the weights."""

    dW: List[np.ndarray]
    adjoint: Optional[AdjointTrajectory] = field(default=None, repr=False)

    def __iter__(self):
        return iter(self.dW)

    def __len__(self):
        return len(self.dW)

    def __getitem__(self, i):
        return self.dW[i]

    def flat(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.dW])


def _step_index(forward: NetworkState, t: float) -> int:
    grid = forward.grid
    k = grid.index_of(t)
    if abs(grid.points()[k] - t) > 1e-9 * grid.h or not (grid.a - 1e-12 <= t <= grid.b + 1e-12):
        raise SequencingError(f"no stored forward state at t={t}")
    return k


def jacobian_transpose(spec: NetworkSpec, forward: NetworkState, k: int, v: np.ndarray) -> np.ndarray:
    """``J(t_k)^T v`` for the packed dynamics, Heaviside slopes replaced by surrogates.

    ``v`` has shape ``(batch, state_dim)``. Hard resets are treated as
    detached: only the smooth part of the dynamics is differentiated.
    """
    sl = spec.slices()
    L = len(spec.layers)
    out = np.zeros_like(v)
    values = forward.trajectory.values[k]
    for l, layer in enumerate(spec.layers):
        p = layer.neuron
        s = layer_slopes(layer, values[..., sl[l]])
        diag = np.full(s.shape, -1.0 if p.model == "lif" else 0.0)
        if p.reset == "soft_subtract":
            diag = diag - _times_theta(s, p.theta)
        acc = diag / p.tau_alpha * v[..., sl[l]]
        coupled = np.zeros_like(s)
        if l + 1 < L:
            nxt = spec.layers[l + 1]
            coupled += np.einsum("bo,oi->bi", v[..., sl[l + 1]], nxt.W) * (nxt.neuron.R / nxt.neuron.tau_alpha)
        else:
            coupled += v[..., sl[-1]]
        out[..., sl[l]] = acc + s * coupled
    # the dynamics never read S_sum, so its column of J is zero
    return out


def adjoint_rhs(spec: NetworkSpec, forward: NetworkState, t: float, lam) -> np.ndarray:
    """Right-hand side ``J(t)^T lambda`` of the right-sided adjoint system."""
    if forward is None or forward.trajectory is None:
        raise SequencingError("adjoint_rhs needs a stored forward pass")
    lam = np.asarray(lam, dtype=np.float64)
    squeeze = lam.ndim == 1
    if squeeze:
        lam = lam[None, :]
    if lam.shape[-1] != spec.state_dim:
        raise ShapeError(f"adjoint has {lam.shape[-1]} entries, layout needs {spec.state_dim}")
    out = jacobian_transpose(spec, forward, _step_index(forward, t), lam)
    return out[0] if squeeze else out


def _terminal(spec: NetworkSpec, forward: NetworkState, loss_grad, terminal):
    B = forward.batch_size
    if terminal is not None:
        term = np.array(terminal, dtype=np.float64).reshape(B, spec.state_dim)
    else:
        g = np.asarray(loss_grad, dtype=np.float64)
        if g.shape != (B, spec.out_dim):
            raise ShapeError(f"loss gradient shape {g.shape}, expected {(B, spec.out_dim)}")
        term = np.zeros((B, spec.state_dim))
        term[:, spec.slices()[-1]] = g
    return term


def backward(
    spec: NetworkSpec,
    forward: NetworkState,
    loss_grad=None,
    grid: Optional[TimeGrid] = None,
    opts: Optional[SolverOptions] = None,
    *,
    terminal=None,
    mode: str = "discrete",
    tracker: Optional[BufferTracker] = None,
    keep_adjoint: bool = False,
) -> GradientSet:
    """Weight gradients of a loss on the final packed state.

    ``loss_grad`` is ``dL/dS_sum(b)`` with shape ``(batch, n_out)``; a loss on
    other final states (e.g. ``U^(L)(b)``) is passed as a full packed
    ``terminal`` vector instead. Gradients are summed over the batch.
    """
    if mode not in MODES:
        raise ValueError(f"unknown adjoint mode {mode!r}; expected one of {MODES}")
    grid = grid or forward.grid
    if grid != forward.grid:
        raise SequencingError("backward grid differs from the forward grid")
    opts = opts or forward.opts
    tracker = tracker or BufferTracker()
    term = _terminal(spec, forward, loss_grad, terminal)
    if mode == "caputo":
        return _backward_caputo(spec, forward, term, grid, opts, tracker, keep_adjoint)
    return _backward_discrete(spec, forward, term, grid, opts, tracker, keep_adjoint)


def _accumulate(spec, forward, k, psi, dW, scratch, weight=1.0):
    sl = spec.slices()
    for l, layer in enumerate(spec.layers):
        X = forward.layer_input(l, k)
        p = layer.neuron
        np.matmul(psi[..., sl[l]].T, X, out=scratch[l])
        dW[l] += (weight * p.R / p.tau_alpha) * scratch[l]


def _backward_discrete(spec, forward, term, grid, opts, tracker, keep_adjoint):
    N = grid.N
    B = forward.batch_size
    D = spec.state_dim
    w = lag_weights(N, grid.h, spec.alpha)
    K = opts.memory_window
    euler = opts.method == "euler"

    dW = [tracker.zeros("param", layer.W.shape) for layer in spec.layers]
    scratch = [tracker.zeros("param", layer.W.shape) for layer in spec.layers]
    phi = tracker.zeros("trajectory", (N + 1, B, D))
    lam = tracker.zeros("trajectory", (N + 1, B, D)) if keep_adjoint else None
    phi[N] = term
    if lam is not None:
        lam[N] = term
    psi = tracker.zeros("step", (B, D))

    for j in range(N - 1, -1, -1):
        if euler:
            psi += grid.h * phi[j + 1]
        else:
            hi = N if K is None else min(N, j + K)
            psi = np.einsum("m,m...->...", w[1 : hi - j + 1], phi[j + 1 : hi + 1])
        if not np.all(np.isfinite(psi)):
            raise DivergenceError(f"non-finite adjoint at step {j}", step=j)
        phi[j] = jacobian_transpose(spec, forward, j, psi)
        _accumulate(spec, forward, j, psi, dW, scratch)
        if lam is not None:
            lam[j] = psi / w[1]
    adjoint = AdjointTrajectory(grid, lam) if keep_adjoint else None
    return GradientSet(dW, adjoint)


def _backward_caputo(spec, forward, term, grid, opts, tracker, keep_adjoint):
    traj: Trajectory = solve_caputo_backward(
        lambda t, v: adjoint_rhs(spec, forward, t, v), term, grid, spec.alpha, opts
    )
    tracker.counts["trajectory"] += 2
    tracker.nbytes["trajectory"] += traj.values.nbytes + traj.rhs_evals.nbytes
    if not np.all(np.isfinite(traj.values)):
        raise DivergenceError("non-finite adjoint trajectory")
    dW = [tracker.zeros("param", layer.W.shape) for layer in spec.layers]
    scratch = [tracker.zeros("param", layer.W.shape) for layer in spec.layers]
    for k in range(grid.N):
        _accumulate(spec, forward, k, traj.values[k], dW, scratch, weight=grid.h)
    adjoint = AdjointTrajectory(grid, np.array(traj.values)) if keep_adjoint else None
    return GradientSet(dW, adjoint)
