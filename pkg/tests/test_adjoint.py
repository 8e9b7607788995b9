import numpy as np
import pytest

from conftest import random_frames, small_network
from fracspike.adjoint import BufferTracker, adjoint_rhs, backward, jacobian_transpose
from fracspike.exceptions import SequencingError, ShapeError
from fracspike.fde import SolverOptions, TimeGrid
from fracspike.network import LayerSpec, NetworkSpec, forward
from fracspike.neuron import NeuronParams
from fracspike.train import loss_and_grad


def loss_of(spec, x, g, labels, opts=None):
    st = forward(spec, x, g, opts)
    return st, loss_and_grad("cross_entropy_on_counts", st.counts, labels)


def fd_gradient(spec, x, g, labels, opts=None, eps=1e-5):
    out = []
    for layer in spec.layers:
        G = np.zeros_like(layer.W)
        for idx in np.ndindex(layer.W.shape):
            w0 = layer.W[idx]
            layer.W[idx] = w0 + eps
            lp = loss_of(spec, x, g, labels, opts)[1][0]
            layer.W[idx] = w0 - eps
            lm = loss_of(spec, x, g, labels, opts)[1][0]
            layer.W[idx] = w0
            G[idx] = (lp - lm) / (2 * eps)
        out.append(G)
    return np.concatenate([G.ravel() for G in out])


@pytest.mark.parametrize(
    "alpha,opts,neuron",
    [
        (1.0, None, {}),
        (0.7, None, {}),
        (0.5, SolverOptions(memory_window=5), {}),
        (0.8, None, {"model": "if_"}),
        (0.6, None, {"surrogate": __import__("fracspike").SurrogateSpec("gaussian", 0.7)}),
    ],
)
def test_discrete_adjoint_matches_finite_differences(alpha, opts, neuron):
    spec = small_network((4, 8, 2), alpha=alpha, smooth=True, **neuron)
    g = TimeGrid.from_step(1.0, 16)
    x = random_frames(16, 3, 4, seed=7)
    labels = np.array([0, 1, 1])
    st, (_, dl) = loss_of(spec, x, g, labels, opts)
    analytic = backward(spec, st, dl, g, opts).flat()
    numeric = fd_gradient(spec, x, g, labels, opts)
    scale = np.max(np.abs(numeric))
    assert scale > 1e-4
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7 * scale)


def test_alpha_one_adjoint_is_reverse_euler():
    spec = small_network((4, 8, 2), smooth=True)
    g = TimeGrid.from_step(0.5, 10)
    st, (_, dl) = loss_of(spec, random_frames(10, 2, 4), g, np.array([0, 1]))
    lam = backward(spec, st, dl, keep_adjoint=True).adjoint.lam
    np.testing.assert_array_equal(lam[9], lam[10])
    for k in range(8, -1, -1):
        expected = lam[k + 1] + g.h * jacobian_transpose(spec, st, k + 1, lam[k + 1])
        np.testing.assert_allclose(lam[k], expected, rtol=1e-13, atol=1e-15)


def test_pure_leak_adjoint_decays():
    # no coupling, no spikes: J = -1/tau, so the adjoint right-hand side is -lam/tau
    spec = NetworkSpec([LayerSpec([[0.0]], NeuronParams(tau_alpha=2.0, theta=1e6))])
    g = TimeGrid.from_step(1.0, 4)
    st = forward(spec, np.zeros((4, 1, 1)), g)
    lam = np.array([3.0, 0.0])
    np.testing.assert_allclose(adjoint_rhs(spec, st, 2.0, lam), [-1.5, 0.0])


def test_adjoint_rhs_checks():
    spec = small_network()
    g = TimeGrid.from_step(1.0, 4)
    st = forward(spec, random_frames(4, 1, 4), g)
    with pytest.raises(SequencingError):
        adjoint_rhs(spec, st, 1.5, np.zeros(spec.state_dim))
    with pytest.raises(SequencingError):
        adjoint_rhs(spec, st, 9.0, np.zeros(spec.state_dim))
    with pytest.raises(SequencingError):
        adjoint_rhs(spec, None, 1.0, np.zeros(spec.state_dim))
    with pytest.raises(ShapeError):
        adjoint_rhs(spec, st, 1.0, np.zeros(3))


def test_backward_rejects_other_grid_and_shapes():
    spec = small_network()
    g = TimeGrid.from_step(1.0, 4)
    st = forward(spec, random_frames(4, 2, 4), g)
    with pytest.raises(SequencingError):
        backward(spec, st, np.zeros((2, 2)), TimeGrid.from_step(1.0, 5))
    with pytest.raises(ShapeError):
        backward(spec, st, np.zeros((2, 3)))
    with pytest.raises(ValueError):
        backward(spec, st, np.zeros((2, 2)), mode="bptt")


def test_gradient_is_linear_in_loss_gradient(rng):
    spec = small_network(alpha=0.7, smooth=True)
    g = TimeGrid.from_step(1.0, 8)
    st = forward(spec, random_frames(8, 2, 4), g)
    a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    ga, gb = backward(spec, st, a).flat(), backward(spec, st, b).flat()
    np.testing.assert_allclose(backward(spec, st, 2 * a - b).flat(), 2 * ga - gb, rtol=1e-10, atol=1e-14)


def test_terminal_on_membrane_potential():
    # loss = U_out(b) for a single linear neuron: gradient is U(b)/W (zero start, linear ODE)
    for alpha in (1.0, 0.6):
        spec = NetworkSpec([LayerSpec([[0.8]], NeuronParams(alpha=alpha, tau_alpha=1.5, theta=np.inf))], alpha=alpha)
        g = TimeGrid.from_step(0.25, 20)
        x = random_frames(20, 1, 1, p=0.6)
        st = forward(spec, x, g)
        term = np.array([[1.0, 0.0]])
        dW = backward(spec, st, terminal=term)[0]
        assert dW[0, 0] == pytest.approx(st.U(0)[-1, 0, 0] / 0.8, rel=1e-12)


@pytest.mark.parametrize("alpha", [1.0, 0.7])
def test_caputo_mode_agrees_in_direction(alpha):
    # the continuous right-sided adjoint is only first-order accurate; it should
    # still point the same way as the exact discrete adjoint on a fine grid
    spec = small_network(alpha=alpha, smooth=True, scale=1.0)
    g = TimeGrid(0.0, 4.0, 200)
    st, (_, dl) = loss_of(spec, random_frames(200, 2, 4, p=0.3), g, np.array([0, 1]))
    d = backward(spec, st, dl).flat()
    c = backward(spec, st, dl, mode="caputo").flat()
    cos = d @ c / (np.linalg.norm(d) * np.linalg.norm(c))
    assert cos > 0.95


def test_parameter_buffers_constant_trajectory_linear():
    spec = small_network((4, 8, 2), alpha=0.8, smooth=True)
    counts, traj_bytes = [], []
    for N in (16, 64, 256):
        g = TimeGrid.from_step(1.0, N)
        st = forward(spec, random_frames(N, 1, 4), g)
        tr = BufferTracker()
        backward(spec, st, np.ones((1, 2)), tracker=tr)
        counts.append(tr.counts["param"])
        traj_bytes.append(tr.nbytes["trajectory"])
    assert counts[0] == counts[1] == counts[2] == 2 * len(spec.layers)
    per_step = traj_bytes[0] / 17
    assert traj_bytes == [per_step * (N + 1) for N in (16, 64, 256)]
