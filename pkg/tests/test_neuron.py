import math

import numpy as np
import pytest

from fracspike.exceptions import ShapeError
from fracspike.fde import SolverOptions, TimeGrid, mittag_leffler
from fracspike.neuron import (
    NeuronParams,
    generate_spikes,
    hard_reset,
    membrane_rhs,
    relaxation_curve,
    simulate_neuron,
    steady_state_voltage,
)


def test_params_validation():
    with pytest.raises(ValueError):
        NeuronParams(alpha=0)
    with pytest.raises(ValueError):
        NeuronParams(tau_alpha=0)
    with pytest.raises(ValueError):
        NeuronParams(theta=-1)
    with pytest.raises(ValueError):
        NeuronParams(reset="none")
    with pytest.raises(ValueError):
        NeuronParams(model="izhikevich")


def test_heaviside_at_threshold():
    np.testing.assert_array_equal(generate_spikes([0.99, 1.0, 1.01], 1.0), [0, 1, 1])


def test_membrane_rhs_terms():
    lif = NeuronParams(tau_alpha=2.0, R=3.0, theta=0.5)
    # (R I - U - S theta) / tau
    assert membrane_rhs(lif, 1.0, 2.0, 1.0) == pytest.approx((6.0 - 1.0 - 0.5) / 2.0)
    if_ = NeuronParams(tau_alpha=2.0, R=3.0, theta=0.5, model="if_")
    assert membrane_rhs(if_, 1.0, 2.0, 1.0) == pytest.approx((6.0 - 0.5) / 2.0)
    hard = NeuronParams(tau_alpha=2.0, R=3.0, theta=0.5, reset="hard_zero")
    assert membrane_rhs(hard, 1.0, 2.0, 1.0) == pytest.approx((6.0 - 1.0) / 2.0)


def test_membrane_rhs_shape_mismatch():
    with pytest.raises(ShapeError):
        membrane_rhs(NeuronParams(), np.zeros(3), np.zeros(2), np.zeros(3))


def test_hard_reset():
    np.testing.assert_array_equal(hard_reset([0.2, 1.0, 3.0], 1.0), [0.2, 0.0, 0.0])


def test_steady_state():
    assert steady_state_voltage(NeuronParams(R=2.5), 0.4) == pytest.approx(1.0)


@pytest.mark.parametrize("alpha", [0.5, 0.8, 1.0])
def test_subthreshold_matches_relaxation_curve(alpha):
    p = NeuronParams(alpha=alpha, tau_alpha=1.5, R=2.0)
    g = TimeGrid(0.0, 10.0, 1000)
    traj, spikes = simulate_neuron(p, lambda t: 0.4, g, U0=1.5, spiking=False)
    ref = relaxation_curve(p, 0.4, 1.5, g)
    assert np.max(np.abs(traj.values[:, 0] - ref.values)) < 1e-2
    assert spikes.sum() == 0


def test_relaxation_curve_closed_form():
    p = NeuronParams(alpha=0.5, tau_alpha=1.0)
    g = TimeGrid(0.0, 4.0, 8)
    curve = relaxation_curve(p, 0.0, 1.0, g)
    np.testing.assert_allclose(curve.values, mittag_leffler(0.5, -np.sqrt(g.points())), rtol=1e-14)
    flat = relaxation_curve(p, 0.3, 0.3, g)
    np.testing.assert_array_equal(flat.values, 0.3)


def test_if_neuron_charge_balance():
    # alpha = 1, IF, soft reset: U_N = h/tau * sum_k (R I - theta S_k) over the N driving steps
    p = NeuronParams(alpha=1.0, tau_alpha=0.5, R=2.0, theta=1.0, model="if_")
    g = TimeGrid(0.0, 20.0, 2000)
    traj, spikes = simulate_neuron(p, lambda t: 0.37, g)
    n = spikes[:-1, 0].sum()
    expected_U = g.h / p.tau_alpha * (g.N * p.R * 0.37 - p.theta * n)
    assert traj.values[-1, 0] == pytest.approx(expected_U, abs=1e-10)
    assert n > 0


def test_hard_reset_zeroes_after_spike():
    p = NeuronParams(alpha=0.7, tau_alpha=1.0, theta=0.8, reset="hard_zero")
    g = TimeGrid(0.0, 10.0, 500)
    traj, spikes = simulate_neuron(p, lambda t: 2.0, g)
    fired = spikes[:, 0] > 0
    assert fired.sum() > 3
    np.testing.assert_array_equal(traj.values[fired, 0], 0.0)
    assert np.all(traj.values[:, 0] < 0.8 + 1e-12)


def test_fractional_neuron_fires_less_regularly():
    # history dependence: with alpha < 1 inter-spike intervals are not constant
    g = TimeGrid(0.0, 30.0, 3000)
    isi = {}
    for alpha in (1.0, 0.6):
        p = NeuronParams(alpha=alpha, tau_alpha=1.0, theta=0.5)
        _, s = simulate_neuron(p, lambda t: 1.0, g)
        t_spk = g.points()[s[:, 0] > 0]
        isi[alpha] = np.diff(t_spk[len(t_spk) // 2 :])
    assert np.ptp(isi[1.0]) <= 2 * g.h
    assert isi[0.6].size > 0


def test_population_and_memory_window():
    p = NeuronParams(alpha=0.6, tau_alpha=1.0, theta=10.0)
    g = TimeGrid(0.0, 5.0, 200)
    traj, _ = simulate_neuron(p, lambda t: np.array([0.5, 1.0]), g, SolverOptions(memory_window=20), U0=[0.0, 0.0])
    assert traj.values.shape == (201, 2)
    assert traj.values[-1, 1] > traj.values[-1, 0] > 0
