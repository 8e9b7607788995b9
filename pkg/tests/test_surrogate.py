import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from fracspike.surrogate import DEFAULT_SCALE, KINDS, SurrogateSpec, backward_rule, primitive, surrogate_grad


def closed_form(kind, x, c):
    # written independently of the library (plain math module, scalar loop)
    out = []
    for v in x:
        if kind == "sigmoid":
            s = 1.0 / (1.0 + math.exp(-c * v)) if c * v > -700 else 0.0
            out.append(c * s * (1.0 - s))
        elif kind == "arctan":
            out.append(c / (1.0 + (c * v) ** 2))
        elif kind == "piecewise_linear":
            out.append(1.0 / (2.0 * c) if -c <= v <= c else 0.0)
        else:
            out.append(math.exp(-v * v / (2 * c * c)) / (c * math.sqrt(2 * math.pi)))
    return np.array(out)


@pytest.mark.parametrize("kind", KINDS)
def test_matches_closed_form_at_random_points(kind, rng):
    x = rng.uniform(-6, 6, 1000)
    spec = SurrogateSpec(kind)
    np.testing.assert_allclose(surrogate_grad(spec, x), closed_form(kind, x, spec.scale), rtol=1e-12, atol=1e-12)


def test_defaults():
    assert DEFAULT_SCALE == {"sigmoid": 5.0, "arctan": 2.0, "piecewise_linear": 1.0, "gaussian": 1.0}
    assert SurrogateSpec().kind == "sigmoid" and SurrogateSpec().scale == 5.0


def test_piecewise_linear_integrates_to_one():
    for gamma in (0.25, 1.0, 3.0):
        spec = SurrogateSpec("piecewise_linear", gamma)
        assert primitive(spec, np.inf) - primitive(spec, -np.inf) == 1.0
        assert quad(lambda v: float(surrogate_grad(spec, v)), -gamma, gamma)[0] == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("kind,mass", [("sigmoid", 1.0), ("gaussian", 1.0), ("arctan", math.pi)])
def test_total_mass(kind, mass):
    spec = SurrogateSpec(kind)
    assert quad(lambda v: float(surrogate_grad(spec, v)), -np.inf, np.inf)[0] == pytest.approx(mass, rel=1e-8)


@pytest.mark.parametrize("kind", KINDS)
def test_primitive_derivative(kind, rng):
    spec = SurrogateSpec(kind, 1.7)
    x = rng.uniform(-4, 4, 200)
    x = x[np.abs(np.abs(x) - 1.7) > 1e-3]  # piecewise-linear kinks
    h = 1e-6
    fd = (primitive(spec, x + h) - primitive(spec, x - h)) / (2 * h)
    np.testing.assert_allclose(fd, surrogate_grad(spec, x), rtol=1e-6, atol=1e-8)


@given(st.sampled_from(KINDS), st.floats(-50, 50), st.floats(0.1, 10))
def test_even_and_nonnegative(kind, x, c):
    spec = SurrogateSpec(kind, c)
    a, b = surrogate_grad(spec, x), surrogate_grad(spec, -x)
    assert a >= 0 and a == pytest.approx(b, rel=1e-12, abs=1e-300)
    assert surrogate_grad(spec, 0.0) >= a


def test_backward_rule():
    spec = SurrogateSpec("arctan", 2.0)
    assert backward_rule(spec, 3.0, 0.5) == pytest.approx(3.0 * 2.0 / 2.0)


@pytest.mark.parametrize("bad", [dict(kind="relu"), dict(kind="sigmoid", scale=0.0), dict(kind="gaussian", scale=-1)])
def test_rejects_bad_spec(bad):
    with pytest.raises(ValueError):
        SurrogateSpec(**bad)
