import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from teecontrol.errors import SingularityError, ValidationError
from teecontrol.plant import (
    QtpParams,
    LinearModel,
    discretize_zoh,
    linearize,
    measure,
    output_matrix,
    qtp_derivative,
    step_nonlinear,
)

from conftest import taylor_expm

levels = arrays(float, 4, elements=st.floats(0.5, 30.0))
voltages = arrays(float, 2, elements=st.floats(0.0, 6.0))


def test_residual_at_rounded_equilibrium(plant):
    r = qtp_derivative(plant.x_eq, plant.u_eq, plant.params)
    assert np.max(np.abs(r)) <= 0.05


def test_residual_frozen(plant):
    # hand evaluation of the tank balances at (x_eq, u_eq)
    r = qtp_derivative(plant.x_eq, plant.u_eq, plant.params)
    np.testing.assert_allclose(r, [0.004930, 0.000620, -0.007119, 0.000300], atol=5e-6)


def test_empty_tanks_no_inflow(plant):
    assert np.array_equal(qtp_derivative(np.zeros(4), np.zeros(2), plant.params), np.zeros(4))


@given(levels)
def test_outflow_sqrt_homogeneity(plant, h):
    p = plant.params
    # lower-tank outflow only: tanks 3 and 4 empty so no coupling term
    h = h.copy()
    h[2:] = 0.0
    d1 = qtp_derivative(h, np.zeros(2), p)
    d2 = qtp_derivative(2 * h, np.zeros(2), p)
    np.testing.assert_allclose(d2, math.sqrt(2) * d1, rtol=1e-12)


@given(levels)
def test_full_state_homogeneity(plant, h):
    p = plant.params
    d1 = qtp_derivative(h, np.zeros(2), p)
    d2 = qtp_derivative(2 * h, np.zeros(2), p)
    np.testing.assert_allclose(d2, math.sqrt(2) * d1, rtol=1e-12, atol=1e-15)


def test_negative_level_treated_as_empty(plant):
    d = qtp_derivative(np.array([-1.0, 0, 0, 0]), np.zeros(2), plant.params)
    assert np.array_equal(d, np.zeros(4))


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_nonfinite_rejected(plant, bad):
    with pytest.raises(ValidationError):
        qtp_derivative(np.array([1.0, bad, 1.0, 1.0]), np.zeros(2), plant.params)


def test_rk4_near_equilibrium(plant):
    h = step_nonlinear(plant.x_eq, plant.u_eq, plant.params, 0.1, 10)
    assert np.max(np.abs(h - plant.x_eq)) <= 0.01


def test_zero_state_stays_zero(plant):
    assert np.array_equal(step_nonlinear(np.zeros(4), np.zeros(2), plant.params, 0.1, 10), np.zeros(4))


@settings(max_examples=50)
@given(levels, voltages)
def test_step_halving(plant, h, v):
    # same substep length either way, so the two paths agree to roundoff
    full = step_nonlinear(h, v, plant.params, 0.1, 10)
    half = step_nonlinear(step_nonlinear(h, v, plant.params, 0.05, 5), v, plant.params, 0.05, 5)
    np.testing.assert_allclose(half, full, rtol=1e-9)


@settings(max_examples=30)
@given(levels, voltages)
def test_rk4_fourth_order(plant, h, v):
    # halving the substep cuts the error against a fine reference by ~16x
    ref = step_nonlinear(h, v, plant.params, 1.0, 400)
    e1 = np.max(np.abs(step_nonlinear(h, v, plant.params, 1.0, 2) - ref))
    e2 = np.max(np.abs(step_nonlinear(h, v, plant.params, 1.0, 4) - ref))
    assert e2 <= e1 / 8 + 1e-13


@settings(max_examples=50)
@given(arrays(float, 4, elements=st.floats(0.0, 30.0)), voltages, st.floats(0.01, 50.0))
def test_nonnegative(plant, h, v, dt):
    assert np.all(step_nonlinear(h, np.zeros(2), plant.params, dt, 3) >= 0)
    assert np.all(step_nonlinear(h, v, plant.params, dt, 3) >= 0)


def test_deterministic(plant):
    a = step_nonlinear(plant.x_eq + 1, plant.u_eq, plant.params, 0.1)
    b = step_nonlinear(plant.x_eq + 1, plant.u_eq, plant.params, 0.1)
    assert a.tobytes() == b.tobytes()


def test_step_validation(plant):
    with pytest.raises(ValidationError):
        step_nonlinear(plant.x_eq, plant.u_eq, plant.params, 0.0)
    with pytest.raises(ValidationError):
        step_nonlinear(plant.x_eq, plant.u_eq, plant.params, 0.1, 0)


def _fd_jacobian(f, x0, eps):
    cols = []
    for i in range(len(x0)):
        e = np.zeros(len(x0))
        e[i] = eps
        cols.append((f(x0 + e) - f(x0 - e)) / (2 * eps))
    return np.column_stack(cols)


def _rel(a, b):
    return np.max(np.abs(a - b)) / np.max(np.abs(b))


def test_jacobian_matches_finite_differences(plant):
    p, xe, ue = plant.params, plant.x_eq, plant.u_eq
    Ac, Bc = linearize(p, xe, ue)
    Ax = _fd_jacobian(lambda x: qtp_derivative(x, ue, p), xe, 1e-5)
    Bu = _fd_jacobian(lambda u: qtp_derivative(xe, u, p), ue, 1e-5)
    assert _rel(Ac, Ax) <= 1e-6
    assert _rel(Bc, Bu) <= 1e-6


@settings(max_examples=30)
@given(arrays(float, 4, elements=st.floats(1.0, 25.0)), voltages)
def test_jacobian_anywhere(plant, x, u):
    Ac, Bc = linearize(plant.params, x, u)
    Ax = _fd_jacobian(lambda z: qtp_derivative(z, u, plant.params), x, 1e-5)
    assert _rel(Ac, Ax) <= 1e-6


def test_input_matrix_entries(plant):
    p = plant.params
    _, Bc = linearize(p, plant.x_eq, plant.u_eq)
    A, k, g = p.tank_areas, p.pump_gains, p.flow_splits
    assert Bc[0, 0] == pytest.approx(g[0] * k[0] / A[0])
    assert Bc[3, 0] == pytest.approx((1 - g[0]) * k[0] / A[3])
    assert Bc[1, 1] == pytest.approx(g[1] * k[1] / A[1])
    assert Bc[2, 1] == pytest.approx((1 - g[1]) * k[1] / A[2])
    _, Bc2 = linearize(p, plant.x_eq * 2, plant.u_eq)
    assert np.array_equal(Bc, Bc2)


def test_coupling_term(plant):
    p = plant.params
    Ac, _ = linearize(p, plant.x_eq, plant.u_eq)
    expected = p.outlet_areas[2] / p.tank_areas[0] * math.sqrt(p.g / (2 * plant.x_eq[2]))
    assert Ac[0, 2] == pytest.approx(expected, rel=1e-14)
    assert Ac[0, 2] > 0


@pytest.mark.parametrize("i", range(4))
def test_linearize_singular(plant, i):
    x = plant.x_eq.copy()
    x[i] = 0.0
    with pytest.raises(SingularityError):
        linearize(plant.params, x, plant.u_eq)


def test_zoh_scalar():
    A, B = discretize_zoh(-1.0, 1.0, 0.1)
    assert A[0, 0] == pytest.approx(math.exp(-0.1), abs=1e-12)
    assert A[0, 0] == pytest.approx(0.9048374, abs=5e-8)
    assert B[0, 0] == pytest.approx(0.0951626, abs=5e-8)
    assert B[0, 0] == pytest.approx(1 - math.exp(-0.1), abs=1e-12)


def test_zoh_zero_dynamics():
    A, B = discretize_zoh(0.0, 2.0, 0.1)
    assert A[0, 0] == 1.0 and B[0, 0] == pytest.approx(0.2)
    Bc = np.arange(8.0).reshape(4, 2)
    A, B = discretize_zoh(np.zeros((4, 4)), Bc, 0.25)
    np.testing.assert_array_equal(A, np.eye(4))
    np.testing.assert_allclose(B, Bc * 0.25, rtol=1e-15)


def test_zoh_validation():
    with pytest.raises(ValidationError):
        discretize_zoh(-1.0, 1.0, 0.0)
    with pytest.raises(ValidationError):
        discretize_zoh(np.array([[np.nan]]), 1.0, 0.1)


def test_qtp_eigenvalue_oracle(plant):
    Ac, Bc = linearize(plant.params, plant.x_eq, plant.u_eq)
    A, _ = discretize_zoh(Ac, Bc, plant.Ts)
    # Ac is upper triangular so its eigenvalues sit on the diagonal
    expected = np.sort(np.exp(np.diag(Ac) * plant.Ts))
    got = np.sort(np.linalg.eigvals(A).real)
    np.testing.assert_allclose(got, expected, atol=1e-9)
    assert np.all(np.abs(np.linalg.eigvals(A)) < 1)


def _series_zoh(Ac, Bc, Ts, terms=60):
    n = Ac.shape[0]
    A = taylor_expm(Ac * Ts, terms)
    # integral of exp(Ac t) dt over [0, Ts] = sum Ac^k Ts^(k+1)/(k+1)!
    S = np.zeros((n, n))
    term = np.eye(n) * Ts
    for k in range(terms):
        S = S + term
        term = term @ Ac * Ts / (k + 2)
    return A, S @ Bc


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1))
def test_zoh_matches_series(seed):
    rng = np.random.default_rng(seed)
    Q = rng.normal(size=(4, 4))
    Ac = Q - (np.max(np.real(np.linalg.eigvals(Q))) + rng.uniform(0.1, 2.0)) * np.eye(4)
    Bc = rng.normal(size=(4, 2))
    A, B = discretize_zoh(Ac, Bc, 0.1)
    Ao, Bo = _series_zoh(Ac, Bc, 0.1)
    np.testing.assert_allclose(A, Ao, atol=1e-9, rtol=0)
    np.testing.assert_allclose(B, Bo, atol=1e-9, rtol=0)


def test_measure_equilibrium():
    y = measure(np.array([12.4, 12.7, 1.8, 1.4]), 0.5)
    np.testing.assert_allclose(y, [6.2, 6.35], rtol=0, atol=1e-15)
    assert np.array_equal(measure(np.zeros(4), 0.5), np.zeros(2))


def test_measure_seeded_noise():
    h = np.array([12.4, 12.7, 1.8, 1.4])
    a = measure(h, 0.5, 0.1, np.random.default_rng(7))
    b = measure(h, 0.5, 0.1, np.random.default_rng(7))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, measure(h, 0.5))
    with pytest.raises(ValidationError):
        measure(h, 0.5, 0.1, None)


def test_params_validation():
    ok = dict(tank_areas=(1, 1, 1, 1), outlet_areas=(1, 1, 1, 1), pump_gains=(1, 1), flow_splits=(0.5, 0.5))
    QtpParams(**ok)
    for key, bad in [("tank_areas", (1, 1, 0, 1)), ("flow_splits", (1.0, 0.5)), ("pump_gains", (1,))]:
        with pytest.raises(ValidationError):
            QtpParams(**{**ok, key: bad})
    with pytest.raises(ValidationError):
        QtpParams(**ok, kc=0)


def test_linear_model_shapes(model):
    assert model.A.shape == (4, 4) and model.B.shape == (4, 2) and model.C.shape == (2, 4)
    np.testing.assert_array_equal(model.C, output_matrix(0.5))
    with pytest.raises(ValueError):
        model.A[0, 0] = 1.0
    with pytest.raises(ValidationError):
        LinearModel(A=np.eye(3), B=model.B, C=model.C, Ts=0.1, x_eq=model.x_eq, u_eq=model.u_eq)
    with pytest.raises(ValidationError):
        LinearModel(A=model.A, B=model.B, C=model.C, Ts=-1, x_eq=model.x_eq, u_eq=model.u_eq)
