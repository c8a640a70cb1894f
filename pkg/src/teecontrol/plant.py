"""Quadruple-tank process: nonlinear dynamics, sensors and the discrete linear model.

States are the four tank levels h (cm), inputs the two pump voltages v (V).
Tanks 1 and 2 are the lower tanks and are the only ones measured.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .errors import SingularityError, ValidationError


def _finite(name, arr, shape=None):
    arr = np.asarray(arr, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValidationError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class QtpParams:
    tank_areas: tuple[float, float, float, float]
    outlet_areas: tuple[float, float, float, float]
    pump_gains: tuple[float, float]
    flow_splits: tuple[float, float]
    g: float = 981.0
    kc: float = 0.5

    def __post_init__(self):
        for name, n in (("tank_areas", 4), ("outlet_areas", 4), ("pump_gains", 2), ("flow_splits", 2)):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != n:
                raise ValidationError(f"{name} needs {n} values, got {len(vals)}")
            object.__setattr__(self, name, vals)
        object.__setattr__(self, "g", float(self.g))
        object.__setattr__(self, "kc", float(self.kc))
        positive = self.tank_areas + self.outlet_areas + self.pump_gains + (self.g, self.kc)
        if not all(np.isfinite(positive)) or min(positive) <= 0:
            raise ValidationError("areas, pump gains, g and kc must be finite and strictly positive")
        if not all(0.0 < s < 1.0 for s in self.flow_splits):
            raise ValidationError("flow splits must lie strictly between 0 and 1")


@dataclass(frozen=True)
class LinearModel:
    """Discrete-time deviation model x(k+1) = A x(k) + B u(k), y = C x."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Ts: float
    x_eq: np.ndarray
    u_eq: np.ndarray
    kc: float = field(default=0.5)

    def __post_init__(self):
        object.__setattr__(self, "A", _finite("A", self.A, (4, 4)))
        object.__setattr__(self, "B", _finite("B", self.B, (4, 2)))
        object.__setattr__(self, "C", _finite("C", self.C, (2, 4)))
        object.__setattr__(self, "x_eq", _finite("x_eq", self.x_eq, (4,)))
        object.__setattr__(self, "u_eq", _finite("u_eq", self.u_eq, (2,)))
        if not (np.isfinite(self.Ts) and self.Ts > 0):
            raise ValidationError("Ts must be positive")
        if not np.array_equal(self.C, output_matrix(self.kc)):
            raise ValidationError("C must be [[kc,0,0,0],[0,kc,0,0]]")
        for arr in (self.A, self.B, self.C, self.x_eq, self.u_eq):
            arr.setflags(write=False)

    @property
    def y_eq(self) -> np.ndarray:
        return self.C @ self.x_eq


def output_matrix(kc: float) -> np.ndarray:
    return np.array([[kc, 0.0, 0.0, 0.0], [0.0, kc, 0.0, 0.0]])


def qtp_derivative(h, v, params: QtpParams) -> np.ndarray:
    """Level rates dh/dt (cm/s) from Torricelli outflows and split pump inflows.

    Negative levels are treated as empty tanks (zero outflow).
    """
    h = _finite("state", h, (4,))
    v = _finite("input", v, (2,))
    A = params.tank_areas
    k1, k2 = params.pump_gains
    g1, g2 = params.flow_splits
    q = np.asarray(params.outlet_areas) * np.sqrt(2.0 * params.g * np.maximum(h, 0.0))
    return np.array([
        (-q[0] + q[2] + g1 * k1 * v[0]) / A[0],
        (-q[1] + q[3] + g2 * k2 * v[1]) / A[1],
        (-q[2] + (1.0 - g2) * k2 * v[1]) / A[2],
        (-q[3] + (1.0 - g1) * k1 * v[0]) / A[3],
    ])


def step_nonlinear(h, v, params: QtpParams, dt: float, substeps: int = 10) -> np.ndarray:
    """Advance the tank levels by ``dt`` seconds with fixed-step RK4, input held constant."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if substeps < 1:
        raise ValidationError("substeps must be >= 1")
    h = _finite("state", h, (4,)).copy()
    v = _finite("input", v, (2,))
    d = dt / substeps
    for _ in range(substeps):
        k1 = qtp_derivative(h, v, params)
        k2 = qtp_derivative(h + 0.5 * d * k1, v, params)
        k3 = qtp_derivative(h + 0.5 * d * k2, v, params)
        k4 = qtp_derivative(h + d * k3, v, params)
        h = np.maximum(h + (d / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), 0.0)
    return h


def linearize(params: QtpParams, x_eq, u_eq) -> tuple[np.ndarray, np.ndarray]:
    """Analytic Jacobians (Ac, Bc) of :func:`qtp_derivative` at (x_eq, u_eq)."""
    x_eq = _finite("x_eq", x_eq, (4,))
    _finite("u_eq", u_eq, (2,))
    if np.any(x_eq <= 0):
        raise SingularityError("equilibrium levels must be > 0 to linearize the outflow terms")
    A = np.asarray(params.tank_areas)
    a = np.asarray(params.outlet_areas)
    k1, k2 = params.pump_gains
    g1, g2 = params.flow_splits
    # d/dh [a sqrt(2 g h)] = a sqrt(g / (2 h))
    dq = a * np.sqrt(params.g / (2.0 * x_eq))
    Ac = np.diag(-dq / A)
    Ac[0, 2] = dq[2] / A[0]
    Ac[1, 3] = dq[3] / A[1]
    Bc = np.array([
        [g1 * k1 / A[0], 0.0],
        [0.0, g2 * k2 / A[1]],
        [0.0, (1.0 - g2) * k2 / A[2]],
        [(1.0 - g1) * k1 / A[3], 0.0],
    ])
    return Ac, Bc


def discretize_zoh(Ac, Bc, Ts: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization via the augmented matrix exponential.

    Accepts scalars as well as matrices; scalars come back as 1x1 arrays.
    """
    Ac = np.atleast_2d(np.asarray(Ac, dtype=float))
    Bc = np.asarray(Bc, dtype=float)
    if Bc.ndim < 2:
        Bc = Bc.reshape(Ac.shape[0], -1)
    if not (np.isfinite(Ts) and Ts > 0):
        raise ValidationError("Ts must be positive")
    _finite("Ac", Ac)
    _finite("Bc", Bc)
    n, m = Bc.shape
    if Ac.shape != (n, n):
        raise ValidationError(f"Ac shape {Ac.shape} does not match Bc shape {Bc.shape}")
    M = np.zeros((n + m, n + m))
    M[:n, :n] = Ac
    M[:n, n:] = Bc
    E = expm(M * Ts)
    return E[:n, :n], E[:n, n:]


def measure(h, kc: float, noise_std: float = 0.0, rng: np.random.Generator | None = None) -> np.ndarray:
    """Sensor readings kc * [h1, h2], optionally with additive Gaussian noise."""
    h = _finite("state", h, (4,))
    y = kc * h[:2]
    if noise_std > 0:
        if rng is None:
            raise ValidationError("noise requires a seeded generator")
        y = y + rng.normal(0.0, noise_std, size=2)
    return y


def derive_model(params: QtpParams, x_eq, u_eq, Ts: float) -> LinearModel:
    Ac, Bc = linearize(params, x_eq, u_eq)
    A, B = discretize_zoh(Ac, Bc, Ts)
    return LinearModel(A=A, B=B, C=output_matrix(params.kc), Ts=Ts, x_eq=x_eq, u_eq=u_eq, kc=params.kc)


def step_linear(model: LinearModel, x, u) -> np.ndarray:
    """One step of the discrete linearized plant in absolute coordinates."""
    x = _finite("state", x, (4,))
    u = _finite("input", u, (2,))
    return model.x_eq + model.A @ (x - model.x_eq) + model.B @ (u - model.u_eq)
