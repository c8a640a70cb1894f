"""Luenberger observer and LQ state feedback, run in deviation coordinates.

All arithmetic uses dx = x - x_eq, du = u - u_eq, dy = y - C x_eq; absolute
values only appear at the function boundaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, ValidationError
from .plant import LinearModel

# Gains as printed for the quadruple-tank testbed. L is published as the
# transpose of a 2x4 matrix; it is stored here 4x2.
OBSERVER_GAIN = np.array([
    [0.78, 0.0],
    [0.0, 0.78],
    [0.32, 0.0],
    [0.0, 0.32],
])
LQ_GAIN = np.array([
    [27.547, -0.054, 0.468, 0.086],
    [0.023, 28.441, 0.143, 0.507],
])
OBSERVER_GAIN.setflags(write=False)
LQ_GAIN.setflags(write=False)

SIGNS = {"plus": 1.0, "minus": -1.0}


def _vec(name, v, n):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValidationError(f"{name} must have shape ({n},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValidationError(f"{name} is not finite")
    return v


def spectral_radius(M) -> float:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError("spectral radius needs a square matrix")
    return float(np.max(np.abs(np.linalg.eigvals(M))))


@dataclass(frozen=True)
class ObserverGain:
    L: np.ndarray

    def __post_init__(self):
        L = np.array(self.L, dtype=float)
        if L.shape != (4, 2) or not np.all(np.isfinite(L)):
            raise ValidationError("observer gain must be a finite 4x2 matrix")
        L.setflags(write=False)
        object.__setattr__(self, "L", L)

    def error_matrix(self, model: LinearModel) -> np.ndarray:
        return model.A - self.L @ model.C


@dataclass(frozen=True)
class ControllerGain:
    K: np.ndarray
    sign_convention: str = "minus"

    def __post_init__(self):
        K = np.array(self.K, dtype=float)
        if K.shape != (2, 4) or not np.all(np.isfinite(K)):
            raise ValidationError("controller gain must be a finite 2x4 matrix")
        if self.sign_convention not in SIGNS:
            raise ValidationError("sign_convention must be 'plus' or 'minus'")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)

    @property
    def sign(self) -> float:
        return SIGNS[self.sign_convention]

    def closed_loop_matrix(self, model: LinearModel) -> np.ndarray:
        return model.A + self.sign * model.B @ self.K


def check_observer(L: ObserverGain, model: LinearModel) -> float:
    rho = spectral_radius(L.error_matrix(model))
    if rho >= 1.0:
        raise ConfigError(f"observer is not convergent: rho(A - LC) = {rho:.6f}")
    return rho


def select_sign_convention(K, model: LinearModel, requested: str = "auto") -> tuple[ControllerGain, dict[str, float]]:
    """Pick the stabilizing sign for u = +/-K dx + u_eq.

    Returns the gain and the closed-loop spectral radius under both
    conventions so callers can report the choice.
    """
    radii = {name: spectral_radius(ControllerGain(K, name).closed_loop_matrix(model)) for name in SIGNS}
    if requested == "auto":
        chosen = min(radii, key=radii.get)
    elif requested in SIGNS:
        chosen = requested
    else:
        raise ConfigError(f"unknown sign convention {requested!r}")
    if radii[chosen] >= 1.0:
        raise ConfigError(f"closed loop is unstable under the {chosen} convention (rho = {radii[chosen]:.6f})")
    return ControllerGain(K, chosen), radii


@dataclass(frozen=True)
class ControllerState:
    x_hat: np.ndarray
    model: LinearModel
    L: ObserverGain
    K: ControllerGain

    def __post_init__(self):
        x_hat = _vec("x_hat", self.x_hat, 4).copy()
        x_hat.setflags(write=False)
        object.__setattr__(self, "x_hat", x_hat)


def lq_control(x_hat, K: ControllerGain, x_eq, u_eq) -> np.ndarray:
    x_hat = _vec("x_hat", x_hat, 4)
    dx = x_hat - _vec("x_eq", x_eq, 4)
    return _vec("u_eq", u_eq, 2) + K.sign * (K.K @ dx)


def observer_update(x_hat, u, y, model: LinearModel, L: ObserverGain) -> np.ndarray:
    """x_hat(k+1) = A x_hat + B u + L (y - C x_hat), evaluated on deviations."""
    dx = _vec("x_hat", x_hat, 4) - model.x_eq
    du = _vec("u", u, 2) - model.u_eq
    dy = _vec("y", y, 2) - model.y_eq
    dx_next = model.A @ dx + model.B @ du + L.L @ (dy - model.C @ dx)
    return model.x_eq + dx_next


def controller_step(ctrl: ControllerState, y) -> tuple[np.ndarray, ControllerState]:
    """Compute u(k) from x_hat(k), then advance the observer with that same u(k)."""
    u = lq_control(ctrl.x_hat, ctrl.K, ctrl.model.x_eq, ctrl.model.u_eq)
    x_next = observer_update(ctrl.x_hat, u, y, ctrl.model, ctrl.L)
    return u, replace(ctrl, x_hat=x_next)


@dataclass(frozen=True)
class GainReport:
    observer_rho: float
    closed_loop_rho: dict[str, float]
    sign_convention: str
    augmented_rho: float

    def lines(self) -> list[str]:
        return [
            f"rho(A - L C)            = {self.observer_rho:.12f}",
            f"rho(A + B K)  [plus]    = {self.closed_loop_rho['plus']:.12f}",
            f"rho(A - B K)  [minus]   = {self.closed_loop_rho['minus']:.12f}",
            f"selected sign convention: {self.sign_convention}",
            f"rho(plant + observer)   = {self.augmented_rho:.12f}",
        ]


def augmented_matrix(model: LinearModel, L: ObserverGain, K: ControllerGain) -> np.ndarray:
    """Joint deviation dynamics of [x; x_hat] under output feedback."""
    sBK = K.sign * model.B @ K.K
    top = np.hstack([model.A, sBK])
    bottom = np.hstack([L.L @ model.C, model.A + sBK - L.L @ model.C])
    return np.vstack([top, bottom])


def build_controller(model: LinearModel, L, K, sign: str = "auto", x_hat0=None) -> tuple[ControllerState, GainReport]:
    """Load gains, check both stability certificates and return the initial state."""
    obs = ObserverGain(L)
    rho_obs = check_observer(obs, model)
    gain, radii = select_sign_convention(K, model, sign)
    ctrl = ControllerState(x_hat=model.x_eq if x_hat0 is None else x_hat0, model=model, L=obs, K=gain)
    report = GainReport(rho_obs, radii, gain.sign_convention, spectral_radius(augmented_matrix(model, obs, gain)))
    return ctrl, report


def regulation_horizon(rho: float, initial_deviation: float, tolerance: float) -> int:
    """Steps until rho**k * initial_deviation drops below tolerance."""
    if not 0.0 < rho < 1.0:
        raise ValidationError("horizon is only defined for 0 < rho < 1")
    if initial_deviation <= tolerance:
        return 0
    return math.ceil(math.log(tolerance / initial_deviation) / math.log(rho))
