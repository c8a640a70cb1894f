"""TOML config files for the plant, the controller and attack scenarios."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .plant import LinearModel, QtpParams, derive_model, output_matrix

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


def _read_toml(path):
    if path is None:
        raise ConfigError("no path given")
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _shipped(name: str) -> dict:
    text = resources.files("teecontrol").joinpath("data", name).read_text()
    return tomllib.loads(text)


def _array(doc, key, shape, where):
    if key not in doc:
        raise ConfigError(f"{where}: missing key {key!r}")
    try:
        arr = np.asarray(doc[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {key} is not numeric") from exc
    if arr.shape != shape:
        raise ConfigError(f"{where}: {key} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{where}: {key} has non-finite entries")
    return arr


@dataclass(frozen=True)
class PlantConfig:
    params: QtpParams
    x_eq: np.ndarray
    u_eq: np.ndarray
    Ts: float = 0.1
    substeps: int = 10
    noise_std: float = 0.0
    noise_seed: int = 0

    def linear_model(self) -> LinearModel:
        return derive_model(self.params, self.x_eq, self.u_eq, self.Ts)


def plant_config_from_dict(doc: dict, where: str = "plant config") -> PlantConfig:
    p = doc.get("params")
    if p is None:
        raise ConfigError(f"{where}: missing [params] table")
    try:
        params = QtpParams(
            tank_areas=p["tank_areas"],
            outlet_areas=p["outlet_areas"],
            pump_gains=p["pump_gains"],
            flow_splits=p["flow_splits"],
            g=p.get("g", 981.0),
            kc=p.get("kc", 0.5),
        )
    except KeyError as exc:
        raise ConfigError(f"{where}: missing params key {exc}") from exc
    except ValidationError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    op = doc.get("operating_point", {})
    sim = doc.get("simulation", {})
    Ts = float(sim.get("Ts", 0.1))
    substeps = int(sim.get("substeps", 10))
    if Ts <= 0 or substeps < 1:
        raise ConfigError(f"{where}: Ts must be > 0 and substeps >= 1")
    return PlantConfig(
        params=params,
        x_eq=_array(op, "x_eq", (4,), where),
        u_eq=_array(op, "u_eq", (2,), where),
        Ts=Ts,
        substeps=substeps,
        noise_std=float(sim.get("noise_std", 0.0)),
        noise_seed=int(sim.get("noise_seed", 0)),
    )


def load_plant_config(path=None) -> PlantConfig:
    """Load a plant file; ``None`` gives the shipped quadruple-tank preset."""
    if path is None:
        return plant_config_from_dict(_shipped("qtp_plant.toml"), "shipped qtp_plant.toml")
    return plant_config_from_dict(_read_toml(path), str(path))


@dataclass(frozen=True)
class ControllerConfig:
    L: np.ndarray
    K: np.ndarray
    sign: str = "auto"
    A: np.ndarray | None = None
    B: np.ndarray | None = None
    C: np.ndarray | None = None
    Ts: float | None = None
    x_eq: np.ndarray | None = None
    u_eq: np.ndarray | None = None
    x_hat0: np.ndarray | None = None

    def model(self, plant: PlantConfig) -> LinearModel:
        """Explicit matrices win; anything missing is taken from the plant linearization."""
        derived = plant.linear_model()
        Ts = self.Ts if self.Ts is not None else derived.Ts
        if abs(Ts - plant.Ts) > 1e-12:
            raise ConfigError(f"controller Ts={Ts} does not match plant Ts={plant.Ts}")
        return LinearModel(
            A=self.A if self.A is not None else derived.A,
            B=self.B if self.B is not None else derived.B,
            C=self.C if self.C is not None else output_matrix(plant.params.kc),
            Ts=Ts,
            x_eq=self.x_eq if self.x_eq is not None else derived.x_eq,
            u_eq=self.u_eq if self.u_eq is not None else derived.u_eq,
            kc=plant.params.kc,
        )

    def to_dict(self) -> dict:
        out = {"sign": self.sign, "L": self.L.tolist(), "K": self.K.tolist()}
        for key in ("A", "B", "C", "x_eq", "u_eq", "x_hat0"):
            val = getattr(self, key)
            if val is not None:
                out[key] = np.asarray(val).tolist()
        if self.Ts is not None:
            out["Ts"] = self.Ts
        return out


def controller_config_from_dict(doc: dict, where: str = "controller config") -> ControllerConfig:
    sign = doc.get("sign", "auto")
    if sign not in ("auto", "plus", "minus"):
        raise ConfigError(f"{where}: sign must be auto, plus or minus")
    opt = {}
    for key, shape in (("A", (4, 4)), ("B", (4, 2)), ("C", (2, 4)), ("x_eq", (4,)), ("u_eq", (2,)), ("x_hat0", (4,))):
        if key in doc:
            opt[key] = _array(doc, key, shape, where)
    if "Ts" in doc:
        opt["Ts"] = float(doc["Ts"])
    return ControllerConfig(L=_array(doc, "L", (4, 2), where), K=_array(doc, "K", (2, 4), where), sign=sign, **opt)


def load_controller_config(path=None) -> ControllerConfig:
    if path is None:
        return controller_config_from_dict(_shipped("controller.toml"), "shipped controller.toml")
    return controller_config_from_dict(_read_toml(path), str(path))


SCENARIOS = ("eavesdrop", "tamper_fuzz", "replay_burst", "inject_forged", "rollback_sealed", "attest_wrong_image", "drop_storm")


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    seed: int = 0
    steps: int | None = None
    attack_window: tuple[int, int] | None = None
    knobs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; choose from {', '.join(SCENARIOS)}")
        if self.attack_window is not None:
            lo, hi = self.attack_window
            if lo < 0 or hi < lo:
                raise ConfigError("attack_window must be [start, stop) with 0 <= start <= stop")


def load_scenario_config(path, scenario: str | None = None) -> ScenarioConfig:
    doc = _read_toml(path) if path is not None else _shipped("scenario_default.toml")
    window = doc.get("attack_window")
    return ScenarioConfig(
        scenario=scenario or doc.get("scenario", ""),
        seed=int(doc.get("seed", 0)),
        steps=doc.get("steps"),
        attack_window=tuple(window) if window is not None else None,
        knobs=dict(doc.get("knobs", {})),
    )


def default_paths() -> dict[str, Path]:
    base = resources.files("teecontrol").joinpath("data")
    return {name: Path(str(base.joinpath(name))) for name in ("qtp_plant.toml", "controller.toml", "scenario_default.toml")}
