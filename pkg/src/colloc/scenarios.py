"""Scenario configuration and analytic ground-truth trajectories."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Any

import numpy as np

from .core_types import STATE_DIM, NoiseSpec
from .models import Landmark

KINDS = ("parallel", "crossing", "tunnel")
MAX_VEHICLES = 10


class ConfigError(ValueError):
    """Invalid scenario configuration; ``field`` names the offending key."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def _default_initial_cov():
    return np.diag([1.0, 1.0, 0.1 ** 2, 0.5 ** 2, 0.5 ** 2, 0.05 ** 2])


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str = "parallel"
    n_vehicles: int = 2
    speed: float = 5.0
    run_length: float = 180.0
    lane_offset: float = 3.5
    landmark_spacing: float = 0.0
    landmark_offset: float = 5.0
    gps_enabled: bool = True
    dt: float = 0.01
    gps_rate: float = 10.0
    uwb_rate: float = 10.0
    uwb_max_range: float = 50.0
    ekf_uses_landmarks: bool = True
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    initial_cov: np.ndarray = field(default_factory=_default_initial_cov)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "initial_cov", np.array(self.initial_cov, dtype=float))
        if not self.name:
            object.__setattr__(self, "name", self.kind)
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError("kind", f"must be one of {KINDS}, got {self.kind!r}")
        if not (isinstance(self.n_vehicles, int) and 1 <= self.n_vehicles <= MAX_VEHICLES):
            raise ConfigError("n_vehicles", f"must be an integer in 1..{MAX_VEHICLES}")
        for name in ("speed", "run_length", "dt", "gps_rate", "uwb_rate"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ConfigError(name, f"must be > 0, got {v!r}")
        for name in ("lane_offset", "landmark_spacing", "landmark_offset", "uwb_max_range"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigError(name, f"must be >= 0, got {v!r}")
        if self.kind == "tunnel" and self.gps_enabled:
            raise ConfigError("gps_enabled", "tunnel scenario has no GPS")
        if self.initial_cov.shape != (STATE_DIM, STATE_DIM):
            raise ConfigError("initial_cov", "must be 6x6")
        c = self.initial_cov
        if not np.allclose(c, c.T) or np.linalg.eigvalsh(c).min() <= 0:
            raise ConfigError("initial_cov", "must be symmetric positive definite")
        for name, rate in (("gps_rate", self.gps_rate), ("uwb_rate", self.uwb_rate)):
            every = 1.0 / (rate * self.dt)
            if every < 1 - 1e-9 or abs(every - round(every)) > 1e-6:
                raise ConfigError(name, "must divide the tick rate 1/dt")

    @property
    def n_ticks(self) -> int:
        return int(round(self.run_length / self.speed / self.dt))

    @property
    def gps_every(self) -> int:
        return int(round(1.0 / (self.gps_rate * self.dt)))

    @property
    def uwb_every(self) -> int:
        return int(round(1.0 / (self.uwb_rate * self.dt)))

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "noise":
                v = v.to_dict()
            elif isinstance(v, np.ndarray):
                v = v.tolist()
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ScenarioConfig":
        """Build from a (partial) mapping; absent keys take the kind's defaults."""
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        known = {f.name for f in fields(cls)}
        for k in d:
            if k not in known:
                raise ConfigError(k, "unknown key")
        kind = d.get("kind", "parallel")
        if kind not in KINDS:
            raise ConfigError("kind", f"must be one of {KINDS}, got {kind!r}")
        base = default_scenario(kind)
        kwargs = dict(d)
        if "noise" in kwargs:
            kwargs["noise"] = _noise_from_dict(base.noise, kwargs["noise"])
        for k, v in kwargs.items():
            _check_type(k, v, _FIELD_TYPES.get(k))
        if "initial_cov" in kwargs:
            try:
                kwargs["initial_cov"] = np.array(kwargs["initial_cov"], dtype=float)
            except (TypeError, ValueError):
                raise ConfigError("initial_cov", "must be a 6x6 array of numbers") from None
        try:
            return replace(base, **kwargs)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError("<config>", str(exc)) from None


_FIELD_TYPES = {
    "kind": str, "name": str, "n_vehicles": int,
    "gps_enabled": bool, "ekf_uses_landmarks": bool,
    **{k: float for k in ("speed", "run_length", "lane_offset", "landmark_spacing",
                          "landmark_offset", "dt", "gps_rate", "uwb_rate", "uwb_max_range")},
}


def _check_type(name: str, value, typ) -> None:
    if typ is None:
        return
    if typ is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif typ is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, typ)
    if not ok:
        raise ConfigError(name, f"must be of type {typ.__name__}, got {value!r}")


def _noise_from_dict(base: NoiseSpec, nd) -> NoiseSpec:
    if not isinstance(nd, dict):
        raise ConfigError("noise", "must be an object")
    nkeys = {f.name for f in fields(NoiseSpec)}
    for k, v in nd.items():
        if k not in nkeys:
            raise ConfigError(f"noise.{k}", "unknown key")
        if k == "second_order":
            _check_type(f"noise.{k}", v, bool)
        elif k != "process_r":
            _check_type(f"noise.{k}", v, float)
    try:
        return replace(base, **nd)
    except (TypeError, ValueError) as exc:
        msg = str(exc)
        name = next((k for k in nd if msg.startswith(k)), None)
        raise ConfigError(f"noise.{name}" if name else "noise", msg) from None


def default_scenario(kind: str, **overrides) -> ScenarioConfig:
    """Defaults for the three simulated scenarios."""
    if kind == "tunnel":
        base = dict(kind=kind, gps_enabled=False, landmark_spacing=50.0)
    else:
        base = dict(kind=kind)
    base.update(overrides)
    return ScenarioConfig(**base)


@dataclass(frozen=True)
class Truth:
    t: np.ndarray          # (K+1,)
    states: np.ndarray     # (K+1, N, 6)
    controls: np.ndarray   # (K, N, 2); controls[k-1] drives tick k-1 -> k
    landmarks: tuple       # Landmark tuples

    @property
    def n_vehicles(self) -> int:
        return self.states.shape[1]

    @property
    def n_ticks(self) -> int:
        return self.states.shape[0] - 1


def _track(start_xy, heading, speed, t):
    c, s = math.cos(heading), math.sin(heading)
    vx, vy = speed * c, speed * s
    out = np.zeros((t.size, STATE_DIM))
    out[:, 0] = start_xy[0] + vx * t
    out[:, 1] = start_xy[1] + vy * t
    out[:, 2] = heading
    out[:, 3] = vx
    out[:, 4] = vy
    return out


def vehicle_tracks(cfg: ScenarioConfig):
    """(start position, heading) for each vehicle."""
    a = cfg.lane_offset
    L = cfg.run_length
    tracks = []
    for i in range(cfg.n_vehicles):
        if cfg.kind in ("parallel", "tunnel"):
            tracks.append(((0.0, i * a), 0.0))
        else:
            rank = i // 2
            if i % 2 == 0:
                tracks.append(((0.0, -rank * a), 0.0))
            else:
                # reaches the crossing point a/speed seconds after vehicle 0
                tracks.append(((L / 2 + rank * a, -L / 2 - a), math.pi / 2))
    return tracks


def landmark_positions(cfg: ScenarioConfig) -> tuple:
    """Landmarks every ``landmark_spacing`` metres along the run, alternating
    sides of the corridor, ``landmark_offset`` metres beyond its outermost
    lanes (the lanes of the vehicles travelling along x)."""
    if cfg.landmark_spacing <= 0:
        return ()
    lanes = [xy[1] for xy, heading in vehicle_tracks(cfg) if heading == 0.0]
    top = max(lanes) + cfg.landmark_offset
    bottom = min(lanes) - cfg.landmark_offset
    out = []
    k = 0
    while k * cfg.landmark_spacing <= cfg.run_length + 1e-9:
        out.append(Landmark(k, k * cfg.landmark_spacing, top if k % 2 == 0 else bottom))
        k += 1
    return tuple(out)


def generate_truth(cfg: ScenarioConfig) -> Truth:
    cfg.validate()
    K = cfg.n_ticks
    t = np.arange(K + 1) * cfg.dt
    states = np.stack([_track(xy, h, cfg.speed, t) for xy, h in vehicle_tracks(cfg)], axis=1)
    controls = np.zeros((K, cfg.n_vehicles, 2))
    return Truth(t, states, controls, landmark_positions(cfg))
