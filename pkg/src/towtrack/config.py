"""Experiment configuration: defaults, file parsing, CLI overrides.

Config files are flat ``key = value`` lines with dotted section prefixes
(``ocp.horizon = 15``).  Angles are configured in degrees via ``*_deg`` keys
and stored in radians.  Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

from dataclasses import dataclass

from .model import DEG, VehicleGeometry
from .nmhe import MheConfig
from .nmpc import OcpConfig
from .path import ConfigError, Path, build_eight_track
from .plant import PlantConfig, SensorConfig, SlipSchedule


@dataclass(frozen=True)
class TrackConfig:
    straight_len: float = 30.0
    radius: float = 10.0
    spacing: float = 0.05

    def build(self) -> Path:
        return build_eight_track(straight_len=self.straight_len,
                                 radius=self.radius, spacing=self.spacing)


@dataclass(frozen=True)
class TrueSlipConfig:
    mu: float = 0.9
    kappa: float = 0.9
    eta: float = 0.9
    schedule_csv: str = ""

    def schedule(self) -> SlipSchedule:
        if self.schedule_csv:
            return SlipSchedule.from_csv(self.schedule_csv)
        return SlipSchedule.constant(self.mu, self.kappa, self.eta)


@dataclass(frozen=True)
class RunConfig:
    duration: float = 120.0
    seed: int = 0
    concurrent: bool = False

    def __post_init__(self) -> None:
        if self.duration <= 0.0:
            raise ConfigError("run.duration must be positive")


def _float(s: str) -> float:
    return float(s)


def _deg(s: str) -> float:
    return float(s) * DEG


def _int(s: str) -> int:
    return int(s)


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _str(s: str) -> str:
    return s


# key -> (converter, default in stored units)
_KEYS = {
    "geometry.tractor_wheelbase": (_float, 1.4),
    "geometry.trailer_length": (_float, 1.3),
    "geometry.drawbar_length": (_float, 1.1),
    "track.straight_len": (_float, 30.0),
    "track.radius": (_float, 10.0),
    "track.spacing": (_float, 0.05),
    "ocp.horizon": (_int, 15),
    "ocp.dt": (_float, 0.2),
    "ocp.w_tractor": (_float, 0.5),
    "ocp.w_trailer": (_float, 0.005),
    "ocp.w_yaw": (_float, 0.0),
    "ocp.r_tractor": (_float, 5.0),
    "ocp.r_trailer": (_float, 0.05),
    "ocp.terminal_scale": (_float, 10.0),
    "ocp.delta_t_max_deg": (_deg, 35.0 * DEG),
    "ocp.delta_i_max_deg": (_deg, 25.0 * DEG),
    "ocp.lookahead": (_float, 1.6),
    "mhe.window": (_int, 20),
    "mhe.sigma_pos": (_float, 0.03),
    "mhe.sigma_beta_deg": (_deg, 1.0 * DEG),
    "mhe.sigma_v": (_float, 0.1),
    "mhe.sigma_steer_deg": (_deg, 1.0 * DEG),
    "mhe.slip_min": (_float, 0.25),
    "mhe.slip_max": (_float, 1.0),
    "mhe.slip_init": (_float, 1.0),
    "plant.tau_steer_tractor": (_float, 0.15),
    "plant.rate_tractor_deg": (_deg, 30.0 * DEG),
    "plant.stop_tractor_deg": (_deg, 36.0 * DEG),
    "plant.tau_steer_trailer": (_float, 0.4),
    "plant.rate_trailer_deg": (_deg, 15.0 * DEG),
    "plant.stop_trailer_deg": (_deg, 26.0 * DEG),
    "plant.tau_speed": (_float, 0.5),
    "plant.speed_ref": (_float, 1.0),
    "plant.substeps": (_int, 10),
    "sensors.sigma_pos": (_float, 0.03),
    "sensors.sigma_beta_deg": (_deg, 1.0 * DEG),
    "sensors.sigma_v": (_float, 0.1),
    "sensors.sigma_steer_deg": (_deg, 1.0 * DEG),
    "sensors.quant_deg": (_deg, 1.0 * DEG),
    "sensors.dropout_prob": (_float, 11.0 / 871.0),
    "slip.mu": (_float, 0.9),
    "slip.kappa": (_float, 0.9),
    "slip.eta": (_float, 0.9),
    "slip.schedule": (_str, ""),
    "run.duration": (_float, 120.0),
    "run.seed": (_int, 0),
    "run.concurrent": (_bool, False),
}


def _parse_lines(lines, values, where: str) -> None:
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _KEYS:
            raise ConfigError(f"{where}:{lineno}: unknown key {key!r}")
        conv, _ = _KEYS[key]
        try:
            values[key] = conv(val)
        except ValueError as exc:
            raise ConfigError(f"{where}:{lineno}: bad value for {key}: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: VehicleGeometry
    track: TrackConfig
    ocp: OcpConfig
    mhe: MheConfig
    plant: PlantConfig
    sensors: SensorConfig
    slip: TrueSlipConfig
    run: RunConfig
    lookahead: float
    slip_init: float

    @classmethod
    def from_values(cls, values: dict) -> "ExperimentConfig":
        v = values
        w = (v["ocp.w_tractor"], v["ocp.w_tractor"], v["ocp.w_yaw"],
             v["ocp.w_trailer"], v["ocp.w_trailer"], v["ocp.w_yaw"])
        terminal = tuple(v["ocp.terminal_scale"] * wi for wi in w)
        try:
            geometry = VehicleGeometry(
                tractor_wheelbase=v["geometry.tractor_wheelbase"],
                trailer_length=v["geometry.trailer_length"],
                drawbar_length=v["geometry.drawbar_length"])
            ocp = OcpConfig(horizon=v["ocp.horizon"], dt=v["ocp.dt"],
                            state_weights=w, input_weights=(v["ocp.r_tractor"],
                                                            v["ocp.r_trailer"]),
                            terminal_weights=terminal,
                            delta_t_max=v["ocp.delta_t_max_deg"],
                            delta_i_max=v["ocp.delta_i_max_deg"])
            mhe = MheConfig(window=v["mhe.window"], dt=v["ocp.dt"],
                            sigma_pos=v["mhe.sigma_pos"],
                            sigma_beta=v["mhe.sigma_beta_deg"],
                            sigma_v=v["mhe.sigma_v"],
                            sigma_steer=v["mhe.sigma_steer_deg"],
                            slip_min=v["mhe.slip_min"], slip_max=v["mhe.slip_max"])
            plant = PlantConfig(tau_steer_tractor=v["plant.tau_steer_tractor"],
                                rate_tractor=v["plant.rate_tractor_deg"],
                                stop_tractor=v["plant.stop_tractor_deg"],
                                tau_steer_trailer=v["plant.tau_steer_trailer"],
                                rate_trailer=v["plant.rate_trailer_deg"],
                                stop_trailer=v["plant.stop_trailer_deg"],
                                tau_speed=v["plant.tau_speed"],
                                speed_ref=v["plant.speed_ref"],
                                substeps=v["plant.substeps"])
            sensors = SensorConfig(sigma_pos=v["sensors.sigma_pos"],
                                   sigma_beta=v["sensors.sigma_beta_deg"],
                                   sigma_v=v["sensors.sigma_v"],
                                   sigma_steer=v["sensors.sigma_steer_deg"],
                                   quant=v["sensors.quant_deg"],
                                   dropout_prob=v["sensors.dropout_prob"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(geometry=geometry,
                   track=TrackConfig(straight_len=v["track.straight_len"],
                                     radius=v["track.radius"],
                                     spacing=v["track.spacing"]),
                   ocp=ocp, mhe=mhe, plant=plant, sensors=sensors,
                   slip=TrueSlipConfig(mu=v["slip.mu"], kappa=v["slip.kappa"],
                                       eta=v["slip.eta"],
                                       schedule_csv=v["slip.schedule"]),
                   run=RunConfig(duration=v["run.duration"], seed=v["run.seed"],
                                 concurrent=v["run.concurrent"]),
                   lookahead=v["ocp.lookahead"],
                   slip_init=v["mhe.slip_init"])

    @classmethod
    def default(cls) -> "ExperimentConfig":
        return cls.from_values({k: d for k, (_, d) in _KEYS.items()})

    @classmethod
    def load(cls, path=None, overrides=()) -> "ExperimentConfig":
        values = {k: d for k, (_, d) in _KEYS.items()}
        if path is not None:
            with open(path, "r", encoding="utf-8") as fh:
                _parse_lines(fh.readlines(), values, str(path))
        _parse_lines(list(overrides), values, "<override>")
        return cls.from_values(values)


def default_config_text() -> str:
    """The full key table with default values, ready to write to a file."""
    out = []
    for key, (conv, default) in _KEYS.items():
        if conv is _deg:
            shown = repr(default / DEG)
        elif conv is _bool:
            shown = "true" if default else "false"
        elif conv is _str:
            shown = default
        else:
            shown = repr(default)
        out.append(f"{key} = {shown}")
    return "\n".join(out) + "\n"
