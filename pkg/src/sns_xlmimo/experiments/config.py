"""JSON-backed sweep configuration.

A sweep config describes the simulated scenario (geometry, user placement,
visibility model, pilot budget), the algorithms to score, and the Monte Carlo
layout (trials, base seed, swept axis).  The three axes `vr.psi`,
`observation.pilot_slots` and `observation.snr_db` are lists; their Cartesian
product forms the evaluation grid, and the axis flagged (or inferred) as
`sweep_axis` labels the rows of the emitted tables.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .. import observation

KNOWN_ALGORITHMS = (
    "vrdomp",
    "rfeb",
    "ls",
    "womp",
    "bbomp_soft",
    "bbomp_hard",
    "genie",
    "perfect",
)

VR_KINDS = ("contiguous", "two_blocks", "markov", "fixed")

SWEEP_AXES = ("snr_db", "pilot_slots", "psi")


class ConfigError(ValueError):
    """Invalid or inconsistent sweep configuration."""


def _as_list(value) -> list:
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _as_range(value, what: str) -> tuple[float, float]:
    if isinstance(value, (list, tuple)):
        if len(value) != 2 or value[0] > value[1]:
            raise ConfigError(f"{what} range must be [lo, hi]")
        return float(value[0]), float(value[1])
    return float(value), float(value)


@dataclass
class GeometryConfig:
    num_antennas: int = 256
    carrier_ghz: float = 100.0
    wavelength_m: float | None = None
    spacing_m: float | None = None

    @property
    def wavelength(self) -> float:
        if self.wavelength_m is not None:
            return self.wavelength_m
        return 299_792_458.0 / (self.carrier_ghz * 1e9)


@dataclass
class UserConfig:
    distance_m: tuple[float, float] = (10.0, 50.0)
    azimuth_rad: tuple[float, float] = (-math.pi / 3.0, math.pi / 3.0)


@dataclass
class VrConfig:
    kind: str = "contiguous"
    psi: list[float] = field(default_factory=lambda: [0.25])
    p10: float = 0.1
    # Markov draws only: reject until the realized fill is within this
    # distance of psi (see channel.sample_vr).
    fill_tol: float | None = None
    # 1-based inclusive [lo, hi] antenna ranges, used by kind "fixed".
    support: list[list[int]] | None = None


@dataclass
class ObservationConfig:
    pilot_slots: list[int] = field(default_factory=lambda: [45])
    num_rf_chains: int = 4
    snr_db: list[float] = field(default_factory=lambda: [5.0])
    combiner: str = "dft_rows"


@dataclass
class DetectorSettings:
    psi_th: float = 0.5
    tol: float = 1e-5
    max_iters: int = 50
    damping: float = 0.7
    em: bool = True
    known_noise: bool = True
    psi0: float = 0.5
    p10_init: float = 0.1
    # Guards against EM feeding on its own diffuse early beliefs; see
    # DetectorConfig.  Both are needed only for wide-fill scenes.
    noise_learn_delay: int = 0
    learn_p10: bool = True


@dataclass
class EstimatorSettings:
    # None derives the pursuit depth from the effective bandwidth of the
    # nearest configured user position.
    max_support: int | None = None
    k_min: int = 4
    residual_tol: float = 1e-3
    # Discrepancy-principle stop: end the pursuit once the residual reaches
    # the expected noise level sqrt(M * noise_var).  Without it the greedy
    # fit keeps explaining noise with near-collinear oversampled-grid atoms,
    # and coefficients that cancel in measurement space blow up the
    # antenna-domain reconstruction (worst for wide visibility regions).
    noise_floor_stop: bool = True
    rfeb_window: int = 9
    rfeb_power_th: float = 3.0


@dataclass
class OutputConfig:
    dir: str = "results"
    plots: bool = False


@dataclass
class SweepConfig:
    name: str = "sweep"
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    oversampling: int = 2
    user: UserConfig = field(default_factory=UserConfig)
    vr: VrConfig = field(default_factory=VrConfig)
    observation: ObservationConfig = field(default_factory=ObservationConfig)
    algorithms: list[str] = field(default_factory=lambda: ["vrdomp", "bbomp_soft", "ls"])
    trials: int = 500
    base_seed: int = 20260814
    detector: DetectorSettings = field(default_factory=DetectorSettings)
    estimator: EstimatorSettings = field(default_factory=EstimatorSettings)
    sweep_axis: str | None = None
    emit_belief_profile: bool = False
    output: OutputConfig = field(default_factory=OutputConfig)

    def validate(self) -> None:
        g = self.geometry
        if g.num_antennas < 2:
            raise ConfigError("num_antennas must be at least 2")
        if g.wavelength <= 0:
            raise ConfigError("wavelength must be positive")
        if self.oversampling < 1:
            raise ConfigError("oversampling must be a positive integer")
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if not self.algorithms:
            raise ConfigError("no algorithms requested")
        for alg in self.algorithms:
            if alg not in KNOWN_ALGORITHMS:
                raise ConfigError(f"unknown algorithm {alg!r} (known: {KNOWN_ALGORITHMS})")
        if self.vr.kind not in VR_KINDS:
            raise ConfigError(f"unknown VR kind {self.vr.kind!r} (known: {VR_KINDS})")
        if self.vr.kind == "fixed":
            if not self.vr.support:
                raise ConfigError("VR kind 'fixed' needs a support")
            for rng in self.vr.support:
                if len(rng) != 2 or not 1 <= rng[0] <= rng[1] <= g.num_antennas:
                    raise ConfigError("support ranges must be 1-based inclusive [lo, hi]")
        for psi in self.vr.psi:
            if not 0.0 < psi <= 1.0:
                raise ConfigError("psi values must lie in (0, 1]")
        if not self.observation.pilot_slots or not self.observation.snr_db:
            raise ConfigError("observation axes must be non-empty")
        if self.observation.combiner not in observation.COMBINER_KINDS:
            raise ConfigError(
                f"unknown combiner {self.observation.combiner!r} "
                f"(known: {observation.COMBINER_KINDS})"
            )
        for q in self.observation.pilot_slots:
            if q * self.observation.num_rf_chains > g.num_antennas:
                raise ConfigError(
                    f"pilot_slots={q} with {self.observation.num_rf_chains} RF chains "
                    f"oversamples N={g.num_antennas}"
                )
        if self.sweep_axis is not None and self.sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"sweep_axis must be one of {SWEEP_AXES}")
        if not 0.0 < self.detector.damping <= 1.0:
            raise ConfigError("damping must lie in (0, 1]")

    @property
    def resolved_sweep_axis(self) -> str:
        """Explicit axis if given, else the unique multi-valued axis, else SNR."""
        if self.sweep_axis is not None:
            return self.sweep_axis
        multi = [
            name
            for name, values in (
                ("snr_db", self.observation.snr_db),
                ("pilot_slots", self.observation.pilot_slots),
                ("psi", self.vr.psi),
            )
            if len(values) > 1
        ]
        if len(multi) == 1:
            return multi[0]
        return "snr_db"

    def grid(self) -> list[dict[str, float]]:
        """Grid points in deterministic enumeration order (psi, Q, SNR)."""
        points = []
        for psi in self.vr.psi:
            for q in self.observation.pilot_slots:
                for snr in self.observation.snr_db:
                    points.append({"psi": float(psi), "pilot_slots": int(q), "snr_db": float(snr)})
        return points

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


_SECTION_TYPES = {
    "geometry": GeometryConfig,
    "user": UserConfig,
    "vr": VrConfig,
    "observation": ObservationConfig,
    "detector": DetectorSettings,
    "estimator": EstimatorSettings,
    "output": OutputConfig,
}


def _build_section(cls, data: dict, section: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    return cls(**data)


def config_from_dict(data: dict[str, Any]) -> SweepConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    data = dict(data)
    kwargs: dict[str, Any] = {}
    for section, cls in _SECTION_TYPES.items():
        if section in data:
            raw = data.pop(section)
            if not isinstance(raw, dict):
                raise ConfigError(f"'{section}' must be an object")
            kwargs[section] = _build_section(cls, raw, section)
    top_known = {f.name for f in dataclasses.fields(SweepConfig)}
    unknown = set(data) - top_known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs.update(data)
    cfg = SweepConfig(**kwargs)
    # Normalize list-valued fields parsed from JSON scalars.
    cfg.vr.psi = [float(v) for v in _as_list(cfg.vr.psi)]
    cfg.observation.pilot_slots = [int(v) for v in _as_list(cfg.observation.pilot_slots)]
    cfg.observation.snr_db = [float(v) for v in _as_list(cfg.observation.snr_db)]
    cfg.user.distance_m = _as_range(cfg.user.distance_m, "distance_m")
    cfg.user.azimuth_rad = _as_range(cfg.user.azimuth_rad, "azimuth_rad")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> SweepConfig:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    return config_from_dict(data)
