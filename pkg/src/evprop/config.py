"""Pipeline configuration as a flat ``section.key = value`` text file.

Lines starting with ``#`` and blank lines are ignored. Unknown keys are
errors. Tuples are written comma-separated (``quad.right_set = 1,4``).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .core import StcFilterParams
from .detect import DetectorParams
from .estimate import QuadrotorParams
from .geometry import CameraIntrinsics, Extrinsics
from .rpm import FrequencyParams, RpmKfState
from .sim import GeneratorConfig, SimSetup, default_motor_positions


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineSection:
    chunk_us: int = 10_000
    detector: str = "cc"
    seed: int = 0
    n_blades: int = 2
    density_radius: int = 1  # box half-width summed into the detector's density map

    def __post_init__(self):
        if self.density_radius < 0:
            raise ValueError("density_radius must be >= 0")
        if self.detector not in ("cc", "cluster"):
            raise ValueError(f"detector must be 'cc' or 'cluster', not {self.detector!r}")
        if self.chunk_us <= 0:
            raise ValueError("chunk_us must be positive")


@dataclass(frozen=True)
class TrackSection:
    dist_threshold: float = 15.0
    max_missing: int = 5
    velocity_smoothing: float = 0.5


@dataclass(frozen=True)
class RpmSection:
    window_us: int = 100_000
    bin_us: int = 200
    f_min: float = 50.0
    f_max: float = 1000.0
    zero_pad: int = 4
    snr_min: float = 4.0
    harmonic_ratio: float = 0.5
    q_process: float = 1000.0
    r_meas: float = 4.0
    gate: float = 5.0

    def __post_init__(self):
        if self.window_us % self.bin_us:
            raise ValueError("rpm.window_us must be a multiple of rpm.bin_us")

    def frequency_params(self) -> FrequencyParams:
        return FrequencyParams(self.f_min, self.f_max, self.zero_pad, self.snr_min,
                               self.harmonic_ratio)

    def kf_state(self) -> RpmKfState:
        return RpmKfState(q_process=self.q_process, r_meas=self.r_meas, gate=self.gate)


@dataclass(frozen=True)
class ExtrinsicsSection:
    # default: camera looks down the observer body -z axis
    qw: float = 0.0
    qx: float = math.sqrt(0.5)
    qy: float = math.sqrt(0.5)
    qz: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    tz: float = -0.05

    def build(self) -> Extrinsics:
        return Extrinsics.from_quaternion((self.qw, self.qx, self.qy, self.qz),
                                          (self.tx, self.ty, self.tz))


@dataclass(frozen=True)
class FilterSection:
    q_pos: float = 1e-4
    q_vel: float = 1.0
    sigma_lat: float = 0.02
    sigma_depth: float = 0.05
    sigma_p0: float = 1.0
    sigma_v0: float = 1.0
    q_ori: float = 0.001
    sigma_m: float = 0.2
    sigma_ori0: float = 0.2
    depth_eps: float = 2.0
    prop_radius: float = 0.0635
    ellipse_min_events: int = 150
    branch_sigma: float = 0.15  # spread used to weigh the two disc-normal candidates


@dataclass(frozen=True)
class SimSection:
    beta: float = 2.0
    observer_altitude: float = 2.5
    observer_drift: float = 0.05
    dt_us: int = 1000
    prop_radius: float = 0.0635
    hub_ratio: float = 0.15
    blade_width: float = 0.5
    events_per_edge_crossing: float = 0.7
    noise_rate: float = 0.05
    contrast_threshold: float = 0.2


@dataclass(frozen=True)
class MetricsSection:
    warmup_us: int = 300_000
    tolerance_us: int = 5_000
    mape_max: float = 3.0
    # further limits are unchecked while infinite
    pos_rmse_x_max: float = math.inf
    pos_rmse_y_max: float = math.inf
    pos_rmse_z_max: float = math.inf
    roll_rmse_deg_max: float = math.inf
    pitch_rmse_deg_max: float = math.inf

    def thresholds(self) -> dict[str, float]:
        out = {}
        for f in fields(self):
            if f.name.endswith("_max"):
                v = getattr(self, f.name)
                if math.isfinite(v):
                    key = f.name if f.name == "mape_max" else "state." + f.name
                    out[key] = v
        return out


@dataclass(frozen=True)
class PipelineConfig:
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    stc: StcFilterParams = field(default_factory=StcFilterParams)
    detect: DetectorParams = field(default_factory=lambda: DetectorParams(subsample_max=300, cluster_min_size=20))
    track: TrackSection = field(default_factory=TrackSection)
    rpm: RpmSection = field(default_factory=RpmSection)
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    extrinsics: ExtrinsicsSection = field(default_factory=ExtrinsicsSection)
    quad: QuadrotorParams = field(default_factory=QuadrotorParams)
    filter: FilterSection = field(default_factory=FilterSection)
    sim: SimSection = field(default_factory=SimSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)

    # ---- serialization

    def to_text(self) -> str:
        lines = []
        for name in _SECTIONS:
            sec = getattr(self, name)
            for f in fields(sec):
                lines.append(f"{name}.{f.name} = {_format(getattr(sec, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()

    @classmethod
    def from_text(cls, text: str) -> "PipelineConfig":
        updates: dict[str, dict[str, object]] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'section.key = value': {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if "." not in key:
                raise ConfigError(f"line {lineno}: key {key!r} lacks a section")
            section, name = key.split(".", 1)
            if section not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section {section!r}")
            updates.setdefault(section, {})[name] = (lineno, value)
        cfg = cls()
        kwargs = {}
        for section, items in updates.items():
            base = getattr(cfg, section)
            types = {f.name: type(getattr(base, f.name)) for f in fields(base)}
            vals = {}
            for name, (lineno, value) in items.items():
                if name not in types:
                    raise ConfigError(f"line {lineno}: unknown key {section}.{name}")
                try:
                    vals[name] = _parse(value, types[name], getattr(base, name))
                except ValueError as exc:
                    raise ConfigError(f"line {lineno}: {section}.{name}: {exc}") from None
            try:
                kwargs[section] = replace(base, **vals)
            except ValueError as exc:
                raise ConfigError(f"section {section}: {exc}") from None
        return replace(cfg, **kwargs)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_text(Path(path).read_text())

    def with_overrides(self, detector: str | None = None, seed: int | None = None) -> "PipelineConfig":
        p = self.pipeline
        p = replace(p, detector=detector if detector else p.detector,
                    seed=p.seed if seed is None else seed)
        return replace(self, pipeline=p)

    # ---- builders

    def extrinsics_matrix(self) -> Extrinsics:
        return self.extrinsics.build()

    def generator(self) -> GeneratorConfig:
        s = self.sim
        return GeneratorConfig(
            prop_radius=s.prop_radius, hub_ratio=s.hub_ratio, n_blades=self.pipeline.n_blades,
            blade_width=s.blade_width, motor_positions=default_motor_positions(self.quad.diagonal),
            events_per_edge_crossing=s.events_per_edge_crossing, noise_rate=s.noise_rate,
            contrast_threshold=s.contrast_threshold, seed=self.pipeline.seed,
        )

    def sim_setup(self) -> SimSetup:
        return SimSetup(self.camera, self.extrinsics_matrix(), self.quad, self.generator(),
                        self.sim.beta, self.sim.observer_altitude, self.sim.observer_drift,
                        self.sim.dt_us)


_SECTIONS = tuple(f.name for f in fields(PipelineConfig))


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, typ, default):
    if typ is bool:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if typ is int:
        return int(text)
    if typ is float:
        return float(text)
    if typ is tuple:
        parts = [p.strip() for p in text.split(",") if p.strip()]
        elem = type(default[0]) if default else float
        return tuple(elem(p) for p in parts)
    if typ is str:
        return text
    if typ is np.ndarray:
        return np.array([float(p) for p in text.split(",")])
    raise ValueError(f"unsupported type {typ.__name__}")

