"""
Simulation configuration.

A config file is a flat YAML mapping of the keys below; anything omitted
keeps its default.  Defaults reproduce the radio and traffic settings of the
reference V2X scenario (F = 12000 packets of 1500 bytes at 6 Mbps, M = 16,
50 us maximum backoff, 20 dBm, -89 dBm noise, 10 dB threshold, 5.9 GHz,
dual-slope 2.3 / 2.7, Nakagami 1.2 and 1.2 / 0.75).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

import yaml

from .channel import ChannelParams
from .errors import ParseError, ValidationError
from .phase2 import Timing
from .scenario import Geometry, GroupConfig


@dataclass(frozen=True)
class SimConfig:
    # file and coding
    F: int = 12000
    ell: int = 1500  # bytes on air per packet
    R_b: float = 6e6
    M: int = 16
    payload_bytes: int = 4  # bytes actually carried per simulated packet
    degree: str = "optimized"  # "optimized" or "fixed:<d>"
    d_max: int | None = None
    lp_ripple: float = 2.0
    lp_eta: float | None = None
    lp_robust: bool = True  # also constrain the LP along the rank growth path
    # radio
    Pt_dBm: float = 20.0
    Pt_prime_dBm: float = 20.0
    PN_dBm: float = -89.0
    gamma_th_dB: float = 10.0
    f_Hz: float = 5.9e9
    d0: float = 10.0
    dc: float = 80.0
    beta1: float = 2.3
    beta2: float = 2.7
    m1: float = 1.2
    m2_near: float = 1.2
    m2_far: float = 0.75
    v2v_break_dist: float = 90.0
    # geometry
    rsu_offset: float = 50.0
    lane_width: float = 3.0
    rsu_height: float = 8.0
    veh_height: float = 1.0
    comm_range: float = 200.0
    # group
    k: int = 8
    v_mean: float = 55.0
    v_jitter: float = 5.0
    gap_low: float = 15.0
    gap_high: float = 35.0
    lanes: str = "alternate"
    speed_epoch: float = 1.0
    # sharing
    dt_max: float = 50e-6
    kappa: float = 1e6
    utility_link_weighted: bool = False  # ablation: weight peers by link success
    baseline_dt_max: float = 50e-6
    leave_fraction: float = 0.25
    max_slots: int | None = None
    # run control
    seed: int = 0
    trials: int = 1
    sweep_speeds: tuple = (40.0, 44.0, 48.0, 52.0, 55.0, 60.0, 65.0)  # km/h, speed experiment
    sweep_k: tuple = (4, 8, 16, 24)  # group sizes, delay experiment
    gain_k: tuple = (1, 2, 4, 8, 16, 24)  # group sizes, groupsize experiment

    def __post_init__(self):
        try:
            self.channel()
            self.group()
            self.geometry().chord(1)
        except ValueError as exc:
            raise ValidationError("config", str(exc)) from None
        if self.F < 1:
            raise ValidationError("F", "must be >= 1")
        if self.M < 1:
            raise ValidationError("M", "must be >= 1")
        if self.ell < 1 or self.payload_bytes < 1:
            raise ValidationError("ell", "packet sizes must be >= 1")
        if self.R_b <= 0:
            raise ValidationError("R_b", "must be positive")
        if not 0 <= self.leave_fraction < 1:
            raise ValidationError("leave_fraction", "must lie in [0, 1)")
        if self.trials < 1:
            raise ValidationError("trials", "must be >= 1")
        if any(k < 1 or int(k) != k for k in (*self.sweep_k, *self.gain_k)):
            raise ValidationError("sweep_k", "group sizes must be positive integers")
        if any(v <= 0 for v in self.sweep_speeds):
            raise ValidationError("sweep_speeds", "speeds must be positive")
        if not (self.degree == "optimized" or self.degree.startswith("fixed:")):
            raise ValidationError("degree", "use 'optimized' or 'fixed:<d>'")

    # -- views onto the module parameter types --------------------------------
    def channel(self) -> ChannelParams:
        return ChannelParams(
            Pt_dBm=self.Pt_dBm, Pt_prime_dBm=self.Pt_prime_dBm, PN_dBm=self.PN_dBm,
            gamma_th_dB=self.gamma_th_dB, f_Hz=self.f_Hz, d0=self.d0, dc=self.dc,
            beta1=self.beta1, beta2=self.beta2, m1=self.m1, m2_near=self.m2_near,
            m2_far=self.m2_far, v2v_break_dist=self.v2v_break_dist,
        )

    def geometry(self) -> Geometry:
        return Geometry(self.rsu_offset, self.lane_width, self.rsu_height, self.veh_height, self.comm_range)

    def group(self) -> GroupConfig:
        return GroupConfig(
            k=self.k, v_mean=self.v_mean, v_jitter=self.v_jitter, gap_low=self.gap_low,
            gap_high=self.gap_high, lanes=self.lanes, epoch=self.speed_epoch, min_gap=self.d0,
        )

    def timing(self, dt_max: float | None = None) -> Timing:
        return Timing(
            dt_max=self.dt_max if dt_max is None else dt_max,
            packet_bits=(self.ell + self.M + 4) * 8,
            rate_bps=self.R_b,
        )

    @property
    def T_p(self) -> float:
        return self.ell * 8 / self.R_b

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in fields(SimConfig)}
_FLOATS = {n for n, f in _FIELDS.items() if f.type in ("float", "float | None")}
_INTS = {n for n, f in _FIELDS.items() if f.type in ("int", "int | None")}


def _coerce(name: str, value):
    if value is None:
        if _FIELDS[name].type.endswith("| None"):
            return None
        raise ValidationError(name, "may not be null")
    if name in _INTS:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(name, f"expected an integer, got {value!r}")
        return value
    if name in _FLOATS:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(name, f"expected a number, got {value!r}")
        return float(value)
    if _FIELDS[name].type == "tuple":
        if not isinstance(value, (list, tuple)) or not value or not all(
            isinstance(x, (int, float)) and not isinstance(x, bool) for x in value
        ):
            raise ValidationError(name, f"expected a non-empty list of numbers, got {value!r}")
        return tuple(value)
    if _FIELDS[name].type == "bool":
        if not isinstance(value, bool):
            raise ValidationError(name, f"expected true or false, got {value!r}")
        return value
    if not isinstance(value, str):
        raise ValidationError(name, f"expected a string, got {value!r}")
    return value


def config_from_mapping(data: dict | None, base: SimConfig | None = None) -> SimConfig:
    base = base or SimConfig()
    if not data:
        return base
    if not isinstance(data, dict):
        raise ParseError("config must be a mapping of key: value pairs")
    changes = {}
    for key, value in data.items():
        if key not in _FIELDS:
            raise ValidationError(str(key), "unknown configuration key")
        changes[key] = _coerce(key, value)
    return base.replace(**changes)


def load_config(path) -> SimConfig:
    with open(path) as fh:
        text = fh.read()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ParseError(str(getattr(exc, "problem", exc)), None if mark is None else mark.line + 1) from None
    return config_from_mapping(data)
