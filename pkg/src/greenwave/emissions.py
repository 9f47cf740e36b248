"""Analytical CO2 surrogate: piecewise-linear in vehicle-specific power.

Stands in for learned emission models with a deterministic, invertible form:
rate = (idle + slope * max(0, VSP)) scaled by vehicle class, age band and
weather modifiers. Electric vehicles emit zero. All constants live in a
versioned coefficient file so the evaluation report can pin their hash.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

GRAVITY = 9.81
COEFFICIENT_FORMAT = "greenwave-emission-coefficients"
COEFFICIENT_VERSION = 1

REFERENCE_TEMP_C = 20.0
REFERENCE_HUMIDITY = 50.0


@dataclass(frozen=True)
class EmissionContext:
    vclass: str = "car"
    fuel: str = "ice"
    age_band: str = "6_10"
    temperature_c: float = REFERENCE_TEMP_C
    humidity_pct: float = REFERENCE_HUMIDITY
    road_grade_pct: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.humidity_pct <= 100.0:
            raise ValueError(f"humidity must be in [0, 100], got {self.humidity_pct}")
        if not math.isfinite(self.road_grade_pct):
            raise ValueError("road grade must be finite")
        if self.fuel not in ("ice", "ev"):
            raise ValueError(f"unknown fuel {self.fuel!r}")


@dataclass(frozen=True)
class EmissionCoefficients:
    idle_rate_gps: float = 0.8
    vsp_slope: float = 0.5            # g/s per kW/ton of positive VSP
    mass_factor: float = 1.1          # rotating-mass correction
    rolling_coeff: float = 0.132      # kW/ton per m/s
    drag_coeff: float = 0.000302      # kW/ton per (m/s)^3
    class_scale: dict = field(default_factory=lambda: {"car": 1.0, "truck_bus": 3.5})
    age_scale: dict = field(default_factory=lambda: {
        "0_5": 0.9, "6_10": 1.0, "11_15": 1.15, "16_plus": 1.3})
    temp_curvature: float = 0.0004    # per degC^2 away from 20 C
    temp_cap: float = 1.3
    humidity_span: float = 0.05       # +-5% across [0, 100] %RH

    def __post_init__(self):
        if not self.idle_rate_gps > 0:
            raise ValueError("idle_rate_gps must be > 0")
        if any(s <= 0 for s in self.class_scale.values()) or any(s <= 0 for s in self.age_scale.values()):
            raise ValueError("class/age scales must be > 0")

    def temp_modifier(self, temperature_c: float) -> float:
        m = 1.0 + self.temp_curvature * (temperature_c - REFERENCE_TEMP_C) ** 2
        return min(m, self.temp_cap)

    def humidity_modifier(self, humidity_pct: float) -> float:
        return 1.0 + self.humidity_span * (humidity_pct - REFERENCE_HUMIDITY) / 50.0

    def to_payload(self) -> dict:
        return {
            "format": COEFFICIENT_FORMAT,
            "version": COEFFICIENT_VERSION,
            "idle_rate_gps": self.idle_rate_gps,
            "vsp_slope": self.vsp_slope,
            "mass_factor": self.mass_factor,
            "rolling_coeff": self.rolling_coeff,
            "drag_coeff": self.drag_coeff,
            "class_scale": dict(self.class_scale),
            "age_scale": dict(self.age_scale),
            "temp_curvature": self.temp_curvature,
            "temp_cap": self.temp_cap,
            "humidity_span": self.humidity_span,
        }

    def sha256(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_payload(), sort_keys=True, separators=(",", ":")).encode()
        ).hexdigest()


def vsp(speed: float, accel: float, grade_pct: float, c: EmissionCoefficients) -> float:
    """Vehicle-specific power in kW/ton:
    v * (mf*a + g*sin(atan(grade/100)) + c_roll) + c_drag * v^3."""
    if speed < 0:
        raise ValueError("speed must be >= 0")
    slope_term = GRAVITY * math.sin(math.atan(grade_pct / 100.0))
    return speed * (c.mass_factor * accel + slope_term + c.rolling_coeff) + c.drag_coeff * speed ** 3


def co2_rate(speed: float, accel: float, ctx: EmissionContext, c: EmissionCoefficients) -> float:
    """Tailpipe CO2 in g/s. Zero for EVs; for combustion vehicles the rate
    never drops below the scaled idle rate (no negative emissions while
    braking)."""
    if ctx.fuel == "ev":
        return 0.0
    try:
        scale = c.class_scale[ctx.vclass] * c.age_scale[ctx.age_band]
    except KeyError as e:
        raise ValueError(f"no emission scale configured for {e.args[0]!r}") from None
    scale *= c.temp_modifier(ctx.temperature_c) * c.humidity_modifier(ctx.humidity_pct)
    power = vsp(speed, accel, ctx.road_grade_pct, c)
    if power < 0.0:
        power = 0.0
    return (c.idle_rate_gps + c.vsp_slope * power) * scale


def vehicle_scale(ctx: EmissionContext, c: EmissionCoefficients) -> float:
    """Static context multiplier, cached per vehicle by the environment.
    Bit-identical to the factor co2_rate applies for ICE vehicles."""
    scale = c.class_scale[ctx.vclass] * c.age_scale[ctx.age_band]
    scale *= c.temp_modifier(ctx.temperature_c) * c.humidity_modifier(ctx.humidity_pct)
    return scale


def save_coefficients(c: EmissionCoefficients, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(c.to_payload(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_coefficients(path) -> EmissionCoefficients:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != COEFFICIENT_FORMAT:
        raise ValueError(f"{path}: not a coefficient file (format={payload.get('format')!r})")
    if payload.get("version") != COEFFICIENT_VERSION:
        raise ValueError(f"{path}: unsupported version {payload.get('version')!r}")
    kwargs = {k: v for k, v in payload.items() if k not in ("format", "version")}
    return EmissionCoefficients(**kwargs)
