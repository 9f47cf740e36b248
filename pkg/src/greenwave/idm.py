"""Car-following equations: IDM acceleration, desired gap, speed update, TTC.

These are the scalar laws every human-driven vehicle obeys. They are kept
free of simulator state so tests can evaluate them directly against hand
arithmetic and so the calibration module can reuse the exact same forms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

INFINITE_GAP = math.inf


@dataclass(frozen=True)
class IdmParams:
    """One driver's car-following parameters.

    v_desired: free-flow target speed (m/s)
    gap_min: standstill jam gap (m)
    headway_time: desired time headway (s)
    accel_max: maximum acceleration (m/s^2)
    decel_comf: comfortable braking deceleration, positive (m/s^2)
    accel_exp: free-flow exponent (dimensionless)
    """

    v_desired: float
    gap_min: float
    headway_time: float
    accel_max: float
    decel_comf: float
    accel_exp: float = 4.0

    def __post_init__(self):
        for name in ("v_desired", "gap_min", "headway_time", "accel_max", "decel_comf"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"IdmParams.{name} must be finite and > 0, got {v!r}")
        if not self.accel_exp >= 1:
            raise ValueError(f"IdmParams.accel_exp must be >= 1, got {self.accel_exp!r}")

    def as_vector(self) -> list[float]:
        """[v_desired, gap_min, headway_time, accel_max, decel_comf] ordering used by calibration."""
        return [self.v_desired, self.gap_min, self.headway_time, self.accel_max, self.decel_comf]


def desired_gap(ego_speed: float, speed_delta: float, p: IdmParams) -> float:
    """Desired dynamic gap s*(v, dv) = s0 + max(0, v*T + v*dv / (2*sqrt(a*b))).

    speed_delta is ego speed minus leader speed (positive when closing).
    """
    if not (math.isfinite(ego_speed) and math.isfinite(speed_delta)):
        raise ValueError("desired_gap: non-finite input")
    dynamic = ego_speed * p.headway_time + ego_speed * speed_delta / (
        2.0 * math.sqrt(p.accel_max * p.decel_comf)
    )
    if dynamic < 0.0:
        dynamic = 0.0
    return p.gap_min + dynamic


def idm_acceleration(ego_speed: float, gap: float, speed_delta: float, p: IdmParams) -> float:
    """IDM acceleration a = a_max * [1 - (v/v0)^delta - (s*/s)^2].

    gap may be math.inf for an empty road ahead, which zeroes the
    interaction term. Any other non-finite input is rejected.
    """
    if not math.isfinite(ego_speed) or ego_speed < 0.0:
        raise ValueError(f"idm_acceleration: ego_speed must be finite and >= 0, got {ego_speed!r}")
    if not math.isfinite(speed_delta):
        raise ValueError("idm_acceleration: speed_delta must be finite")
    free = (ego_speed / p.v_desired) ** p.accel_exp
    if gap == INFINITE_GAP:
        interaction = 0.0
    else:
        if not math.isfinite(gap) or gap <= 0.0:
            raise ValueError(f"idm_acceleration: gap must be positive or infinite, got {gap!r}")
        ratio = desired_gap(ego_speed, speed_delta, p) / gap
        interaction = ratio * ratio
    return p.accel_max * (1.0 - free - interaction)


def speed_update(speed: float, accel: float, dt: float) -> float:
    """Next speed max(0, v + a*dt); speeds never go negative."""
    if dt <= 0.0:
        raise ValueError("speed_update: dt must be > 0")
    v = speed + accel * dt
    return v if v > 0.0 else 0.0


def displacement(speed_old: float, speed_new: float, dt: float) -> float:
    """Trapezoidal advance, exact for piecewise-constant acceleration."""
    return 0.5 * (speed_old + speed_new) * dt


def ttc(gap: float, closing_speed: float) -> float:
    """Time to collision gap/closing, infinite when the pair is not closing."""
    if gap < 0.0:
        raise ValueError("ttc: gap must be >= 0")
    if closing_speed > 0.0:
        return gap / closing_speed
    return math.inf


# Shipped driver population defaults (log-normal around these means) used when
# no calibrated posterior is supplied. Means follow the calibration prior's
# centers for cars; the heavy class is slower with longer gaps.
CAR_PARAM_MEANS = (15.0, 2.0, 1.5, 1.5, 2.0)
TRUCK_BUS_PARAM_MEANS = (12.0, 3.0, 2.0, 1.0, 1.5)
DEFAULT_POPULATION_SIGMA = 0.1


class LogNormalPopulation:
    """Draws per-driver IdmParams with log-normal spread around fixed means."""

    def __init__(self, means=CAR_PARAM_MEANS, sigma: float = DEFAULT_POPULATION_SIGMA, accel_exp: float = 4.0):
        self.means = tuple(float(m) for m in means)
        self.sigma = float(sigma)
        self.accel_exp = float(accel_exp)
        if any(m <= 0 for m in self.means):
            raise ValueError("population means must be positive")

    def draw(self, rng) -> IdmParams:
        z = rng.standard_normal(5)
        vals = [m * math.exp(self.sigma * float(zi)) for m, zi in zip(self.means, z)]
        return IdmParams(vals[0], vals[1], vals[2], vals[3], vals[4], self.accel_exp)


def default_populations() -> dict[str, LogNormalPopulation]:
    return {
        "car": LogNormalPopulation(CAR_PARAM_MEANS),
        "truck_bus": LogNormalPopulation(TRUCK_BUS_PARAM_MEANS),
    }
