"""Reference controllers for evaluation.

A controller maps per-CV observations to accelerations each step. The value
None is the human-baseline sentinel: the kernel drives that vehicle with its
own latent IDM for the step, which reproduces the all-human rollout bit for
bit. All other commands pass through the safety clamp.
"""
from __future__ import annotations

from . import rng as rngmod
from .env import EcoDrivingEnv, Observation
from .idm import IdmParams, idm_acceleration

_NOMINAL = IdmParams(v_desired=30.0, gap_min=2.0, headway_time=1.2,
                     accel_max=1.5, decel_comf=2.0)


class Controller:
    name = "controller"

    def begin_episode(self, env: EcoDrivingEnv) -> None:
        self.env = env

    def act(self, obs: dict[int, Observation]) -> dict[int, float | None]:
        raise NotImplementedError


class HumanBaselineController(Controller):
    """Every CV yields to its latent IDM driver; the paired-run baseline."""

    name = "baseline"

    def act(self, obs):
        return {vid: None for vid in obs}


class IdmMimicController(Controller):
    """Feeds each CV the explicit IDM acceleration of its own state. Equal to
    the baseline up to lane-change timing; exact on single-lane contexts."""

    name = "idm-mimic"

    def act(self, obs):
        idm = self.env.peek_idm_actions()
        return {vid: idm[vid] for vid in obs}


class GlideToGreenController(Controller):
    """Paces each CV to reach the stop line as the signal turns green: on red
    the target speed is distance / time-to-green, on green the speed limit.
    Tracking is proportional (smooth), a nominal car-following term keeps a
    polite distance to the leader, and the env's safety clamp remains the
    hard backstop."""

    name = "glide"
    gain = 0.4           # 1/s toward the target speed
    accel_soft = 0.8     # comfortable command band, m/s^2
    decel_soft = 1.5
    cruise_scale = 0.9   # eco cruise below the posted limit

    def begin_episode(self, env):
        super().begin_episode(env)
        self.dt = env.spec.dt
        self.a_min = env.spec.accel_min
        self.a_max = env.spec.accel_max

    def target_speed(self, o: Observation) -> float:
        cruise = self.cruise_scale * o.context.speed_limit_ms
        if o.ego.signal_state == "green" or o.ego.location == "exiting":
            return cruise
        cycle = o.context.green_s + o.context.red_s
        t_green = o.ego.next_green_2nd - cycle
        if t_green <= self.dt:
            return cruise
        return min(cruise, max(0.0, o.ego.dist_to_signal / t_green))

    def act(self, obs):
        out = {}
        for vid, o in obs.items():
            a = self.gain * (self.target_speed(o) - o.ego.speed)
            lead = o.neighbors["same_leader"]
            if lead.present:
                # nominal IDM toward the leader, with polite shared constants
                p = _NOMINAL
                gap = max(lead.rel_dist, 0.1)
                a_follow = idm_acceleration(o.ego.speed, gap,
                                            o.ego.speed - lead.speed, p)
                a = min(a, a_follow)
            a = min(self.accel_soft, max(-self.decel_soft, a))
            out[vid] = min(self.a_max, max(self.a_min, a))
        return out


class RandomController(Controller):
    """Uniform bounded accelerations; the safety clamp is the only thing
    standing between these commands and a collision."""

    name = "random"

    def __init__(self, salt: int = 0):
        self.salt = salt

    def begin_episode(self, env):
        super().begin_episode(env)
        self.a_min = env.spec.accel_min
        self.a_max = env.spec.accel_max
        self._rng = rngmod.stream(env.spec.context.seed, rngmod.STREAM_ACTIONS, self.salt)

    def act(self, obs):
        span = self.a_max - self.a_min
        return {vid: self.a_min + span * float(self._rng.random()) for vid in sorted(obs)}


class ThrottledController(Controller):
    """Deliberately caps CV speed well below the limit, strangling throughput;
    exists to exercise the benefit-zeroing rule."""

    name = "throttle"

    def __init__(self, speed_fraction: float = 0.35):
        self.speed_fraction = speed_fraction

    def begin_episode(self, env):
        super().begin_episode(env)
        self.dt = env.spec.dt
        self.a_min = env.spec.accel_min
        self.a_max = env.spec.accel_max

    def act(self, obs):
        out = {}
        for vid, o in obs.items():
            cap = self.speed_fraction * o.context.speed_limit_ms
            a = (cap - o.ego.speed) / self.dt
            out[vid] = min(self.a_max, max(self.a_min, a))
        return out


_REGISTRY = {
    "baseline": HumanBaselineController,
    "idm-mimic": IdmMimicController,
    "glide": GlideToGreenController,
    "random": RandomController,
    "throttle": ThrottledController,
}


def make(name: str) -> Controller:
    try:
        return _REGISTRY[name]()
    except KeyError:
        raise ValueError(f"unknown controller {name!r}; have {sorted(_REGISTRY)}") from None


def available() -> list[str]:
    return sorted(_REGISTRY)
