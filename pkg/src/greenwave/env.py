"""Multi-agent eco-driving environment.

Each controlled vehicle (CV) receives a partial observation and commands a
longitudinal acceleration. Commands pass through a rule-based safety clamp,
the kernel advances one step, and every CV receives a reward decomposed into
a fleet-mean component and an ego component:

    r_i = eta * mean_j(v_j + alpha*[v_j < tau] + beta*e_j)
        + (1 - eta) * (v_i + alpha*[v_i < tau] + beta*e_i)
        + optional comfort / jerk / fleet-TTC terms

with e in grams per step. An episode runs `warmup` human-only steps inside
reset(), then `horizon - warmup` controlled steps.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from .contexts import ContextVector, build_gate, build_plan, build_topology
from .emissions import EmissionCoefficients, EmissionContext, vehicle_scale, vsp
from .idm import LogNormalPopulation
from .kernel import SimConfig, SimState, VehicleState
from .network import GREEN

SENSING_CAP_M = 100.0
AT_INTERSECTION_M = 30.0
EPISODE_FORMAT = "greenwave-episode"

NEIGHBOR_SLOTS = ("same_leader", "same_follower", "left_leader",
                  "left_follower", "right_leader", "right_follower")

# Flat observation layout, one name per scalar. The bridge serves this to
# adapters at runtime; never reorder without bumping the protocol version.
OBS_LAYOUT: tuple[str, ...] = (
    "ego.speed", "ego.dist_to_signal",
    "ego.sig_red", "ego.sig_yellow", "ego.sig_green",
    "ego.phase_time_remaining", "ego.next_green_2nd", "ego.next_green_3rd",
    "ego.loc_approaching", "ego.loc_at", "ego.loc_exiting",
    "ego.lane_index",
    "ego.turn_left", "ego.turn_straight", "ego.turn_right",
) + tuple(
    f"nbr.{slot}.{part}"
    for slot in NEIGHBOR_SLOTS
    for part in ("present", "speed", "rel_dist", "sig_left", "sig_right", "sig_none")
) + (
    "ctx.adoption_level", "ctx.green_s", "ctx.red_s", "ctx.temperature",
    "ctx.humidity", "ctx.fuel_ev", "ctx.lane_count", "ctx.lane_length",
    "ctx.speed_limit",
)

OBS_DIM = len(OBS_LAYOUT)


def layout_descriptor() -> dict:
    return {
        "dimension": OBS_DIM,
        "fields": [{"name": name, "offset": i, "size": 1} for i, name in enumerate(OBS_LAYOUT)],
        "neighbor_sensing_cap_m": SENSING_CAP_M,
    }


@dataclass(slots=True)
class NeighborView:
    present: bool
    speed: float
    rel_dist: float      # magnitude, clipped to the sensing cap
    turn_signal: str     # left / right / none


@dataclass(slots=True)
class EgoView:
    speed: float
    dist_to_signal: float
    signal_state: str
    phase_time_remaining: float
    next_green_2nd: float
    next_green_3rd: float
    location: str        # approaching / at / exiting
    lane_index: int
    turn: str


@dataclass(slots=True)
class ObservedContext:
    adoption_level: float
    green_s: float
    red_s: float
    temperature_c: float
    humidity_pct: float
    fuel_ev: float
    lane_count: int
    lane_length_m: float
    speed_limit_ms: float


@dataclass(slots=True)
class Observation:
    ego: EgoView
    neighbors: dict
    context: ObservedContext

    def flatten(self) -> list[float]:
        e = self.ego
        sig = e.signal_state
        loc = e.location
        out = [
            e.speed, e.dist_to_signal,
            1.0 if sig == "red" else 0.0, 1.0 if sig == "yellow" else 0.0,
            1.0 if sig == "green" else 0.0,
            e.phase_time_remaining, e.next_green_2nd, e.next_green_3rd,
            1.0 if loc == "approaching" else 0.0, 1.0 if loc == "at" else 0.0,
            1.0 if loc == "exiting" else 0.0,
            float(e.lane_index),
            1.0 if e.turn == "left" else 0.0, 1.0 if e.turn == "straight" else 0.0,
            1.0 if e.turn == "right" else 0.0,
        ]
        for slot in NEIGHBOR_SLOTS:
            n = self.neighbors[slot]
            out.extend((
                1.0 if n.present else 0.0, n.speed, n.rel_dist,
                1.0 if n.present and n.turn_signal == "left" else 0.0,
                1.0 if n.present and n.turn_signal == "right" else 0.0,
                1.0 if n.present and n.turn_signal == "none" else 0.0,
            ))
        c = self.context
        out.extend((c.adoption_level, c.green_s, c.red_s, c.temperature_c,
                    c.humidity_pct, c.fuel_ev, float(c.lane_count),
                    c.lane_length_m, c.speed_limit_ms))
        return out


ABSENT = NeighborView(False, 0.0, SENSING_CAP_M, "none")


@dataclass(frozen=True)
class RewardConfig:
    eta: float = 1.0
    stop_penalty: float = -5.0     # applied when speed < stop_threshold
    emission_weight: float = -0.5  # per gram of CO2 emitted this step
    stop_threshold: float = 1.0    # m/s
    comfort_weight: float = 0.0
    jerk_weight: float = 0.0
    ttc_weight: float = 0.0
    ttc_cap_s: float = 20.0

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must be in [0, 1]")
        if not self.stop_threshold > 0:
            raise ValueError("stop_threshold must be > 0")

    def to_payload(self) -> dict:
        return {
            "eta": self.eta, "stop_penalty": self.stop_penalty,
            "emission_weight": self.emission_weight, "stop_threshold": self.stop_threshold,
            "comfort_weight": self.comfort_weight, "jerk_weight": self.jerk_weight,
            "ttc_weight": self.ttc_weight, "ttc_cap_s": self.ttc_cap_s,
        }


@dataclass(frozen=True)
class RewardBreakdown:
    velocity: float
    stop: float
    emission: float
    ego: float
    fleet: float
    comfort: float
    jerk_raw: float      # |a_t - a_{t-1}|, unscaled
    jerk_per_s: float    # jerk_raw / dt
    jerk: float          # weighted contribution
    fleet_ttc: float
    total: float

    def to_payload(self) -> dict:
        return {k: getattr(self, k) for k in (
            "velocity", "stop", "emission", "ego", "fleet", "comfort",
            "jerk_raw", "jerk_per_s", "jerk", "fleet_ttc", "total")}


def comfort_term(accel: float) -> float:
    """Penalty magnitude for acceleration discomfort."""
    return abs(accel)


def jerk_term(accel: float, accel_prev: float, dt: float) -> float:
    """Change of acceleration per unit time, m/s^3."""
    return abs(accel - accel_prev) / dt


def reward(fleet: list[tuple[int, float, float, float, float]], cfg: RewardConfig,
           min_ttc_capped: float, dt: float,
           cv_ids: set[int] | None = None) -> dict[int, RewardBreakdown]:
    """Per-vehicle reward breakdowns from a post-step fleet snapshot.

    fleet rows are (id, speed, emission_g_this_step, accel, accel_prev).
    Returns breakdowns for cv_ids (all vehicles when None).
    """
    if not fleet:
        raise ValueError("reward undefined for an empty fleet")
    terms = {}
    total_term = 0.0
    for vid, speed, e_g, _a, _ap in fleet:
        t = speed + (cfg.stop_penalty if speed < cfg.stop_threshold else 0.0) \
            + cfg.emission_weight * e_g
        terms[vid] = t
        total_term += t
    fleet_mean = total_term / len(fleet)
    ttc_contrib = cfg.ttc_weight * min_ttc_capped
    out: dict[int, RewardBreakdown] = {}
    for vid, speed, e_g, a, a_prev in fleet:
        if cv_ids is not None and vid not in cv_ids:
            continue
        stop = cfg.stop_penalty if speed < cfg.stop_threshold else 0.0
        emission = cfg.emission_weight * e_g
        ego = terms[vid]
        comfort = cfg.comfort_weight * (-comfort_term(a))
        j_raw = abs(a - a_prev)
        j_per_s = j_raw / dt
        jerk = cfg.jerk_weight * (-j_per_s)
        total = cfg.eta * fleet_mean + (1.0 - cfg.eta) * ego + comfort + jerk + ttc_contrib
        out[vid] = RewardBreakdown(speed, stop, emission, ego, fleet_mean, comfort,
                                   j_raw, j_per_s, jerk, ttc_contrib, total)
    return out


def one_step_safe_accel(speed: float, gap: float, leader_speed: float,
                        gap_min: float, braking: float, dt: float) -> float:
    """Largest acceleration a such that, after one clamped step at a, the ego
    can still stop at least gap_min behind the leader's worst-case stop point
    (leader braking at `braking` from now on, ego braking at `braking`
    afterwards). Returns -inf when nothing satisfies the bound; maximal
    braking is then the best response."""
    allowance = gap + leader_speed * leader_speed / (2.0 * braking) - gap_min
    if allowance <= 0.0:
        return -math.inf
    # linear regime (v' = v + a*dt >= 0):
    #   v*dt + a*dt^2/2 + (v + a*dt)^2 / (2*braking) <= allowance
    a2 = dt * dt / (2.0 * braking)
    a1 = 0.5 * dt * dt + speed * dt / braking
    a0 = speed * dt + speed * speed / (2.0 * braking) - allowance
    disc = a1 * a1 - 4.0 * a2 * a0
    stop_now = -speed / dt
    if disc >= 0.0:
        a_root = (-a1 + math.sqrt(disc)) / (2.0 * a2)
        if a_root >= stop_now:
            return a_root
    # stopping regime: the vehicle halts inside the step, moving v*dt/2
    if 0.5 * speed * dt <= allowance:
        return stop_now
    return -math.inf


def safety_clamp(proposed: float, speed: float, gap_min: float,
                 leader: tuple[float, float] | None, line_gap: float | None,
                 accel_min: float, accel_max: float, dt: float) -> float:
    """min(proposed, accel_max, a_safe) then floored at accel_min. leader is
    (gap, leader_speed); line_gap is the distance to an engaged red/yellow
    stop line, treated as a stationary leader. The braking rate both sides
    are assumed capable of is the actuator bound |accel_min|. Total and
    idempotent."""
    a = proposed
    if a > accel_max:
        a = accel_max
    braking = -accel_min
    if leader is not None:
        a_safe = one_step_safe_accel(speed, leader[0], leader[1], gap_min, braking, dt)
        if a > a_safe:
            a = a_safe
    if line_gap is not None:
        a_safe = one_step_safe_accel(speed, line_gap, 0.0, gap_min, braking, dt)
        if a > a_safe:
            a = a_safe
    if a < accel_min:
        a = accel_min
    return a


@dataclass
class EpisodeSpec:
    context: ContextVector
    horizon: int = 1000
    warmup: int = 50
    dt: float = 0.5
    accel_min: float = -4.5
    accel_max: float = 3.0
    reward: RewardConfig = field(default_factory=RewardConfig)
    use_gate: bool = True
    coefficients: EmissionCoefficients = field(default_factory=EmissionCoefficients)
    populations: dict[str, LogNormalPopulation] | None = None

    def sim_config(self) -> SimConfig:
        gate = build_gate(self.context) if self.use_gate else None
        return SimConfig(dt=self.dt, horizon=self.horizon, warmup=self.warmup,
                         accel_min=self.accel_min, accel_max=self.accel_max,
                         spawn_gate=gate)

    def to_payload(self) -> dict:
        return {
            "format": EPISODE_FORMAT, "version": 1,
            "context": self.context.as_record(),
            "horizon": self.horizon, "warmup": self.warmup, "dt": self.dt,
            "accel_min": self.accel_min, "accel_max": self.accel_max,
            "reward": self.reward.to_payload(), "use_gate": self.use_gate,
        }

    @staticmethod
    def from_payload(payload: dict) -> "EpisodeSpec":
        if payload.get("format") != EPISODE_FORMAT:
            raise ValueError(f"not an episode spec (format={payload.get('format')!r})")
        return EpisodeSpec(
            context=ContextVector.from_record(payload["context"]),
            horizon=int(payload.get("horizon", 1000)),
            warmup=int(payload.get("warmup", 50)),
            dt=float(payload.get("dt", 0.5)),
            accel_min=float(payload.get("accel_min", -4.5)),
            accel_max=float(payload.get("accel_max", 3.0)),
            reward=RewardConfig(**payload.get("reward", {})),
            use_gate=bool(payload.get("use_gate", True)),
        )

    @staticmethod
    def load(path) -> "EpisodeSpec":
        with open(path, encoding="utf-8") as fh:
            return EpisodeSpec.from_payload(json.load(fh))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_payload(), fh, indent=2, sort_keys=True)
            fh.write("\n")


class VehicleTrip:
    """Per-vehicle episode accounting used by the evaluator."""

    __slots__ = ("id", "approach", "vclass", "fuel", "age_band", "controlled",
                 "spawn_step", "exit_step", "emission_g")

    def __init__(self, veh: VehicleState):
        self.id = veh.id
        self.approach = veh.approach
        self.vclass = veh.vclass
        self.fuel = veh.fuel
        self.age_band = veh.age_band
        self.controlled = veh.controlled
        self.spawn_step = veh.spawn_step
        self.exit_step: int | None = None
        self.emission_g = 0.0


class EcoDrivingEnv:
    """One episode over one context. Single-threaded; run many instances for
    parallel evaluation."""

    def __init__(self, spec: EpisodeSpec):
        self.spec = spec
        self.coefficients = spec.coefficients
        self.cfg = spec.reward
        self.state: SimState | None = None
        self._trace = None
        self.trips: dict[int, VehicleTrip] = {}
        self._controlled_steps = 0
        self._done = False
        self._throughput = 0
        self._ttc_min = math.inf
        self._sum_abs_a = 0.0
        self._sum_jerk = 0.0
        self._accel_samples = 0
        self._step_rows: list[tuple] = []
        self._topology = build_topology(spec.context)
        self._plan = build_plan(spec.context)
        # approach green/red as actually experienced, for the observed block
        self._approach_green = [self._plan.green_total(i) for i in range(len(self._topology.approaches))]

    # -- lifecycle ------------------------------------------------------------

    def reset(self) -> dict[int, Observation]:
        ctx = self.spec.context
        self.state = SimState(
            self.spec.sim_config(), self._topology, self._plan,
            [ctx.inflow_vph] * len(self._topology.approaches), ctx.seed,
            populations=self.spec.populations,
            adoption_level=ctx.adoption_level, ev_fraction=ctx.ev_fraction,
        )
        self.trips = {}
        self._controlled_steps = 0
        self._done = False
        self._throughput = 0
        self._ttc_min = math.inf
        self._sum_abs_a = 0.0
        self._sum_jerk = 0.0
        self._accel_samples = 0
        self._scales: dict[int, float] = {}
        for _ in range(self.spec.warmup):
            events = self.state.advance({})
            self._account(events, in_warmup=True)
        for vid in self.state.activate_adoption():
            self.trips[vid].controlled = True
        return self.observations()

    def _scale_for(self, trip: VehicleTrip) -> float:
        s = self._scales.get(trip.id)
        if s is None:
            ctx = self.spec.context
            s = vehicle_scale(
                EmissionContext(trip.vclass, "ice", trip.age_band, ctx.temperature_c,
                                ctx.humidity_pct, ctx.road_grade_pct),
                self.coefficients)
            self._scales[trip.id] = s
        return s

    def _account(self, events, in_warmup: bool) -> tuple[float, dict[int, float]]:
        """Track trips and per-step emissions; returns (fleet grams this step,
        grams per vehicle this step)."""
        state = self.state
        coeffs = self.coefficients
        grade = self.spec.context.road_grade_pct
        dt = state.config.dt
        step_g = 0.0
        per_vehicle: dict[int, float] = {}
        if self._trace is not None:
            self._trace.record(state, events)
        for vid in events.spawned_ids:
            self.trips[vid] = VehicleTrip(state.vehicles[vid])
        for vid, (speed, accel) in events.realized.items():
            trip = self.trips.get(vid)
            if trip is None:
                continue
            if trip.fuel == "ice":
                power = vsp(speed, accel, grade, coeffs)
                if power < 0.0:
                    power = 0.0
                e = (coeffs.idle_rate_gps + coeffs.vsp_slope * power) * self._scale_for(trip) * dt
            else:
                e = 0.0
            trip.emission_g += e
            per_vehicle[vid] = e
            step_g += e
        for veh in events.exited:
            trip = self.trips.get(veh.id)
            if trip is not None:
                trip.exit_step = veh.exit_step
                if trip.spawn_step > self.spec.warmup:
                    self._throughput += 1
        if not in_warmup:
            t = state.fleet_min_ttc()
            if t < self._ttc_min:
                self._ttc_min = t
            for vid, (_speed, a) in events.realized.items():
                self._sum_abs_a += abs(a)
                self._sum_jerk += abs(a - events.prev_accel[vid]) / dt
            self._accel_samples += len(events.realized)
        return step_g, per_vehicle

    def attach_trace(self, writer) -> None:
        """Stream every step (warmup included) through a TraceWriter; call
        before reset()."""
        self._trace = writer

    def live_cv_ids(self) -> list[int]:
        return [v.id for v in self.state.vehicles.values() if v.controlled]

    def step(self, actions: dict[int, float | None]):
        """actions: id -> commanded acceleration, or None for 'drive this CV
        with its native IDM this step' (the human-baseline sentinel)."""
        if self._done:
            raise RuntimeError("episode is done; call reset()")
        state = self.state
        live = {v.id for v in state.vehicles.values() if v.controlled}
        warnings = []
        for vid in actions:
            if vid not in live:
                if vid in self.trips:
                    warnings.append(f"action for exited vehicle {vid} ignored")
                else:
                    raise KeyError(f"action for unknown vehicle id {vid}")
        missing = live - set(actions)
        if missing:
            raise KeyError(f"missing action for controlled vehicle id {sorted(missing)[0]}")

        cv_accels: dict[int, float] = {}
        next_clock = state.clock + state.config.dt
        for vid in live:
            a_cmd = actions[vid]
            if a_cmd is None:
                continue  # native IDM via kernel fallback
            veh = state.vehicles[vid]
            cv_accels[vid] = self._clamp_for(veh, float(a_cmd), next_clock)

        events = state.advance(cv_accels)
        step_g, per_vehicle_g = self._account(events, in_warmup=False)

        fleet_rows = []
        for veh in state.vehicles.values():
            moved = events.realized.get(veh.id)
            if moved is None:
                # spawned at the end of this step; present but not yet driven
                fleet_rows.append((veh.id, veh.speed, 0.0, 0.0, 0.0))
            else:
                speed, a = moved
                fleet_rows.append((veh.id, speed, per_vehicle_g[veh.id], a,
                                   events.prev_accel[veh.id]))

        min_ttc_capped = min(state.fleet_min_ttc(), self.cfg.ttc_cap_s)
        cv_now = {v.id for v in state.vehicles.values() if v.controlled}
        rewards = reward(fleet_rows, self.cfg, min_ttc_capped, state.config.dt,
                         cv_ids=cv_now) if fleet_rows else {}

        self._controlled_steps += 1
        if self._controlled_steps >= self.spec.horizon - self.spec.warmup:
            self._done = True

        info = {
            "step": state.step,
            "exited": [v.id for v in events.exited],
            "collisions": events.collisions,
            "lane_changes": events.lane_changes,
            "step_emission_g": step_g,
            "throughput": self._throughput,
            "min_ttc": min_ttc_capped,
            "fleet_size": len(state.vehicles),
            "warnings": warnings,
        }
        return self.observations(), rewards, self._done, info

    def _clamp_for(self, veh: VehicleState, proposed: float, clock: float) -> float:
        state = self.state
        leader = state.leader_of(veh)
        leader_info = None
        if leader is not None:
            leader_info = (leader.pos - veh.pos, leader.speed)
        line_gap = None
        sig = state.plan.state(veh.approach, clock)
        if sig != GREEN and veh.pos < state.stop_line(veh.approach):
            dist = state.stop_line(veh.approach) - veh.pos
            if dist > veh.speed * veh.speed / (2.0 * veh.idm.decel_comf):
                line_gap = dist
        return safety_clamp(proposed, veh.speed, veh.idm.gap_min,
                            leader_info, line_gap,
                            state.config.accel_min, state.config.accel_max,
                            state.config.dt)

    def clamp_action(self, vid: int, proposed: float) -> float:
        """Public clamp entry, evaluated against the upcoming step's signal."""
        veh = self.state.vehicles[vid]
        return self._clamp_for(veh, proposed, self.state.clock + self.state.config.dt)

    def peek_idm_actions(self) -> dict[int, float]:
        """The acceleration each live CV's latent IDM driver would choose for
        the coming step, evaluated at the upcoming clock against current
        occupancy (exact unless a lane change lands this step)."""
        state = self.state
        next_clock = state.clock + state.config.dt
        out = {}
        for veh in state.vehicles.values():
            if veh.controlled:
                sig = state.plan.state(veh.approach, next_clock)
                out[veh.id] = state.idm_accel_for(veh, sig)
        return out

    # -- observations -------------------------------------------------------------

    def observations(self) -> dict[int, Observation]:
        state = self.state
        signal_cache = {}
        out = {}
        for (ap_idx, _lane_idx), lane in state.lanes.items():
            for i, veh in enumerate(lane):
                if veh.controlled:
                    out[veh.id] = self._observe_at(veh, lane, i, signal_cache)
        return out

    def observe(self, vid: int) -> Observation:
        state = self.state
        veh = state.vehicles[vid]
        lane = state.lanes[(veh.approach, veh.lane)]
        return self._observe_at(veh, lane, lane.index(veh), {})

    def _signal_block(self, ap_idx: int, cache: dict):
        """(state, time-to-change, 2nd/3rd-cycle green onsets, context view by
        fuel) for one approach at the current clock; shared by every CV on
        the approach this step."""
        blk = cache.get(ap_idx)
        if blk is None:
            state = self.state
            plan = state.plan
            clock = state.clock
            sig = plan.state(ap_idx, clock)
            onset = plan.next_green_onset(ap_idx, clock)
            cycle = plan.cycle_s
            if sig == GREEN:
                ng2, ng3 = onset, onset + cycle
            else:
                ng2, ng3 = onset + cycle, onset + 2.0 * cycle
            ap = state.topology.approaches[ap_idx]
            green = self._approach_green[ap_idx]
            ctx = self.spec.context
            ctx_views = {}
            for fuel_ev in (0.0, 1.0):
                ctx_views[fuel_ev] = ObservedContext(
                    adoption_level=ctx.adoption_level, green_s=green, red_s=cycle - green,
                    temperature_c=ctx.temperature_c, humidity_pct=ctx.humidity_pct,
                    fuel_ev=fuel_ev, lane_count=ap.lane_count,
                    lane_length_m=ap.lane_length, speed_limit_ms=ap.speed_limit)
            blk = (sig, plan.time_to_change(ap_idx, clock), ng2, ng3,
                   ap.lane_length, ap.lane_count, ctx_views)
            cache[ap_idx] = blk
        return blk

    def _observe_at(self, veh: VehicleState, lane_list: list, i: int,
                    signal_cache: dict) -> Observation:
        state = self.state
        ap_idx = veh.approach
        sig, t_change, ng2, ng3, stop_line, lane_count, ctx_views = \
            self._signal_block(ap_idx, signal_cache)
        dist = stop_line - veh.pos
        if dist < 0.0:
            loc = "exiting"
        elif dist <= AT_INTERSECTION_M:
            loc = "at"
        else:
            loc = "approaching"
        ego = EgoView(veh.speed, dist, sig, t_change, ng2, ng3, loc, veh.lane, veh.turn)

        neighbors = {
            "same_leader": _view(lane_list[i + 1], veh) if i + 1 < len(lane_list) else ABSENT,
            "same_follower": _view(lane_list[i - 1], veh) if i > 0 else ABSENT,
        }
        for side, delta in (("left", -1), ("right", 1)):
            lane_idx = veh.lane + delta
            lead, foll = ABSENT, ABSENT
            if 0 <= lane_idx < lane_count:
                other = state.lanes[(ap_idx, lane_idx)]
                lead_veh, foll_veh = _bracket(other, veh.pos)
                if lead_veh is not None:
                    lead = _view(lead_veh, veh)
                if foll_veh is not None:
                    foll = _view(foll_veh, veh)
            neighbors[f"{side}_leader"] = lead
            neighbors[f"{side}_follower"] = foll

        return Observation(ego, neighbors, ctx_views[1.0 if veh.fuel == "ev" else 0.0])

    # -- episode accounting ----------------------------------------------------------

    @property
    def done(self) -> bool:
        return self._done

    def episode_log(self) -> dict:
        """Raw per-vehicle trips plus fleet aggregates for the evaluator."""
        n = self._accel_samples
        return {
            "trips": dict(self.trips),
            "throughput": self._throughput,
            "min_ttc": self._ttc_min,
            "mean_abs_accel": self._sum_abs_a / n if n else 0.0,
            "mean_jerk": self._sum_jerk / n if n else 0.0,
            "steps": self.state.step if self.state else 0,
            "dt": self.spec.dt,
            "warmup": self.spec.warmup,
            "horizon": self.spec.horizon,
            "spawned": self.state.spawned if self.state else 0,
            "exited": self.state.exited if self.state else 0,
        }


def _view(other: VehicleState, ego: VehicleState) -> NeighborView:
    d = other.pos - ego.pos
    if d < 0.0:
        d = -d
    if d > SENSING_CAP_M:
        return ABSENT
    signal = "none" if other.turn == "straight" else other.turn
    return NeighborView(True, other.speed, d, signal)


def _bracket(lane_list: list[VehicleState], pos: float):
    """(nearest vehicle at/ahead of pos, nearest behind pos) in a lane."""
    lead = None
    foll = None
    for v in lane_list:
        if v.pos >= pos:
            lead = v
            break
        foll = v
    return lead, foll
