"""Discrete-time microscopic simulation kernel.

Fixed timestep dt. Per step, in this order: signal clocks advance, rule-based
lane changes, human accelerations via IDM (red/yellow signals act as a
stationary virtual leader at the stop line), controlled-vehicle accelerations
as commanded, clamped speed update with trapezoidal displacement, exits,
Poisson arrivals. Collisions (negative gaps) are detected and reported as
faults, never resolved silently.

Vehicles are points; gaps are position differences and the jam gap absorbs
physical extent. Positions run from 0 (entry) to lane_length (stop line) and
on through a fixed exit zone, after which vehicles leave the simulation.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

from . import rng as rngmod
from .idm import IdmParams, LogNormalPopulation, default_populations, desired_gap, idm_acceleration
from .network import GREEN, IntersectionTopology, SignalPlan

EXIT_ZONE_M = 50.0     # travel past the stop line before removal
ENTRY_MARGIN_M = 7.0   # clear space required at the lane entry to release a spawn
DEFAULT_TRUCK_FRACTION = 0.08
TURN_PROBS = {"left": 0.15, "straight": 0.70, "right": 0.15}
AGE_BANDS = ("0_5", "6_10", "11_15", "16_plus")


@dataclass(frozen=True)
class GateSpec:
    """Virtual upstream signal gating arrivals, standing in for the nearest
    one-hop intersection. Arrivals queue while the gate is red."""

    green_s: float
    red_s: float
    offset_s: float = 0.0

    def is_open(self, clock: float) -> bool:
        cycle = self.green_s + self.red_s
        return (clock - self.offset_s) % cycle < self.green_s


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.5
    horizon: int = 1000
    warmup: int = 50
    accel_min: float = -4.5
    accel_max: float = 3.0
    spawn_gate: GateSpec | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not 0 <= self.warmup < self.horizon:
            raise ValueError("need 0 <= warmup < horizon")
        if not (self.accel_min < 0.0 < self.accel_max):
            raise ValueError("accel bounds must straddle zero")


class VehicleState:
    """Mutable per-vehicle record. Slots keep the hot loop lean."""

    __slots__ = (
        "id", "vclass", "fuel", "age_band", "controlled", "adopt_flag",
        "approach", "lane", "pos", "speed", "accel_prev", "turn",
        "idm", "spawn_step", "exit_step",
    )

    def __init__(self, vid: int, vclass: str, fuel: str, age_band: str, turn: str,
                 idm: IdmParams, adopt_flag: bool, approach: int):
        self.id = vid
        self.vclass = vclass
        self.fuel = fuel
        self.age_band = age_band
        self.controlled = False
        self.adopt_flag = adopt_flag
        self.approach = approach
        self.lane = -1
        self.pos = 0.0
        self.speed = 0.0
        self.accel_prev = 0.0
        self.turn = turn
        self.idm = idm
        self.spawn_step = -1
        self.exit_step: int | None = None


@dataclass
class StepEvents:
    step: int
    spawned_ids: list[int]
    exited: list[VehicleState]
    collisions: list[tuple[int, int]]
    lane_changes: list[tuple[int, int, int]]
    # id -> (speed after update, realized accel) for every vehicle alive this step
    realized: dict[int, tuple[float, float]]
    # id -> previous step's realized accel, for jerk accounting
    prev_accel: dict[int, float]


def poisson_arrivals(inflow_vph: float, dt: float, rng) -> int:
    """Arrival count for one step of one approach: Poisson(inflow*dt/3600)."""
    if inflow_vph < 0:
        raise ValueError("inflow must be >= 0")
    if inflow_vph == 0.0:
        return 0
    return int(rng.poisson(inflow_vph * dt / 3600.0))


def equilibrium_entry_speed(gap: float, leader_speed: float, p: IdmParams, speed_limit: float) -> float:
    """Largest speed v with s*(v, v - v_leader) <= gap, clamped to the lane
    limit and the driver's own target. Spawning near equilibrium keeps
    warmup short and avoids artificial shockwaves at the entry."""
    v_cap = min(speed_limit, p.v_desired)
    if gap == math.inf:
        return v_cap
    if gap <= p.gap_min:
        return 0.0
    # s0 + vT + v(v - vl)/(2c) = gap  ->  quadratic in v
    c2 = 2.0 * math.sqrt(p.accel_max * p.decel_comf)
    a = 1.0 / c2
    b = p.headway_time - leader_speed / c2
    c0 = p.gap_min - gap
    disc = b * b - 4.0 * a * c0
    if disc <= 0.0:
        return 0.0
    v = (-b + math.sqrt(disc)) / (2.0 * a)
    return max(0.0, min(v_cap, v))


class SimState:
    """Complete world state for one scenario. Single-threaded by design;
    independent instances may run in parallel."""

    def __init__(self, config: SimConfig, topology: IntersectionTopology, plan: SignalPlan,
                 inflows_vph: list[float], seed: int,
                 populations: dict[str, LogNormalPopulation] | None = None,
                 adoption_level: float = 0.0, ev_fraction: float = 0.0,
                 truck_fraction: float = DEFAULT_TRUCK_FRACTION):
        plan.validate_against(topology)
        if len(inflows_vph) != len(topology.approaches):
            raise ValueError("one inflow per approach required")
        if not 0.0 <= adoption_level <= 1.0:
            raise ValueError("adoption_level must be in [0, 1]")
        self.config = config
        self.topology = topology
        self.plan = plan
        self.inflows_vph = [float(x) for x in inflows_vph]
        self.seed = int(seed)
        self.populations = populations if populations is not None else default_populations()
        self.adoption_level = float(adoption_level)
        self.ev_fraction = float(ev_fraction)
        self.truck_fraction = float(truck_fraction)

        self.step = 0
        self.clock = 0.0
        self.vehicles: dict[int, VehicleState] = {}
        self.lanes: dict[tuple[int, int], list[VehicleState]] = {}
        for ai, ap in enumerate(topology.approaches):
            for lane in range(ap.lane_count):
                self.lanes[(ai, lane)] = []
        self.pending: list[deque[VehicleState]] = [deque() for _ in topology.approaches]
        self.spawned = 0
        self.exited = 0
        self.next_id = 0
        # controlled flags stay dormant until the warmup boundary
        self.adoption_active = False

        self._rng_arrivals = [rngmod.stream(self.seed, rngmod.STREAM_ARRIVALS, ai)
                              for ai in range(len(topology.approaches))]
        self._rng_drivers = rngmod.stream(self.seed, rngmod.STREAM_DRIVERS)
        self._rng_adoption = rngmod.stream(self.seed, rngmod.STREAM_ADOPTION)

    # -- construction helpers -------------------------------------------------

    def _draw_vehicle(self, approach: int) -> VehicleState:
        rd = self._rng_drivers
        vclass = "truck_bus" if rd.random() < self.truck_fraction else "car"
        fuel = "ev" if rd.random() < self.ev_fraction else "ice"
        age_band = AGE_BANDS[int(rd.integers(0, len(AGE_BANDS)))]
        u = rd.random()
        if u < TURN_PROBS["left"]:
            turn = "left"
        elif u < TURN_PROBS["left"] + TURN_PROBS["straight"]:
            turn = "straight"
        else:
            turn = "right"
        params = self.populations[vclass].draw(rd)
        limit = self.topology.approaches[approach].speed_limit
        if params.v_desired > limit:
            # drivers cap their free-flow target at the posted limit
            params = IdmParams(limit, params.gap_min, params.headway_time,
                               params.accel_max, params.decel_comf, params.accel_exp)
        adopt = bool(self._rng_adoption.random() < self.adoption_level)
        veh = VehicleState(self.next_id, vclass, fuel, age_band, turn, params, adopt, approach)
        self.next_id += 1
        return veh

    def activate_adoption(self) -> list[int]:
        """Flip pre-drawn adoption flags live; called once at the warmup
        boundary. Returns the ids now controlled."""
        self.adoption_active = True
        out = []
        for veh in self.vehicles.values():
            if veh.adopt_flag:
                veh.controlled = True
                out.append(veh.id)
        return out

    # -- queries ---------------------------------------------------------------

    def stop_line(self, approach: int) -> float:
        return self.topology.approaches[approach].lane_length

    def total_length(self, approach: int) -> float:
        return self.topology.approaches[approach].lane_length + EXIT_ZONE_M

    def leader_of(self, veh: VehicleState) -> VehicleState | None:
        lane = self.lanes[(veh.approach, veh.lane)]
        i = lane.index(veh)
        return lane[i + 1] if i + 1 < len(lane) else None

    def fleet_min_ttc(self, cap: float = math.inf) -> float:
        best = math.inf
        for lane in self.lanes.values():
            for i in range(len(lane) - 1):
                f, l = lane[i], lane[i + 1]
                closing = f.speed - l.speed
                if closing > 0.0:
                    t = (l.pos - f.pos) / closing
                    if t < best:
                        best = t
        return min(best, cap)

    def check_invariants(self) -> None:
        assert self.spawned == self.exited + len(self.vehicles), "conservation violated"
        for (ai, li), lane in self.lanes.items():
            for i, veh in enumerate(lane):
                assert veh.speed >= 0.0, f"negative speed on vehicle {veh.id}"
                assert veh.approach == ai and veh.lane == li
                if i + 1 < len(lane):
                    assert lane[i + 1].pos - veh.pos >= 0.0, "ordering violated"

    # -- stop-line rule ----------------------------------------------------------

    def _stopline_engaged(self, veh: VehicleState, sig_state: str) -> bool:
        if sig_state == GREEN:
            return False
        dist = self.stop_line(veh.approach) - veh.pos
        if dist <= 0.0:
            return False  # committed past the line
        # dilemma-zone rule: hold only if a comfortable stop still fits
        return dist > veh.speed * veh.speed / (2.0 * veh.idm.decel_comf)

    def idm_accel_for(self, veh: VehicleState, sig_state: str) -> float:
        """Stage-3 human acceleration: IDM against the current leader, and
        against the stop line as a stationary leader when engaged."""
        leader = self.leader_of(veh)
        if leader is not None:
            gap = leader.pos - veh.pos
            if gap <= 0.0:
                gap = 1e-6  # overlapped pair (fault in flight); brake hard
            a = idm_acceleration(veh.speed, gap, veh.speed - leader.speed, veh.idm)
        else:
            a = idm_acceleration(veh.speed, math.inf, 0.0, veh.idm)
        if self._stopline_engaged(veh, sig_state):
            gap_line = self.stop_line(veh.approach) - veh.pos
            a_line = idm_acceleration(veh.speed, gap_line, veh.speed, veh.idm)
            if a_line < a:
                a = a_line
        return a

    # -- lane changes -------------------------------------------------------------

    def lane_change_step(self) -> list[tuple[int, int, int]]:
        """Intention-driven, one lane per step toward the nearest lane serving
        the vehicle's turn; accepted only when both the new-leader and
        new-follower gaps meet the respective follower's desired gap.
        Deterministic: vehicles are processed in id order."""
        events = []
        for veh in list(self.vehicles.values()):
            ap = self.topology.approaches[veh.approach]
            if ap.lane_count == 1 or veh.pos >= ap.lane_length:
                continue
            allowed = ap.turn_lane_map[veh.lane]
            if veh.turn in allowed:
                continue
            serving = ap.lanes_serving(veh.turn)
            if not serving:
                continue
            target = min(serving, key=lambda l: (abs(l - veh.lane), l))
            step_dir = 1 if target > veh.lane else -1
            new_lane = veh.lane + step_dir
            dest = self.lanes[(veh.approach, new_lane)]
            # insertion point by position
            idx = 0
            while idx < len(dest) and dest[idx].pos < veh.pos:
                idx += 1
            leader = dest[idx] if idx < len(dest) else None
            follower = dest[idx - 1] if idx > 0 else None
            if leader is not None:
                gap = leader.pos - veh.pos
                if gap < desired_gap(veh.speed, veh.speed - leader.speed, veh.idm):
                    continue
            if follower is not None:
                gap = veh.pos - follower.pos
                if gap < desired_gap(follower.speed, follower.speed - veh.speed, follower.idm):
                    continue
            src = self.lanes[(veh.approach, veh.lane)]
            src.remove(veh)
            dest.insert(idx, veh)
            events.append((veh.id, veh.lane, new_lane))
            veh.lane = new_lane
        return events

    # -- arrivals -------------------------------------------------------------------

    def spawn_arrivals(self, approach: int) -> int:
        """Draw this step's Poisson arrivals for an approach into its pending
        queue. Attribute draws happen here, at arrival, so paired runs with
        shared seeds see identical vehicle populations regardless of how
        congestion delays release."""
        n = poisson_arrivals(self.inflows_vph[approach], self.config.dt, self._rng_arrivals[approach])
        for _ in range(n):
            self.pending[approach].append(self._draw_vehicle(approach))
        return n

    def _release_pending(self, approach: int) -> list[int]:
        released = []
        gate = self.config.spawn_gate
        if gate is not None and not gate.is_open(self.clock):
            return released
        ap = self.topology.approaches[approach]
        queue = self.pending[approach]
        while queue:
            best_lane = -1
            best_count = -1
            for lane in range(ap.lane_count):
                occ = self.lanes[(approach, lane)]
                if occ and occ[0].pos < ENTRY_MARGIN_M:
                    continue
                if best_lane < 0 or len(occ) < best_count:
                    best_lane = lane
                    best_count = len(occ)
            if best_lane < 0:
                break
            veh = queue.popleft()
            occ = self.lanes[(approach, best_lane)]
            leader = occ[0] if occ else None
            if leader is not None:
                veh.speed = equilibrium_entry_speed(leader.pos, leader.speed, veh.idm, ap.speed_limit)
            else:
                veh.speed = equilibrium_entry_speed(math.inf, 0.0, veh.idm, ap.speed_limit)
            veh.lane = best_lane
            veh.pos = 0.0
            veh.spawn_step = self.step
            veh.controlled = bool(self.adoption_active and veh.adopt_flag)
            occ.insert(0, veh)
            self.vehicles[veh.id] = veh
            self.spawned += 1
            released.append(veh.id)
        return released

    # -- main step --------------------------------------------------------------------

    def advance(self, cv_accels: dict[int, float]) -> StepEvents:
        """One simulation step. Controlled vehicles take their commanded
        acceleration from cv_accels; a controlled vehicle missing from the
        map falls back to its native IDM for this step (the environment layer
        decides whether that is allowed)."""
        dt = self.config.dt
        self.step += 1
        self.clock = self.step * dt

        changes = self.lane_change_step()

        sig_states = [self.plan.state(ai, self.clock) for ai in range(len(self.topology.approaches))]

        # hot loop: inline IDM with the exact expression shapes of idm.py so
        # results stay bit-identical with the scalar functions
        accels: list[tuple[VehicleState, float]] = []
        sqrt = math.sqrt
        for lane_key, lane in self.lanes.items():
            approach = lane_key[0]
            sig = sig_states[approach]
            green = sig == GREEN
            stop_line = self.topology.approaches[approach].lane_length
            n = len(lane)
            for i in range(n):
                veh = lane[i]
                if veh.controlled and veh.id in cv_accels:
                    a = cv_accels[veh.id]
                    if not math.isfinite(a):
                        raise ValueError(f"non-finite commanded acceleration for vehicle {veh.id}")
                    accels.append((veh, a))
                    continue
                p = veh.idm
                v = veh.speed
                free = (v / p.v_desired) ** p.accel_exp
                if i + 1 < n:
                    leader = lane[i + 1]
                    gap = leader.pos - veh.pos
                    if gap <= 0.0:
                        gap = 1e-6  # overlapped pair (fault in flight); brake hard
                    dynamic = v * p.headway_time + v * (v - leader.speed) / (
                        2.0 * sqrt(p.accel_max * p.decel_comf))
                    if dynamic < 0.0:
                        dynamic = 0.0
                    ratio = (p.gap_min + dynamic) / gap
                    a = p.accel_max * (1.0 - free - ratio * ratio)
                else:
                    a = p.accel_max * (1.0 - free)
                if not green and veh.pos < stop_line:
                    dist = stop_line - veh.pos
                    if dist > v * v / (2.0 * p.decel_comf):
                        dynamic = v * p.headway_time + v * v / (
                            2.0 * sqrt(p.accel_max * p.decel_comf))
                        if dynamic < 0.0:
                            dynamic = 0.0
                        ratio = (p.gap_min + dynamic) / dist
                        a_line = p.accel_max * (1.0 - free - ratio * ratio)
                        if a_line < a:
                            a = a_line
                accels.append((veh, a))

        realized: dict[int, tuple[float, float]] = {}
        prev_accel: dict[int, float] = {}
        for veh, a in accels:
            v_old = veh.speed
            v_new = v_old + a * dt
            if v_new < 0.0:
                v_new = 0.0
            veh.pos += 0.5 * (v_old + v_new) * dt
            a_real = (v_new - v_old) / dt
            veh.speed = v_new
            prev_accel[veh.id] = veh.accel_prev
            veh.accel_prev = a_real
            realized[veh.id] = (v_new, a_real)

        collisions: list[tuple[int, int]] = []
        exited: list[VehicleState] = []
        for lane_key, lane in self.lanes.items():
            for i in range(len(lane) - 1):
                if lane[i + 1].pos - lane[i].pos < 0.0:
                    collisions.append((lane[i].id, lane[i + 1].id))
            total = self.total_length(lane_key[0])
            while lane and lane[-1].pos >= total:
                veh = lane.pop()
                veh.exit_step = self.step
                del self.vehicles[veh.id]
                self.exited += 1
                exited.append(veh)

        spawned_ids: list[int] = []
        for ai in range(len(self.topology.approaches)):
            self.spawn_arrivals(ai)
            spawned_ids.extend(self._release_pending(ai))

        return StepEvents(self.step, spawned_ids, exited, collisions, changes,
                          realized, prev_accel)


TRACE_FIELDS = ("scenario_id", "step", "vehicle_id", "approach", "lane", "pos_m",
                "speed_ms", "accel_ms2", "signal_state", "leader_gap_m", "leader_speed_ms")


class TraceWriter:
    """Per-step, per-vehicle structured text export. One CSV row per vehicle
    per step in the documented field order; leader columns are blank for
    free-flow vehicles so calibration can ingest the same file."""

    def __init__(self, fh, scenario_id: str):
        self.fh = fh
        self.scenario_id = scenario_id
        fh.write(",".join(TRACE_FIELDS) + "\n")

    def record(self, state: SimState, events: StepEvents) -> None:
        rows = []
        for lane_key, lane in state.lanes.items():
            sig = state.plan.state(lane_key[0], state.clock)
            for i, veh in enumerate(lane):
                # vehicles spawned at the end of this step have not driven yet
                speed, accel = events.realized.get(veh.id, (veh.speed, 0.0))
                if i + 1 < len(lane):
                    leader = lane[i + 1]
                    lg = repr(leader.pos - veh.pos)
                    ls = repr(leader.speed)
                else:
                    lg = ""
                    ls = ""
                rows.append(
                    f"{self.scenario_id},{events.step},{veh.id},{lane_key[0]},{lane_key[1]},"
                    f"{veh.pos!r},{speed!r},{accel!r},{sig},{lg},{ls}\n"
                )
        self.fh.writelines(rows)
