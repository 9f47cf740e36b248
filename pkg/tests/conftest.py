"""Shared fixtures and scenario builders for the test suite."""
from __future__ import annotations

import pytest

from greenwave.contexts import ContextVector
from greenwave.idm import IdmParams
from greenwave.kernel import SimConfig, SimState, VehicleState
from greenwave.network import Approach, IntersectionTopology, Phase, SignalPlan


def make_context(**overrides) -> ContextVector:
    base = dict(
        scenario_id="test-ctx", seed=1234, lane_count=1, phase_count=1,
        lane_length_m=300.0, speed_limit_ms=15.0, green_s=25.0, red_s=25.0,
        signal_offset_s=2.0, inflow_vph=300.0, road_grade_pct=0.0,
        temperature_c=20.0, humidity_pct=50.0, ev_fraction=0.0, adoption_level=0.5,
    )
    base.update(overrides)
    return ContextVector(**base)


def single_lane_state(lane_length=500.0, speed_limit=15.0, inflow=0.0, seed=7,
                      phase=None, dt=0.5, horizon=100000, gate=None) -> SimState:
    """One approach, one lane, permanently green unless a phase is given."""
    topo = IntersectionTopology([Approach(1, lane_length, speed_limit)], [(0,)])
    plan = SignalPlan([phase or Phase(1e6, 0.0, 0.0, (0,))])
    cfg = SimConfig(dt=dt, horizon=horizon, warmup=0, spawn_gate=gate)
    return SimState(cfg, topo, plan, [inflow], seed)


def inject(state: SimState, pos: float, speed: float, p: IdmParams,
           approach=0, lane=0, turn="straight", controlled=False) -> VehicleState:
    """Place a vehicle directly, keeping lane ordering and counters honest."""
    veh = VehicleState(state.next_id, "car", "ice", "6_10", turn, p, controlled, approach)
    state.next_id += 1
    veh.lane = lane
    veh.pos = pos
    veh.speed = speed
    veh.spawn_step = state.step
    veh.controlled = controlled
    occ = state.lanes[(approach, lane)]
    idx = 0
    while idx < len(occ) and occ[idx].pos < pos:
        idx += 1
    occ.insert(idx, veh)
    state.vehicles[veh.id] = veh
    state.spawned += 1
    return veh


@pytest.fixture
def idm_params() -> IdmParams:
    return IdmParams(v_desired=15.0, gap_min=2.0, headway_time=1.5,
                     accel_max=1.5, decel_comf=2.0, accel_exp=4.0)
