"""Environment: observations, safety clamp, Eq-style reward decomposition,
episode lifecycle, and action-path equivalence with the pure-IDM rollout."""
import math

import pytest

from conftest import make_context
from greenwave import rng as rngmod
from greenwave.env import (OBS_DIM, OBS_LAYOUT, EcoDrivingEnv, EpisodeSpec,
                           RewardConfig, comfort_term, jerk_term, layout_descriptor,
                           one_step_safe_accel, reward, safety_clamp)

DT = 0.5
BOUNDS = (-4.5, 3.0)


def make_env(**ctx_overrides) -> EcoDrivingEnv:
    defaults = dict(adoption_level=0.5, inflow_vph=400.0)
    defaults.update(ctx_overrides)
    ctx = make_context(**defaults)
    return EcoDrivingEnv(EpisodeSpec(context=ctx, horizon=200, warmup=50))


# -- reset -----------------------------------------------------------------------

def test_reset_clock_after_warmup():
    env = make_env()
    env.reset()
    assert env.state.clock == pytest.approx(25.0)   # 50 steps at 0.5 s


def test_reset_with_zero_adoption_has_no_agents():
    env = make_env(adoption_level=0.0)
    assert env.reset() == {}


def test_reset_deterministic():
    env1, env2 = make_env(), make_env()
    obs1 = {k: o.flatten() for k, o in env1.reset().items()}
    obs2 = {k: o.flatten() for k, o in env2.reset().items()}
    assert obs1 == obs2
    # and re-reset of the same instance matches too
    obs3 = {k: o.flatten() for k, o in env1.reset().items()}
    assert obs1 == obs3


# -- observation layout -------------------------------------------------------------

def test_layout_dimension_and_uniqueness():
    assert len(OBS_LAYOUT) == OBS_DIM == 60
    assert len(set(OBS_LAYOUT)) == OBS_DIM
    desc = layout_descriptor()
    assert desc["dimension"] == OBS_DIM
    assert [f["name"] for f in desc["fields"]] == list(OBS_LAYOUT)
    assert [f["offset"] for f in desc["fields"]] == list(range(OBS_DIM))


def test_flattened_observation_matches_layout():
    env = make_env(adoption_level=1.0)
    obs = env.reset()
    assert obs, "expected live agents"
    for o in obs.values():
        flat = o.flatten()
        assert len(flat) == OBS_DIM
        assert all(isinstance(x, float) for x in flat)
        named = dict(zip(OBS_LAYOUT, flat))
        # one-hot groups are exactly one-hot
        assert named["ego.sig_red"] + named["ego.sig_yellow"] + named["ego.sig_green"] == 1.0
        assert named["ego.loc_approaching"] + named["ego.loc_at"] + named["ego.loc_exiting"] == 1.0
        assert named["ego.turn_left"] + named["ego.turn_straight"] + named["ego.turn_right"] == 1.0
        assert named["ctx.lane_count"] == 1.0
        assert named["ctx.green_s"] + named["ctx.red_s"] == pytest.approx(50.0)


def test_observation_completeness_against_required_symbols():
    """Every reward symbol and observed-state item lives in exactly one field."""
    layout = set(OBS_LAYOUT)
    required_obs = {
        "ego.speed", "ego.dist_to_signal", "ego.phase_time_remaining",
        "ego.next_green_2nd", "ego.next_green_3rd", "ego.lane_index",
        "ctx.adoption_level", "ctx.green_s", "ctx.red_s", "ctx.temperature",
        "ctx.humidity", "ctx.fuel_ev", "ctx.lane_count", "ctx.lane_length",
        "ctx.speed_limit",
    }
    assert required_obs <= layout
    for slot in ("same_leader", "same_follower", "left_leader", "left_follower",
                 "right_leader", "right_follower"):
        for part in ("present", "speed", "rel_dist"):
            assert f"nbr.{slot}.{part}" in layout
    # reward-side symbols: eta, alpha, beta, tau in the config; v/stop/e terms in
    # the breakdown; fleet and ego components split out
    cfg_fields = set(RewardConfig().to_payload())
    assert {"eta", "stop_penalty", "emission_weight", "stop_threshold"} <= cfg_fields
    from greenwave.env import RewardBreakdown
    br_fields = set(RewardBreakdown(0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0).to_payload())
    assert {"velocity", "stop", "emission", "fleet", "ego", "total"} <= br_fields


def test_neighbor_sentinel_encoding():
    env = make_env(adoption_level=1.0, inflow_vph=50.0)
    obs = env.reset()
    saw_absent = False
    for o in obs.values():
        for slot, n in o.neighbors.items():
            if not n.present:
                saw_absent = True
                assert n.speed == 0.0 and n.rel_dist == 100.0
    assert saw_absent


# -- safety clamp -------------------------------------------------------------------

def test_clamp_inactive_cases():
    # free road, green, inside bounds: unchanged
    assert safety_clamp(1.2, 10.0, 2.0, None, None, *BOUNDS, DT) == 1.2
    # above the hard bound: cut to it when safe
    assert safety_clamp(9.0, 10.0, 2.0, None, None, *BOUNDS, DT) == 3.0
    assert safety_clamp(-9.0, 10.0, 2.0, None, None, *BOUNDS, DT) == -4.5


def test_clamp_near_leader_brakes_and_keeps_gap():
    # ego 15 m/s, leader stationary 10 m ahead: a braking value comes back
    a = safety_clamp(2.0, 15.0, 2.0, (10.0, 0.0), None, *BOUNDS, DT)
    assert a < 0.0
    v_new = max(0.0, 15.0 + a * DT)
    ego_dx = 0.5 * (15.0 + v_new) * DT
    assert 10.0 - ego_dx >= 2.0 - 1e-9 or a == BOUNDS[0]


def test_clamp_close_leader_equal_speed():
    # commanded +3 with a leader 2 m ahead at equal speed: strictly less
    a = safety_clamp(3.0, 10.0, 2.0, (2.0, 10.0), None, *BOUNDS, DT)
    assert a < 3.0


def test_clamp_bound_closed_form():
    """Oracle: after one step at the returned a, the ego's remaining stopping
    distance still fits inside the leader's worst-case stop point minus the
    jam gap."""
    braking = 4.5
    rng = rngmod.stream(31, 5)
    checked = 0
    for _ in range(500):
        v = 20.0 * float(rng.random())
        gap = 1.0 + 60.0 * float(rng.random())
        vl = 20.0 * float(rng.random())
        gmin = 1.0 + 2.0 * float(rng.random())
        a = one_step_safe_accel(v, gap, vl, gmin, braking, DT)
        if not math.isfinite(a):
            continue
        checked += 1
        v_new = max(0.0, v + a * DT)
        ego_dx = 0.5 * (v + v_new) * DT
        ego_stop = v_new * v_new / (2.0 * braking)
        lead_stop = vl * vl / (2.0 * braking)
        assert ego_dx + ego_stop <= gap + lead_stop - gmin + 1e-7
    assert checked > 200


def test_clamp_bound_is_tight():
    # a slightly larger acceleration violates the stopping-distance oracle
    braking = 4.5
    a = one_step_safe_accel(12.0, 25.0, 6.0, 2.0, braking, DT)
    assert math.isfinite(a)
    for bump in (1e-3, 1e-2):
        v_new = max(0.0, 12.0 + (a + bump) * DT)
        ego_dx = 0.5 * (12.0 + v_new) * DT
        assert ego_dx + v_new**2 / (2 * braking) > 25.0 + 36.0 / (2 * braking) - 2.0


def test_clamp_idempotent():
    rng = rngmod.stream(32, 5)
    for _ in range(500):
        v = 20.0 * float(rng.random())
        proposed = -6.0 + 12.0 * float(rng.random())
        leader = (0.5 + 40.0 * float(rng.random()), 15.0 * float(rng.random()))
        line = 1.0 + 100.0 * float(rng.random())
        once = safety_clamp(proposed, v, 2.0, leader, line, *BOUNDS, DT)
        twice = safety_clamp(once, v, 2.0, leader, line, *BOUNDS, DT)
        assert twice == once


def test_clamp_red_line_treated_as_stationary_leader():
    a_line = safety_clamp(3.0, 12.0, 2.0, None, 8.0, *BOUNDS, DT)
    a_lead = safety_clamp(3.0, 12.0, 2.0, (8.0, 0.0), None, *BOUNDS, DT)
    assert a_line == a_lead


# -- reward ---------------------------------------------------------------------------

CFG0 = RewardConfig(eta=0.0, stop_penalty=-5.0, emission_weight=-0.5, stop_threshold=1.0)


def test_worked_numeric_example_eta_zero():
    # v=10 (not stopped), e=2 g: 10 + 0 - 1 = 9.0
    rows = [(7, 10.0, 2.0, 0.0, 0.0)]
    out = reward(rows, CFG0, min_ttc_capped=20.0, dt=DT)
    assert out[7].total == pytest.approx(9.0, abs=1e-12)
    assert out[7].velocity == 10.0 and out[7].stop == 0.0
    assert out[7].emission == pytest.approx(-1.0)


def test_stop_penalty_applies_below_threshold():
    rows = [(1, 0.5, 0.0, 0.0, 0.0)]
    out = reward(rows, CFG0, 20.0, DT)
    assert out[1].stop == -5.0
    assert out[1].total == pytest.approx(0.5 - 5.0)


def test_single_vehicle_total_independent_of_eta():
    rows = [(3, 7.0, 1.2, 0.4, 0.1)]
    totals = set()
    for eta in (0.0, 0.25, 0.5, 1.0):
        cfg = RewardConfig(eta=eta)
        totals.add(round(reward(rows, cfg, 20.0, DT)[3].total, 12))
    assert len(totals) == 1


def test_eta_one_gives_common_fleet_total():
    rows = [(1, 5.0, 1.0, 0.0, 0.0), (2, 12.0, 3.0, 0.0, 0.0)]
    cfg = RewardConfig(eta=1.0)
    out = reward(rows, cfg, 20.0, DT, cv_ids={1, 2})
    assert out[1].total == pytest.approx(out[2].total, abs=1e-12)
    assert out[1].total == pytest.approx(out[1].fleet, abs=1e-12)


def test_eta_affinity_midpoint_identity():
    rows = [(1, 5.0, 1.0, 0.6, 0.2), (2, 12.0, 3.0, -0.4, 0.0), (3, 0.2, 0.4, 0.0, 0.0)]
    kw = dict(stop_penalty=-5.0, emission_weight=-0.5, stop_threshold=1.0,
              comfort_weight=0.3, jerk_weight=0.2, ttc_weight=0.1)
    r0 = reward(rows, RewardConfig(eta=0.0, **kw), 14.0, DT)
    r1 = reward(rows, RewardConfig(eta=1.0, **kw), 14.0, DT)
    rh = reward(rows, RewardConfig(eta=0.5, **kw), 14.0, DT)
    for vid in (1, 2, 3):
        assert rh[vid].total == pytest.approx(0.5 * (r0[vid].total + r1[vid].total), abs=1e-12)


def test_total_decomposition_identity():
    rows = [(1, 5.0, 1.0, 0.6, 0.2), (2, 12.0, 3.0, -0.4, 0.0)]
    cfg = RewardConfig(eta=0.3, comfort_weight=0.5, jerk_weight=0.25, ttc_weight=0.05)
    out = reward(rows, cfg, 11.0, DT)
    for br in out.values():
        recomposed = (cfg.eta * br.fleet + (1 - cfg.eta) * br.ego
                      + br.comfort + br.jerk + br.fleet_ttc)
        assert br.total == pytest.approx(recomposed, abs=1e-12)


def test_reward_empty_fleet_errors():
    with pytest.raises(ValueError, match="empty fleet"):
        reward([], CFG0, 20.0, DT)


def test_extra_term_examples():
    assert comfort_term(0.0) == 0.0
    assert comfort_term(-2.0) == 2.0
    assert jerk_term(1.0, -0.5, DT) == pytest.approx(3.0)  # |1 -(-0.5)|/0.5
    # all pairs opening: fleet ttc term equals the cap
    env = make_env(adoption_level=1.0, inflow_vph=120.0)
    env.reset()
    assert env.state.fleet_min_ttc(cap=20.0) <= 20.0


# -- step semantics ----------------------------------------------------------------------

def test_pure_idm_rollout_with_no_cvs():
    env = make_env(adoption_level=0.0)
    env.reset()
    obs, rewards, done, info = env.step({})
    assert obs == {} and rewards == {}
    assert info["fleet_size"] >= 0


def test_unknown_action_id_raises_with_id():
    env = make_env(adoption_level=1.0)
    env.reset()
    with pytest.raises(KeyError, match="999999"):
        actions = {vid: None for vid in env.live_cv_ids()}
        actions[999999] = 0.0
        env.step(actions)


def test_missing_action_raises():
    env = make_env(adoption_level=1.0)
    env.reset()
    live = env.live_cv_ids()
    assert live
    actions = {vid: None for vid in live[1:]}
    with pytest.raises(KeyError, match=str(live[0])):
        env.step(actions)


def test_action_for_exited_vehicle_warns():
    env = make_env(adoption_level=1.0)
    env.reset()
    exited = []
    done = False
    obs = env.observations()
    while not done and not exited:
        acts = {vid: None for vid in env.live_cv_ids()}
        obs, _r, done, info = env.step(acts)
        exited = [vid for vid in info["exited"] if vid in env.trips and env.trips[vid].controlled]
    if exited:
        acts = {vid: None for vid in env.live_cv_ids()}
        acts[exited[0]] = 1.0
        _o, _r, _d, info = env.step(acts)
        assert any(str(exited[0]) in w for w in info["warnings"])


def test_commanded_accel_within_bounds_realized_exactly():
    ctx = make_context(adoption_level=1.0, inflow_vph=0.0, lane_length_m=5000.0,
                       green_s=1000.0, red_s=11.0, seed=5)
    env = EcoDrivingEnv(EpisodeSpec(context=ctx, horizon=400, warmup=0))
    env.reset()
    from conftest import inject
    from greenwave.idm import IdmParams
    veh = inject(env.state, 100.0, 5.0, IdmParams(15, 2, 1.5, 1.5, 2.0), controlled=True)
    env.trips[veh.id] = __import__("greenwave.env", fromlist=["VehicleTrip"]).VehicleTrip(veh)
    obs, rewards, done, info = env.step({veh.id: 1.0})
    assert veh.speed == pytest.approx(5.5, abs=1e-12)   # realized == commanded
    assert rewards[veh.id].velocity == pytest.approx(5.5)


def test_done_after_horizon_minus_warmup_steps():
    env = make_env()
    env.reset()
    steps = 0
    done = False
    while not done:
        _o, _r, done, _i = env.step({vid: None for vid in env.live_cv_ids()})
        steps += 1
    assert steps == 200 - 50


# -- IDM-mimic equivalence -----------------------------------------------------------------

def test_explicit_idm_actions_reproduce_all_human_rollout_single_lane():
    """Feeding each CV its own IDM acceleration matches the sentinel (native
    IDM) rollout to 1e-9 on a single-lane context, step by step."""
    ctx = make_context(adoption_level=1.0, inflow_vph=350.0, lane_count=1,
                       phase_count=1, seed=424242)
    env_a = EcoDrivingEnv(EpisodeSpec(context=ctx, horizon=300, warmup=50))
    env_b = EcoDrivingEnv(EpisodeSpec(context=ctx, horizon=300, warmup=50))
    env_a.reset()
    env_b.reset()
    done_a = done_b = False
    while not (done_a or done_b):
        acts_a = {vid: None for vid in env_a.live_cv_ids()}
        idm = env_b.peek_idm_actions()
        _oa, _ra, done_a, _ia = env_a.step(acts_a)
        _ob, _rb, done_b, _ib = env_b.step(idm)
        va = {v.id: (v.pos, v.speed) for v in env_a.state.vehicles.values()}
        vb = {v.id: (v.pos, v.speed) for v in env_b.state.vehicles.values()}
        assert va.keys() == vb.keys()
        for vid in va:
            assert va[vid][0] == pytest.approx(vb[vid][0], abs=1e-9)
            assert va[vid][1] == pytest.approx(vb[vid][1], abs=1e-9)
    assert done_a and done_b


def test_safety_rollout_has_no_collisions_random_actions():
    ctx = make_context(adoption_level=0.7, inflow_vph=550.0, lane_count=2,
                       phase_count=2, seed=777)
    env = EcoDrivingEnv(EpisodeSpec(context=ctx, horizon=300, warmup=50))
    env.reset()
    rng = rngmod.stream(1001, 5)
    done = False
    while not done:
        acts = {}
        for vid in env.live_cv_ids():
            acts[vid] = env.clamp_action(vid, -4.5 + 7.5 * float(rng.random()))
        _o, _r, done, info = env.step(acts)
        assert info["collisions"] == []
