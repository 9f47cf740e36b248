"""Signal plan timing semantics: states, periodicity, onsets, validation."""
import pytest

from greenwave.network import (Approach, IntersectionTopology, Phase, SignalPlan,
                               default_turn_lane_map)


def two_phase_plan(offset=0.0) -> SignalPlan:
    return SignalPlan([
        Phase(25.0, 3.0, 2.0, (0, 1)),
        Phase(20.0, 3.0, 2.0, (2, 3)),
    ], offset_s=offset)


def test_cycle_is_sum_of_phase_durations():
    plan = two_phase_plan()
    assert plan.cycle_s == pytest.approx(55.0)


def test_state_sequence_within_cycle():
    plan = two_phase_plan()
    # approach 0: green [0,25), yellow [25,28), red [28,55)
    assert plan.state(0, 0.0) == "green"
    assert plan.state(0, 24.999) == "green"
    assert plan.state(0, 25.5) == "yellow"
    assert plan.state(0, 28.0) == "red"
    assert plan.state(0, 54.9) == "red"
    # approach 2: red during phase 1, green [30, 50)
    assert plan.state(2, 10.0) == "red"
    assert plan.state(2, 30.0) == "green"
    assert plan.state(2, 49.9) == "green"
    assert plan.state(2, 50.5) == "yellow"


def test_periodicity_with_offset():
    plan = two_phase_plan(offset=7.0)
    for approach in range(4):
        for t in (0.0, 3.3, 12.0, 27.9, 41.0, 54.0):
            s0 = plan.state(approach, t)
            for k in (1, 2, 5):
                assert plan.state(approach, t + k * plan.cycle_s) == s0


def test_offset_shifts_timeline():
    base = two_phase_plan(offset=0.0)
    shifted = two_phase_plan(offset=10.0)
    for t in (0.0, 5.0, 20.0, 33.0):
        assert shifted.state(0, t) == base.state(0, t + 10.0)


def test_next_green_onset_and_time_to_change():
    plan = two_phase_plan()
    # during approach-0 red at t=30, green onset is at 55
    assert plan.next_green_onset(0, 30.0) == pytest.approx(25.0)
    # during its green at t=10, the next onset is one cycle on
    assert plan.next_green_onset(0, 10.0) == pytest.approx(45.0)
    # state change out of green happens at 25
    assert plan.time_to_change(0, 10.0) == pytest.approx(15.0)
    assert plan.time_to_change(0, 26.0) == pytest.approx(2.0)  # yellow ends at 28


def test_phase_at_tracks_elapsed():
    plan = two_phase_plan()
    idx, elapsed = plan.phase_at(3.0)
    assert idx == 0 and elapsed == pytest.approx(3.0)
    idx, elapsed = plan.phase_at(31.0)
    assert idx == 1 and elapsed == pytest.approx(1.0)


def test_plan_topology_validation():
    topo = IntersectionTopology(
        [Approach(1, 100.0, 15.0) for _ in range(4)],
        [(0,), (0,), (1,), (1,)])
    two_phase_plan().validate_against(topo)  # consistent
    bad = IntersectionTopology(
        [Approach(1, 100.0, 15.0) for _ in range(4)],
        [(0,), (1,), (1,), (0,)])
    with pytest.raises(ValueError, match="approach 1"):
        two_phase_plan().validate_against(bad)


def test_offset_bounds_enforced():
    with pytest.raises(ValueError):
        two_phase_plan(offset=55.0)
    with pytest.raises(ValueError):
        two_phase_plan(offset=-1.0)


def test_topology_invariants():
    with pytest.raises(ValueError):
        Approach(0, 100.0, 15.0)
    with pytest.raises(ValueError):
        Approach(1, -5.0, 15.0)
    with pytest.raises(ValueError):
        IntersectionTopology([Approach(1, 100.0, 15.0)], [()])


def test_default_turn_lane_maps():
    assert default_turn_lane_map(1) == {0: ("left", "straight", "right")}
    m3 = default_turn_lane_map(3)
    assert m3[0] == ("left", "straight")
    assert m3[1] == ("straight",)
    assert m3[2] == ("straight", "right")
