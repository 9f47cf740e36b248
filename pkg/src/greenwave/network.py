"""Intersection geometry and fixed-time signal plans.

An intersection is a set of incoming approaches, each a straight road of
`lane_count` parallel lanes ending at a stop line. The signal plan is an
ordered list of phases; during a phase its served approaches see green for
green_s, then yellow for yellow_s, then all-red clearance. Every other
approach sees red for the whole phase. The plan repeats with period cycle_s,
shifted by offset_s.
"""
from __future__ import annotations

from dataclasses import dataclass, field

TURNS = ("left", "straight", "right")

GREEN = "green"
YELLOW = "yellow"
RED = "red"


def default_turn_lane_map(lane_count: int) -> dict[int, tuple[str, ...]]:
    """Lane 0 is leftmost. Single lane serves everything; otherwise the
    leftmost lane serves left+straight, the rightmost straight+right and
    middle lanes straight only."""
    if lane_count < 1:
        raise ValueError("lane_count must be >= 1")
    if lane_count == 1:
        return {0: ("left", "straight", "right")}
    m: dict[int, tuple[str, ...]] = {0: ("left", "straight")}
    for lane in range(1, lane_count - 1):
        m[lane] = ("straight",)
    m[lane_count - 1] = ("straight", "right")
    return m


@dataclass
class Approach:
    lane_count: int
    lane_length: float  # m, entry to stop line
    speed_limit: float  # m/s
    road_grade: float = 0.0  # percent
    turn_lane_map: dict[int, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.lane_count < 1:
            raise ValueError(f"lane_count must be >= 1, got {self.lane_count}")
        if not self.lane_length > 0:
            raise ValueError(f"lane_length must be > 0, got {self.lane_length}")
        if not self.speed_limit > 0:
            raise ValueError(f"speed_limit must be > 0, got {self.speed_limit}")
        if not self.turn_lane_map:
            self.turn_lane_map = default_turn_lane_map(self.lane_count)
        if set(self.turn_lane_map) != set(range(self.lane_count)):
            raise ValueError("turn_lane_map must cover every lane index exactly once")

    def lanes_serving(self, turn: str) -> list[int]:
        return [lane for lane in range(self.lane_count) if turn in self.turn_lane_map[lane]]


@dataclass
class IntersectionTopology:
    approaches: list[Approach]
    # per approach, indices of the phases that serve it
    approach_phases: list[tuple[int, ...]]
    # (approach, turn) -> synthetic exit label; descriptive only
    connections: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.approach_phases) != len(self.approaches):
            raise ValueError("approach_phases must have one entry per approach")
        for i, phases in enumerate(self.approach_phases):
            if len(phases) < 1:
                raise ValueError(f"approach {i} must belong to at least one phase")
        if not self.connections:
            self.connections = {
                (i, turn): f"exit_{i}_{turn}"
                for i in range(len(self.approaches))
                for turn in TURNS
            }


@dataclass
class Phase:
    green_s: float
    yellow_s: float
    red_clearance_s: float
    served_approaches: tuple[int, ...]

    def __post_init__(self):
        if self.green_s <= 0 or self.yellow_s < 0 or self.red_clearance_s < 0:
            raise ValueError("phase durations must be positive green, non-negative yellow/clearance")
        if not self.served_approaches:
            raise ValueError("phase must serve at least one approach")

    @property
    def duration_s(self) -> float:
        return self.green_s + self.yellow_s + self.red_clearance_s


class SignalPlan:
    """Fixed-time plan; precomputes each approach's state segments per cycle."""

    def __init__(self, phases: list[Phase], offset_s: float = 0.0):
        if not phases:
            raise ValueError("plan needs at least one phase")
        self.phases = list(phases)
        self.cycle_s = sum(p.duration_s for p in phases)
        if not 0.0 <= offset_s < self.cycle_s:
            raise ValueError(f"offset_s must be in [0, cycle={self.cycle_s}), got {offset_s}")
        self.offset_s = offset_s
        self._phase_starts = []
        t = 0.0
        for p in phases:
            self._phase_starts.append(t)
            t += p.duration_s
        n_approaches = 1 + max(a for p in phases for a in p.served_approaches)
        # per approach: (green_start, green_end, yellow_end) of each serving phase
        self._windows: list[list[tuple[float, float, float]]] = [[] for _ in range(n_approaches)]
        for start, p in zip(self._phase_starts, phases):
            for a in p.served_approaches:
                self._windows[a].append((start, start + p.green_s, start + p.green_s + p.yellow_s))

    def validate_against(self, topo: IntersectionTopology) -> None:
        """Every approach must be served by exactly the phases the topology lists."""
        for i, expected in enumerate(topo.approach_phases):
            actual = tuple(k for k, p in enumerate(self.phases) if i in p.served_approaches)
            if actual != tuple(sorted(expected)):
                raise ValueError(
                    f"approach {i} served by phases {actual}, topology declares {tuple(sorted(expected))}"
                )

    def _cycle_time(self, clock: float) -> float:
        return (clock + self.offset_s) % self.cycle_s

    def phase_at(self, clock: float) -> tuple[int, float]:
        """(phase index, seconds elapsed inside that phase) at a clock time."""
        u = self._cycle_time(clock)
        for k in range(len(self.phases) - 1, -1, -1):
            if u >= self._phase_starts[k]:
                return k, u - self._phase_starts[k]
        return 0, u

    def state(self, approach: int, clock: float) -> str:
        u = self._cycle_time(clock)
        for g0, g1, y1 in self._windows[approach]:
            if g0 <= u < g1:
                return GREEN
            if g1 <= u < y1:
                return YELLOW
        return RED

    def time_to_change(self, approach: int, clock: float) -> float:
        """Seconds until this approach's signal state next changes."""
        u = self._cycle_time(clock)
        boundaries = []
        for g0, g1, y1 in self._windows[approach]:
            boundaries.extend((g0, g1, y1))
        deltas = [(b - u) % self.cycle_s for b in boundaries]
        deltas = [d for d in deltas if d > 1e-9]
        return min(deltas) if deltas else self.cycle_s

    def next_green_onset(self, approach: int, clock: float) -> float:
        """Seconds until the next green onset; during green this is the
        following cycle's onset."""
        u = self._cycle_time(clock)
        deltas = [(g0 - u) % self.cycle_s for g0, _, _ in self._windows[approach]]
        deltas = [d if d > 1e-9 else self.cycle_s for d in deltas]
        return min(deltas)

    def green_total(self, approach: int) -> float:
        return sum(g1 - g0 for g0, g1, _ in self._windows[approach])
