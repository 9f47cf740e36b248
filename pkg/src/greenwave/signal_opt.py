"""Exhaustive fixed-time signal plan search.

Candidates are evaluated by short all-human simulations sharing one seed so
the comparison is fair; the winner minimizes average vehicle delay. The full
per-candidate audit is returned so the optimality certificate can be
re-checked from the emitted log.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

from .contexts import ContextVector, build_plan, build_topology
from .kernel import SimConfig, SimState
from .network import IntersectionTopology, SignalPlan


@dataclass
class CandidateResult:
    index: int
    cycle_s: float
    splits: tuple[float, ...]   # per-phase green seconds
    avg_delay_s: float

    def to_payload(self) -> dict:
        return {"index": self.index, "cycle_s": self.cycle_s,
                "splits": list(self.splits), "avg_delay_s": self.avg_delay_s}


def estimate_delay(topology: IntersectionTopology, plan: SignalPlan, inflows: list[float],
                   seed: int, steps: int = 400, dt: float = 0.5, populations=None) -> float:
    """Average vehicle delay (travel beyond free-flow time) over a short
    all-human rollout; vehicles still en route are censored at the end."""
    config = SimConfig(dt=dt, horizon=steps + 1, warmup=0)
    state = SimState(config, topology, plan, inflows, seed, populations=populations)
    finished: list[float] = []
    for _ in range(steps):
        events = state.advance({})
        for veh in events.exited:
            total_len = state.total_length(veh.approach)
            free = total_len / state.topology.approaches[veh.approach].speed_limit
            finished.append(max(0.0, (veh.exit_step - veh.spawn_step) * dt - free))
    for veh in state.vehicles.values():
        total_len = state.total_length(veh.approach)
        free = total_len / state.topology.approaches[veh.approach].speed_limit
        finished.append(max(0.0, (state.step - veh.spawn_step) * dt - free))
    return sum(finished) / len(finished) if finished else 0.0


def optimize_signal_plan(topology: IntersectionTopology, inflows: list[float],
                         candidates: list[SignalPlan], seed: int = 0,
                         steps: int = 400, populations=None
                         ) -> tuple[SignalPlan, list[CandidateResult]]:
    """Returns the delay-minimizing candidate plus the audit log. Ties break
    toward the smaller cycle, then lexicographically smaller green splits."""
    if not candidates:
        raise ValueError("candidate grid is empty")
    audit = []
    for i, plan in enumerate(candidates):
        delay = estimate_delay(topology, plan, inflows, seed, steps, populations=populations)
        splits = tuple(p.green_s for p in plan.phases)
        audit.append(CandidateResult(i, plan.cycle_s, splits, delay))
    best = min(audit, key=lambda r: (r.avg_delay_s, r.cycle_s, r.splits))
    return candidates[best.index], audit


def context_plan_grid(ctx: ContextVector, n_points: int = 7,
                      min_green_s: float = 8.0) -> tuple[list[ContextVector], list[SignalPlan]]:
    """Green-split grid holding the cycle fixed at the context's green+red.
    Returns matched context variants and their plans."""
    cycle = ctx.green_s + ctx.red_s
    min_red = 2 * 5.0 + 1.0 if ctx.phase_count == 2 else 3.0 + 1.0
    lo = min_green_s
    hi = cycle - min_red - (1.0 if ctx.phase_count == 1 else 0.0)
    if hi <= lo:
        raise ValueError("cycle too short for a split grid")
    variants = []
    plans = []
    for k in range(n_points):
        g = lo + (hi - lo) * k / max(1, n_points - 1)
        v = replace(ctx, green_s=g, red_s=cycle - g)
        variants.append(v)
        plans.append(build_plan(v))
    return variants, plans


def optimize_context_plan(ctx: ContextVector, n_points: int = 7, seed: int = 0,
                          steps: int = 400) -> tuple[ContextVector, list[CandidateResult]]:
    """Context-level wrapper: searches green splits for the context's cycle
    and returns the tuned context plus the audit."""
    variants, plans = context_plan_grid(ctx, n_points)
    topo = build_topology(ctx)
    inflows = [ctx.inflow_vph] * len(topo.approaches)
    best_plan, audit = optimize_signal_plan(topo, inflows, plans, seed=seed, steps=steps)
    winner = min(audit, key=lambda r: (r.avg_delay_s, r.cycle_s, r.splits))
    return variants[winner.index], audit
