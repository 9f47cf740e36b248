"""Metrics and protocol runner.

Episodes are scored by per-vehicle per-step CO2 (grams) and throughput
(post-warmup entrants that completed their trip). A policy is compared to the
human-driving baseline on paired seeds: the same context, arrival stream and
driver population, differing only in CV control. If the policy reduces
throughput, its emission benefit is zeroed.
"""
from __future__ import annotations

import concurrent.futures
import hashlib
import json
import math
from dataclasses import dataclass, field

from . import controllers as controllers_mod
from . import rng as rngmod
from .contexts import CmdpSpec, ContextVector, reseed, split_systematicity
from .emissions import EmissionCoefficients
from .env import EcoDrivingEnv, EpisodeSpec, RewardConfig


@dataclass
class EpisodeMetrics:
    """Aggregates for one episode; only vehicles that entered after warmup
    count toward emissions, travel times and throughput."""

    context_id: str
    seed: int
    n_approaches: int
    steps: int
    dt: float
    # post-warmup entrants (censored trips included)
    vehicle_emission_g: dict = field(default_factory=dict)   # id -> grams
    vehicle_travel_s: dict = field(default_factory=dict)     # id -> seconds (censored at end)
    vehicle_steps: dict = field(default_factory=dict)        # id -> steps present
    vehicle_approach: dict = field(default_factory=dict)
    vehicle_completed: dict = field(default_factory=dict)    # id -> bool
    throughput: int = 0
    spawned: int = 0
    min_ttc_s: float = math.inf
    mean_abs_accel: float = 0.0
    mean_jerk: float = 0.0

    @property
    def fleet_emission_g(self) -> float:
        return sum(self.vehicle_emission_g.values())

    def emission_per_vehicle_g(self, approach: int | None = None) -> float:
        """Average total grams per completed trip; the headline emission
        metric (the objective is total exhaust emissions, so a faster trip
        must never be penalized for packing them into fewer steps)."""
        tot_g = 0.0
        n = 0
        for vid, g in self.vehicle_emission_g.items():
            if not self.vehicle_completed[vid]:
                continue
            if approach is not None and self.vehicle_approach[vid] != approach:
                continue
            tot_g += g
            n += 1
        if n == 0:
            raise ValueError("no completed trips in scope; cannot form the emission metric")
        return tot_g / n

    def emission_per_vehicle_step(self, approach: int | None = None) -> float:
        """Average grams per vehicle per step; secondary normalization kept
        for cross-episode comparability."""
        tot_g = 0.0
        tot_steps = 0
        for vid, g in self.vehicle_emission_g.items():
            if approach is not None and self.vehicle_approach[vid] != approach:
                continue
            tot_g += g
            tot_steps += self.vehicle_steps[vid]
        if tot_steps == 0:
            raise ValueError("no counted vehicle steps; cannot form the emission metric")
        return tot_g / tot_steps

    def throughput_for(self, approach: int | None = None) -> int:
        if approach is None:
            return self.throughput
        return sum(1 for vid, done in self.vehicle_completed.items()
                   if done and self.vehicle_approach[vid] == approach)


def episode_cost(metrics: EpisodeMetrics, lam: float) -> float:
    """Scalar objective: total grams plus lam times total travel seconds over
    post-warmup entrants (travel censored at the horizon for unfinished
    trips)."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    total_e = sum(metrics.vehicle_emission_g.values())
    total_t = sum(metrics.vehicle_travel_s.values())
    return total_e + lam * total_t


def run_episode(spec: EpisodeSpec, controller) -> EpisodeMetrics:
    env = EcoDrivingEnv(spec)
    controller.begin_episode(env)
    obs = env.reset()
    done = env.done
    while not done:
        actions = controller.act(obs)
        obs, _rewards, done, _info = env.step(actions)
    return metrics_from_env(env)


def metrics_from_env(env: EcoDrivingEnv) -> EpisodeMetrics:
    log = env.episode_log()
    spec = env.spec
    m = EpisodeMetrics(
        context_id=spec.context.scenario_id, seed=spec.context.seed,
        n_approaches=2 * spec.context.phase_count,
        steps=log["steps"], dt=log["dt"],
        throughput=log["throughput"], spawned=log["spawned"],
        min_ttc_s=log["min_ttc"], mean_abs_accel=log["mean_abs_accel"],
        mean_jerk=log["mean_jerk"],
    )
    horizon = spec.horizon
    for vid, trip in log["trips"].items():
        if trip.spawn_step <= spec.warmup:
            continue
        end = trip.exit_step if trip.exit_step is not None else horizon
        m.vehicle_emission_g[vid] = trip.emission_g
        m.vehicle_travel_s[vid] = (end - trip.spawn_step) * log["dt"]
        m.vehicle_steps[vid] = end - trip.spawn_step
        m.vehicle_approach[vid] = trip.approach
        m.vehicle_completed[vid] = trip.exit_step is not None
    return m


@dataclass
class BenefitRecord:
    context_id: str
    scope: str                    # "intersection" or "approach_<i>"
    emission_benefit_pct: float
    throughput_change_pct: float
    zeroed: bool
    seeds: list[int]

    def __post_init__(self):
        if self.zeroed and self.emission_benefit_pct != 0.0:
            raise ValueError("zeroed record must carry 0% emission benefit")
        if not (math.isfinite(self.emission_benefit_pct) and math.isfinite(self.throughput_change_pct)):
            raise ValueError("benefit percentages must be finite")

    def to_payload(self) -> dict:
        return {"context_id": self.context_id, "scope": self.scope,
                "emission_benefit_pct": self.emission_benefit_pct,
                "throughput_change_pct": self.throughput_change_pct,
                "zeroed": self.zeroed, "seeds": list(self.seeds)}


def _benefit(base_e: float, pol_e: float, base_t: float, pol_t: float) -> tuple[float, float, bool]:
    if base_e <= 0.0:
        raise ValueError("baseline emission is zero; benefit undefined "
                         "(all-EV contexts are excluded from emission campaigns)")
    emission = 100.0 * (base_e - pol_e) / base_e
    if base_t > 0:
        thr = 100.0 * (pol_t - base_t) / base_t
    else:
        thr = 0.0 if pol_t == 0 else 100.0
    zeroed = pol_t < base_t
    if zeroed:
        emission = 0.0
    return emission, thr, zeroed


def benefits(policy: EpisodeMetrics, baseline: EpisodeMetrics) -> list[BenefitRecord]:
    """Paired benefit records: one intersection-level record plus one per
    approach. Each record's zeroing reflects its own scope's throughput."""
    if policy.context_id != baseline.context_id or policy.seed != baseline.seed:
        raise ValueError("benefits require paired runs of one context and seed")
    records = []
    e, t, z = _benefit(baseline.emission_per_vehicle_g(), policy.emission_per_vehicle_g(),
                       baseline.throughput_for(), policy.throughput_for())
    seeds = [policy.seed]
    records.append(BenefitRecord(policy.context_id, "intersection", e, t, z, seeds))
    for a in range(policy.n_approaches):
        try:
            base_e = baseline.emission_per_vehicle_g(a)
            pol_e = policy.emission_per_vehicle_g(a)
        except ValueError:
            continue  # empty approach in the window; skipped, counted as such
        e, t, z = _benefit(base_e, pol_e, baseline.throughput_for(a), policy.throughput_for(a))
        records.append(BenefitRecord(policy.context_id, f"approach_{a}", e, t, z, seeds))
    return records


def averaged_benefits(policies: list[EpisodeMetrics], baselines: list[EpisodeMetrics],
                      context_id: str) -> list[BenefitRecord]:
    """Seed-averaged pairing: metrics are averaged across paired seeds first,
    then one record per scope is emitted."""
    if len(policies) != len(baselines) or not policies:
        raise ValueError("need equal non-empty paired metric lists")
    seeds = sorted(p.seed for p in policies)
    n_appr = policies[0].n_approaches

    def avg(vals):
        return sum(vals) / len(vals)

    records = []
    e, t, z = _benefit(
        avg([b.emission_per_vehicle_g() for b in baselines]),
        avg([p.emission_per_vehicle_g() for p in policies]),
        avg([b.throughput_for() for b in baselines]),
        avg([p.throughput_for() for p in policies]))
    records.append(BenefitRecord(context_id, "intersection", e, t, z, seeds))
    for a in range(n_appr):
        try:
            be = avg([b.emission_per_vehicle_g(a) for b in baselines])
            pe = avg([p.emission_per_vehicle_g(a) for p in policies])
        except ValueError:
            continue
        e, t, z = _benefit(be, pe,
                           avg([b.throughput_for(a) for b in baselines]),
                           avg([p.throughput_for(a) for p in policies]))
        records.append(BenefitRecord(context_id, f"approach_{a}", e, t, z, seeds))
    return records


def histogram(values: list[float], bin_width: float = 5.0) -> list[tuple[float, float, int]]:
    """(bin_low, bin_high, count) rows covering the observed range; bin edges
    are aligned multiples of the width."""
    if not values:
        return []
    lo = math.floor(min(values) / bin_width) * bin_width
    hi = math.ceil(max(values) / bin_width) * bin_width
    if hi == lo:
        hi = lo + bin_width
    n = int(round((hi - lo) / bin_width))
    rows = []
    for k in range(n):
        b0 = lo + k * bin_width
        b1 = b0 + bin_width
        if k == n - 1:
            count = sum(1 for v in values if b0 <= v <= b1)
        else:
            count = sum(1 for v in values if b0 <= v < b1)
        rows.append((b0, b1, count))
    return rows


@dataclass
class CampaignSpec:
    name: str
    protocol: str                       # iid | ood | systematicity
    cmdp: CmdpSpec
    controller: str = "glide"
    test_cmdp: CmdpSpec | None = None   # ood target
    n_contexts: int = 10
    seeds_per_context: int = 1
    base_seed: int = 0
    lam: float = 0.0
    bin_width_pct: float = 5.0
    horizon: int = 1000
    warmup: int = 50
    dt: float = 0.5
    reward: RewardConfig = field(default_factory=RewardConfig)
    use_gate: bool = True

    def __post_init__(self):
        if self.protocol not in ("iid", "ood", "systematicity"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.protocol == "ood" and self.test_cmdp is None:
            raise ValueError("ood protocol needs test_cmdp")
        if self.protocol == "systematicity" and self.cmdp.holdout is None:
            raise ValueError("systematicity protocol needs a holdout distribution on the cmdp")

    def contexts(self) -> list[ContextVector]:
        if self.protocol == "ood":
            return self.test_cmdp.test_contexts(self.n_contexts, self.base_seed)
        if self.protocol == "systematicity":
            _train, test = split_systematicity(self.cmdp.distribution, self.cmdp.holdout,
                                               self.base_seed)
            return test.take(self.n_contexts)
        return self.cmdp.test_contexts(self.n_contexts, self.base_seed)

    def canonical_payload(self) -> dict:
        cm = {"name": self.cmdp.name,
              "dataset_path": self.cmdp.dataset_path,
              "distribution": self.cmdp.distribution.to_payload() if self.cmdp.distribution else None,
              "iid_fraction": self.cmdp.iid_fraction,
              "holdout": self.cmdp.holdout.to_payload() if self.cmdp.holdout else None}
        tc = None
        if self.test_cmdp is not None:
            tc = {"name": self.test_cmdp.name, "dataset_path": self.test_cmdp.dataset_path,
                  "distribution": self.test_cmdp.distribution.to_payload() if self.test_cmdp.distribution else None}
        return {"name": self.name, "protocol": self.protocol, "cmdp": cm, "test_cmdp": tc,
                "controller": self.controller, "n_contexts": self.n_contexts,
                "seeds_per_context": self.seeds_per_context, "base_seed": self.base_seed,
                "lam": self.lam, "bin_width_pct": self.bin_width_pct,
                "horizon": self.horizon, "warmup": self.warmup, "dt": self.dt,
                "reward": self.reward.to_payload(), "use_gate": self.use_gate}

    def sha256(self) -> str:
        return hashlib.sha256(json.dumps(self.canonical_payload(), sort_keys=True,
                                         separators=(",", ":")).encode()).hexdigest()


def _episode_spec(ctx: ContextVector, camp: CampaignSpec) -> EpisodeSpec:
    return EpisodeSpec(context=ctx, horizon=camp.horizon, warmup=camp.warmup, dt=camp.dt,
                       reward=camp.reward, use_gate=camp.use_gate)


def _evaluate_context(args) -> dict:
    """Worker: paired baseline/policy runs for one context across its seeds.
    Top-level so process pools can pickle it."""
    ctx_record, camp_payload = args
    camp = campaign_from_payload(camp_payload)
    ctx = ContextVector.from_record(ctx_record)
    try:
        policies, baselines = [], []
        sim_s = 0.0
        for rep in range(camp.seeds_per_context):
            ep_seed = rngmod.derive_seed(ctx.seed, 41, rep)
            ep_ctx = reseed(ctx, ep_seed)
            base = run_episode(_episode_spec(ep_ctx, camp), controllers_mod.make("baseline"))
            pol = run_episode(_episode_spec(ep_ctx, camp), controllers_mod.make(camp.controller))
            baselines.append(base)
            policies.append(pol)
            sim_s += (base.steps + pol.steps) * camp.dt
        records = averaged_benefits(policies, baselines, ctx.scenario_id)
        return {"context_id": ctx.scenario_id, "ok": True, "sim_s": sim_s,
                "records": [r.to_payload() for r in records]}
    except Exception as e:  # recorded, never silently dropped
        return {"context_id": ctx.scenario_id, "ok": False, "sim_s": 0.0,
                "error": f"{type(e).__name__}: {e}"}


def campaign_to_payload(camp: CampaignSpec) -> dict:
    return camp.canonical_payload()


def campaign_from_payload(payload: dict) -> CampaignSpec:
    from .contexts import FeatureDistribution

    def cmdp_from(p):
        if p is None:
            return None
        dist = FeatureDistribution.from_payload(p["distribution"]) if p.get("distribution") else None
        hold = FeatureDistribution.from_payload(p["holdout"]) if p.get("holdout") else None
        return CmdpSpec(name=p["name"], dataset_path=p.get("dataset_path"),
                        distribution=dist, iid_fraction=p.get("iid_fraction"), holdout=hold)

    return CampaignSpec(
        name=payload["name"], protocol=payload["protocol"], cmdp=cmdp_from(payload["cmdp"]),
        controller=payload.get("controller", "glide"), test_cmdp=cmdp_from(payload.get("test_cmdp")),
        n_contexts=int(payload.get("n_contexts", 10)),
        seeds_per_context=int(payload.get("seeds_per_context", 1)),
        base_seed=int(payload.get("base_seed", 0)), lam=float(payload.get("lam", 0.0)),
        bin_width_pct=float(payload.get("bin_width_pct", 5.0)),
        horizon=int(payload.get("horizon", 1000)), warmup=int(payload.get("warmup", 50)),
        dt=float(payload.get("dt", 0.5)), reward=RewardConfig(**payload.get("reward", {})),
        use_gate=bool(payload.get("use_gate", True)),
    )


def run_campaign(camp: CampaignSpec, workers: int = 1,
                 coefficients: EmissionCoefficients | None = None) -> dict:
    """Full protocol run; returns the EvalReport payload. Deterministic for a
    given spec regardless of worker count: jobs are reduced in context order."""
    coefficients = coefficients or EmissionCoefficients()
    contexts = camp.contexts()
    payload = campaign_to_payload(camp)
    jobs = [(ctx.as_record(), payload) for ctx in contexts]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_evaluate_context, jobs))
    else:
        results = [_evaluate_context(j) for j in jobs]
    results.sort(key=lambda r: r["context_id"])

    records = []
    skipped = []
    sim_s = 0.0
    for r in results:
        sim_s += r["sim_s"]
        if r["ok"]:
            records.extend(r["records"])
        else:
            skipped.append({"context_id": r["context_id"], "error": r["error"]})

    approach_vals = [r["emission_benefit_pct"] for r in records if r["scope"].startswith("approach_")]
    inter_vals = [r["emission_benefit_pct"] for r in records if r["scope"] == "intersection"]
    hist = histogram(approach_vals, camp.bin_width_pct)
    report = {
        "format": "greenwave-eval-report",
        "version": 1,
        "campaign": payload,
        "campaign_sha256": camp.sha256(),
        "coefficients_sha256": coefficients.sha256(),
        "n_contexts": len(contexts),
        "records": records,
        "histogram": {"bin_width_pct": camp.bin_width_pct,
                      "rows": [[lo, hi, c] for lo, hi, c in hist],
                      "total_approach_records": len(approach_vals)},
        "summary": {
            "mean_intersection_emission_benefit_pct": (sum(inter_vals) / len(inter_vals)) if inter_vals else None,
            "mean_approach_emission_benefit_pct": (sum(approach_vals) / len(approach_vals)) if approach_vals else None,
            "zeroed_intersections": sum(1 for r in records
                                        if r["scope"] == "intersection" and r["zeroed"]),
            "skipped_contexts": len(skipped),
        },
        "skipped": skipped,
        "runtime_simulated_s": sim_s,
    }
    return report


def report_bytes(report: dict) -> bytes:
    """Canonical serialization; identical inputs yield identical bytes."""
    return json.dumps(report, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def save_report(report: dict, path) -> None:
    with open(path, "wb") as fh:
        fh.write(report_bytes(report))
        fh.write(b"\n")


def save_histogram_rows(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_low,bin_high,count\n")
        for lo, hi, c in report["histogram"]["rows"]:
            fh.write(f"{lo!r},{hi!r},{c}\n")


def baseline_controller():
    return controllers_mod.make("baseline")


def glide_to_green_controller():
    return controllers_mod.make("glide")
