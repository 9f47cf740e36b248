"""Context-MDP construction: feature distributions, procedural sampling,
train/holdout splits, dataset files, and scenario assembly.

A context vector is the full description of one traffic scenario. The
observed block is what a conditioning policy may see; the unobserved block
(arrival demand, offsets, grades, seeds) varies the dynamics behind the
policy's back.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace

from . import rng as rngmod
from .kernel import GateSpec
from .network import Approach, IntersectionTopology, Phase, SignalPlan

DATASET_FORMAT = "greenwave-contexts"
DISTRIBUTION_FORMAT = "greenwave-distribution"
FORMAT_VERSION = 1

YELLOW_S = 3.0
RED_CLEARANCE_S = 2.0

OBSERVED_FIELDS = (
    "lane_count", "phase_count", "lane_length_m", "speed_limit_ms",
    "green_s", "red_s", "temperature_c", "humidity_pct", "ev_fraction",
    "adoption_level",
)
UNOBSERVED_FIELDS = ("inflow_vph", "signal_offset_s", "road_grade_pct",
                     "arrival_seed", "driver_seed", "adoption_seed")


@dataclass(frozen=True)
class ContextVector:
    scenario_id: str
    seed: int
    lane_count: int
    phase_count: int
    lane_length_m: float
    speed_limit_ms: float
    green_s: float
    red_s: float
    signal_offset_s: float
    inflow_vph: float
    road_grade_pct: float
    temperature_c: float
    humidity_pct: float
    ev_fraction: float
    adoption_level: float

    def __post_init__(self):
        validate_context_fields(self.as_record(), where=self.scenario_id)

    def as_record(self) -> dict:
        return {
            "id": self.scenario_id,
            "seed": self.seed,
            "lane_count": self.lane_count,
            "phase_count": self.phase_count,
            "lane_length_m": self.lane_length_m,
            "speed_limit_ms": self.speed_limit_ms,
            "green_s": self.green_s,
            "red_s": self.red_s,
            "signal_offset_s": self.signal_offset_s,
            "inflow_vph": self.inflow_vph,
            "road_grade_pct": self.road_grade_pct,
            "temperature_c": self.temperature_c,
            "humidity_pct": self.humidity_pct,
            "ev_fraction": self.ev_fraction,
            "adoption_level": self.adoption_level,
        }

    def observed(self) -> dict:
        return {k: getattr(self, k) for k in OBSERVED_FIELDS}

    def unobserved(self) -> dict:
        out = {"inflow_vph": self.inflow_vph, "signal_offset_s": self.signal_offset_s,
               "road_grade_pct": self.road_grade_pct}
        out["arrival_seed"] = rngmod.derive_seed(self.seed, rngmod.STREAM_ARRIVALS)
        out["driver_seed"] = rngmod.derive_seed(self.seed, rngmod.STREAM_DRIVERS)
        out["adoption_seed"] = rngmod.derive_seed(self.seed, rngmod.STREAM_ADOPTION)
        return out

    @staticmethod
    def from_record(rec: dict) -> "ContextVector":
        return ContextVector(
            scenario_id=str(rec["id"]), seed=int(rec["seed"]),
            lane_count=int(rec["lane_count"]), phase_count=int(rec["phase_count"]),
            lane_length_m=float(rec["lane_length_m"]), speed_limit_ms=float(rec["speed_limit_ms"]),
            green_s=float(rec["green_s"]), red_s=float(rec["red_s"]),
            signal_offset_s=float(rec["signal_offset_s"]), inflow_vph=float(rec["inflow_vph"]),
            road_grade_pct=float(rec["road_grade_pct"]), temperature_c=float(rec["temperature_c"]),
            humidity_pct=float(rec["humidity_pct"]), ev_fraction=float(rec["ev_fraction"]),
            adoption_level=float(rec["adoption_level"]),
        )


RECORD_FIELDS = ("id", "seed", "lane_count", "phase_count", "lane_length_m",
                 "speed_limit_ms", "green_s", "red_s", "signal_offset_s", "inflow_vph",
                 "road_grade_pct", "temperature_c", "humidity_pct", "ev_fraction",
                 "adoption_level")


class ContextError(ValueError):
    pass


def validate_context_fields(rec: dict, where: str = "?") -> None:
    def bad(fieldname, msg):
        raise ContextError(f"{where}: field '{fieldname}' {msg}")

    if int(rec["lane_count"]) < 1:
        bad("lane_count", "must be >= 1")
    if int(rec["phase_count"]) not in (1, 2):
        bad("phase_count", "must be 1 or 2 (total plan phases)")
    if not float(rec["lane_length_m"]) > 0:
        bad("lane_length_m", "must be > 0")
    if not float(rec["speed_limit_ms"]) > 0:
        bad("speed_limit_ms", "must be > 0")
    if not float(rec["green_s"]) > 0:
        bad("green_s", "must be > 0")
    min_red = YELLOW_S if int(rec["phase_count"]) == 1 else 2 * (YELLOW_S + RED_CLEARANCE_S)
    if not float(rec["red_s"]) > min_red:
        bad("red_s", f"must exceed {min_red} for phase_count={rec['phase_count']}")
    if float(rec["signal_offset_s"]) < 0:
        bad("signal_offset_s", "must be >= 0")
    if float(rec["inflow_vph"]) < 0:
        bad("inflow_vph", "must be >= 0")
    if not 0.0 <= float(rec["humidity_pct"]) <= 100.0:
        bad("humidity_pct", "must be in [0, 100]")
    if not 0.0 <= float(rec["ev_fraction"]) <= 1.0:
        bad("ev_fraction", "must be in [0, 1]")
    if not 0.0 <= float(rec["adoption_level"]) <= 1.0:
        bad("adoption_level", "must be in [0, 1]")


@dataclass(frozen=True)
class FeatureDistribution:
    """Per-feature uniform supports. lane_setup entries are
    (lane_count, total phase_count) pairs; scalar axes are [lo, hi] ranges."""

    lane_setup: tuple = (((1, 1)), (1, 2), (2, 1), (2, 2), (3, 1), (3, 2))
    vehicle_inflow: tuple = (100.0, 600.0)
    green_phase_time: tuple = (20.0, 32.0)
    red_phase_time: tuple = (20.0, 32.0)
    lane_length: tuple = (100.0, 775.0)
    speed_limit: tuple = (16.0, 20.0)
    signal_offset: tuple = (1.0, 3.0)
    temperature: tuple = (10.0, 30.0)
    humidity: tuple = (30.0, 70.0)
    ev_fraction: tuple = (0.0, 0.3)
    adoption_level: tuple = (0.1, 1.0)
    road_grade: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not self.lane_setup:
            raise ContextError("lane_setup must be non-empty")
        object.__setattr__(self, "lane_setup", tuple((int(a), int(b)) for a, b in self.lane_setup))
        for f in fields(self):
            if f.name == "lane_setup":
                continue
            lo, hi = getattr(self, f.name)
            if not lo <= hi:
                raise ContextError(f"{f.name}: empty range [{lo}, {hi}]")
            object.__setattr__(self, f.name, (float(lo), float(hi)))

    _SCALARS = ("vehicle_inflow", "green_phase_time", "red_phase_time", "lane_length",
                "speed_limit", "signal_offset", "temperature", "humidity",
                "ev_fraction", "adoption_level", "road_grade")

    def to_payload(self) -> dict:
        out = {"format": DISTRIBUTION_FORMAT, "version": FORMAT_VERSION,
               "lane_setup": [list(p) for p in self.lane_setup]}
        for name in self._SCALARS:
            out[name] = list(getattr(self, name))
        return out

    @staticmethod
    def from_payload(payload: dict, where: str = "?") -> "FeatureDistribution":
        if payload.get("format", DISTRIBUTION_FORMAT) != DISTRIBUTION_FORMAT:
            raise ContextError(f"{where}: not a distribution spec")
        known = {"format", "version", "lane_setup", *FeatureDistribution._SCALARS}
        unknown = set(payload) - known
        if unknown:
            raise ContextError(f"{where}: unknown field '{sorted(unknown)[0]}'")
        kwargs = {k: v for k, v in payload.items() if k not in ("format", "version")}
        kwargs["lane_setup"] = tuple(tuple(p) for p in kwargs.get("lane_setup", FeatureDistribution.lane_setup))
        return FeatureDistribution(**kwargs)

    def contains(self, ctx: ContextVector) -> bool:
        """True when every feature of ctx lies inside this distribution's
        joint support (the systematicity holdout predicate)."""
        if (ctx.lane_count, ctx.phase_count) not in self.lane_setup:
            return False
        checks = (
            (ctx.inflow_vph, self.vehicle_inflow), (ctx.green_s, self.green_phase_time),
            (ctx.red_s, self.red_phase_time), (ctx.lane_length_m, self.lane_length),
            (ctx.speed_limit_ms, self.speed_limit), (ctx.signal_offset_s, self.signal_offset),
            (ctx.temperature_c, self.temperature), (ctx.humidity_pct, self.humidity),
            (ctx.ev_fraction, self.ev_fraction), (ctx.adoption_level, self.adoption_level),
            (ctx.road_grade_pct, self.road_grade),
        )
        return all(lo <= v <= hi for v, (lo, hi) in checks)

    def subset_of(self, other: "FeatureDistribution") -> bool:
        if not set(self.lane_setup) <= set(other.lane_setup):
            return False
        for name in self._SCALARS:
            lo, hi = getattr(self, name)
            olo, ohi = getattr(other, name)
            if lo < olo or hi > ohi:
                return False
        return True


def load_distribution(path) -> FeatureDistribution:
    with open(path, encoding="utf-8") as fh:
        return FeatureDistribution.from_payload(json.load(fh), where=str(path))


def save_distribution(dist: FeatureDistribution, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dist.to_payload(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _uniform(rng, lo: float, hi: float) -> float:
    return lo if lo == hi else lo + (hi - lo) * float(rng.random())


MAX_RESAMPLE = 100


def sample_context(dist: FeatureDistribution, rng) -> ContextVector:
    """Independent uniform draws per feature, deterministic given rng state.
    Infeasible combinations are resampled up to a bound."""
    last_err = None
    for _ in range(MAX_RESAMPLE):
        lanes, phases = dist.lane_setup[int(rng.integers(0, len(dist.lane_setup)))]
        draw = {
            "lane_count": lanes,
            "phase_count": phases,
            "inflow_vph": _uniform(rng, *dist.vehicle_inflow),
            "green_s": _uniform(rng, *dist.green_phase_time),
            "red_s": _uniform(rng, *dist.red_phase_time),
            "lane_length_m": _uniform(rng, *dist.lane_length),
            "speed_limit_ms": _uniform(rng, *dist.speed_limit),
            "signal_offset_s": _uniform(rng, *dist.signal_offset),
            "temperature_c": _uniform(rng, *dist.temperature),
            "humidity_pct": _uniform(rng, *dist.humidity),
            "ev_fraction": _uniform(rng, *dist.ev_fraction),
            "adoption_level": _uniform(rng, *dist.adoption_level),
            "road_grade_pct": _uniform(rng, *dist.road_grade),
        }
        seed = int(rng.integers(0, 2**62))
        try:
            return ContextVector(scenario_id=f"ctx-{seed:x}", seed=seed, **draw)
        except ContextError as e:
            last_err = e
    raise ContextError(f"could not sample a feasible context after {MAX_RESAMPLE} tries: {last_err}")


class ContextSampler:
    """Deterministic context stream; optionally rejects a holdout region."""

    def __init__(self, dist: FeatureDistribution, seed: int, exclude: FeatureDistribution | None = None):
        self.dist = dist
        self.exclude = exclude
        self._rng = rngmod.stream(seed, rngmod.STREAM_CONTEXT)

    def sample(self) -> ContextVector:
        for _ in range(100_000):
            ctx = sample_context(self.dist, self._rng)
            if self.exclude is None or not self.exclude.contains(ctx):
                return ctx
        raise ContextError("rejection sampling exhausted; holdout region covers the support")

    def take(self, n: int) -> list[ContextVector]:
        return [self.sample() for _ in range(n)]


def split_systematicity(train_dist: FeatureDistribution, test_dist: FeatureDistribution,
                        seed: int) -> tuple[ContextSampler, ContextSampler]:
    """Train sampler rejects everything inside the test joint region; test
    sampler draws only inside it. Errors when the complement is empty."""
    if not test_dist.subset_of(train_dist):
        raise ContextError("test distribution support must lie inside the train support")
    if train_dist.subset_of(test_dist):
        raise ContextError("holdout region equals the training support; complement is empty")
    train = ContextSampler(train_dist, rngmod.derive_seed(seed, 11), exclude=test_dist)
    test = ContextSampler(test_dist, rngmod.derive_seed(seed, 13))
    return train, test


def assign_adoption(count: int, adoption_level: float, rng) -> list[bool]:
    """Controlled flags for a stream of spawned vehicles; each vehicle is
    controlled independently with probability adoption_level."""
    if not 0.0 <= adoption_level <= 1.0:
        raise ValueError("adoption_level must be in [0, 1]")
    return [bool(rng.random() < adoption_level) for _ in range(count)]


# -- scenario assembly ---------------------------------------------------------

def build_topology(ctx: ContextVector) -> IntersectionTopology:
    n_approaches = 2 * ctx.phase_count
    approaches = [
        Approach(ctx.lane_count, ctx.lane_length_m, ctx.speed_limit_ms, ctx.road_grade_pct)
        for _ in range(n_approaches)
    ]
    if ctx.phase_count == 1:
        membership = [(0,)] * n_approaches
    else:
        membership = [(0,), (0,), (1,), (1,)]
    return IntersectionTopology(approaches, membership)


def build_plan(ctx: ContextVector, offset_s: float = 0.0) -> SignalPlan:
    """Every approach's green + red sums to the full cycle: with one phase the
    plan is [green, yellow, red - yellow]; with two phases the second phase's
    green is red - 2*(yellow + clearance) so the cycle stays green_s + red_s."""
    if ctx.phase_count == 1:
        phases = [Phase(ctx.green_s, YELLOW_S, ctx.red_s - YELLOW_S, (0, 1))]
    else:
        phases = [
            Phase(ctx.green_s, YELLOW_S, RED_CLEARANCE_S, (0, 1)),
            Phase(ctx.red_s - 2 * (YELLOW_S + RED_CLEARANCE_S), YELLOW_S, RED_CLEARANCE_S, (2, 3)),
        ]
    return SignalPlan(phases, offset_s=offset_s)


def build_gate(ctx: ContextVector) -> GateSpec:
    return GateSpec(green_s=ctx.green_s, red_s=ctx.red_s, offset_s=ctx.signal_offset_s)


# -- dataset files --------------------------------------------------------------

def save_dataset(contexts: list[ContextVector], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": DATASET_FORMAT, "version": FORMAT_VERSION}) + "\n")
        for ctx in contexts:
            fh.write(json.dumps(ctx.as_record(), sort_keys=True) + "\n")


def load_dataset(path) -> list[ContextVector]:
    contexts: list[ContextVector] = []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        return contexts
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise ContextError(f"{path}:1: malformed header: {e}") from None
    if header.get("format") != DATASET_FORMAT:
        raise ContextError(f"{path}:1: not a context dataset (format={header.get('format')!r})")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise ContextError(f"{where}: malformed record: {e}") from None
        missing = [k for k in RECORD_FIELDS if k not in rec]
        if missing:
            raise ContextError(f"{where}: missing field '{missing[0]}'")
        unknown = set(rec) - set(RECORD_FIELDS)
        if unknown:
            raise ContextError(f"{where}: unknown field '{sorted(unknown)[0]}'")
        validate_context_fields(rec, where=where)
        contexts.append(ContextVector.from_record(rec))
    return contexts


@dataclass
class CmdpSpec:
    """One named family of contexts plus its split rule."""

    name: str
    dataset_path: str | None = None
    distribution: FeatureDistribution | None = None
    iid_fraction: float | None = None
    holdout: FeatureDistribution | None = None

    def __post_init__(self):
        if (self.dataset_path is None) == (self.distribution is None):
            raise ContextError("CmdpSpec needs exactly one of dataset_path or distribution")
        if self.holdout is not None and self.distribution is not None:
            if not self.holdout.subset_of(self.distribution):
                raise ContextError("holdout support must lie inside the training distribution")

    def test_contexts(self, n: int, seed: int) -> list[ContextVector]:
        if self.dataset_path is not None:
            contexts = load_dataset(self.dataset_path)
            if self.iid_fraction is not None:
                k = max(1, int(round(len(contexts) * self.iid_fraction)))
                order = rngmod.stream(seed, 17).permutation(len(contexts))
                contexts = [contexts[i] for i in order[:k]]
            return contexts[:n] if n else contexts
        if self.holdout is not None:
            _, test = split_systematicity(self.distribution, self.holdout, seed)
            return test.take(n)
        return ContextSampler(self.distribution, seed).take(n)


def reseed(ctx: ContextVector, episode_seed: int) -> ContextVector:
    """Same observable scenario, fresh unobserved randomness."""
    return replace(ctx, seed=int(episode_seed),
                   scenario_id=f"{ctx.scenario_id}@{episode_seed:x}")
