"""Bayesian calibration of driver car-following parameters.

Generative model over theta = [v_desired, gap_min, headway_time, accel_max,
decel_comf] and observation noise sigma_eps:

    ln(theta)     ~ N(mu0, Sigma0)          (5-dim)
    ln(sigma_eps) ~ N(mu_eps, sigma1)
    v_next | s, v, dv, theta ~ N(v + a_idm(s, v, dv; theta) * dt, (sigma_eps*dt)^2)

Posterior sampling is random-walk Metropolis in log space (an optional
gradient-informed MALA proposal is available); chains are deterministic given
the seed and report acceptance rates plus the split-chain scale-reduction
statistic.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .idm import IdmParams

TRAJECTORY_FORMAT = "greenwave-trajectories"
LOG2PI = math.log(2.0 * math.pi)
IDM_EXPONENT = 4.0
CLASSES = ("car", "truck_bus")


@dataclass
class TrajectoryDataset:
    """Flat arrays of one-step transitions (gap, speed, speed delta, next
    speed) sharing one timestep."""

    dt: float
    s: np.ndarray
    v: np.ndarray
    dv: np.ndarray
    v_next: np.ndarray

    def __post_init__(self):
        self.s = np.asarray(self.s, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        self.dv = np.asarray(self.dv, dtype=float)
        self.v_next = np.asarray(self.v_next, dtype=float)
        n = len(self.s)
        if not (len(self.v) == len(self.dv) == len(self.v_next) == n):
            raise ValueError("transition arrays must share one length")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if n and (self.s <= 0).any():
            raise ValueError("gaps must be > 0")
        if n and (self.v < 0).any():
            raise ValueError("speeds must be >= 0")

    def __len__(self) -> int:
        return len(self.s)

    @staticmethod
    def empty(dt: float = 0.5) -> "TrajectoryDataset":
        z = np.zeros(0)
        return TrajectoryDataset(dt, z, z, z, z)

    @staticmethod
    def concat(parts: list["TrajectoryDataset"]) -> "TrajectoryDataset":
        parts = [p for p in parts if len(p)]
        if not parts:
            return TrajectoryDataset.empty()
        dt = parts[0].dt
        if any(abs(p.dt - dt) > 1e-12 for p in parts):
            raise ValueError("datasets disagree on dt")
        return TrajectoryDataset(
            dt,
            np.concatenate([p.s for p in parts]),
            np.concatenate([p.v for p in parts]),
            np.concatenate([p.dv for p in parts]),
            np.concatenate([p.v_next for p in parts]),
        )


def idm_accel_vec(theta: np.ndarray, s: np.ndarray, v: np.ndarray, dv: np.ndarray) -> np.ndarray:
    v0, s0, T, alpha, beta = theta
    h = v * T + v * dv / (2.0 * math.sqrt(alpha * beta))
    s_star = s0 + np.maximum(0.0, h)
    return alpha * (1.0 - (v / v0) ** IDM_EXPONENT - (s_star / s) ** 2)


def log_likelihood(theta, sigma_eps: float, data: TrajectoryDataset) -> float:
    """Sum of Gaussian log densities of v_next around the one-step prediction
    v + a*dt with standard deviation sigma_eps*dt. Empty data gives 0.0."""
    theta = np.asarray(theta, dtype=float)
    if (theta <= 0).any() or sigma_eps <= 0:
        raise ValueError("theta and sigma_eps must be positive")
    if len(data) == 0:
        return 0.0
    mean = data.v + idm_accel_vec(theta, data.s, data.v, data.dv) * data.dt
    sd = sigma_eps * data.dt
    resid = data.v_next - mean
    return float(np.sum(-np.log(sd) - 0.5 * LOG2PI - resid * resid / (2.0 * sd * sd)))


def grad_log_likelihood(theta, sigma_eps: float, data: TrajectoryDataset):
    """Analytic gradient of log_likelihood wrt (theta, sigma_eps); backs the
    optional gradient-informed proposal and is finite-difference checked."""
    theta = np.asarray(theta, dtype=float)
    if len(data) == 0:
        return np.zeros(5), 0.0
    v0, s0, T, alpha, beta = theta
    s, v, dv = data.s, data.v, data.dv
    c = math.sqrt(alpha * beta)
    h = v * T + v * dv / (2.0 * c)
    active = (h > 0).astype(float)
    s_star = s0 + np.maximum(0.0, h)
    ratio = s_star / s
    a = alpha * (1.0 - (v / v0) ** IDM_EXPONENT - ratio**2)

    mean = v + a * data.dt
    sd = sigma_eps * data.dt
    resid = data.v_next - mean
    w = resid / (sd * sd) * data.dt  # d(ll)/d(a) per transition

    common = -2.0 * alpha * ratio / s  # d(a)/d(s_star)
    ds_dT = active * v
    ds_dalpha = -active * v * dv * beta / (4.0 * (alpha * beta) ** 1.5)
    ds_dbeta = -active * v * dv * alpha / (4.0 * (alpha * beta) ** 1.5)

    da_dv0 = alpha * IDM_EXPONENT * v**IDM_EXPONENT / v0 ** (IDM_EXPONENT + 1)
    da_ds0 = common
    da_dT = common * ds_dT
    da_dalpha = (1.0 - (v / v0) ** IDM_EXPONENT - ratio**2) + common * ds_dalpha
    da_dbeta = common * ds_dbeta

    grad_theta = np.array([
        float(np.sum(w * da_dv0)),
        float(np.sum(w * da_ds0)),
        float(np.sum(w * da_dT)),
        float(np.sum(w * da_dalpha)),
        float(np.sum(w * da_dbeta)),
    ])
    grad_sigma = float(np.sum(-1.0 / sigma_eps + resid * resid / (sigma_eps**3 * data.dt**2)))
    return grad_theta, grad_sigma


@dataclass
class CalibrationPrior:
    mu0: np.ndarray = field(default_factory=lambda: np.log([15.0, 2.0, 1.5, 1.5, 2.0]))
    sigma0: np.ndarray = field(default_factory=lambda: 0.25 * np.eye(5))
    mu_eps: float = math.log(0.3)
    sigma1: float = 0.5

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=float)
        self.sigma0 = np.asarray(self.sigma0, dtype=float)
        if self.mu0.shape != (5,) or self.sigma0.shape != (5, 5):
            raise ValueError("prior must be 5-dimensional")
        if not np.allclose(self.sigma0, self.sigma0.T):
            raise ValueError("Sigma0 must be symmetric")
        try:
            self._chol = np.linalg.cholesky(self.sigma0)
        except np.linalg.LinAlgError:
            raise ValueError("Sigma0 must be positive-definite") from None
        self._inv = np.linalg.inv(self.sigma0)
        self._logdet = 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def logpdf(self, z: np.ndarray) -> float:
        """Density of z = (ln theta, ln sigma_eps) in R^6."""
        d5 = z[:5] - self.mu0
        q = float(d5 @ self._inv @ d5)
        lp = -0.5 * (q + self._logdet + 5.0 * LOG2PI)
        d1 = (z[5] - self.mu_eps) / self.sigma1
        lp += -0.5 * (d1 * d1 + LOG2PI) - math.log(self.sigma1)
        return lp

    def grad_logpdf(self, z: np.ndarray) -> np.ndarray:
        g = np.empty(6)
        g[:5] = -self._inv @ (z[:5] - self.mu0)
        g[5] = -(z[5] - self.mu_eps) / self.sigma1**2
        return g

    def to_payload(self) -> dict:
        return {"mu0": self.mu0.tolist(), "sigma0": self.sigma0.tolist(),
                "mu_eps": self.mu_eps, "sigma1": self.sigma1}


@dataclass
class ChainConfig:
    n_iter: int = 6000
    burn_in: int = 2000
    n_chains: int = 2
    initial_scale: float = 0.15
    target_accept: float = 0.3
    proposal: str = "rw"  # "rw" or "mala"

    def __post_init__(self):
        if self.burn_in >= self.n_iter:
            raise ValueError("burn_in must be < n_iter")
        if self.proposal not in ("rw", "mala"):
            raise ValueError("proposal must be 'rw' or 'mala'")
        if not 0.1 <= self.target_accept <= 0.6:
            raise ValueError("target_accept out of the sensible band")


@dataclass
class PosteriorSample:
    theta: np.ndarray        # (n, 5), positive
    sigma_eps: np.ndarray    # (n,)
    acceptance_rate: float
    r_hat: np.ndarray        # (6,), split-chain scale reduction
    seed: int
    config: ChainConfig

    def theta_mean(self) -> np.ndarray:
        return self.theta.mean(axis=0)

    def summary(self) -> dict:
        names = ["v_desired", "gap_min", "headway_time", "accel_max", "decel_comf"]
        out = {
            "n_draws": int(len(self.sigma_eps)),
            "acceptance_rate": self.acceptance_rate,
            "r_hat": [float(x) for x in self.r_hat],
            "sigma_eps_mean": float(self.sigma_eps.mean()),
        }
        for i, n in enumerate(names):
            out[f"{n}_mean"] = float(self.theta[:, i].mean())
            out[f"{n}_sd"] = float(self.theta[:, i].std(ddof=1))
        return out


def _log_post(z: np.ndarray, prior: CalibrationPrior, data: TrajectoryDataset) -> float:
    lp = prior.logpdf(z)
    if not math.isfinite(lp):
        return -math.inf
    theta = np.exp(z[:5])
    sigma = math.exp(z[5])
    if not np.isfinite(theta).all() or not math.isfinite(sigma):
        return -math.inf
    try:
        return lp + log_likelihood(theta, sigma, data)
    except (OverflowError, FloatingPointError):
        return -math.inf


def _grad_log_post(z: np.ndarray, prior: CalibrationPrior, data: TrajectoryDataset) -> np.ndarray:
    theta = np.exp(z[:5])
    sigma = math.exp(z[5])
    gt, gs = grad_log_likelihood(theta, sigma, data)
    g = prior.grad_logpdf(z).copy()
    g[:5] += gt * theta  # chain rule through exp
    g[5] += gs * sigma
    return g


def sample_posterior(prior: CalibrationPrior, data: TrajectoryDataset,
                     config: ChainConfig | None = None, seed: int = 0) -> PosteriorSample:
    """Metropolis sampling of the posterior over (theta, sigma_eps).

    Proposal scale adapts toward the target acceptance during burn-in only,
    then freezes. With empty data the posterior is the prior."""
    config = config or ChainConfig()
    z_init = np.concatenate([prior.mu0, [prior.mu_eps]])
    lp0 = _log_post(z_init, prior, data)
    if not math.isfinite(lp0):
        raise ValueError("posterior is non-finite at the prior mean; check the prior")

    base_sds = np.concatenate([np.sqrt(np.diag(prior.sigma0)), [prior.sigma1]])
    kept_chains = []
    accept_total = 0
    kept_total = 0
    for chain_idx in range(config.n_chains):
        rng = rngmod.stream(seed, 23, chain_idx)
        z = z_init.copy()
        lp = lp0
        scale = config.initial_scale
        kept = np.empty((config.n_iter - config.burn_in, 6))
        accepted_window = 0
        for it in range(config.n_iter):
            if config.proposal == "mala":
                eps = scale
                drift = 0.5 * eps * eps * _grad_log_post(z, prior, data)
                zp = z + drift + eps * rng.standard_normal(6)
                lpp = _log_post(zp, prior, data)
                drift_p = 0.5 * eps * eps * _grad_log_post(zp, prior, data)
                fwd = zp - z - drift
                bwd = z - zp - drift_p
                log_q = (-(bwd @ bwd) + (fwd @ fwd)) / (2.0 * eps * eps)
                log_alpha = lpp - lp + log_q
            else:
                zp = z + scale * base_sds * rng.standard_normal(6)
                lpp = _log_post(zp, prior, data)
                log_alpha = lpp - lp
            if math.log(max(rng.random(), 1e-300)) < log_alpha:
                z, lp = zp, lpp
                accepted_window += 1
                if it >= config.burn_in:
                    accept_total += 1
            if it < config.burn_in:
                if (it + 1) % 100 == 0:
                    rate = accepted_window / 100.0
                    scale *= math.exp(rate - config.target_accept)
                    scale = min(max(scale, 1e-4), 10.0)
                    accepted_window = 0
            else:
                kept[it - config.burn_in] = z
        kept_chains.append(kept)
        kept_total += len(kept)

    draws = np.vstack(kept_chains)
    return PosteriorSample(
        theta=np.exp(draws[:, :5]),
        sigma_eps=np.exp(draws[:, 5]),
        acceptance_rate=accept_total / kept_total,
        r_hat=split_r_hat(kept_chains),
        seed=seed,
        config=config,
    )


def split_r_hat(chains: list[np.ndarray]) -> np.ndarray:
    """Split-chain potential scale reduction per dimension."""
    halves = []
    for c in chains:
        n = len(c) // 2
        halves.append(c[:n])
        halves.append(c[n:2 * n])
    arr = np.stack(halves)  # (m, n, d)
    m, n, _ = arr.shape
    chain_means = arr.mean(axis=1)
    w = arr.var(axis=1, ddof=1).mean(axis=0)
    b = n * chain_means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * w + b / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / w)
    return np.where(np.isfinite(r), r, 1.0)


class PosteriorPopulation:
    """Driver sampler backed by posterior draws; plugs into the kernel."""

    def __init__(self, sample: PosteriorSample, accel_exp: float = IDM_EXPONENT):
        if len(sample.sigma_eps) == 0:
            raise ValueError("posterior sample is empty")
        self.sample = sample
        self.accel_exp = accel_exp

    def draw(self, rng) -> IdmParams:
        row = self.sample.theta[int(rng.integers(0, len(self.sample.theta)))]
        return IdmParams(float(row[0]), float(row[1]), float(row[2]),
                         float(row[3]), float(row[4]), self.accel_exp)


@dataclass
class PopulationFit:
    posteriors: dict      # class -> PosteriorSample | None
    defaults_used: list   # classes that fell back to shipped defaults
    prior: CalibrationPrior
    config: ChainConfig
    seed: int

    def population_for(self, vclass: str):
        from .idm import default_populations
        post = self.posteriors.get(vclass)
        if post is None:
            return default_populations()[vclass]
        return PosteriorPopulation(post)

    def populations(self) -> dict:
        return {cls: self.population_for(cls) for cls in CLASSES}

    def report_payload(self) -> dict:
        per_class = {}
        for cls in CLASSES:
            post = self.posteriors.get(cls)
            per_class[cls] = {"defaults_used": cls in self.defaults_used,
                              "posterior": post.summary() if post is not None else None}
        return {
            "format": "greenwave-calibration-report",
            "version": 1,
            "prior": self.prior.to_payload(),
            "chain": {"n_iter": self.config.n_iter, "burn_in": self.config.burn_in,
                      "n_chains": self.config.n_chains, "proposal": self.config.proposal,
                      "target_accept": self.config.target_accept},
            "seed": self.seed,
            "classes": per_class,
        }


def fit_population(datasets: dict, prior: CalibrationPrior | None = None,
                   config: ChainConfig | None = None, seed: int = 0) -> PopulationFit:
    """One posterior per vehicle class; classes without data use shipped
    defaults and are flagged in the report."""
    prior = prior or CalibrationPrior()
    config = config or ChainConfig()
    unknown = set(datasets) - set(CLASSES)
    if unknown:
        raise ValueError(f"unknown vehicle class {sorted(unknown)[0]!r}; expected {CLASSES}")
    posteriors = {}
    defaults = []
    for idx, cls in enumerate(CLASSES):
        data = datasets.get(cls)
        if data is None or len(data) == 0:
            posteriors[cls] = None
            defaults.append(cls)
            continue
        posteriors[cls] = sample_posterior(prior, data, config,
                                           seed=rngmod.derive_seed(seed, 29, idx))
    return PopulationFit(posteriors, defaults, prior, config, seed)


# -- synthetic data and file formats -----------------------------------------------

def make_synthetic_dataset(theta_star, sigma_eps: float, n: int, dt: float = 0.5,
                           seed: int = 0) -> TrajectoryDataset:
    """Transitions generated from the model itself; covers free-flow,
    following and near-stop regimes so every parameter is identified."""
    theta_star = np.asarray(theta_star, dtype=float)
    v0, s0 = theta_star[0], theta_star[1]
    rng = rngmod.stream(seed, 31)
    u = rng.random(n)
    v = np.where(u < 0.5, 1.0 + (v0 - 1.0) * rng.random(n),
                 np.where(u < 0.8, 1.05 * v0 * rng.random(n), 3.0 * rng.random(n)))
    dv = np.where(u < 0.5, -4.0 + 8.0 * rng.random(n),
                  np.where(u < 0.8, -2.0 + 4.0 * rng.random(n), -1.0 + 4.0 * rng.random(n)))
    c = math.sqrt(theta_star[3] * theta_star[4])
    s_star = s0 + np.maximum(0.0, v * theta_star[2] + v * dv / (2.0 * c))
    s_follow = s_star * (0.6 + 1.0 * rng.random(n))
    s_free = 40.0 + 80.0 * rng.random(n)
    s_stop = 0.8 * s0 + 9.2 * rng.random(n)
    s = np.where(u < 0.5, s_follow, np.where(u < 0.8, s_free, s_stop))
    s = np.maximum(s, 0.5)
    a = idm_accel_vec(theta_star, s, v, dv)
    v_next = v + a * dt + sigma_eps * dt * rng.standard_normal(n)
    return TrajectoryDataset(dt, s, v, dv, v_next)


def save_trajectories(datasets: dict, path, dt: float | None = None) -> None:
    dts = {d.dt for d in datasets.values() if len(d)}
    dt = dt if dt is not None else (dts.pop() if dts else 0.5)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": TRAJECTORY_FORMAT, "version": 1, "dt": dt}) + "\n")
        for cls, data in datasets.items():
            for i in range(len(data)):
                fh.write(json.dumps({
                    "class": cls, "s": float(data.s[i]), "v": float(data.v[i]),
                    "dv": float(data.dv[i]), "v_next": float(data.v_next[i]),
                }) + "\n")


def load_trajectories(path) -> dict:
    rows: dict[str, list] = {}
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        return {}
    header = json.loads(lines[0])
    if header.get("format") != TRAJECTORY_FORMAT:
        raise ValueError(f"{path}:1: not a trajectory file")
    dt = float(header["dt"])
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rows.setdefault(rec.get("class", "car"), []).append(
                (float(rec["s"]), float(rec["v"]), float(rec["dv"]), float(rec["v_next"])))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise ValueError(f"{path}:{lineno}: bad transition record: {e}") from None
    out = {}
    for cls, tuples in rows.items():
        arr = np.array(tuples, dtype=float)
        out[cls] = TrajectoryDataset(dt, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])
    return out


def dataset_from_trace(path, dt: float) -> TrajectoryDataset:
    """Rebuild transitions from a kernel trace export: consecutive steps of
    the same vehicle where a leader was present at the first step."""
    import csv

    by_vehicle: dict[str, list] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            by_vehicle.setdefault(row["vehicle_id"], []).append(row)
    s, v, dv, v_next = [], [], [], []
    for rows in by_vehicle.values():
        rows.sort(key=lambda r: int(r["step"]))
        for a, b in zip(rows, rows[1:]):
            if int(b["step"]) != int(a["step"]) + 1 or not a["leader_gap_m"]:
                continue
            gap = float(a["leader_gap_m"])
            if gap <= 0:
                continue
            s.append(gap)
            v.append(float(a["speed_ms"]))
            dv.append(float(a["speed_ms"]) - float(a["leader_speed_ms"]))
            v_next.append(float(b["speed_ms"]))
    return TrajectoryDataset(dt, np.array(s), np.array(v), np.array(dv), np.array(v_next))
