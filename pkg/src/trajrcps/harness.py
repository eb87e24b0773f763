"""Monte Carlo and closed-form oracles for checking the coverage guarantees.

For a scalar system x_{t+1} = a x_t + w_t and a scalar linear model
f(x) = a_hat x, the residual at a pair is (a - a_hat) x_t + w_t, a Gaussian
once the law of x_t is Gaussian.  Every true risk the experiments need
(stationary, marginal at a lag, conditional on the observed past) is then an
expectation of the loss of |N(mean, var)|, available in closed form.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.special import ndtr

from .calibration import BlockSchedule, certify
from .config import ExperimentConfig
from .exceptions import ConfigError, NotContractiveError, RcpsError
from .lti import (LtiSystem, MixingBound, Trajectory, derive_seed, make_rng, mixing_bound,
                  simulate, simulate_paths, solve_lyapunov, state_moments)
from .predictor import LinearModel, LossSpec, WeightVector, residuals, weights_from_preset

MC_SLACK = 3.0
# cap on floats held per simulated chunk of paths
_CHUNK_FLOATS = 2_000_000


# -- Gaussian helpers ----------------------------------------------------------

def _npdf(z):
    return np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _tail_integral(z):
    # antiderivative of the upper tail Q(z) = 1 - Phi(z): z Q(z) - phi(z)
    z = np.asarray(z, dtype=float)
    return z * ndtr(-z) - _npdf(z)


def expected_abs_loss(mean, std: float, lam: float, loss: LossSpec) -> np.ndarray:
    """E[loss(|R|, lam)] for R ~ N(mean, std**2), vectorized over ``mean``."""
    mean = np.asarray(mean, dtype=float)
    if std == 0.0:
        return loss(np.abs(mean), lam)
    if loss.kind == "indicator":
        return ndtr((-lam - mean) / std) + ndtr((mean - lam) / std)
    # (1/scale) * integral_{lam}^{lam + B*scale} P(|R| > v) dv
    lo, hi = lam, lam + loss.B * loss.scale
    upper = _tail_integral((hi - mean) / std) - _tail_integral((lo - mean) / std)
    lower = _tail_integral((hi + mean) / std) - _tail_integral((lo + mean) / std)
    return np.clip(std * (upper + lower) / loss.scale, 0.0, loss.B)


def gaussian_tv(mu1, s1, mu2, s2) -> np.ndarray:
    """Total variation distance between N(mu1, s1**2) and N(mu2, s2**2).

    The densities cross where a quadratic in y vanishes; on each of the
    (at most three) intervals between crossings one density dominates, so
    TV is half the sum of |P(I) - Q(I)| over those intervals.
    """
    mu1, s1, mu2, s2 = np.broadcast_arrays(*(np.asarray(v, dtype=float)
                                             for v in (mu1, s1, mu2, s2)))
    if np.any(s1 <= 0) or np.any(s2 <= 0):
        raise RcpsError("standard deviations must be positive")
    v1, v2 = s1 * s1, s2 * s2
    qa = v1 - v2
    qb = 2.0 * (v2 * mu1 - v1 * mu2)
    qc = v1 * mu2 * mu2 - v2 * mu1 * mu1 + v1 * v2 * np.log(v2 / v1)
    disc = np.maximum(qb * qb - 4.0 * qa * qc, 0.0)
    sgn = np.where(qb >= 0, 1.0, -1.0)
    q = -0.5 * (qb + sgn * np.sqrt(disc))
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where(qa != 0, q / qa, np.inf)
        r2 = np.where(q != 0, qc / q, np.inf)
    identical = (qa == 0) & (qb == 0)
    r1 = np.where(identical, np.inf, r1)
    r2 = np.where(identical, np.inf, r2)
    lo, hi = np.minimum(r1, r2), np.maximum(r1, r2)

    def cdf(r, mu, s):
        with np.errstate(invalid="ignore"):
            return ndtr((r - mu) / s)

    P_lo, P_hi = cdf(lo, mu1, s1), cdf(hi, mu1, s1)
    Q_lo, Q_hi = cdf(lo, mu2, s2), cdf(hi, mu2, s2)
    tv = 0.5 * (np.abs(P_lo - Q_lo) + np.abs((P_hi - P_lo) - (Q_hi - Q_lo))
                + np.abs((1.0 - P_hi) - (1.0 - Q_hi)))
    return np.clip(tv, 0.0, 1.0)


def _mean_se(values: np.ndarray) -> Tuple[float, float]:
    values = np.asarray(values, dtype=float)
    n = values.size
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(values.mean()), se


def _chunks(total: int, per_item: int):
    size = max(1, _CHUNK_FLOATS // max(1, per_item))
    start = 0
    while start < total:
        yield min(size, total - start)
        start += size


# -- risk queries --------------------------------------------------------------

@dataclass(frozen=True)
class RiskQuery:
    """Which distribution of the test pair the risk is taken under.

    ``stationary``: (x', y') from the stationary law.
    ``marginal``:   the pair at index T + k of a fresh trajectory started from ``init``.
    ``conditional``: the pair whose feature is the known ``x_next``.
    """

    target: str
    lam: float
    loss: LossSpec = LossSpec()
    k: Optional[int] = None
    T: Optional[int] = None
    x_next: Optional[float] = None

    def __post_init__(self):
        if self.target not in ("stationary", "marginal", "conditional"):
            raise RcpsError(f"unknown risk target {self.target!r}")
        if self.lam < 0:
            raise RcpsError("lambda must be nonnegative")
        if self.target == "marginal":
            if self.k is None or self.k < 1:
                raise RcpsError("marginal risk needs lag k >= 1")
            if self.T is None or self.T < 0:
                raise RcpsError("marginal risk needs the training length T")
        if self.target == "conditional":
            if self.x_next is None or not np.all(np.isfinite(self.x_next)):
                raise RcpsError("conditional risk needs a finite x_next")

    @classmethod
    def stationary(cls, lam, loss=LossSpec()):
        return cls("stationary", lam, loss)

    @classmethod
    def marginal_at_lag(cls, k, T, lam, loss=LossSpec()):
        return cls("marginal", lam, loss, k=k, T=T)

    @classmethod
    def conditional_given(cls, x_next, lam, loss=LossSpec()):
        return cls("conditional", lam, loss, x_next=x_next)


class ScalarSetting:
    """Cached constants of a scalar system paired with a scalar linear model."""

    def __init__(self, system: LtiSystem, model, init="zero"):
        if system.d != 1 or not isinstance(model, LinearModel) or model.d != 1:
            raise RcpsError("exact oracle requires a scalar system and a scalar linear model; "
                            "use mc_risk instead")
        self.system = system
        self.a = system.a
        self.a_hat = model.a_hat
        self.gap = self.a - self.a_hat
        self.noise_std = system.noise_std
        self.init = init
        self._stationary_var = None

    @property
    def stationary_var(self) -> float:
        if self._stationary_var is None:
            self._stationary_var = float(solve_lyapunov(self.system).sigma_inf[0, 0])
        return self._stationary_var

    def residual_law_at(self, t: int) -> Tuple[float, float]:
        """Mean and variance of the residual at pair index t (1-indexed)."""
        mean, cov = state_moments(self.system, t, self.init)
        return self.gap * float(mean[0]), self.gap ** 2 * float(cov[0, 0]) + self.noise_std ** 2

    def stationary_risk(self, lam: float, loss: LossSpec) -> float:
        var = self.gap ** 2 * self.stationary_var + self.noise_std ** 2
        return float(expected_abs_loss(0.0, math.sqrt(var), lam, loss))

    def marginal_risk(self, k: int, T: int, lam: float, loss: LossSpec) -> float:
        mean, var = self.residual_law_at(T + k)
        return float(expected_abs_loss(mean, math.sqrt(var), lam, loss))

    def conditional_risk(self, x_next, lam: float, loss: LossSpec):
        return expected_abs_loss(self.gap * np.asarray(x_next, dtype=float),
                                 self.noise_std, lam, loss)


def exact_risk_scalar(system: LtiSystem, model, query: RiskQuery, init="zero") -> float:
    """Closed-form true risk of C_lam for a scalar linear system and model."""
    setting = ScalarSetting(system, model, init)
    if query.target == "stationary":
        if not system.contractive:
            raise NotContractiveError("no stationary distribution: spectral radius >= 1")
        return setting.stationary_risk(query.lam, query.loss)
    if query.target == "marginal":
        return setting.marginal_risk(query.k, query.T, query.lam, query.loss)
    return float(setting.conditional_risk(query.x_next, query.lam, query.loss))


def mc_risk(system: LtiSystem, model, query: RiskQuery, samples: int, seed: int,
            init="zero") -> Tuple[float, float]:
    """Monte Carlo estimate (mean, standard error) of the risk under ``query``."""
    if samples < 100:
        raise RcpsError("mc_risk needs at least 100 samples")
    rng = make_rng(seed)
    d = system.d
    loss, lam = query.loss, query.lam
    if query.target == "stationary":
        if not system.contractive:
            raise NotContractiveError("no stationary distribution: spectral radius >= 1")
        vals, vecs = np.linalg.eigh(solve_lyapunov(system).sigma_inf)
        L = vecs * np.sqrt(np.clip(vals, 0.0, None))
        x = rng.standard_normal((samples, d)) @ L.T
        y = x @ system.A.T + system.noise_std * rng.standard_normal((samples, d))
    elif query.target == "conditional":
        x = np.broadcast_to(np.asarray(query.x_next, dtype=float).reshape(1, d), (samples, d))
        y = x @ system.A.T + system.noise_std * rng.standard_normal((samples, d))
    else:
        idx = query.T + query.k           # test pair (x_idx, x_{idx+1})
        xs, ys = [], []
        for n in _chunks(samples, (idx + 1) * d):
            paths = simulate_paths(system, idx, n, rng, init)
            xs.append(paths[:, idx - 1])
            ys.append(paths[:, idx])
        x, y = np.concatenate(xs), np.concatenate(ys)
    r = np.linalg.norm(y - model.predict(x), axis=1)
    return _mean_se(loss(r, lam))


# -- mixing --------------------------------------------------------------------

def estimate_beta_scalar(system: LtiSystem, k: int, t: int, samples: int, seed: int,
                         init="zero") -> Tuple[float, float]:
    """Monte Carlo E[TV(law of x_{t+k} given x_t, stationary law)] at a fixed t."""
    if system.d != 1:
        raise RcpsError("estimate_beta_scalar requires d == 1")
    if not system.contractive:
        raise NotContractiveError("mixing estimate requires a contractive system")
    if k < 1 or t < 1:
        raise RcpsError("k and t must be >= 1")
    if system.noise_std <= 0:
        raise RcpsError("mixing estimate requires positive noise")
    a = system.a
    q = system.noise_std ** 2
    mean, cov = state_moments(system, t, init)
    rng = make_rng(seed)
    x_t = mean[0] + math.sqrt(max(cov[0, 0], 0.0)) * rng.standard_normal(samples)
    a2 = a * a
    var_k = q * k if a2 == 1.0 else q * (1.0 - a2 ** k) / (1.0 - a2)
    s_inf = math.sqrt(float(solve_lyapunov(system).sigma_inf[0, 0]))
    tv = gaussian_tv(a ** k * x_t, math.sqrt(var_k), 0.0, s_inf)
    return _mean_se(tv)


# -- blocking ------------------------------------------------------------------

@dataclass
class BlockFunction:
    """A bounded statistic h of a block, h(x_block, y_block) in [lower, upper].

    ``fn`` maps arrays of shape (N, m, d) to N values.
    """

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lower: float
    upper: float


def block_mean_loss(model, loss: LossSpec, lam: float) -> BlockFunction:
    def fn(x, y):
        N, m, d = x.shape
        pred = model.predict(x.reshape(N * m, d)).reshape(N, m, d)
        r = np.linalg.norm(y - pred, axis=2)
        return loss(r, lam).mean(axis=1)
    return BlockFunction(fn, 0.0, loss.B)


@dataclass
class BlockingReport:
    m: int
    n: int
    block_index: int
    trajectory_mean: float
    stationary_mean: float
    gap: float
    se: float
    certified: float
    holds: bool


def check_blocking_inequality(system: LtiSystem, h: BlockFunction, schedule: BlockSchedule,
                              bound: MixingBound, samples: int, seed: int,
                              block_index: int = 1, init="stationary") -> BlockingReport:
    """Compare E h(block of a trajectory) with E h(m iid stationary pairs).

    Block j holds the pairs Z_t with (t - 1) mod n == j - 1 of a trajectory
    with T = m * n pairs.  The gap must not exceed
    (upper - lower) * m * beta(n) up to Monte Carlo slack.  The bound presumes
    a stationary start; with another ``init`` pick ``block_index`` so the
    first block element has already mixed.
    """
    m, n = schedule.m, schedule.n
    if schedule.trimmed != 0:
        raise RcpsError("blocking check needs T = m * n exactly (trimmed must be 0)")
    if not 1 <= block_index <= n:
        raise RcpsError(f"block index must lie in 1..{n}")
    if not system.contractive:
        raise NotContractiveError("blocking check requires a contractive system")
    T, d = schedule.T_used, system.d
    rng = make_rng(seed)
    idx = np.arange(block_index - 1, T, n)          # 0-based pair indices in block j
    traj_vals = []
    for size in _chunks(samples, (T + 1) * d):
        paths = simulate_paths(system, T, size, rng, init)
        traj_vals.append(h.fn(paths[:, idx], paths[:, idx + 1]))
    traj_vals = np.concatenate(traj_vals)

    vals, vecs = np.linalg.eigh(solve_lyapunov(system).sigma_inf)
    L = vecs * np.sqrt(np.clip(vals, 0.0, None))
    x = rng.standard_normal((samples, m, d)) @ L.T
    y = x @ system.A.T + system.noise_std * rng.standard_normal((samples, m, d))
    stat_vals = np.asarray(h.fn(x, y))

    mt, st = _mean_se(traj_vals)
    ms, ss = _mean_se(stat_vals)
    gap = abs(ms - mt)
    se = math.hypot(st, ss)
    certified = (h.upper - h.lower) * m * bound.bound(n)
    return BlockingReport(m, n, block_index, mt, ms, gap, se, certified,
                          gap <= certified + MC_SLACK * se)


# -- decoupling discrepancy ----------------------------------------------------

def eta_paths(setting: ScalarSetting, states: np.ndarray, weights, lam: float,
              loss: LossSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Per-path (conditional test risk, eta) for scalar states of shape (N, T + 1).

    Conditioning on the first t - 1 pairs fixes x_t (the initial state is
    treated as known), so each one-step-ahead expected loss is a Gaussian
    expectation in x_t.
    """
    p = setting.conditional_risk(states, lam, loss)     # p[:, t-1] = E[l_t | past], t=1..T+1
    w = np.asarray(weights, dtype=float)
    test = p[:, -1]
    return test, test - p[:, :-1] @ w


def eta_oracle(system: LtiSystem, model, trajectory: Trajectory, weights, lam: float,
               loss: LossSpec = LossSpec(), init="zero") -> Tuple[float, float]:
    """(conditional risk of the next pair, eta) for one realized trajectory."""
    setting = _eta_setting(system, model, init)
    weights = weights_from_preset(weights, trajectory.T)
    test, eta = eta_paths(setting, trajectory.states[:, 0][None, :], weights, lam, loss)
    return float(test[0]), float(eta[0])


def _eta_setting(system, model, init):
    try:
        return ScalarSetting(system, model, init)
    except RcpsError:
        raise RcpsError("η oracle requires scalar linear setting")


def estimate_eta(system: LtiSystem, model, weights, lam: float, T: int, samples: int,
                 seed: int, loss: LossSpec = LossSpec(), init="zero") -> Tuple[float, float]:
    """Monte Carlo mean and standard error of eta(w) at a fixed radius."""
    setting = _eta_setting(system, model, init)
    weights = weights_from_preset(weights, T)
    rng = make_rng(seed)
    etas = []
    for size in _chunks(samples, T + 1):
        paths = simulate_paths(system, T, size, rng, init)[:, :, 0]
        etas.append(eta_paths(setting, paths, weights, lam, loss)[1])
    return _mean_se(np.concatenate(etas))


# -- coverage experiments ------------------------------------------------------

@dataclass
class TrialRecord:
    index: int
    seed: int
    status: str = "ok"
    lambda_hat: Optional[float] = None
    gamma: Optional[float] = None
    nu: Optional[float] = None
    eta: Optional[float] = None
    true_risk: Optional[float] = None
    stationary_risk: Optional[float] = None
    certified_level: Optional[float] = None
    vacuous: Optional[bool] = None
    success: bool = False
    error: Optional[str] = None


@dataclass
class ExperimentReport:
    config: dict
    target: str
    trials: int
    success_count: int
    failures: int
    vacuous_count: int
    epsilon: float
    delta: float
    gamma: Optional[float]
    nu: Optional[float]
    eta_mean: Optional[float]
    mean_true_risk: Optional[float]
    records: List[TrialRecord] = field(default_factory=list)

    @property
    def coverage_rate(self) -> float:
        return self.success_count / self.trials

    @property
    def standard_error(self) -> float:
        p = self.coverage_rate
        return math.sqrt(p * (1.0 - p) / self.trials)

    @property
    def meets_target(self) -> bool:
        return self.coverage_rate >= 1.0 - self.delta - MC_SLACK * self.standard_error

    def summary(self) -> str:
        flag = "" if self.vacuous_count == 0 else f", {self.vacuous_count} vacuous"
        fail = "" if self.failures == 0 else f", {self.failures} failed"
        return (f"coverage {self.coverage_rate:.4f} +/- {self.standard_error:.4f} "
                f"vs 1-delta = {1.0 - self.delta:.4f} ({self.success_count}/{self.trials}"
                f"{flag}{fail}) [{'ok' if self.meets_target else 'BELOW'}]")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["coverage_rate"] = self.coverage_rate
        out["standard_error"] = self.standard_error
        out["meets_target"] = self.meets_target
        return out


def _worker_count(workers: Optional[int]) -> int:
    if workers is None:
        try:
            workers = int(os.environ.get("RCPS_THREADS", "1"))
        except ValueError:
            workers = 1
    if workers <= 0:
        workers = os.cpu_count() or 1
    return workers


def coverage_experiment(config: ExperimentConfig, workers: Optional[int] = None,
                        keep_records: bool = True) -> ExperimentReport:
    """Repeat simulate -> calibrate -> exact true risk over independent trials.

    The target risk follows the rule: stationary for ``iid_standard`` and
    ``blocked``, the lag-``lag_k`` marginal when ``lag_k`` is set, and the
    risk of the next pair conditional on the realized trajectory for
    ``weighted`` (whose success level also adds the per-trial eta).
    """
    system = config.build_system()
    model = config.build_model()
    loss = config.loss_spec()
    setting = ScalarSetting(system, model, config.init)
    T, rule = config.T, config.rule
    if rule == "weighted" and config.weights is None:
        raise ConfigError("rule 'weighted' requires 'weights'")

    bound = None
    if rule == "blocked" or config.lag_k is not None:
        bound = mixing_bound(system, config.margin, config.pair_factor)
    weights = weights_from_preset(config.weights, T) if config.weights is not None else None
    if rule == "weighted":
        target = "conditional"
    elif config.lag_k is not None:
        target = "marginal"
    else:
        target = "stationary"
    if target == "stationary" and not system.contractive:
        raise NotContractiveError("stationary risk target requires a contractive system")

    def run(i: int) -> TrialRecord:
        seed_i = derive_seed(config.seed, i)
        rec = TrialRecord(i, seed_i)
        traj = simulate(system, T, config.init, seed_i)
        try:
            cert = certify(rule, residuals(traj, model), loss, config.epsilon, config.delta,
                           weights=weights, lag_k=config.lag_k, bound=bound, seed=seed_i)
        except RcpsError as exc:
            rec.status, rec.error = "error", str(exc)
            return rec
        lam = cert.lambda_hat
        rec.lambda_hat, rec.gamma, rec.nu = lam, cert.gamma, cert.nu
        rec.vacuous = cert.vacuous
        if system.contractive:
            rec.stationary_risk = setting.stationary_risk(lam, loss)
        level = cert.certified_risk
        if target == "conditional":
            test, eta = eta_paths(setting, traj.states[:, 0][None, :], cert.weights, lam, loss)
            rec.true_risk, rec.eta = float(test[0]), float(eta[0])
            level += rec.eta
        elif target == "marginal":
            rec.true_risk = setting.marginal_risk(config.lag_k, T, lam, loss)
        else:
            rec.true_risk = rec.stationary_risk
        rec.certified_level = level
        rec.success = bool(rec.true_risk <= level)
        return rec

    n_workers = _worker_count(workers)
    if n_workers == 1:
        records = [run(i) for i in range(config.trials)]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            records = list(pool.map(run, range(config.trials)))

    ok = [r for r in records if r.status == "ok"]

    def avg(name):
        vals = [getattr(r, name) for r in ok if getattr(r, name) is not None]
        return math.fsum(vals) / len(vals) if vals else None

    return ExperimentReport(
        config=config.to_dict(), target=target, trials=config.trials,
        success_count=sum(r.success for r in records),
        failures=len(records) - len(ok),
        vacuous_count=sum(bool(r.vacuous) for r in ok),
        epsilon=config.epsilon, delta=config.delta,
        gamma=avg("gamma"), nu=avg("nu"), eta_mean=avg("eta"),
        mean_true_risk=avg("true_risk"),
        records=records if keep_records else [],
    )


def sweep(config: ExperimentConfig, workers: Optional[int] = None) -> List[dict]:
    """One coverage experiment per grid point of the single swept axis."""
    if config.sweep is None:
        raise ConfigError("configuration has no 'sweep' section")
    axis, grid = config.sweep["axis"], config.sweep["grid"]
    rows = []
    for value in grid:
        if axis == "T":
            point = config.replace(T=int(value), sweep=None)
        elif axis == "k":
            point = config.replace(lag_k=int(value), sweep=None)
        elif axis == "epsilon":
            point = config.replace(epsilon=float(value), sweep=None)
        else:
            point = config.replace(weights=value, rule="weighted", sweep=None)
        rep = coverage_experiment(point, workers)
        ok = [r for r in rep.records if r.status == "ok"]
        lam = [r.lambda_hat for r in ok]
        gaps = [abs(r.true_risk - r.stationary_risk) for r in ok
                if r.stationary_risk is not None]
        label = value if not isinstance(value, (dict, list)) else _weights_label(value)
        rows.append({
            "axis": axis, "value": label,
            "lambda_hat_mean": math.fsum(lam) / len(lam) if lam else None,
            "gamma": rep.gamma, "nu": rep.nu, "eta_mean": rep.eta_mean,
            "mean_true_risk": rep.mean_true_risk,
            "mean_abs_gap_to_stationary": math.fsum(gaps) / len(gaps) if gaps else None,
            "coverage_rate": rep.coverage_rate, "standard_error": rep.standard_error,
            "failures": rep.failures, "vacuous_count": rep.vacuous_count,
        })
    return rows


def _weights_label(value) -> str:
    if isinstance(value, dict):
        return ";".join(f"{k}={value[k]}" for k in sorted(value))
    return "explicit"
