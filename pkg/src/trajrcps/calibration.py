"""Risk-controlling calibration of the set radius from one trajectory.

Three selection rules share one search, lam_hat = inf{lam : risk(lam) <= target}:

* ``iid_standard`` -- plain average, target deflated by sqrt(log(1/delta)/T);
* ``blocked``      -- plain average with target epsilon, certified through
                      block mixing (width gamma, optional lag penalty nu);
* ``weighted``     -- weighted average with target epsilon, certified through
                      the martingale width B * ||w||_2 * sqrt(8 log(1/delta)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .exceptions import BurnInError, RcpsError
from .lti import MixingBound
from .predictor import LossSpec, WeightVector, empirical_risk, weights_from_preset

RULES = ("iid_standard", "blocked", "weighted")

# slack on "risk <= epsilon" in the exact indicator paths so float round-off
# in sums of weights never flips feasibility of an exactly-attained level
RISK_TOL = 1e-12
BISECT_TOL = 1e-11


def _check_inputs(res, loss: LossSpec, epsilon: float) -> np.ndarray:
    res = np.asarray(res, dtype=float).reshape(-1)
    if res.size == 0:
        raise RcpsError("at least one residual is required")
    if not np.all(np.isfinite(res)) or np.any(res < 0):
        raise RcpsError("residuals must be finite and nonnegative")
    if not 0.0 <= epsilon <= loss.B:
        raise RcpsError(f"epsilon must lie in [0, B={loss.B}], got {epsilon}")
    return res


def _order_statistic(res: np.ndarray, epsilon: float) -> float:
    T = res.size
    allowed = math.floor(T * (epsilon + RISK_TOL))
    rank = T - allowed
    if rank <= 0:
        return 0.0
    return float(np.partition(res, rank - 1)[rank - 1])


def _weighted_quantile(res: np.ndarray, w: np.ndarray, epsilon: float) -> float:
    vals, inv = np.unique(res, return_inverse=True)
    mass = np.bincount(inv, weights=w, minlength=vals.size)
    # accumulate from the largest residual down: at_or_above[u] = mass of r >= vals[u]
    at_or_above = np.cumsum(mass[::-1])[::-1]
    above = np.append(at_or_above[1:], 0.0)
    limit = epsilon + RISK_TOL
    if vals[0] > 0 and at_or_above[0] <= limit:
        return 0.0
    return float(vals[int(np.argmax(above <= limit))])


def _bisect(risk, epsilon: float, hi: float) -> float:
    # hi is always feasible; returns the feasible end of the final bracket
    if risk(0.0) <= epsilon:
        return 0.0
    lo = 0.0
    while hi - lo > BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):          # bracket is one ulp wide
            break
        if risk(mid) <= epsilon:
            hi = mid
        else:
            lo = mid
    return hi


def calibrate_blocked(res, loss: LossSpec, epsilon: float, method: str = "auto") -> float:
    """Smallest radius whose uniform empirical risk over all pairs is <= epsilon.

    With the indicator loss this is an order statistic of the residuals;
    other losses are handled by bisection (``method="bisect"`` forces it).
    """
    res = _check_inputs(res, loss, epsilon)
    if method == "auto" and loss.kind == "indicator":
        return _order_statistic(res, epsilon)
    return _bisect(lambda lam: empirical_risk(res, loss, lam), epsilon, float(res.max()))


def iid_target(epsilon: float, delta: float, T: int) -> float:
    return epsilon - math.sqrt(math.log(1.0 / delta) / T)


def calibrate_iid_standard(res, loss: LossSpec, epsilon: float, delta: float,
                           method: str = "auto") -> float:
    """Standard RCPS for iid data: search at the Hoeffding-deflated target."""
    if not 0 < delta < 1:
        raise RcpsError("delta must lie in (0, 1)")
    res = _check_inputs(res, loss, epsilon)
    target = iid_target(epsilon, delta, res.size)
    if target < 0:
        raise RcpsError(
            f"insufficient samples for standard RCPS: deflated target {target:.6g} < 0")
    return calibrate_blocked(res, loss, target, method)


def calibrate_weighted(res, loss: LossSpec, epsilon: float, weights,
                       method: str = "auto") -> float:
    """Smallest radius whose weighted empirical risk is <= epsilon."""
    res = _check_inputs(res, loss, epsilon)
    weights = weights_from_preset(weights, res.size)
    if weights.is_uniform:
        return calibrate_blocked(res, loss, epsilon, method)
    if method == "auto" and loss.kind == "indicator":
        return _weighted_quantile(res, np.asarray(weights), epsilon)
    return _bisect(lambda lam: empirical_risk(res, loss, lam, weights), epsilon,
                   float(res.max()))


# -- certificate terms ---------------------------------------------------------

@dataclass(frozen=True)
class BlockSchedule:
    """n interleaved blocks of length m over the last T_used = m * n pairs."""

    m: int
    n: int
    trimmed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise RcpsError("block length and count must be positive")
        if not 0 <= self.trimmed:
            raise RcpsError("trimmed must be nonnegative")

    @property
    def T_used(self) -> int:
        return self.m * self.n

    @property
    def T(self) -> int:
        return self.T_used + self.trimmed

    @classmethod
    def for_length(cls, T: int, n: int) -> "BlockSchedule":
        if not 1 <= n <= T:
            raise RcpsError(f"trajectory shorter than burn-in: n = {n} > T = {T}")
        m = T // n
        return cls(m, n, T - m * n)


def gamma_blocked(schedule: BlockSchedule, delta: float, B: float,
                   beta_at_n: float) -> float:
    """Block-Hoeffding width sqrt(log(n / (delta - B T beta(n))) / m)."""
    product = B * schedule.T_used * beta_at_n
    if not delta > product:
        raise BurnInError(
            f"burn-in unsatisfied: delta <= B*T*beta(n) (delta={delta!r}, B*T*beta(n)={product!r})",
            product)
    return math.sqrt(math.log(schedule.n / (delta - product)) / schedule.m)


def choose_blocks(T: int, delta: float, B: float, bound: MixingBound,
                  use_pair_factor: bool = True) -> Tuple[BlockSchedule, float]:
    """Block count from the geometric mixing bound and the matching width.

    n = ceil(log(4 Gamma B T / delta) / (1 - rho)),  gamma = sqrt(log(2n/delta) / m).
    """
    if not 0 < delta < 1:
        raise RcpsError("delta must lie in (0, 1)")
    gamma_c = bound.effective_gamma if use_pair_factor else bound.gamma_const
    rho = bound.decay_rate
    arg = 4.0 * gamma_c * B * T / delta
    n = 1 if arg <= 1.0 else max(1, math.ceil(math.log(arg) / (1.0 - rho)))
    while True:
        schedule = BlockSchedule.for_length(T, n)
        if 2.0 * B * schedule.T_used * gamma_c * rho ** n <= delta / 2.0:
            break
        n += 1
    return schedule, math.sqrt(math.log(2.0 * n / delta) / schedule.m)


def nu_lag(k: int, B: float, bound: MixingBound) -> float:
    """Lag-k nonstationarity penalty min(B, B * beta(k))."""
    if k < 1:
        raise RcpsError("lag k must be >= 1")
    return min(B, B * bound.bound(k))


def gamma_weighted(weights, B: float, delta: float) -> float:
    """Weighted width B * ||w||_2 * sqrt(8 log(1/delta))."""
    if not 0 < delta < 1:
        raise RcpsError("delta must lie in (0, 1)")
    if not isinstance(weights, WeightVector):
        weights = WeightVector(weights)
    return B * weights.l2_norm * math.sqrt(8.0 * math.log(1.0 / delta))


# -- certificates --------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CalibrationCertificate:
    lambda_hat: float
    epsilon: float
    delta: float
    gamma: float
    rule: str
    B: float = 1.0
    nu: Optional[float] = None
    schedule: Optional[BlockSchedule] = None
    weights: Optional[WeightVector] = None
    lag_k: Optional[int] = None
    seed: Optional[int] = None

    @property
    def certified_risk(self) -> float:
        return self.epsilon + self.gamma + (self.nu or 0.0)

    @property
    def vacuous(self) -> bool:
        return self.certified_risk >= self.B

    def to_record(self) -> dict:
        """Flat key/value view; weights appear as a plain list."""
        s = self.schedule
        return {
            "rule": self.rule,
            "lambda_hat": self.lambda_hat,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "gamma": self.gamma,
            "nu": self.nu,
            "B": self.B,
            "certified_risk": self.certified_risk,
            "vacuous": self.vacuous,
            "m": s.m if s else None,
            "n": s.n if s else None,
            "T_used": s.T_used if s else None,
            "trimmed": s.trimmed if s else None,
            "lag_k": self.lag_k,
            "seed": self.seed,
            "weights_label": self.weights.label if self.weights is not None else None,
            "weights": self.weights.w.tolist() if self.weights is not None else None,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "CalibrationCertificate":
        schedule = None
        if rec.get("m") is not None:
            schedule = BlockSchedule(int(rec["m"]), int(rec["n"]), int(rec["trimmed"]))
        weights = None
        if rec.get("weights") is not None:
            weights = WeightVector(rec["weights"], rec.get("weights_label") or "custom")
        return cls(
            lambda_hat=float(rec["lambda_hat"]), epsilon=float(rec["epsilon"]),
            delta=float(rec["delta"]), gamma=float(rec["gamma"]), rule=rec["rule"],
            B=float(rec["B"]), nu=None if rec.get("nu") is None else float(rec["nu"]),
            schedule=schedule, weights=weights,
            lag_k=None if rec.get("lag_k") is None else int(rec["lag_k"]),
            seed=None if rec.get("seed") is None else int(rec["seed"]),
        )


def certify(rule: str, res, loss: LossSpec, epsilon: float, delta: float, *,
            schedule: Optional[BlockSchedule] = None, weights=None,
            lag_k: Optional[int] = None, bound: Optional[MixingBound] = None,
            seed: Optional[int] = None) -> CalibrationCertificate:
    """Calibrate with ``rule`` and attach the guarantee terms it supports.

    ``blocked`` needs ``bound`` (the schedule is derived from it when not
    given); ``weighted`` needs ``weights``.  nu is attached whenever both
    ``lag_k`` and ``bound`` are present.
    """
    if rule not in RULES:
        raise RcpsError(f"unknown rule {rule!r}; expected one of {RULES}")
    if not 0 < delta < 1:
        raise RcpsError("delta must lie in (0, 1)")
    res = _check_inputs(res, loss, epsilon)
    B = loss.B
    used_weights = None

    if rule == "iid_standard":
        lam = calibrate_iid_standard(res, loss, epsilon, delta)
        gamma = 0.0
    elif rule == "blocked":
        if bound is None:
            raise RcpsError("rule 'blocked' requires option 'bound'")
        if schedule is None:
            schedule, _ = choose_blocks(res.size, delta, B, bound)
        elif schedule.T != res.size:
            raise RcpsError(
                f"schedule covers {schedule.T} pairs but {res.size} residuals were given")
        gamma = gamma_blocked(schedule, delta, B, bound.bound(schedule.n))
        # oldest pairs are dropped so the remainder splits into whole blocks
        lam = calibrate_blocked(res[schedule.trimmed:], loss, epsilon)
    else:
        if weights is None:
            raise RcpsError("rule 'weighted' requires option 'weights'")
        used_weights = weights_from_preset(weights, res.size)
        lam = calibrate_weighted(res, loss, epsilon, used_weights)
        gamma = gamma_weighted(used_weights, B, delta)

    nu = None
    if lag_k is not None and bound is not None:
        nu = nu_lag(lag_k, B, bound)
    return CalibrationCertificate(
        lambda_hat=lam, epsilon=epsilon, delta=delta, gamma=gamma, rule=rule, B=B,
        nu=nu, schedule=schedule if rule == "blocked" else None, weights=used_weights,
        lag_k=lag_k, seed=seed)
