"""Point models, ball-shaped nested prediction sets, losses and empirical risk.

Sets are centered balls C_lam(x) = {y : |y - f(x)| <= lam}.  Points on the
boundary count as covered, so every quantity downstream depends on the data
only through the residual norms r_t = |y_t - f(x_t)|.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import RcpsError
from .lti import Trajectory

WEIGHT_SUM_TOL = 1e-12


class LinearModel:
    """f(x) = M x.  For d == 1 this is the scalar predictor a_hat * x."""

    def __init__(self, matrix):
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        if M.ndim != 2 or M.shape[0] != M.shape[1] or not np.all(np.isfinite(M)):
            raise RcpsError("linear model needs a finite square matrix")
        self.matrix = M

    @classmethod
    def scalar(cls, a_hat: float) -> "LinearModel":
        return cls([[float(a_hat)]])

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def a_hat(self) -> float:
        if self.d != 1:
            raise RcpsError("scalar coefficient requested for a model with d > 1")
        return float(self.matrix[0, 0])

    def predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x @ self.matrix.T

    def to_dict(self) -> dict:
        return {"A_hat": self.matrix.tolist()}


class FunctionModel:
    """Wraps a vectorized callable mapping an (N, d) array to an (N, d) array."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray]):
        self.fn = fn

    def predict(self, x) -> np.ndarray:
        return np.asarray(self.fn(np.asarray(x, dtype=float)), dtype=float)


@dataclass(frozen=True)
class LossSpec:
    """Bounded loss that is nonincreasing in the set radius.

    ``indicator``: 1 when the label falls outside the ball (B is forced to 1).
    ``hinge_capped``: min(B, max(0, r - lam) / scale).
    """

    kind: str = "indicator"
    B: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("indicator", "hinge_capped"):
            raise RcpsError(f"unknown loss kind {self.kind!r}")
        if self.kind == "indicator" and self.B != 1.0:
            raise RcpsError("indicator loss has B = 1")
        if not (self.B > 0 and math.isfinite(self.B)):
            raise RcpsError("loss bound B must be positive and finite")
        if not self.scale > 0:
            raise RcpsError("hinge scale must be positive")

    def __call__(self, r, lam) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.kind == "indicator":
            return (r > lam).astype(float)
        return np.minimum(self.B, np.maximum(0.0, r - lam) / self.scale)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "B": self.B, "scale": self.scale}


class NestedPredictor:
    """The family of balls C_lam(x) centered at the model prediction."""

    def __init__(self, model):
        self.model = model

    def center(self, x) -> np.ndarray:
        return self.model.predict(np.atleast_2d(x))

    def contains(self, x, y, lam) -> np.ndarray:
        """Membership of each y_i in C_lam(x_i); the boundary is inside."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        r = np.linalg.norm(y - self.center(x), axis=-1)
        return r <= lam


class WeightVector:
    """Nonnegative weights summing to one."""

    def __init__(self, w, label: str = "custom"):
        w = np.asarray(w, dtype=float).reshape(-1)
        if w.size == 0:
            raise RcpsError("weights must be non-empty")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise RcpsError("weights must be finite and nonnegative")
        total = math.fsum(w)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise RcpsError(f"weights must sum to 1 (got {total!r})")
        w.setflags(write=False)
        self.w = w
        self.label = label

    def __len__(self):
        return self.w.size

    def __array__(self, dtype=None, copy=None):
        return self.w if dtype is None else self.w.astype(dtype)

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.w == self.w[0]))

    @property
    def l2_norm(self) -> float:
        return float(np.sqrt(np.dot(self.w, self.w)))

    @classmethod
    def uniform(cls, T: int) -> "WeightVector":
        return cls(np.full(T, 1.0 / T), "uniform")

    @classmethod
    def exponential(cls, T: int, alpha: float) -> "WeightVector":
        """Exponential smoothing, w_t proportional to alpha**(T - t)."""
        if not 0 < alpha <= 1:
            raise RcpsError("smoothing factor must lie in (0, 1]")
        raw = alpha ** np.arange(T - 1, -1, -1, dtype=float)
        return cls(raw / raw.sum(), f"exponential({alpha!r})")

    @classmethod
    def point_mass(cls, T: int, index: int = -1) -> "WeightVector":
        w = np.zeros(T)
        w[index] = 1.0
        return cls(w, f"point_mass({index})")


def weights_from_preset(preset, T: int) -> WeightVector:
    """Build weights from a preset name or dict such as {"preset": "exponential", "alpha": 0.99}."""
    if isinstance(preset, WeightVector):
        if len(preset) != T:
            raise RcpsError(f"weight vector has length {len(preset)}, expected {T}")
        return preset
    if isinstance(preset, str):
        preset = {"preset": preset}
    if isinstance(preset, dict):
        name = preset.get("preset")
        if name == "uniform":
            return WeightVector.uniform(T)
        if name == "exponential":
            return WeightVector.exponential(T, float(preset.get("alpha", 0.99)))
        if name == "point_mass":
            return WeightVector.point_mass(T, int(preset.get("index", -1)))
        if name == "explicit":
            return WeightVector(preset["values"])
        raise RcpsError(f"unknown weight preset {name!r}")
    return WeightVector(preset)


def residuals(trajectory: Trajectory, model) -> np.ndarray:
    """r_t = ||y_t - f(x_t)|| for t = 1..T."""
    pred = model.predict(trajectory.x)
    r = np.linalg.norm(trajectory.y - pred, axis=1)
    if not np.all(np.isfinite(r)):
        raise RcpsError("model produced non-finite predictions")
    return r


def empirical_risk(res, loss: LossSpec, lam: float,
                   weights: Optional[WeightVector] = None) -> float:
    """Weighted (default uniform) average loss of the residuals at radius ``lam``."""
    res = np.asarray(res, dtype=float)
    losses = loss(res, lam)
    if weights is None:
        return float(np.mean(losses))
    w = np.asarray(weights)
    if w.shape != res.shape:
        raise RcpsError(f"weights have length {w.size}, residuals {res.size}")
    if isinstance(weights, WeightVector) and weights.is_uniform:
        return float(np.mean(losses))
    return float(np.dot(w, losses))
