"""Experiment configuration: one JSON-compatible record shared by the CLI and harness."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Optional

from .exceptions import ConfigError
from .lti import LtiSystem
from .predictor import LinearModel, LossSpec

RULE_ALIASES = {"iid": "iid_standard", "iid_standard": "iid_standard",
                "blocked": "blocked", "weighted": "weighted"}
SWEEP_AXES = ("T", "k", "epsilon", "weights")
FORMATS = ("json", "csv")


def _matrix(value, name):
    if isinstance(value, (int, float)):
        return [[float(value)]]
    try:
        rows = [[float(v) for v in row] for row in value]
    except TypeError:
        raise ConfigError(f"{name} must be a number or a row-major array of rows")
    if not rows or any(len(r) != len(rows) for r in rows):
        raise ConfigError(f"{name} must be square")
    return rows


@dataclass
class ExperimentConfig:
    seed: int
    system: Optional[dict] = None
    model: Optional[dict] = None
    loss: dict = field(default_factory=lambda: {"kind": "indicator", "B": 1.0, "scale": 1.0})
    rule: str = "blocked"
    epsilon: float = 0.1
    delta: float = 0.1
    T: int = 1000
    lag_k: Optional[int] = None
    weights: Any = None
    trials: int = 100
    init: Any = "zero"
    margin: float = 0.5
    pair_factor: float = 2.0
    residuals_path: Optional[str] = None
    out: Optional[str] = None
    format: str = "json"
    sweep: Optional[dict] = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        if data.get("seed") is None:
            raise ConfigError("configuration key 'seed' is mandatory")
        cfg = cls(**data)
        cfg.normalize()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **changes) -> "ExperimentConfig":
        data = self.to_dict()
        data.update(changes)
        return ExperimentConfig.from_dict(data)

    def normalize(self):
        """Coerce to canonical types and check ranges; idempotent."""
        try:
            self.seed = int(self.seed)
            self.T = int(self.T)
            self.trials = int(self.trials)
            self.epsilon = float(self.epsilon)
            self.delta = float(self.delta)
            self.margin = float(self.margin)
            self.pair_factor = float(self.pair_factor)
            if self.lag_k is not None:
                self.lag_k = int(self.lag_k)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad numeric field: {exc}")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.rule not in RULE_ALIASES:
            raise ConfigError(f"unknown rule {self.rule!r}")
        self.rule = RULE_ALIASES[self.rule]
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if not 0 < self.margin < 1:
            raise ConfigError("margin must lie in (0, 1)")
        if self.lag_k is not None and self.lag_k < 1:
            raise ConfigError("lag_k must be >= 1")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.system is not None:
            extra = set(self.system) - {"A", "noise_std"}
            if extra or "A" not in self.system:
                raise ConfigError("system needs key 'A' and optional 'noise_std' only")
            self.system = {"A": _matrix(self.system["A"], "system.A"),
                           "noise_std": float(self.system.get("noise_std", 1.0))}
        if self.model is not None:
            if set(self.model) != {"A_hat"}:
                raise ConfigError("model needs exactly the key 'A_hat'")
            self.model = {"A_hat": _matrix(self.model["A_hat"], "model.A_hat")}
        extra = set(self.loss) - {"kind", "B", "scale"}
        if extra:
            raise ConfigError(f"unknown loss keys: {sorted(extra)}")
        self.loss = {"kind": self.loss.get("kind", "indicator"),
                     "B": float(self.loss.get("B", 1.0)),
                     "scale": float(self.loss.get("scale", 1.0))}
        self.loss_spec()
        if not 0 <= self.epsilon <= self.loss["B"]:
            raise ConfigError("epsilon must lie in [0, B]")
        if isinstance(self.init, str):
            if self.init not in ("zero", "stationary"):
                raise ConfigError("init must be 'zero', 'stationary' or a vector")
        else:
            try:
                self.init = [float(v) for v in self.init]
            except TypeError:
                raise ConfigError("init must be 'zero', 'stationary' or a vector")
        if self.sweep is not None:
            if set(self.sweep) != {"axis", "grid"}:
                raise ConfigError("sweep needs exactly the keys 'axis' and 'grid'")
            if self.sweep["axis"] not in SWEEP_AXES:
                raise ConfigError(
                    f"sweep axis must be one of {SWEEP_AXES} (exactly one axis per sweep)")
            if not isinstance(self.sweep["grid"], list) or not self.sweep["grid"]:
                raise ConfigError("sweep grid must be a non-empty list")
        for name in ("epsilon", "delta", "margin", "pair_factor"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")

    def build_system(self) -> LtiSystem:
        if self.system is None:
            raise ConfigError("configuration key 'system' is required for this command")
        return LtiSystem(self.system["A"], self.system["noise_std"])

    def build_model(self) -> LinearModel:
        if self.model is None:
            raise ConfigError("configuration key 'model' is required for this command")
        return LinearModel(self.model["A_hat"])

    def loss_spec(self) -> LossSpec:
        try:
            return LossSpec(**self.loss)
        except ValueError as exc:
            raise ConfigError(str(exc))
