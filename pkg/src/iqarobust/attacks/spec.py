"""Attack configuration and per-image result records."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from iqarobust.metrics.proxy import ProxyScores

PER_IMAGE_KINDS = ("fgsm", "ifgsm", "mifgsm", "amifgsm", "korhonen", "madc")
UAP_KINDS = ("uap-cumulative", "uap-optimized", "uap-generative")
KINDS = PER_IMAGE_KINDS + UAP_KINDS
ITERATIVE_KINDS = ("ifgsm", "mifgsm", "amifgsm", "korhonen", "madc")

DEFAULT_EPSILON = 4 / 255
DEFAULT_ALPHA = 1 / 255
DEFAULT_ITERATIONS = 10
DEFAULT_MOMENTUM = 0.9


class AttackError(RuntimeError):
    """An attack could not run (bad provider value, divergence, empty training set...)."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    epsilon: float = DEFAULT_EPSILON
    alpha: float = DEFAULT_ALPHA
    iterations: int = DEFAULT_ITERATIONS
    momentum: float = DEFAULT_MOMENTUM
    amplitude: float | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "extra", dict(self.extra))
        self.validate()

    def validate(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; known: {', '.join(KINDS)}")
        for name in ("epsilon", "alpha", "momentum"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be a finite number >= 0, got {value!r}")
        if self.epsilon > 1:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if not isinstance(self.iterations, int) or self.iterations < 0:
            raise ValueError(f"iterations must be a non-negative integer, got {self.iterations!r}")
        if self.kind in ITERATIVE_KINDS and self.iterations < 1:
            raise ValueError(f"{self.kind} needs iterations >= 1")
        if self.kind in UAP_KINDS:
            if self.amplitude is None or not 0 <= self.amplitude <= 1:
                raise ValueError(f"{self.kind} needs an amplitude in [0, 1], got {self.amplitude!r}")
        if self.kind == "madc" and "mse_target" not in self.extra:
            raise ValueError("madc needs extra.mse_target")

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return AttackSpec(**d)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class AttackResult:
    image_id: str
    score_before: float
    score_after: float
    proxy: ProxyScores
    steps_used: int
    spec_digest: str
    flags: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    attacked: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def gain(self):
        return self.score_after - self.score_before

    def to_dict(self):
        return {
            "image_id": self.image_id,
            "score_before": self.score_before,
            "score_after": self.score_after,
            "proxy": self.proxy.to_dict(),
            "steps_used": self.steps_used,
            "spec_digest": self.spec_digest,
            "flags": list(self.flags),
            "extra": dict(self.extra),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            image_id=d["image_id"],
            score_before=float(d["score_before"]),
            score_after=float(d["score_after"]),
            proxy=ProxyScores.from_dict(d["proxy"]),
            steps_used=int(d["steps_used"]),
            spec_digest=d["spec_digest"],
            flags=list(d.get("flags", [])),
            extra=dict(d.get("extra", {})),
        )
