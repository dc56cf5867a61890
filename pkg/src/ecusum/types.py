"""Shared value types for the ECUSUM toolkit.

Times and rates are dimensionless. The observation model is

    xi_t = mu * (t - tau)^+ + w_t

with occurrences (the instants at which the change may be triggered)
arriving as a Poisson process of rate ``lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum


class Regime(str, Enum):
    """Which measure generates a simulated path.

    ``PRE_CHANGE`` means no change ever happens; ``POST_CHANGE`` means the
    change happened at time zero.
    """

    PRE_CHANGE = "pre"
    POST_CHANGE = "post"

    @classmethod
    def parse(cls, value: str | Regime) -> Regime:
        if isinstance(value, Regime):
            return value
        key = value.strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "pre": cls.PRE_CHANGE,
            "prechange": cls.PRE_CHANGE,
            "inf": cls.PRE_CHANGE,
            "post": cls.POST_CHANGE,
            "postchange": cls.POST_CHANGE,
            "0": cls.POST_CHANGE,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown regime {value!r}; use 'pre' or 'post'") from None


@dataclass(frozen=True)
class DriftChangeSpec:
    """Brownian observation model: post-change drift ``mu`` and occurrence rate ``lam``.

    ``lam == 0`` is accepted (simulation only: no occurrences ever happen);
    closed-form routines call :meth:`require_rate`.
    """

    mu: float
    lam: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.mu) or self.mu == 0.0:
            raise ValueError("mu must be finite and nonzero (no detectable change)")
        if not (self.lam >= 0.0) or math.isnan(self.lam):
            raise ValueError("lam must be >= 0")

    def require_rate(self) -> None:
        if not self.lam > 0.0:
            raise ValueError("closed-form run lengths need an occurrence rate lam > 0")

    @property
    def ratio(self) -> float:
        """The shape parameter mu^2 / lam."""
        self.require_rate()
        return self.mu * self.mu / self.lam


class Threshold(float):
    """Stopping level ``nu >= 0`` for the detector statistic."""

    def __new__(cls, nu: float) -> Threshold:
        value = float(nu)
        if math.isnan(value) or value < 0.0:
            raise ValueError(f"threshold must be >= 0, got {nu!r}")
        return super().__new__(cls, value)

    def __repr__(self) -> str:
        return f"Threshold({float(self)!r})"


@dataclass(frozen=True)
class GeneralizedDrift:
    """Statistic dynamics ``u_t = y0 + a t + b w_t`` between occurrence resets."""

    a: float
    b: float
    y0: float = 0.0

    def __post_init__(self) -> None:
        if self.b == 0.0 or not math.isfinite(self.b):
            raise ValueError("diffusion coefficient b must be finite and nonzero")
        if not math.isfinite(self.a):
            raise ValueError("drift a must be finite")

    @classmethod
    def from_regime(cls, regime: Regime | str, mu: float, y0: float = 0.0) -> GeneralizedDrift:
        return cls(a=loglik_drift(regime, mu), b=mu, y0=y0)


@dataclass(frozen=True)
class RunLengthEstimate:
    """Monte Carlo mean of a stopping time."""

    mean: float
    stderr: float
    n_paths: int
    dt: float
    truncated: int = 0

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.dt > 0.0:
            raise ValueError("dt must be > 0")
        if self.stderr < 0.0:
            raise ValueError("stderr must be >= 0")

    def z_score(self, reference: float) -> float:
        """|mean - reference| in units of stderr (inf when stderr is 0 and they differ)."""
        diff = abs(self.mean - reference)
        if self.stderr == 0.0:
            return 0.0 if diff == 0.0 else math.inf
        return diff / self.stderr


def loglik_drift(regime: Regime | str, mu: float) -> float:
    """Drift of the log-likelihood ratio ``u_t = -mu^2 t / 2 + mu xi_t``.

    Pre-change the drift is ``-mu^2/2``, post-change ``+mu^2/2``; the
    diffusion coefficient is ``mu`` in both cases.
    """
    if mu == 0.0 or not math.isfinite(mu):
        raise ValueError("mu must be finite and nonzero (no detectable change)")
    half = 0.5 * mu * mu
    return half if Regime.parse(regime) is Regime.POST_CHANGE else -half
