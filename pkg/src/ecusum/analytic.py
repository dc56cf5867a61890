"""Closed-form run lengths of the ECUSUM stopping time.

With ``u_t = y + a t + b w_t``, occurrences at Poisson rate ``lam`` and the
statistic clipped to zero at each occurrence, the mean time for the
statistic to reach ``nu`` from ``y <= nu`` is

    y >= 0:  f(y) = (1/a) [nu - y + A (exp(-k y) - exp(-k nu))]
    y <  0:  f(y) = f(0) + (1/lam) (1 - exp(r y))

with ``k = 2a/b^2``, ``r`` the positive root of ``(b^2/2) r^2 + a r - lam = 0``
and ``A = (b^2 / 2a) (a r / lam - 1)``. ``f`` solves

    a f'(y) + (b^2/2) f''(y) + lam [f(max(y, 0)) - f(y)] = -1,   f(nu) = 0,

and is the unique bounded C^2 solution on ``(-inf, nu]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence, TextIO

from .types import DriftChangeSpec, Threshold

# bisection stopping rules for threshold calibration
_BRACKET_WIDTH = 1e-13
_RESIDUAL_TOL = 1e-11
_MAX_BISECTIONS = 400


@dataclass(frozen=True)
class RateConstants:
    r: float
    A: float


@dataclass(frozen=True)
class SpecializedRates:
    """Rate constants for the post-change (``r0``, ``A0``) and pre-change
    (``r_inf``, ``A_inf``) specializations ``a = +-mu^2/2``, ``b = mu``."""

    r0: float
    r_inf: float
    A0: float
    A_inf: float


@dataclass(frozen=True)
class OperatingPoint:
    """Detection delay and mean time between false alarms at threshold ``nu``."""

    nu: float
    delay: float
    false_alarm_period: float
    mu: float

    @property
    def normalized_delay(self) -> float:
        return 0.5 * self.mu * self.mu * self.delay

    @property
    def normalized_fa(self) -> float:
        return 0.5 * self.mu * self.mu * self.false_alarm_period


@dataclass(frozen=True)
class CurveRow:
    ratio: float
    gamma_norm: float
    ecusum_delay_norm: float
    cusum_delay_norm: float


CURVE_HEADER = ("ratio", "gamma_norm", "ecusum_delay_norm", "cusum_delay_norm")


def _expm1_minus_x(x: float) -> float:
    """``exp(x) - 1 - x`` without cancellation near zero."""
    if abs(x) < 1e-2:
        return x * x * (1 / 2 + x * (1 / 6 + x * (1 / 24 + x * (1 / 120 + x * (1 / 720 + x / 5040)))))
    return math.expm1(x) - x


def _check_params(a: float, b: float, lam: float) -> None:
    if b == 0.0 or not math.isfinite(b):
        raise ValueError("diffusion coefficient b must be finite and nonzero")
    if a == 0.0 or not math.isfinite(a):
        raise ValueError("drift a must be finite and nonzero")
    if not lam > 0.0 or not math.isfinite(lam):
        raise ValueError("occurrence rate lam must be finite and > 0")


def _check_point(y: float, nu: float) -> float:
    nu = float(Threshold(nu))
    if not y <= nu:
        raise ValueError(f"y={y!r} lies above the threshold nu={nu!r}")
    return nu


def rate_constants(a: float, b: float, lam: float) -> RateConstants:
    """Positive root ``r`` of ``(b^2/2) r^2 + a r - lam`` and amplitude ``A``.

    Both are evaluated in cancellation-free form: for ``a > 0`` the root is
    ``2 lam / (a + s)`` and ``a r / lam - 1 = -2 lam b^2 / (a + s)^2`` with
    ``s = sqrt(a^2 + 2 lam b^2)``.
    """
    _check_params(a, b, lam)
    b2 = b * b
    s = math.sqrt(a * a + 2.0 * lam * b2)
    if a > 0.0:
        r = 2.0 * lam / (a + s)
        A = -lam * b2 * b2 / (a * (a + s) ** 2)
    else:
        r = (s - a) / b2
        A = (b2 / (2.0 * a)) * (a * r / lam - 1.0)
    return RateConstants(r=r, A=A)


def specialized_rates(spec: DriftChangeSpec) -> SpecializedRates:
    spec.require_rate()
    q = 2.0 * spec.lam / (spec.mu * spec.mu)
    s = math.sqrt(0.25 + q)
    # r0 = s - 1/2 written to avoid cancellation when q is small
    r0 = q / (s + 0.5)
    r_inf = s + 0.5
    return SpecializedRates(r0=r0, r_inf=r_inf, A0=-r0 / r_inf, A_inf=r_inf / r0)


def _branch_values(y: float, nu: float, a: float, b: float, lam: float, upper: bool) -> tuple[float, float, float]:
    """``(f, f', f'')`` from the requested branch's closed form."""
    rc = rate_constants(a, b, lam)
    k = 2.0 * a / (b * b)
    f0 = (nu - rc.A * math.expm1(-k * nu)) / a
    if upper:
        e = math.exp(-k * y)
        f = ((nu - y) - rc.A * e * math.expm1(-k * (nu - y))) / a
        d1 = (-1.0 - rc.A * k * e) / a
        d2 = rc.A * k * k * e / a
    else:
        e = math.exp(rc.r * y)
        f = f0 - math.expm1(rc.r * y) / lam
        d1 = -rc.r * e / lam
        d2 = -rc.r * rc.r * e / lam
    return f, d1, d2


def run_length_derivatives(
    y: float, nu: float, a: float, b: float, lam: float, branch: str | None = None
) -> tuple[float, float, float]:
    """Value, first and second derivative of the mean run length at ``y``.

    ``branch`` forces the ``"upper"`` (y >= 0) or ``"lower"`` (y < 0)
    formula, which gives one-sided limits at the branch point ``y = 0``.
    """
    nu = _check_point(y, nu)
    if branch is None:
        upper = y >= 0.0
    elif branch in ("upper", "lower"):
        upper = branch == "upper"
    else:
        raise ValueError("branch must be 'upper', 'lower' or None")
    return _branch_values(y, nu, a, b, lam, upper)


def expected_run_length(y: float, nu: float, a: float, b: float, lam: float) -> float:
    """Mean time for the ECUSUM statistic started at ``y`` to reach ``nu``."""
    nu = _check_point(y, nu)
    _check_params(a, b, lam)
    if y == nu:
        return 0.0
    return _branch_values(y, nu, a, b, lam, y >= 0.0)[0]


def delay_g(y: float, nu: float, spec: DriftChangeSpec) -> float:
    """Mean run length when the change happened at time zero."""
    spec.require_rate()
    half = 0.5 * spec.mu * spec.mu
    return expected_run_length(y, nu, half, spec.mu, spec.lam)


def false_alarm_h(y: float, nu: float, spec: DriftChangeSpec) -> float:
    """Mean run length when no change ever happens."""
    spec.require_rate()
    half = 0.5 * spec.mu * spec.mu
    return expected_run_length(y, nu, -half, spec.mu, spec.lam)


def delay_g_derivative(y: float, nu: float, spec: DriftChangeSpec) -> float:
    spec.require_rate()
    half = 0.5 * spec.mu * spec.mu
    return run_length_derivatives(y, nu, half, spec.mu, spec.lam)[1]


def false_alarm_h_derivative(y: float, nu: float, spec: DriftChangeSpec) -> float:
    spec.require_rate()
    half = 0.5 * spec.mu * spec.mu
    return run_length_derivatives(y, nu, -half, spec.mu, spec.lam)[1]


def _ecusum_delay0(nu: float, mu: float, r_inf: float) -> float:
    em = math.expm1(-nu)
    return (2.0 / (mu * mu)) * (_expm1_minus_x(-nu) - em / r_inf)


def _ecusum_fa0(nu: float, mu: float, r0: float) -> float:
    return (2.0 / (mu * mu)) * (_expm1_minus_x(nu) + math.expm1(nu) / r0)


def ecusum_operating_point(nu: float, spec: DriftChangeSpec) -> OperatingPoint:
    """Delay ``g_nu(0)`` and false-alarm period ``h_nu(0)`` of the regular ECUSUM.

    Uses the closed forms obtained with ``r0 * r_inf = 2 lam / mu^2``; the
    bracketed first terms are the classical CUSUM values.
    """
    nu = float(Threshold(nu))
    rates = specialized_rates(spec)
    return OperatingPoint(
        nu=nu,
        delay=_ecusum_delay0(nu, spec.mu, rates.r_inf),
        false_alarm_period=_ecusum_fa0(nu, spec.mu, rates.r0),
        mu=spec.mu,
    )


def cusum_operating_point(nu: float, mu: float) -> OperatingPoint:
    """Classical CUSUM (the ``lam -> inf`` limit)."""
    nu = float(Threshold(nu))
    if mu == 0.0 or not math.isfinite(mu):
        raise ValueError("mu must be finite and nonzero")
    scale = 2.0 / (mu * mu)
    return OperatingPoint(
        nu=nu,
        delay=scale * _expm1_minus_x(-nu),
        false_alarm_period=scale * _expm1_minus_x(nu),
        mu=mu,
    )


def _solve_increasing(func: Callable[[float], float], target: float) -> float:
    """Root of ``func(x) = target`` for ``func`` increasing on ``[0, inf)`` with ``func(0) = 0``."""
    if target == 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    while func(hi) < target:
        lo, hi = hi, 2.0 * hi
        if hi > 1e4:
            raise OverflowError(f"cannot bracket target {target!r}")
    best, best_res = hi, abs(func(hi) - target)
    for _ in range(_MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        val = func(mid)
        res = abs(val - target)
        if res < best_res:
            best, best_res = mid, res
        if res <= _RESIDUAL_TOL or hi - lo <= _BRACKET_WIDTH or mid in (lo, hi):
            break
        if val < target:
            lo = mid
        else:
            hi = mid
    return best


def _check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if math.isnan(gamma) or gamma < 0.0 or math.isinf(gamma):
        raise ValueError(f"gamma must be finite and >= 0, got {gamma!r}")
    return gamma


def calibrate_threshold(gamma: float, spec: DriftChangeSpec) -> Threshold:
    """Threshold whose mean time between false alarms equals ``gamma``."""
    gamma = _check_gamma(gamma)
    rates = specialized_rates(spec)
    return Threshold(_solve_increasing(lambda v: _ecusum_fa0(v, spec.mu, rates.r0), gamma))


def calibrate_cusum_threshold(gamma: float, mu: float) -> Threshold:
    """Classical CUSUM threshold with false-alarm period ``gamma``."""
    gamma = _check_gamma(gamma)
    if mu == 0.0 or not math.isfinite(mu):
        raise ValueError("mu must be finite and nonzero")
    scale = 2.0 / (mu * mu)
    return Threshold(_solve_increasing(lambda v: scale * _expm1_minus_x(v), gamma))


def ode_residual(y: float, nu: float, a: float, b: float, lam: float, branch: str | None = None) -> float:
    """``a f' + (b^2/2) f'' + lam [f(y^+) - f(y)] + 1``, using closed-form derivatives.

    Zero for the true mean run length. At ``y = 0`` pass ``branch`` to pick
    the one-sided derivative.
    """
    nu = _check_point(y, nu)
    f, d1, d2 = run_length_derivatives(y, nu, a, b, lam, branch)
    jump = 0.0
    if y < 0.0:
        jump = lam * (_branch_values(0.0, nu, a, b, lam, True)[0] - f)
    return a * d1 + 0.5 * b * b * d2 + jump + 1.0


def delay_fa_potential(y: float, nu_star: float, spec: DriftChangeSpec) -> float:
    """``exp(y) g(y) - (r0/r_inf) h(y)`` at the calibrated threshold.

    Nonpositive on ``(-inf, nu_star]`` with its maximum, zero, at
    ``nu_star``; its derivative is ``exp(y) g(y)``.
    """
    rates = specialized_rates(spec)
    return math.exp(y) * delay_g(y, nu_star, spec) - (rates.r0 / rates.r_inf) * false_alarm_h(y, nu_star, spec)


def curve_table(ratios: Sequence[float], gamma_grid: Sequence[float]) -> list[CurveRow]:
    """Normalized delay versus normalized false-alarm period for ECUSUM and CUSUM.

    Everything is expressed in units of ``mu^2 (.) / 2``, so a row depends
    only on ``mu^2 / lam``; the computation uses ``mu = 1``, ``lam = 1/ratio``.
    """
    rows: list[CurveRow] = []
    for ratio in ratios:
        if not ratio > 0.0 or not math.isfinite(ratio):
            raise ValueError(f"ratio mu^2/lam must be finite and > 0, got {ratio!r}")
        spec = DriftChangeSpec(mu=1.0, lam=1.0 / ratio)
        rates = specialized_rates(spec)
        for gamma_norm in gamma_grid:
            gamma = 2.0 * _check_gamma(gamma_norm)
            nu_e = calibrate_threshold(gamma, spec)
            nu_c = calibrate_cusum_threshold(gamma, 1.0)
            rows.append(
                CurveRow(
                    ratio=float(ratio),
                    gamma_norm=float(gamma_norm),
                    ecusum_delay_norm=0.5 * _ecusum_delay0(nu_e, 1.0, rates.r_inf),
                    cusum_delay_norm=_expm1_minus_x(-float(nu_c)),
                )
            )
    return rows


def write_curve_csv(rows: Iterable[CurveRow], fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(CURVE_HEADER)
    for row in rows:
        writer.writerow([repr(row.ratio), repr(row.gamma_norm), repr(row.ecusum_delay_norm), repr(row.cusum_delay_norm)])
