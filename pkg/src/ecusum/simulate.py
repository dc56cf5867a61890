"""Path-level Monte Carlo for the ECUSUM and CUSUM detectors.

Each path is simulated on a grid of step ``dt`` that is split at every
occurrence, so the reset ``y <- max(y, 0)`` happens at the exact arrival
instant. Per step the observation increment is

    dxi = c h + sqrt(h) Z,    du = -mu^2 h / 2 + mu dxi,

with ``c = 0`` before the change and ``c = mu`` after it, which is the
same arithmetic :mod:`ecusum.stream` applies to recorded data.

Random numbers come from a Philox stream keyed by the seed and addressed by
path index, so results do not depend on how paths are assigned to workers.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Sequence, TextIO

import numba as nb
import numpy as np

from . import _philox
from .analytic import expected_run_length
from .types import DriftChangeSpec, GeneralizedDrift, Regime, RunLengthEstimate, Threshold, loglik_drift

CROSSED = 0
HORIZON = 1

REPORT_HEADER = ("regime", "mu", "lambda", "nu", "y0", "dt", "n_paths", "seed", "mean", "stderr", "truncated")


class TruncationError(RuntimeError):
    """Too many paths hit the simulation horizon without stopping."""

    def __init__(self, truncated: int, n_paths: int, limit: float):
        self.truncated = truncated
        self.n_paths = n_paths
        self.limit = limit
        super().__init__(f"{truncated} of {n_paths} paths truncated (limit {limit:.3%} of paths)")


@dataclass(frozen=True)
class EcusumState:
    """Detector state: statistic ``y``, elapsed time and whether it stopped."""

    y: float = 0.0
    stopped: bool = False
    elapsed: float = 0.0


def step_ecusum(state: EcusumState, du: float, occurrence: bool, nu: float, dt: float = 0.0) -> EcusumState:
    """Advance the statistic by ``du``; clip at zero on an occurrence; stop at ``nu``."""
    if state.stopped:
        raise ValueError("detector already stopped")
    y = state.y + du
    if occurrence:
        y = max(y, 0.0)
    return EcusumState(y=y, stopped=y >= nu, elapsed=state.elapsed + dt)


def step_cusum(state: EcusumState, du: float, nu: float, dt: float = 0.0) -> EcusumState:
    """Classical CUSUM: every instant acts as an occurrence."""
    return step_ecusum(state, du, True, nu, dt)


@dataclass(frozen=True)
class SimConfig:
    """Monte Carlo settings.

    ``dt=None`` resolves to ``min(1e-3, 0.02 / mu^2)``; ``max_time=None``
    to 50 times the analytic mean when one exists, else ``1e4``.
    """

    n_paths: int = 10_000
    seed: int = 0
    dt: float | None = None
    max_time: float | None = None
    bridge: bool = False
    max_truncated_fraction: float = 1e-3
    workers: int = 1

    def __post_init__(self) -> None:
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.dt is not None and not self.dt > 0.0:
            raise ValueError("dt must be > 0")
        if self.max_time is not None and not self.max_time > 0.0:
            raise ValueError("max_time must be > 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        _philox.split_seed(self.seed)

    def resolved_dt(self, mu: float) -> float:
        if self.dt is not None:
            return float(self.dt)
        return min(1e-3, 0.01 * 2.0 / (mu * mu))


@dataclass(frozen=True)
class RunLengthSample:
    """Per-path stopping times; truncated paths carry the horizon as their time."""

    times: np.ndarray
    final_y: np.ndarray
    truncated: np.ndarray
    dt: float
    horizon: float

    @property
    def n_truncated(self) -> int:
        return int(self.truncated.sum())


@dataclass(frozen=True)
class MeanEstimate:
    mean: float
    stderr: float
    n_paths: int


@dataclass(frozen=True)
class SimulationReport:
    regime: str
    mu: float
    lam: float
    nu: float
    y0: float
    dt: float
    n_paths: int
    seed: int
    mean: float
    stderr: float
    truncated: int

    def row(self) -> list[str]:
        d = asdict(self)
        return [str(d[k]) if isinstance(d[k], (str, int)) else repr(d[k]) for k in d]


def write_report_csv(reports: Sequence[SimulationReport], fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(REPORT_HEADER)
    for rep in reports:
        writer.writerow(rep.row())


@nb.njit(cache=True, nogil=True)
def _run_path(path, k0, k1, y0, nu, mu, xi_drift, lam, dt, horizon, reflect_always, bridge, rec_t, rec_dxi, rec_occ):
    """Simulate one path; returns ``(time, y, status, n_steps)``.

    When ``rec_t`` is non-empty it receives ``(t, dxi, occ)`` per step and
    must be long enough for the whole path.
    """
    if y0 >= nu:
        return 0.0, y0, CROSSED, 0
    record = rec_t.shape[0] > 0
    half_mu2 = -0.5 * mu * mu
    mu2 = mu * mu
    t = 0.0
    y = y0
    n_arr = 0
    next_occ = math.inf
    if lam > 0.0:
        next_occ = -math.log(_philox.uniform_at(0, _philox.ARRIVAL, path, k0, k1)) / lam
    j = 0
    z_spare = 0.0
    while True:
        t_new = t + dt
        occ = False
        if next_occ <= t_new:
            t_new = next_occ
            occ = True
        at_horizon = False
        if t_new >= horizon:
            if t_new > horizon:
                occ = False
            t_new = horizon
            at_horizon = True
        h = t_new - t
        if (j & 1) == 0:
            u0, u1 = _philox.uniform_pair(j >> 1, _philox.NORMAL, path, k0, k1)
            rad = math.sqrt(-2.0 * math.log(u0))
            z = rad * math.cos(2.0 * math.pi * u1)
            z_spare = rad * math.sin(2.0 * math.pi * u1)
        else:
            z = z_spare
        dxi = xi_drift * h + math.sqrt(h) * z
        du = half_mu2 * h + mu * dxi
        y_prev = y
        y = y + du
        crossed = False
        bridged = False
        if bridge and y < nu and h > 0.0:
            u = _philox.uniform_at(j, _philox.UNIFORM, path, k0, k1)
            if u < math.exp(-2.0 * (nu - y_prev) * (nu - y) / (mu2 * h)):
                crossed = True
                bridged = True
        if occ or reflect_always:
            if y < 0.0:
                y = 0.0
        if y >= nu:
            crossed = True
        if record:
            rec_t[j] = t_new
            rec_dxi[j] = dxi
            rec_occ[j] = occ
        j += 1
        t = t_new
        if occ:
            n_arr += 1
            next_occ = t - math.log(_philox.uniform_at(n_arr, _philox.ARRIVAL, path, k0, k1)) / lam
        if crossed:
            if bridged:
                y = nu
            return t, y, CROSSED, j
        if at_horizon:
            return t, y, HORIZON, j


@nb.njit(cache=True, nogil=True)
def _run_paths(start, stop, k0, k1, y0, nu, mu, xi_drift, lam, dt, horizon, reflect_always, bridge, out_t, out_y, out_status):
    empty_f = np.empty(0, np.float64)
    empty_b = np.empty(0, np.bool_)
    for i in range(start, stop):
        tt, yy, st, _ = _run_path(
            np.uint64(i), k0, k1, y0, nu, mu, xi_drift, lam, dt, horizon, reflect_always, bridge, empty_f, empty_f, empty_b
        )
        out_t[i] = tt
        out_y[i] = yy
        out_status[i] = st


def _xi_drift(model: Regime | str | GeneralizedDrift, mu: float) -> tuple[float, float]:
    """Map a regime or generalized drift to ``(mu, observation drift c)``."""
    if isinstance(model, GeneralizedDrift):
        b = model.b
        return b, (model.a + 0.5 * b * b) / b
    regime = Regime.parse(model)
    return mu, (mu if regime is Regime.POST_CHANGE else 0.0)


def _default_horizon(a: float, b: float, lam: float, nu: float, y0: float, reflect_always: bool) -> float:
    if lam > 0.0 and not reflect_always:
        return 50.0 * max(expected_run_length(min(y0, nu), nu, a, b, lam), 1e-3)
    return 1e4


def _simulate(
    mu: float,
    xi_drift: float,
    lam: float,
    nu: float,
    y0: float,
    cfg: SimConfig,
    horizon: float,
    reflect_always: bool = False,
) -> RunLengthSample:
    nu = float(Threshold(nu))
    if y0 > nu:
        raise ValueError("initial value y0 must not exceed the threshold")
    dt = cfg.resolved_dt(mu)
    k0, k1 = _philox.split_seed(cfg.seed)
    n = cfg.n_paths
    out_t = np.empty(n)
    out_y = np.empty(n)
    out_status = np.empty(n, dtype=np.int64)
    args = (np.uint64(k0), np.uint64(k1), float(y0), nu, float(mu), float(xi_drift), float(lam), dt, float(horizon),
            bool(reflect_always), bool(cfg.bridge), out_t, out_y, out_status)
    if cfg.workers == 1 or n < 2 * cfg.workers:
        _run_paths(0, n, *args)
    else:
        bounds = np.linspace(0, n, cfg.workers + 1).astype(int)
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_run_paths, int(lo), int(hi), *args) for lo, hi in zip(bounds[:-1], bounds[1:])]
            for fut in futures:
                fut.result()
    return RunLengthSample(times=out_t, final_y=out_y, truncated=out_status == HORIZON, dt=dt, horizon=float(horizon))


def simulate_run_length(
    regime: Regime | str | GeneralizedDrift,
    spec: DriftChangeSpec,
    nu: float,
    y0: float = 0.0,
    cfg: SimConfig = SimConfig(),
    variant: str = "ecusum",
) -> RunLengthSample:
    """Sample the stopping time of the detector started at ``y0``.

    ``regime`` may also be a :class:`GeneralizedDrift`, in which case its
    ``(a, b)`` replace the regime drift and ``mu`` (``y0`` still comes from
    the argument). Raises :class:`TruncationError` when more than
    ``cfg.max_truncated_fraction`` of the paths reach the horizon.
    """
    if variant not in ("ecusum", "cusum"):
        raise ValueError("variant must be 'ecusum' or 'cusum'")
    reflect = variant == "cusum"
    mu_eff, c = _xi_drift(regime, spec.mu)
    if isinstance(regime, GeneralizedDrift):
        a, b = regime.a, regime.b
    else:
        a, b = loglik_drift(regime, spec.mu), spec.mu
    horizon = cfg.max_time if cfg.max_time is not None else _default_horizon(a, b, spec.lam, float(nu), y0, reflect)
    sample = _simulate(mu_eff, c, spec.lam, nu, y0, cfg, horizon, reflect)
    if sample.n_truncated > cfg.max_truncated_fraction * cfg.n_paths:
        raise TruncationError(sample.n_truncated, cfg.n_paths, cfg.max_truncated_fraction)
    return sample


def _mean_stderr(x: np.ndarray) -> tuple[float, float]:
    n = x.shape[0]
    mean = float(np.mean(x))
    if n < 2:
        return mean, 0.0
    return mean, float(np.std(x, ddof=1) / math.sqrt(n))


def monte_carlo_run_length(
    regime: Regime | str | GeneralizedDrift,
    spec: DriftChangeSpec,
    nu: float,
    y0: float = 0.0,
    cfg: SimConfig = SimConfig(),
    variant: str = "ecusum",
) -> RunLengthEstimate:
    """Sample mean and standard error of the stopping time."""
    if cfg.n_paths < 2:
        raise ValueError("need at least two paths for a standard error")
    sample = simulate_run_length(regime, spec, nu, y0, cfg, variant)
    mean, se = _mean_stderr(sample.times)
    return RunLengthEstimate(mean=mean, stderr=se, n_paths=cfg.n_paths, dt=sample.dt, truncated=sample.n_truncated)


def truncated_run_length(horizon: float, spec: DriftChangeSpec, nu: float, cfg: SimConfig = SimConfig()) -> MeanEstimate:
    """Pre-change mean of ``min(horizon, S_nu)``."""
    if not horizon > 0.0:
        raise ValueError("horizon must be > 0")
    mu, c = _xi_drift(Regime.PRE_CHANGE, spec.mu)
    sample = _simulate(mu, c, spec.lam, nu, 0.0, replace(cfg, max_time=None), horizon)
    mean, se = _mean_stderr(sample.times)
    return MeanEstimate(mean, se, cfg.n_paths)


def exp_statistic_at_stop(horizon: float, spec: DriftChangeSpec, nu: float, cfg: SimConfig = SimConfig()) -> MeanEstimate:
    """Pre-change mean of ``exp(y)`` at ``min(horizon, S_nu)``, which is at least one."""
    if not horizon > 0.0:
        raise ValueError("horizon must be > 0")
    mu, c = _xi_drift(Regime.PRE_CHANGE, spec.mu)
    sample = _simulate(mu, c, spec.lam, nu, 0.0, replace(cfg, max_time=None), horizon)
    mean, se = _mean_stderr(np.exp(sample.final_y))
    return MeanEstimate(mean, se, cfg.n_paths)


@dataclass(frozen=True)
class RecordedPath:
    """A single simulated path as an observation stream."""

    t: np.ndarray
    dxi: np.ndarray
    occ: np.ndarray
    stop_time: float
    stopped: bool
    final_y: float


def record_path(
    regime: Regime | str,
    spec: DriftChangeSpec,
    nu: float,
    cfg: SimConfig,
    path_index: int = 0,
    variant: str = "ecusum",
) -> RecordedPath:
    """Re-run path ``path_index`` of ``cfg`` and keep its increments and occurrence marks."""
    nu = float(Threshold(nu))
    reflect = variant == "cusum"
    mu, c = _xi_drift(regime, spec.mu)
    a = loglik_drift(regime, spec.mu)
    horizon = cfg.max_time if cfg.max_time is not None else _default_horizon(a, spec.mu, spec.lam, nu, 0.0, reflect)
    dt = cfg.resolved_dt(mu)
    k0, k1 = (np.uint64(w) for w in _philox.split_seed(cfg.seed))
    empty_f = np.empty(0)
    args = (np.uint64(path_index), k0, k1, 0.0, nu, mu, c, float(spec.lam), dt, float(horizon), reflect, bool(cfg.bridge))
    _, _, _, n_steps = _run_path(*args, empty_f, empty_f, np.empty(0, np.bool_))
    size = max(n_steps, 1)
    rec_t, rec_dxi, rec_occ = np.zeros(size), np.zeros(size), np.zeros(size, np.bool_)
    t_stop, y_stop, status, n_steps = _run_path(*args, rec_t, rec_dxi, rec_occ)
    return RecordedPath(rec_t[:n_steps], rec_dxi[:n_steps], rec_occ[:n_steps], t_stop, status == CROSSED, y_stop)
