"""Exact change-detection performance measures on finite discrete models.

Observations ``x_1..x_H`` take values in a finite alphabet and are i.i.d.
``pre_dist`` up to and including the change time ``tau`` and i.i.d.
``post_dist`` afterwards. ``tau = t`` means ``x_1..x_t`` are pre-change.
Nature triggers the change at ``t`` with probability ``varpi_t * p_t(x_1..x_t)``
where ``E_inf[p_t] = 1``.

Everything is computed by enumerating the prefix tree level by level.
Prefix ``(x_1..x_t)`` is stored at index ``sum_i x_i m^(t-i)`` of the
level-``t`` array (``m`` the alphabet size), so the children of index ``k``
are ``k*m .. k*m + m - 1``.

With ``exact=True`` all arithmetic is done in :class:`fractions.Fraction`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

MAX_PATHS = 1 << 20
_SUM_TOL = 1e-12


class ModelError(ValueError):
    """A model, prior or rule violates one of its invariants."""


class UndefinedMeasureError(ValueError):
    """The conditioning event ``T > tau`` has probability zero."""


class DivergentSupremumError(ValueError):
    """A ratio ``a_t / b_t`` with ``b_t = 0 < a_t`` makes the supremum infinite."""


def _as_numbers(values: Iterable[float], exact: bool) -> np.ndarray:
    if exact:
        return np.array([Fraction(v) for v in values], dtype=object)
    return np.asarray(list(values), dtype=float)


@dataclass(frozen=True, eq=False)
class DiscreteChangeModel:
    horizon: int
    alphabet: tuple[str, ...]
    pre_dist: np.ndarray
    post_dist: np.ndarray
    exact: bool = False

    def __post_init__(self) -> None:
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise ModelError("horizon must be an integer >= 1")
        object.__setattr__(self, "alphabet", tuple(str(s) for s in self.alphabet))
        m = len(self.alphabet)
        if m < 1 or len(set(self.alphabet)) != m:
            raise ModelError("alphabet must be a nonempty set of distinct symbols")
        if m ** self.horizon > MAX_PATHS:
            raise ModelError(f"alphabet^horizon = {m}^{self.horizon} exceeds the enumeration limit {MAX_PATHS}")
        for name in ("pre_dist", "post_dist"):
            raw = [float(v) for v in getattr(self, name)]
            if len(raw) != m:
                raise ModelError(f"{name} must have one probability per symbol")
            if any(not (v >= 0.0) or math.isinf(v) for v in raw):
                raise ModelError(f"{name} entries must be finite and >= 0")
            if abs(math.fsum(raw) - 1.0) > _SUM_TOL:
                raise ModelError(f"{name} must sum to 1 (got {math.fsum(raw)!r})")
            object.__setattr__(self, name, _as_numbers(raw, self.exact))

    @property
    def size(self) -> int:
        return len(self.alphabet)

    def level_probs(self, dist: np.ndarray) -> list[np.ndarray]:
        """Probability of every prefix, one array per length ``0..H``."""
        one = Fraction(1) if self.exact else 1.0
        levels = [np.array([one], dtype=object if self.exact else float)]
        for _ in range(self.horizon):
            levels.append(np.multiply.outer(levels[-1], dist).ravel())
        return levels

    def encode(self, prefix: Sequence[str]) -> int:
        idx = 0
        for sym in prefix:
            try:
                idx = idx * self.size + self.alphabet.index(str(sym))
            except ValueError:
                raise ModelError(f"symbol {sym!r} is not in the alphabet") from None
        return idx

    def decode(self, length: int, index: int) -> tuple[str, ...]:
        out = []
        for _ in range(length):
            index, r = divmod(index, self.size)
            out.append(self.alphabet[r])
        return tuple(reversed(out))

    def sequences(self, length: int) -> Iterable[tuple[str, ...]]:
        for k in range(self.size ** length):
            yield self.decode(length, k)


class StoppingRule:
    """Stop/continue decision for every prefix; all length-``H`` prefixes stop.

    ``decisions[t][k]`` is the rule's own decision at prefix ``k`` of length
    ``t``; decisions below an already-stopped prefix are never consulted.
    """

    def __init__(self, model: DiscreteChangeModel, decisions: Sequence[np.ndarray], name: str = "custom"):
        H, m = model.horizon, model.size
        if len(decisions) != H + 1:
            raise ModelError("a stopping rule needs decisions for prefix lengths 0..H")
        self.model = model
        self.name = name
        self.decisions = [np.asarray(d, dtype=bool).reshape(m**t) for t, d in enumerate(decisions)]
        # T <= t along the prefix
        stopped = [self.decisions[0].copy()]
        for t in range(1, H + 1):
            stopped.append(np.repeat(stopped[-1], m) | self.decisions[t])
        # horizon cap: prefixes still running at H are forced to stop
        self.forced = ~stopped[H]
        stopped[H] = np.ones(m**H, dtype=bool)
        self.stopped = stopped

    @classmethod
    def from_function(cls, model: DiscreteChangeModel, decide: Callable[[tuple[str, ...]], bool], name: str = "custom") -> StoppingRule:
        decisions = [np.array([bool(decide(p)) for p in model.sequences(t)]) for t in range(model.horizon + 1)]
        return cls(model, decisions, name)

    @classmethod
    def from_table(cls, model: DiscreteChangeModel, stop_prefixes: Iterable[Sequence[str]]) -> StoppingRule:
        decisions = [np.zeros(model.size**t, dtype=bool) for t in range(model.horizon + 1)]
        for prefix in stop_prefixes:
            prefix = tuple(prefix)
            if len(prefix) > model.horizon:
                raise ModelError(f"prefix {prefix!r} is longer than the horizon")
            decisions[len(prefix)][model.encode(prefix)] = True
        return cls(model, decisions, "table")

    @classmethod
    def fixed_time(cls, model: DiscreteChangeModel, k: int) -> StoppingRule:
        if not 0 <= k <= model.horizon:
            raise ModelError("fixed stopping time must lie in 0..H")
        decisions = [np.full(model.size**t, t == k) for t in range(model.horizon + 1)]
        return cls(model, decisions, f"fixed-time({k})")

    @classmethod
    def first_symbol(cls, model: DiscreteChangeModel, symbol: str) -> StoppingRule:
        s = model.alphabet.index(str(symbol)) if str(symbol) in model.alphabet else None
        if s is None:
            raise ModelError(f"symbol {symbol!r} is not in the alphabet")
        decisions = [np.zeros(1, dtype=bool)]
        for t in range(1, model.horizon + 1):
            decisions.append(np.arange(model.size**t) % model.size == s)
        return cls(model, decisions, f"first-symbol({symbol})")

    @classmethod
    def likelihood_ratio_threshold(cls, model: DiscreteChangeModel, c: float) -> StoppingRule:
        """Page's CUSUM: stop once ``max(0, W + log post/pre)`` reaches ``c``."""
        pre = np.array([float(v) for v in model.pre_dist])
        post = np.array([float(v) for v in model.post_dist])
        with np.errstate(divide="ignore"):
            llr = np.log(post) - np.log(pre)
        llr = np.where((pre == 0) & (post == 0), 0.0, llr)
        w = np.zeros(1)
        decisions = [w >= c]
        for _ in range(model.horizon):
            w = np.maximum(0.0, np.add.outer(w, llr).ravel())
            decisions.append(w >= c)
        return cls(model, decisions, f"threshold-on-likelihood-ratio({c})")

    def stop_time(self, sequence: Sequence[str]) -> int:
        """``T`` on a full observation sequence."""
        k = 0
        for t in range(self.model.horizon + 1):
            if t > 0:
                k = k * self.model.size + self.model.alphabet.index(sequence[t - 1])
            if self.stopped[t][k]:
                return t
        raise AssertionError("unreachable: every rule stops at H")


@dataclass(eq=False)
class ChangeTimePrior:
    """``varpi_t`` for ``t = 0..H`` and optional history weights ``p_t``.

    ``p`` maps ``t`` to an array over length-``t`` prefixes; missing entries
    mean ``p_t = 1``. ``p_t`` is reset to one wherever ``varpi_t = 0``.
    """

    varpi: Sequence[float]
    p: Mapping[int, Sequence[float]] = field(default_factory=dict)
    name: str = "prior"

    @classmethod
    def deterministic(cls, model: DiscreteChangeModel, k: int) -> ChangeTimePrior:
        varpi = [0.0] * (model.horizon + 1)
        varpi[k] = 1.0
        return cls(varpi, name=f"delta({k})")

    @classmethod
    def geometric(cls, model: DiscreteChangeModel, delta: float) -> ChangeTimePrior:
        """``(1 - delta) delta^t`` renormalized to ``0..H``."""
        if not 0.0 <= delta < 1.0:
            raise ModelError("geometric parameter must lie in [0, 1)")
        w = np.array([(1.0 - delta) * delta**t for t in range(model.horizon + 1)])
        return cls(list(w / w.sum()), name=f"geometric({delta})")

    def resolve(self, model: DiscreteChangeModel) -> tuple[np.ndarray, list[np.ndarray]]:
        """Validated ``(varpi, p)`` in the model's number type."""
        H = model.horizon
        raw = [float(v) for v in self.varpi]
        if len(raw) != H + 1:
            raise ModelError(f"varpi needs {H + 1} entries (t = 0..H), got {len(raw)}")
        if any(not (v >= 0.0) or math.isinf(v) for v in raw):
            raise ModelError("varpi entries must be finite and >= 0")
        if abs(math.fsum(raw) - 1.0) > _SUM_TOL:
            raise ModelError(f"aggregate change probabilities varpi must sum to 1 (got {math.fsum(raw)!r})")
        varpi = _as_numbers(raw, model.exact)
        pre_levels = model.level_probs(model.pre_dist)
        one = Fraction(1) if model.exact else 1.0
        p_levels = []
        for t in range(H + 1):
            if t in self.p and raw[t] > 0.0:
                vals = [float(v) for v in self.p[t]]
                if len(vals) != model.size**t:
                    raise ModelError(f"p_{t} needs one weight per prefix of length {t}")
                if any(not (v >= 0.0) or math.isinf(v) for v in vals):
                    raise ModelError(f"p_{t} weights must be finite and >= 0")
                arr = _as_numbers(vals, model.exact)
                mass = float(np.dot(pre_levels[t], arr))
                if abs(mass - 1.0) > _SUM_TOL:
                    raise ModelError(f"pre-change mean of p_{t} must be 1 (got {mass!r})")
            else:
                arr = np.full(model.size**t, one, dtype=object if model.exact else float)
            p_levels.append(arr)
        return varpi, p_levels


@dataclass(frozen=True)
class MeasureResult:
    """A performance value with its maximizer and horizon-cap error.

    ``cap_error`` is the probability, under the same conditioning as the
    measure, that the stop at the horizon was forced rather than decided.
    """

    value: float | Fraction
    cap_error: float | Fraction
    time: int | None = None
    prefix: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        for name in ("value", "cap_error"):
            v = getattr(self, name)
            if not isinstance(v, Fraction):
                object.__setattr__(self, name, float(v))


@dataclass(frozen=True)
class _Tables:
    pre: list[np.ndarray]
    alive: list[np.ndarray]
    delay: list[np.ndarray]
    forced: list[np.ndarray]


def _tables(model: DiscreteChangeModel, rule: StoppingRule) -> _Tables:
    """Per-prefix ``E_0[(T-t)^+ | x_1..x_t]`` and conditional forced-stop probability."""
    if rule.model is not model:
        raise ModelError("stopping rule was built for a different model")
    H, m = model.horizon, model.size
    zero = Fraction(0) if model.exact else 0.0
    one = Fraction(1) if model.exact else 1.0
    dtype = object if model.exact else float
    delay: list[np.ndarray] = [None] * (H + 1)  # type: ignore[list-item]
    forced: list[np.ndarray] = [None] * (H + 1)  # type: ignore[list-item]
    delay[H] = np.full(m**H, zero, dtype=dtype)
    forced[H] = np.where(rule.forced, one, zero).astype(dtype)
    for t in range(H - 1, -1, -1):
        stop = rule.stopped[t]
        cont_d = delay[t + 1].reshape(m**t, m).dot(model.post_dist)
        cont_f = forced[t + 1].reshape(m**t, m).dot(model.post_dist)
        delay[t] = np.where(stop, zero, one + cont_d).astype(dtype)
        forced[t] = np.where(stop, zero, cont_f).astype(dtype)
    alive = [np.where(rule.stopped[t], zero, one).astype(dtype) for t in range(H + 1)]
    return _Tables(pre=model.level_probs(model.pre_dist), alive=alive, delay=delay, forced=forced)


def _ratio(num, den, what: str):
    if den == 0:
        raise UndefinedMeasureError(f"{what}: probability of stopping after the change is zero")
    return num / den


def conditional_delay(model: DiscreteChangeModel, prior: ChangeTimePrior, rule: StoppingRule) -> MeasureResult:
    """``E_tau[T - tau | T > tau]`` under the randomized change time."""
    varpi, p = prior.resolve(model)
    tab = _tables(model, rule)
    num = den = cap = 0
    for t in range(model.horizon + 1):
        if varpi[t] == 0:
            continue
        w = tab.pre[t] * p[t]
        num = num + varpi[t] * w.dot(tab.delay[t])
        den = den + varpi[t] * w.dot(tab.alive[t])
        cap = cap + varpi[t] * w.dot(tab.forced[t])
    return MeasureResult(_ratio(num, den, "conditional delay"), _ratio(cap, den, "conditional delay"))


def shiryaev_delay(model: DiscreteChangeModel, varpi: Sequence[float], rule: StoppingRule) -> MeasureResult:
    """Delay under a known change-time distribution, history-independent triggering."""
    return conditional_delay(model, ChangeTimePrior(varpi, name="shiryaev"), rule)


def _per_time(model: DiscreteChangeModel, tab: _Tables, t: int):
    return tab.pre[t].dot(tab.delay[t]), tab.pre[t].dot(tab.alive[t]), tab.pre[t].dot(tab.forced[t])


def pollak_delay(model: DiscreteChangeModel, rule: StoppingRule) -> MeasureResult:
    """``max_t E_t[T - t | T > t]``; times with ``P(T > t) = 0`` are skipped."""
    tab = _tables(model, rule)
    best = None
    for t in range(model.horizon):
        num, den, cap = _per_time(model, tab, t)
        if den == 0:
            continue
        value = num / den
        if best is None or value > best.value:
            best = MeasureResult(value, cap / den, time=t)
    if best is None:
        raise UndefinedMeasureError("Pollak delay: the rule never survives past any change time")
    return best


def _essup(model: DiscreteChangeModel, tab: _Tables, times: Iterable[int]) -> MeasureResult:
    best = None
    for t in times:
        if not 0 <= t <= model.horizon:
            raise ModelError(f"change time {t} outside 0..H")
        mask = (tab.pre[t] != 0) & (tab.alive[t] != 0)
        if not mask.any():
            continue
        idx = np.flatnonzero(mask)
        vals = tab.delay[t][idx]
        k = int(idx[int(np.argmax(vals))]) if not model.exact else int(idx[max(range(len(vals)), key=lambda i: (vals[i], -i))])
        if best is None or tab.delay[t][k] > best.value:
            best = MeasureResult(tab.delay[t][k], tab.forced[t][k], time=t, prefix=model.decode(t, k))
    if best is None:
        raise UndefinedMeasureError("Lorden delay: no positive-probability history survives past a change time")
    return best


def lorden_delay(model: DiscreteChangeModel, rule: StoppingRule) -> MeasureResult:
    """Worst conditional delay over change times and pre-change histories."""
    return _essup(model, _tables(model, rule), range(model.horizon + 1))


def extended_lorden_delay(model: DiscreteChangeModel, rule: StoppingRule, times: Iterable[int]) -> MeasureResult:
    """Lorden's worst case with the change restricted to the given instants."""
    times = sorted(set(int(t) for t in times))
    if not times:
        raise ModelError("the set of admissible change times must be nonempty")
    return _essup(model, _tables(model, rule), times)


def randomized_expectation(
    model: DiscreteChangeModel,
    prior: ChangeTimePrior,
    X: Callable[[int, tuple[str, ...]], float] | np.ndarray,
):
    """``sum_t varpi_t E_inf[p_t E_0[X_t | F_t]]`` by full-sequence enumeration.

    ``X`` is either a callable ``(t, full_sequence) -> value`` or an array
    of shape ``(H + 1, m^H)`` indexed like the level-``H`` prefixes.
    """
    varpi, p = prior.resolve(model)
    H, m = model.horizon, model.size
    n = m**H
    if callable(X):
        seqs = list(model.sequences(H))
        values = [[X(t, s) for s in seqs] for t in range(H + 1)]
        X = np.array(values, dtype=object if model.exact else float)
    X = np.asarray(X)
    if X.shape != (H + 1, n):
        raise ModelError(f"X must have shape {(H + 1, n)}")
    if model.exact:
        X = np.array([[Fraction(v) for v in row] for row in X], dtype=object)
    elif (X < 0).any():
        raise ModelError("X must be nonnegative")
    pre = model.level_probs(model.pre_dist)
    post = model.level_probs(model.post_dist)
    total = 0
    for t in range(H + 1):
        if varpi[t] == 0:
            continue
        # weight of a full sequence: P_inf(prefix) p_t(prefix) P_0(suffix)
        w = np.multiply.outer(pre[t] * p[t], post[H - t]).ravel()
        total = total + varpi[t] * w.dot(X[t])
    return total


def sup_ratio(a: Sequence[float], b: Sequence[float]) -> tuple[float, int]:
    """``max_t a_t / b_t`` with ``0/0 = 0``; equals the sup over mixing weights of
    ``sum w a / sum w b``."""
    a = list(a)
    b = list(b)
    if len(a) != len(b) or not a:
        raise ValueError("a and b must be nonempty and of equal length")
    best, arg = -math.inf, -1
    for t, (x, y) in enumerate(zip(a, b)):
        if x < 0 or y < 0:
            raise ValueError("sequences must be nonnegative")
        if y == 0:
            if x > 0:
                raise DivergentSupremumError(f"b[{t}] = 0 < a[{t}] = {x!r}")
            ratio = 0.0
        else:
            ratio = x / y
        if ratio > best:
            best, arg = ratio, t
    return best, arg


# --- structured document -------------------------------------------------


@dataclass
class FrameworkDocument:
    model: DiscreteChangeModel
    rule: StoppingRule
    priors: list[ChangeTimePrior]
    times: list[int] | None


def _parse_prefix(model: DiscreteChangeModel, raw) -> tuple[str, ...]:
    if isinstance(raw, (list, tuple)):
        return tuple(str(s) for s in raw)
    raw = str(raw)
    if all(len(s) == 1 for s in model.alphabet):
        return tuple(raw)
    return tuple(s for s in raw.split(",") if s)


def parse_document(data: Mapping) -> FrameworkDocument:
    """Build model, rule and priors from a parsed TOML mapping."""
    try:
        model = DiscreteChangeModel(
            horizon=int(data["horizon"]),
            alphabet=tuple(data["alphabet"]),
            pre_dist=data["pre_dist"],
            post_dist=data["post_dist"],
            exact=bool(data.get("exact", False)),
        )
    except KeyError as exc:
        raise ModelError(f"missing key {exc.args[0]!r}") from None
    rule_doc = data.get("rule")
    if not isinstance(rule_doc, Mapping):
        raise ModelError("missing [rule] table")
    family = str(rule_doc.get("family", "table"))
    if family == "table":
        stops = [_parse_prefix(model, p) for p in rule_doc.get("stop", [])]
        rule = StoppingRule.from_table(model, stops)
    elif family == "threshold-on-likelihood-ratio":
        rule = StoppingRule.likelihood_ratio_threshold(model, float(rule_doc["c"]))
    elif family == "first-symbol":
        rule = StoppingRule.first_symbol(model, str(rule_doc["symbol"]))
    elif family == "fixed-time":
        rule = StoppingRule.fixed_time(model, int(rule_doc["time"]))
    else:
        raise ModelError(f"unknown rule family {family!r}")
    priors = []
    for k, pd in enumerate(data.get("priors", [])):
        name = str(pd.get("name", f"prior{k}"))
        if "varpi" in pd:
            priors.append(ChangeTimePrior(list(pd["varpi"]), name=name))
        elif "geometric" in pd:
            prior = ChangeTimePrior.geometric(model, float(pd["geometric"]))
            prior.name = name
            priors.append(prior)
        else:
            raise ModelError(f"prior {name!r} needs 'varpi' or 'geometric'")
    for prior in priors:
        prior.resolve(model)
    times = data.get("extended_lorden_times")
    return FrameworkDocument(model, rule, priors, None if times is None else [int(t) for t in times])


def load_document(text: str) -> FrameworkDocument:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ModelError(f"cannot parse document: {exc}") from None
    return parse_document(data)


def _fmt(result: MeasureResult) -> str:
    parts = [f"value={float(result.value)!r}", f"cap_error={float(result.cap_error):.3e}"]
    if result.time is not None:
        parts.append(f"t={result.time}")
    if result.prefix is not None:
        parts.append("history=" + ("".join(result.prefix) if all(len(s) == 1 for s in result.prefix) else ",".join(result.prefix)))
    return " ".join(parts)


def evaluate_document(doc: FrameworkDocument) -> list[tuple[str, str]]:
    """``(measure, description)`` lines for the report."""
    lines: list[tuple[str, str]] = []

    def run(label: str, fn: Callable[[], MeasureResult]) -> None:
        try:
            lines.append((label, _fmt(fn())))
        except UndefinedMeasureError as exc:
            lines.append((label, f"undefined ({exc})"))

    for prior in doc.priors:
        run(f"J_S[{prior.name}]", lambda prior=prior: conditional_delay(doc.model, prior, doc.rule))
    run("J_P", lambda: pollak_delay(doc.model, doc.rule))
    run("J_L", lambda: lorden_delay(doc.model, doc.rule))
    times = doc.times if doc.times is not None else list(range(doc.model.horizon + 1))
    run(f"J_EL[{','.join(map(str, times))}]", lambda: extended_lorden_delay(doc.model, doc.rule, times))
    return lines
