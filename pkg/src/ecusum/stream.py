"""Online ECUSUM / CUSUM detection over recorded or live streams.

Each record carries a timestamp ``t``, the observation increment ``dxi``
over ``(prev_t, t]`` and an occurrence flag. The log-likelihood increment
is ``du = -mu^2 (t - prev_t) / 2 + mu dxi``. The detector keeps O(1) state
and stops at the first record where the statistic reaches ``nu``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, TextIO

from .types import Threshold

VARIANTS = ("ecusum", "cusum")
REPORT_HEADER = ("alarm_time", "final_y", "n_records", "n_occurrences")


class MalformedStreamError(ValueError):
    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


@dataclass(frozen=True)
class StreamRecord:
    t: float
    dxi: float
    occ: bool


@dataclass(frozen=True)
class AlarmReport:
    alarm_time: float | None
    final_y: float
    n_records: int
    n_occurrences: int

    @property
    def alarmed(self) -> bool:
        return self.alarm_time is not None

    def csv_row(self) -> list[str]:
        alarm = "" if self.alarm_time is None else repr(self.alarm_time)
        return [alarm, repr(self.final_y), str(self.n_records), str(self.n_occurrences)]


class StreamDetector:
    """Constant-memory detector; feed records in timestamp order."""

    def __init__(self, mu: float, nu: float, variant: str = "ecusum"):
        if mu == 0.0 or not math.isfinite(mu):
            raise ValueError("mu must be finite and nonzero")
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        self.mu = float(mu)
        self.nu = float(Threshold(nu))
        self.variant = variant
        self.y = 0.0
        self.prev_t = 0.0
        self.n_records = 0
        self.n_occurrences = 0
        self.alarm_time: float | None = None

    def update(self, record: StreamRecord) -> bool:
        """Process one record; returns True once the alarm has fired."""
        if self.alarm_time is not None:
            return True
        if not record.t > self.prev_t:
            raise ValueError(f"timestamp {record.t!r} does not increase past {self.prev_t!r}")
        h = record.t - self.prev_t
        du = -0.5 * self.mu * self.mu * h + self.mu * record.dxi
        y = self.y + du
        if record.occ or self.variant == "cusum":
            if y < 0.0:
                y = 0.0
        self.y = y
        self.prev_t = record.t
        self.n_records += 1
        self.n_occurrences += bool(record.occ)
        if y >= self.nu:
            self.alarm_time = record.t
            return True
        return False

    def report(self) -> AlarmReport:
        return AlarmReport(self.alarm_time, self.y, self.n_records, self.n_occurrences)


def _parse_float(text: str, line: int, field: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise MalformedStreamError(line, f"{field}={text!r} is not a number") from None
    if not math.isfinite(value):
        raise MalformedStreamError(line, f"{field}={text!r} is not finite")
    return value


def parse_records(lines: Iterable[str], levels: bool = False) -> Iterator[StreamRecord]:
    """Parse ``t,dxi,occ`` CSV (or ``t,xi,occ`` levels when ``levels``)."""
    value_col = "xi" if levels else "dxi"
    expected = ["t", value_col, "occ"]
    reader = csv.reader(lines)
    try:
        header = next(reader)
    except StopIteration:
        raise MalformedStreamError(1, "missing header") from None
    if [h.strip() for h in header] != expected:
        raise MalformedStreamError(1, f"header must be {','.join(expected)}")
    prev_t = 0.0
    prev_xi = 0.0
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise MalformedStreamError(line, f"expected 3 fields, got {len(row)}")
        t = _parse_float(row[0], line, "t")
        value = _parse_float(row[1], line, value_col)
        occ_text = row[2].strip()
        if occ_text not in ("0", "1"):
            raise MalformedStreamError(line, f"occ={occ_text!r} must be 0 or 1")
        if not t > prev_t:
            raise MalformedStreamError(line, f"timestamp {t!r} does not increase past {prev_t!r}")
        if levels:
            dxi = value - prev_xi
            prev_xi = value
        else:
            dxi = value
        prev_t = t
        yield StreamRecord(t, dxi, occ_text == "1")


def run_detector(records: Iterable[StreamRecord], mu: float, nu: float, variant: str = "ecusum") -> AlarmReport:
    """Consume records until the alarm fires or the stream ends."""
    det = StreamDetector(mu, nu, variant)
    for rec in records:
        if det.update(rec):
            break
    return det.report()


def statistic_path(records: Iterable[StreamRecord], mu: float, variant: str = "ecusum") -> list[float]:
    """Statistic after every record, ignoring the threshold."""
    det = StreamDetector(mu, math.inf, variant)
    out = []
    for rec in records:
        det.update(rec)
        out.append(det.y)
    return out


def write_records(records: Iterable[StreamRecord], fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["t", "dxi", "occ"])
    for rec in records:
        writer.writerow([repr(float(rec.t)), repr(float(rec.dxi)), "1" if rec.occ else "0"])
