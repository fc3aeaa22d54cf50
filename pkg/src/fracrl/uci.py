"""Parsing and long-memory analysis of UCI-style diabetes patient records.

The flat-file format is one event per line, tab separated:

    MM-DD-YYYY <tab> H:MM <tab> code <tab> value

Blood-glucose measurements carry codes 48 and 57-64; insulin doses carry 33
(regular), 34 (NPH) and 35 (ultralente).  Parsing is tolerant: malformed
lines are skipped and counted, unknown codes are kept but flagged.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .sysid import HurstFit, SeriesTooShortError, estimate_hurst

BG_CODES = frozenset({48, 57, 58, 59, 60, 61, 62, 63, 64})
INSULIN_CODES = frozenset({33, 34, 35})
REGULAR_INSULIN_CODE = 33


class MalformedFileError(ValueError):
    pass


@dataclass(frozen=True)
class UciRecord:
    date: dt.date
    minutes: int  # minutes of day
    code: int
    value: float
    known_code: bool
    raw: tuple[str, str, str, str]

    @property
    def timestamp_minutes(self) -> int:
        """Absolute minutes since the epoch of the proleptic calendar."""
        return self.date.toordinal() * 1440 + self.minutes

    def to_line(self) -> str:
        return "\t".join(self.raw)


@dataclass
class ParseResult:
    records: list[UciRecord]
    skipped: int
    unknown_codes: int


def _parse_line(line: str) -> UciRecord | None:
    parts = line.split("\t")
    if len(parts) != 4:
        return None
    date_s, time_s, code_s, value_s = (p.strip() for p in parts)
    try:
        month, day, year = (int(v) for v in date_s.split("-"))
        date = dt.date(year, month, day)
        hh, mm = (int(v) for v in time_s.split(":"))
        if not (0 <= hh < 24 and 0 <= mm < 60):
            return None
        code = int(code_s)
        value = float(value_s)
    except (ValueError, TypeError):
        return None
    return UciRecord(
        date=date,
        minutes=60 * hh + mm,
        code=code,
        value=value,
        known_code=code in BG_CODES or code in INSULIN_CODES,
        raw=(date_s, time_s, code_s, value_s),
    )


def parse_uci(content: str) -> ParseResult:
    """Tolerant parse of one patient file.

    Raises :class:`MalformedFileError` when more than half of the non-empty
    lines fail to parse.
    """
    records: list[UciRecord] = []
    skipped = 0
    unknown = 0
    lines = [ln for ln in content.splitlines() if ln.strip()]
    for line in lines:
        rec = _parse_line(line)
        if rec is None:
            skipped += 1
            continue
        if not rec.known_code:
            unknown += 1
        records.append(rec)
    if lines and skipped > len(lines) / 2:
        raise MalformedFileError(
            f"{skipped} of {len(lines)} lines are malformed; refusing to parse"
        )
    return ParseResult(records=records, skipped=skipped, unknown_codes=unknown)


@dataclass
class PatientSeries:
    """Per-patient glucose and insulin event series (timestamps in minutes)."""

    patient: str
    bg_times: np.ndarray
    bg_values: np.ndarray
    insulin: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    @classmethod
    def from_records(cls, patient: str, records: list[UciRecord]) -> "PatientSeries":
        bg = [(r.timestamp_minutes, r.value) for r in records if r.code in BG_CODES]
        bg.sort(key=lambda tv: tv[0])  # stable: duplicates preserved in order
        channels: dict[int, list[tuple[int, float]]] = {}
        for r in records:
            if r.code in INSULIN_CODES:
                channels.setdefault(r.code, []).append((r.timestamp_minutes, r.value))
        insulin = {}
        for code, events in channels.items():
            events.sort(key=lambda tv: tv[0])
            t, v = zip(*events)
            insulin[code] = (np.asarray(t, dtype=float), np.asarray(v, dtype=float))
        times = np.asarray([t for t, _ in bg], dtype=float)
        values = np.asarray([v for _, v in bg], dtype=float)
        return cls(patient=patient, bg_times=times, bg_values=values, insulin=insulin)

    @property
    def n_bg(self) -> int:
        return int(self.bg_values.shape[0])

    def regular_insulin(self) -> tuple[np.ndarray, np.ndarray]:
        return self.insulin.get(
            REGULAR_INSULIN_CODE, (np.zeros(0), np.zeros(0))
        )


def resample_locf(times: np.ndarray, values: np.ndarray, step_minutes: float | None = None):
    """Last-observation-carried-forward resampling onto a uniform grid.

    The default grid step is the median inter-sample interval, which is what
    the wavelet-variance estimator assumes.
    """
    if times.shape[0] < 2:
        raise SeriesTooShortError("need at least 2 samples to resample")
    order = np.argsort(times, kind="stable")
    t = times[order]
    v = values[order]
    if step_minutes is None:
        deltas = np.diff(t)
        deltas = deltas[deltas > 0]
        if deltas.size == 0:
            raise SeriesTooShortError("all samples share one timestamp")
        step_minutes = float(np.median(deltas))
    grid = np.arange(t[0], t[-1] + step_minutes / 2, step_minutes)
    idx = np.searchsorted(t, grid, side="right") - 1
    return grid, v[np.clip(idx, 0, v.size - 1)]


def analyze_memory(series: PatientSeries) -> HurstFit:
    """Long-memory fit of a patient's glucose series.

    Resamples by carry-forward onto the median-interval grid, then estimates
    the Hurst exponent from wavelet variances.  Requires at least 64 glucose
    samples.
    """
    if series.n_bg < 64:
        raise SeriesTooShortError(
            f"need at least 64 glucose samples, got {series.n_bg}"
        )
    _, resampled = resample_locf(series.bg_times, series.bg_values)
    if resampled.shape[0] < 64:
        raise SeriesTooShortError(
            f"resampled grid has {resampled.shape[0]} points, need at least 64"
        )
    return estimate_hurst(resampled)


def memory_report(patient: str, fit: HurstFit) -> dict:
    """JSON-ready per-patient record mirroring the log-log analysis plots."""
    return {
        "patient": patient,
        "alpha": fit.alpha,
        "hurst": fit.hurst,
        "slope": fit.slope,
        "points": fit.points(),
    }
