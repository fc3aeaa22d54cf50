import numpy as np
import pytest

from fracrl.fgn import fgn
from fracrl.sysid import DegenerateSeriesError, SeriesTooShortError
from fracrl.uci import (
    MalformedFileError,
    PatientSeries,
    analyze_memory,
    memory_report,
    parse_uci,
    resample_locf,
)


def test_parse_single_bg_line():
    res = parse_uci("04-21-1991\t9:09\t58\t100")
    assert res.skipped == 0
    assert len(res.records) == 1
    rec = res.records[0]
    assert rec.code == 58
    assert rec.value == 100.0
    assert rec.minutes == 9 * 60 + 9
    assert rec.date.isoformat() == "1991-04-21"
    assert rec.known_code


def test_parse_empty_file():
    res = parse_uci("")
    assert res.records == []
    assert res.skipped == 0


def test_parse_skips_malformed_lines():
    content = "04-21-1991\t9:09\t58\t100\n04-21-1991\t9:09\t58\tnot-a-number\n"
    res = parse_uci(content)
    assert len(res.records) == 1
    assert res.skipped == 1


def test_parse_rejects_mostly_malformed():
    content = "garbage\nmore garbage\n04-21-1991\t9:09\t58\t100\n"
    with pytest.raises(MalformedFileError):
        parse_uci(content)


def test_parse_flags_unknown_codes():
    res = parse_uci("04-21-1991\t9:09\t72\t5")
    assert len(res.records) == 1
    assert not res.records[0].known_code
    assert res.unknown_codes == 1


def test_parse_roundtrip_preserves_fields():
    lines = [
        "04-21-1991\t9:09\t58\t100",
        "04-21-1991\t13:30\t33\t7",
        "04-22-1991\t7:55\t62\t231",
    ]
    res = parse_uci("\n".join(lines))
    assert [r.to_line() for r in res.records] == lines


def test_patient_series_channels():
    content = "\n".join(
        [
            "04-21-1991\t9:09\t58\t100",
            "04-21-1991\t9:10\t33\t7",
            "04-21-1991\t9:11\t34\t12",
            "04-21-1991\t17:00\t62\t180",
        ]
    )
    res = parse_uci(content)
    series = PatientSeries.from_records("p01", res.records)
    assert series.n_bg == 2
    assert set(series.insulin) == {33, 34}
    t, v = series.regular_insulin()
    assert v.tolist() == [7.0]
    # timestamps non-decreasing after sort
    assert np.all(np.diff(series.bg_times) >= 0)


def test_resample_locf_median_grid():
    times = np.array([0.0, 10.0, 20.0, 40.0])
    values = np.array([1.0, 2.0, 3.0, 4.0])
    grid, res = resample_locf(times, values)
    np.testing.assert_allclose(grid, [0, 10, 20, 30, 40])
    np.testing.assert_allclose(res, [1, 2, 3, 3, 4])


def test_analyze_memory_requires_samples():
    recs = parse_uci("04-21-1991\t9:09\t58\t100").records
    series = PatientSeries.from_records("p", recs)
    with pytest.raises(SeriesTooShortError, match="64"):
        analyze_memory(series)


def test_analyze_memory_constant_series_degenerate():
    lines = []
    for day in range(1, 29):
        for hh in (8, 12, 18):
            lines.append(f"01-{day:02d}-1991\t{hh}:00\t58\t120")
    series = PatientSeries.from_records("p", parse_uci("\n".join(lines)).records)
    with pytest.raises(DegenerateSeriesError):
        analyze_memory(series)


def _series_from_signal(signal, step=5):
    # uniformly sampled synthetic patient: one reading every `step` minutes
    times = np.arange(signal.size, dtype=float) * step
    return PatientSeries(
        patient="synthetic", bg_times=times, bg_values=np.asarray(signal, dtype=float)
    )


def test_analyze_memory_recovers_long_memory_band():
    alphas = []
    for seed in range(8):
        x = 120 + 20 * fgn(2048, 0.8, np.random.default_rng(seed))
        alphas.append(analyze_memory(_series_from_signal(x)).alpha)
    assert 0.2 < np.mean(alphas) < 0.4


def test_memory_report_shape():
    x = 120 + 20 * fgn(1024, 0.7, np.random.default_rng(0))
    fit = analyze_memory(_series_from_signal(x))
    doc = memory_report("p07", fit)
    assert doc["patient"] == "p07"
    assert len(doc["points"]) >= 3
    assert set(doc["points"][0]) == {"level", "log2var"}
    assert doc["alpha"] == pytest.approx(fit.hurst - 0.5, abs=1e-12)
