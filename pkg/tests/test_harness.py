import dataclasses

import numpy as np
import pytest

from hydrobess.core import (
    BessConfig,
    ConfigError,
    ControllerConfig,
    FrequencyTrace,
    Scenario,
    SynthParams,
    TtcParams,
)
from hydrobess.harness import (
    GapError,
    MissingBaseline,
    ParseError,
    RangeError,
    RunAborted,
    compare,
    format_table,
    ingest_trace,
    run_matrix,
    run_scenario,
    size_bess,
    standard_matrix,
    synth_trace,
    write_trace,
)
from hydrobess.kpi import read_kpi_csv


def write_rows(path, rows, header="timestamp_utc,frequency_hz"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


def quantile_trace(q_mhz, coverage, n=1000):
    """|df| has exactly ``q_mhz`` at the ``coverage`` order statistic."""
    k = int(round(coverage * n))
    dev = np.r_[np.linspace(0.0, q_mhz, k), np.linspace(q_mhz + 5.0, q_mhz + 50.0, n - k)] * 1e-3
    sign = np.where(np.arange(n) % 2, 1.0, -1.0)
    return FrequencyTrace(0.0, 1.0, 50.0 + sign * dev)


# ingestion

def test_ingest_twelve_hours(tmp_path):
    tr = synth_trace(0, 12)
    write_trace(tr, tmp_path / "t.csv")
    back = ingest_trace(tmp_path / "t.csv")
    assert len(back) == 43200
    assert np.allclose(back.samples, tr.samples, atol=5e-7)


def test_ingest_iso_timestamps(tmp_path):
    p = write_rows(tmp_path / "t.csv", ["2021-01-08T00:00:00Z,50.01", "2021-01-08T00:00:01Z,49.99"])
    tr = ingest_trace(p)
    assert tr.dt == 1.0 and np.allclose(tr.samples, [50.01, 49.99])


def test_ingest_gap_line_number(tmp_path):
    p = write_rows(tmp_path / "t.csv", ["0,50.0", "1,50.0", "2,50.0", "4,50.0"])
    with pytest.raises(GapError) as exc:
        ingest_trace(p)
    assert exc.value.line == 5


def test_ingest_non_monotonic(tmp_path):
    p = write_rows(tmp_path / "t.csv", ["0,50.0", "1,50.0", "1,50.0"])
    with pytest.raises(GapError) as exc:
        ingest_trace(p)
    assert exc.value.line == 4


def test_ingest_range_error(tmp_path):
    p = write_rows(tmp_path / "t.csv", ["0,50.0", "1,61.2"])
    with pytest.raises(RangeError) as exc:
        ingest_trace(p)
    assert exc.value.line == 3


def test_ingest_bad_header_and_values(tmp_path):
    with pytest.raises(ParseError):
        ingest_trace(write_rows(tmp_path / "a.csv", ["0,50"], header="t,f"))
    with pytest.raises(ParseError) as exc:
        ingest_trace(write_rows(tmp_path / "b.csv", ["0,50.0", "1,abc"]))
    assert exc.value.line == 3
    with pytest.raises(ParseError):
        ingest_trace(tmp_path / "missing.csv")


# synthetic traces

def test_synth_deterministic(tmp_path):
    write_trace(synth_trace(5, 1), tmp_path / "a.csv")
    write_trace(synth_trace(5, 1), tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert not np.array_equal(synth_trace(5, 1).samples, synth_trace(6, 1).samples)


def test_synth_std_matches_target():
    p = SynthParams(daily_amp_mhz=0.0)
    dev = synth_trace(0, 1e6 / 3600.0, p).deviation()
    assert abs(np.std(dev) / 0.020 - 1.0) <= 0.10
    assert np.mean(np.abs(dev) < 0.2) >= 0.999


def test_synth_split_segment():
    p = SynthParams(split=True, split_start_h=1.0, split_duration_h=1.0)
    dev = synth_trace(0, 3, p).deviation()
    base = synth_trace(0, 3, dataclasses.replace(p, split=False)).deviation()
    offset = dev - base                      # same seed, same noise: the constructed part
    plateau = slice(3600 + 60, 7200 - 60 + 1)
    assert np.allclose(np.abs(offset[plateau]), 0.150, atol=1e-12)
    assert np.all(np.abs(offset[:3600]) < 1e-12) and np.all(np.abs(offset[7200:]) < 1e-12)
    assert np.mean(np.abs(dev[plateau])) > 0.100


def test_synth_rejects_short():
    with pytest.raises(ValueError):
        synth_trace(0, 0.5)


# sizing and comparison

def test_size_examples():
    assert size_bess(125.0, quantile_trace(40.0, 0.95), 0.95) == 5.0
    assert size_bess(125.0, quantile_trace(72.0, 0.99), 0.99) == 9.0
    assert size_bess(125.0, np.full(100, 50.0), 0.95) == 0.0
    with pytest.raises(ValueError):
        size_bess(125.0, np.full(100, 50.0), 0.4)


def test_compare_examples():
    base = {"run_id": "hydro", "controller": "hydro", "bess_kw": 0.0, "te_rms_1s": 1.0, "e10": 1.0,
            "e30": 1.0, "e60": 1.0, "mileage": 32.93, "nom": 9261, "dh_p95": 1.0}
    run = dict(base, run_id="dlmpc", controller="dlmpc", mileage=1.98, nom=64)
    table = compare([base, run], "hydro")
    assert all(v == 0.0 for k, v in table[0].items() if k not in ("run_id", "controller", "bess_kw"))
    assert table[1]["nom"] == -99.3
    assert table[1]["mileage"] == -94.0
    assert "dlmpc" in format_table(table)
    with pytest.raises(MissingBaseline):
        compare([run], "hydro")


# closed loop

def test_hydro_flat_equilibrium():
    tr = FrequencyTrace(0.0, 1.0, np.full(3600, 50.0))
    s = Scenario(duration_h=1.0, bess_enabled=False, controller=ControllerConfig(kind="hydro"))
    res = run_scenario(s, trace=tr)
    assert np.all(res.log.h == 27.0)
    assert res.report.nom == 0 and res.report.mileage == 0.0


def test_upper_layer_called_once_per_hour():
    s = Scenario(duration_h=3.0, bess=BessConfig.sized(5.0), controller=ControllerConfig(kind="dbf"))
    assert run_scenario(s).ul_calls == 3


def test_trace_shorter_than_run():
    tr = FrequencyTrace(0.0, 1.0, np.full(100, 50.0))
    with pytest.raises(ConfigError):
        run_scenario(Scenario(duration_h=1.0), trace=tr)


def test_invalid_scenario_rejected():
    with pytest.raises(ConfigError):
        run_scenario(Scenario(bess=BessConfig(soe_min=0.9, soe_max=0.1)))


def test_run_abort_keeps_partial_log():
    ttc = dataclasses.replace(TtcParams(), r_s=8.0)
    s = Scenario(duration_h=1.0, bess=BessConfig(ttc=ttc), controller=ControllerConfig(kind="dbf"))
    tr = FrequencyTrace(0.0, 1.0, np.r_[np.full(10, 50.0), np.full(3590, 49.9)])
    with pytest.raises(RunAborted) as exc:
        run_scenario(s, trace=tr)
    assert len(exc.value.log) == 10


def test_matrix_writes_outputs(tmp_path):
    base = Scenario(duration_h=1.0, controller=ControllerConfig(horizon=10))
    scen = [s for s in standard_matrix(base) if s.controller.kind != "dlmpc"]
    reports, table = run_matrix(scen, tmp_path)
    assert [r.run_id for r in reports] == ["hydro", "dbf_5kw", "dbf_9kw"]
    assert {p.name for p in tmp_path.iterdir()} == {
        "kpi.csv", "reductions.csv", "runlog_hydro.csv", "runlog_dbf_5kw.csv", "runlog_dbf_9kw.csv"}
    rows = read_kpi_csv(tmp_path / "kpi.csv")
    assert rows[1]["nom"] < rows[0]["nom"]
    assert table[0]["nom"] == 0.0 and table[2]["nom"] < 0


def test_run_deterministic(tmp_path):
    s = Scenario(name="d", duration_h=1.0, controller=ControllerConfig(kind="dlmpc", horizon=10),
                 output_dir=str(tmp_path / "a"))
    run_scenario(s, write=True)
    run_scenario(dataclasses.replace(s, output_dir=str(tmp_path / "b")), write=True)
    for name in ("runlog_d.csv", "kpi.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
