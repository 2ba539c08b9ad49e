import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hydrobess.core import BessConfig
from hydrobess.kpi import (
    KPI_COLUMNS,
    RunLog,
    WindowLargerThanLog,
    compute_kpis,
    dh_cdf,
    energy_error,
    read_kpi_csv,
    servo_kpis,
    soe_safety,
    tracking_error_series,
    write_kpi_csv,
)

from oracles import movement_reference


def make_log(p_set, h, b, h_set=None, soe=None):
    n = len(p_set)
    z = np.zeros(n)
    return RunLog(1.0, np.arange(n), np.full(n, 50.0), p_set, h if h_set is None else h_set,
                  h, b, b, z + 0.5 if soe is None else soe, z + 650.0, [""] * n)


def triangle(a, n, step):
    up = np.arange(0.0, a, step)
    cycle = np.r_[up, a - up, -up, -a + up]
    return np.r_[np.tile(cycle, n), 0.0]


def test_tracking_error_examples():
    p = np.linspace(20, 30, 50)
    assert np.all(tracking_error_series(make_log(p, p, np.zeros(50))) == 0)
    assert np.all(tracking_error_series(make_log(p, p + 1, np.zeros(50))) == -1)


def test_tracking_error_rowwise():
    rng = np.random.default_rng(0)
    p, h, b = rng.uniform(10, 40, (3, 100))
    te = tracking_error_series(make_log(p, h, b))
    for i in range(100):
        assert te[i] == p[i] - (h[i] - b[i])


def test_energy_error_examples():
    alt = np.tile([1.0, -1.0], 60)
    assert energy_error(alt, 10) == 0.0
    for w in (1, 10, 30, 60):
        assert energy_error(np.full(120, -0.7), w) == pytest.approx(0.7)
    with pytest.raises(WindowLargerThanLog):
        energy_error(np.zeros(5), 10)
    with pytest.raises(ValueError):
        energy_error(np.zeros(50), 2.5)


def test_energy_error_at_dt_is_rms():
    te = np.random.default_rng(1).standard_normal(500)
    assert energy_error(te, 1.0) == pytest.approx(np.sqrt(np.mean(te ** 2)), rel=1e-15)


def test_energy_error_white_noise():
    te = 0.8 * np.random.default_rng(2).standard_normal(43200)
    assert abs(energy_error(te, 10) / (0.8 / np.sqrt(10)) - 1.0) <= 0.10


def test_servo_examples():
    assert servo_kpis(np.full(20, 27.0), 0.1) == (0.0, 0)
    assert servo_kpis(np.r_[np.full(5, 27.0), np.full(5, 29.0)], 0.1) == (2.0, 1)


def test_servo_triangle():
    h = 27.0 + triangle(3.0, 4, 0.5)
    mileage, nom = servo_kpis(h, 0.1)
    assert mileage == pytest.approx(4 * 3.0 * 4)
    assert (mileage, nom) == pytest.approx(movement_reference(h, 0.1))
    assert nom == 9                          # 2 reversals per cycle plus the initial rise


@settings(max_examples=100)
@given(st.lists(st.floats(5, 50), min_size=1, max_size=80), st.floats(0, 2), st.floats(-10, 10))
def test_servo_matches_reference_and_offset_invariant(h, eps, c):
    h = np.asarray(h)
    m, n = servo_kpis(h, eps)
    rm, rn = movement_reference(h, eps)
    assert n == rn and m == pytest.approx(rm, abs=1e-9)
    m2, n2 = servo_kpis(h + c, eps)
    assert n2 == n and m2 == pytest.approx(m, abs=1e-6)


def test_dh_cdf_examples():
    assert np.all(dh_cdf(np.full(10, 27.0), [0.5, 0.95]) == 0)
    assert np.allclose(dh_cdf(27.0 + 0.3 * np.arange(20), [0.1, 0.5, 0.95]), 0.3)


def test_soe_safety_examples():
    b = BessConfig()
    assert soe_safety(np.full(100, 0.5), b) == (0, 0.5, 0.5)
    soe = np.full(100, 0.5)
    soe[40:50] = 0.05
    assert soe_safety(soe, b) == (10, 0.05, 0.5)


def test_kpi_csv_round_trip(tmp_path):
    p = np.linspace(20, 30, 120)
    rep = compute_kpis(make_log(p, p + 0.5, np.zeros(120)), "r1", "hydro", None, 0.0, 0.125)
    assert tuple(rep.row()) == KPI_COLUMNS
    assert rep.e30 == pytest.approx(0.5)
    write_kpi_csv([rep], tmp_path / "kpi.csv")
    row = read_kpi_csv(tmp_path / "kpi.csv")[0]
    assert row == rep.row()
    (tmp_path / "bad.csv").write_text("run_id,controller\nx,y\n")
    with pytest.raises(ValueError):
        read_kpi_csv(tmp_path / "bad.csv")


def test_runlog_csv_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    p, h, b = rng.uniform(10, 40, (3, 30))
    log = make_log(p, h, b)
    log.flags[3] = "hour;clipped"
    log.to_csv(tmp_path / "log.csv")
    back = RunLog.from_csv(tmp_path / "log.csv")
    assert np.array_equal(back.h, log.h) and back.flags == log.flags


def test_runlog_rejects_ragged():
    with pytest.raises(ValueError):
        RunLog(1.0, [0, 1], [50.0], [0, 0], [0, 0], [0, 0], [0, 0], [0, 0], [0, 0], [0, 0], ["", ""])
