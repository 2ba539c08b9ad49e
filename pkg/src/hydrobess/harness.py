"""Trace ingestion, synthetic traces, the closed-loop runner, sizing and reports."""

from __future__ import annotations

import csv
import dataclasses
import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import lfilter

from . import control as ctl
from . import forecast as fc
from .core import (
    BessConfig,
    ConfigError,
    ControllerConfig,
    FrequencyTrace,
    PlantConfig,
    Scenario,
    SynthParams,
    validate_scenario,
)
from .kpi import KPI_COLUMNS, KpiReport, RunLog, compute_kpis, write_kpi_csv
from .plant import (
    BessState,
    HydroState,
    VoltageWindowViolated,
    bess_step,
    capability,
    discretize_ttc,
    hydro_step,
    initial_bess_state,
    perturb_ttc,
)

__all__ = [
    "ParseError",
    "GapError",
    "RangeError",
    "RunAborted",
    "MissingBaseline",
    "RunResult",
    "ingest_trace",
    "write_trace",
    "synth_trace",
    "history_series",
    "realized_hourly",
    "run_scenario",
    "size_bess",
    "compare",
    "format_table",
    "write_reductions_csv",
    "standard_matrix",
    "run_matrix",
    "COMPARE_COLUMNS",
]

TRACE_HEADER = ("timestamp_utc", "frequency_hz")
COMPARE_COLUMNS = ("te_rms_1s", "e10", "e30", "e60", "mileage", "nom", "dh_p95")


class ParseError(ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(msg if line is None else f"line {line}: {msg}")
        self.line = line


class GapError(ParseError):
    pass


class RangeError(ParseError):
    pass


class MissingBaseline(KeyError):
    pass


class RunAborted(RuntimeError):
    """Plant left its safe operating window; ``log`` holds the steps run so far."""

    def __init__(self, msg: str, log: RunLog):
        super().__init__(msg)
        self.log = log


# ---------------------------------------------------------------------------
# Traces


def _parse_time(raw: str, line: int) -> float:
    raw = raw.strip()
    try:
        return float(raw)
    except ValueError:
        pass
    try:
        ts = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise ParseError(f"bad timestamp {raw!r}", line) from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.timestamp()


def ingest_trace(path: str | Path, f_min: float = 45.0, f_max: float = 55.0) -> FrequencyTrace:
    """Read a ``timestamp_utc,frequency_hz`` CSV with strictly uniform spacing.

    Timestamps may be UTC seconds or ISO 8601. Line numbers in errors count
    the header as line 1.
    """
    path = Path(path)
    if not path.is_file():
        raise ParseError(f"{path}: no such file")
    t, f = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TRACE_HEADER:
            raise ParseError(f"header must be {','.join(TRACE_HEADER)}", 1)
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"expected 2 fields, got {len(row)}", line)
            ts = _parse_time(row[0], line)
            try:
                fv = float(row[1])
            except ValueError:
                raise ParseError(f"bad frequency {row[1]!r}", line) from None
            if not (math.isfinite(fv) and f_min <= fv <= f_max):
                raise RangeError(f"frequency {fv} Hz outside [{f_min}, {f_max}]", line)
            if t:
                step = ts - t[-1]
                if step <= 0:
                    raise GapError(f"non-increasing timestamp {row[0]}", line)
                if len(t) >= 2:
                    dt = t[1] - t[0]
                    if abs(step - dt) > 1e-6 * max(dt, 1.0):
                        raise GapError(f"spacing {step:g} s differs from {dt:g} s", line)
            t.append(ts)
            f.append(fv)
    if len(f) < 2:
        raise ParseError("trace needs at least 2 samples")
    return FrequencyTrace(t[0], t[1] - t[0], np.array(f))


def write_trace(trace: FrequencyTrace, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for i, fv in enumerate(trace.samples):
            w.writerow([f"{trace.t0 + i * trace.dt:.3f}", f"{fv:.6f}"])


def synth_trace(seed: int, hours: float, params: SynthParams | None = None, t0: float = 0.0,
                dt: float = 1.0, f_nominal: float = 50.0) -> FrequencyTrace:
    """Ornstein-Uhlenbeck frequency deviation plus a daily sinusoid.

    The OU process is sampled exactly: ``x' = phi x + sqrt(1 - phi**2) s e``
    with ``phi = exp(-dt / corr_time)``, so its stationary standard deviation
    is ``s = std_mhz``. The daily term uses absolute time ``t0 + t``. With
    ``split`` set, a frequency offset with linear ramps is added over the
    configured window (hours measured from ``t0``).
    """
    if hours < 1:
        raise ValueError("hours must be >= 1")
    p = params or SynthParams()
    n = int(round(hours * 3600.0 / dt))
    rng = np.random.default_rng(seed)
    s = p.std_mhz * 1e-3
    phi = math.exp(-dt / p.corr_time_s)
    e = rng.standard_normal(n)
    x0 = s * rng.standard_normal()
    x, _ = lfilter([s * math.sqrt(1.0 - phi * phi)], [1.0, -phi], e, zi=[phi * x0])
    t = np.arange(n) * dt
    dev = x + p.daily_amp_mhz * 1e-3 * np.sin(2.0 * np.pi * (t0 + t) / 86400.0)
    if p.split:
        a = p.split_start_h * 3600.0
        b = a + p.split_duration_h * 3600.0
        r = max(p.split_ramp_s, dt)
        shape = np.clip(np.minimum((t - a) / r, (b - t) / r), 0.0, 1.0)
        dev = dev + p.split_offset_mhz * 1e-3 * shape
    return FrequencyTrace(t0, dt, f_nominal + dev)


def history_series(s: Scenario) -> fc.HourlyIntegralSeries:
    """Hourly integrals preceding the run, used to fit the forecaster.

    Drawn from the synthetic generator with seed ``seed + 1`` and no split
    segment, ending where the run starts so the daily phase is continuous.
    """
    hours = s.forecast.history_days * 24
    if hours < 1:
        return fc.HourlyIntegralSeries(np.zeros(0))
    p = dataclasses.replace(s.synth, split=False)
    tr = synth_trace(s.seed + 1, hours, p, t0=-hours * 3600.0, dt=s.plant.dt,
                     f_nominal=s.plant.f_nominal)
    return fc.integrate_hourly(tr, s.plant.f_nominal)


def realized_hourly(samples: np.ndarray, dt: float, f_nominal: float) -> np.ndarray:
    """Hourly grid integrals of ``samples`` measured from the first sample."""
    per = int(round(3600.0 / dt))
    n = samples.size // per
    dev = f_nominal - np.asarray(samples[: n * per], dtype=float)
    return dev.reshape(n, per).sum(axis=1) * dt / 3600.0


# ---------------------------------------------------------------------------
# Closed-loop runner


@dataclass
class RunResult:
    log: RunLog
    report: KpiReport
    step_seconds: np.ndarray
    ul_calls: int
    fallbacks: int
    tags: dict = field(default_factory=dict)

    @property
    def max_step_ms(self) -> float:
        return float(self.step_seconds.max() * 1e3) if self.step_seconds.size else 0.0

    @property
    def mean_step_ms(self) -> float:
        return float(self.step_seconds.mean() * 1e3) if self.step_seconds.size else 0.0


def _load_trace(s: Scenario) -> FrequencyTrace:
    if s.trace_path:
        return ingest_trace(s.trace_path)
    return synth_trace(s.seed, s.duration_h, s.synth, dt=s.plant.dt, f_nominal=s.plant.f_nominal)


def _forecaster(s: Scenario, samples: np.ndarray):
    """Fitted model (or ``None``) and an optional hindsight provider."""
    kind = s.forecast.kind
    pl = s.plant
    if kind == "zero":
        return None, None, lambda g: fc.WForecast(0.0)
    if kind == "oracle":
        w = realized_hourly(samples, pl.dt, pl.f_nominal)
        return None, None, lambda g: fc.WForecast(float(w[g]) if g < w.size else 0.0)
    hist = history_series(s) if not s.trace_path else fc.HourlyIntegralSeries(np.zeros(0))
    try:
        model = fc.fit(hist, kind, s.forecast.level, s.forecast.ar_order, s.forecast.seasonal_lags)
    except fc.InsufficientData:
        model = None
    return model, hist.values, None


def run_scenario(s: Scenario, trace: FrequencyTrace | None = None,
                 write: bool = False) -> RunResult:
    """Run one closed-loop scenario.

    Raises
    ------
    ConfigError
        The scenario fails validation or the trace is shorter than the run.
    RunAborted
        The truth battery left its voltage guard band; the partial log is
        attached.
    """
    rep = validate_scenario(s)
    if not rep:
        raise ConfigError("; ".join(rep.violations))
    pl = s.plant
    trace = trace or _load_trace(s)
    n = int(round(s.duration_h * 3600.0 / pl.dt))
    if abs(trace.dt - pl.dt) > 1e-9:
        raise ConfigError(f"trace dt {trace.dt} differs from plant dt {pl.dt}")
    if len(trace) < n:
        raise ConfigError(f"trace has {len(trace)} samples, run needs {n}")
    f = trace.samples[:n]

    kind = s.controller.kind
    has_bess = s.bess_enabled and kind != "hydro"
    bess = s.bess
    truth = bess
    if s.truth_perturbation > 0:
        rng = np.random.default_rng(s.seed + 2)
        truth = dataclasses.replace(bess, ttc=perturb_ttc(bess.ttc, s.truth_perturbation, rng))
    disc = discretize_ttc(truth.ttc, pl.dt)
    p = s.controller.horizon
    per_hour = int(round(3600.0 / pl.dt))
    hours = np.arange(n + p) // per_hour
    p_disp = np.array([pl.dispatch_at(int(g)) for g in range(hours[-1] + 1)])[hours]
    eps_move = 0.0025 * pl.h_max

    model, hist, provider = _forecaster(s, f) if has_bess and s.controller.upper_layer else (None, None, None)
    hist_list = list(hist) if hist is not None else []
    realized = realized_hourly(f, pl.dt, pl.f_nominal)

    cs = ctl.ControllerState(s.controller)
    hs = HydroState(pl.dispatch_at(0))
    bs = initial_bess_state(truth, s.soe_init) if has_bess else None
    thr = s.controller.dbf_threshold_mhz * 1e-3
    rated = (bess.b_max_discharge, bess.b_max_charge)

    cols = {c: np.zeros(n) for c in ("p_set", "h_set", "h", "b_set", "b", "soe", "v_dc")}
    flags = [""] * n
    timing = np.zeros(n)
    ul_calls = 0
    tag_counts: dict[str, int] = {}

    def partial(m):
        return RunLog(pl.dt, np.arange(m), f[:m], *(cols[c][:m] for c in
                      ("p_set", "h_set", "h", "b_set", "b", "soe", "v_dc")), flags[:m])

    b0 = 0.0
    for k in range(n):
        step_tags = []
        if has_bess and s.controller.upper_layer and k % per_hour == 0:
            g = k // per_hour
            hist_now = np.asarray(hist_list + list(realized[:g]), dtype=float)
            b0, _, res, tg = ctl.hour_boundary(g, bs.soe, hist_now, model, pl, bess, provider)
            cs.b0 = b0
            cs.last_ul = res
            ul_calls += 1
            step_tags += ["hour"] + list(tg)
        t_start = time.perf_counter()
        if kind == "hydro" or not has_bess:
            d = ctl.step_hydro_only(k, f[k], pl, p_disp[k])
        elif kind == "dbf":
            d = ctl.step_dbf(k, f[k], pl, p_disp[k], thr, b0, capability(bs, bess), rated)
        else:
            d = ctl.step_dlmpc(k, f[k], hs.h, bs, cs, pl, bess, p_disp[k: k + p])
        timing[k] = time.perf_counter() - t_start
        step_tags += list(d.tags)

        hs = hydro_step(hs, d.h_set, pl)
        if has_bess:
            try:
                bs = bess_step(bs, d.b_set, truth, pl.dt, disc)
            except VoltageWindowViolated as exc:
                flags[k] = ";".join(step_tags + ["abort"])
                raise RunAborted(f"step {k}: {exc}", partial(k)) from exc
            step_tags += list(bs.flags)
            b, soe, v = bs.b, bs.soe, bs.v_dc
        else:
            b, soe, v = 0.0, float("nan"), float("nan")
        cols["p_set"][k] = d.p_set
        cols["h_set"][k] = d.h_set
        cols["h"][k] = hs.h
        cols["b_set"][k] = d.b_set
        cols["b"][k] = b
        cols["soe"][k] = soe
        cols["v_dc"][k] = v
        flags[k] = ";".join(step_tags)
        for tg in step_tags:
            tag_counts[tg] = tag_counts.get(tg, 0) + 1

    log = partial(n)
    bess_kw = bess.capability.b_rated if has_bess else 0.0
    report = compute_kpis(log, s.name, kind, bess if has_bess else None, bess_kw, eps_move,
                          cs.fallbacks)
    if write:
        out = Path(s.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        log.to_csv(out / f"runlog_{s.name}.csv")
        write_kpi_csv([report], out / "kpi.csv")
    return RunResult(log, report, timing, ul_calls, cs.fallbacks, tag_counts)


# ---------------------------------------------------------------------------
# Sizing and comparison


def size_bess(sigma_f: float, trace: FrequencyTrace | Sequence[float], coverage: float,
              f_nominal: float = 50.0) -> float:
    """Power rating covering ``coverage`` of the absolute frequency deviations.

    Deviations are rounded to 1 nHz and the quantile is an observed sample
    (inverted CDF), so round-number thresholds map to exact ratings.
    """
    if not 0.5 < coverage < 1.0:
        raise ValueError("coverage must be in (0.5, 1)")
    f = np.asarray(getattr(trace, "samples", trace), dtype=float)
    dev = np.round(np.abs(f_nominal - f), 9)
    q = float(np.quantile(dev, coverage, method="inverted_cdf"))
    return round(sigma_f * q, 9)


def _pct(v: float, base: float) -> float:
    if base == 0:
        return 0.0 if v == 0 else float("nan")
    return round(100.0 * (v - base) / base, 1)


def compare(rows: Sequence[dict | KpiReport], baseline: str,
            columns: Sequence[str] = COMPARE_COLUMNS) -> list[dict]:
    """Percent change of each KPI relative to the ``baseline`` run (one decimal)."""
    rows = [r.row() if isinstance(r, KpiReport) else r for r in rows]
    base = next((r for r in rows if r["run_id"] == baseline), None)
    if base is None:
        raise MissingBaseline(baseline)
    out = []
    for r in rows:
        d = {"run_id": r["run_id"], "controller": r["controller"], "bess_kw": r["bess_kw"]}
        for c in columns:
            d[c] = _pct(float(r[c]), float(base[c]))
        out.append(d)
    return out


def write_reductions_csv(table: Sequence[dict], path: str | Path) -> None:
    if not table:
        raise ValueError("empty table")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(table[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(table)


def format_table(table: Sequence[dict]) -> str:
    """Aligned plain-text rendering of a list of row dicts."""
    if not table:
        return ""
    cols = list(table[0])
    cells = [[str(r[c]) for c in cols] for r in table]
    width = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(cols, width))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(row, width)) for row in cells]
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Experiment matrix


def standard_matrix(base: Scenario | None = None) -> list[Scenario]:
    """Hydro alone, DBF 5 and 9 kW, DLMPC 5 and 9 kW on the same trace and seed."""
    base = base or Scenario()
    out = [dataclasses.replace(base, name="hydro", bess_enabled=False,
                               controller=dataclasses.replace(base.controller, kind="hydro"))]
    for kind in ("dbf", "dlmpc"):
        for kw, thr in ((5.0, 40.0), (9.0, 72.0)):
            c = dataclasses.replace(base.controller, kind=kind, dbf_threshold_mhz=thr)
            bess = BessConfig.sized(kw, kw, **{f.name: getattr(base.bess, f.name)
                                               for f in dataclasses.fields(base.bess)
                                               if f.name in ("soe_min", "soe_max", "eta_ch",
                                                             "eta_dch", "ttc")})
            out.append(dataclasses.replace(base, name=f"{kind}_{int(kw)}kw", bess=bess,
                                           bess_enabled=True, controller=c))
    return out


def run_matrix(scenarios: Iterable[Scenario], out_dir: str | Path,
               baseline: str | None = None, trace: FrequencyTrace | None = None,
               progress=None) -> tuple[list[KpiReport], list[dict]]:
    """Run every scenario, writing run logs, ``kpi.csv`` and ``reductions.csv``.

    The baseline defaults to the first hydro-only run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for s in scenarios:
        res = run_scenario(s, trace)
        res.log.to_csv(out / f"runlog_{s.name}.csv")
        reports.append(res.report)
        if progress:
            progress(s, res)
    write_kpi_csv(reports, out / "kpi.csv")
    if baseline is None:
        baseline = next((r.run_id for r in reports if r.controller == "hydro"), None)
    table = []
    if baseline is not None:
        table = compare(reports, baseline)
        write_reductions_csv(table, out / "reductions.csv")
    return reports, table
