"""Domain types, configuration objects and the scenario-file format.

Sign conventions are global: hydro power ``H`` is generation-positive, battery
power ``B`` is charging-positive, so the power injected at the point of common
coupling is ``H - B``. SOE is a fraction in [0, 1]; all times are in seconds.

The scenario file is a flat ``key=value`` text format with namespaced keys
(``plant.sigma_f_kw_per_hz=125``). Each dataclass field declares its key in
the field metadata; unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

__all__ = [
    "ConfigError",
    "FrequencyTrace",
    "TtcParams",
    "CapabilityParams",
    "PlantConfig",
    "BessConfig",
    "ControllerConfig",
    "ForecastConfig",
    "SynthParams",
    "Scenario",
    "StepDecision",
    "ValidationReport",
    "validate_config",
    "validate_scenario",
    "hour_index",
    "scenario_to_text",
    "scenario_from_text",
    "load_scenario",
    "save_scenario",
]

F_MIN_HZ = 45.0
F_MAX_HZ = 55.0


class ConfigError(ValueError):
    """Raised for malformed configuration files or inconsistent inputs."""


def _key(name: str, **kw) -> Any:
    return field(metadata={"key": name}, **kw)


# ---------------------------------------------------------------------------
# Frequency trace


@dataclass(frozen=True)
class FrequencyTrace:
    """Uniformly sampled grid frequency.

    Parameters
    ----------
    t0 : float
        Absolute UTC timestamp of the first sample, seconds.
    dt : float
        Sample interval, seconds.
    samples : ndarray
        Frequency values in Hz. Stored as a read-only float64 array.
    """

    t0: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        arr = np.array(self.samples, dtype=float)
        if arr.ndim != 1 or arr.size < 2:
            raise ConfigError("frequency trace needs at least 2 samples")
        if not self.dt > 0:
            raise ConfigError(f"trace dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("frequency trace contains non-finite samples")
        bad = np.flatnonzero((arr < F_MIN_HZ) | (arr > F_MAX_HZ))
        if bad.size:
            i = int(bad[0])
            raise ConfigError(
                f"sample {i} = {arr[i]} Hz outside [{F_MIN_HZ}, {F_MAX_HZ}] Hz"
            )
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size * self.dt

    def head(self, n: int) -> "FrequencyTrace":
        return FrequencyTrace(self.t0, self.dt, self.samples[:n])

    def deviation(self, f_nominal: float = 50.0) -> np.ndarray:
        """Return ``f_nominal - f`` (positive under-frequency)."""
        return f_nominal - self.samples


# ---------------------------------------------------------------------------
# Plant / battery parameters


@dataclass(frozen=True)
class TtcParams:
    """Three-time-constant equivalent circuit: OCV + R_s + three RC branches.

    Default values are synthetic; they give branch time constants of 10 s,
    150 s and 2000 s around a 620-680 V pack.
    """

    ocv0: float = _key("ocv0_v", default=620.0)
    ocv_slope: float = _key("ocv_slope_v", default=60.0)
    r_s: float = _key("r_s_ohm", default=0.05)
    r1: float = _key("r1_ohm", default=0.02)
    c1: float = _key("c1_f", default=500.0)
    r2: float = _key("r2_ohm", default=0.03)
    c2: float = _key("c2_f", default=5000.0)
    r3: float = _key("r3_ohm", default=0.04)
    c3: float = _key("c3_f", default=50000.0)

    @property
    def branches(self) -> tuple[tuple[float, float], ...]:
        return ((self.r1, self.c1), (self.r2, self.c2), (self.r3, self.c3))

    def ocv(self, soe: float) -> float:
        return self.ocv0 + self.ocv_slope * soe


@dataclass(frozen=True)
class CapabilityParams:
    """Converter capability curve parameters (trapezoidal derating)."""

    b_rated: float = _key("b_rated_kw", default=9.0)
    v_dc_min: float = _key("v_dc_min_v", default=580.0)
    v_dc_max: float = _key("v_dc_max_v", default=720.0)
    soe_derate_band: float = _key("soe_derate_band", default=0.0)


@dataclass(frozen=True)
class PlantConfig:
    """Hydro unit and droop parameters.

    ``p_disp`` holds hourly PCC dispatch values (kW); the last value is held
    if a run outlasts the plan. ``h_dot_max`` and ``tau_h`` are not given for
    the reduced-scale rig and are exposed here as plausible defaults.
    """

    sigma_f: float = _key("sigma_f_kw_per_hz", default=125.0)
    f_nominal: float = _key("f_nominal_hz", default=50.0)
    deadband_f: float = _key("deadband_hz", default=0.002)
    p_disp: tuple[float, ...] = _key("p_disp_kw", default=(27.0,))
    h_min: float = _key("h_min_kw", default=5.0)
    h_max: float = _key("h_max_kw", default=50.0)
    h_dot_max: float = _key("h_dot_max_kw_per_s", default=5.0)
    tau_h: float = _key("tau_h_s", default=1.5)
    dt: float = _key("dt_s", default=1.0)

    def __post_init__(self):
        p = self.p_disp
        if isinstance(p, (int, float)):
            p = (float(p),)
        object.__setattr__(self, "p_disp", tuple(float(v) for v in p))

    def dispatch_at(self, hour: int) -> float:
        """Dispatch for hour ``hour`` (flat extrapolation past the plan)."""
        if not self.p_disp:
            raise ConfigError("empty dispatch plan")
        return self.p_disp[min(max(hour, 0), len(self.p_disp) - 1)]


@dataclass(frozen=True)
class BessConfig:
    """Battery energy, power and efficiency parameters.

    The default is the 9 kW / 9 kWh unit. Efficiencies are not reported for
    the test rig; 0.95 one-way is a typical Li-ion converter+cell figure.
    """

    c_b: float = _key("c_b_kwh", default=9.0)
    b_max_charge: float = _key("b_max_charge_kw", default=9.0)
    b_max_discharge: float = _key("b_max_discharge_kw", default=9.0)
    soe_min: float = _key("soe_min", default=0.1)
    soe_max: float = _key("soe_max", default=0.9)
    eta_ch: float = _key("eta_ch", default=0.95)
    eta_dch: float = _key("eta_dch", default=0.95)
    ttc: TtcParams = _key("ttc", default_factory=TtcParams)
    capability: CapabilityParams = _key("capability", default_factory=CapabilityParams)

    @classmethod
    def sized(cls, kw: float, kwh: float | None = None, **kw_args) -> "BessConfig":
        """BESS with power ``kw`` and energy ``kwh`` (default ratio 1 h)."""
        kwh = kw if kwh is None else kwh
        cap = kw_args.pop("capability", None) or CapabilityParams()
        cap = dataclasses.replace(cap, b_rated=kw)
        return cls(
            c_b=kwh, b_max_charge=kw, b_max_discharge=kw, capability=cap, **kw_args
        )


@dataclass(frozen=True)
class ControllerConfig:
    """Controller selection.

    ``kind`` is one of ``hydro``, ``dbf`` or ``dlmpc``. ``dispatch_weight``
    weights the squared distance of hydro output from its hourly dispatch in
    the lower-layer objective; it is the channel through which the hourly
    offset reaches the per-second split. ``soe_margin`` tightens the SOE box
    inside the lower layer to absorb solver tolerance.
    """

    kind: str = _key("kind", default="dlmpc")
    gamma: float = _key("gamma", default=0.4)
    horizon: int = _key("horizon", default=30)
    dbf_threshold_mhz: float = _key("dbf_threshold_mhz", default=72.0)
    fidelity: str = _key("fidelity", default="frozen")
    dispatch_weight: float = _key("dispatch_weight", default=0.01)
    soe_margin: float = _key("soe_margin", default=1e-3)
    upper_layer: bool = _key("upper_layer", default=True)


@dataclass(frozen=True)
class ForecastConfig:
    """Hourly regulating-energy forecaster used by the upper layer."""

    kind: str = _key("kind", default="seasonal_ar")
    level: float = _key("level", default=0.95)
    ar_order: int = _key("ar_order", default=6)
    seasonal_lags: tuple[int, ...] = _key("seasonal_lags", default=(24, 48))
    history_days: int = _key("history_days", default=30)


@dataclass(frozen=True)
class SynthParams:
    """Synthetic frequency generator parameters (Ornstein-Uhlenbeck based)."""

    std_mhz: float = _key("std_mhz", default=20.0)
    corr_time_s: float = _key("corr_time_s", default=120.0)
    daily_amp_mhz: float = _key("daily_amp_mhz", default=4.0)
    split: bool = _key("split", default=False)
    split_start_h: float = _key("split_start_h", default=8.25)
    split_duration_h: float = _key("split_duration_h", default=2.0)
    split_offset_mhz: float = _key("split_offset_mhz", default=-150.0)
    split_ramp_s: float = _key("split_ramp_s", default=60.0)


@dataclass(frozen=True)
class Scenario:
    """One closed-loop run: trace source, plant, battery and controller.

    An empty ``trace_path`` means the trace is synthesised from ``synth`` and
    ``seed``. ``bess_enabled = False`` runs the hydro unit alone.
    """

    name: str = _key("name", default="run")
    trace_path: str = _key("trace_path", default="")
    seed: int = _key("seed", default=0)
    duration_h: float = _key("duration_h", default=12.0)
    output_dir: str = _key("output_dir", default="out")
    soe_init: float = _key("soe_init", default=0.5)
    bess_enabled: bool = _key("bess_enabled", default=True)
    truth_perturbation: float = _key("truth_perturbation", default=0.0)
    plant: PlantConfig = _key("plant", default_factory=PlantConfig)
    bess: BessConfig = _key("bess", default_factory=BessConfig)
    controller: ControllerConfig = _key("controller", default_factory=ControllerConfig)
    forecast: ForecastConfig = _key("forecast", default_factory=ForecastConfig)
    synth: SynthParams = _key("synth", default_factory=SynthParams)


@dataclass(frozen=True)
class StepDecision:
    """Set-points actuated at step ``k`` plus diagnostics."""

    k: int
    h_set: float
    b_set: float
    p_set: float
    te: float = float("nan")
    status: str = "ok"
    objective: float = float("nan")
    tags: tuple[str, ...] = ()


def hour_index(k: int, dt: float) -> int:
    """Hour index ``g = floor(k * dt / 3600)``."""
    return int(math.floor(k * dt / 3600.0 + 1e-9))


# ---------------------------------------------------------------------------
# Validation


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:  # truthy when valid
        return not self.violations

    def add(self, cond: bool, message: str) -> None:
        if not cond:
            self.violations.append(message)


def validate_config(plant: PlantConfig, bess: BessConfig | None) -> ValidationReport:
    """Check every invariant of ``plant`` and ``bess``; never raises."""
    r = ValidationReport()
    r.add(plant.sigma_f > 0, "sigma_f > 0")
    r.add(plant.deadband_f >= 0, "deadband_f >= 0")
    r.add(plant.h_min < plant.h_max, "H_min < H_max")
    r.add(plant.h_dot_max > 0, "H_dot_max > 0")
    r.add(plant.dt > 0, "dt > 0")
    r.add(plant.tau_h > plant.dt / 2, "tau_H > dt/2")
    r.add(len(plant.p_disp) >= 1, "P_disp non-empty")
    r.add(
        all(plant.h_min <= p <= plant.h_max for p in plant.p_disp),
        "P_disp within [H_min, H_max]",
    )
    if bess is None:
        return r
    r.add(bess.c_b > 0, "C_B > 0")
    r.add(bess.b_max_charge >= 0 and bess.b_max_discharge >= 0, "B_max >= 0")
    r.add(0 <= bess.soe_min < bess.soe_max <= 1, "SOE_min < SOE_max")
    for name in ("eta_ch", "eta_dch"):
        r.add(0.5 < getattr(bess, name) <= 1.0, f"efficiency in (0.5, 1] ({name})")
    t = bess.ttc
    r.add(t.ocv0 > 0, "ocv0 > 0")
    r.add(
        min(t.r_s, t.r1, t.r2, t.r3) >= 0, "TTC resistances >= 0"
    )
    r.add(min(t.c1, t.c2, t.c3) > 0, "TTC capacitances > 0")
    c = bess.capability
    r.add(c.b_rated > 0, "B_rated > 0")
    r.add(c.v_dc_min < c.v_dc_max, "v_dc_min < v_dc_max")
    r.add(0 <= c.soe_derate_band <= 0.2, "0 <= soe_derate_band <= 0.2")
    return r


def validate_scenario(s: Scenario) -> ValidationReport:
    r = validate_config(s.plant, s.bess if s.bess_enabled else None)
    r.add(s.duration_h > 0, "duration_h > 0")
    r.add(0 <= s.soe_init <= 1, "soe_init in [0, 1]")
    r.add(0 <= s.truth_perturbation < 1, "truth_perturbation in [0, 1)")
    c = s.controller
    r.add(c.kind in ("hydro", "dbf", "dlmpc"), "controller.kind in {hydro, dbf, dlmpc}")
    r.add(c.horizon >= 1, "controller.horizon >= 1")
    r.add(c.gamma >= 0, "controller.gamma >= 0")
    r.add(c.dbf_threshold_mhz > 0, "DBF threshold > 0")
    r.add(c.fidelity in ("frozen", "successive"), "controller.fidelity in {frozen, successive}")
    r.add(c.dispatch_weight >= 0, "controller.dispatch_weight >= 0")
    r.add(
        s.forecast.kind in ("persistence", "seasonal_naive", "seasonal_ar", "zero", "oracle"),
        "forecast.kind in {persistence, seasonal_naive, seasonal_ar, zero, oracle}",
    )
    r.add(0 < s.forecast.level < 1, "forecast.level in (0, 1)")
    if c.kind != "hydro":
        r.add(s.bess_enabled, "hybrid controller needs a BESS")
    return r


# ---------------------------------------------------------------------------
# Flat key=value serialisation


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _flatten(obj: Any, prefix: str, out: list[tuple[str, str]]) -> None:
    for f in dataclasses.fields(obj):
        key = f"{prefix}{f.metadata['key']}"
        value = getattr(obj, f.name)
        if dataclasses.is_dataclass(value):
            _flatten(value, key + ".", out)
        else:
            out.append((key, _format(value)))


_SECTION = {"plant", "bess", "controller", "forecast", "synth"}


def scenario_to_text(s: Scenario) -> str:
    """Serialise ``s`` into the flat ``key=value`` format."""
    rows: list[tuple[str, str]] = []
    for f in dataclasses.fields(s):
        value = getattr(s, f.name)
        if dataclasses.is_dataclass(value):
            _flatten(value, f.metadata["key"] + ".", rows)
        else:
            rows.append((f"scenario.{f.metadata['key']}", _format(value)))
    return "".join(f"{k}={v}\n" for k, v in rows)


def _parse(raw: str, ftype: Any, key: str) -> Any:
    ftype = str(ftype)
    try:
        if ftype == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        if ftype.startswith("tuple[float"):
            return tuple(float(v) for v in raw.split(",") if v.strip())
        if ftype.startswith("tuple[int"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc


def _build(cls: type, prefix: str, items: dict[str, str], used: set[str]) -> Any:
    kwargs = {}
    for f in dataclasses.fields(cls):
        key = f"{prefix}{f.metadata['key']}"
        sub = f.default_factory if f.default_factory is not dataclasses.MISSING else None
        if sub is not None and dataclasses.is_dataclass(sub):
            kwargs[f.name] = _build(sub, key + ".", items, used)
        elif key in items:
            kwargs[f.name] = _parse(items[key], f.type, key)
            used.add(key)
    return cls(**kwargs)


def scenario_from_text(text: str) -> Scenario:
    """Parse the flat format; unknown keys raise :class:`ConfigError`."""
    items: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        k, v = line.split("=", 1)
        k = k.strip()
        if k in items:
            raise ConfigError(f"line {lineno}: duplicate key {k}")
        items[k] = v.strip()
    used: set[str] = set()
    kwargs = {}
    for f in dataclasses.fields(Scenario):
        key = f.metadata["key"]
        if key in _SECTION:
            kwargs[f.name] = _build(f.default_factory, key + ".", items, used)
        elif f"scenario.{key}" in items:
            kwargs[f.name] = _parse(items[f"scenario.{key}"], f.type, key)
            used.add(f"scenario.{key}")
    unknown = sorted(set(items) - used)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return Scenario(**kwargs)


def load_scenario(path: str | Path) -> Scenario:
    return scenario_from_text(Path(path).read_text())


def save_scenario(s: Scenario, path: str | Path) -> None:
    Path(path).write_text(scenario_to_text(s))


def as_array(values: Sequence[float] | np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=float)
