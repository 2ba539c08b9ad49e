"""Post-run metrics: tracking and energy errors, servo wear proxies, SOE safety.

Servo wear is measured on the hydro set-point ``H_set`` as a proxy for
guide-vane and blade travel: mileage is the summed absolute set-point
change, and a movement is a maximal run of consecutive above-threshold
changes of one sign.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import BessConfig

__all__ = [
    "RunLog",
    "KpiReport",
    "WindowLargerThanLog",
    "KPI_COLUMNS",
    "LOG_COLUMNS",
    "tracking_error_series",
    "energy_error",
    "servo_kpis",
    "dh_cdf",
    "soe_safety",
    "compute_kpis",
    "write_kpi_csv",
    "read_kpi_csv",
]

KPI_COLUMNS = ("run_id", "controller", "bess_kw", "te_rms_1s", "e10", "e30", "e60",
               "mileage", "nom", "dh_p95", "soe_viol", "fallbacks")
LOG_COLUMNS = ("k", "f", "p_set", "h_set", "h", "b_set", "b", "soe", "v_dc", "flags")


class WindowLargerThanLog(ValueError):
    pass


@dataclass
class RunLog:
    """Per-step arrays of a closed-loop run.

    ``h`` and ``b`` are the plant truth after the step; ``b`` is the AC power
    actually applied. ``flags`` holds a ``;``-joined tag string per step.
    """

    dt: float
    k: np.ndarray
    f: np.ndarray
    p_set: np.ndarray
    h_set: np.ndarray
    h: np.ndarray
    b_set: np.ndarray
    b: np.ndarray
    soe: np.ndarray
    v_dc: np.ndarray
    flags: list

    def __post_init__(self):
        for name in LOG_COLUMNS[:-1]:
            setattr(self, name, np.asarray(getattr(self, name), dtype=int if name == "k" else float))
        n = self.k.size
        if any(getattr(self, c).size != n for c in LOG_COLUMNS[:-1]) or len(self.flags) != n:
            raise ValueError("run log columns differ in length")
        if n > 1 and np.any(np.diff(self.k) <= 0):
            raise ValueError("step index must be strictly increasing")

    def __len__(self) -> int:
        return self.k.size

    @classmethod
    def from_rows(cls, rows: Sequence[dict], dt: float = 1.0) -> "RunLog":
        cols = {c: [r[c] for r in rows] for c in LOG_COLUMNS}
        return cls(dt=dt, **cols)

    @classmethod
    def empty(cls, dt: float = 1.0) -> "RunLog":
        z = np.zeros(0)
        return cls(dt, z, z, z, z, z, z, z, z, z, [])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_COLUMNS)
            for i in range(len(self)):
                w.writerow([int(self.k[i])] + [repr(float(getattr(self, c)[i])) for c in LOG_COLUMNS[1:-1]]
                           + [self.flags[i]])

    @classmethod
    def from_csv(cls, path: str | Path, dt: float = 1.0) -> "RunLog":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls.from_rows(rows, dt)


@dataclass(frozen=True)
class KpiReport:
    run_id: str
    controller: str
    bess_kw: float
    te_rms_1s: float
    e10: float
    e30: float
    e60: float
    mileage: float
    nom: int
    dh_p95: float
    soe_viol: int
    fallbacks: int
    soe_min_seen: float = float("nan")
    soe_max_seen: float = float("nan")

    def row(self) -> dict:
        d = asdict(self)
        return {c: d[c] for c in KPI_COLUMNS}


def tracking_error_series(log: RunLog) -> np.ndarray:
    """``TE_k = P_set_k - (H_k - B_k)`` from plant truth."""
    if len(log) == 0:
        raise ValueError("empty run log")
    return log.p_set - (log.h - log.b)


def energy_error(te: Sequence[float], delta_t: float, dt: float = 1.0) -> float:
    """RMS over non-overlapping windows of the window-mean tracking error."""
    te = np.asarray(te, dtype=float)
    w = delta_t / dt
    if w < 1 or abs(w - round(w)) > 1e-9:
        raise ValueError("delta_t must be a positive multiple of dt")
    w = int(round(w))
    n = te.size // w
    if n < 1:
        raise WindowLargerThanLog(f"window of {w} steps exceeds log of {te.size}")
    means = te[: n * w].reshape(n, w).mean(axis=1)
    return float(np.sqrt(np.mean(means ** 2)))


def _moves(h_set: np.ndarray, eps_move: float) -> tuple[np.ndarray, np.ndarray]:
    d = np.diff(np.asarray(h_set, dtype=float))
    return d, np.abs(d) > eps_move


def servo_kpis(h_set: Sequence[float] | RunLog, eps_move: float) -> tuple[float, int]:
    """Mileage and number of movements of the hydro set-point.

    A movement is a maximal run of consecutive steps whose change exceeds
    ``eps_move`` in magnitude and keeps the same sign; a reversal starts a
    new movement.
    """
    if eps_move < 0:
        raise ValueError("eps_move must be non-negative")
    h_set = getattr(h_set, "h_set", h_set)
    d, big = _moves(h_set, eps_move)
    if d.size == 0:
        return 0.0, 0
    mileage = float(np.abs(d[big]).sum())
    sign = np.where(big, np.sign(d), 0.0)
    prev = np.concatenate([[0.0], sign[:-1]])
    starts = big & (sign != prev)
    return mileage, int(starts.sum())


def dh_cdf(h: Sequence[float] | RunLog, quantiles: Iterable[float], dt: float = 1.0) -> np.ndarray:
    """Empirical quantiles of ``|H_k - H_{k-1}| / dt``."""
    if isinstance(h, RunLog):
        h, dt = h.h, h.dt
    h = np.asarray(h, dtype=float)
    if h.size < 2:
        raise ValueError("need at least two steps")
    return np.quantile(np.abs(np.diff(h)) / dt, np.asarray(list(quantiles), dtype=float))


def soe_safety(soe: Sequence[float] | RunLog, bess: BessConfig) -> tuple[int, float, float]:
    """Steps outside ``[SOE_min, SOE_max]`` plus the extreme SOE values seen."""
    soe = np.asarray(getattr(soe, "soe", soe), dtype=float)
    if soe.size == 0:
        return 0, float("nan"), float("nan")
    viol = int(np.sum((soe < bess.soe_min) | (soe > bess.soe_max)))
    return viol, float(soe.min()), float(soe.max())


def compute_kpis(log: RunLog, run_id: str, controller: str, bess: BessConfig | None,
                 bess_kw: float, eps_move: float, fallbacks: int = 0) -> KpiReport:
    te = tracking_error_series(log)
    e = [energy_error(te, w, log.dt) if te.size * log.dt >= w else float("nan") for w in (10, 30, 60)]
    mileage, nom = servo_kpis(log.h_set, eps_move)
    p95 = float(dh_cdf(log, [0.95])[0]) if len(log) > 1 else 0.0
    if bess is not None:
        viol, lo, hi = soe_safety(log, bess)
    else:
        viol, lo, hi = 0, float("nan"), float("nan")
    return KpiReport(run_id, controller, float(bess_kw), float(np.sqrt(np.mean(te ** 2))),
                     e[0], e[1], e[2], mileage, nom, p95, viol, int(fallbacks), lo, hi)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_kpi_csv(reports: Iterable[KpiReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(KPI_COLUMNS)
        for r in reports:
            w.writerow([_fmt(v) for v in r.row().values()])


def read_kpi_csv(path: str | Path) -> list[dict]:
    """Rows of a KPI CSV with numeric columns converted to float/int."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != KPI_COLUMNS:
            raise ValueError(f"{path}: header must be {','.join(KPI_COLUMNS)}")
        out = []
        for row in reader:
            conv = dict(row)
            for c in KPI_COLUMNS[2:]:
                conv[c] = int(row[c]) if c in ("nom", "soe_viol", "fallbacks") else float(row[c])
            out.append(conv)
    return out
