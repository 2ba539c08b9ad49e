"""Controllers: hydro-only droop, dead-band-filter split and the double-layer MPC.

Powers follow the global convention (``H`` generation-positive, ``B``
charging-positive, PCC power ``H - B``). The upper layer works in the
battery frame: a positive frequency integral there means energy flowing
*into* the battery, i.e. the negated grid integral ``-integral(f_nom - f)``.
``hour_boundary`` performs that conversion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import forecast as fc
from .core import BessConfig, ConfigError, ControllerConfig, PlantConfig, StepDecision
from .plant import BessState, bess_step, capability, discretize_ttc
from .qp import QpProblem, QpSolver, QpStatus

__all__ = [
    "UpperLayerInput",
    "UpperLayerResult",
    "LowerLayerInput",
    "LowerLayer",
    "ControllerState",
    "droop_target",
    "deadbanded_deviation",
    "step_hydro_only",
    "step_dbf",
    "solve_upper_layer",
    "upper_layer_scan",
    "build_ll_qp",
    "step_dlmpc",
    "hour_boundary",
    "soe_increment",
]

HOUR_S = 3600.0


# ---------------------------------------------------------------------------
# Droop and the simple controllers


def deadbanded_deviation(f: float, plant: PlantConfig) -> float:
    """``f_nominal - f`` with the governor dead band applied (no offset shift)."""
    df = plant.f_nominal - f
    return 0.0 if abs(df) <= plant.deadband_f else df


def droop_target(f_hat, p_disp, plant: PlantConfig):
    """PCC power target ``P_disp + sigma_f * df``; accepts scalars or arrays."""
    f_hat = np.asarray(f_hat, dtype=float)
    df = plant.f_nominal - f_hat
    df = np.where(np.abs(df) <= plant.deadband_f, 0.0, df)
    out = p_disp + df * plant.sigma_f
    return float(out) if out.ndim == 0 else out


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def step_hydro_only(k: int, f_meas: float, plant: PlantConfig, p_disp: float) -> StepDecision:
    p_set = droop_target(f_meas, p_disp, plant)
    return StepDecision(k, _clamp(p_set, plant.h_min, plant.h_max), 0.0, p_set)


def step_dbf(k: int, f_meas: float, plant: PlantConfig, p_disp: float, threshold_f: float,
             b0: float = 0.0, cap: tuple[float, float] = (-math.inf, math.inf),
             rated: tuple[float, float] | None = None) -> StepDecision:
    """Dead-band-filter split.

    Deviations up to ``threshold_f`` go to the battery; beyond it the battery
    holds its saturated share and the hydro unit takes the rest. The hourly
    offset ``b0`` shifts both the battery baseline and the hydro dispatch.

    ``rated = (B_max_discharge, B_max_charge)`` makes the threshold on each
    side the deviation that brings ``b0 - df * sigma_f`` to the rated power,
    capped at ``threshold_f``; with ``b0 = 0`` and ``threshold_f * sigma_f``
    equal to the rating this is the plain symmetric filter. State-dependent
    capability clipping (``cap``) is applied last and is not re-routed.
    """
    if not threshold_f > 0:
        raise ValueError("DBF threshold must be positive")
    df = deadbanded_deviation(f_meas, plant)
    p_set = p_disp + df * plant.sigma_f
    h_disp = p_disp + b0
    thr = threshold_f
    if rated is not None and df != 0.0:
        room = b0 + rated[0] if df > 0 else rated[1] - b0
        thr = min(thr, max(room, 0.0) / plant.sigma_f)
    if abs(df) <= thr:
        b_set, h_set = b0 - df * plant.sigma_f, h_disp
    else:
        s = math.copysign(1.0, df)
        b_set = b0 - s * thr * plant.sigma_f
        h_set = h_disp + (abs(df) - thr) * s * plant.sigma_f
    tags = []
    b_clip = _clamp(b_set, cap[0], cap[1])
    if b_clip != b_set:
        tags.append("clipped")
    return StepDecision(k, _clamp(h_set, plant.h_min, plant.h_max), b_clip, p_set, tags=tuple(tags))


def soe_increment(b, bess: BessConfig, dt: float):
    """SOE change for AC power ``b`` held for ``dt`` seconds (efficiency map only)."""
    b = np.asarray(b, dtype=float)
    e = np.where(b >= 0, b * bess.eta_ch, b / bess.eta_dch)
    out = e * dt / HOUR_S / bess.c_b
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Upper layer


@dataclass(frozen=True)
class UpperLayerInput:
    """Inputs of the hourly SOE manager.

    ``forecast`` is expressed in the battery frame (positive = energy into
    the battery), in Hz*h.
    """

    soe_meas: float
    forecast: fc.WForecast
    sigma_f: float
    bess: BessConfig

    def __post_init__(self):
        if not 0.0 <= self.soe_meas <= 1.0:
            raise ValueError("SOE_meas must be in [0, 1]")
        w = self.forecast
        if not all(np.isfinite([w.w_hat, w.w_up, w.w_down])):
            raise ValueError("forecast bands must be finite")


@dataclass(frozen=True)
class UpperLayerResult:
    b0: float
    b0_plus: float
    b0_minus: float
    predicted_soe_end: float
    soe_up: float
    soe_down: float
    feasible: bool
    method: str = "qp"


def _eff(w: float, bess: BessConfig) -> float:
    return w * bess.eta_ch if w >= 0 else w / bess.eta_dch


def _energy_window(inp: UpperLayerInput) -> tuple[float, float, float, float]:
    """Admissible hourly offset energy ``[L, U]`` and the achievable ``[E_lo, E_hi]`` (kWh)."""
    b, w, s = inp.bess, inp.forecast, inp.soe_meas
    e_hi = inp.sigma_f * _eff(w.w_hat + w.w_up, b)
    e_lo = inp.sigma_f * _eff(w.w_hat - w.w_down, b)
    lower = b.c_b * (b.soe_min - s) - e_lo
    upper = b.c_b * (b.soe_max - s) - e_hi
    return lower, upper, -b.b_max_discharge / b.eta_dch, b.b_max_charge * b.eta_ch


def _result(inp: UpperLayerInput, b0: float, feasible: bool, method: str) -> UpperLayerResult:
    b, w, s = inp.bess, inp.forecast, inp.soe_meas
    e0 = _eff(b0, b)
    soe = lambda wv: s + (e0 + inp.sigma_f * _eff(wv, b)) / b.c_b
    b0 = 0.0 if abs(b0) < 1e-12 else b0 + 0.0
    return UpperLayerResult(
        b0=b0,
        b0_plus=max(b0, 0.0),
        b0_minus=max(-b0, 0.0),
        predicted_soe_end=soe(w.w_hat),
        soe_up=soe(w.w_hat + w.w_up),
        soe_down=soe(w.w_hat - w.w_down),
        feasible=feasible,
        method=method,
    )


def _e_to_b(e: float, bess: BessConfig) -> float:
    return e / bess.eta_ch if e >= 0 else e * bess.eta_dch


def solve_upper_layer(inp: UpperLayerInput, tol: float = 1e-9) -> UpperLayerResult:
    """Smallest constant hourly offset keeping the SOE band inside the limits.

    The offset is split into charge and discharge parts ``B0+`` and ``B0-``
    with objective ``(B0+ + B0-)**2``; the hourly SOE change of the offset is
    ``eta_ch*B0+ - B0-/eta_dch`` (kWh over one hour). When no admissible
    offset exists the offset nearest to feasibility is returned with
    ``feasible=False``.
    """
    b = inp.bess
    lower, upper, e_lo, e_hi = _energy_window(inp)
    feasible = lower <= upper + tol and lower <= e_hi + tol and upper >= e_lo - tol
    if not feasible:
        if lower > upper:
            e = 0.5 * (lower + upper)
        else:
            e = e_hi if lower > e_hi else e_lo
        e = _clamp(e, e_lo, e_hi)
        return _result(inp, _e_to_b(e, b), False, "saturated")

    P = 2.0 * np.ones((2, 2))
    A = np.array([[b.eta_ch, -1.0 / b.eta_dch], [1.0, 0.0], [0.0, 1.0]])
    l = np.array([min(lower, upper), 0.0, 0.0])
    u = np.array([max(lower, upper), b.b_max_charge, b.b_max_discharge])
    sol = QpSolver(P, A, eps_abs=1e-9, max_iter=20000).solve(np.zeros(2), l, u)
    if sol.status is QpStatus.SOLVED:
        return _result(inp, float(sol.x[0] - sol.x[1]), True, "qp")
    e = _clamp(0.0, lower, upper)
    return _result(inp, _e_to_b(e, b), True, "analytic")


def upper_layer_scan(inp: UpperLayerInput, step_kw: float = 1e-3) -> tuple[float, bool]:
    """Brute-force reference: scan ``B0`` on a grid and keep the smallest feasible ``|B0|``.

    If no grid point is feasible, the point with the least squared band
    violation is returned with ``False``.
    """
    b, w, s = inp.bess, inp.forecast, inp.soe_meas
    n_lo = int(math.floor(b.b_max_discharge / step_kw + 1e-9))
    n_hi = int(math.floor(b.b_max_charge / step_kw + 1e-9))
    grid = np.arange(-n_lo, n_hi + 1) * step_kw
    e0 = np.where(grid >= 0, grid * b.eta_ch, grid / b.eta_dch)
    up = s + (e0 + inp.sigma_f * _eff(w.w_hat + w.w_up, b)) / b.c_b
    dn = s + (e0 + inp.sigma_f * _eff(w.w_hat - w.w_down, b)) / b.c_b
    viol = np.maximum(up - b.soe_max, 0.0) ** 2 + np.maximum(b.soe_min - dn, 0.0) ** 2
    ok = viol <= 1e-18
    if ok.any():
        cand = np.flatnonzero(ok)
        return float(grid[cand[np.argmin(np.abs(grid[cand]))]]), True
    return float(grid[np.argmin(viol)]), False


# ---------------------------------------------------------------------------
# Lower layer


@dataclass(frozen=True)
class LowerLayerInput:
    """Snapshot for one lower-layer solve.

    ``h_disp`` is the hydro dispatch already shifted by the hourly offset
    (``P_disp + B0``); ``p_disp_horizon`` is the unshifted PCC dispatch that
    the droop target refers to. ``s_prev`` is the last actuated hydro
    set-point.
    """

    k: int
    f_hat: np.ndarray
    p_disp_horizon: np.ndarray
    h_meas: float
    bess_state: BessState
    b0: float = 0.0
    gamma: float = 0.4
    p: int = 30
    s_prev: float | None = None
    dispatch_weight: float = 0.01
    soe_margin: float = 1e-3

    def __post_init__(self):
        if self.p < 1:
            raise ConfigError("horizon p must be >= 1")
        for name in ("f_hat", "p_disp_horizon"):
            v = np.asarray(getattr(self, name), dtype=float).ravel()
            if v.size != self.p:
                raise ConfigError(f"{name} has length {v.size}, expected p = {self.p}")
            object.__setattr__(self, name, v)


class LowerLayer:
    """Receding-horizon QP with a cached solver workspace.

    Decision vector ``[S_1..S_p, H_1..H_p, B_1..B_p, u_1..u_p]``: hydro
    set-points, hydro output, battery power and L1 slacks on set-point moves.
    The matrices depend only on the configuration, so the factorisation is
    reused from one step to the next and only ``q``, ``l``, ``u`` change.
    """

    def __init__(self, plant: PlantConfig, bess: BessConfig, p: int = 30,
                 dispatch_weight: float = 0.01, eps_abs: float = 1e-6, max_iter: int = 4000):
        self.plant, self.bess, self.p = plant, bess, p
        self.w_d = dispatch_weight
        self.P, self.A = self._matrices()
        self.solver = QpSolver(self.P, self.A, eps_abs=eps_abs, max_iter=max_iter)
        self._warm = None

    # index helpers
    def _blocks(self):
        p = self.p
        return slice(0, p), slice(p, 2 * p), slice(2 * p, 3 * p), slice(3 * p, 4 * p)

    def _matrices(self) -> tuple[np.ndarray, np.ndarray]:
        p, pl, b = self.p, self.plant, self.bess
        n = 4 * p
        S, H, B, U = self._blocks()
        P = np.zeros((n, n))
        I = np.eye(p)
        P[H, H] = 2.0 * (1.0 + self.w_d) * I
        P[B, B] = 2.0 * I
        P[H, B] = -2.0 * I
        P[B, H] = -2.0 * I

        a = pl.dt / pl.tau_h
        shift = np.eye(p, k=-1)
        D = I - shift  # first differences, row 0 is x_1
        rows = []
        blk = lambda **parts: np.hstack([parts.get(nm, np.zeros((p, p))) for nm in "SHBU"])
        rows.append(blk(H=I - (1.0 - a) * shift, S=-a * I))   # dynamics
        rows.append(blk(S=I))                                   # set-point box
        rows.append(blk(H=I))                                   # output box
        rows.append(blk(H=D))                                   # ramp
        rows.append(blk(U=I, S=-D))                             # u >= dS
        rows.append(blk(U=I, S=D))                              # u >= -dS
        rows.append(blk(B=I))                                   # capability
        tri = np.tril(np.ones((p, p))) * pl.dt / HOUR_S / b.c_b
        rows.append(blk(B=tri * b.eta_ch))                      # SOE upper
        rows.append(blk(B=tri / b.eta_dch))                     # SOE lower
        return P, np.vstack(rows)

    def bounds(self, inp: LowerLayerInput, cap_lo, cap_hi):
        """Linear cost ``q`` and bounds ``l``, ``u`` for ``inp`` and per-step capability."""
        p, pl, b = self.p, self.plant, self.bess
        S, H, B, U = self._blocks()
        a = pl.dt / pl.tau_h
        p_set = droop_target(inp.f_hat, inp.p_disp_horizon, pl)
        h_disp = inp.p_disp_horizon + inp.b0
        q = np.zeros(4 * p)
        q[H] = -2.0 * p_set - 2.0 * self.w_d * h_disp
        q[B] = 2.0 * p_set
        q[U] = inp.gamma
        const = float(p_set @ p_set + self.w_d * h_disp @ h_disp)

        s_prev = inp.h_meas if inp.s_prev is None else inp.s_prev
        ramp = pl.h_dot_max * pl.dt
        soe0 = inp.bess_state.soe
        inf = np.full(p, np.inf)
        e1 = np.zeros(p)
        e1[0] = 1.0
        dyn = e1 * (1.0 - a) * inp.h_meas
        box_s = (np.full(p, pl.h_min), np.full(p, pl.h_max))
        ramp_l = -ramp + e1 * inp.h_meas
        ramp_u = ramp + e1 * inp.h_meas
        room_up = max(b.soe_max - inp.soe_margin - soe0, 0.0)
        room_dn = min(b.soe_min + inp.soe_margin - soe0, 0.0)
        l = np.concatenate([
            dyn, box_s[0], box_s[0], ramp_l,
            -e1 * s_prev, e1 * s_prev,
            np.asarray(cap_lo, dtype=float) * np.ones(p),
            -inf, np.full(p, room_dn),
        ])
        u = np.concatenate([
            dyn, box_s[1], box_s[1], ramp_u,
            inf, inf,
            np.asarray(cap_hi, dtype=float) * np.ones(p),
            np.full(p, room_up), inf,
        ])
        return q, l, u, const

    def problem(self, inp: LowerLayerInput, cap_lo, cap_hi) -> QpProblem:
        q, l, u, _ = self.bounds(inp, cap_lo, cap_hi)
        return QpProblem(self.P, q, self.A, l, u)

    def _shifted_warm(self):
        if self._warm is None:
            return None
        x, y = self._warm
        p = self.p
        xs = np.concatenate([np.append(blk[1:], blk[-1]) for blk in x.reshape(4, p)])
        ys = np.concatenate([np.append(blk[1:], blk[-1]) for blk in y.reshape(-1, p)])
        return xs, ys

    def solve(self, inp: LowerLayerInput, cap_lo, cap_hi, warm=None):
        if inp.p != self.p:
            raise ConfigError(f"input horizon {inp.p} != workspace horizon {self.p}")
        q, l, u, const = self.bounds(inp, cap_lo, cap_hi)
        warm = self._shifted_warm() if warm is None else warm
        sol = self.solver.solve(q, l, u, warm_start=warm)
        if sol.status is not QpStatus.SOLVED and warm is not None:
            sol = self.solver.solve(q, l, u)
        if sol.status is QpStatus.SOLVED:
            self._warm = (sol.x.copy(), sol.y.copy())
        else:
            self._warm = None
        return sol, sol.objective + const

    def split(self, x: np.ndarray) -> dict:
        S, H, B, U = self._blocks()
        return {"s": x[S], "h": x[H], "b": x[B], "u": x[U]}


def build_ll_qp(inp: LowerLayerInput, plant: PlantConfig, bess: BessConfig) -> QpProblem:
    """Lower-layer QP for ``inp`` with the capability box at the measured state."""
    lo, hi = capability(inp.bess_state, bess)
    ll = LowerLayer(plant, bess, inp.p, inp.dispatch_weight)
    return ll.problem(inp, lo, hi)


def _trajectory_capability(state: BessState, b_plan: np.ndarray, bess: BessConfig,
                           dt: float, disc) -> tuple[np.ndarray, np.ndarray]:
    """Capability at each horizon step along the predicted battery trajectory."""
    lo = np.empty(b_plan.size)
    hi = np.empty(b_plan.size)
    st = state
    for j, bj in enumerate(b_plan):
        lo[j], hi[j] = capability(st, bess)
        if j + 1 < b_plan.size:
            st = bess_step(st, float(bj), bess, dt, disc)
    return lo, hi


# ---------------------------------------------------------------------------
# Controller state and the DLMPC step


@dataclass
class ControllerState:
    """What a controller carries between steps."""

    cfg: ControllerConfig
    b0: float = 0.0
    hour: int = -1
    s_prev: float | None = None
    fallbacks: int = 0
    ul_infeasible: int = 0
    ul_calls: int = 0
    lower: LowerLayer | None = None
    disc: object = None
    last_ul: UpperLayerResult | None = None
    tags: list[str] = field(default_factory=list)


def _soe_guard(b_set: float, state: BessState, bess: BessConfig, dt: float) -> float:
    """Limit ``b_set`` so the next-step SOE stays inside the limits."""
    room_up = max(bess.soe_max - state.soe, 0.0) * bess.c_b * HOUR_S / dt
    room_dn = max(state.soe - bess.soe_min, 0.0) * bess.c_b * HOUR_S / dt
    return _clamp(b_set, -room_dn * bess.eta_dch, room_up / bess.eta_ch)


def step_dlmpc(k: int, f_meas: float, h_meas: float, bess_state: BessState,
               cs: ControllerState, plant: PlantConfig, bess: BessConfig,
               p_disp_horizon: np.ndarray) -> StepDecision:
    """One receding-horizon step; falls back to the DBF split on solver failure."""
    cfg = cs.cfg
    p = cfg.horizon
    if cs.lower is None:
        cs.lower = LowerLayer(plant, bess, p, cfg.dispatch_weight)
        cs.disc = discretize_ttc(bess.ttc, plant.dt)
    f_hat = fc.short_term_frequency([f_meas], p)
    inp = LowerLayerInput(k, f_hat, p_disp_horizon, h_meas, bess_state, cs.b0, cfg.gamma, p,
                          cs.s_prev, cfg.dispatch_weight, cfg.soe_margin)
    lo, hi = capability(bess_state, bess)
    sol, obj = cs.lower.solve(inp, lo, hi)
    if sol.solved and cfg.fidelity == "successive":
        b_plan = cs.lower.split(sol.x)["b"]
        lo_k, hi_k = _trajectory_capability(bess_state, b_plan, bess, plant.dt, cs.disc)
        sol2, obj2 = cs.lower.solve(inp, lo_k, hi_k, warm=(sol.x, sol.y))
        if sol2.solved:
            sol, obj = sol2, obj2
    p_set = float(droop_target(f_meas, p_disp_horizon[0], plant))
    if not sol.solved:
        cs.fallbacks += 1
        thr = max(hi, -lo) / plant.sigma_f
        d = step_dbf(k, f_meas, plant, float(p_disp_horizon[0]), max(thr, 1e-9), cs.b0, (lo, hi))
        b_set = _soe_guard(d.b_set, bess_state, bess, plant.dt)
        cs.s_prev = d.h_set
        return replace(d, b_set=b_set, status=f"fallback:{sol.status.value}",
                       tags=d.tags + ("fallback",))
    parts = cs.lower.split(sol.x)
    h_set = _clamp(float(parts["s"][0]), plant.h_min, plant.h_max)
    b_set = _clamp(float(parts["b"][0]), lo, hi)
    cs.s_prev = h_set
    return StepDecision(k, h_set, b_set, p_set, status="ok", objective=obj)


# ---------------------------------------------------------------------------
# Hour boundary


def hour_boundary(g: int, soe_meas: float, history, model: fc.ForecastModel | None,
                  plant: PlantConfig, bess: BessConfig,
                  provider=None) -> tuple[float, float, UpperLayerResult | None, tuple[str, ...]]:
    """Hourly offset ``B0`` and the shifted hydro dispatch for hour ``g``.

    ``history`` holds completed hourly grid integrals (Hz*h, positive for
    under-frequency). ``provider``, when given, is a callable ``g ->
    WForecast`` in the grid frame that replaces the fitted model (used for
    hindsight tests). Falls back to persistence when the model is missing
    or lacks history, and to a zero forecast when there is no history.

    Returns ``(b0, hydro_dispatch, ul_result, tags)``.
    """
    tags = []
    if provider is not None:
        w = provider(g)
    else:
        hist = np.asarray(getattr(history, "values", history), dtype=float)
        level = 0.95 if model is None else model.level
        try:
            if model is None:
                raise fc.InsufficientData("no fitted model")
            w = fc.predict_next_hour(model, hist)
        except fc.InsufficientData:
            if hist.size >= 2:
                w = fc.predict_next_hour(fc.fit(hist, fc.ForecastKind.PERSISTENCE, level), hist)
                tags.append("forecast_persistence")
            elif hist.size == 1:
                w = fc.WForecast(float(hist[-1]), level=level)
                tags.append("forecast_persistence")
            else:
                w = fc.WForecast(0.0, level=level)
                tags.append("forecast_zero")
    # grid frame -> battery frame: negate and swap the bands
    wb = fc.WForecast(-w.w_hat, w.w_down, w.w_up, w.level)
    res = solve_upper_layer(UpperLayerInput(min(max(soe_meas, 0.0), 1.0), wb, plant.sigma_f, bess))
    if not res.feasible:
        tags.append("ul_infeasible")
    p_disp = plant.dispatch_at(g)
    return res.b0, p_disp + res.b0, res, tuple(tags)
