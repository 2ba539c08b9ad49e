"""Ground-truth plant models: hydro power response, TTC battery, converter limits.

All step functions are pure: they take a state and return a new one.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .core import BessConfig, PlantConfig, TtcParams

__all__ = [
    "HydroState",
    "BessState",
    "TtcDiscrete",
    "VoltageWindowViolated",
    "hydro_step",
    "bess_step",
    "capability",
    "discretize_ttc",
    "initial_bess_state",
    "ac_to_dc",
    "perturb_ttc",
]

V_AC_NOMINAL = 400.0


class VoltageWindowViolated(RuntimeError):
    """DC voltage left the hard guard band, or the power demand has no solution."""


@dataclass(frozen=True)
class HydroState:
    h: float


@dataclass(frozen=True)
class BessState:
    """Battery state after a step.

    ``x`` holds the three RC branch voltages (V); ``b`` is the AC power that
    was actually applied (kW, +charging) and ``flags`` lists events such as
    ``clipped`` or ``soe_saturated``.
    """

    soe: float
    x: tuple[float, float, float] = (0.0, 0.0, 0.0)
    v_dc: float = 0.0
    v_ac: float = V_AC_NOMINAL
    i_dc: float = 0.0
    b: float = 0.0
    flags: tuple[str, ...] = ()


def initial_bess_state(cfg: BessConfig, soe: float) -> BessState:
    return BessState(soe=soe, v_dc=cfg.ttc.ocv(soe))


def hydro_step(state: HydroState, h_set: float, cfg: PlantConfig) -> HydroState:
    """First-order response to ``h_set`` with the ramp limit as saturation."""
    a = cfg.dt / cfg.tau_h
    target = min(max(h_set, cfg.h_min), cfg.h_max)
    h = (1.0 - a) * state.h + a * target
    step = cfg.h_dot_max * cfg.dt
    dh = h - state.h
    if dh > step:
        h = state.h + step
    elif dh < -step:
        h = state.h - step
    return HydroState(h)


@dataclass(frozen=True)
class TtcDiscrete:
    """Exact zero-order-hold discretisation of the TTC model.

    With branch states ``x`` and current ``i`` held over the step::

        x'  = a * x + b * i
        v   = phi_v @ x + psi_i * i + psi_1 @ [1, soe]

    where ``phi_v = a`` (row vector) and ``psi_1`` carries the linear OCV.
    """

    a: np.ndarray
    b: np.ndarray
    phi_v: np.ndarray
    psi_i: float
    psi_1: np.ndarray

    def voltage(self, x, i: float, soe: float) -> float:
        return float(self.phi_v @ np.asarray(x) + self.psi_i * i
                     + self.psi_1[0] + self.psi_1[1] * soe)


def discretize_ttc(ttc: TtcParams, dt: float) -> TtcDiscrete:
    if not dt > 0:
        raise ValueError("dt must be positive")
    a = np.empty(3)
    b = np.empty(3)
    for j, (r, c) in enumerate(ttc.branches):
        tau = r * c
        a[j] = math.exp(-dt / tau) if tau > 0 else 0.0
        b[j] = r * (1.0 - a[j])
    return TtcDiscrete(
        a=a,
        b=b,
        phi_v=a.copy(),
        psi_i=float(ttc.r_s + b.sum()),
        psi_1=np.array([ttc.ocv0, ttc.ocv_slope]),
    )


def ac_to_dc(b_set: float, cfg: BessConfig) -> float:
    """AC set-point to DC-bus power (kW)."""
    return b_set * cfg.eta_ch if b_set >= 0 else b_set / cfg.eta_dch


def capability(state: BessState, cfg: BessConfig) -> tuple[float, float]:
    """Converter power bounds ``(B_lo, B_hi)`` in kW at ``state``.

    The rated bound shrinks linearly to zero across ``soe_derate_band`` at
    each SOE limit (a zero band is a hard cut at the limit) and near the
    edges of the DC voltage window.
    """
    cap = cfg.capability
    hi = min(cap.b_rated, cfg.b_max_charge)
    lo = min(cap.b_rated, cfg.b_max_discharge)
    band = cap.soe_derate_band
    soe = state.soe
    if band > 0:
        f_hi = min(max((cfg.soe_max - soe) / band, 0.0), 1.0)
        f_lo = min(max((soe - cfg.soe_min) / band, 0.0), 1.0)
    else:
        f_hi = 1.0 if soe < cfg.soe_max else 0.0
        f_lo = 1.0 if soe > cfg.soe_min else 0.0
    span = 0.05 * (cap.v_dc_max - cap.v_dc_min)
    v = state.v_dc
    f_v = min(max((v - cap.v_dc_min) / span, 0.0), 1.0)
    f_v *= min(max((cap.v_dc_max - v) / span, 0.0), 1.0)
    return -lo * f_lo * f_v, hi * f_hi * f_v


def bess_step(state: BessState, b_set: float, cfg: BessConfig, dt: float,
              disc: TtcDiscrete | None = None) -> BessState:
    """Advance the battery by one step under AC set-point ``b_set`` (kW).

    The DC current solves ``P_dc = v(i) * i`` where ``v`` is affine in ``i``
    through the discretised TTC model; the positive root of that quadratic
    is taken in closed form.
    """
    disc = disc or discretize_ttc(cfg.ttc, dt)
    flags = []
    lo, hi = capability(state, cfg)
    b = b_set
    if b > hi + 1e-9 or b < lo - 1e-9:
        flags.append("clipped")
    b = min(max(b, lo), hi)
    p_w = ac_to_dc(b, cfg) * 1e3
    x = np.asarray(state.x, dtype=float)
    c0 = float(disc.psi_1[0] + disc.psi_1[1] * state.soe + disc.phi_v @ x)
    r = disc.psi_i
    if r > 0:
        disc_ = c0 * c0 + 4.0 * r * p_w
        if disc_ < 0 or c0 <= 0:
            raise VoltageWindowViolated(
                f"DC power {p_w / 1e3:.2f} kW not deliverable (open-circuit {c0:.1f} V)"
            )
        i = 2.0 * p_w / (c0 + math.sqrt(disc_))
    else:
        if c0 <= 0:
            raise VoltageWindowViolated("non-positive open-circuit voltage")
        i = p_w / c0
    x_new = disc.a * x + disc.b * i
    v = c0 + r * i
    cap = cfg.capability
    if not (0.9 * cap.v_dc_min <= v <= 1.1 * cap.v_dc_max):
        raise VoltageWindowViolated(f"v_dc = {v:.1f} V outside guard band")
    soe = state.soe + i * v * dt / 3.6e6 / cfg.c_b
    if soe > 1.0 or soe < 0.0:
        flags.append("soe_saturated")
        soe = min(max(soe, 0.0), 1.0)
    return BessState(
        soe=soe,
        x=tuple(float(v_) for v_ in x_new),
        v_dc=float(v),
        v_ac=state.v_ac,
        i_dc=float(i),
        b=float(b),
        flags=tuple(flags),
    )


def perturb_ttc(ttc: TtcParams, frac: float, rng: np.random.Generator) -> TtcParams:
    """Scale every resistance and capacitance by an independent U(1-frac, 1+frac)."""
    if frac <= 0:
        return ttc
    names = ("r_s", "r1", "c1", "r2", "c2", "r3", "c3")
    scale = rng.uniform(1.0 - frac, 1.0 + frac, len(names))
    return dataclasses.replace(
        ttc, **{n: getattr(ttc, n) * s for n, s in zip(names, scale)}
    )
