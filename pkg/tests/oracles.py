"""Independent reference implementations used to generate and check expected values.

None of these import the package's solver or controller code paths that
they check.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp


# ---------------------------------------------------------------------------
# QP: accelerated projected gradient on the dual of a strictly convex QP


def pg_qp_oracle(P, q, A, l, u, tol=1e-11, max_iter=200000):
    """Optimal value of ``min 0.5 x'Px + q'x  s.t.  l <= Ax <= u`` for PD ``P``.

    The dual variables ``y+`` (upper rows) and ``y-`` (lower rows) are
    non-negative; the dual is a smooth concave quadratic maximised by FISTA
    with adaptive restart. Rows with an infinite bound keep that multiplier
    at zero.

    Returns ``(x, value)`` where ``value`` is the dual objective at the last
    iterate (a lower bound that converges to the optimum).
    """
    P = np.asarray(P, float)
    q = np.asarray(q, float)
    A = np.asarray(A, float).reshape(-1, P.shape[0])
    l = np.asarray(l, float)
    u = np.asarray(u, float)
    m = A.shape[0]
    Pinv = np.linalg.inv(P)
    At = np.vstack([A, -A])                      # multiplies [y+, y-]
    bnd = np.concatenate([np.where(np.isinf(u), 0.0, u), np.where(np.isinf(l), 0.0, -l)])
    free = np.concatenate([np.isfinite(u), np.isfinite(l)])
    G = At @ Pinv @ At.T
    h = At @ Pinv @ q + bnd
    L = max(np.linalg.eigvalsh(G).max(), 1e-12) if m else 1.0

    def value(y):
        lam = At.T @ y
        r = q + lam
        return -0.5 * r @ Pinv @ r - bnd @ y

    y = np.zeros(2 * m)
    z = y.copy()
    t = 1.0
    f_prev = -np.inf
    for _ in range(max_iter):
        grad = G @ z + h                         # gradient of the negated dual
        y_new = np.maximum(z - grad / L, 0.0) * free
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if (z - y_new) @ (y_new - y) > 0:        # restart
            t_new = 1.0
            z = y_new.copy()
        else:
            z = y_new + (t - 1.0) / t_new * (y_new - y)
        step = np.max(np.abs(y_new - y), initial=0.0)
        y, t = y_new, t_new
        if step < tol * max(1.0, np.max(np.abs(y), initial=0.0)):
            break
    x = -Pinv @ (q + At.T @ y)
    return x, float(value(y))


def random_qp(rng, n, m, singular=False):
    """Random feasible PSD QP; about a quarter of the bounds are infinite."""
    k = max(1, n // 2) if singular else n + 2
    M = rng.standard_normal((k, n))
    P = M.T @ M + (0.0 if singular else 0.1) * np.eye(n)
    q = rng.standard_normal(n) * 3.0
    A = rng.standard_normal((m, n))
    x0 = rng.standard_normal(n)
    ax = A @ x0
    l = ax - rng.uniform(0.0, 2.0, m)
    u = ax + rng.uniform(0.0, 2.0, m)
    l[rng.random(m) < 0.25] = -np.inf
    u[rng.random(m) < 0.25] = np.inf
    if singular:
        # box every variable so the problem stays bounded below
        A = np.vstack([A, np.eye(n)])
        l = np.concatenate([l, x0 - 3.0])
        u = np.concatenate([u, x0 + 3.0])
    return P, q, A, l, u


# ---------------------------------------------------------------------------
# Upper layer: brute-force grid scan


def ul_scan_oracle(soe, w_hat, w_up, w_down, sigma_f, c_b, soe_min, soe_max,
                   eta_ch, eta_dch, b_ch, b_dch, step=1e-3):
    """Smallest |B0| on a grid of spacing ``step`` (kW) keeping the SOE band in the limits.

    Written directly from the hourly energy balance (battery frame):
    ``SOE_end = SOE + (E0 + sigma_f * W_eff) / C_B`` with charging energy
    scaled by ``eta_ch`` and discharging energy divided by ``eta_dch``.
    """
    def eff(x):
        return np.where(x >= 0, x * eta_ch, x / eta_dch)

    grid = np.arange(-round(b_dch / step), round(b_ch / step) + 1) * step
    e0 = eff(grid)
    hi = soe + (e0 + sigma_f * eff(np.array(w_hat + w_up))) / c_b
    lo = soe + (e0 + sigma_f * eff(np.array(w_hat - w_down))) / c_b
    ok = (hi <= soe_max + 1e-12) & (lo >= soe_min - 1e-12)
    if ok.any():
        idx = np.flatnonzero(ok)
        return float(grid[idx[np.argmin(np.abs(grid[idx]))]]), True
    viol = np.maximum(hi - soe_max, 0) ** 2 + np.maximum(soe_min - lo, 0) ** 2
    return float(grid[np.argmin(viol)]), False


# ---------------------------------------------------------------------------
# Battery: continuous-time RC network under a held current


def ttc_ode_oracle(r_s, branches, ocv, current, t_end, dt_out):
    """Terminal voltage samples of ``OCV + R_s i + sum(x_j)`` with
    ``dx_j/dt = -x_j / (R_j C_j) + i / C_j`` integrated by an adaptive
    high-order method."""
    rc = np.array([r * c for r, c in branches])
    cap = np.array([c for _, c in branches])

    def rhs(_t, x):
        return -x / rc + current / cap

    t_eval = np.arange(0.0, t_end + 0.5 * dt_out, dt_out)
    sol = solve_ivp(rhs, (0.0, t_end), np.zeros(len(branches)), method="DOP853",
                    t_eval=t_eval, rtol=1e-12, atol=1e-12)
    return t_eval, ocv + r_s * current + sol.y.sum(axis=0)


# ---------------------------------------------------------------------------
# Servo movements: explicit loop over the set-point changes


def movement_reference(h_set, eps):
    """Count same-sign runs of above-threshold changes with a plain loop."""
    mileage = 0.0
    nom = 0
    prev = 0
    for a, b in zip(h_set[:-1], h_set[1:]):
        d = b - a
        if abs(d) > eps:
            mileage += abs(d)
            s = 1 if d > 0 else -1
            if s != prev:
                nom += 1
            prev = s
        else:
            prev = 0
    return mileage, nom


def gamma_reference(r, k):
    """Exceedance fraction written out term by term."""
    n = len(r)
    mean = sum(r) / n
    sigma = math.sqrt(sum((x - mean) ** 2 for x in r) / n)
    if sigma == 0:
        return 0.0
    return sum(1 for x in r if abs(x) >= k * sigma) / n
