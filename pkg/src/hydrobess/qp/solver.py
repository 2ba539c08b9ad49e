"""Dense convex QP solver: minimise 1/2 x'Px + q'x subject to l <= Ax <= u.

Operator splitting (ADMM) on a Ruiz-equilibrated copy of the problem,
followed by an active-set polish that solves the reduced KKT system exactly.
The workspace keeps its scaling, step size and factorisation between solves,
so a receding-horizon caller that only changes ``q``, ``l`` and ``u`` pays
for the factorisation once.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from . import _backend

log = logging.getLogger(__name__)

INF = np.inf


class QpStatus(str, enum.Enum):
    SOLVED = "solved"
    MAX_ITER = "max_iter"
    INFEASIBLE = "infeasible"


@dataclass
class QpProblem:
    """Problem data. ``P`` is symmetrised and checked for PSD on creation."""

    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float, ndmin=2)
        n = P.shape[0]
        if P.shape != (n, n):
            raise ValueError("P must be square")
        P = 0.5 * (P + P.T)
        if n:
            lam = np.linalg.eigvalsh(P)
            if lam[0] < -1e-9 * max(1.0, abs(lam[-1])):
                raise ValueError(f"P is not PSD (min eigenvalue {lam[0]:.3g})")
        q = np.asarray(self.q, dtype=float).reshape(n)
        A = np.asarray(self.A, dtype=float)
        if A.size == 0:
            A = np.zeros((0, n))
        A = A.reshape(-1, n)
        m = A.shape[0]
        l = np.asarray(self.l, dtype=float).reshape(m)
        u = np.asarray(self.u, dtype=float).reshape(m)
        if np.any(l > u):
            raise ValueError("l <= u violated")
        self.P, self.q, self.A, self.l, self.u = P, q, A, l, u

    @property
    def n(self) -> int:
        return self.P.shape[0]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x)

    def dump_csv(self, directory: str | Path) -> None:
        """Write P, q, A, l, u as CSV files for offline inspection."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in ("P", "q", "A", "l", "u"):
            np.savetxt(d / f"{name}.csv", np.atleast_2d(getattr(self, name)), delimiter=",")


@dataclass
class QpSolution:
    x: np.ndarray
    y: np.ndarray
    status: QpStatus
    primal_res: float
    dual_res: float
    iterations: int
    objective: float
    polished: bool = False

    @property
    def solved(self) -> bool:
        return self.status is QpStatus.SOLVED


def kkt_residuals(P, q, A, l, u, x, y) -> tuple[float, float]:
    """Primal (bound violation) and dual (stationarity) infinity norms."""
    Ax = A @ x
    prim = 0.0
    if Ax.size:
        prim = float(np.max(np.maximum(np.maximum(l - Ax, Ax - u), 0.0)))
    dual = float(np.max(np.abs(P @ x + q + A.T @ y), initial=0.0))
    return prim, dual


def _inf_norm_cols(M: np.ndarray) -> np.ndarray:
    if M.size == 0:
        return np.zeros(M.shape[1])
    return np.max(np.abs(M), axis=0)


class QpSolver:
    """Workspace for a fixed ``(P, A)`` pair.

    Parameters
    ----------
    P, A : ndarray
        Quadratic cost and constraint matrices. ``P`` must be PSD.
    eps_abs : float
        Absolute tolerance on both KKT residuals for ``SOLVED``.
    max_iter : int
        ADMM iteration cap.
    """

    sigma = 1e-6
    alpha = 1.6
    check_every = 25
    scaling_iter = 15
    eps_pinf = 1e-5
    adapt_every = 4
    polish_every = 8
    polish_steps = 8

    def __init__(self, P, A, eps_abs: float = 1e-6, max_iter: int = 20000, rho: float = 0.1):
        probe = QpProblem(P, np.zeros(np.shape(P)[0]), A,
                          -INF * np.ones(np.shape(A)[0]) if np.size(A) else [],
                          INF * np.ones(np.shape(A)[0]) if np.size(A) else [])
        self.P = probe.P
        self.A = probe.A
        self.n, self.m = probe.n, probe.m
        self.eps_abs = eps_abs
        self.max_iter = max_iter
        self.rho = float(rho)
        self._scale()
        self._rho_vec_key = None
        self._Minv = None
        self._c = None

    # -- setup ------------------------------------------------------------
    def _scale(self) -> None:
        n, m = self.n, self.m
        D = np.ones(n)
        E = np.ones(m)
        P = self.P.copy()
        A = self.A.copy()
        for _ in range(self.scaling_iter):
            cn = np.maximum(_inf_norm_cols(P), _inf_norm_cols(A))
            cn = np.clip(cn, 1e-4, 1e4)
            cn[cn <= 1e-4] = 1.0
            dD = 1.0 / np.sqrt(cn)
            if m:
                rn = np.clip(np.max(np.abs(A), axis=1), 1e-4, 1e4)
                rn[rn <= 1e-4] = 1.0
                dE = 1.0 / np.sqrt(rn)
            else:
                dE = np.ones(0)
            P = dD[:, None] * P * dD[None, :]
            A = dE[:, None] * A * dD[None, :]
            D *= dD
            E *= dE
        self.D, self.E = D, E
        self.Ps, self.As = P, A
        pn = float(np.mean(_inf_norm_cols(P))) if n else 0.0
        self.c_base = pn

    def _cost_scale(self, q: np.ndarray) -> float:
        # fixed at the first solve so later solves reuse the factorisation
        if self._c is None:
            self._c = self._compute_cost_scale(q)
        return self._c

    def _compute_cost_scale(self, q: np.ndarray) -> float:
        qn = float(np.max(np.abs(self.D * q), initial=0.0))
        s = max(self.c_base, qn)
        if s < 1e-4:
            return 1.0
        return float(np.clip(1.0 / s, 1e-4, 1e4))

    def _rho_vector(self, l: np.ndarray, u: np.ndarray) -> np.ndarray:
        rho = np.full(self.m, self.rho)
        free = np.isinf(l) & np.isinf(u)
        eq = (u - l) < 1e-12
        rho[eq] = 1e3 * self.rho
        rho[free] = 1e-6
        return rho

    def _factor(self, rho_vec: np.ndarray, c: float) -> np.ndarray:
        key = (rho_vec.tobytes(), c)
        if self._rho_vec_key == key and self._Minv is not None:
            return self._Minv
        K = c * self.Ps + self.sigma * np.eye(self.n)
        if self.m:
            K += self.As.T @ (rho_vec[:, None] * self.As)
        cf = sla.cho_factor(K, lower=True, check_finite=False)
        Minv = sla.cho_solve(cf, np.eye(self.n), check_finite=False)
        Minv = np.ascontiguousarray(0.5 * (Minv + Minv.T))
        self._Minv, self._rho_vec_key = Minv, key
        return Minv

    # -- solve ------------------------------------------------------------
    def solve(self, q, l, u, warm_start: tuple[np.ndarray, np.ndarray] | None = None,
              polish: bool = True) -> QpSolution:
        """Solve with new ``q``, ``l``, ``u``; ``warm_start`` is ``(x, y)``."""
        q = np.asarray(q, dtype=float).reshape(self.n)
        l = np.asarray(l, dtype=float).reshape(self.m)
        u = np.asarray(u, dtype=float).reshape(self.m)
        if np.any(l > u):
            raise ValueError("l <= u violated")
        P, A, eps = self.P, self.A, self.eps_abs

        if warm_start is not None and polish:
            x0, y0 = (np.asarray(v, dtype=float) for v in warm_start)
            z0 = np.clip(A @ x0, l, u)
            sol = self._polish(q, l, u, x0, z0, y0)
            if sol is not None:
                sol.iterations = 0
                return sol

        c = self._cost_scale(q)
        D, E = self.D, self.E
        qs = np.ascontiguousarray(c * D * q)
        ls = np.ascontiguousarray(E * l)
        us = np.ascontiguousarray(E * u)
        rho_vec = self._rho_vector(l, u)
        Minv = self._factor(rho_vec, c)
        Ps = c * self.Ps
        As = self.As

        if warm_start is not None:
            x = np.ascontiguousarray(warm_start[0] / D)
            y = np.ascontiguousarray(c * warm_start[1] / E) if self.m else np.zeros(0)
            z = np.clip(As @ x, ls, us)
        else:
            x = np.zeros(self.n)
            y = np.zeros(self.m)
            z = np.zeros(self.m) if self.m == 0 else np.clip(np.zeros(self.m), ls, us)
        z = np.ascontiguousarray(z)
        dy = np.zeros(self.m)

        it = 0
        checks = 0
        status = QpStatus.MAX_ITER
        last_polish = INF
        best = None
        while it < self.max_iter:
            checks += 1
            k = min(self.check_every, self.max_iter - it)
            _backend.admm_iterate(x, z, y, dy, Minv, As, qs, ls, us, rho_vec,
                                  self.sigma, self.alpha, k)
            it += k
            xu = D * x
            yu = E * y / c
            zu = z / E if self.m else z
            prim = float(np.max(np.abs(A @ xu - zu), initial=0.0))
            dual = float(np.max(np.abs(P @ xu + q + A.T @ yu), initial=0.0))
            if not (np.isfinite(prim) and np.isfinite(dual)):
                break
            if prim <= eps and dual <= eps:
                kp, kd = kkt_residuals(P, q, A, l, u, xu, yu)
                if kp <= eps and kd <= eps:
                    best = QpSolution(xu, yu, QpStatus.SOLVED, kp, kd, it,
                                      float(0.5 * xu @ P @ xu + q @ xu))
                    if polish:
                        pol = self._polish(q, l, u, xu, zu, yu)
                        if pol is not None and pol.objective <= best.objective + 1e-12:
                            pol.iterations = it
                            return pol
                    return best
            res = max(prim, dual)
            if polish and (res < min(1e-3, 0.5 * last_polish) or checks % self.polish_every == 0):
                last_polish = min(res, last_polish)
                pol = self._polish(q, l, u, xu, zu, yu)
                if pol is not None:
                    pol.iterations = it
                    return pol
            if self.m and self._primal_infeasible(dy, l, u, c):
                status = QpStatus.INFEASIBLE
                break
            # step-size adaptation; the new rho is kept for later solves
            if checks % self.adapt_every:
                continue
            Psx = Ps @ x
            Asx = As @ x
            Aty = As.T @ y
            rp = float(np.max(np.abs(Asx - z), initial=0.0)) / max(
                float(np.max(np.abs(Asx), initial=0.0)), float(np.max(np.abs(z), initial=0.0)), 1e-10)
            rd = float(np.max(np.abs(Psx + qs + Aty), initial=0.0)) / max(
                float(np.max(np.abs(Psx), initial=0.0)), float(np.max(np.abs(Aty), initial=0.0)),
                float(np.max(np.abs(qs), initial=0.0)), 1e-10)
            if rp > 0 and rd > 0:
                ratio = np.sqrt(rp / rd)
                if ratio > 5.0 or ratio < 0.2:
                    self.rho = float(np.clip(self.rho * ratio, 1e-6, 1e6))
                    rho_vec = self._rho_vector(l, u)
                    Minv = self._factor(rho_vec, c)

        xu = D * x
        yu = E * y / c if self.m else y
        kp, kd = kkt_residuals(P, q, A, l, u, xu, yu)
        return QpSolution(xu, yu, status, kp, kd, it, float(0.5 * xu @ P @ xu + q @ xu))

    def _primal_infeasible(self, dy_s, l, u, c) -> bool:
        """Certificate: A'dy ~ 0 while u'dy+ + l'dy- < 0 (unscaled dy)."""
        dy = self.E * dy_s / c
        nrm = float(np.max(np.abs(dy), initial=0.0))
        if nrm < 1e-12:
            return False
        dy = dy / nrm
        if float(np.max(np.abs(self.A.T @ dy), initial=0.0)) > self.eps_pinf:
            return False
        pos, neg = np.maximum(dy, 0.0), np.minimum(dy, 0.0)
        if np.any((pos > self.eps_pinf) & np.isinf(u)) or np.any((neg < -self.eps_pinf) & np.isinf(l)):
            return False
        uu = np.where(np.isinf(u), 0.0, u)
        ll = np.where(np.isinf(l), 0.0, l)
        return float(uu @ pos + ll @ neg) < -self.eps_pinf

    def _polish(self, q, l, u, x, z, y) -> QpSolution | None:
        """Guess the active set from ``(z, y)`` and solve the equality KKT system.

        When the guess is wrong the set is updated from the KKT solution and
        the system is solved again, for at most ``polish_steps`` rounds.
        """
        P, A, eps = self.P, self.A, self.eps_abs
        n = self.n
        eq = (u - l) < 1e-12
        seen = set()
        for _ in range(self.polish_steps):
            low = (z - l) < -y
            upp = (u - z) < y
            low |= eq & (low | upp)
            upp &= ~low
            key = (low.tobytes(), upp.tobytes())
            if key in seen:
                return None
            seen.add(key)
            sol = self._kkt_solve(q, l, u, low, upp)
            if sol is None:
                return None
            xp, yp = sol
            ineq_low = low & ~eq
            signs_ok = not (np.any(yp[ineq_low] > eps) or np.any(yp[upp] < -eps))
            if signs_ok:
                kp, kd = kkt_residuals(P, q, A, l, u, xp, yp)
                if kp <= eps and kd <= eps:
                    break
            z, y = A @ xp, yp
        else:
            return None
        return QpSolution(xp, yp, QpStatus.SOLVED, kp, kd, 0,
                          float(0.5 * xp @ P @ xp + q @ xp), polished=True)

    def _kkt_solve(self, q, l, u, low, upp):
        P, A, n = self.P, self.A, self.n
        act = np.flatnonzero(low | upp)
        Aa = A[act]
        ba = np.where(low[act], l[act], u[act])
        na = act.size
        delta = 1e-9
        K = np.zeros((n + na, n + na))
        K[:n, :n] = P
        K[:n, n:] = Aa.T
        K[n:, :n] = Aa
        Kr = K.copy()
        Kr[np.arange(n), np.arange(n)] += delta
        Kr[n + np.arange(na), n + np.arange(na)] -= delta
        rhs = np.concatenate([-q, ba])
        try:
            lu = sla.lu_factor(Kr, check_finite=False)
        except (sla.LinAlgError, ValueError):
            return None
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        for _ in range(5):
            sol += sla.lu_solve(lu, rhs - K @ sol, check_finite=False)
        if not np.all(np.isfinite(sol)):
            return None
        yp = np.zeros(self.m)
        yp[act] = sol[n:]
        return sol[:n], yp


def solve(problem: QpProblem, eps_abs: float = 1e-6, max_iter: int = 20000,
          warm_start: tuple[np.ndarray, np.ndarray] | None = None,
          dump_dir: str | Path | None = None) -> QpSolution:
    """Solve ``problem`` with a fresh workspace.

    ``status`` is ``INFEASIBLE`` when the ADMM dual increments form a primal
    infeasibility certificate, ``MAX_ITER`` when the cap is hit first.
    ``dump_dir`` writes the problem matrices as CSV before solving.
    """
    if dump_dir is not None:
        problem.dump_csv(dump_dir)
    ws = QpSolver(problem.P, problem.A, eps_abs=eps_abs, max_iter=max_iter)
    return ws.solve(problem.q, problem.l, problem.u, warm_start=warm_start)
