"""Sequential quadratic programming for ``min f(x)`` subject to
``cl <= c(x) <= cu`` and ``lb <= x <= ub``.

Each major iteration solves a convex QP with a damped BFGS Hessian
(Goldfarb-Idnani dual active set via ``quadprog``), then backtracks on the
l1 merit function ``f + rho * sum(violation)``, trying one second-order
correction before shortening the step. If a QP subproblem is
inconsistent, an augmented-Lagrangian phase (bound-constrained L-BFGS-B
inner solves) restores a point whose linearization is consistent, and SQP
resumes from there.

Derivatives default to central finite differences.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np
import quadprog
from scipy.optimize import minimize

__all__ = [
    "Status",
    "NlpProblem",
    "NlpSolution",
    "IterationRecord",
    "FiniteDifferenceError",
    "fd_gradient",
    "fd_jacobian",
    "fd_step",
    "read_history_csv",
    "solve",
]

_EPS = np.finfo(float).eps


class Status(str, Enum):
    CONVERGED = "Converged"
    ITERATION_LIMIT = "IterationLimit"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"


class FiniteDifferenceError(ValueError):
    def __init__(self, index: int, x):
        super().__init__(f"non-finite function value when perturbing coordinate {index}")
        self.index = index
        self.x = np.array(x, copy=True)


def fd_step(x) -> np.ndarray:
    """Default central-difference step ``cbrt(eps) * (1 + |x|)``."""
    return np.cbrt(_EPS) * (1.0 + np.abs(np.asarray(x, dtype=float)))


def fd_gradient(f: Callable, x, step=None) -> np.ndarray:
    """Central-difference gradient of a scalar function."""
    x = np.array(x, dtype=float, copy=True).ravel()
    h = fd_step(x) if step is None else np.broadcast_to(np.asarray(step, dtype=float), x.shape)
    g = np.empty_like(x)
    for i in range(x.size):
        xi = x[i]
        x[i] = xi + h[i]
        fp = float(f(x))
        x[i] = xi - h[i]
        fm = float(f(x))
        x[i] = xi
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise FiniteDifferenceError(i, x)
        g[i] = (fp - fm) / (2.0 * h[i])
    return g


def fd_jacobian(c: Callable, x, step=None) -> np.ndarray:
    """Central-difference Jacobian ``(m, n)`` of a vector function."""
    x = np.array(x, dtype=float, copy=True).ravel()
    h = fd_step(x) if step is None else np.broadcast_to(np.asarray(step, dtype=float), x.shape)
    c0 = np.atleast_1d(np.array(c(x), dtype=float))
    J = np.empty((c0.size, x.size))
    for i in range(x.size):
        xi = x[i]
        x[i] = xi + h[i]
        cp = np.atleast_1d(np.array(c(x), dtype=float))
        x[i] = xi - h[i]
        cm = np.atleast_1d(np.array(c(x), dtype=float))
        x[i] = xi
        if not (np.all(np.isfinite(cp)) and np.all(np.isfinite(cm))):
            raise FiniteDifferenceError(i, x)
        J[:, i] = (cp - cm) / (2.0 * h[i])
    return J


@dataclass
class NlpProblem:
    x0: np.ndarray
    objective: Callable[[np.ndarray], float]
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None
    constraints: Callable[[np.ndarray], np.ndarray] | None = None
    cl: np.ndarray | None = None
    cu: np.ndarray | None = None
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = ""

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float).ravel().copy()
        n = self.x0.size
        self.lb = np.full(n, -np.inf) if self.lb is None else np.asarray(self.lb, float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, float).ravel()
        if self.lb.shape != (n,) or self.ub.shape != (n,):
            raise ValueError("variable bounds must match the dimension of x0")
        if np.any(self.lb > self.ub):
            bad = int(np.argmax(self.lb > self.ub))
            raise ValueError(f"inconsistent bounds on variable {bad}: {self.lb[bad]} > {self.ub[bad]}")
        if not np.all(np.isfinite(self.x0)):
            raise ValueError("x0 must be finite")
        if self.constraints is None:
            self.cl = np.zeros(0)
            self.cu = np.zeros(0)
        else:
            self.cl = np.asarray(self.cl, dtype=float).ravel()
            self.cu = np.asarray(self.cu, dtype=float).ravel()
            if self.cl.shape != self.cu.shape:
                raise ValueError("constraint bounds must have equal length")
            if np.any(self.cl > self.cu):
                raise ValueError("constraint lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.x0.size

    @property
    def m(self) -> int:
        return self.cl.size

    def f(self, x) -> float:
        return float(self.objective(x))

    def grad(self, x) -> np.ndarray:
        if self.gradient is not None:
            return np.asarray(self.gradient(x), dtype=float).ravel()
        return fd_gradient(self.objective, x)

    def c(self, x) -> np.ndarray:
        if self.constraints is None:
            return np.zeros(0)
        return np.atleast_1d(np.array(self.constraints(x), dtype=float))

    def jac(self, x) -> np.ndarray:
        if self.constraints is None:
            return np.zeros((0, self.n))
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x), dtype=float).reshape(self.m, self.n)
        return fd_jacobian(self.constraints, x)


@dataclass
class IterationRecord:
    iteration: int
    phase: str
    objective: float
    merit_before: float
    merit: float
    violation: float
    kkt: float
    step_length: float
    penalty: float

    FIELDS = ("iteration", "phase", "objective", "merit_before", "merit", "violation",
              "kkt", "step_length", "penalty")


@dataclass
class NlpSolution:
    x: np.ndarray
    objective: float
    violation: float
    status: Status
    iterations: int
    wall_time: float
    kkt_residual: float = math.inf
    multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bound_multipliers: np.ndarray = field(default_factory=lambda: np.zeros(0))
    message: str = ""
    history: list[IterationRecord] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    def history_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(IterationRecord.FIELDS)
        for r in self.history:
            w.writerow([getattr(r, k) if not isinstance(getattr(r, k), float)
                        else repr(getattr(r, k)) for k in IterationRecord.FIELDS])
        return buf.getvalue()


def read_history_csv(text: str) -> list[IterationRecord]:
    """Parse the output of :meth:`NlpSolution.history_csv`."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != IterationRecord.FIELDS:
        raise ValueError("not an iteration history table")
    out = []
    for r in rows[1:]:
        out.append(IterationRecord(int(r[0]), r[1], *(float(v) for v in r[2:])))
    return out


def _violation(c, cl, cu) -> np.ndarray:
    """Per-row violation of ``cl <= c <= cu`` (nonnegative)."""
    if c.size == 0:
        return c
    return np.maximum(cl - c, 0.0) + np.maximum(c - cu, 0.0)


class _InconsistentQP(Exception):
    pass


class _Sqp:
    def __init__(self, problem: NlpProblem, tol: float, max_iter: int, log):
        self.p = problem
        self.tol = tol
        self.max_iter = max_iter
        self.log = log
        self.fixed = problem.lb == problem.ub
        self.free = np.flatnonzero(~self.fixed)
        cl, cu = problem.cl, problem.cu
        self.eq = np.flatnonzero(cl == cu)
        self.lo = np.flatnonzero((cl != cu) & np.isfinite(cl))
        self.up = np.flatnonzero((cl != cu) & np.isfinite(cu))
        self.radius0 = 1.0
        self.history: list[IterationRecord] = []
        self.n_evals = 0
        if log is not None:
            self._writer = csv.writer(log, lineterminator="\n")
            self._writer.writerow(IterationRecord.FIELDS)

    # -- evaluation helpers --------------------------------------------------
    def project(self, x):
        return np.minimum(np.maximum(x, self.p.lb), self.p.ub)

    def evaluate(self, x):
        f = self.p.f(x)
        c = self.p.c(x)
        self.n_evals += 1
        return f, c

    def merit(self, f, c, rho):
        return f + rho * float(np.sum(_violation(c, self.p.cl, self.p.cu)))

    def record(self, rec: IterationRecord):
        self.history.append(rec)
        if self.log is not None:
            self._writer.writerow([repr(v) if isinstance(v, float) else v
                                   for v in (getattr(rec, k) for k in IterationRecord.FIELDS)])

    # -- QP subproblem ---------------------------------------------------------
    def qp(self, H, g, c, J, x, radius=None):
        """Solve the QP subproblem, optionally inside the box ``|d_j| <= radius max(1, |x_j|)``."""
        p = self.p
        fr = self.free
        Jf = J[:, fr] if J.size else np.zeros((0, fr.size))
        cols, rhs, kinds = [], [], []
        for idx, sign, target in ((self.eq, 1.0, p.cl), (self.lo, 1.0, p.cl), (self.up, -1.0, p.cu)):
            is_eq = idx is self.eq
            for i in idx:
                row = sign * Jf[i]
                b = sign * (target[i] - c[i])
                if not np.any(row):
                    if (abs(b) if is_eq else b) > 1e-12:
                        raise _InconsistentQP(f"constraint {i} has a zero gradient and is violated")
                    continue
                cols.append(row)
                rhs.append(b)
                kinds.append(("eq" if is_eq else ("lo" if sign > 0 else "up"), i))
        meq = sum(1 for k in kinds if k[0] == "eq")
        xf = x[fr]
        lo = p.lb[fr] - xf
        hi = p.ub[fr] - xf
        lo_kind = np.full(fr.size, "lb", dtype=object)
        hi_kind = np.full(fr.size, "ub", dtype=object)
        if radius is not None:
            span = radius * np.maximum(1.0, np.abs(xf))
            tighter = -span > lo
            lo = np.where(tighter, -span, lo)
            lo_kind[tighter] = "box"
            tighter = span < hi
            hi = np.where(tighter, span, hi)
            hi_kind[tighter] = "box"
        eye = np.eye(fr.size)
        for j in np.flatnonzero(np.isfinite(lo)):
            cols.append(eye[j])
            rhs.append(lo[j])
            kinds.append((lo_kind[j], j))
        for j in np.flatnonzero(np.isfinite(hi)):
            cols.append(-eye[j])
            rhs.append(-hi[j])
            kinds.append((hi_kind[j] if hi_kind[j] == "box" else "ub", j))
        G = 0.5 * (H + H.T)
        a = -g[fr]
        try:
            if cols:
                C = np.ascontiguousarray(np.array(cols).T)
                sol = quadprog.solve_qp(G, a, C, np.asarray(rhs, dtype=float), meq)
            else:
                sol = quadprog.solve_qp(G, a)
        except ValueError as err:
            msg = str(err)
            if "positive definite" in msg:
                raise np.linalg.LinAlgError(msg) from err
            raise _InconsistentQP(msg) from err
        d_free, lam, active = sol[0], sol[4], sol[5]
        y = np.zeros(p.m)
        z = np.zeros(fr.size)
        for (kind, i), l in zip(kinds, lam):
            if kind in ("eq", "lo"):
                y[i] += l
            elif kind == "up":
                y[i] -= l
            elif kind == "lb":
                z[i] += l
            elif kind == "ub":
                z[i] -= l
        act = [kinds[k - 1] for k in active if k > 0]
        boxed = any(k[0] == "box" for k in act)
        d = np.zeros(p.n)
        d[fr] = d_free
        return d, y, z, act, boxed

    def kkt(self, g, c, J, y, z, x):
        p = self.p
        fr = self.free
        r = g[fr] - (J[:, fr].T @ y if J.size else 0.0) - z
        stat = float(np.max(np.abs(r))) if r.size else 0.0
        comp = 0.0
        for i in self.lo:
            if y[i] > 0:
                comp = max(comp, y[i] * abs(c[i] - p.cl[i]))
        for i in self.up:
            if y[i] < 0:
                comp = max(comp, -y[i] * abs(p.cu[i] - c[i]))
        xf = x[fr]
        pos = z > 0
        if np.any(pos):
            comp = max(comp, float(np.max(z[pos] * np.abs(xf[pos] - p.lb[fr][pos]))))
        neg = z < 0
        if np.any(neg):
            comp = max(comp, float(np.max(-z[neg] * np.abs(p.ub[fr][neg] - xf[neg]))))
        scale = 1.0 + max(float(np.max(np.abs(y))) if y.size else 0.0,
                          float(np.max(np.abs(z))) if z.size else 0.0)
        return max(stat, comp) / scale

    def soc(self, x, d, act, c_trial):
        """Least-squares correction toward the active constraints at ``x + d``."""
        p = self.p
        fr = self.free
        rows, res = [], []
        J = self._J
        for kind, i in act:
            if kind == "eq" or kind == "lo":
                rows.append(J[i, fr])
                res.append(c_trial[i] - p.cl[i])
            elif kind == "up":
                rows.append(J[i, fr])
                res.append(c_trial[i] - p.cu[i])
            elif kind in ("lb", "ub"):
                # Keep active variable bounds where the step put them.
                e = np.zeros(fr.size)
                e[i] = 1.0
                rows.append(e)
                res.append(0.0)
        if not rows:
            return None
        A = np.array(rows)
        dc = -np.linalg.lstsq(A, np.asarray(res), rcond=None)[0]
        out = d.copy()
        out[fr] += dc
        return out

    # -- main loop -------------------------------------------------------------
    def run(self) -> NlpSolution:
        p = self.p
        t_start = time.perf_counter()
        x = self.project(p.x0.copy())
        x[self.fixed] = p.lb[self.fixed]
        nf = self.free.size
        f, c = self.evaluate(x)
        if not (math.isfinite(f) and np.all(np.isfinite(c))):
            return self._finish(x, f, c, Status.NUMERICAL_FAILURE, 0, t_start,
                                message="non-finite functions at the initial point")
        g = p.grad(x)
        J = p.jac(x)
        self._J = J
        H = np.eye(nf)
        scaled = False
        rho = 1.0
        y = np.zeros(p.m)
        z = np.zeros(nf)
        kkt = math.inf
        recoveries = 0
        resets = 0
        it = 0
        radius = self.radius0
        while True:
            viol = _violation(c, p.cl, p.cu)
            vmax = float(np.max(viol)) if viol.size else 0.0
            try:
                try:
                    d, y, z, act, boxed = self.qp(H, g, c, J, x, radius)
                except _InconsistentQP:
                    d, y, z, act, boxed = self.qp(H, g, c, J, x)
            except np.linalg.LinAlgError:
                H = np.eye(nf)
                scaled = False
                d, y, z, act, boxed = self.qp(H, g, c, J, x)
            except _InconsistentQP as err:
                recoveries += 1
                if recoveries > 5:
                    return self._finish(x, f, c, Status.INFEASIBLE, it, t_start, y, z, kkt,
                                        message=f"QP remained inconsistent: {err}")
                it += 1
                x_new, ok = self.recover(x, y, it)
                f, c = self.evaluate(x_new)
                viol_new = float(np.max(_violation(c, p.cl, p.cu))) if p.m else 0.0
                if not ok and viol_new >= vmax - 1e-12:
                    return self._finish(x_new, f, c, Status.INFEASIBLE, it, t_start, y, z, kkt,
                                        message="no feasible point found by the recovery phase")
                x = x_new
                g = p.grad(x)
                J = p.jac(x)
                self._J = J
                H = np.eye(nf)
                scaled = False
                continue

            kkt = self.kkt(g, c, J, y, z, x)
            if vmax <= self.tol and kkt <= self.tol and not boxed:
                return self._finish(x, f, c, Status.CONVERGED, it, t_start, y, z, kkt)
            if it >= self.max_iter:
                return self._finish(x, f, c, Status.ITERATION_LIMIT, it, t_start, y, z, kkt)
            it += 1

            # Raise the penalty when the multipliers demand it; let it relax
            # geometrically otherwise, so early overestimates do not stall
            # the line search for the rest of the solve.
            ynorm = float(np.max(np.abs(y))) if y.size else 0.0
            need = 1.5 * ynorm + 1e-3
            if rho < 1.1 * ynorm + 1e-3:
                rho = max(2.0 * rho, need)
            elif rho > 4.0 * need:
                rho = max(0.5 * rho, need)
            V = float(np.sum(viol))
            phi0 = f + rho * V
            dphi = float(g @ d) - rho * V
            if dphi > 0:
                dphi = -abs(float(d[self.free] @ H @ d[self.free]))

            step, x_new, f_new, c_new = self.line_search(x, d, act, phi0, dphi, rho)
            if x_new is None:
                if resets < 2:
                    resets += 1
                    H = np.eye(nf)
                    scaled = False
                    self.record(IterationRecord(it, "reset", f, phi0, phi0, vmax, kkt, 0.0, rho))
                    continue
                status = Status.CONVERGED if (vmax <= self.tol and kkt <= 10 * self.tol) \
                    else Status.NUMERICAL_FAILURE
                return self._finish(x, f, c, status, it, t_start, y, z, kkt,
                                    message="line search failed")
            resets = 0
            # Step bound: grow after full steps that reached it, shrink to
            # the accepted step after backtracking.
            dn = float(np.max(np.abs(d[self.free]) / np.maximum(1.0, np.abs(x[self.free])))) \
                if nf else 0.0
            if step >= 1.0:
                if boxed:
                    radius = min(2.0 * radius, 1e6)
            else:
                radius = max(step * dn, 1e-8)
            g_new = p.grad(x_new)
            J_new = p.jac(x_new)
            s = (x_new - x)[self.free]
            yl = g_new - (J_new.T @ y if J_new.size else 0.0)
            yl_old = g - (J.T @ y if J.size else 0.0)
            yv = (yl - yl_old)[self.free]
            H, scaled = _damped_bfgs(H, s, yv, scaled)
            viol_new = _violation(c_new, p.cl, p.cu)
            self.record(IterationRecord(it, "sqp", f_new, phi0, self.merit(f_new, c_new, rho),
                                        float(np.max(viol_new)) if viol_new.size else 0.0,
                                        kkt, step, rho))
            x, f, c, g, J = x_new, f_new, c_new, g_new, J_new
            self._J = J

    def line_search(self, x, d, act, phi0, dphi, rho):
        alpha = 1.0
        eta = 1e-4
        tried_soc = False
        while alpha >= 1e-10:
            xt = self.project(x + alpha * d)
            ft, ct = self.evaluate(xt)
            if math.isfinite(ft) and np.all(np.isfinite(ct)):
                phit = self.merit(ft, ct, rho)
                if phit <= phi0 + eta * alpha * dphi:
                    return alpha, xt, ft, ct
                if alpha == 1.0 and not tried_soc:
                    tried_soc = True
                    dc = self.soc(x, d, act, ct)
                    if dc is not None and np.all(np.isfinite(dc)):
                        xs = self.project(x + dc)
                        fs, cs = self.evaluate(xs)
                        if math.isfinite(fs) and np.all(np.isfinite(cs)):
                            if self.merit(fs, cs, rho) <= phi0 + eta * dphi:
                                return 1.0, xs, fs, cs
                # Quadratic interpolation of the merit along the step.
                denom = 2.0 * (phit - phi0 - alpha * dphi)
                trial = -dphi * alpha * alpha / denom if denom > 0 else 0.5 * alpha
                alpha = min(0.5 * alpha, max(0.25 * alpha, trial))
            else:
                alpha *= 0.1
        return 0.0, None, None, None

    def recover(self, x, y, it):
        """Augmented-Lagrangian phase; returns ``(x, success)``."""
        p = self.p
        fr = self.free
        lam = y.copy() if y.size == p.m else np.zeros(p.m)
        mu = 10.0
        xk = x.copy()
        f, c = self.evaluate(xk)
        v_best = float(np.max(_violation(c, p.cl, p.cu))) if p.m else 0.0

        def unpack(xf):
            full = xk.copy()
            full[fr] = xf
            return full

        for outer in range(15):
            def fun(xf, lam=lam, mu=mu):
                full = unpack(xf)
                fv = p.f(full)
                cv = p.c(full)
                s = np.clip(cv - lam / mu, p.cl, p.cu)
                r = cv - s
                val = fv - float(lam @ r) + 0.5 * mu * float(r @ r)
                gv = p.grad(full) + p.jac(full).T @ (mu * r - lam)
                return val, gv[fr]

            bounds = list(zip(np.where(np.isfinite(p.lb[fr]), p.lb[fr], None),
                              np.where(np.isfinite(p.ub[fr]), p.ub[fr], None)))
            res = minimize(fun, xk[fr], jac=True, method="L-BFGS-B", bounds=bounds,
                           options={"maxiter": 200})
            xk = unpack(res.x)
            f, c = self.evaluate(xk)
            s = np.clip(c - lam / mu, p.cl, p.cu)
            r = c - s
            lam = lam - mu * r
            v = float(np.max(_violation(c, p.cl, p.cu))) if p.m else 0.0
            self.record(IterationRecord(it, "al", f, math.nan, math.nan, v, math.nan, 1.0, mu))
            if v <= max(self.tol, 1e-3 * v_best):
                return xk, True
            if v > 0.25 * v_best:
                mu *= 10.0
            v_best = min(v_best, v)
        return xk, v_best <= self.tol

    def _finish(self, x, f, c, status, it, t_start, y=None, z=None, kkt=math.inf, message=""):
        p = self.p
        viol = _violation(c, p.cl, p.cu)
        zb = np.zeros(p.n)
        if z is not None:
            zb[self.free] = z
        return NlpSolution(
            x=x.copy(), objective=float(f),
            violation=float(np.max(viol)) if viol.size else 0.0,
            status=status, iterations=it, wall_time=time.perf_counter() - t_start,
            kkt_residual=float(kkt),
            multipliers=np.zeros(p.m) if y is None else y.copy(),
            bound_multipliers=zb, message=message, history=self.history)


def _damped_bfgs(H, s, y, scaled):
    """Powell-damped BFGS update; the first update rescales the identity."""
    sy = float(s @ y)
    if not scaled and sy > 0:
        yy = float(y @ y)
        if yy > 0:
            H = (yy / sy) * np.eye(H.shape[0])
            scaled = True
    Hs = H @ s
    sHs = float(s @ Hs)
    if sHs <= 1e-300:
        return H, scaled
    if sy >= 0.2 * sHs:
        r = y
    else:
        theta = 0.8 * sHs / (sHs - sy)
        r = theta * y + (1.0 - theta) * Hs
    sr = float(s @ r)
    if sr <= 1e-300:
        return H, scaled
    H = H - np.outer(Hs, Hs) / sHs + np.outer(r, r) / sr
    return 0.5 * (H + H.T), scaled


def solve(problem: NlpProblem, tol: float = 1e-6, max_iter: int = 500, log=None) -> NlpSolution:
    """Solve ``problem`` with SQP.

    ``log`` is an optional text stream receiving the iteration history as
    CSV while the solve runs. Non-convergence is reported through
    :attr:`NlpSolution.status`, never raised.
    """
    if not tol > 0:
        raise ValueError("tolerance must be positive")
    return _Sqp(problem, tol, max_iter, log).run()
