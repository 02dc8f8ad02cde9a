"""LGR transcription of a chance-constrained Bolza problem into an NLP.

Decision vector, in order: state values at every mesh node (interior
interval boundaries are single shared nodes, so continuity needs no extra
rows), controls at every collocation point, then ``t0`` and ``tf``. The
global collocation index equals the node index of the collocation point;
the last node (``tau = +1``) is not collocated.

Constraint rows, in order: dynamics defects, path constraints, boundary
constraints, path chance surrogates (one per constraint per collocation
point), event chance surrogates (one per constraint, at the endpoints).
Chance rows are scaled as ``estimate / eps <= 1``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping

import numpy as np

from .chance import ChanceConstraintSpec
from .kernels import BiasedKernel, kde_mean, kde_pdf_weighted_mean
from .lgr import Mesh, interpolation_matrix, lgr_rule
from .nlp import NlpProblem, fd_gradient

if TYPE_CHECKING:
    from .ocp import OcpDefinition

__all__ = [
    "TranscriptionError",
    "Layout",
    "TranscribedNlp",
    "Trajectory",
    "transcribe",
    "interpolate_solution",
    "global_diff_matrix",
]

_CBRT_EPS = np.cbrt(np.finfo(float).eps)


class TranscriptionError(ValueError):
    pass


@dataclass(frozen=True)
class Layout:
    n_states: int
    n_controls: int
    n_nodes: int
    n_colloc: int

    @property
    def n_y(self) -> int:
        return self.n_nodes * self.n_states

    @property
    def u_offset(self) -> int:
        return self.n_y

    @property
    def i_t0(self) -> int:
        return self.n_y + self.n_colloc * self.n_controls

    @property
    def i_tf(self) -> int:
        return self.i_t0 + 1

    @property
    def n(self) -> int:
        return self.i_tf + 1

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        Y = x[: self.n_y].reshape(self.n_nodes, self.n_states)
        U = x[self.n_y: self.i_t0].reshape(self.n_colloc, self.n_controls)
        return Y, U, float(x[self.i_t0]), float(x[self.i_tf])

    def pack(self, Y, U, t0, tf) -> np.ndarray:
        Y = np.asarray(Y, dtype=float).reshape(self.n_nodes, self.n_states)
        U = np.asarray(U, dtype=float).reshape(self.n_colloc, self.n_controls)
        return np.concatenate([Y.ravel(), U.ravel(), [float(t0), float(tf)]])


def global_diff_matrix(mesh: Mesh) -> np.ndarray:
    """Block matrix ``(n_colloc, n_nodes)`` of per-interval LGR differentiation."""
    Dg = np.zeros((mesh.n_colloc, mesh.n_nodes))
    for off, n in zip(mesh.node_offsets(), mesh.degrees):
        Dg[off:off + n, off:off + n + 1] = lgr_rule(n).D
    return Dg


def _times(tau, t0, tf):
    return 0.5 * (tf - t0) * tau + 0.5 * (tf + t0)


def _steps(v):
    v = np.asarray(v, dtype=float)
    h = _CBRT_EPS * (1.0 + np.abs(v))
    # Representable step, so (v + h) - v == h exactly.
    return (v + h) - v


def _pointwise(fun, Y, U, t, width):
    """Base values and central-difference local derivatives of ``fun(y, u, t)``.

    Returns ``(F, dY, dU, dT)`` with shapes ``(P, w)``, ``(P, w, ny)``,
    ``(P, w, nu)``, ``(P, w)``.
    """
    P, ny = Y.shape
    nu = U.shape[1]
    F = np.asarray(fun(Y, U, t), dtype=float).reshape(P, width)
    dY = np.empty((P, width, ny))
    dU = np.empty((P, width, nu))
    for s in range(ny):
        h = _steps(Y[:, s])
        Yp = Y.copy()
        Yp[:, s] += h
        Ym = Y.copy()
        Ym[:, s] -= h
        fp = np.asarray(fun(Yp, U, t), dtype=float).reshape(P, width)
        fm = np.asarray(fun(Ym, U, t), dtype=float).reshape(P, width)
        dY[:, :, s] = (fp - fm) / (2.0 * h[:, None])
    for s in range(nu):
        h = _steps(U[:, s])
        Up = U.copy()
        Up[:, s] += h
        Um = U.copy()
        Um[:, s] -= h
        fp = np.asarray(fun(Y, Up, t), dtype=float).reshape(P, width)
        fm = np.asarray(fun(Y, Um, t), dtype=float).reshape(P, width)
        dU[:, :, s] = (fp - fm) / (2.0 * h[:, None])
    h = _steps(t)
    fp = np.asarray(fun(Y, U, t + h), dtype=float).reshape(P, width)
    fm = np.asarray(fun(Y, U, t - h), dtype=float).reshape(P, width)
    dT = (fp - fm) / (2.0 * h[:, None])
    return F, dY, dU, dT


class _ChanceRow:
    """One chance constraint bound to its kernel, risk scale and dependencies."""

    def __init__(self, spec: ChanceConstraintSpec, kernel: BiasedKernel, xi: np.ndarray,
                 n_states: int, n_controls: int):
        self.spec = spec
        self.kernel = kernel
        # column-major so per-component slices xi[:, k] are contiguous
        self.xi = np.asfortranarray(xi)
        self.scale = 1.0 / spec.risk
        self.ny = n_states
        self.nu = n_controls
        if spec.kind == "path":
            self.names = [f"y{i}" for i in range(n_states)] + \
                         [f"u{i}" for i in range(n_controls)] + ["t"]
        else:
            self.names = [f"y0_{i}" for i in range(n_states)] + ["t0"] + \
                         [f"yf_{i}" for i in range(n_states)] + ["tf"]
        if spec.depends_on is not None:
            unknown = set(spec.depends_on) - set(self.names)
            if unknown:
                raise TranscriptionError(
                    f"chance constraint {spec.name!r} declares unknown variables {sorted(unknown)}")
            self.deps = [self.names.index(v) for v in spec.depends_on]
        else:
            self.deps = self._probe()

    # Local vector v: path -> [y, u, t]; event -> [y0, t0, yf, tf].
    def _call(self, v, xi):
        ny, nu = self.ny, self.nu
        if self.spec.kind == "path":
            return self.spec.function(v[:ny], v[ny:ny + nu], v[ny + nu], xi)
        return self.spec.function(v[:ny], v[ny], v[ny + 1:2 * ny + 1], v[2 * ny + 1], xi)

    def _probe(self):
        rng = np.random.default_rng(20240611)
        xi = self.xi[: min(64, self.xi.shape[0])]
        deps = set()
        for _ in range(3):
            v = rng.uniform(-2.0, 2.0, len(self.names))
            base = np.asarray(self._call(v, xi), dtype=float)
            for i in range(len(self.names)):
                w = v.copy()
                w[i] += 0.37
                if not np.array_equal(np.asarray(self._call(w, xi), dtype=float), base):
                    deps.add(i)
        return sorted(deps)

    def inactive(self, v) -> bool:
        g = self.spec.guard
        if g is None:
            return False
        ny, nu = self.ny, self.nu
        return g.inactive(v[:ny], v[ny:ny + nu], v[ny + nu])

    def value(self, v) -> float:
        if self.inactive(v):
            return 0.0
        psi = self._call(v, self.xi)
        return kde_mean(psi, self.spec.bound, self.kernel, self.spec.sense) * self.scale

    def gradient(self, v, analytic: bool) -> np.ndarray:
        g = np.zeros(len(self.names))
        if not self.deps:
            return g
        if analytic:
            if self.inactive(v):
                return g
            sense = self.spec.sense
            psi = np.asarray(self._call(v, self.xi), dtype=float)
            # d/dv of the oriented estimate; orientation flips dpsi as well
            sign = -1.0 if sense == "above" else 1.0
            for i in self.deps:
                h = _steps(v[i])
                w = v.copy()
                w[i] = v[i] + h
                pp = np.asarray(self._call(w, self.xi), dtype=float)
                w[i] = v[i] - h
                pm = np.asarray(self._call(w, self.xi), dtype=float)
                dpsi = (pp - pm) * (sign / (2.0 * h))
                g[i] = -kde_pdf_weighted_mean(psi, self.spec.bound, self.kernel, dpsi, sense) \
                    / self.kernel.bandwidth * self.scale
            return g
        for i in self.deps:
            h = _steps(v[i])
            w = v.copy()
            w[i] = v[i] + h
            fp = self.value(w)
            w[i] = v[i] - h
            fm = self.value(w)
            g[i] = (fp - fm) / (2.0 * h)
        return g


@dataclass
class TranscribedNlp:
    ocp: "OcpDefinition"
    mesh: Mesh
    layout: Layout
    lb: np.ndarray
    ub: np.ndarray
    cl: np.ndarray
    cu: np.ndarray
    blocks: dict[str, slice]
    kernels: dict[str, BiasedKernel]
    derivative: str = "fd"
    _impl: "_Transcription" = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def m(self) -> int:
        return self.cl.size

    def objective(self, x) -> float:
        return self._impl.objective(x)

    def gradient(self, x) -> np.ndarray:
        return self._impl.gradient(x)

    def constraints(self, x) -> np.ndarray:
        return self._impl.constraints(x)

    def jacobian(self, x) -> np.ndarray:
        return self._impl.jacobian(x)

    def defects(self, x) -> np.ndarray:
        """Dynamics residuals as ``(n_colloc, n_states)``."""
        return self._impl.defects(x)

    def chance_values(self, x) -> dict[str, np.ndarray]:
        """Unscaled surrogate estimates per chance constraint."""
        return self._impl.chance_values(x)

    def problem(self, x0, name: str = "") -> NlpProblem:
        return NlpProblem(x0=np.clip(x0, self.lb, self.ub), objective=self.objective,
                          lb=self.lb, ub=self.ub, constraints=self.constraints,
                          cl=self.cl, cu=self.cu, gradient=self.gradient,
                          jacobian=self.jacobian, name=name)

    def trajectory(self, x) -> "Trajectory":
        Y, U, t0, tf = self.layout.unpack(x)
        return Trajectory(self.mesh, t0, tf, Y.copy(), U.copy())


class _Transcription:
    def __init__(self, ocp, mesh: Mesh, xi, kernels, derivative):
        self.ocp = ocp
        self.mesh = mesh
        self.ny = ocp.n_states
        self.nu = ocp.n_controls
        self.layout = Layout(self.ny, self.nu, mesh.n_nodes, mesh.n_colloc)
        self.tau = mesh.colloc_tau()
        self.w = mesh.colloc_weights()
        self.hw = np.repeat(mesh.half_widths(), mesh.degrees)
        self.Dg = global_diff_matrix(mesh)
        self.derivative = derivative
        self.n_path = 0 if ocp.path is None else len(ocp.path_lower)
        self.n_bnd = 0 if ocp.boundary is None else len(ocp.boundary_lower)
        self.path_rows = []
        self.event_rows = []
        for spec in ocp.chance:
            bk = kernels[spec.name]
            row = _ChanceRow(spec, bk, xi, self.ny, self.nu)
            (self.path_rows if spec.kind == "path" else self.event_rows).append(row)

    # -- pieces ----------------------------------------------------------------
    def _split(self, x):
        Y, U, t0, tf = self.layout.unpack(x)
        return Y, U, t0, tf, _times(self.tau, t0, tf)

    def _endpoints(self, Y, t0, tf):
        return np.concatenate([Y[0], [t0], Y[-1], [tf]])

    def _mayer(self, e):
        ny = self.ny
        return float(self.ocp.terminal_cost(e[:ny], e[ny], e[ny + 1:2 * ny + 1], e[2 * ny + 1]))

    def _boundary(self, e):
        ny = self.ny
        return np.atleast_1d(np.array(
            self.ocp.boundary(e[:ny], e[ny], e[ny + 1:2 * ny + 1], e[2 * ny + 1]), dtype=float))

    def _running(self, Y, U, t):
        return np.asarray(self.ocp.running_cost(Y, U, t), dtype=float).reshape(-1, 1)

    def objective(self, x) -> float:
        Y, U, t0, tf, t = self._split(x)
        J = 0.0
        if self.ocp.terminal_cost is not None:
            J += self._mayer(self._endpoints(Y, t0, tf))
        if self.ocp.running_cost is not None:
            L = self._running(Y[:-1], U, t)[:, 0]
            J += 0.5 * (tf - t0) * float(self.w @ L)
        return J

    def gradient(self, x) -> np.ndarray:
        lay = self.layout
        Y, U, t0, tf, t = self._split(x)
        g = np.zeros(lay.n)
        ny, nu = self.ny, self.nu
        if self.ocp.terminal_cost is not None:
            ge = fd_gradient(self._mayer, self._endpoints(Y, t0, tf))
            g[:ny] += ge[:ny]
            g[lay.i_t0] += ge[ny]
            g[(lay.n_nodes - 1) * ny: lay.n_nodes * ny] += ge[ny + 1:2 * ny + 1]
            g[lay.i_tf] += ge[2 * ny + 1]
        if self.ocp.running_cost is not None:
            L, dY, dU, dT = _pointwise(self._running, Y[:-1], U, t, 1)
            c = 0.5 * (tf - t0)
            g[: lay.n_colloc * ny] += (c * self.w[:, None] * dY[:, 0, :]).ravel()
            g[lay.u_offset: lay.i_t0] += (c * self.w[:, None] * dU[:, 0, :]).ravel()
            wl = float(self.w @ L[:, 0])
            wdt = self.w * dT[:, 0]
            g[lay.i_tf] += 0.5 * wl + c * float(wdt @ (0.5 * (1.0 + self.tau)))
            g[lay.i_t0] += -0.5 * wl + c * float(wdt @ (0.5 * (1.0 - self.tau)))
        return g

    def _dyn(self, Y, U, t):
        return np.asarray(self.ocp.dynamics(Y, U, t), dtype=float).reshape(-1, self.ny)

    def _path(self, Y, U, t):
        return np.asarray(self.ocp.path(Y, U, t), dtype=float).reshape(-1, self.n_path)

    def defects(self, x) -> np.ndarray:
        Y, U, t0, tf, t = self._split(x)
        F = self._dyn(Y[:-1], U, t)
        return self.Dg @ Y - (self.hw * 0.5 * (tf - t0))[:, None] * F

    def _path_local(self, Y, U, t, p):
        return np.concatenate([Y[p], U[p], [t[p]]])

    def chance_values(self, x):
        Y, U, t0, tf, t = self._split(x)
        out = {}
        for row in self.path_rows:
            out[row.spec.name] = np.array([row.value(self._path_local(Y, U, t, p))
                                           for p in range(self.layout.n_colloc)]) / row.scale
        e = self._endpoints(Y, t0, tf)
        for row in self.event_rows:
            out[row.spec.name] = np.array([row.value(e) / row.scale])
        return out

    def constraints(self, x) -> np.ndarray:
        Y, U, t0, tf, t = self._split(x)
        parts = [self.defects(x).ravel()]
        if self.n_path:
            parts.append(self._path(Y[:-1], U, t).ravel())
        e = self._endpoints(Y, t0, tf)
        if self.n_bnd:
            parts.append(self._boundary(e))
        for row in self.path_rows:
            parts.append(np.array([row.value(self._path_local(Y, U, t, p))
                                   for p in range(self.layout.n_colloc)]))
        for row in self.event_rows:
            parts.append(np.array([row.value(e)]))
        return np.concatenate(parts)

    def _scatter_local(self, J, rows, dY, dU, dT, coef, F_tcoef):
        """Write pointwise derivatives of row block ``rows`` (shape ``(P, w)``).

        ``coef`` multiplies the local derivatives per point; ``F_tcoef`` is the
        extra ``(P, w)`` time-scale term added to ``d/dtf`` and subtracted from
        ``d/dt0``.
        """
        lay = self.layout
        P, w, ny = dY.shape
        nu = dU.shape[2]
        pidx = np.arange(P)
        for s in range(ny):
            J[rows, (pidx * ny + s)[:, None]] += (coef[:, None] * dY[:, :, s])
        for s in range(nu):
            J[rows, (lay.u_offset + pidx * nu + s)[:, None]] += (coef[:, None] * dU[:, :, s])
        dt = coef[:, None] * dT
        J[rows, lay.i_tf] += dt * (0.5 * (1.0 + self.tau))[:, None] + F_tcoef
        J[rows, lay.i_t0] += dt * (0.5 * (1.0 - self.tau))[:, None] - F_tcoef

    def jacobian(self, x) -> np.ndarray:
        lay = self.layout
        ny, nu = self.ny, self.nu
        Y, U, t0, tf, t = self._split(x)
        m = lay.n_colloc * ny + lay.n_colloc * self.n_path + self.n_bnd \
            + len(self.path_rows) * lay.n_colloc + len(self.event_rows)
        J = np.zeros((m, lay.n))
        P = lay.n_colloc
        rows = np.arange(P * ny).reshape(P, ny)
        for r in range(ny):
            J[rows[:, r][:, None], np.arange(lay.n_nodes) * ny + r] = self.Dg
        F, dY, dU, dT = _pointwise(self._dyn, Y[:-1], U, t, ny)
        c = -self.hw * 0.5 * (tf - t0)
        self._scatter_local(J, rows, dY, dU, dT, c, -0.5 * self.hw[:, None] * F)
        r0 = P * ny
        if self.n_path:
            rows = r0 + np.arange(P * self.n_path).reshape(P, self.n_path)
            _, dY, dU, dT = _pointwise(self._path, Y[:-1], U, t, self.n_path)
            self._scatter_local(J, rows, dY, dU, dT, np.ones(P), 0.0)
            r0 += P * self.n_path
        e = self._endpoints(Y, t0, tf)
        ecols = self._endpoint_columns()
        if self.n_bnd:
            from .nlp import fd_jacobian
            J[r0:r0 + self.n_bnd, ecols] += fd_jacobian(self._boundary, e)
            r0 += self.n_bnd
        analytic = self.derivative == "analytic"
        for row in self.path_rows:
            for p in range(P):
                g = row.gradient(self._path_local(Y, U, t, p), analytic)
                if not g.any():
                    continue
                J[r0 + p, p * ny:(p + 1) * ny] += g[:ny]
                J[r0 + p, lay.u_offset + p * nu: lay.u_offset + (p + 1) * nu] += g[ny:ny + nu]
                J[r0 + p, lay.i_tf] += g[-1] * 0.5 * (1.0 + self.tau[p])
                J[r0 + p, lay.i_t0] += g[-1] * 0.5 * (1.0 - self.tau[p])
            r0 += P
        for row in self.event_rows:
            J[r0, ecols] += row.gradient(e, analytic)
            r0 += 1
        return J

    def _endpoint_columns(self):
        lay = self.layout
        ny = self.ny
        return np.concatenate([np.arange(ny), [lay.i_t0],
                               (lay.n_nodes - 1) * ny + np.arange(ny), [lay.i_tf]])


def _resolve_kernels(ocp, kernels) -> dict[str, BiasedKernel]:
    out = {}
    for spec in ocp.chance:
        if isinstance(kernels, BiasedKernel):
            bk = kernels
        elif isinstance(kernels, Mapping) and spec.name in kernels:
            bk = kernels[spec.name]
        else:
            bk = spec.kernel
        if bk is None:
            raise TranscriptionError(f"no kernel configured for chance constraint {spec.name!r}")
        out[spec.name] = bk
    return out


def _bounds(ocp, layout: Layout):
    ny, nu = ocp.n_states, ocp.n_controls
    slo = np.broadcast_to(np.asarray(ocp.state_lower, float), (ny,))
    shi = np.broadcast_to(np.asarray(ocp.state_upper, float), (ny,))
    Ylo = np.tile(slo, (layout.n_nodes, 1))
    Yhi = np.tile(shi, (layout.n_nodes, 1))
    Ylo[0] = np.maximum(slo, ocp.initial_lower)
    Yhi[0] = np.minimum(shi, ocp.initial_upper)
    Ylo[-1] = np.maximum(slo, ocp.final_lower)
    Yhi[-1] = np.minimum(shi, ocp.final_upper)
    Ulo = np.tile(np.broadcast_to(np.asarray(ocp.control_lower, float), (nu,)), (layout.n_colloc, 1))
    Uhi = np.tile(np.broadcast_to(np.asarray(ocp.control_upper, float), (nu,)), (layout.n_colloc, 1))
    t0lo, t0hi = ocp.t0_bounds
    tflo, tfhi = ocp.tf_bounds
    if tfhi <= t0lo:
        raise TranscriptionError(f"final time bounds {ocp.tf_bounds} force tf <= t0 {ocp.t0_bounds}")
    lb = layout.pack(Ylo, Ulo, t0lo, tflo)
    ub = layout.pack(Yhi, Uhi, t0hi, tfhi)
    if np.any(lb > ub):
        raise TranscriptionError("state or control bounds conflict at the endpoints")
    return lb, ub


def transcribe(ocp: "OcpDefinition", mesh: Mesh, samples=None, kernels=None,
               derivative: str = "fd") -> TranscribedNlp:
    """Transcribe ``ocp`` on ``mesh``.

    ``samples`` is a SampleSet or an ``(N, d)`` array shared by every chance
    row. ``kernels`` is one BiasedKernel for all chance constraints, a
    mapping from constraint name to kernel, or None to use each
    constraint's own kernel. ``derivative`` selects finite differences
    (``"fd"``) or the kernel chain rule (``"analytic"``) for chance rows.
    """
    if derivative not in ("fd", "analytic"):
        raise TranscriptionError(f"derivative mode must be 'fd' or 'analytic', got {derivative!r}")
    xi = None
    if ocp.chance:
        if samples is None:
            raise TranscriptionError("chance constraints need a sample set")
        xi = np.asarray(getattr(samples, "draws", samples), dtype=float)
        if xi.ndim != 2 or xi.shape[0] == 0:
            raise TranscriptionError("samples must be a nonempty (N, d) array")
        if ocp.uncertainty is not None and xi.shape[1] != ocp.uncertainty.dim:
            raise TranscriptionError(
                f"samples have dimension {xi.shape[1]}, uncertainty has {ocp.uncertainty.dim}")
    kmap = _resolve_kernels(ocp, kernels)
    impl = _Transcription(ocp, mesh, xi, kmap, derivative)
    layout = impl.layout
    lb, ub = _bounds(ocp, layout)

    P = layout.n_colloc
    cl, cu, blocks = [], [], {}
    r = 0

    def add(name, lo, hi):
        nonlocal r
        lo = np.asarray(lo, dtype=float).ravel()
        hi = np.asarray(hi, dtype=float).ravel()
        blocks[name] = slice(r, r + lo.size)
        r += lo.size
        cl.append(lo)
        cu.append(hi)

    add("defects", np.zeros(P * ocp.n_states), np.zeros(P * ocp.n_states))
    if impl.n_path:
        add("path", np.tile(ocp.path_lower, P), np.tile(ocp.path_upper, P))
    if impl.n_bnd:
        add("boundary", ocp.boundary_lower, ocp.boundary_upper)
    for row in impl.path_rows:
        add(f"chance:{row.spec.name}", np.full(P, -np.inf), np.ones(P))
    for row in impl.event_rows:
        add(f"chance:{row.spec.name}", [-np.inf], [1.0])
    return TranscribedNlp(ocp=ocp, mesh=mesh, layout=layout, lb=lb, ub=ub,
                          cl=np.concatenate(cl), cu=np.concatenate(cu), blocks=blocks,
                          kernels=kmap, derivative=derivative, _impl=impl)


@dataclass
class Trajectory:
    """Piecewise-polynomial state and control recovered from the decision vector."""

    mesh: Mesh
    t0: float
    tf: float
    Y: np.ndarray
    U: np.ndarray

    @property
    def node_times(self) -> np.ndarray:
        return _times(self.mesh.node_tau(), self.t0, self.tf)

    @property
    def colloc_times(self) -> np.ndarray:
        return _times(self.mesh.colloc_tau(), self.t0, self.tf)

    def _tau(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        span = self.tf - self.t0
        slack = 1e-12 * max(1.0, abs(self.t0), abs(self.tf))
        if np.any(t < self.t0 - slack) or np.any(t > self.tf + slack):
            raise ValueError(f"query time outside [{self.t0}, {self.tf}]")
        return np.clip(2.0 * (t - self.t0) / span - 1.0, -1.0, 1.0)

    def _eval(self, t, control: bool):
        tau = self._tau(t)
        k_of = self.mesh.locate(tau)
        b = self.mesh.boundaries
        offs = self.mesh.node_offsets()
        width = self.U.shape[1] if control else self.Y.shape[1]
        out = np.empty((tau.size, width))
        for k in np.unique(k_of):
            sel = k_of == k
            n = self.mesh.degrees[k]
            rule = lgr_rule(n)
            local = 2.0 * (tau[sel] - b[k]) / (b[k + 1] - b[k]) - 1.0
            if control:
                M = interpolation_matrix(rule.points, local)
                out[sel] = M @ self.U[offs[k]:offs[k] + n]
            else:
                M = interpolation_matrix(rule.nodes, local)
                out[sel] = M @ self.Y[offs[k]:offs[k] + n + 1]
        return out

    def state(self, t) -> np.ndarray:
        return self._eval(t, control=False)

    def control(self, t) -> np.ndarray:
        return self._eval(t, control=True)

    def to_csv(self, stream=None) -> str:
        """Rows at every node: ``t, y1.., u1..``; control at the final node is extrapolated."""
        t = self.node_times
        U = np.vstack([self.U, self.control([self.tf])])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"y{i + 1}" for i in range(self.Y.shape[1])]
                   + [f"u{i + 1}" for i in range(self.U.shape[1])])
        for i in range(t.size):
            w.writerow([repr(float(v)) for v in (t[i], *self.Y[i], *U[i])])
        text = buf.getvalue()
        if stream is not None:
            stream.write(text)
        return text

    @staticmethod
    def read_csv(text: str) -> dict[str, np.ndarray]:
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
        return {name: body[:, i] for i, name in enumerate(header)}


def interpolate_solution(nlp: TranscribedNlp, x) -> Trajectory:
    """Trajectory sampler for decision vector ``x`` of ``nlp``."""
    return nlp.trajectory(x)
