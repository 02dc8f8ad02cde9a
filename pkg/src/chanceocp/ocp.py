"""Chance-constrained Bolza problems and the end-to-end solve driver.

A run draws one sample set, turns every chance constraint into a biased
KDE surrogate, picks bandwidths, transcribes with LGR collocation and
solves with SQP under mesh refinement. In scheduled mode a warm-up solve
at larger bandwidths precedes the final solve at the automatic
(Silverman) bandwidths.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import hmc
from .chance import ChanceConstraintSpec
from .kernels import BiasedKernel, KernelKind, bandwidth_select
from .lgr import MAX_DEGREE, Mesh, integration_matrix, interpolation_matrix, lgr_rule
from .nlp import NlpSolution, Status, solve as nlp_solve
from .prob_model import RandomVectorSpec
from .transcription import Layout, TranscribedNlp, Trajectory, transcribe

__all__ = [
    "OcpDefinition",
    "BandwidthMode",
    "SolveConfig",
    "PhaseRecord",
    "CcocpSolution",
    "MeshRefinement",
    "solve_ccocp",
    "refine_mesh",
    "initial_guess",
    "auto_bandwidths",
]


def _vec(value, n, name):
    arr = np.array(np.broadcast_to(np.asarray(value, dtype=float), (n,)))
    if arr.shape != (n,):
        raise ValueError(f"{name} must broadcast to length {n}")
    return arr


@dataclass
class OcpDefinition:
    """Single-phase Bolza problem on ``[t0, tf]``.

    Callables are vectorized over points: ``dynamics(Y, U, t)`` receives
    ``Y (P, ny)``, ``U (P, nu)``, ``t (P,)`` and returns ``(P, ny)``;
    ``running_cost`` returns ``(P,)``, ``path`` returns ``(P, nc)``.
    ``terminal_cost`` and ``boundary`` take ``(y0, t0, yf, tf)``.
    ``guess_initial`` / ``guess_final`` may name endpoint values for the
    straight-line guess (NaN entries mean unknown).
    """

    n_states: int
    n_controls: int
    dynamics: Callable
    running_cost: Callable | None = None
    terminal_cost: Callable | None = None
    path: Callable | None = None
    path_lower: Sequence[float] = ()
    path_upper: Sequence[float] = ()
    boundary: Callable | None = None
    boundary_lower: Sequence[float] = ()
    boundary_upper: Sequence[float] = ()
    state_lower: Sequence[float] | float = -np.inf
    state_upper: Sequence[float] | float = np.inf
    control_lower: Sequence[float] | float = -np.inf
    control_upper: Sequence[float] | float = np.inf
    initial_lower: Sequence[float] | float = -np.inf
    initial_upper: Sequence[float] | float = np.inf
    final_lower: Sequence[float] | float = -np.inf
    final_upper: Sequence[float] | float = np.inf
    t0_bounds: tuple[float, float] = (0.0, 0.0)
    tf_bounds: tuple[float, float] = (0.1, 20.0)
    tf_guess: float = 5.0
    guess_initial: Sequence[float] | None = None
    guess_final: Sequence[float] | None = None
    chance: tuple[ChanceConstraintSpec, ...] = ()
    uncertainty: RandomVectorSpec | None = None
    name: str = ""

    def __post_init__(self):
        ny, nu = int(self.n_states), int(self.n_controls)
        if ny < 1 or nu < 0:
            raise ValueError("need at least one state and a nonnegative control count")
        if self.running_cost is None and self.terminal_cost is None:
            raise ValueError("a Mayer term, a Lagrange term or both must be given")
        for nm in ("state_lower", "state_upper", "initial_lower", "initial_upper",
                   "final_lower", "final_upper"):
            setattr(self, nm, _vec(getattr(self, nm), ny, nm))
        for nm in ("control_lower", "control_upper"):
            setattr(self, nm, _vec(getattr(self, nm), nu, nm))
        self.path_lower = np.asarray(self.path_lower, dtype=float).ravel()
        self.path_upper = np.asarray(self.path_upper, dtype=float).ravel()
        self.boundary_lower = np.asarray(self.boundary_lower, dtype=float).ravel()
        self.boundary_upper = np.asarray(self.boundary_upper, dtype=float).ravel()
        if self.path_lower.shape != self.path_upper.shape:
            raise ValueError("path bounds must have equal length")
        if (self.path is None) != (self.path_lower.size == 0):
            raise ValueError("path constraints need a function and bounds together")
        if self.boundary_lower.shape != self.boundary_upper.shape:
            raise ValueError("boundary bounds must have equal length")
        if (self.boundary is None) != (self.boundary_lower.size == 0):
            raise ValueError("boundary constraints need a function and bounds together")
        self.t0_bounds = (float(self.t0_bounds[0]), float(self.t0_bounds[1]))
        self.tf_bounds = (float(self.tf_bounds[0]), float(self.tf_bounds[1]))
        if self.t0_bounds[0] > self.t0_bounds[1] or self.tf_bounds[0] > self.tf_bounds[1]:
            raise ValueError("time bounds must satisfy lower <= upper")
        if self.tf_bounds[1] <= self.t0_bounds[0]:
            raise ValueError("time bounds force tf <= t0")
        self.chance = tuple(self.chance)
        names = [c.name for c in self.chance]
        if len(set(names)) != len(names):
            raise ValueError("chance constraint names must be unique")
        if self.chance and self.uncertainty is None:
            raise ValueError("chance constraints need an uncertainty model")

    @property
    def has_chance(self) -> bool:
        return bool(self.chance)


class BandwidthMode(str, Enum):
    AUTO = "auto"
    FIXED = "fixed"
    SCHEDULED = "scheduled"


_START_FACTOR = {KernelKind.SPLIT_BERNSTEIN: 3.0, KernelKind.EPANECHNIKOV: 3.0,
                 KernelKind.GAUSSIAN: 2.0}


@dataclass
class SolveConfig:
    """Run settings.

    In ``FIXED`` mode ``bandwidth`` (a float or a name-to-float mapping)
    is used throughout. In ``SCHEDULED`` mode the warm-up bandwidths are
    ``start_bandwidth`` when given, else ``start_factor`` times the
    automatic ones; on failure they grow by ``growth`` up to
    ``growth_tries`` times.
    """

    kernel: KernelKind | str = KernelKind.SPLIT_BERNSTEIN
    bandwidth_mode: BandwidthMode | str = BandwidthMode.SCHEDULED
    bandwidth: float | dict | None = None
    start_bandwidth: float | dict | None = None
    start_factor: float | None = None
    growth: float = 1.5
    growth_tries: int = 3
    hmc: hmc.HmcConfig = field(default_factory=hmc.HmcConfig)
    mesh: Mesh = field(default_factory=lambda: Mesh.uniform(10, 4))
    mesh_tol: float = 1e-6
    max_refinements: int = 8
    probe_refinements: int = 4
    max_degree: int = 14
    min_degree: int = 4
    nlp_tol: float = 1e-6
    nlp_max_iter: int = 500
    seed: int | None = None
    derivative: str = "fd"
    samples: hmc.SampleSet | None = None

    def __post_init__(self):
        self.kernel = KernelKind.parse(self.kernel)
        self.bandwidth_mode = BandwidthMode(self.bandwidth_mode)
        if not (self.mesh_tol > 0 and self.nlp_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.growth <= 1.0:
            raise ValueError("bandwidth growth factor must exceed 1")
        if self.bandwidth_mode is BandwidthMode.FIXED and self.bandwidth is None:
            raise ValueError("fixed bandwidth mode needs a bandwidth")
        if not 2 <= self.min_degree <= self.max_degree <= MAX_DEGREE:
            raise ValueError("need 2 <= min_degree <= max_degree <= 64")
        if self.max_refinements < 0 or self.probe_refinements < 0:
            raise ValueError("refinement budgets must be nonnegative")
        if self.seed is not None:
            self.hmc = replace(self.hmc, seed=int(self.seed))

    @property
    def effective_seed(self) -> int:
        return int(self.hmc.seed)


@dataclass
class PhaseRecord:
    name: str
    bandwidths: dict[str, float]
    statuses: list[str]
    meshes: list[dict]
    refinements: int
    converged: bool
    mesh_done: bool
    objective: float


@dataclass
class CcocpSolution:
    status: Status
    objective: float
    x: np.ndarray
    trajectory: Trajectory
    mesh: Mesh
    mesh_history: list[Mesh]
    phases: list[PhaseRecord]
    bandwidths: dict[str, float]
    kernel: str
    timings: dict[str, float]
    seed: int | None
    nlp: TranscribedNlp
    nlp_solution: NlpSolution
    samples: hmc.SampleSet | None = None
    warnings: list[str] = field(default_factory=list)
    problem_name: str = ""

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    def final_state(self) -> np.ndarray:
        return self.trajectory.Y[-1].copy()

    def metadata(self) -> dict:
        return {
            "problem": self.problem_name,
            "status": self.status.value,
            "objective": self.objective,
            "t0": self.trajectory.t0,
            "tf": self.trajectory.tf,
            "final_state": [float(v) for v in self.trajectory.Y[-1]],
            "kernel": self.kernel,
            "bandwidths": dict(sorted(self.bandwidths.items())),
            "seed": self.seed,
            "mesh": self.mesh.to_dict(),
            "mesh_history": [m.to_dict() for m in self.mesh_history],
            "phases": [vars(p) for p in self.phases],
            "timings": self.timings,
            "nlp": {"iterations": self.nlp_solution.iterations,
                    "violation": self.nlp_solution.violation,
                    "kkt_residual": self.nlp_solution.kkt_residual},
            "warnings": list(self.warnings),
            "decision_vector": [float(v) for v in self.x],
        }

    def to_json(self) -> str:
        return json.dumps(self.metadata(), indent=2, sort_keys=True, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Enum):
        return obj.value
    raise TypeError(f"cannot serialize {type(obj).__name__}")


# --- initial guess and warm starts ---------------------------------------------

def _feasible_constant(lo, hi):
    if math.isfinite(lo) and math.isfinite(hi):
        return 0.5 * (lo + hi)
    if math.isfinite(lo):
        return max(lo, 0.0)
    if math.isfinite(hi):
        return min(hi, 0.0)
    return 0.0


def initial_guess(ocp: OcpDefinition, mesh: Mesh) -> np.ndarray:
    """Straight-line states between known endpoints, zero control, ``tf = tf_guess``."""
    lay = Layout(ocp.n_states, ocp.n_controls, mesh.n_nodes, mesh.n_colloc)
    tau = mesh.node_tau()
    s = 0.5 * (tau + 1.0)
    Y = np.empty((lay.n_nodes, ocp.n_states))
    for r in range(ocp.n_states):
        a = _known(ocp.guess_initial, ocp.initial_lower, ocp.initial_upper, r)
        b = _known(ocp.guess_final, ocp.final_lower, ocp.final_upper, r)
        if a is not None and b is not None:
            Y[:, r] = a + (b - a) * s
        elif a is not None or b is not None:
            Y[:, r] = a if a is not None else b
        else:
            lo = max(ocp.state_lower[r], ocp.initial_lower[r], ocp.final_lower[r])
            hi = min(ocp.state_upper[r], ocp.initial_upper[r], ocp.final_upper[r])
            Y[:, r] = _feasible_constant(lo, hi)
    U = np.zeros((lay.n_colloc, ocp.n_controls))
    U = np.clip(U, ocp.control_lower, ocp.control_upper)
    t0 = _feasible_constant(*ocp.t0_bounds) if ocp.t0_bounds[0] != ocp.t0_bounds[1] \
        else ocp.t0_bounds[0]
    tf = float(np.clip(ocp.tf_guess, *ocp.tf_bounds))
    return lay.pack(Y, U, t0, tf)


def _known(guess, lo, hi, r):
    if guess is not None:
        v = float(np.asarray(guess, dtype=float)[r])
        if math.isfinite(v):
            return v
    if lo[r] == hi[r]:
        return float(lo[r])
    return None


def _regrid(traj: Trajectory, ocp: OcpDefinition, mesh: Mesh) -> np.ndarray:
    """Decision vector on ``mesh`` interpolated from ``traj``.

    Controls are interpolated piecewise linearly between the source
    collocation values. The interval polynomials overshoot near switches,
    which can push chance rows onto the flat side of the kernel.
    """
    lay = Layout(ocp.n_states, ocp.n_controls, mesh.n_nodes, mesh.n_colloc)
    span = traj.tf - traj.t0
    tn = traj.t0 + 0.5 * span * (mesh.node_tau() + 1.0)
    tc = traj.t0 + 0.5 * span * (mesh.colloc_tau() + 1.0)
    Y = traj.state(np.clip(tn, traj.t0, traj.tf))
    src = traj.colloc_times
    U = np.column_stack([np.interp(tc, src, traj.U[:, k]) for k in range(traj.U.shape[1])])
    U = np.clip(U, ocp.control_lower, ocp.control_upper)
    return lay.pack(Y, U, traj.t0, traj.tf)


# --- mesh refinement -----------------------------------------------------------

@dataclass
class MeshRefinement:
    done: bool
    mesh: Mesh
    errors: np.ndarray


def interval_errors(traj: Trajectory, ocp: OcpDefinition, mesh: Mesh) -> np.ndarray:
    """Relative error per interval from re-integrating the dynamics on a finer rule.

    On interval ``k`` the state and control polynomials are sampled at the
    LGR points of degree ``N_k + 3``; the dynamics there are integrated
    with that rule's integration matrix from the interval's initial state
    and compared with the state polynomial.
    """
    errs = np.empty(mesh.n_intervals)
    b = mesh.boundaries
    span = traj.tf - traj.t0
    for k in range(mesh.n_intervals):
        n = min(mesh.degrees[k] + 3, MAX_DEGREE)
        rule = lgr_rule(n)
        tau_g = b[k] + (rule.nodes + 1.0) * 0.5 * (b[k + 1] - b[k])
        t = traj.t0 + 0.5 * span * (tau_g + 1.0)
        Yh = traj.state(np.clip(t, traj.t0, traj.tf))
        Uh = traj.control(np.clip(t[:-1], traj.t0, traj.tf))
        F = np.asarray(ocp.dynamics(Yh[:-1], Uh, t[:-1]), dtype=float).reshape(n, -1)
        scale = 0.5 * (b[k + 1] - b[k]) * 0.5 * span
        Yi = Yh[0] + scale * (integration_matrix(rule) @ F)
        denom = 1.0 + np.max(np.abs(Yh), axis=0)
        errs[k] = float(np.max(np.abs(Yi - Yh[1:]) / denom))
    return errs


def refine_mesh(traj: Trajectory, ocp: OcpDefinition, mesh: Mesh, tol: float,
                max_degree: int = 14, min_degree: int = 4) -> MeshRefinement:
    """Raise the degree of inaccurate intervals by two, or bisect at the cap."""
    errs = interval_errors(traj, ocp, mesh)
    if np.all(errs <= tol):
        return MeshRefinement(True, mesh, errs)
    bounds = [mesh.boundaries[0]]
    degrees = []
    for k, e in enumerate(errs):
        lo, hi = mesh.boundaries[k], mesh.boundaries[k + 1]
        n = mesh.degrees[k]
        if e <= tol:
            degrees.append(n)
            bounds.append(hi)
        elif n + 2 <= max_degree:
            degrees.append(n + 2)
            bounds.append(hi)
        else:
            mid = 0.5 * (lo + hi)
            d = max(min_degree, min(n, max_degree) // 2)
            degrees += [d, d]
            bounds += [mid, hi]
    return MeshRefinement(False, Mesh(tuple(bounds), tuple(degrees)), errs)


# --- bandwidths ------------------------------------------------------------------

def auto_bandwidths(ocp: OcpDefinition, samples) -> dict[str, float]:
    """Silverman bandwidth per chance constraint from its ``xi_index`` column.

    Without ``xi_index`` the smallest per-column bandwidth is used.
    """
    draws = np.asarray(getattr(samples, "draws", samples), dtype=float)
    out = {}
    for spec in ocp.chance:
        if spec.xi_index is not None:
            out[spec.name] = bandwidth_select(draws[:, spec.xi_index])
        else:
            out[spec.name] = min(bandwidth_select(draws[:, i]) for i in range(draws.shape[1]))
    return out


def _per_constraint(value, names, what) -> dict[str, float]:
    if isinstance(value, dict):
        missing = set(names) - set(value)
        if missing:
            raise ValueError(f"{what} missing for constraints {sorted(missing)}")
        return {n: float(value[n]) for n in names}
    return {n: float(value) for n in names}


def _kernels(ocp, kind, hs):
    out = {}
    for spec in ocp.chance:
        if spec.kernel is not None:
            out[spec.name] = spec.kernel
        else:
            out[spec.name] = BiasedKernel(kind, hs[spec.name])
    return out


# --- driver ------------------------------------------------------------------------

@dataclass
class _PhaseResult:
    record: PhaseRecord
    solution: NlpSolution
    nlp: TranscribedNlp
    mesh: Mesh
    history: list[Mesh]


def _solve_phase(name, ocp, cfg, mesh, samples, kernels, x_or_traj, max_ref, timings):
    history = []
    statuses = []
    traj = x_or_traj if isinstance(x_or_traj, Trajectory) else None
    x0 = None if traj is not None else x_or_traj
    refinements = 0
    mesh_done = False
    while True:
        history.append(mesh)
        t = time.perf_counter()
        nlp = transcribe(ocp, mesh, samples, kernels, derivative=cfg.derivative)
        timings["transcription"] += time.perf_counter() - t
        if traj is not None:
            x0 = _regrid(traj, ocp, mesh)
        t = time.perf_counter()
        sol = nlp_solve(nlp.problem(x0, name=name), tol=cfg.nlp_tol, max_iter=cfg.nlp_max_iter)
        timings["solve"] += time.perf_counter() - t
        statuses.append(sol.status.value)
        if not sol.converged:
            break
        traj = nlp.trajectory(sol.x)
        t = time.perf_counter()
        ref = refine_mesh(traj, ocp, mesh, cfg.mesh_tol, cfg.max_degree, cfg.min_degree)
        timings["refinement"] += time.perf_counter() - t
        if ref.done:
            mesh_done = True
            break
        if refinements >= max_ref:
            break
        refinements += 1
        mesh = ref.mesh
    hs = {k: v.bandwidth for k, v in (kernels or {}).items()}
    rec = PhaseRecord(name, hs, statuses, [m.to_dict() for m in history], refinements,
                      sol.converged, mesh_done, float(sol.objective))
    return _PhaseResult(rec, sol, nlp, mesh, history)


def solve_ccocp(ocp: OcpDefinition, cfg: SolveConfig | None = None) -> CcocpSolution:
    """Solve one chance-constrained (or deterministic) OCP.

    Non-convergence is reported through the returned status.
    """
    cfg = cfg or SolveConfig()
    timings = {"sampling": 0.0, "transcription": 0.0, "solve": 0.0, "refinement": 0.0}
    t_all = time.perf_counter()
    samples = None
    phases: list[PhaseRecord] = []
    warnings: list[str] = []
    history: list[Mesh] = []
    final_h: dict[str, float] = {}
    kernels = None
    guess = initial_guess(ocp, cfg.mesh)
    mesh = cfg.mesh

    if ocp.has_chance:
        t = time.perf_counter()
        samples = cfg.samples if cfg.samples is not None else hmc.sample(ocp.uncertainty, cfg.hmc)
        timings["sampling"] = time.perf_counter() - t
        names = [c.name for c in ocp.chance]
        if cfg.bandwidth_mode is BandwidthMode.FIXED:
            final_h = _per_constraint(cfg.bandwidth, names, "bandwidth")
        else:
            final_h = auto_bandwidths(ocp, samples)
        if cfg.bandwidth_mode is BandwidthMode.SCHEDULED:
            if cfg.start_bandwidth is not None:
                start = _per_constraint(cfg.start_bandwidth, names, "start bandwidth")
            else:
                f = cfg.start_factor or _START_FACTOR[cfg.kernel]
                start = {n: f * h for n, h in final_h.items()}
            for attempt in range(cfg.growth_tries + 1):
                hs = {n: h * cfg.growth ** attempt for n, h in start.items()}
                res = _solve_phase(f"warmup-{attempt}", ocp, cfg, mesh, samples,
                                   _kernels(ocp, cfg.kernel, hs), guess,
                                   cfg.probe_refinements, timings)
                phases.append(res.record)
                history += res.history
                if res.record.converged:
                    guess = res.nlp.trajectory(res.solution.x)
                    mesh = res.mesh
                    break
            else:
                warnings.append("warm-up solves did not converge; final solve is cold-started")
        kernels = _kernels(ocp, cfg.kernel, final_h)

    res = _solve_phase("final", ocp, cfg, mesh, samples, kernels, guess,
                       cfg.max_refinements, timings)
    phases.append(res.record)
    history += res.history
    if res.record.converged and not res.record.mesh_done:
        warnings.append("mesh refinement budget exhausted before the error tolerance was met")
    timings["total"] = time.perf_counter() - t_all
    sol = res.solution
    return CcocpSolution(
        status=sol.status, objective=float(sol.objective), x=sol.x.copy(),
        trajectory=res.nlp.trajectory(sol.x), mesh=res.mesh, mesh_history=history,
        phases=phases, bandwidths={k: v.bandwidth for k, v in (kernels or {}).items()},
        kernel=cfg.kernel.value if ocp.has_chance else "none", timings=timings,
        seed=cfg.effective_seed if ocp.has_chance else None, nlp=res.nlp,
        nlp_solution=sol, samples=samples, warnings=warnings, problem_name=ocp.name)
