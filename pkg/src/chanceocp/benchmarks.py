"""Soft lunar landing: deterministic and chance-constrained variants.

States are altitude ``y1`` and vertical velocity ``y2``; the control is
upward thrust acceleration ``u``. Dynamics are ``y1' = y2``,
``y2' = u - g`` and the cost is the fuel integral of ``u``.

The chance-constrained variant frees the final altitude and adds

* an event constraint ``P(|y1(tf) - xi1| - delta > 0) <= eps_a`` with
  ``xi1 ~ N(0, 0.1^2)``;
* a path constraint ``P(u + xi2 - 3 > 0) <= eps_b`` with ``xi2`` bimodal,
  short-circuited to zero while ``u <= 3 - b``.
"""
from __future__ import annotations

import csv
import io
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .chance import ChanceConstraintSpec, Guard, empirical_violation
from .kernels import KernelKind
from .ocp import CcocpSolution, OcpDefinition, SolveConfig, solve_ccocp
from .prob_model import MixtureTerm, RandomVectorSpec, bimodal, exact_sample, normal

__all__ = [
    "LunarParams",
    "lunar_xi",
    "lunar_ccocp",
    "lunar_deterministic",
    "analytic_deterministic_optimum",
    "RunRecord",
    "BatchStats",
    "BatchError",
    "aggregate",
    "run_batch",
    "batch_table_csv",
    "read_batch_table_csv",
    "ConstraintCheck",
    "ValidationReport",
    "monte_carlo_validate",
]


@dataclass(frozen=True)
class LunarParams:
    g: float = 1.622
    delta: float = 0.25
    eps_a: float = 0.1
    eps_b: float = 0.01
    guard_margin: float = 1.0
    u_max: float = 3.0
    y1_0: float = 10.0
    y2_0: float = -2.0
    y2_f: float = 0.0
    xi1_std: float = 0.1
    tf_guess: float = 5.0
    tf_bounds: tuple[float, float] = (0.1, 20.0)


def lunar_xi(params: LunarParams = LunarParams()) -> RandomVectorSpec:
    """``xi1`` normal, ``xi2`` the two-term mixture (unnormalized, as given)."""
    xi2 = bimodal(MixtureTerm(1.03, 0.0, 0.05, 2.0), MixtureTerm(1.12, -0.07, 0.08, 1.0),
                  label="xi2")
    return RandomVectorSpec((normal(0.0, params.xi1_std, label="xi1"), xi2), name="lunar-xi")


def _dynamics(g):
    def f(Y, U, t):
        return np.column_stack([Y[:, 1], U[:, 0] - g])
    return f


def _fuel(Y, U, t):
    return U[:, 0]


def _common(params: LunarParams, **kw) -> OcpDefinition:
    return OcpDefinition(
        n_states=2, n_controls=1, dynamics=_dynamics(params.g), running_cost=_fuel,
        initial_lower=[params.y1_0, params.y2_0], initial_upper=[params.y1_0, params.y2_0],
        t0_bounds=(0.0, 0.0), tf_bounds=params.tf_bounds, tf_guess=params.tf_guess,
        guess_final=[0.0, params.y2_f], **kw)


def _event_psi(delta):
    def psi(y0, t0, yf, tf, xi):
        return np.abs(yf[0] - xi[:, 0]) - delta
    return psi


def _path_psi(u_max):
    def psi(y, u, t, xi):
        return u[0] + xi[:, 1] - u_max
    return psi


def _control(y, u, t):
    return u[0]


def lunar_ccocp(params: LunarParams = LunarParams()) -> OcpDefinition:
    event = ChanceConstraintSpec("final-position", _event_psi(params.delta), params.eps_a,
                                 bound=0.0, kind="event", sense="above", xi_index=0,
                                 depends_on=("yf_0",))
    path = ChanceConstraintSpec("thrust", _path_psi(params.u_max), params.eps_b, bound=0.0,
                                kind="path", sense="above", xi_index=1, depends_on=("u0",),
                                guard=Guard(_control, params.u_max, params.guard_margin))
    return _common(params, control_lower=0.0, control_upper=np.inf,
                   final_lower=[-np.inf, params.y2_f], final_upper=[np.inf, params.y2_f],
                   chance=(path, event), uncertainty=lunar_xi(params), name="lunar-cc")


def lunar_deterministic(params: LunarParams = LunarParams()) -> OcpDefinition:
    return _common(params, control_lower=0.0, control_upper=params.u_max,
                   final_lower=[0.0, params.y2_f], final_upper=[0.0, params.y2_f],
                   name="lunar-det")


def analytic_deterministic_optimum(params: LunarParams = LunarParams()) -> dict:
    """Coast-then-burn solution of the deterministic problem.

    Coasting for ``t1`` then thrusting at ``u_max`` for ``t2`` with
    ``t2 = (v0 - g t1 - vf) / (g - u_max)`` (velocity) leaves the altitude
    a quadratic in ``t1``; its root gives the switch time.
    """
    g, a, h0, v0, vf = params.g, params.u_max, params.y1_0, params.y2_0, params.y2_f
    net = a - g

    def altitude(t1):
        v1 = v0 - g * t1
        t2 = (vf - v1) / net
        return h0 + v0 * t1 - 0.5 * g * t1**2 + v1 * t2 + 0.5 * net * t2**2

    t1 = brentq(altitude, 0.0, 100.0, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    t2 = (vf - (v0 - g * t1)) / net
    return {"t1": t1, "t2": t2, "tf": t1 + t2, "cost": a * t2}


# --- batches ------------------------------------------------------------------------

class BatchError(RuntimeError):
    pass


@dataclass
class RunRecord:
    seed: int
    kernel: str
    status: str
    objective: float
    time: float
    final_position: float
    tf: float
    bandwidths: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == "Converged"


@dataclass
class BatchStats:
    kernel: str
    n_runs: int
    n_converged: int
    mean_cost: float
    std_cost: float
    mean_time: float
    std_time: float
    max_time: float
    min_time: float
    mean_final_position: float
    runs: list[RunRecord]
    excluded_seeds: list[int]
    std_cost_bandwidth: float = 0.0
    std_cost_residual: float = 0.0

    @property
    def degenerate(self) -> bool:
        """True when fewer than two runs converged, so the spreads are not informative."""
        return self.n_converged < 2


def _record(sol: CcocpSolution, seed: int, kernel: str) -> RunRecord:
    t = sol.timings
    return RunRecord(seed=seed, kernel=kernel, status=sol.status.value,
                     objective=float(sol.objective),
                     time=float(t["total"]),
                     final_position=float(sol.trajectory.Y[-1, 0]), tf=float(sol.trajectory.tf),
                     bandwidths=dict(sol.bandwidths), warnings=list(sol.warnings))


def _run_one(args):
    params, kernel, seed, cfg_kwargs = args
    cfg = SolveConfig(kernel=kernel, seed=seed, **cfg_kwargs)
    sol = solve_ccocp(lunar_ccocp(params), cfg)
    return _record(sol, seed, KernelKind.parse(kernel).value), sol


def _std(values):
    return statistics.stdev(values) if len(values) > 1 else 0.0


def _bandwidth_decomposition(runs: list[RunRecord]) -> tuple[float, float]:
    """Split the cost spread into a part explained linearly by the bandwidths and a residual."""
    if len(runs) < 3:
        return 0.0, 0.0
    names = sorted(runs[0].bandwidths)
    y = np.array([r.objective for r in runs])
    if not names:
        return 0.0, float(np.std(y, ddof=1))
    X = np.column_stack([np.ones(len(runs))] + [[r.bandwidths[n] for r in runs] for n in names])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    fit = X @ coef
    return float(np.std(fit, ddof=1)), float(np.std(y - fit, ddof=1))


def aggregate(kernel: str, runs: list[RunRecord]) -> BatchStats:
    ok = [r for r in runs if r.converged]
    if not ok:
        raise BatchError(f"all {len(runs)} runs failed for kernel {kernel}")
    costs = [r.objective for r in ok]
    times = [r.time for r in ok]
    s_bw, s_res = _bandwidth_decomposition(ok)
    return BatchStats(
        kernel=kernel, n_runs=len(runs), n_converged=len(ok),
        mean_cost=statistics.fmean(costs), std_cost=_std(costs),
        mean_time=statistics.fmean(times), std_time=_std(times),
        max_time=max(times), min_time=min(times),
        mean_final_position=statistics.fmean(r.final_position for r in ok),
        runs=list(runs), excluded_seeds=[r.seed for r in runs if not r.converged],
        std_cost_bandwidth=s_bw, std_cost_residual=s_res)


def run_batch(kernel, n_runs: int = 20, base_seed: int = 0,
              params: LunarParams = LunarParams(), workers: int = 1,
              config: dict | None = None, on_run=None,
              completed: dict[int, RunRecord] | None = None) -> BatchStats:
    """Solve the chance-constrained lunar problem ``n_runs`` times with seeds
    ``base_seed, base_seed + 1, ...``.

    ``config`` holds extra :class:`SolveConfig` keywords. ``on_run`` is
    called with ``(record, solution)`` as new runs finish (in seed order).
    Seeds present in ``completed`` are not solved again; their records
    enter the statistics as given. Non-converged runs are excluded from
    the statistics and listed in ``excluded_seeds``.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    kind = KernelKind.parse(kernel)
    completed = completed or {}
    seeds = [base_seed + i for i in range(n_runs)]
    jobs = [(params, kind.value, s, dict(config or {})) for s in seeds if s not in completed]
    fresh = {}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = pool.map(_run_one, jobs)
            for rec, sol in results:
                fresh[rec.seed] = rec
                if on_run:
                    on_run(rec, sol)
    else:
        for job in jobs:
            rec, sol = _run_one(job)
            fresh[rec.seed] = rec
            if on_run:
                on_run(rec, sol)
    records = [completed[s] if s in completed else fresh[s] for s in seeds]
    return aggregate(kind.value, records)


def batch_table_csv(stats: list[BatchStats]) -> str:
    """Rows of summary statistics by kernel column."""
    rows = [
        ("mu_J", "mean_cost"), ("sigma_J", "std_cost"), ("mu_T", "mean_time"),
        ("sigma_T", "std_time"), ("T_max", "max_time"), ("T_min", "min_time"),
        ("mean_final_position", "mean_final_position"), ("n_converged", "n_converged"),
        ("n_runs", "n_runs"), ("sigma_J_bandwidth", "std_cost_bandwidth"),
        ("sigma_J_residual", "std_cost_residual"), ("degenerate", "degenerate"),
    ]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["statistic"] + [s.kernel for s in stats])
    for label, attr in rows:
        vals = [getattr(s, attr) for s in stats]
        w.writerow([label] + [repr(float(v)) if isinstance(v, float) else str(v) for v in vals])
    return buf.getvalue()


def read_batch_table_csv(text: str) -> dict[str, dict[str, float | bool]]:
    """Parse :func:`batch_table_csv` output into ``{kernel: {statistic: value}}``."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0][0] != "statistic":
        raise ValueError("not a batch statistics table")
    kernels = rows[0][1:]
    out: dict[str, dict] = {k: {} for k in kernels}
    for row in rows[1:]:
        for k, v in zip(kernels, row[1:]):
            if v in ("True", "False"):
                out[k][row[0]] = v == "True"
            elif row[0] in ("n_converged", "n_runs"):
                out[k][row[0]] = int(v)
            else:
                out[k][row[0]] = float(v)
    return out


# --- Monte-Carlo validation -------------------------------------------------------------

@dataclass
class ConstraintCheck:
    name: str
    risk: float
    frequency: float
    n: int
    std_error: float
    limit: float
    passed: bool
    worst_point: int | None = None


@dataclass
class ValidationReport:
    n_mc: int
    seed: int
    checks: list[ConstraintCheck]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_dict(self) -> dict:
        return {"n_mc": self.n_mc, "seed": self.seed, "passed": self.passed,
                "checks": [vars(c) for c in self.checks]}


def _check(name, risk, freq, n, point=None):
    se = math.sqrt(max(risk * (1.0 - risk), 0.0) / n)
    limit = risk + 2.0 * se
    return ConstraintCheck(name, risk, freq, n, se, limit, bool(freq <= limit or risk >= 1.0),
                           point)


def monte_carlo_validate(solution, ocp: OcpDefinition, n_mc: int = 100_000,
                         seed: int = 12345) -> ValidationReport:
    """Empirical violation frequencies of ``solution`` under fresh independent draws.

    ``solution`` is a :class:`CcocpSolution` or a trajectory. Path
    constraints are checked at every collocation point and reported at the
    worst point; guards are ignored here so the check uses the true
    constraint. The pass limit is ``eps + 2 sqrt(eps (1 - eps) / n)``.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be positive")
    traj = getattr(solution, "trajectory", solution)
    xi = exact_sample(ocp.uncertainty, n_mc, np.random.default_rng(seed))
    checks = []
    tc = traj.colloc_times
    for spec in ocp.chance:
        if spec.kind == "event":
            psi = spec.function(traj.Y[0], traj.t0, traj.Y[-1], traj.tf, xi)
            freq = empirical_violation(psi, spec.bound, spec.sense)
            checks.append(_check(spec.name, spec.risk, freq, n_mc))
        else:
            worst, at = -1.0, None
            for p in range(tc.size):
                psi = spec.function(traj.Y[p], traj.U[p], tc[p], xi)
                freq = empirical_violation(psi, spec.bound, spec.sense)
                if freq > worst:
                    worst, at = freq, p
            checks.append(_check(spec.name, spec.risk, worst, n_mc, at))
    return ValidationReport(n_mc, seed, checks)

