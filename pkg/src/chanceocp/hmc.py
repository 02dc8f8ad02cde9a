"""Hamiltonian Monte Carlo with a leapfrog integrator.

The random stream (momenta and accept/reject uniforms) is drawn up front
from ``numpy.random.default_rng(seed)``, so the compiled chain and the
pure-Python chain consume identical randomness.
"""
from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ._accel import USE_NUMBA, njit
from .prob_model import RandomVectorSpec, grad_log_density, log_density

__all__ = [
    "HmcConfig",
    "SampleSet",
    "SamplerError",
    "ConvergenceWarning",
    "leapfrog",
    "sample",
    "split_half_check",
    "save_samples_csv",
    "load_samples_csv",
]


class SamplerError(RuntimeError):
    def __init__(self, message: str, position=None):
        super().__init__(message)
        self.position = None if position is None else np.array(position, dtype=float)


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class HmcConfig:
    n_samples: int = 50_000
    step_size: float | None = None
    n_leapfrog: int = 10
    burn_in: int = 1_000
    seed: int = 0
    initial_point: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be at least 1")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")

    def resolved_step(self, target: RandomVectorSpec) -> float:
        if self.step_size is not None:
            return float(self.step_size)
        return 0.5 * target.smallest_std()


@dataclass(frozen=True)
class SampleSet:
    draws: np.ndarray
    acceptance_rate: float
    seed: int
    target: str = "xi"
    diagnostics: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        draws = np.array(self.draws, dtype=float, copy=True)
        if draws.ndim == 1:
            draws = draws[:, None]
        if not np.all(np.isfinite(draws)):
            raise ValueError("sample set contains non-finite draws")
        draws.setflags(write=False)
        object.__setattr__(self, "draws", draws)

    @property
    def n(self) -> int:
        return self.draws.shape[0]

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    def column(self, i: int) -> np.ndarray:
        return self.draws[:, i]


def leapfrog(q, p, grad: Callable, step: float, n_steps: int):
    """Integrate Hamiltonian dynamics for ``n_steps`` leapfrog steps.

    ``grad`` returns the gradient of the log target density, so the
    potential energy is ``-log f``. Returns new arrays ``(q, p)``.
    """
    if n_steps < 1 or not step > 0:
        raise ValueError("leapfrog needs n_steps >= 1 and step > 0")
    q = np.array(q, dtype=float, copy=True)
    p = np.array(p, dtype=float, copy=True)
    g = _checked_grad(grad, q)
    for _ in range(n_steps):
        p += 0.5 * step * g
        q += step * p
        g = _checked_grad(grad, q)
        p += 0.5 * step * g
    return q, p


def _checked_grad(grad, q):
    g = np.asarray(grad(q), dtype=float)
    if not np.all(np.isfinite(g)):
        raise SamplerError(f"non-finite gradient at {q}", position=q)
    return g


# --- compiled chain for built-in mixture targets -----------------------------

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@njit
def _table_logp_grad_jit(table, q, grad):
    d = q.shape[0]
    n_terms = table.shape[1]
    lp = 0.0
    for i in range(d):
        x = q[i]
        top = -np.inf
        for k in range(n_terms):
            w = table[i, k, 0]
            if w <= 0.0:
                continue
            m = table[i, k, 1]
            s = table[i, k, 2]
            c = table[i, k, 3]
            lk = math.log(w) - math.log(s) - 0.9189385332046728 - (x - m) ** 2 / (c * s * s)
            if lk > top:
                top = lk
        tot = 0.0
        slope = 0.0
        for k in range(n_terms):
            w = table[i, k, 0]
            if w <= 0.0:
                continue
            m = table[i, k, 1]
            s = table[i, k, 2]
            c = table[i, k, 3]
            lk = math.log(w) - math.log(s) - 0.9189385332046728 - (x - m) ** 2 / (c * s * s)
            e = math.exp(lk - top)
            tot += e
            slope += e * (-2.0 * (x - m) / (c * s * s))
        lp += top + math.log(tot)
        grad[i] = slope / tot
    return lp


@njit
def _hmc_chain_jit(table, q0, momenta, uniforms, step, n_leapfrog, burn_in):
    n_total = momenta.shape[0]
    d = q0.shape[0]
    draws = np.empty((n_total - burn_in, d))
    q = q0.copy()
    g = np.empty(d)
    lp = _table_logp_grad_jit(table, q, g)
    qn = np.empty(d)
    gn = np.empty(d)
    p = np.empty(d)
    accepted = 0
    bad = 0
    for it in range(n_total):
        kin0 = 0.0
        for i in range(d):
            p[i] = momenta[it, i]
            kin0 += p[i] * p[i]
            qn[i] = q[i]
            gn[i] = g[i]
        lpn = lp
        for _ in range(n_leapfrog):
            for i in range(d):
                p[i] += 0.5 * step * gn[i]
                qn[i] += step * p[i]
            lpn = _table_logp_grad_jit(table, qn, gn)
            for i in range(d):
                p[i] += 0.5 * step * gn[i]
        kin1 = 0.0
        for i in range(d):
            kin1 += p[i] * p[i]
        log_ratio = (lpn - 0.5 * kin1) - (lp - 0.5 * kin0)
        if not math.isfinite(log_ratio):
            bad += 1
        elif math.log(uniforms[it]) < log_ratio:
            for i in range(d):
                q[i] = qn[i]
                g[i] = gn[i]
            lp = lpn
            if it >= burn_in:
                accepted += 1
        if it >= burn_in:
            for i in range(d):
                draws[it - burn_in, i] = q[i]
    return draws, accepted, bad


def _table_logp_grad_np(table, q):
    x = q[:, None]
    w, m, s, c = table[..., 0], table[..., 1], table[..., 2], table[..., 3]
    with np.errstate(divide="ignore"):
        logs = np.log(w) - np.log(s) - _LOG_SQRT_2PI - (x - m) ** 2 / (c * s * s)
    top = logs.max(axis=1, keepdims=True)
    e = np.exp(logs - top)
    tot = e.sum(axis=1)
    slope = (e * (-2.0 * (x - m) / (c * s * s))).sum(axis=1)
    return float(np.sum(top[:, 0] + np.log(tot))), slope / tot


def _hmc_chain_py(logp_grad, q0, momenta, uniforms, step, n_leapfrog, burn_in):
    n_total, d = momenta.shape
    draws = np.empty((n_total - burn_in, d))
    q = q0.copy()
    lp, g = logp_grad(q)
    if not (math.isfinite(lp) and np.all(np.isfinite(g))):
        raise SamplerError("non-finite density at the initial point", position=q)
    accepted = 0
    bad = 0
    half = 0.5 * step
    for it in range(n_total):
        p = momenta[it].copy()
        kin0 = float(p @ p)
        qn = q.copy()
        gn = g
        lpn = lp
        for _ in range(n_leapfrog):
            p += half * gn
            qn += step * p
            lpn, gn = logp_grad(qn)
            p += half * gn
        log_ratio = (lpn - 0.5 * float(p @ p)) - (lp - 0.5 * kin0)
        if not math.isfinite(log_ratio):
            bad += 1
        elif math.log(uniforms[it]) < log_ratio:
            q, g, lp = qn, gn, lpn
            if it >= burn_in:
                accepted += 1
        if it >= burn_in:
            draws[it - burn_in] = q
    return draws, accepted, bad


def _default_start(target: RandomVectorSpec) -> np.ndarray:
    if target.components and all(c.terms for c in target.components):
        return np.array([max(c.terms, key=lambda t: t.weight).mean for c in target.components])
    return np.zeros(target.dim)


def sample(target: RandomVectorSpec, config: HmcConfig) -> SampleSet:
    """Draw ``config.n_samples`` post-burn-in HMC draws from ``target``.

    A trajectory whose Hamiltonian evaluates to a non-finite value is
    rejected; if more than 1% of trajectories do so, or the start point has
    no finite density, :class:`SamplerError` is raised. Acceptance below
    0.1 emits :class:`ConvergenceWarning`.
    """
    d = target.dim
    step = config.resolved_step(target)
    q0 = (np.asarray(config.initial_point, dtype=float) if config.initial_point is not None
          else _default_start(target))
    if q0.shape != (d,):
        raise ValueError(f"initial point must have dimension {d}")

    rng = np.random.default_rng(config.seed)
    n_total = config.n_samples + config.burn_in
    momenta = rng.standard_normal((n_total, d))
    uniforms = rng.random(n_total)

    if target.builtin:
        table = target.mixture_table()
        if USE_NUMBA:
            draws, accepted, bad = _hmc_chain_jit(table, q0, momenta, uniforms, step,
                                                  config.n_leapfrog, config.burn_in)
        else:
            draws, accepted, bad = _hmc_chain_py(lambda q: _table_logp_grad_np(table, q), q0,
                                                 momenta, uniforms, step,
                                                 config.n_leapfrog, config.burn_in)
    else:
        def logp_grad(q):
            return log_density(target, q), grad_log_density(target, q)
        draws, accepted, bad = _hmc_chain_py(logp_grad, q0, momenta, uniforms, step,
                                             config.n_leapfrog, config.burn_in)

    if bad > 0.01 * n_total:
        raise SamplerError(f"{bad} of {n_total} trajectories hit a non-finite density")
    rate = accepted / config.n_samples
    if rate < 0.1:
        warnings.warn(f"HMC acceptance rate {rate:.3f} is below 0.1; reduce the step size",
                      ConvergenceWarning, stacklevel=2)
    diag = {"step_size": step, "n_leapfrog": config.n_leapfrog, "burn_in": config.burn_in,
            "rejected_nonfinite": int(bad)}
    diag.update(split_half_check(draws))
    return SampleSet(draws, rate, int(config.seed), target.name, diag)


def split_half_check(draws, n_batches: int = 25) -> dict:
    """Compare the means of the two halves of a chain per component.

    Standard errors come from batch means within each half, so
    autocorrelation inflates them as it should. A component passes when
    the discrepancy is below two standard errors of the difference.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    half = draws.shape[0] // 2
    if half < 2 * n_batches:
        return {"split_half_passed": True, "split_half": []}
    report = []
    for col in draws.T:
        a, b = col[:half], col[half:2 * half]
        se2 = 0.0
        for part in (a, b):
            usable = (part.size // n_batches) * n_batches
            means = part[:usable].reshape(n_batches, -1).mean(axis=1)
            se2 += means.var(ddof=1) / n_batches
        diff = float(a.mean() - b.mean())
        se = math.sqrt(se2)
        report.append({"diff": diff, "se": se, "passed": bool(abs(diff) <= 2.0 * se)})
    return {"split_half_passed": all(r["passed"] for r in report), "split_half": report}


def save_samples_csv(samples: SampleSet, path) -> None:
    meta = {"seed": samples.seed, "acceptance_rate": samples.acceptance_rate,
            "target": samples.target}
    buf = io.StringIO()
    buf.write("# " + json.dumps(meta, sort_keys=True) + "\n")
    buf.write(",".join(f"xi_{i + 1}" for i in range(samples.dim)) + "\n")
    for row in samples.draws:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_samples_csv(path) -> SampleSet:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    meta = json.loads(lines[0][1:].strip()) if lines and lines[0].startswith("#") else {}
    body = [ln for ln in lines if ln and not ln.startswith("#")][1:]
    draws = np.array([[float(v) for v in ln.split(",")] for ln in body])
    return SampleSet(draws, float(meta.get("acceptance_rate", float("nan"))),
                     int(meta.get("seed", 0)), meta.get("target", "xi"))
