"""Deterministic surrogates for chance constraints.

Orientation: a constraint with ``sense="below"`` enforces
``P(psi < q) <= eps`` and is estimated by ``mean_j K_B((q - psi_j)/h)``.
``sense="above"`` enforces ``P(psi > q) <= eps`` by negating ``psi`` and
``q``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .kernels import BiasedKernel, kde_mean, kde_pdf_mean

__all__ = [
    "Guard",
    "ChanceConstraintSpec",
    "RiskAllocation",
    "allocate_risk",
    "kde_violation_estimate",
    "split_bernstein_estimate",
    "guarded_violation_estimate",
    "empirical_violation",
]


@dataclass(frozen=True)
class Guard:
    """Short-circuit: the estimate is 0 while ``trigger <= activation - margin``.

    ``trigger(y, u, t)`` sees deterministic quantities only.
    """

    trigger: Callable
    activation: float
    margin: float

    def inactive(self, y, u, t) -> bool:
        return float(self.trigger(y, u, t)) <= self.activation - self.margin


@dataclass(frozen=True)
class ChanceConstraintSpec:
    """One scalar chance constraint.

    ``function`` maps deterministic quantities and the ``(N, d)`` sample
    matrix to ``psi`` of shape ``(N,)``. Path constraints take
    ``(y, u, t, xi)`` at one collocation point; event constraints take
    ``(y0, t0, yf, tf, xi)``.

    ``kernel=None`` lets the solve configuration pick kind and bandwidth.
    ``xi_index`` names the sample column whose spread sets the automatic
    bandwidth. ``depends_on`` optionally lists the local variables
    (``"y0".."yk"``, ``"u0"..``, ``"t"``; or for events ``"y0_0"``,
    ``"yf_1"``, ``"t0"``, ``"tf"``) that ``function`` reads; when omitted the
    transcription detects them by probing.
    """

    name: str
    function: Callable
    risk: float
    bound: float = 0.0
    kind: Literal["path", "event"] = "path"
    sense: Literal["below", "above"] = "below"
    kernel: BiasedKernel | None = None
    guard: Guard | None = None
    xi_index: int | None = None
    depends_on: tuple[str, ...] | None = None

    def __post_init__(self):
        if not 0.0 < self.risk < 1.0:
            raise ValueError(f"risk budget must lie in (0, 1), got {self.risk}")
        if self.kind not in ("path", "event"):
            raise ValueError(f"kind must be 'path' or 'event', got {self.kind!r}")
        if self.sense not in ("below", "above"):
            raise ValueError(f"sense must be 'below' or 'above', got {self.sense!r}")
        if self.guard is not None and self.kind != "path":
            raise ValueError("guards apply to path constraints only")

    def oriented(self, psi):
        """Return ``(psi', q')`` such that the constraint reads ``P(psi' < q') <= eps``."""
        psi = np.asarray(psi, dtype=float)
        if self.sense == "above":
            return -psi, -self.bound
        return psi, self.bound


@dataclass(frozen=True)
class RiskAllocation:
    total: float
    components: tuple[float, ...]

    def __post_init__(self):
        if any(not e > 0 for e in self.components):
            raise ValueError("every allocated risk must be positive")
        if math.fsum(self.components) > self.total:
            raise ValueError("allocated risks exceed the total budget")


def allocate_risk(eps: float, n_g: int) -> RiskAllocation:
    """Uniform split of a joint risk budget over ``n_g`` components (Boole)."""
    if n_g < 1:
        raise ValueError("need at least one component")
    if not 0.0 < eps < 1.0:
        raise ValueError(f"risk must lie in (0, 1), got {eps}")
    share = eps / n_g
    parts = [share] * n_g
    # Round-off can push the sum one ulp over the total.
    while math.fsum(parts) > eps:
        share = math.nextafter(share, 0.0)
        parts = [share] * n_g
    return RiskAllocation(float(eps), tuple(parts))


def kde_violation_estimate(psi_samples, q: float, kernel: BiasedKernel) -> float:
    """Biased-KDE estimate of ``P(psi < q)``: ``mean_j K_B((q - psi_j)/h)``."""
    psi = np.asarray(psi_samples, dtype=float)
    if psi.size == 0:
        raise ValueError("empty sample set")
    return kde_mean(psi, q, kernel)


def kde_violation_slope(psi_samples, q: float, kernel: BiasedKernel) -> float:
    """``d/dq`` of :func:`kde_violation_estimate`; equals ``-d/dpsi`` for a common shift."""
    return kde_pdf_mean(psi_samples, q, kernel) / kernel.bandwidth


def split_bernstein_estimate(psi_samples, q: float, alpha_plus: float, alpha_minus: float) -> float:
    """Two-sided Split-Bernstein approximation of ``P(psi < q)``.

    Samples with ``q - psi > 0`` contribute ``exp(alpha_plus (q - psi))``,
    the rest ``exp(alpha_minus (q - psi))``. With ``alpha_plus = 0`` this is
    the Split-Bernstein KDE at ``h = 1/alpha_minus``; with ``alpha_plus > 0``
    it can exceed one.
    """
    if not alpha_minus > 0 or alpha_plus < 0:
        raise ValueError("need alpha_minus > 0 and alpha_plus >= 0")
    psi = np.asarray(psi_samples, dtype=float).ravel()
    if psi.size == 0:
        raise ValueError("empty sample set")
    gap = q - psi
    pos = gap > 0.0
    if alpha_plus == 0.0:
        plus = np.ones(int(pos.sum()))
    else:
        plus = np.exp(alpha_plus * gap[pos])
    # Same association as kde_mean: (q - psi) * (1/h).
    minus = np.exp(gap[~pos] * alpha_minus)
    return float(np.sum(plus) + np.sum(minus)) / psi.size


def guarded_violation_estimate(spec: ChanceConstraintSpec, decision, samples,
                               kernel: BiasedKernel | None = None) -> float:
    """Path surrogate at one point, short-circuited by ``spec.guard``.

    ``decision`` is ``(y, u, t)``. ``samples`` is a SampleSet or an ``(N, d)``
    array. Returns 0 without calling ``spec.function`` when the guard holds.
    """
    y, u, t = decision
    if spec.guard is not None and spec.guard.inactive(y, u, t):
        return 0.0
    kernel = kernel or spec.kernel
    if kernel is None:
        raise ValueError(f"no kernel configured for constraint {spec.name!r}")
    xi = getattr(samples, "draws", samples)
    psi, q = spec.oriented(spec.function(y, u, t, xi))
    return kde_violation_estimate(psi, q, kernel)


def empirical_violation(psi, q: float, sense: str = "below") -> float:
    """Fraction of samples that violate; ties count as violations."""
    psi = np.asarray(psi, dtype=float)
    if sense == "above":
        return float(np.mean(psi >= q))
    return float(np.mean(psi <= q))

