"""Descriptions of the random vector through log-densities and gradients.

Built-in components are Gaussian mixtures written term by term as

    w / (s sqrt(2 pi)) * exp(-(x - m)**2 / (c s**2))

where ``c`` is the exponent denominator factor (2 for an ordinary normal
term). A plain normal is a one-term mixture with ``w = 1, c = 2``. Mixtures
are not required to integrate to one; samplers only need log-densities up
to a constant, and :func:`normalized_pdf` normalizes by quadrature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

__all__ = [
    "DistKind",
    "MixtureTerm",
    "DistributionSpec",
    "RandomVectorSpec",
    "normal",
    "bimodal",
    "custom",
    "log_density",
    "grad_log_density",
    "normalized_pdf",
    "component_cdf",
    "exact_sample",
]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class DistKind(str, Enum):
    NORMAL = "normal"
    BIMODAL = "bimodal"
    CUSTOM = "custom"


@dataclass(frozen=True)
class MixtureTerm:
    weight: float
    mean: float
    std: float
    exponent_factor: float = 2.0

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError(f"std must be positive, got {self.std}")
        if not self.weight > 0:
            raise ValueError(f"mixture weight must be positive, got {self.weight}")
        if not self.exponent_factor > 0:
            raise ValueError("exponent factor must be positive")

    @property
    def effective_std(self) -> float:
        """Standard deviation of the Gaussian shape this term actually has."""
        return self.std * math.sqrt(self.exponent_factor / 2.0)

    @property
    def mass(self) -> float:
        return self.weight * math.sqrt(self.exponent_factor / 2.0)


@dataclass(frozen=True)
class DistributionSpec:
    kind: DistKind
    terms: tuple[MixtureTerm, ...] = ()
    logpdf: Callable[[float], float] | None = None
    grad_logpdf: Callable[[float], float] | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind is DistKind.CUSTOM:
            if self.logpdf is None or self.grad_logpdf is None:
                raise ValueError("custom distributions need logpdf and grad_logpdf")
        elif not self.terms:
            raise ValueError(f"{self.kind.value} distribution needs at least one term")

    @property
    def smallest_std(self) -> float:
        if not self.terms:
            return 1.0
        return min(t.std for t in self.terms)

    def logpdf_scalar(self, x: float) -> float:
        if self.kind is DistKind.CUSTOM:
            return float(self.logpdf(x))
        return float(_mixture_logpdf(np.asarray(x, dtype=float), self.terms))

    def grad_scalar(self, x: float) -> float:
        if self.kind is DistKind.CUSTOM:
            return float(self.grad_logpdf(x))
        return float(_mixture_grad(np.asarray(x, dtype=float), self.terms))

    def pdf_unnormalized(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is DistKind.CUSTOM:
            return np.exp(np.vectorize(self.logpdf, otypes=[float])(x))
        return np.exp(_mixture_logpdf(x, self.terms))


def normal(mean: float = 0.0, std: float = 1.0, label: str = "") -> DistributionSpec:
    return DistributionSpec(DistKind.NORMAL, (MixtureTerm(1.0, mean, std, 2.0),), label=label)


def bimodal(first: MixtureTerm, second: MixtureTerm, label: str = "") -> DistributionSpec:
    return DistributionSpec(DistKind.BIMODAL, (first, second), label=label)


def custom(logpdf, grad_logpdf, label: str = "") -> DistributionSpec:
    return DistributionSpec(DistKind.CUSTOM, logpdf=logpdf, grad_logpdf=grad_logpdf, label=label)


@dataclass(frozen=True)
class RandomVectorSpec:
    """Independent components, or a custom joint log-density.

    When ``joint_logpdf`` is given the components are ignored for density
    evaluation (they may still label dimensions) and ``dim`` must be set.
    """

    components: tuple[DistributionSpec, ...] = ()
    joint_logpdf: Callable[[np.ndarray], float] | None = None
    joint_grad: Callable[[np.ndarray], np.ndarray] | None = None
    dim_override: int | None = None
    name: str = "xi"

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if self.joint_logpdf is not None:
            if self.joint_grad is None:
                raise ValueError("a joint log-density needs a joint gradient")
            if not (self.dim_override or self.components):
                raise ValueError("joint densities need an explicit dimension")
        elif not self.components:
            raise ValueError("random vector needs at least one component")

    @property
    def independent(self) -> bool:
        return self.joint_logpdf is None

    @property
    def dim(self) -> int:
        return int(self.dim_override or len(self.components))

    @property
    def builtin(self) -> bool:
        return self.independent and all(c.kind is not DistKind.CUSTOM for c in self.components)

    def mixture_table(self) -> np.ndarray:
        """Terms as a ``(d, T, 4)`` array of (weight, mean, std, factor); zero-weight rows pad."""
        if not self.builtin:
            raise ValueError("only built-in independent components have a mixture table")
        n_terms = max(len(c.terms) for c in self.components)
        table = np.zeros((self.dim, n_terms, 4))
        table[:, :, 2] = 1.0
        table[:, :, 3] = 2.0
        for i, comp in enumerate(self.components):
            for k, t in enumerate(comp.terms):
                table[i, k] = (t.weight, t.mean, t.std, t.exponent_factor)
        return table

    def smallest_std(self) -> float:
        return min(c.smallest_std for c in self.components) if self.components else 1.0


def _term_logs(x, terms: Sequence[MixtureTerm]):
    x = np.asarray(x, dtype=float)
    return np.stack([
        math.log(t.weight) - math.log(t.std) - _LOG_SQRT_2PI
        - (x - t.mean) ** 2 / (t.exponent_factor * t.std**2)
        for t in terms
    ])


def _mixture_logpdf(x, terms):
    logs = _term_logs(x, terms)
    top = logs.max(axis=0)
    return top + np.log(np.exp(logs - top).sum(axis=0))


def _mixture_grad(x, terms):
    logs = _term_logs(x, terms)
    w = np.exp(logs - logs.max(axis=0))
    w = w / w.sum(axis=0)
    slopes = np.stack([-2.0 * (x - t.mean) / (t.exponent_factor * t.std**2) for t in terms])
    return (w * slopes).sum(axis=0)


def _check_point(spec: RandomVectorSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape != (spec.dim,):
        raise ValueError(f"expected a point of dimension {spec.dim}, got shape {x.shape}")
    return x


def log_density(spec: RandomVectorSpec, x) -> float:
    """Log-density of ``spec`` at ``x``, up to an additive constant."""
    x = _check_point(spec, x)
    if not spec.independent:
        return float(spec.joint_logpdf(x))
    return float(sum(c.logpdf_scalar(xi) for c, xi in zip(spec.components, x)))


def grad_log_density(spec: RandomVectorSpec, x) -> np.ndarray:
    x = _check_point(spec, x)
    if not spec.independent:
        return np.asarray(spec.joint_grad(x), dtype=float).reshape(spec.dim)
    return np.array([c.grad_scalar(xi) for c, xi in zip(spec.components, x)])


def _support(dist: DistributionSpec, width: float = 12.0) -> tuple[float, float]:
    if not dist.terms:
        return -math.inf, math.inf
    lo = min(t.mean - width * t.effective_std for t in dist.terms)
    hi = max(t.mean + width * t.effective_std for t in dist.terms)
    return lo, hi


def _normalizer(dist: DistributionSpec) -> float:
    if dist.terms:
        return sum(t.mass for t in dist.terms)
    val, _ = integrate.quad(lambda s: float(dist.pdf_unnormalized(s)), -np.inf, np.inf, limit=200)
    return val


def normalized_pdf(dist: DistributionSpec):
    """Return a callable PDF normalized to unit mass.

    Mixture masses are also available in closed form; quadrature is used so
    custom one-dimensional densities are handled the same way.
    """
    lo, hi = _support(dist)
    if math.isfinite(lo):
        z, _ = integrate.quad(lambda s: float(dist.pdf_unnormalized(s)), lo, hi,
                              limit=200, points=[t.mean for t in dist.terms])
    else:
        z = _normalizer(dist)

    def pdf(x):
        return dist.pdf_unnormalized(x) / z

    return pdf


def component_cdf(dist: DistributionSpec, x) -> np.ndarray:
    """CDF of one component by adaptive quadrature of the normalized density.

    Scalar input gives a float.
    """
    pdf = normalized_pdf(dist)
    lo, _ = _support(dist)
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        if xi <= lo:
            out[i] = 0.0
            continue
        pts = [m for m in (t.mean for t in dist.terms) if lo < m < xi]
        out[i], _ = integrate.quad(lambda s: float(pdf(s)), lo, xi, limit=200,
                                   points=pts or None)
    out = np.clip(out, 0.0, 1.0)
    return float(out[0]) if scalar else out


def exact_sample(spec: RandomVectorSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Independent draws for validation, without MCMC.

    Normal components use the generator directly; mixtures use inverse
    transform sampling on a fine quadrature grid of the normalized density.
    """
    if not spec.builtin:
        raise ValueError("exact sampling supports built-in independent components only")
    out = np.empty((n, spec.dim))
    for i, comp in enumerate(spec.components):
        if comp.kind is DistKind.NORMAL:
            t = comp.terms[0]
            out[:, i] = rng.normal(t.mean, t.effective_std, size=n)
            continue
        lo, hi = _support(comp)
        grid = np.linspace(lo, hi, 400_001)
        dens = comp.pdf_unnormalized(grid)
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        cdf /= cdf[-1]
        out[:, i] = np.interp(rng.random(n), cdf, grid)
    return out

