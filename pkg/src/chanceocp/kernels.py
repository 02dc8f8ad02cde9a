"""Kernels, their integrated functions, bias rules and bandwidth selection.

Three kernels are supported:

* Split-Bernstein, ``k(eta) = exp(eta)`` for ``eta <= 0`` and 0 otherwise.
  Its integrated function already dominates the step function, so its
  default bias is zero.
* Epanechnikov, ``k(eta) = 3/4 (1 - eta**2)`` on ``[-1, 1]``. A bias equal
  to the bandwidth makes the integrated function dominate the step.
* Gaussian, the standard normal density. No finite bias can make it
  dominate the step; a bias of three bandwidths is used, leaving a
  residual gap of at most ``1 - Phi(3)``.

A biased integrated kernel is ``K_B(nu) = K(nu + B/h)``. Estimators
evaluate it at ``eta = (q - psi) / h``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import ndtr

from ._accel import USE_NUMBA, njit

__all__ = [
    "KernelKind",
    "BiasedKernel",
    "kernel_pdf",
    "integrated_kernel",
    "biased_integrated_kernel",
    "default_bias",
    "bandwidth_select",
    "kde_mean",
    "kde_pdf_mean",
    "kde_pdf_weighted_mean",
]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class KernelKind(str, Enum):
    SPLIT_BERNSTEIN = "split-bernstein"
    EPANECHNIKOV = "epanechnikov"
    GAUSSIAN = "gaussian"

    @property
    def code(self) -> int:
        return _CODES[self]

    @classmethod
    def parse(cls, value: "str | KernelKind") -> "KernelKind":
        if isinstance(value, KernelKind):
            return value
        key = str(value).strip().lower().replace("_", "-")
        aliases = {"sb": "split-bernstein", "splitbernstein": "split-bernstein",
                   "epa": "epanechnikov", "gauss": "gaussian", "normal": "gaussian"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            allowed = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown kernel {value!r}; allowed: {allowed}") from None


_CODES = {
    KernelKind.SPLIT_BERNSTEIN: 0,
    KernelKind.EPANECHNIKOV: 1,
    KernelKind.GAUSSIAN: 2,
}


def kernel_pdf(kind: KernelKind | str, eta):
    """Kernel density ``k(eta)``; vectorized over ``eta``."""
    kind = KernelKind.parse(kind)
    eta = np.asarray(eta, dtype=float)
    if kind is KernelKind.SPLIT_BERNSTEIN:
        out = np.where(eta <= 0.0, np.exp(np.minimum(eta, 0.0)), 0.0)
    elif kind is KernelKind.EPANECHNIKOV:
        out = np.where(np.abs(eta) < 1.0, 0.75 * (1.0 - eta * eta), 0.0)
    else:
        out = _INV_SQRT_2PI * np.exp(-0.5 * eta * eta)
    return out[()] if out.ndim == 0 else out


def integrated_kernel(kind: KernelKind | str, eta):
    """``K(eta)``, the integral of the kernel from minus infinity to ``eta``."""
    kind = KernelKind.parse(kind)
    eta = np.asarray(eta, dtype=float)
    if kind is KernelKind.SPLIT_BERNSTEIN:
        out = np.where(eta <= 0.0, np.exp(np.minimum(eta, 0.0)), 1.0)
    elif kind is KernelKind.EPANECHNIKOV:
        v = np.clip(eta, -1.0, 1.0)
        out = 0.5 + 0.75 * v - 0.25 * v**3
        out = np.where(eta >= 1.0, 1.0, np.where(eta <= -1.0, 0.0, out))
    else:
        out = ndtr(eta)
    return out[()] if out.ndim == 0 else out


def default_bias(kind: KernelKind | str, h: float) -> float:
    """Bias that makes ``K_B`` dominate the step (exactly or to ``1 - Phi(3)``)."""
    kind = KernelKind.parse(kind)
    if not h > 0:
        raise ValueError(f"bandwidth must be positive, got {h}")
    if kind is KernelKind.SPLIT_BERNSTEIN:
        return 0.0
    if kind is KernelKind.EPANECHNIKOV:
        return float(h)
    return 3.0 * float(h)


@dataclass(frozen=True)
class BiasedKernel:
    """Kernel kind with bandwidth ``h`` and bias ``B``.

    ``bias=None`` selects :func:`default_bias` for the kind.
    """

    kind: KernelKind
    bandwidth: float
    bias: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind.parse(self.kind))
        h = float(self.bandwidth)
        if not (h > 0 and math.isfinite(h)):
            raise ValueError(f"bandwidth must be positive and finite, got {self.bandwidth}")
        object.__setattr__(self, "bandwidth", h)
        b = default_bias(self.kind, h) if self.bias is None else float(self.bias)
        if b < 0:
            raise ValueError(f"bias must be nonnegative, got {b}")
        object.__setattr__(self, "bias", b)

    @property
    def shift(self) -> float:
        """Bias in units of the bandwidth, ``B / h``."""
        return self.bias / self.bandwidth

    def cdf(self, nu):
        return integrated_kernel(self.kind, np.asarray(nu, dtype=float) + self.shift)

    def pdf(self, nu):
        return kernel_pdf(self.kind, np.asarray(nu, dtype=float) + self.shift)

    def with_bandwidth(self, h: float) -> "BiasedKernel":
        return BiasedKernel(self.kind, h)


def biased_integrated_kernel(bk: BiasedKernel, nu):
    """``K_B(nu) = K(nu + B/h)``."""
    return bk.cdf(nu)


def bandwidth_select(samples) -> float:
    """Silverman's normal-reference bandwidth ``0.9 min(sd, IQR/1.34) N^(-1/5)``.

    When the interquartile range collapses but the sample is not constant,
    the standard deviation alone is used.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("bandwidth selection needs at least two samples")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        raise ValueError("samples have zero spread; supply the bandwidth manually")
    q75, q25 = np.percentile(x, [75.0, 25.0])
    iqr = float(q75 - q25)
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * x.size ** (-0.2)


# --- hot loops ---------------------------------------------------------------
# kde_mean(psi, q, h, shift, code) = mean_j K((q - psi_j)/h + shift)
#
# math.exp and math.erfc are scalar libm calls that block SIMD, so the loops
# below use a polynomial exp split into a mantissa part and a 2**k bit
# pattern. The first pass is branch-free and vectorizes (error_model="numpy"
# drops the zero-division check that would otherwise block it); the second
# pass reinterprets the bits as doubles and reduces.

_LOG2E = 1.4426950408889634
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_EXP_FLOOR = -708.0


@njit(inline="always")
def _exp_split(x):
    # exp(x) = p * 2**k for x in [-708, 0]; |r| <= ln2/2 so degree 13 is exact to 1 ulp
    k = math.floor(x * _LOG2E + 0.5)
    r = (x - k * _LN2_HI) - k * _LN2_LO
    p = 1.0 + r * (1.0 + r * (0.5 + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (
        1.0 / 120.0 + r * (1.0 / 720.0 + r * (1.0 / 5040.0 + r * (1.0 / 40320.0 + r * (
            1.0 / 362880.0 + r * (1.0 / 3628800.0 + r * (1.0 / 39916800.0 + r * (
                1.0 / 479001600.0 + r * (1.0 / 6227020800.0)))))))))))))
    return p, (np.int64(k) + 1023) << 52


@njit(inline="always")
def _erfcx_poly(a):
    # exp(a*a) * erfc(a) for a >= 0 as a polynomial in s = 4/(2+a) - 1;
    # least-squares Chebyshev fit, relative error below 2e-14
    s = 4.0 / (2.0 + a) - 1.0
    return (0.25539567631050575 + s * (0.4271858474139666 + s * (
        0.24165819424246238 + s * (0.0789785810150215 + s * (
            0.003732892404725471 + s * (-0.006997461721045038 + s * (
                -0.0008471432587138996 + s * (0.0009819768059067995 + s * (
                    4.355569523971603e-05 + s * (-0.0001743596419292178 + s * (
                        2.7524521280235112e-05 + s * (2.757330566956525e-05 + s * (
                            -1.3960083265471902e-05 + s * (-1.372400736837467e-06 + s * (
                                3.7454357292314264e-06 + s * (-1.2363061303623917e-06 + s * (
                                    -4.033587424005644e-07 + s * (5.625151319180881e-07 + s * (
                                        -1.5416708629482652e-07 + s * (
                                            -1.2305885496391065e-07 + s * (
                                                9.217920536630476e-08 + s * (
                                                    1.2052648521160522e-08 + s * (
                                                        -2.2226227713112604e-08 + s * (
                                                            2.035248858177361e-11 + s * (
                                                                2.3048881362867423e-09
                                                            )))))))))))))))))))))))))


@njit(fastmath={"reassoc"})
def _scaled_sum(p, bits):
    # a negative p_j encodes the term 1 - |p_j| * 2**k_j
    scale = bits.view(np.float64)
    acc = 0.0
    for j in range(p.shape[0]):
        acc += p[j] * scale[j] + (1.0 if p[j] < 0.0 else 0.0)
    return acc


@njit(fastmath={"reassoc"})
def _scaled_dot(p, bits, w):
    scale = bits.view(np.float64)
    acc = 0.0
    for j in range(p.shape[0]):
        acc += p[j] * scale[j] * w[j]
    return acc


@njit(error_model="numpy")
def _cdf_terms(psi, q, inv_h, shift, code, p, bits):
    # K(eta_j) = p_j * 2**k_j, or 1 + p_j * 2**k_j when p_j < 0
    n = psi.shape[0]
    if code == 0:
        for j in range(n):
            eta = (q - psi[j]) * inv_h + shift
            pj, bj = _exp_split(max(min(eta, 0.0), _EXP_FLOOR))
            p[j] = pj if eta >= _EXP_FLOOR else 0.0
            bits[j] = bj
    elif code == 1:
        for j in range(n):
            v = max(min((q - psi[j]) * inv_h + shift, 1.0), -1.0)
            p[j] = 0.5 + 0.75 * v - 0.25 * v * v * v
            bits[j] = np.int64(1023) << 52
    else:
        for j in range(n):
            x = -((q - psi[j]) * inv_h + shift) * 0.7071067811865476
            a = abs(x)
            e = -a * a
            pj, bj = _exp_split(max(e, _EXP_FLOOR))
            half = 0.5 * pj * _erfcx_poly(a)
            # far tail: 0 on the upper side; the lower side keeps a tiny
            # nonzero half so the sign still marks the 1 - half form
            p[j] = -half if x < 0.0 else (half if e >= _EXP_FLOOR else 0.0)
            bits[j] = bj


@njit(error_model="numpy")
def _pdf_terms(psi, q, inv_h, shift, code, p, bits):
    # k(eta_j) = p_j * 2**k_j
    n = psi.shape[0]
    if code == 0:
        for j in range(n):
            eta = (q - psi[j]) * inv_h + shift
            pj, bj = _exp_split(max(min(eta, 0.0), _EXP_FLOOR))
            p[j] = pj if _EXP_FLOOR <= eta <= 0.0 else 0.0
            bits[j] = bj
    elif code == 1:
        for j in range(n):
            v = max(min((q - psi[j]) * inv_h + shift, 1.0), -1.0)
            p[j] = 0.75 * (1.0 - v * v)
            bits[j] = np.int64(1023) << 52
    else:
        for j in range(n):
            e = -0.5 * ((q - psi[j]) * inv_h + shift) ** 2
            pj, bj = _exp_split(max(e, _EXP_FLOOR))
            p[j] = 0.3989422804014327 * pj if e >= _EXP_FLOOR else 0.0
            bits[j] = bj


@njit
def _kde_mean_jit(psi, q, h, shift, code):
    n = psi.shape[0]
    p = np.empty(n)
    bits = np.empty(n, np.int64)
    _cdf_terms(psi, q, 1.0 / h, shift, code, p, bits)
    return _scaled_sum(p, bits) / n


@njit
def _kde_pdf_wmean_jit(psi, q, h, shift, code, w):
    n = psi.shape[0]
    p = np.empty(n)
    bits = np.empty(n, np.int64)
    _pdf_terms(psi, q, 1.0 / h, shift, code, p, bits)
    return _scaled_dot(p, bits, w) / n


@njit
def _kde_pdf_mean_jit(psi, q, h, shift, code):
    n = psi.shape[0]
    p = np.empty(n)
    bits = np.empty(n, np.int64)
    _pdf_terms(psi, q, 1.0 / h, shift, code, p, bits)
    return _scaled_sum(p, bits) / n


def _cdf_np(eta, code):
    if code == 0:
        return np.exp(np.minimum(eta, 0.0))
    if code == 1:
        v = np.clip(eta, -1.0, 1.0)
        return 0.5 + v * (0.75 - 0.25 * v * v)
    return ndtr(eta)


def _pdf_np(eta, code):
    if code == 0:
        return np.where(eta <= 0.0, np.exp(np.minimum(eta, 0.0)), 0.0)
    if code == 1:
        v = np.clip(eta, -1.0, 1.0)
        return 0.75 * (1.0 - v * v)
    return _INV_SQRT_2PI * np.exp(-0.5 * eta * eta)


def _kde_mean_np(psi, q, h, shift, code):
    eta = (q - psi) * (1.0 / h) + shift
    return float(np.sum(_cdf_np(eta, code))) / psi.shape[0]


def _kde_pdf_mean_np(psi, q, h, shift, code):
    eta = (q - psi) * (1.0 / h) + shift
    return float(np.sum(_pdf_np(eta, code))) / psi.shape[0]


def _kde_pdf_wmean_np(psi, q, h, shift, code, w):
    eta = (q - psi) * (1.0 / h) + shift
    return float(np.dot(_pdf_np(eta, code), w)) / psi.shape[0]


_kde_mean_impl = _kde_mean_jit if USE_NUMBA else _kde_mean_np
_kde_pdf_mean_impl = _kde_pdf_mean_jit if USE_NUMBA else _kde_pdf_mean_np
_kde_pdf_wmean_impl = _kde_pdf_wmean_jit if USE_NUMBA else _kde_pdf_wmean_np


def _signed_h(kernel: BiasedKernel, sense: str) -> float:
    # "above" evaluates the estimate for (-psi, -q); flipping the sign of h
    # does that without copying the samples
    if sense == "below":
        return kernel.bandwidth
    if sense == "above":
        return -kernel.bandwidth
    raise ValueError(f"sense must be 'below' or 'above', got {sense!r}")


def _samples(psi) -> np.ndarray:
    psi = np.ascontiguousarray(psi, dtype=float).ravel()
    if psi.size == 0:
        raise ValueError("empty sample set")
    return psi


def kde_mean(psi, q: float, kernel: BiasedKernel, sense: str = "below") -> float:
    """Mean of ``K_B((q - psi_j)/h)`` over the samples.

    ``sense="above"`` gives the same quantity for ``(-psi, -q)``.
    """
    psi = _samples(psi)
    return float(_kde_mean_impl(psi, float(q), _signed_h(kernel, sense), kernel.shift,
                                kernel.kind.code))


def kde_pdf_mean(psi, q: float, kernel: BiasedKernel, sense: str = "below") -> float:
    """Mean of ``k_B((q - psi_j)/h)``; divide by ``h`` for ``d/dq`` of :func:`kde_mean`."""
    psi = _samples(psi)
    return float(_kde_pdf_mean_impl(psi, float(q), _signed_h(kernel, sense), kernel.shift,
                                    kernel.kind.code))


def kde_pdf_weighted_mean(psi, q: float, kernel: BiasedKernel, weights,
                          sense: str = "below") -> float:
    """Mean of ``k_B((q - psi_j)/h) * weights_j``."""
    psi = _samples(psi)
    w = np.ascontiguousarray(weights, dtype=float).ravel()
    if w.shape != psi.shape:
        raise ValueError("weights must match the samples in length")
    return float(_kde_pdf_wmean_impl(psi, float(q), _signed_h(kernel, sense), kernel.shift,
                                     kernel.kind.code, w))
