"""Legendre-Gauss-Radau points, weights, differentiation and meshes."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as leg

__all__ = [
    "LgrRule",
    "Mesh",
    "lgr_rule",
    "differentiation_matrix",
    "integration_matrix",
    "barycentric_weights",
    "interpolation_matrix",
]

MAX_DEGREE = 64


@dataclass(frozen=True)
class LgrRule:
    """LGR rule of degree ``N``.

    ``points`` are the ``N`` collocation points in ``[-1, 1)``; ``nodes``
    appends the noncollocated ``+1``. ``D`` is ``N x (N+1)`` with
    ``D[i, j] = l_j'(points[i])`` for the Lagrange basis on ``nodes``.
    """

    degree: int
    points: np.ndarray
    weights: np.ndarray
    nodes: np.ndarray
    D: np.ndarray


def _radau_poly(n):
    c = np.zeros(n + 1)
    c[n - 1] = 1.0
    c[n] = 1.0
    return c


@lru_cache(maxsize=None)
def _rule(n: int) -> LgrRule:
    c = _radau_poly(n)
    roots = np.sort(leg.legroots(c).real)
    dc = leg.legder(c)
    # Polish the free roots with Newton on P_{n-1} + P_n.
    for _ in range(8):
        step = leg.legval(roots[1:], c) / leg.legval(roots[1:], dc)
        roots[1:] -= step
        if np.max(np.abs(step)) < 1e-16:
            break
    roots[0] = -1.0
    roots = np.sort(roots)

    pn1 = np.zeros(n)
    pn1[n - 1] = 1.0
    weights = np.empty(n)
    weights[0] = 2.0 / n**2
    weights[1:] = (1.0 - roots[1:]) / (n * leg.legval(roots[1:], pn1)) ** 2

    nodes = np.append(roots, 1.0)
    D = _diff_matrix(nodes)[:n]
    for arr in (roots, weights, nodes, D):
        arr.setflags(write=False)
    return LgrRule(n, roots, weights, nodes, D)


def lgr_rule(n: int) -> LgrRule:
    """Return the cached LGR rule with ``n`` collocation points, ``2 <= n <= 64``."""
    if int(n) != n or not 2 <= n <= MAX_DEGREE:
        raise ValueError(f"LGR degree must be an integer in [2, {MAX_DEGREE}], got {n}")
    return _rule(int(n))


def barycentric_weights(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def _diff_matrix(x):
    b = barycentric_weights(x)
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    D = (b[None, :] / b[:, None]) / diff
    np.fill_diagonal(D, 0.0)
    np.fill_diagonal(D, -D.sum(axis=1))
    return D


def differentiation_matrix(rule: LgrRule) -> np.ndarray:
    return rule.D


def integration_matrix(rule: LgrRule) -> np.ndarray:
    """``A`` with ``Y[1:] - Y[0] = A @ F`` whenever ``D @ Y = F``."""
    return np.linalg.inv(rule.D[:, 1:])


def interpolation_matrix(nodes, x) -> np.ndarray:
    """Rows evaluate the Lagrange interpolant through ``nodes`` at ``x``."""
    nodes = np.asarray(nodes, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    b = barycentric_weights(nodes)
    diff = x[:, None] - nodes[None, :]
    # Points within a few ulps of a node (time mapping round-off) snap to it.
    exact = np.abs(diff) <= 8.0 * np.finfo(float).eps
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = b[None, :] / diff
        M = terms / terms.sum(axis=1, keepdims=True)
    hit = exact.any(axis=1)
    if hit.any():
        first = np.argmax(exact[hit], axis=1)
        M[hit] = 0.0
        M[np.flatnonzero(hit), first] = 1.0
    return M


@dataclass(frozen=True)
class Mesh:
    """Intervals ``[T_{k-1}, T_k]`` of ``[-1, 1]`` with per-interval degrees."""

    boundaries: tuple[float, ...]
    degrees: tuple[int, ...]

    def __post_init__(self):
        b = tuple(float(v) for v in self.boundaries)
        d = tuple(int(v) for v in self.degrees)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "degrees", d)
        if len(b) != len(d) + 1 or not d:
            raise ValueError("need K+1 boundaries for K degrees, K >= 1")
        if abs(b[0] + 1.0) > 1e-14 or abs(b[-1] - 1.0) > 1e-14:
            raise ValueError("mesh must span [-1, 1]")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ValueError("mesh boundaries must be strictly increasing")
        if any(not 2 <= n <= MAX_DEGREE for n in d):
            raise ValueError(f"interval degrees must lie in [2, {MAX_DEGREE}]")

    @classmethod
    def uniform(cls, n_intervals: int = 10, degree: int = 4) -> "Mesh":
        edges = np.linspace(-1.0, 1.0, n_intervals + 1)
        return cls(tuple(edges), (degree,) * n_intervals)

    @property
    def n_intervals(self) -> int:
        return len(self.degrees)

    @property
    def n_colloc(self) -> int:
        return sum(self.degrees)

    @property
    def n_nodes(self) -> int:
        return self.n_colloc + 1

    def half_widths(self) -> np.ndarray:
        b = np.asarray(self.boundaries)
        return 0.5 * np.diff(b)

    def node_offsets(self) -> np.ndarray:
        """Global index of the first node of each interval."""
        return np.concatenate([[0], np.cumsum(self.degrees)[:-1]]).astype(int)

    def colloc_tau(self) -> np.ndarray:
        out = []
        for lo, hw, n in zip(self.boundaries[:-1], self.half_widths(), self.degrees):
            out.append(lo + (lgr_rule(n).points + 1.0) * hw)
        return np.concatenate(out)

    def node_tau(self) -> np.ndarray:
        return np.append(self.colloc_tau(), 1.0)

    def colloc_weights(self) -> np.ndarray:
        """Quadrature weights on ``[-1, 1]`` for the global collocation points."""
        return np.concatenate([lgr_rule(n).weights * hw
                               for n, hw in zip(self.degrees, self.half_widths())])

    def interval_of_colloc(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_intervals), self.degrees)

    def locate(self, tau) -> np.ndarray:
        """Interval index containing each ``tau`` (right end belongs to the last interval)."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        k = np.searchsorted(np.asarray(self.boundaries), tau, side="right") - 1
        return np.clip(k, 0, self.n_intervals - 1)

    def to_dict(self) -> dict:
        return {"boundaries": list(self.boundaries), "degrees": list(self.degrees)}

    @classmethod
    def from_dict(cls, data: dict) -> "Mesh":
        return cls(tuple(data["boundaries"]), tuple(data["degrees"]))
