import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from chanceocp import hmc
from chanceocp.benchmarks import lunar_ccocp, lunar_xi
from chanceocp.chance import (ChanceConstraintSpec, Guard, allocate_risk, empirical_violation,
                              guarded_violation_estimate, kde_violation_estimate,
                              kde_violation_slope, split_bernstein_estimate)
from chanceocp.kernels import BiasedKernel, KernelKind, bandwidth_select
from chanceocp.prob_model import RandomVectorSpec, normal

SB, EPA, GAU = KernelKind.SPLIT_BERNSTEIN, KernelKind.EPANECHNIKOV, KernelKind.GAUSSIAN

samples = st.lists(st.floats(-5, 5), min_size=1, max_size=60)


def test_allocate_risk_examples():
    assert allocate_risk(0.1, 1).components == (0.1,)
    assert allocate_risk(0.1, 2).components == (0.05, 0.05)
    with pytest.raises(ValueError):
        allocate_risk(0.1, 0)


@given(st.floats(1e-6, 0.999), st.integers(1, 50))
def test_allocation_never_exceeds_budget(eps, n):
    alloc = allocate_risk(eps, n)
    assert math.fsum(alloc.components) <= eps
    assert all(e > 0 for e in alloc.components)


def test_far_samples_give_zero_and_one():
    for kind in (SB, EPA, GAU):
        bk = BiasedKernel(kind, 0.01)
        assert kde_violation_estimate(np.full(10, 5.0), 0.0, bk) == pytest.approx(0.0, abs=1e-9)
        assert kde_violation_estimate(np.full(10, -5.0), 0.0, bk) == pytest.approx(1.0, abs=1e-9)


def test_hand_values():
    psi = np.array([-1.0, 1.0])
    assert kde_violation_estimate(psi, 0.0, BiasedKernel(SB, 0.5)) == pytest.approx(
        (1 + math.exp(-2)) / 2, abs=1e-15)
    assert kde_violation_estimate(psi, 0.0, BiasedKernel(SB, 0.5)) == pytest.approx(0.56767, abs=1e-5)
    val = split_bernstein_estimate(psi, 0.0, 0.1, 2.0)
    assert val == pytest.approx((math.exp(0.1) + math.exp(-2)) / 2, abs=1e-15)
    assert val == pytest.approx(0.62025, abs=1e-5)


def test_split_bernstein_identity_exact(rng):
    for _ in range(1000):
        psi = rng.normal(rng.uniform(-1, 1), rng.uniform(0.1, 2), rng.integers(1, 200))
        q, h = rng.uniform(-1, 1), rng.uniform(0.01, 1)
        a = split_bernstein_estimate(psi, q, 0.0, 1.0 / h)
        b = kde_violation_estimate(psi, q, BiasedKernel(SB, h, 0.0))
        assert abs(a - b) <= 1e-12


@given(samples, st.floats(-5, 5), st.floats(0.01, 3), st.floats(0.01, 2))
def test_positive_alpha_plus_dominates(psi, q, ap, am):
    assert split_bernstein_estimate(psi, q, ap, am) >= split_bernstein_estimate(psi, q, 0.0, am)


@given(samples, st.floats(-5, 5), st.floats(1e-3, 2), st.sampled_from([SB, EPA, GAU]))
def test_estimate_in_unit_interval(psi, q, h, kind):
    v = kde_violation_estimate(psi, q, BiasedKernel(kind, h))
    assert 0.0 <= v <= 1.0


@given(samples, st.floats(-5, 5), st.floats(1e-3, 2), st.sampled_from([SB, EPA]))
def test_conservative_against_empirical(psi, q, h, kind):
    v = kde_violation_estimate(psi, q, BiasedKernel(kind, h))
    assert v >= empirical_violation(psi, q) - 1e-15


@given(samples, st.floats(-5, 5), st.floats(1e-3, 2), st.floats(0, 3),
       st.sampled_from([SB, EPA, GAU]))
def test_shifting_samples_up_never_increases(psi, q, h, c, kind):
    bk = BiasedKernel(kind, h)
    psi = np.asarray(psi)
    assert kde_violation_estimate(psi + c, q, bk) <= kde_violation_estimate(psi, q, bk) + 1e-15


def test_small_bandwidth_limit(rng):
    psi = rng.normal(size=400)
    q = 0.1
    psi = psi[np.abs(psi - q) > 0.05]
    emp = empirical_violation(psi, q)
    for kind in (SB, EPA, GAU):
        errs = [abs(kde_violation_estimate(psi, q, BiasedKernel(kind, h)) - emp)
                for h in (1e-1, 1e-2, 1e-3)]
        assert errs[0] >= errs[1] >= errs[2]
        assert errs[2] < 1e-9


def test_slope_matches_finite_difference(rng):
    psi = rng.normal(size=3000)
    for kind in (SB, EPA, GAU):
        bk = BiasedKernel(kind, 0.2)
        d = 1e-6
        num = (kde_violation_estimate(psi, 0.3 + d, bk) - kde_violation_estimate(psi, 0.3 - d, bk)) / (2 * d)
        assert kde_violation_slope(psi, 0.3, bk) == pytest.approx(num, rel=1e-6)


def test_ties_count_as_violations():
    assert empirical_violation([0.0, 1.0], 0.0) == 0.5
    assert empirical_violation([0.0, -1.0], 0.0, sense="above") == 0.5


def test_spec_validation():
    f = lambda y, u, t, xi: xi[:, 0]
    with pytest.raises(ValueError):
        ChanceConstraintSpec("c", f, 0.0)
    with pytest.raises(ValueError):
        ChanceConstraintSpec("c", f, 1.0)
    with pytest.raises(ValueError):
        ChanceConstraintSpec("c", f, 0.1, kind="event", guard=Guard(f, 1.0, 0.5))


def _thrust():
    return next(c for c in lunar_ccocp().chance if c.name == "thrust")


def _xi(n=20_000, seed=3):
    return hmc.sample(lunar_xi(), hmc.HmcConfig(n_samples=n, seed=seed))


def test_guard_short_circuits_without_evaluation():
    spec = _thrust()
    calls = []

    def counting(y, u, t, xi):
        calls.append(1)
        return spec.function(y, u, t, xi)

    guarded = ChanceConstraintSpec("t", counting, 0.01, sense="above", guard=spec.guard)
    bk = BiasedKernel(SB, 0.01)
    assert guarded_violation_estimate(guarded, ([0, 0], [1.5], 0.0), _xi(1000), bk) == 0.0
    assert calls == []


def test_guard_active_branch_matches_unguarded():
    spec = _thrust()
    xi = _xi()
    bk = BiasedKernel(EPA, 0.01)
    y, u, t = np.zeros(2), np.array([2.5]), 0.0
    plain = kde_violation_estimate(-spec.function(y, u, t, xi.draws), 0.0, bk)
    assert guarded_violation_estimate(spec, (y, u, t), xi, bk) == pytest.approx(plain, abs=1e-15)


def test_guard_switch_point_is_continuous():
    spec = _thrust()
    xi = _xi()
    y, u, t = np.zeros(2), np.array([2.0]), 0.0
    for kind in (SB, EPA, GAU):
        bk = BiasedKernel(kind, 0.02)
        assert guarded_violation_estimate(spec, (y, u, t), xi, bk) == 0.0
        assert kde_violation_estimate(-spec.function(y, u, t, xi.draws), 0.0, bk) <= 1e-6


def test_statistical_upper_bound_normal():
    # One long chain per kind of check; 100 seeded trials of N = 50,000.
    spec = RandomVectorSpec((normal(0.0, 1.0),))
    q = norm.ppf(0.05)
    hits = {SB: 0, EPA: 0}
    for seed in range(100):
        y = hmc.sample(spec, hmc.HmcConfig(n_samples=50_000, seed=seed)).draws[:, 0]
        h = bandwidth_select(y)
        for kind in hits:
            hits[kind] += kde_violation_estimate(y, q, BiasedKernel(kind, h)) >= 0.05
    assert hits[SB] >= 95 and hits[EPA] >= 95
