import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chanceocp.chance import kde_violation_estimate
from chanceocp.kernels import BiasedKernel
from chanceocp.nlp import (FiniteDifferenceError, NlpProblem, Status, fd_gradient, fd_jacobian,
                           fd_step, read_history_csv, solve)


def test_fd_examples():
    assert fd_gradient(lambda x: x[0] ** 2, [3.0])[0] == pytest.approx(6.0, abs=1e-7)
    assert fd_gradient(lambda x: math.sin(x[0]), [0.0])[0] == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(fd_step([0.0, -2.0]), np.cbrt(np.finfo(float).eps) * np.array([1.0, 3.0]))


def test_fd_jacobian_linear_map(rng):
    A = rng.normal(size=(3, 4))
    assert np.allclose(fd_jacobian(lambda x: A @ x, rng.normal(size=4)), A, atol=1e-9)


def test_fd_gaussian_kde_slope_matches_chain_rule(rng):
    psi = rng.normal(0, 0.1, 20_000)
    bk = BiasedKernel("gaussian", 0.01)
    for q in (-0.05, 0.0, 0.12):
        num = fd_gradient(lambda v: kde_violation_estimate(psi, v[0], bk), [q])[0]
        eta = (q - psi) / bk.bandwidth + bk.shift
        exact = np.mean(np.exp(-0.5 * eta**2) / math.sqrt(2 * math.pi)) / bk.bandwidth
        assert num == pytest.approx(exact, abs=1e-5)


def test_fd_reports_bad_coordinate():
    f = lambda x: x[0] + (np.nan if x[1] < 0 else x[1])
    with pytest.raises(FiniteDifferenceError) as info:
        fd_gradient(f, [1.0, 0.0])
    assert info.value.index == 1


def test_bound_constrained_quadratic():
    sol = solve(NlpProblem(x0=[3.0], objective=lambda x: x[0] ** 2, lb=[1.0]))
    assert sol.status is Status.CONVERGED
    assert sol.x[0] == pytest.approx(1.0, abs=1e-8)
    assert sol.objective == pytest.approx(1.0, abs=1e-8)


def rosen(x):
    return (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2


def rosen_grad(x):
    return np.array([-2 * (1 - x[0]) - 400 * x[0] * (x[1] - x[0] ** 2), 200 * (x[1] - x[0] ** 2)])


def test_rosenbrock():
    sol = solve(NlpProblem(x0=[-1.2, 1.0], objective=rosen, gradient=rosen_grad), tol=1e-10)
    assert sol.converged
    assert np.allclose(sol.x, [1.0, 1.0], atol=1e-6)


def test_rosenbrock_with_fd_gradients():
    sol = solve(NlpProblem(x0=[-1.2, 1.0], objective=rosen))
    assert np.allclose(sol.x, [1.0, 1.0], atol=1e-4)


def test_disk_problem():
    p = NlpProblem(x0=[0.0, 0.0], objective=lambda x: -x[0] - x[1],
                   constraints=lambda x: [x[0] ** 2 + x[1] ** 2], cl=[-np.inf], cu=[1.0])
    sol = solve(p, tol=1e-9)
    assert sol.converged
    assert np.allclose(sol.x, [math.sqrt(0.5)] * 2, atol=1e-6)
    assert sol.objective == pytest.approx(-math.sqrt(2), abs=1e-6)
    assert sol.kkt_residual <= 1e-9 and sol.violation <= 1e-9


@settings(max_examples=25)
@given(st.integers(2, 6), st.integers(1, 3), st.integers(0, 10_000))
def test_equality_qp_to_kkt_tolerance(n, m, seed):
    m = min(m, n - 1)
    r = np.random.default_rng(seed)
    L = r.normal(size=(n, n))
    H = L @ L.T + n * np.eye(n)
    g = r.normal(size=n)
    A = r.normal(size=(m, n))
    x0 = r.normal(size=n)
    b = A @ x0  # feasible seed
    p = NlpProblem(x0=x0, objective=lambda x: 0.5 * x @ H @ x + g @ x, gradient=lambda x: H @ x + g,
                   constraints=lambda x: A @ x, cl=b, cu=b, jacobian=lambda x: A)
    sol = solve(p, tol=1e-8)
    K = np.block([[H, A.T], [A, np.zeros((m, m))]])
    exact = np.linalg.solve(K, np.concatenate([-g, b]))[:n]
    assert sol.converged and sol.kkt_residual <= 1e-8
    assert np.allclose(sol.x, exact, atol=1e-6)


def constrained():
    return NlpProblem(x0=[2.0, 0.5, -1.0],
                      objective=lambda x: (x[0] - 1) ** 4 + (x[1] - 2) ** 2 + x[0] * x[2] + x[2] ** 2,
                      constraints=lambda x: [x[0] + x[1] + x[2], x[0] ** 2 - x[1]],
                      cl=[1.0, -np.inf], cu=[1.0, 0.5], lb=[-5, -5, -5], ub=[5, 5, 5])


def test_determinism_of_iterates():
    a, b = solve(constrained()), solve(constrained())
    assert a.x.tobytes() == b.x.tobytes()
    assert a.history_csv() == b.history_csv()


def test_merit_decreases_on_accepted_steps():
    sol = solve(constrained())
    steps = [r for r in sol.history if r.phase == "sqp"]
    assert steps
    for r in steps:
        assert r.merit <= r.merit_before + 1e-12 * max(1.0, abs(r.merit_before))


def test_history_csv_roundtrip_and_log_stream():
    buf = io.StringIO()
    sol = solve(constrained(), log=buf)
    back = read_history_csv(sol.history_csv())
    assert len(back) == len(sol.history)
    for a, b in zip(back, sol.history):
        assert a.iteration == b.iteration and a.phase == b.phase
        assert (a.merit == b.merit) or (math.isnan(a.merit) and math.isnan(b.merit))
    assert buf.getvalue().splitlines()[0].startswith("iteration,phase")
    with pytest.raises(ValueError):
        read_history_csv("a,b\n1,2\n")


def test_infeasible_problem_reports_status():
    p = NlpProblem(x0=[0.0], objective=lambda x: x[0] ** 2,
                   constraints=lambda x: [x[0], x[0]], cl=[1.0, -np.inf], cu=[np.inf, -1.0])
    sol = solve(p, max_iter=50)
    assert not sol.converged
    assert sol.status in (Status.INFEASIBLE, Status.ITERATION_LIMIT, Status.NUMERICAL_FAILURE)


def test_iteration_limit_status():
    sol = solve(NlpProblem(x0=[-1.2, 1.0], objective=rosen, gradient=rosen_grad), max_iter=3)
    assert sol.status is Status.ITERATION_LIMIT and sol.iterations <= 3


def test_problem_validation():
    with pytest.raises(ValueError):
        NlpProblem(x0=[0.0], objective=rosen, lb=[1.0], ub=[0.0])
    with pytest.raises(ValueError):
        NlpProblem(x0=[np.nan], objective=rosen)
    with pytest.raises(ValueError):
        solve(NlpProblem(x0=[0.0], objective=lambda x: x[0] ** 2), tol=0.0)
