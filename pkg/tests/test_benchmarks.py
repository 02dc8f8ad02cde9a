import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from chanceocp import hmc
from chanceocp.benchmarks import (BatchError, LunarParams, RunRecord, _check, aggregate,
                                  analytic_deterministic_optimum, batch_table_csv,
                                  lunar_ccocp, lunar_deterministic, lunar_xi,
                                  monte_carlo_validate, read_batch_table_csv, run_batch)
from chanceocp.kernels import BiasedKernel
from chanceocp.lgr import Mesh
from chanceocp.ocp import initial_guess, solve_ccocp
from chanceocp.prob_model import component_cdf
from chanceocp.transcription import transcribe


def simulated_optimum(p=LunarParams()):
    """Coast then burn, found by integrating the ODE and shooting on the switch time."""

    def land(t1):
        coast = solve_ivp(lambda t, y: [y[1], -p.g], (0, t1), [p.y1_0, p.y2_0], rtol=1e-12, atol=1e-12)
        y = coast.y[:, -1]
        stop = lambda t, y: y[1] - p.y2_f
        stop.terminal = True
        burn = solve_ivp(lambda t, y: [y[1], p.u_max - p.g], (0, 50), y, events=stop,
                         rtol=1e-12, atol=1e-12)
        return burn.y_events[0][0][0], burn.t_events[0][0]

    t1 = brentq(lambda s: land(s)[0], 0.0, 3.0, xtol=1e-13)
    t2 = land(t1)[1]
    return t1, t2


def test_analytic_oracle_matches_simulation():
    o = analytic_deterministic_optimum()
    t1, t2 = simulated_optimum()
    assert o["t1"] == pytest.approx(t1, abs=1e-8)
    assert o["t2"] == pytest.approx(t2, abs=1e-8)
    assert o["cost"] == pytest.approx(3 * t2, abs=1e-8)
    assert o["t1"] == pytest.approx(1.289, abs=1e-3)
    assert o["t2"] == pytest.approx(2.969, abs=1e-3)


@pytest.fixture(scope="module")
def det():
    return solve_ccocp(lunar_deterministic())


def test_deterministic_cost_and_bang_bang(det):
    o = analytic_deterministic_optimum()
    assert det.converged
    assert det.objective == pytest.approx(o["cost"], abs=1e-3)
    assert det.objective == pytest.approx(8.9069, abs=1e-3)
    assert det.trajectory.tf == pytest.approx(o["tf"], abs=1e-2)
    t = det.trajectory.colloc_times
    u = det.trajectory.U[:, 0]
    away = np.abs(t - o["t1"]) > 0.1
    assert np.all(np.abs(u[away & (t < o["t1"])]) < 1e-3)
    assert np.all(np.abs(u[away & (t > o["t1"])] - 3.0) < 1e-3)


def test_problem_definitions():
    cc, d = lunar_ccocp(), lunar_deterministic()
    assert {c.name: c.kind for c in cc.chance} == {"thrust": "path", "final-position": "event"}
    assert d.chance == () and d.final_lower[0] == d.final_upper[0] == 0.0
    assert cc.control_lower[0] == 0.0 and math.isinf(cc.control_upper[0])
    ev = next(c for c in cc.chance if c.kind == "event")
    xi = np.array([[0.1, 0.0], [0.5, 0.0]])
    assert np.allclose(ev.function(None, 0.0, np.array([0.2, 0.0]), 4.0, xi), [0.1 - 0.25, 0.3 - 0.25])
    path = next(c for c in cc.chance if c.kind == "path")
    assert path.guard.inactive(None, [2.0], 0.0)
    assert not path.guard.inactive(None, [2.0001], 0.0)


def test_dynamics_sign():
    f = lunar_ccocp().dynamics
    out = f(np.array([[10.0, -2.0]]), np.array([[0.0]]), np.zeros(1))
    assert np.allclose(out, [[-2.0, -1.622]])


def test_zero_thrust_gives_zero_path_surrogate():
    xi = hmc.sample(lunar_xi(), hmc.HmcConfig(n_samples=1000, seed=0))
    mesh = Mesh.uniform(4, 4)
    nlp = transcribe(lunar_ccocp(), mesh, xi, BiasedKernel("gaussian", 0.01))
    x = initial_guess(lunar_ccocp(), mesh)
    assert np.all(nlp.chance_values(x)["thrust"] == 0.0)


def test_deterministic_solution_is_not_chance_feasible(det):
    rep = monte_carlo_validate(det, lunar_ccocp(), n_mc=100_000, seed=99)
    thrust = next(c for c in rep.checks if c.name == "thrust")
    p = 1.0 - float(component_cdf(lunar_xi().components[1], 0.0))
    se = math.sqrt(p * (1 - p) / rep.n_mc)
    # the worst point sits on the u = 3 arc, where the violation is xi2 >= 0
    assert abs(thrust.frequency - p) < 4 * se
    assert not thrust.passed and not rep.passed
    assert rep.to_dict()["passed"] is False


def test_unit_risk_never_fails():
    assert _check("vacuous", 1.0, 1.0, 1000).passed
    assert not _check("tight", 0.1, 0.2, 10_000).passed


def rec(seed, cost, ok=True, h=0.01):
    return RunRecord(seed=seed, kernel="epanechnikov", status="Converged" if ok else "IterationLimit",
                     objective=cost, time=1.0 + seed, final_position=0.11, tf=4.3,
                     bandwidths={"thrust": h, "final-position": 2 * h})


def test_aggregate_excludes_failures_and_roundtrips():
    runs = [rec(0, 9.09), rec(1, 9.10, h=0.011), rec(2, 50.0, ok=False), rec(3, 9.08, h=0.009)]
    st = aggregate("epanechnikov", runs)
    assert st.n_runs == 4 and st.n_converged == 3 and st.excluded_seeds == [2]
    assert st.mean_cost == pytest.approx(9.09)
    assert st.std_cost == pytest.approx(0.01)
    assert st.max_time == 4.0 and st.min_time == 1.0
    back = read_batch_table_csv(batch_table_csv([st]))["epanechnikov"]
    assert back["mu_J"] == st.mean_cost and back["sigma_J"] == st.std_cost
    assert back["n_converged"] == 3 and back["degenerate"] is False
    assert back["mean_final_position"] == pytest.approx(0.11)


def test_single_run_is_degenerate():
    st = aggregate("gaussian", [rec(0, 9.1)])
    assert st.std_cost == 0.0 and st.degenerate
    assert read_batch_table_csv(batch_table_csv([st]))["gaussian"]["degenerate"] is True


def test_all_failed_batch_raises():
    with pytest.raises(BatchError):
        aggregate("gaussian", [rec(0, 1.0, ok=False)])


def test_run_batch_reuses_completed_records():
    done = {s: rec(s, 9.09 + 0.001 * s) for s in range(3)}
    st = run_batch("epanechnikov", n_runs=3, completed=done)
    assert [r.seed for r in st.runs] == [0, 1, 2]
    assert st.mean_cost == pytest.approx(9.091)
    with pytest.raises(ValueError):
        run_batch("epanechnikov", n_runs=0)
