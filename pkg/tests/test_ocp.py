import json

import numpy as np
import pytest

from chanceocp import hmc
from chanceocp.benchmarks import (LunarParams, analytic_deterministic_optimum, lunar_ccocp,
                                  lunar_deterministic, lunar_xi)
from chanceocp.chance import ChanceConstraintSpec
from chanceocp.kernels import BiasedKernel
from chanceocp.lgr import Mesh
from chanceocp.nlp import solve as nlp_solve
from chanceocp.ocp import (BandwidthMode, OcpDefinition, SolveConfig, auto_bandwidths,
                           initial_guess, interval_errors, refine_mesh, solve_ccocp)
from chanceocp.transcription import Layout, transcribe


def layout(ocp, mesh):
    return Layout(ocp.n_states, ocp.n_controls, mesh.n_nodes, mesh.n_colloc)


def test_lunar_initial_guess():
    ocp, mesh = lunar_deterministic(), Mesh.uniform(10, 4)
    Y, U, t0, tf = layout(ocp, mesh).unpack(initial_guess(ocp, mesh))
    s = 0.5 * (mesh.node_tau() + 1.0)
    assert np.allclose(Y[:, 0], 10.0 * (1 - s))
    assert np.allclose(Y[:, 1], -2.0 * (1 - s))
    assert np.all(U == 0.0)
    assert t0 == 0.0 and tf == 5.0


def test_free_state_guess_is_bound_midpoint_and_fixed_time_kept():
    ocp = OcpDefinition(n_states=1, n_controls=1, dynamics=lambda Y, U, t: U,
                        terminal_cost=lambda *a: 0.0, state_lower=-2.0, state_upper=4.0,
                        t0_bounds=(1.0, 1.0), tf_bounds=(3.0, 3.0))
    mesh = Mesh.uniform(2, 3)
    Y, U, t0, tf = layout(ocp, mesh).unpack(initial_guess(ocp, mesh))
    assert np.all(Y == 1.0)
    assert (t0, tf) == (1.0, 3.0)
    nlp = transcribe(ocp, mesh)
    assert nlp.lb[nlp.layout.i_t0] == nlp.ub[nlp.layout.i_t0] == 1.0
    assert nlp.lb[nlp.layout.i_tf] == nlp.ub[nlp.layout.i_tf] == 3.0


def growth():
    return OcpDefinition(n_states=1, n_controls=0, dynamics=lambda Y, U, t: Y,
                         terminal_cost=lambda *a: 0.0, initial_lower=1.0, initial_upper=1.0,
                         tf_bounds=(2.0, 2.0), tf_guess=2.0)


def test_exact_polynomial_solution_needs_no_refinement():
    ocp = OcpDefinition(n_states=1, n_controls=0, dynamics=lambda Y, U, t: 3 * t[:, None] ** 2,
                        terminal_cost=lambda *a: 0.0, tf_bounds=(1.0, 1.0))
    mesh = Mesh.uniform(2, 4)
    nlp = transcribe(ocp, mesh)
    t = 0.5 * (mesh.node_tau() + 1.0)
    x = nlp.layout.pack(t[:, None] ** 3, np.zeros((mesh.n_colloc, 0)), 0.0, 1.0)
    ref = refine_mesh(nlp.trajectory(x), ocp, mesh, 1e-10)
    assert ref.done and ref.mesh == mesh
    assert np.max(ref.errors) < 1e-13


def test_refinement_drives_residual_down():
    ocp, mesh = growth(), Mesh((-1.0, 1.0), (3,))
    x0 = initial_guess(ocp, mesh)
    errs, true_errs = [], []
    for _ in range(4):
        nlp = transcribe(ocp, mesh)
        sol = nlp_solve(nlp.problem(x0), tol=1e-12)
        traj = nlp.trajectory(sol.x)
        ref = refine_mesh(traj, ocp, mesh, 1e-9)
        errs.append(np.max(ref.errors))
        t = np.linspace(0, 2, 41)
        true_errs.append(np.max(np.abs(traj.state(t)[:, 0] - np.exp(t))))
        if ref.done:
            break
        assert ref.mesh.n_colloc > mesh.n_colloc
        mesh = ref.mesh
        x0 = initial_guess(ocp, mesh)
    assert len(errs) >= 2
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert all(b < a for a, b in zip(true_errs, true_errs[1:]))


def test_switch_interval_is_bisected_at_degree_cap():
    sol = solve_ccocp(lunar_deterministic(), SolveConfig(max_degree=6))
    assert sol.converged
    oracle = analytic_deterministic_optimum()
    tau_switch = 2 * oracle["t1"] / oracle["tf"] - 1
    b = np.asarray(sol.mesh.boundaries)
    k = int(np.searchsorted(b, tau_switch) - 1)
    assert sol.mesh.n_intervals > 10
    assert b[k + 1] - b[k] < 0.2
    assert max(sol.mesh.degrees) <= 6


@pytest.fixture(scope="module")
def det_solution():
    return solve_ccocp(lunar_deterministic())


def test_deterministic_lunar(det_solution):
    assert det_solution.converged
    assert det_solution.objective == pytest.approx(8.9069, abs=1e-3)
    assert det_solution.phases[0].name
    errs = interval_errors(det_solution.trajectory, lunar_deterministic(), det_solution.mesh)
    assert np.max(errs) <= 1e-6


def test_metadata_json(det_solution):
    meta = json.loads(det_solution.to_json())
    assert meta["objective"] == det_solution.objective
    assert set(meta["timings"]) >= {"sampling", "transcription", "solve", "refinement", "total"}
    assert meta["status"] == "Converged"
    assert Mesh.from_dict(meta["mesh"]) == det_solution.mesh


def test_trivially_satisfied_chance_constraint(det_solution):
    far = ChanceConstraintSpec("far", lambda y, u, t, xi: u[0] + xi[:, 1] - 100.0, 0.01,
                               sense="above", xi_index=1, depends_on=("u0",))
    base = lunar_deterministic()
    ocp = OcpDefinition(**{**vars(base), "chance": (far,), "uncertainty": lunar_xi(),
                           "name": "lunar-far"})
    cfg = SolveConfig(kernel="epanechnikov", bandwidth_mode="fixed", bandwidth=0.01,
                      hmc=hmc.HmcConfig(n_samples=2000, seed=1))
    sol = solve_ccocp(ocp, cfg)
    assert sol.converged
    assert sol.objective == pytest.approx(det_solution.objective, abs=1e-6)


def test_solve_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(bandwidth_mode="fixed")
    with pytest.raises(ValueError):
        SolveConfig(growth=1.0)
    with pytest.raises(ValueError):
        SolveConfig(mesh_tol=0.0)
    with pytest.raises(ValueError):
        SolveConfig(kernel="box")
    assert SolveConfig(seed=7).effective_seed == 7
    cfg = SolveConfig()
    assert cfg.mesh == Mesh.uniform(10, 4) and cfg.mesh_tol == 1e-6
    assert cfg.nlp_tol == 1e-6 and cfg.nlp_max_iter == 500


def test_auto_bandwidths_use_named_columns():
    xi = hmc.sample(lunar_xi(), hmc.HmcConfig(n_samples=50_000, seed=0))
    hs = auto_bandwidths(lunar_ccocp(), xi)
    # the distributions set h near 0.008 (path) and 0.01 (event) at this sample size
    assert 0.004 < hs["thrust"] < 0.012
    assert 0.007 < hs["final-position"] < 0.013


@pytest.mark.slow
def test_scheduled_matches_cold_start_and_exceeds_deterministic(det_solution):
    base = dict(kernel="split-bernstein", hmc=hmc.HmcConfig(n_samples=20_000), seed=3)
    warm = solve_ccocp(lunar_ccocp(), SolveConfig(**base))
    cold = solve_ccocp(lunar_ccocp(), SolveConfig(bandwidth_mode=BandwidthMode.AUTO, **base))
    assert warm.converged and cold.converged
    assert warm.bandwidths == cold.bandwidths
    assert warm.objective == pytest.approx(cold.objective, abs=1e-3)
    assert warm.objective > det_solution.objective
    assert cold.objective > det_solution.objective
    assert len(warm.phases) >= 2
