import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.polynomial import legendre as leg

from chanceocp import hmc
from chanceocp.benchmarks import lunar_ccocp, lunar_xi
from chanceocp.kernels import BiasedKernel
from chanceocp.lgr import (Mesh, differentiation_matrix, integration_matrix,
                           interpolation_matrix, lgr_rule)
from chanceocp.ocp import OcpDefinition
from chanceocp.transcription import TranscriptionError, global_diff_matrix, transcribe


def growth(tf=1.0):
    return OcpDefinition(n_states=1, n_controls=0, dynamics=lambda Y, U, t: Y,
                         terminal_cost=lambda y0, t0, yf, tf: 0.0,
                         initial_lower=1.0, initial_upper=1.0, tf_bounds=(tf, tf), tf_guess=tf)


def exact_x(nlp, tf=1.0):
    lay = nlp.layout
    t = 0.5 * tf * (nlp.mesh.node_tau() + 1.0)
    return lay.pack(np.exp(t)[:, None], np.zeros((lay.n_colloc, 0)), 0.0, tf)


def test_two_point_rule():
    r = lgr_rule(2)
    assert np.allclose(r.points, [-1.0, 1.0 / 3.0], atol=1e-12, rtol=0)
    assert np.allclose(r.weights, [0.5, 1.5], atol=1e-12, rtol=0)
    assert r.nodes[-1] == 1.0 and r.D.shape == (2, 3)


@pytest.mark.parametrize("n", range(2, 17))
def test_rule_invariants(n):
    r = lgr_rule(n)
    assert r.points[0] == -1.0
    assert np.all(np.diff(r.points) > 0)
    assert abs(r.weights.sum() - 2.0) <= 1e-12
    # free points are roots of P_{n-1} + P_n
    c = np.zeros(n + 1)
    c[n - 1:] = 1.0
    assert np.max(np.abs(leg.legval(r.points[1:], c))) < 1e-12
    for p in range(2 * n - 1):
        exact = (1 - (-1) ** (p + 1)) / (p + 1)
        assert abs(r.weights @ r.points**p - exact) <= 1e-12
    D = differentiation_matrix(r)
    assert np.max(np.abs(D @ np.ones(n + 1))) <= 1e-12
    for p in range(1, n + 1):
        err = np.max(np.abs(D @ r.nodes**p - p * r.points ** (p - 1)))
        assert err <= 1e-10


def test_quadrature_not_exact_beyond_2n_minus_2():
    r = lgr_rule(5)
    assert r.weights @ r.points**8 == pytest.approx(2 / 9, abs=1e-12)
    assert abs(r.weights @ r.points**10 - 2 / 11) > 1e-6


def test_linear_and_quintic_differentiation():
    r = lgr_rule(2)
    assert np.allclose(r.D @ r.nodes, [1.0, 1.0], atol=1e-12)
    r = lgr_rule(8)
    assert np.max(np.abs(r.D @ r.nodes**5 - 5 * r.points**4)) <= 1e-10


def test_rule_range_errors():
    for n in (0, 1, 65, 2.5):
        with pytest.raises(ValueError):
            lgr_rule(n)


def test_integration_matrix_inverts_differentiation():
    r = lgr_rule(7)
    A = integration_matrix(r)
    y = np.sin(r.nodes)
    assert np.allclose(A @ (r.D @ y), y[1:] - y[0], atol=1e-12)


@given(st.integers(2, 12), st.lists(st.floats(-1, 1), min_size=1, max_size=10))
def test_interpolation_reproduces_polynomials(n, xs):
    r = lgr_rule(n)
    coeffs = np.arange(1, n + 2, dtype=float)
    M = interpolation_matrix(r.nodes, xs)
    assert np.allclose(M @ np.polyval(coeffs, r.nodes), np.polyval(coeffs, xs), atol=1e-9)
    assert np.allclose(interpolation_matrix(r.nodes, r.nodes), np.eye(n + 1))


def test_mesh_validation_and_roundtrip():
    m = Mesh((-1.0, -0.2, 1.0), (3, 5))
    assert m.n_colloc == 8 and m.n_nodes == 9
    assert Mesh.from_dict(m.to_dict()) == m
    assert m.colloc_weights().sum() == pytest.approx(2.0, abs=1e-14)
    for b, d in [((-1.0, 0.5), (3,)), ((-1.0, 0.0, 0.0, 1.0), (3, 3, 3)), ((-1.0, 1.0), (1,))]:
        with pytest.raises(ValueError):
            Mesh(b, d)


def test_exponential_defect_at_degree_16():
    nlp = transcribe(growth(), Mesh((-1.0, 1.0), (16,)))
    assert np.max(np.abs(nlp.defects(exact_x(nlp)))) <= 1e-10


def test_defect_converges_spectrally():
    res = {}
    for n in (4, 16):
        nlp = transcribe(growth(), Mesh((-1.0, 1.0), (n,)))
        res[n] = np.max(np.abs(nlp.defects(exact_x(nlp))))
    assert res[16] < 1e-6 * res[4]


def test_interpolated_exponential_matches_between_points():
    nlp = transcribe(growth(), Mesh((-1.0, 1.0), (16,)))
    traj = nlp.trajectory(exact_x(nlp))
    t = np.linspace(0, 1, 37)
    assert np.max(np.abs(traj.state(t)[:, 0] - np.exp(t))) <= 1e-8
    with pytest.raises(ValueError):
        traj.state([1.5])
    with pytest.raises(ValueError):
        traj.state([-0.1])


def test_interpolation_hits_decision_values_and_is_continuous():
    mesh = Mesh.uniform(4, 5)
    nlp = transcribe(growth(2.0), mesh)
    x = np.random.default_rng(0).normal(size=nlp.n)
    x[nlp.layout.i_t0], x[nlp.layout.i_tf] = 0.0, 2.0
    traj = nlp.trajectory(x)
    assert np.array_equal(traj.state(traj.node_times), traj.Y)
    edges = 0.5 * 2.0 * (np.asarray(mesh.boundaries[1:-1]) + 1.0)
    left = [traj.state([e - 1e-13])[0, 0] for e in edges]
    right = [traj.state([e])[0, 0] for e in edges]
    assert np.allclose(left, right, atol=1e-9)


def test_zero_dynamics_defects_force_constants():
    ocp = OcpDefinition(n_states=2, n_controls=1, dynamics=lambda Y, U, t: np.zeros_like(Y),
                        terminal_cost=lambda y0, t0, yf, tf: 0.0, tf_bounds=(1.0, 1.0))
    mesh = Mesh.uniform(3, 4)
    nlp = transcribe(ocp, mesh)
    lay = nlp.layout
    const = lay.pack(np.tile([2.0, -1.0], (lay.n_nodes, 1)), np.ones((lay.n_colloc, 1)), 0.0, 1.0)
    assert np.max(np.abs(nlp.defects(const))) <= 1e-12
    # the null space of the defect operator holds only a global constant
    Dg = global_diff_matrix(mesh)
    assert Dg.shape == (mesh.n_colloc, mesh.n_nodes)
    assert np.linalg.matrix_rank(Dg) == mesh.n_nodes - 1


def test_chance_row_count():
    xi = hmc.sample(lunar_xi(), hmc.HmcConfig(n_samples=500, seed=0))
    mesh = Mesh.uniform(3, 4)
    nlp = transcribe(lunar_ccocp(), mesh, xi, BiasedKernel("epanechnikov", 0.01))
    n_chance = sum(nlp.blocks[b].stop - nlp.blocks[b].start for b in nlp.blocks
                   if b.startswith("chance:"))
    assert n_chance == 1 * mesh.n_colloc + 1
    assert nlp.m == mesh.n_colloc * 2 + n_chance + 0


def test_transcription_errors():
    with pytest.raises(TranscriptionError):
        transcribe(lunar_ccocp(), Mesh.uniform(2, 3))
    with pytest.raises(TranscriptionError):
        transcribe(lunar_ccocp(), Mesh.uniform(2, 3), np.zeros((10, 1)),
                   BiasedKernel("epanechnikov", 0.1))
    with pytest.raises(TranscriptionError):
        transcribe(growth(), Mesh.uniform(2, 3), derivative="magic")
    with pytest.raises(ValueError):
        OcpDefinition(n_states=1, n_controls=0, dynamics=lambda Y, U, t: Y,
                      terminal_cost=lambda *a: 0.0, t0_bounds=(2.0, 2.0), tf_bounds=(0.0, 1.0))
