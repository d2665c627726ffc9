import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from mcrs.checks import check_assembly_oracle, check_quadrature, check_shape_gradients, dense_operators
from mcrs.discretization import (
    Q0, Q1, Q2,
    apply_dirichlet,
    assemble_convection,
    assemble_divergence,
    assemble_mass,
    assemble_pressure_mass,
    assemble_scalar_mass,
    assemble_scalar_stiffness,
    assemble_stiffness,
    build_space,
    convection_vector,
    dump_triplets,
    element_family,
    gauss_rule,
    l2_project,
    load_vector,
    mean_rows,
    project_divergence_free,
    project_pressure,
)
from mcrs.geometry import build_uniform_mesh
from mcrs.manufactured import manufactured_solution


def lagrange3(s):
    """1D quadratic Lagrange basis on nodes (-1, 0, 1), written out by hand."""
    return np.array([s * (s - 1) / 2, 1 - s * s, s * (s + 1) / 2])


# -- reference elements --------------------------------------------------------

def test_q1_centre_values():
    np.testing.assert_allclose(Q1.shape_eval([0.0, 0.0]), [0.25] * 4, atol=1e-15)


def test_q2_nodal_property():
    np.testing.assert_allclose(Q2.shape_eval(Q2.nodes), np.eye(9), atol=1e-14)
    np.testing.assert_allclose(Q1.shape_eval(Q1.nodes), np.eye(4), atol=1e-14)


def test_q2_against_tensor_lagrange():
    xi, eta = 0.5, -1 / 3
    lx, ly = lagrange3(xi), lagrange3(eta)
    expected = [lx[int(a) + 1] * ly[int(b) + 1] for a, b in Q2.nodes]
    np.testing.assert_allclose(Q2.shape_eval([xi, eta]), expected, atol=1e-15)


def test_q2_local_ordering():
    expected = [(-1, -1), (1, -1), (1, 1), (-1, 1), (0, -1), (1, 0), (0, 1), (-1, 0), (0, 0)]
    np.testing.assert_array_equal(Q2.nodes, expected)


def test_q1_gradient_partition_of_unity(rng):
    pts = rng.uniform(-1, 1, (10, 2))
    np.testing.assert_allclose(Q1.shape_grad(pts).sum(axis=1), 0.0, atol=1e-14)
    np.testing.assert_allclose(Q2.shape_grad(pts).sum(axis=1), 0.0, atol=1e-13)


def test_q1_first_gradient_at_centre():
    np.testing.assert_allclose(Q1.shape_grad([0.0, 0.0])[0], [-0.25, -0.25], atol=1e-15)


def test_shape_gradients_match_finite_differences():
    assert check_shape_gradients() <= 1e-6


def test_q0_is_constant():
    assert Q0.shape_eval([0.3, -0.2]).tolist() == [1.0]
    assert element_family("Q2") is Q2
    with pytest.raises(ValueError):
        element_family("q7")


def test_gauss_rule_exactness():
    rule = gauss_rule(3)
    assert rule.weights.sum() == pytest.approx(4.0, abs=1e-14)
    assert check_quadrature() <= 1e-15


# -- matrices --------------------------------------------------------------------

def test_unit_q1_mass_entries():
    M = assemble_scalar_mass(build_uniform_mesh(1), "q1").toarray()
    assert M.sum() == pytest.approx(1.0, abs=1e-14)
    # nodes 0 and 1 share an edge, 0 and 3 are opposite
    assert M[0, 0] == pytest.approx(1 / 9, abs=1e-14)
    assert M[0, 1] == pytest.approx(1 / 18, abs=1e-14)
    assert M[0, 3] == pytest.approx(1 / 36, abs=1e-14)


@pytest.mark.parametrize("n", [1, 3])
def test_mass_spd(n, rng):
    M = assemble_mass(build_space(build_uniform_mesh(n)))
    assert abs(M - M.T).max() <= 1e-14
    for _ in range(20):
        x = rng.standard_normal(M.shape[0])
        assert x @ (M @ x) > 0


def test_stiffness_annihilates_constants():
    A = assemble_scalar_stiffness(build_uniform_mesh(3), "q2", 1.0)
    np.testing.assert_allclose(A @ np.ones(A.shape[0]), 0.0, atol=1e-13)


def test_unit_q1_stiffness_diagonal():
    A = assemble_scalar_stiffness(build_uniform_mesh(1), "q1", 1.0).toarray()
    assert A[0, 0] == pytest.approx(2 / 3, abs=1e-14)


def test_stiffness_linear_in_nu():
    space = build_space(build_uniform_mesh(3))
    diff = assemble_stiffness(space, 2.0) - 2.0 * assemble_stiffness(space, 1.0)
    assert abs(diff).max() <= 1e-14
    with pytest.raises(ValueError):
        assemble_stiffness(space, 0.0)


def test_divergence_of_constant_and_of_x_minus_y():
    space = build_space(build_uniform_mesh(3))
    B = assemble_divergence(space)
    const = space.interpolate_velocity(lambda x, y: (np.full_like(x, 2.0), np.full_like(x, -1.0)))
    assert np.max(np.abs(B @ const)) <= 1e-13
    u = space.interpolate_velocity(lambda x, y: (x, -y))
    assert np.max(np.abs(B @ u)) <= 1e-12


def test_divergence_per_element_area():
    n = 3
    space = build_space(build_uniform_mesh(n), "q1_plus_q0")
    B = assemble_divergence(space)
    u = space.interpolate_velocity(lambda x, y: (x, np.zeros_like(x)))
    per_element = (B @ u)[space.n_q1:]
    np.testing.assert_allclose(per_element, (1 / n) ** 2, atol=1e-14)


def test_mean_rows():
    space = build_space(build_uniform_mesh(2))
    c = mean_rows(space)
    assert c.shape == (1, 9) and c.sum() == pytest.approx(1.0)
    space2 = build_space(build_uniform_mesh(2), "q1_plus_q0")
    c2 = mean_rows(space2)
    assert c2.shape == (2, 13)
    np.testing.assert_allclose(c2.sum(axis=1), [1.0, 1.0])


def test_convection_zero_advection():
    space = build_space(build_uniform_mesh(2))
    assert assemble_convection(space, np.zeros(space.n_velocity)).count_nonzero() == 0


def test_convection_skew_symmetric(rng):
    space = build_space(build_uniform_mesh(8))
    for _ in range(100):
        w = rng.standard_normal(space.n_velocity)
        v = rng.standard_normal(space.n_velocity)
        N = assemble_convection(space, w)
        assert abs(v @ (N @ v)) <= 1e-11 * (v @ v)


def test_convection_constant_wind_dense_oracle():
    space = build_space(build_uniform_mesh(1))
    w = space.interpolate_velocity(lambda x, y: (np.ones_like(x), np.zeros_like(x)))
    _, _, _, Nd = dense_operators(1, 1.0, w)
    assert np.max(np.abs(assemble_convection(space, w).toarray() - Nd)) <= 1e-13


def test_convection_vector_matches_matrix(rng):
    space = build_space(build_uniform_mesh(3))
    w = rng.standard_normal(space.n_velocity)
    np.testing.assert_allclose(convection_vector(space, w), assemble_convection(space, w) @ w, atol=1e-12)
    with pytest.raises(ValueError):
        assemble_convection(space, np.zeros(5))


@pytest.mark.parametrize("pressure_space", ["q1", "q1_plus_q0"])
def test_assembly_matches_dense_oracle(pressure_space):
    errs = check_assembly_oracle(2, seed=3, pressure_space=pressure_space)
    assert max(errs.values()) <= 1e-12, errs


def test_pressure_mass_matches_scalar_q1():
    space = build_space(build_uniform_mesh(3))
    diff = assemble_pressure_mass(space) - assemble_scalar_mass(space.mesh, "q1")
    assert abs(diff).max() <= 1e-15


# -- loads and projections -------------------------------------------------------

def test_load_vector_sums_to_integral():
    space = build_space(build_uniform_mesh(3))
    b = load_vector(space, lambda x, y: (x * y, np.ones_like(x)))
    n = space.n_scalar_velocity
    assert b[:n].sum() == pytest.approx(0.25, abs=1e-14)
    assert b[n:].sum() == pytest.approx(1.0, abs=1e-14)


def test_l2_project_zero_field():
    space = build_space(build_uniform_mesh(2))
    z = l2_project(space, lambda x, y: (np.zeros_like(x), np.zeros_like(x)))
    assert np.all(z == 0.0)


def test_l2_project_recovers_q2_function():
    space = build_space(build_uniform_mesh(1))
    fn = lambda x, y: (x**2 * y, x * y**2 - y)  # noqa: E731
    np.testing.assert_allclose(l2_project(space, fn), space.interpolate_velocity(fn), atol=1e-12)


def test_test1_initial_velocity_projects_to_zero():
    sol = manufactured_solution("test1")
    space = build_space(build_uniform_mesh(4))
    u0 = l2_project(space, sol.initial_velocity)
    assert np.max(np.abs(u0)) <= 1e-15


def test_divergence_free_projection():
    space = build_space(build_uniform_mesh(4))
    sol = manufactured_solution("test2")
    u = project_divergence_free(space, lambda x, y: sol.velocity(0.3, x, y))
    assert np.max(np.abs(assemble_divergence(space) @ u)) <= 1e-12
    assert np.all(u[space.dirichlet_mask] == 0.0)


@pytest.mark.parametrize("pressure_space", ["q1", "q1_plus_q0"])
def test_project_pressure_reproduces_bilinear(pressure_space):
    space = build_space(build_uniform_mesh(3), pressure_space)
    p = project_pressure(space, lambda x, y: x * y - 0.25)
    np.testing.assert_allclose(p[:space.n_q1], space.pressure_points[:space.n_q1].prod(axis=1) - 0.25,
                               atol=1e-12)
    if space.has_q0:
        np.testing.assert_allclose(p[space.n_q1:], 0.0, atol=1e-12)


# -- boundary conditions ---------------------------------------------------------

def test_apply_dirichlet_all_interior(rng):
    A = sp.random(6, 6, density=0.5, random_state=1) + sp.eye(6)
    b = rng.standard_normal(6)
    A2, b2 = apply_dirichlet(A, b, np.zeros(6, bool))
    assert abs(A2 - A).max() == 0 and np.array_equal(b, b2)


def test_apply_dirichlet_all_boundary():
    M = assemble_scalar_mass(build_uniform_mesh(1), "q1")
    A2, b2 = apply_dirichlet(M, np.ones(4), np.ones(4, bool))
    assert np.all(np.linalg.solve(A2.toarray(), b2) == 0.0)


def test_apply_dirichlet_dense_elimination_oracle(rng):
    space = build_space(build_uniform_mesh(2))
    K = (assemble_mass(space) + assemble_stiffness(space, 1.0)).toarray()
    b = rng.standard_normal(K.shape[0])
    mask = space.dirichlet_mask
    A2, b2 = apply_dirichlet(sp.csr_matrix(K), b, mask)
    x = np.linalg.solve(A2.toarray(), b2)
    free = ~mask
    expected = np.zeros_like(b)
    expected[free] = np.linalg.solve(K[np.ix_(free, free)], b[free])
    assert np.max(np.abs(x - expected)) <= 1e-12
    assert abs(A2 - A2.T).max() <= 1e-14


def test_dump_triplets_sorted():
    text = dump_triplets(sp.csr_matrix(np.array([[0.0, 2.0], [1.5, 0.0]])))
    assert text == "0 1 2.0\n1 0 1.5\n"


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 4), nu=st.floats(0.01, 10.0), seed=st.integers(0, 2**31 - 1))
def test_operator_properties(n, nu, seed):
    rng = np.random.default_rng(seed)
    space = build_space(build_uniform_mesh(n))
    A = assemble_stiffness(space, nu)
    assert abs(A - A.T).max() <= 1e-12 * nu
    v = rng.standard_normal(space.n_velocity)
    assert v @ (A @ v) >= -1e-12
    N = assemble_convection(space, rng.standard_normal(space.n_velocity))
    assert abs(N + N.T).max() <= 1e-12
