import numpy as np
import pytest
import scipy.sparse as sp

from mcrs.discretization import (
    assemble_divergence,
    assemble_mass,
    assemble_pressure_mass,
    assemble_stiffness,
    build_space,
    mean_rows,
    project_divergence_free,
    project_pressure,
)
from mcrs.geometry import build_uniform_mesh
from mcrs.manufactured import manufactured_solution
from mcrs.sparse_linalg import (
    ConfigurationError,
    SaddleSolver,
    SaddleSystem,
    SolverError,
    SPDSolver,
    solve_saddle,
    solve_spd,
)


@pytest.mark.parametrize("method", ["direct", "iterative"])
def test_identity(method):
    r = np.arange(1.0, 6.0)
    np.testing.assert_allclose(solve_spd(sp.eye(5), r, method=method), r)


@pytest.mark.parametrize("method", ["direct", "iterative"])
def test_two_by_two(method):
    x = solve_spd(sp.csr_matrix([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0]), method=method)
    np.testing.assert_allclose(x, [1.0, 1.0], atol=1e-12)


@pytest.mark.parametrize("method", ["direct", "iterative"])
def test_mass_round_trip(method, rng):
    M = assemble_mass(build_space(build_uniform_mesh(4)))
    x = rng.standard_normal(M.shape[0])
    assert np.max(np.abs(solve_spd(M, M @ x, method=method) - x)) <= 1e-10


def test_spd_zero_rhs_and_errors():
    solver = SPDSolver(sp.eye(3))
    assert np.all(solver.solve(np.zeros(3)) == 0)
    with pytest.raises(ValueError):
        SPDSolver(sp.eye(3), method="magic")
    with pytest.raises(ConfigurationError):
        SPDSolver(sp.csr_matrix((3, 3)))


def _stokes(n=2, pressure_space="q1", nu=1.0):
    space = build_space(build_uniform_mesh(n), pressure_space)
    K = assemble_mass(space) + assemble_stiffness(space, nu)
    return space, K, assemble_divergence(space), mean_rows(space)


def _dense_oracle(space, K, B, C, rhs_u, rhs_p):
    """Eliminate boundary velocities, append mean rows, dense LU."""
    free = ~space.dirichlet_mask
    Kf = K.toarray()[np.ix_(free, free)]
    Bf = B.toarray()[:, free]
    nf, npr, k = Kf.shape[0], Bf.shape[0], C.shape[0]
    A = np.zeros((nf + npr + k, nf + npr + k))
    A[:nf, :nf] = Kf
    A[:nf, nf:nf + npr] = -Bf.T
    A[nf:nf + npr, :nf] = -Bf
    A[nf:nf + npr, nf + npr:] = C.T
    A[nf + npr:, nf:nf + npr] = C
    b = np.concatenate([rhs_u[free], -rhs_p, np.zeros(k)])
    x = np.linalg.solve(A, b)
    u = np.zeros(space.n_velocity)
    u[free] = x[:nf]
    return u, x[nf:nf + npr]


def test_saddle_zero_rhs():
    space, K, B, C = _stokes()
    u, p = SaddleSolver(K, B, C, space.dirichlet_mask).solve(np.zeros(space.n_velocity))
    assert not u.any() and not p.any()


@pytest.mark.parametrize("pressure_space", ["q1", "q1_plus_q0"])
def test_saddle_dense_oracle(pressure_space, rng):
    space, K, B, C = _stokes(2, pressure_space)
    rhs_u = rng.standard_normal(space.n_velocity)
    rhs_p = rng.standard_normal(space.n_pressure)
    rhs_p -= rhs_p.mean()
    system = SaddleSystem(K, B, C, rhs_u, rhs_p, space.dirichlet_mask)
    u, p = solve_saddle(system)
    u_ref, p_ref = _dense_oracle(space, K, B, C, rhs_u, rhs_p)
    assert np.max(np.abs(u - u_ref)) <= 1e-11
    assert np.max(np.abs(p - p_ref)) <= 1e-11


@pytest.mark.parametrize("method", ["direct", "iterative"])
def test_manufactured_stokes(method):
    space, K, B, C = _stokes(4)
    sol = manufactured_solution("test1")
    u_true = project_divergence_free(space, lambda x, y: sol.velocity(0.7, x, y))
    p_true = project_pressure(space, lambda x, y: sol.pressure(0.7, x, y))
    rhs_u = K @ u_true - B.T @ p_true
    solver = SaddleSolver(K, B, C, space.dirichlet_mask, method, assemble_pressure_mass(space))
    u, p = solver.solve(rhs_u)
    assert np.max(np.abs(u - u_true)) <= 1e-9
    assert np.max(np.abs(p - p_true)) <= 1e-9
    assert np.max(np.abs(C @ p)) <= 1e-12


def test_saddle_deterministic(rng):
    space, K, B, C = _stokes(3)
    rhs = rng.standard_normal(space.n_velocity)
    a = SaddleSolver(K, B, C, space.dirichlet_mask).solve(rhs)
    b = SaddleSolver(K, B, C, space.dirichlet_mask).solve(rhs)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_missing_mean_constraint_is_configuration_error():
    space, K, B, _ = _stokes(2)
    with pytest.raises(ConfigurationError):
        SaddleSolver(K, B, np.zeros((0, space.n_pressure)), space.dirichlet_mask)


def test_residual_failure_raises(rng):
    space, K, B, C = _stokes(2)
    with pytest.raises(ValueError):
        SaddleSolver(K, B, C, space.dirichlet_mask).solve(rng.standard_normal(space.n_velocity), tol=0.0)
    assert issubclass(ConfigurationError, SolverError)


def test_system_blocks():
    space, K, B, C = _stokes(2)
    system = SaddleSystem(K, B, C, np.ones(space.n_velocity), np.zeros(space.n_pressure), space.dirichlet_mask)
    nv, npr, k = system.sizes
    assert (nv, npr, k) == (space.n_velocity, space.n_pressure, 1)
    A = system.matrix()
    assert A.shape == (nv + npr + k,) * 2
    assert abs(A - A.T).max() <= 1e-14
    assert np.all(system.rhs()[:nv][space.dirichlet_mask] == 0)
