"""Vectorised finite-element assembly on uniform quadrilateral meshes.

All forms use the 3x3 Gauss rule.  Since every cell is an axis-aligned
square of side h, the Jacobian is the constant h/2 * I and reference
quantities are shared by all elements.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..geometry import QuadMesh
from .elements import Q1, Q2, element_family, gauss_rule
from .space import FunctionSpace, scalar_dof_layout


def _tables(h: float, family: str = "q2"):
    rule = gauss_rule(3)
    elem = element_family(family)
    phi = elem.shape_eval(rule.points)
    dphi = elem.shape_grad(rule.points) * (2.0 / h)
    wdet = rule.weights * (h * h / 4.0)
    return phi, dphi, wdet


def _pressure_phi(space: FunctionSpace) -> np.ndarray:
    phi = Q1.shape_eval(gauss_rule(3).points)
    if space.has_q0:
        phi = np.hstack([phi, np.ones((phi.shape[0], 1))])
    return phi


def _scatter(conn_rows, conn_cols, local, shape) -> sp.csr_matrix:
    """Sum per-element local matrices ``local[e, a, b]`` into a CSR matrix."""
    ne, nr = conn_rows.shape
    nc = conn_cols.shape[1]
    local = np.broadcast_to(local, (ne, nr, nc))
    rows = np.broadcast_to(conn_rows[:, :, None], (ne, nr, nc)).ravel()
    cols = np.broadcast_to(conn_cols[:, None, :], (ne, nr, nc)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    A.sort_indices()
    return A


def quadrature_points(mesh: QuadMesh) -> np.ndarray:
    """Physical quadrature points, shape (n_elements, n_qp, 2)."""
    rule = gauss_rule(3)
    h = mesh.spacing
    return mesh.element_origins()[:, None, :] + (rule.points[None, :, :] + 1.0) * (h / 2.0)


def evaluate_at_quadrature(space: FunctionSpace, velocity=None, pressure=None):
    """Values (and velocity gradients) of FE coefficient vectors at quadrature points.

    Returns ``(u, grad_u, p)`` with shapes (ne, nq, 2), (ne, nq, 2, 2) where
    ``grad_u[..., c, d] = d u_c / d x_d``, and (ne, nq); entries are None
    when the corresponding input is None.
    """
    phi, dphi, _ = _tables(space.mesh.spacing)
    u = gu = p = None
    if velocity is not None:
        velocity = np.asarray(velocity, dtype=float)
        if velocity.shape != (space.n_velocity,):
            raise ValueError(f"velocity vector has shape {velocity.shape}, expected ({space.n_velocity},)")
        comps = velocity.reshape(2, -1)[:, space.velocity_conn]  # (2, ne, 9)
        u = np.einsum("cea,qa->eqc", comps, phi, optimize=True)
        gu = np.einsum("cea,qad->eqcd", comps, dphi, optimize=True)
    if pressure is not None:
        pressure = np.asarray(pressure, dtype=float)
        if pressure.shape != (space.n_pressure,):
            raise ValueError(f"pressure vector has shape {pressure.shape}, expected ({space.n_pressure},)")
        p = np.einsum("ea,qa->eq", pressure[space.pressure_conn], _pressure_phi(space), optimize=True)
    return u, gu, p


def assemble_scalar_mass(mesh: QuadMesh, kind: str = "q2") -> sp.csr_matrix:
    conn, pts = scalar_dof_layout(mesh, kind)
    phi, _, wdet = _tables(mesh.spacing, kind)
    Me = np.einsum("q,qa,qb->ab", wdet, phi, phi, optimize=True)
    return _scatter(conn, conn, Me[None], (len(pts), len(pts)))


def assemble_scalar_stiffness(mesh: QuadMesh, kind: str = "q2", nu: float = 1.0) -> sp.csr_matrix:
    if not nu > 0:
        raise ValueError(f"viscosity must be positive, got {nu!r}")
    conn, pts = scalar_dof_layout(mesh, kind)
    _, dphi, wdet = _tables(mesh.spacing, kind)
    Ae = nu * np.einsum("q,qad,qbd->ab", wdet, dphi, dphi, optimize=True)
    return _scatter(conn, conn, Ae[None], (len(pts), len(pts)))


def assemble_mass(space: FunctionSpace) -> sp.csr_matrix:
    """Velocity mass matrix, block-diagonal over the two components."""
    M = assemble_scalar_mass(space.mesh, "q2")
    return sp.block_diag([M, M], format="csr")


def assemble_stiffness(space: FunctionSpace, nu: float) -> sp.csr_matrix:
    """Matrix of a(u, v) = nu (grad u, grad v) on the velocity space."""
    A = assemble_scalar_stiffness(space.mesh, "q2", nu)
    return sp.block_diag([A, A], format="csr")


def assemble_pressure_mass(space: FunctionSpace) -> sp.csr_matrix:
    _, _, wdet = _tables(space.mesh.spacing)
    psi = _pressure_phi(space)
    Me = np.einsum("q,qa,qb->ab", wdet, psi, psi, optimize=True)
    n = space.n_pressure
    return _scatter(space.pressure_conn, space.pressure_conn, Me[None], (n, n))


def assemble_divergence(space: FunctionSpace) -> sp.csr_matrix:
    """B[q, v] = (psi_q, div phi_v), shape (n_pressure, n_velocity)."""
    _, dphi, wdet = _tables(space.mesh.spacing)
    psi = _pressure_phi(space)
    Be = np.einsum("q,qa,qbc->acb", wdet, psi, dphi, optimize=True)  # (np_loc, 2, 9)
    Be = Be.reshape(psi.shape[1], 18)
    vconn = np.hstack([space.velocity_conn, space.velocity_conn + space.n_scalar_velocity])
    return _scatter(space.pressure_conn, vconn, Be[None], (space.n_pressure, space.n_velocity))


def mean_rows(space: FunctionSpace) -> np.ndarray:
    """Rows c with c @ p = integral of p, shape (k, n_pressure).

    Plain Q1 needs one row.  Q1+Q0 contains the constants twice, so the Q1
    part and the Q0 part are constrained separately.
    """
    _, _, wdet = _tables(space.mesh.spacing)
    psi = _pressure_phi(space)
    local = wdet @ psi
    m = np.bincount(space.pressure_conn.ravel(),
                    weights=np.broadcast_to(local, space.pressure_conn.shape).ravel(),
                    minlength=space.n_pressure)
    if not space.has_q0:
        return m[None, :]
    rows = np.zeros((2, space.n_pressure))
    rows[0, :space.n_q1] = m[:space.n_q1]
    rows[1, space.n_q1:] = m[space.n_q1:]
    return rows


def assemble_convection(space: FunctionSpace, w_coeffs) -> sp.csr_matrix:
    """Matrix N(w) with N[i, j] = b(w, phi_j, phi_i) for the skew form

        b(w, u, v) = 1/2 ((w.grad) u, v) - 1/2 ((w.grad) v, u).

    N(w) is antisymmetric by construction, whatever quadrature is used.
    """
    w_coeffs = np.asarray(w_coeffs, dtype=float)
    if w_coeffs.shape != (space.n_velocity,):
        raise ValueError(f"w has shape {w_coeffs.shape}, expected ({space.n_velocity},)")
    phi, dphi, wdet = _tables(space.mesh.spacing)
    wq, _, _ = evaluate_at_quadrature(space, w_coeffs)
    adv = np.einsum("eqd,qbd->eqb", wq, dphi, optimize=True)  # w . grad phi_b
    C = np.einsum("q,qa,eqb->eab", wdet, phi, adv, optimize=True)
    Ne = 0.5 * (C - C.transpose(0, 2, 1))
    n = space.n_scalar_velocity
    N = _scatter(space.velocity_conn, space.velocity_conn, Ne, (n, n))
    return sp.block_diag([N, N], format="csr")


def convection_vector(space: FunctionSpace, w_coeffs) -> np.ndarray:
    """The vector b(w, w, phi_i), i.e. N(w) @ w, without forming N(w)."""
    phi, dphi, wdet = _tables(space.mesh.spacing)
    wq, gw, _ = evaluate_at_quadrature(space, w_coeffs)
    w_grad_w = np.einsum("eqd,eqcd->eqc", wq, gw, optimize=True)
    adv = np.einsum("eqd,qbd->eqb", wq, dphi, optimize=True)
    t1 = np.einsum("q,qa,eqc->cea", wdet, phi, w_grad_w, optimize=True)
    t2 = np.einsum("q,eqa,eqc->cea", wdet, adv, wq, optimize=True)
    local = 0.5 * (t1 - t2)  # (2, ne, 9)
    n = space.n_scalar_velocity
    out = np.empty(2 * n)
    for c in range(2):
        out[c * n:(c + 1) * n] = np.bincount(space.velocity_conn.ravel(), weights=local[c].ravel(), minlength=n)
    return out


def load_vector(space: FunctionSpace, field_fn) -> np.ndarray:
    """(f, phi_i) for a vector field ``field_fn(x, y) -> (f1, f2)``."""
    phi, _, wdet = _tables(space.mesh.spacing)
    xq = quadrature_points(space.mesh)
    f1, f2 = field_fn(xq[..., 0], xq[..., 1])
    n = space.n_scalar_velocity
    out = np.empty(2 * n)
    for c, fc in enumerate((f1, f2)):
        fc = np.broadcast_to(fc, xq.shape[:2])
        local = np.einsum("q,qa,eq->ea", wdet, phi, fc, optimize=True)
        out[c * n:(c + 1) * n] = np.bincount(space.velocity_conn.ravel(), weights=local.ravel(), minlength=n)
    return out


def pressure_load_vector(space: FunctionSpace, field_fn) -> np.ndarray:
    _, _, wdet = _tables(space.mesh.spacing)
    xq = quadrature_points(space.mesh)
    f = np.broadcast_to(field_fn(xq[..., 0], xq[..., 1]), xq.shape[:2])
    local = np.einsum("q,qa,eq->ea", wdet, _pressure_phi(space), f, optimize=True)
    return np.bincount(space.pressure_conn.ravel(), weights=local.ravel(), minlength=space.n_pressure)


@lru_cache(maxsize=16)
def _scalar_mass_lu(mesh: QuadMesh, dirichlet: bool):
    M = assemble_scalar_mass(mesh, "q2")
    if dirichlet:
        _, pts = scalar_dof_layout(mesh, "q2")
        x, y = pts.T
        mask = (x == 0.0) | (x == 1.0) | (y == 0.0) | (y == 1.0)
        M, _ = apply_dirichlet(M, np.zeros(M.shape[0]), mask)
    return spla.splu(M.tocsc())


def l2_project(space: FunctionSpace, field_fn, dirichlet: bool = False) -> np.ndarray:
    """L2-orthogonal projection of a vector field onto the Q2 velocity space.

    With ``dirichlet=True`` the projection is onto the subspace vanishing
    on the boundary.
    """
    from ..sparse_linalg import SolverError

    rhs = load_vector(space, field_fn)
    n = space.n_scalar_velocity
    lu = _scalar_mass_lu(space.mesh, bool(dirichlet))
    out = np.empty_like(rhs)
    for c in range(2):
        b = rhs[c * n:(c + 1) * n].copy()
        if dirichlet:
            b[space.dirichlet_mask[:n]] = 0.0
        out[c * n:(c + 1) * n] = lu.solve(b)
    if not np.all(np.isfinite(out)):
        raise SolverError("mass solve produced non-finite values")
    return out


def project_pressure(space: FunctionSpace, field_fn) -> np.ndarray:
    """L2 projection of a scalar field onto the pressure space.

    For Q1+Q0 the mass matrix is singular (constants appear in both parts),
    so the elementwise part is additionally held at zero mean.
    """
    Mp = assemble_pressure_mass(space)
    rhs = pressure_load_vector(space, field_fn)
    if not space.has_q0:
        return spla.spsolve(Mp.tocsc(), rhs)
    c0 = sp.csr_matrix(mean_rows(space)[1:2])
    K = sp.bmat([[Mp, c0.T], [c0, None]], format="csc")
    return spla.spsolve(K, np.append(rhs, 0.0))[:space.n_pressure]


def project_divergence_free(space: FunctionSpace, field_fn, tol: float = 1e-10) -> np.ndarray:
    """L2 projection onto the discretely divergence-free, boundary-vanishing velocities."""
    from ..sparse_linalg import SaddleSystem, solve_saddle

    M = assemble_mass(space)
    B = assemble_divergence(space)
    system = SaddleSystem(M, B, mean_rows(space), load_vector(space, field_fn),
                          np.zeros(space.n_pressure), space.dirichlet_mask)
    u, _ = solve_saddle(system, tol)
    return u


def apply_dirichlet(matrix, rhs, mask):
    """Homogeneous Dirichlet rows/columns replaced by identity, rhs zeroed.

    ``mask`` may be shorter than the system; missing entries count as free.
    Symmetric input stays symmetric.
    """
    A = sp.csr_matrix(matrix)
    mask = np.asarray(mask, dtype=bool)
    full = np.zeros(A.shape[0], dtype=bool)
    full[:mask.size] = mask
    keep = sp.diags((~full).astype(float))
    A = (keep @ A @ keep + sp.diags(full.astype(float))).tocsr()
    A.sort_indices()
    rhs = np.array(rhs, dtype=float, copy=True)
    rhs[full] = 0.0
    return A, rhs


def dump_triplets(matrix) -> str:
    A = sp.coo_matrix(matrix)
    order = np.lexsort((A.col, A.row))
    return "".join(f"{r} {c} {v!r}\n" for r, c, v in zip(A.row[order].tolist(), A.col[order].tolist(), A.data[order].tolist()))
