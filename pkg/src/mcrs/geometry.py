"""Uniform quadrilateral meshes of the unit square and two-level hierarchies."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True, eq=False)
class QuadMesh:
    """Axis-aligned uniform quad mesh of (0,1)^2 with ``n`` cells per side.

    Nodes are numbered lexicographically with x running fastest; element
    ``(i, j)`` (column ``i``, row ``j``) has index ``j*n + i`` and its corner
    nodes are listed counter-clockwise starting from the lower-left one.
    """

    n_cells_per_side: int
    node_coords: np.ndarray = field(repr=False)
    element_conn: np.ndarray = field(repr=False)
    boundary_node_flags: np.ndarray = field(repr=False)

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_cells_per_side

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def n_elements(self) -> int:
        return self.element_conn.shape[0]

    def element_origins(self) -> np.ndarray:
        """Lower-left corner of every element, shape (n_elements, 2)."""
        return self.node_coords[self.element_conn[:, 0]]

    def locate(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Element index and reference coordinates in [-1,1]^2 of each point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.n_cells_per_side
        cell = np.clip(np.floor(pts * n).astype(int), 0, n - 1)
        elem = cell[:, 1] * n + cell[:, 0]
        ref = 2.0 * (pts * n - cell) - 1.0
        return elem, ref


def build_uniform_mesh(n: int) -> QuadMesh:
    if int(n) != n or n < 1:
        raise ValueError(f"cells per side must be a positive integer, got {n!r}")
    n = int(n)
    t = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(t, t)  # rows vary in y, x fastest after ravel
    coords = np.column_stack([X.ravel(), Y.ravel()])
    # exact endpoints, no rounding drift on the boundary
    on_bnd = np.zeros((n + 1, n + 1), dtype=bool)
    on_bnd[0, :] = on_bnd[-1, :] = on_bnd[:, 0] = on_bnd[:, -1] = True

    j, i = np.divmod(np.arange(n * n), n)
    ll = j * (n + 1) + i
    conn = np.column_stack([ll, ll + 1, ll + n + 2, ll + n + 1])
    for arr in (coords, conn, on_bnd):
        arr.setflags(write=False)
    return QuadMesh(n, coords, conn, on_bnd.ravel())


@dataclass(frozen=True, eq=False)
class TwoLevelHierarchy:
    coarse: QuadMesh
    fine: QuadMesh
    ratio: int
    parent_map: np.ndarray = field(repr=False)


def build_hierarchy(n_coarse: int, ratio: int = 2) -> TwoLevelHierarchy:
    if int(ratio) != ratio or ratio < 1:
        raise ValueError(f"ratio must be a positive integer, got {ratio!r}")
    coarse = build_uniform_mesh(n_coarse)
    fine = build_uniform_mesh(coarse.n_cells_per_side * int(ratio))
    nf = fine.n_cells_per_side
    jf, i_f = np.divmod(np.arange(nf * nf), nf)
    parent = (jf // ratio) * coarse.n_cells_per_side + i_f // ratio
    parent.setflags(write=False)
    return TwoLevelHierarchy(coarse, fine, int(ratio), parent)


def prolongation_matrix(hierarchy: TwoLevelHierarchy, space_kind: str) -> sp.csr_matrix:
    """Sparse nodal-interpolation operator from coarse to fine coefficients.

    ``space_kind`` is one of ``"q2"``, ``"q1"``, ``"q0"`` (scalar) or
    ``"velocity"`` (two stacked Q2 components).
    """
    from .discretization.elements import element_family
    from .discretization.space import scalar_dof_layout

    if space_kind == "velocity":
        P = prolongation_matrix(hierarchy, "q2")
        return sp.block_diag([P, P], format="csr")
    if space_kind == "q0":
        nf = hierarchy.fine.n_elements
        return sp.csr_matrix(
            (np.ones(nf), (np.arange(nf), hierarchy.parent_map)),
            shape=(nf, hierarchy.coarse.n_elements),
        )
    elem = element_family(space_kind)
    c_conn, c_points = scalar_dof_layout(hierarchy.coarse, space_kind)
    _, f_points = scalar_dof_layout(hierarchy.fine, space_kind)
    cells, ref = hierarchy.coarse.locate(f_points)
    vals = elem.shape_eval(ref)  # (n_fine_dofs, dof_count)
    rows = np.repeat(np.arange(len(f_points)), elem.dof_count)
    cols = c_conn[cells].ravel()
    P = sp.csr_matrix((vals.ravel(), (rows, cols)), shape=(len(f_points), len(c_points)))
    P.data[np.abs(P.data) < 1e-14] = 0.0
    P.eliminate_zeros()
    return P


def prolongate_field(hierarchy: TwoLevelHierarchy, space_kind: str, coarse_coeffs) -> np.ndarray:
    P = prolongation_matrix(hierarchy, space_kind)
    coarse_coeffs = np.asarray(coarse_coeffs, dtype=float)
    if coarse_coeffs.shape != (P.shape[1],):
        raise ValueError(
            f"expected {P.shape[1]} coarse coefficients for {space_kind}, got {coarse_coeffs.shape}"
        )
    return P @ coarse_coeffs


def dump_mesh(mesh: QuadMesh) -> str:
    lines = [f"quadmesh n={mesh.n_cells_per_side}"]
    lines += [f"v {x!r} {y!r}" for x, y in mesh.node_coords.tolist()]
    lines += ["q " + " ".join(str(int(k)) for k in q) for q in mesh.element_conn]
    return "\n".join(lines) + "\n"
