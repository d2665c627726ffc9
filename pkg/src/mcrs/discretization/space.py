"""Mixed velocity/pressure function spaces on a QuadMesh."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..geometry import QuadMesh

PRESSURE_SPACES = ("q1", "q1_plus_q0")


def scalar_dof_layout(mesh: QuadMesh, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Element-to-DOF map and DOF coordinates for a scalar Q2, Q1 or Q0 field.

    Q2 DOFs live on the (2n+1)^2 lattice of vertices, edge midpoints and
    cell centres, numbered lexicographically with x fastest.
    """
    n = mesh.n_cells_per_side
    kind = kind.lower()
    if kind == "q1":
        return mesh.element_conn, mesh.node_coords
    if kind == "q0":
        centres = mesh.element_origins() + 0.5 * mesh.spacing
        return np.arange(mesh.n_elements)[:, None], centres
    if kind == "q2":
        m = 2 * n + 1
        t = np.linspace(0.0, 1.0, m)
        X, Y = np.meshgrid(t, t)
        points = np.column_stack([X.ravel(), Y.ravel()])
        from .elements import Q2

        j, i = np.divmod(np.arange(n * n), n)
        a = Q2.nodes[:, 0].astype(int)
        b = Q2.nodes[:, 1].astype(int)
        conn = (2 * j[:, None] + 1 + b[None, :]) * m + (2 * i[:, None] + 1 + a[None, :])
        return conn, points
    raise ValueError(f"unknown scalar space {kind!r}")


@dataclass(frozen=True, eq=False)
class FunctionSpace:
    """Q2 velocity with Q1 (or Q1+Q0) pressure.

    Velocity coefficients are stored component-blocked: all x-components,
    then all y-components.  With the Q0 enrichment, pressure coefficients are
    the Q1 nodal values followed by one value per element.
    """

    mesh: QuadMesh
    pressure_space: str
    velocity_conn: np.ndarray = field(repr=False)
    velocity_points: np.ndarray = field(repr=False)
    pressure_conn: np.ndarray = field(repr=False)
    pressure_points: np.ndarray = field(repr=False)
    dirichlet_mask: np.ndarray = field(repr=False)

    @property
    def n_scalar_velocity(self) -> int:
        return self.velocity_points.shape[0]

    @property
    def n_velocity(self) -> int:
        return 2 * self.n_scalar_velocity

    @property
    def n_pressure(self) -> int:
        return self.pressure_points.shape[0]

    @property
    def n_q1(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_dofs(self) -> int:
        return self.n_velocity + self.n_pressure

    @property
    def has_q0(self) -> bool:
        return self.pressure_space == "q1_plus_q0"

    def velocity_component(self, coeffs, c: int) -> np.ndarray:
        n = self.n_scalar_velocity
        return np.asarray(coeffs)[c * n:(c + 1) * n]

    def interpolate_velocity(self, field_fn) -> np.ndarray:
        """Nodal interpolant of ``field_fn(x, y) -> (u1, u2)``."""
        x, y = self.velocity_points.T
        u1, u2 = field_fn(x, y)
        return np.concatenate([np.broadcast_to(u1, x.shape), np.broadcast_to(u2, x.shape)]).astype(float)


def build_space(mesh: QuadMesh, pressure_space: str = "q1") -> FunctionSpace:
    if pressure_space not in PRESSURE_SPACES:
        raise ValueError(f"pressure_space must be one of {PRESSURE_SPACES}, got {pressure_space!r}")
    vconn, vpts = scalar_dof_layout(mesh, "q2")
    pconn, ppts = scalar_dof_layout(mesh, "q1")
    if pressure_space == "q1_plus_q0":
        q0conn, q0pts = scalar_dof_layout(mesh, "q0")
        pconn = np.hstack([pconn, q0conn + mesh.n_nodes])
        ppts = np.vstack([ppts, q0pts])
    x, y = vpts.T
    on_bnd = (x == 0.0) | (x == 1.0) | (y == 0.0) | (y == 1.0)
    mask = np.concatenate([on_bnd, on_bnd])
    for arr in (vconn, vpts, pconn, ppts, mask):
        arr.setflags(write=False)
    return FunctionSpace(mesh, pressure_space, vconn, vpts, pconn, ppts, mask)


def evaluate_scalar(mesh: QuadMesh, kind: str, coeffs, points) -> np.ndarray:
    """Point values of a scalar Q2/Q1/Q0 finite-element function."""
    from .elements import element_family

    conn, _ = scalar_dof_layout(mesh, kind)
    cells, ref = mesh.locate(points)
    phi = element_family(kind).shape_eval(ref)
    return np.einsum("pa,pa->p", phi, np.asarray(coeffs, dtype=float)[conn[cells]])
