"""Reference Lagrange elements on [-1,1]^2 and Gauss-Legendre quadrature."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# Local node order: corners counter-clockwise from (-1,-1), then edge
# midpoints (bottom, right, top, left), then the centre.
_Q2_NODES = np.array(
    [[-1, -1], [1, -1], [1, 1], [-1, 1], [0, -1], [1, 0], [0, 1], [-1, 0], [0, 0]],
    dtype=float,
)
_Q1_NODES = _Q2_NODES[:4]


def _lagrange_1d(s, degree):
    """Values and derivatives of the 1D Lagrange basis on nodes (-1, 0, 1) or (-1, 1).

    Columns are indexed by node coordinate -1, 0, +1 (degree 2) or -1, +1.
    """
    s = np.asarray(s, dtype=float)
    if degree == 1:
        val = np.stack([(1 - s) / 2, (1 + s) / 2], axis=-1)
        der = np.stack([np.full_like(s, -0.5), np.full_like(s, 0.5)], axis=-1)
    else:
        val = np.stack([s * (s - 1) / 2, 1 - s * s, s * (s + 1) / 2], axis=-1)
        der = np.stack([s - 0.5, -2 * s, s + 0.5], axis=-1)
    return val, der


@dataclass(frozen=True)
class ReferenceElement:
    family: str
    dof_count: int
    degree: int
    nodes: np.ndarray

    def _split(self, points):
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        return pts[:, 0], pts[:, 1], single

    def _index(self):
        # node coordinate -> column of the 1D basis table
        return (self.nodes + 1).astype(int) if self.degree == 2 else ((self.nodes + 1) // 2).astype(int)

    def shape_eval(self, points) -> np.ndarray:
        """Shape function values, shape (n_points, dof_count) or (dof_count,)."""
        xi, eta, single = self._split(points)
        if self.degree == 0:
            out = np.ones((xi.size, 1))
        else:
            vx, _ = _lagrange_1d(xi, self.degree)
            vy, _ = _lagrange_1d(eta, self.degree)
            ix = self._index()
            out = vx[:, ix[:, 0]] * vy[:, ix[:, 1]]
        return out[0] if single else out

    def shape_grad(self, points) -> np.ndarray:
        """Reference gradients, shape (n_points, dof_count, 2) or (dof_count, 2)."""
        xi, eta, single = self._split(points)
        if self.degree == 0:
            out = np.zeros((xi.size, 1, 2))
        else:
            vx, dx = _lagrange_1d(xi, self.degree)
            vy, dy = _lagrange_1d(eta, self.degree)
            ix = self._index()
            out = np.stack(
                [dx[:, ix[:, 0]] * vy[:, ix[:, 1]], vx[:, ix[:, 0]] * dy[:, ix[:, 1]]], axis=-1
            )
        return out[0] if single else out


Q2 = ReferenceElement("Q2", 9, 2, _Q2_NODES)
Q1 = ReferenceElement("Q1", 4, 1, _Q1_NODES)
Q0 = ReferenceElement("Q0", 1, 0, np.zeros((1, 2)))

_FAMILIES = {"q2": Q2, "q1": Q1, "q0": Q0}


def element_family(name: str) -> ReferenceElement:
    try:
        return _FAMILIES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown element family {name!r}") from None


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    degree: int  # exact for polynomials up to this degree in each variable


@lru_cache(maxsize=None)
def gauss_rule(n_per_direction: int = 3) -> QuadratureRule:
    """Tensor-product Gauss-Legendre rule on [-1,1]^2."""
    x, w = np.polynomial.legendre.leggauss(n_per_direction)
    X, Y = np.meshgrid(x, x)
    W = np.outer(w, w)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    wts = W.ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, 2 * n_per_direction - 1)
