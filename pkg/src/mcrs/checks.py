"""Property checks with brute-force dense oracles.

The oracles here deliberately share nothing with the vectorised assembly:
basis functions are physical-coordinate Lagrange products, DOFs are
located by coordinates, and every integral is an explicit Python loop.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .discretization import (
    Q0, Q1, Q2, assemble_convection, assemble_divergence, assemble_mass, assemble_stiffness,
    build_space, gauss_rule,
)
from .discretization.space import evaluate_scalar, scalar_dof_layout
from .geometry import build_hierarchy, build_uniform_mesh, prolongate_field
from .manufactured import manufactured_solution

_G3 = [(-math.sqrt(0.6), 5 / 9), (0.0, 8 / 9), (math.sqrt(0.6), 5 / 9)]


def _lagrange(nodes, k, x):
    """Value and derivative of the k-th 1D Lagrange polynomial on ``nodes``."""
    val = 1.0
    for m, xm in enumerate(nodes):
        if m != k:
            val *= (x - xm) / (nodes[k] - xm)
    der = 0.0
    for j, xj in enumerate(nodes):
        if j == k:
            continue
        term = 1.0 / (nodes[k] - xj)
        for m, xm in enumerate(nodes):
            if m not in (k, j):
                term *= (x - xm) / (nodes[k] - xm)
        der += term
    return val, der


def _basis(n, e, degree, x, y):
    """[(global index, value, dvalue/dx, dvalue/dy)] of all basis functions on element e."""
    h = 1.0 / n
    i, j = e % n, e // n
    x0, y0 = i * h, j * h
    if degree == 0:
        return [(e, 1.0, 0.0, 0.0)]
    xs = [x0 + h * s / degree for s in range(degree + 1)]
    ys = [y0 + h * s / degree for s in range(degree + 1)]
    m = degree * n + 1
    out = []
    for a, b in itertools.product(range(degree + 1), repeat=2):
        vx, dx = _lagrange(xs, a, x)
        vy, dy = _lagrange(ys, b, y)
        gi = round(ys[b] * degree * n) * m + round(xs[a] * degree * n)
        out.append((gi, vx * vy, dx * vy, vx * dy))
    return out


def _points(n, e):
    h = 1.0 / n
    x0, y0 = (e % n) * h, (e // n) * h
    for (sx, wx), (sy, wy) in itertools.product(_G3, repeat=2):
        yield x0 + h * (sx + 1) / 2, y0 + h * (sy + 1) / 2, wx * wy * h * h / 4


def dense_operators(n: int, nu: float = 1.0, w=None, pressure_space: str = "q1"):
    """Dense M, A, B and N(w) for the n x n mesh by explicit loops."""
    nq2 = (2 * n + 1) ** 2
    nq1 = (n + 1) ** 2
    npr = nq1 + (n * n if pressure_space == "q1_plus_q0" else 0)
    M = np.zeros((2 * nq2, 2 * nq2))
    A = np.zeros_like(M)
    N = np.zeros_like(M)
    B = np.zeros((npr, 2 * nq2))
    for e in range(n * n):
        for x, y, wt in _points(n, e):
            vel = _basis(n, e, 2, x, y)
            pre = _basis(n, e, 1, x, y)
            if pressure_space == "q1_plus_q0":
                pre = pre + [(nq1 + e, 1.0, 0.0, 0.0)]
            wx = wy = 0.0
            if w is not None:
                for gi, v, _, _ in vel:
                    wx += w[gi] * v
                    wy += w[nq2 + gi] * v
            for (I, vi, dxi, dyi), (J, vj, dxj, dyj) in itertools.product(vel, vel):
                m = wt * vi * vj
                a = wt * nu * (dxi * dxj + dyi * dyj)
                c = wt * 0.5 * ((wx * dxj + wy * dyj) * vi - (wx * dxi + wy * dyi) * vj)
                for comp in (0, 1):
                    M[comp * nq2 + I, comp * nq2 + J] += m
                    A[comp * nq2 + I, comp * nq2 + J] += a
                    N[comp * nq2 + I, comp * nq2 + J] += c
            for (q, psi, _, _), (J, _, dxj, dyj) in itertools.product(pre, vel):
                B[q, J] += wt * psi * dxj
                B[q, nq2 + J] += wt * psi * dyj
    return M, A, B, N


@dataclass
class CheckResult:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.tol)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.value:.3e} (tol {self.tol:.0e})"


def check_skew_symmetry(n: int = 8, trials: int = 100, seed: int = 0) -> float:
    """max |v^T N(w) v| / |v|^2 over random w, v."""
    rng = np.random.default_rng(seed)
    space = build_space(build_uniform_mesh(n))
    worst = 0.0
    for _ in range(trials):
        w = rng.standard_normal(space.n_velocity)
        v = rng.standard_normal(space.n_velocity)
        N = assemble_convection(space, w)
        worst = max(worst, abs(v @ (N @ v)) / (v @ v))
    return worst


def check_assembly_oracle(n: int = 2, seed: int = 0, pressure_space: str = "q1") -> dict:
    rng = np.random.default_rng(seed)
    space = build_space(build_uniform_mesh(n), pressure_space)
    w = rng.standard_normal(space.n_velocity)
    nu = 0.37
    M, A, B, N = dense_operators(n, nu, w, pressure_space)
    return {
        "M": float(np.max(np.abs(assemble_mass(space).toarray() - M))),
        "A": float(np.max(np.abs(assemble_stiffness(space, nu).toarray() - A))),
        "B": float(np.max(np.abs(assemble_divergence(space).toarray() - B))),
        "N": float(np.max(np.abs(assemble_convection(space, w).toarray() - N))),
    }


def check_shape_gradients(seed: int = 0, samples: int = 20, step: float = 1e-6) -> float:
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1 + step, 1 - step, size=(samples, 2))
    worst = 0.0
    for elem in (Q2, Q1, Q0):
        g = elem.shape_grad(pts)
        for d in range(2):
            e = np.zeros(2)
            e[d] = step
            fd = (elem.shape_eval(pts + e) - elem.shape_eval(pts - e)) / (2 * step)
            worst = max(worst, float(np.max(np.abs(fd - g[..., d]))))
    return worst


def check_quadrature() -> float:
    """Error of the 3x3 rule on x^4 y^4 over the unit cell (exact value 1/25)."""
    rule = gauss_rule(3)
    x = (rule.points + 1) / 2
    approx = float(np.sum(rule.weights / 4 * x[:, 0] ** 4 * x[:, 1] ** 4))
    return abs(approx - 1 / 25)


def check_prolongation(seed: int = 0, n_coarse: int = 3, ratio: int = 2, samples: int = 50) -> float:
    rng = np.random.default_rng(seed)
    hier = build_hierarchy(n_coarse, ratio)
    pts = rng.uniform(0.0, 1.0, size=(samples, 2))
    worst = 0.0
    for kind in ("q2", "q1", "q0"):
        _, cpts = scalar_dof_layout(hier.coarse, kind)
        c = rng.standard_normal(len(cpts))
        f = prolongate_field(hier, kind, c)
        diff = evaluate_scalar(hier.coarse, kind, c, pts) - evaluate_scalar(hier.fine, kind, f, pts)
        worst = max(worst, float(np.max(np.abs(diff))))
    return worst


def fd_forcing(sol, t, x, y, step: float = 1e-4):
    """u_t - nu lap u + (u.grad)u + grad p by central differences of u and p only."""
    def u(tt, xx, yy):
        return np.asarray(sol.velocity(tt, xx, yy))

    def p(tt, xx, yy):
        return np.asarray(sol.pressure(tt, xx, yy))

    k = step
    ut = (u(t + k, x, y) - u(t - k, x, y)) / (2 * k)
    ux = (u(t, x + k, y) - u(t, x - k, y)) / (2 * k)
    uy = (u(t, x, y + k) - u(t, x, y - k)) / (2 * k)
    lap = (u(t, x + k, y) + u(t, x - k, y) + u(t, x, y + k) + u(t, x, y - k) - 4 * u(t, x, y)) / k**2
    px = (p(t, x + k, y) - p(t, x - k, y)) / (2 * k)
    py = (p(t, x, y + k) - p(t, x, y - k)) / (2 * k)
    uu = u(t, x, y)
    return ut - sol.nu * lap + uu[0] * ux + uu[1] * uy + np.stack([px, py])


def check_manufactured(name: str, seed: int = 0, samples: int = 1000, forcing_samples: int = 200):
    """(max |div u|, max |u on boundary|, max forcing mismatch vs finite differences)."""
    rng = np.random.default_rng(seed)
    sol = manufactured_solution(name)
    t, x, y = rng.uniform(0, 4, samples), rng.uniform(0, 1, samples), rng.uniform(0, 1, samples)
    g = sol.velocity_grad(t, x, y)
    div = float(np.max(np.abs(g[0][0] + g[1][1])))
    s = rng.uniform(0, 1, samples)
    edges = [(np.zeros(samples), s), (np.ones(samples), s), (s, np.zeros(samples)), (s, np.ones(samples))]
    bnd = max(float(np.max(np.abs(np.asarray(sol.velocity(t, ex, ey))))) for ex, ey in edges)
    m = forcing_samples
    ft, fx, fy = rng.uniform(0, 4, m), rng.uniform(0.01, 0.99, m), rng.uniform(0.01, 0.99, m)
    fd = fd_forcing(sol, ft, fx, fy)
    an = np.asarray(sol.forcing(ft, fx, fy))
    return div, bnd, float(np.max(np.abs(fd - an)))


def run_all(seed: int = 0) -> list[CheckResult]:
    out = [CheckResult("trilinear skew-symmetry |v.N(w)v|/|v|^2 (8x8)", check_skew_symmetry(seed=seed), 1e-11)]
    for key, err in check_assembly_oracle(seed=seed).items():
        out.append(CheckResult(f"assembly vs dense oracle, {key} (2x2)", err, 1e-12))
    out.append(CheckResult("shape gradients vs finite differences", check_shape_gradients(seed), 1e-6))
    out.append(CheckResult("3x3 Gauss exactness on x^4 y^4", check_quadrature(), 1e-15))
    out.append(CheckResult("prolongation reproduces coarse functions", check_prolongation(seed), 1e-12))
    for name in ("test1", "test2"):
        div, bnd, fd = check_manufactured(name, seed)
        out.append(CheckResult(f"{name}: divergence of exact velocity", div, 1e-12))
        out.append(CheckResult(f"{name}: exact velocity on boundary", bnd, 1e-12))
        out.append(CheckResult(f"{name}: forcing vs finite differences", fd, 1e-6))
    return out
