"""Analytic Navier-Stokes solutions on the unit square and their forcing.

Derivatives are written out by hand; the test-suite cross-checks them
against finite differences and a computer-algebra expansion.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PI = np.pi


@dataclass(frozen=True)
class ManufacturedSolution:
    """Base class: subclasses supply u, u_t, grad u, lap u, p and grad p."""

    name: str
    nu: float

    def velocity(self, t, x, y):
        raise NotImplementedError

    def velocity_t(self, t, x, y):
        raise NotImplementedError

    def velocity_grad(self, t, x, y):
        """Nested tuple ``g[c][d] = d u_c / d x_d``."""
        raise NotImplementedError

    def velocity_laplacian(self, t, x, y):
        raise NotImplementedError

    def pressure(self, t, x, y):
        raise NotImplementedError

    def pressure_grad(self, t, x, y):
        raise NotImplementedError

    def forcing(self, t, x, y):
        """f = u_t - nu lap u + (u . grad) u + grad p."""
        u1, u2 = self.velocity(t, x, y)
        ut1, ut2 = self.velocity_t(t, x, y)
        (g11, g12), (g21, g22) = self.velocity_grad(t, x, y)
        l1, l2 = self.velocity_laplacian(t, x, y)
        px, py = self.pressure_grad(t, x, y)
        f1 = ut1 - self.nu * l1 + u1 * g11 + u2 * g12 + px
        f2 = ut2 - self.nu * l2 + u1 * g21 + u2 * g22 + py
        return f1, f2

    # solver-facing interface
    def initial_velocity(self, x, y):
        return self.velocity(0.0, x, y)

    def initial_pressure(self, x, y):
        return self.pressure(0.0, x, y)


class TrigonometricSolution(ManufacturedSolution):
    """u = sin t (sin^2(pi x) sin(pi y) cos(pi y), -sin(pi x) cos(pi x) sin^2(pi y)),
    p = sin t sin(pi x) cos(pi x) sin(pi y) cos(pi y).

    With a = 2 pi x, b = 2 pi y these become quarter products of
    (1 - cos a), sin a, (1 - cos b), sin b.
    """

    def __init__(self, nu: float = 0.1):
        super().__init__("test1", nu)

    def velocity(self, t, x, y):
        a, b = 2 * PI * x, 2 * PI * y
        s = np.sin(t)
        return (1 - np.cos(a)) * np.sin(b) / 4 * s, -np.sin(a) * (1 - np.cos(b)) / 4 * s

    def velocity_t(self, t, x, y):
        a, b = 2 * PI * x, 2 * PI * y
        c = np.cos(t)
        return (1 - np.cos(a)) * np.sin(b) / 4 * c, -np.sin(a) * (1 - np.cos(b)) / 4 * c

    def velocity_grad(self, t, x, y):
        a, b = 2 * PI * x, 2 * PI * y
        s = np.sin(t)
        sa, ca, sb, cb = np.sin(a), np.cos(a), np.sin(b), np.cos(b)
        return (
            (PI / 2 * sa * sb * s, PI / 2 * (1 - ca) * cb * s),
            (-PI / 2 * ca * (1 - cb) * s, -PI / 2 * sa * sb * s),
        )

    def velocity_laplacian(self, t, x, y):
        a, b = 2 * PI * x, 2 * PI * y
        s = np.sin(t)
        return (PI**2 * np.sin(b) * (2 * np.cos(a) - 1) * s,
                PI**2 * np.sin(a) * (1 - 2 * np.cos(b)) * s)

    def pressure(self, t, x, y):
        return np.sin(2 * PI * x) * np.sin(2 * PI * y) / 4 * np.sin(t)

    def pressure_grad(self, t, x, y):
        a, b = 2 * PI * x, 2 * PI * y
        s = np.sin(t)
        return PI / 2 * np.cos(a) * np.sin(b) * s, PI / 2 * np.sin(a) * np.cos(b) * s


def _g(s):
    return s * s * (s - 1) ** 2


def _g1(s):
    return 2 * s * (s - 1) * (2 * s - 1)


def _g2(s):
    return 2 * (6 * s * s - 6 * s + 1)


def _g3(s):
    return 12 * (2 * s - 1)


class PolynomialSolution(ManufacturedSolution):
    """u = 5 cos t (g(x) g'(y), -g'(x) g(y)) with g(s) = s^2 (s-1)^2, p = 0."""

    def __init__(self, nu: float = 1.0):
        super().__init__("test2", nu)

    def velocity(self, t, x, y):
        c = 5 * np.cos(t)
        return c * _g(x) * _g1(y), -c * _g1(x) * _g(y)

    def velocity_t(self, t, x, y):
        c = -5 * np.sin(t)
        return c * _g(x) * _g1(y), -c * _g1(x) * _g(y)

    def velocity_grad(self, t, x, y):
        c = 5 * np.cos(t)
        return (
            (c * _g1(x) * _g1(y), c * _g(x) * _g2(y)),
            (-c * _g2(x) * _g(y), -c * _g1(x) * _g1(y)),
        )

    def velocity_laplacian(self, t, x, y):
        c = 5 * np.cos(t)
        return (c * (_g2(x) * _g1(y) + _g(x) * _g3(y)),
                -c * (_g3(x) * _g(y) + _g1(x) * _g2(y)))

    def pressure(self, t, x, y):
        return np.zeros(np.broadcast(x, y).shape)

    def pressure_grad(self, t, x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z


def manufactured_solution(name: str, nu: float | None = None) -> ManufacturedSolution:
    if name == "test1":
        return TrigonometricSolution(0.1 if nu is None else nu)
    if name == "test2":
        return PolynomialSolution(1.0 if nu is None else nu)
    raise ValueError(f"unknown manufactured solution {name!r}")


def forcing_eval(sol: ManufacturedSolution, t, x, y):
    return sol.forcing(t, x, y)


@dataclass(frozen=True)
class UnforcedProblem:
    """Free decay from a given initial velocity, f = 0, p(0) = 0."""

    nu: float
    u0: object = None  # callable (x, y) -> (u1, u2); None means zero data
    name: str = "unforced"

    def initial_velocity(self, x, y):
        if self.u0 is None:
            z = np.zeros(np.broadcast(x, y).shape)
            return z, z
        return self.u0(x, y)

    def initial_pressure(self, x, y):
        return np.zeros(np.broadcast(x, y).shape)

    def forcing(self, t, x, y):
        z = np.zeros(np.broadcast(x, y).shape)
        return z, z
