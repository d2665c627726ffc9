"""MacCormack predictor/corrector (coarse), three-level Crank-Nicolson (fine)
and the coupled two-level driver, with an energy monitor on the coarse run.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .discretization import (
    assemble_divergence,
    assemble_mass,
    assemble_pressure_mass,
    assemble_stiffness,
    build_space,
    convection_vector,
    load_vector,
    mean_rows,
    project_divergence_free,
    project_pressure,
)
from .discretization.assembly import quadrature_points
from .discretization.elements import gauss_rule
from .discretization.space import FunctionSpace
from .geometry import QuadMesh, TwoLevelHierarchy, prolongation_matrix
from .sparse_linalg import DEFAULT_TOL, SaddleSolver, SolverError, SPDSolver

logger = logging.getLogger(__name__)

LAMBDA1_UNIT_SQUARE = 2 * math.pi**2


class InstabilityError(SolverError):
    """Non-finite values appeared in a time step."""


@dataclass(frozen=True)
class SchemeConfig:
    """Variant switches for the two-level scheme.

    viscous_theta
        0 reproduces the fully explicit MacCormack viscous term; 1/2 averages
        it between old and new levels (unconditionally stable).
    predictor_pressure
        ``"projected"`` solves the predictor as a mass saddle problem so the
        predicted velocity is discretely divergence-free; ``"literal"`` uses
        the known pressure and no constraint.
    bootstrap
        ``"maccormack"`` (one predictor/corrector step on the fine mesh) or
        ``"backward_euler"`` (two half steps).
    predicted_time
        Time at which the corrector forcing is sampled: ``"full"`` (t^{n+1},
        second order) or ``"half"`` (t^n + dt/2, first order).
    """

    viscous_theta: float = 0.5
    predictor_pressure: str = "projected"
    bootstrap: str = "maccormack"
    predicted_time: str = "full"
    solver_tol: float = DEFAULT_TOL
    solver_method: str = "direct"

    def __post_init__(self):
        if self.viscous_theta not in (0.0, 0.5):
            raise ValueError(f"viscous_theta must be 0 or 0.5, got {self.viscous_theta!r}")
        if self.predictor_pressure not in ("projected", "literal"):
            raise ValueError(f"unknown predictor_pressure {self.predictor_pressure!r}")
        if self.bootstrap not in ("maccormack", "backward_euler"):
            raise ValueError(f"unknown bootstrap {self.bootstrap!r}")
        if self.predicted_time not in ("full", "half"):
            raise ValueError(f"unknown predicted_time {self.predicted_time!r}")
        if not self.solver_tol > 0:
            raise ValueError("solver_tol must be positive")


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    T: float
    N: int

    @classmethod
    def from_step(cls, dt: float, T: float) -> "TimeGrid":
        if not (dt > 0 and T > 0):
            raise ValueError("dt and T must be positive")
        N = int(round(T / dt))
        if N < 1 or abs(N * dt - T) > 4 * np.spacing(T):
            raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
        return cls(dt, T, N)

    def t(self, n: float) -> float:
        return n * self.dt

    def t_half(self, n: int) -> float:
        """Time of the predicted level between t^n and t^{n+1}."""
        return n * self.dt + 0.5 * self.dt


class LevelOperators:
    """Assembled operators of one mesh level plus cached factorisations."""

    def __init__(self, mesh: QuadMesh, nu: float, pressure_space: str = "q1",
                 solver_method: str = "direct"):
        self.mesh = mesh
        self.nu = nu
        self.space: FunctionSpace = build_space(mesh, pressure_space)
        self.M = assemble_mass(self.space)
        self.A = assemble_stiffness(self.space, nu)
        self.B = assemble_divergence(self.space)
        self.C = mean_rows(self.space)
        self.mask = self.space.dirichlet_mask
        self.solver_method = solver_method
        self._solvers: dict = {}

    def saddle_solver(self, key, K) -> SaddleSolver:
        if key not in self._solvers:
            Mp = assemble_pressure_mass(self.space) if self.solver_method == "iterative" else None
            self._solvers[key] = SaddleSolver(K, self.B, self.C, self.mask, self.solver_method, Mp)
        return self._solvers[key]

    def spd_solver(self, key, K) -> SPDSolver:
        if key not in self._solvers:
            keep = sp.diags((~self.mask).astype(float))
            Kd = keep @ K @ keep + sp.diags(self.mask.astype(float))
            self._solvers[key] = SPDSolver(Kd, self.solver_method)
        return self._solvers[key]

    def load(self, problem, t: float) -> np.ndarray:
        return load_vector(self.space, lambda x, y: problem.forcing(t, x, y))

    def l2_sq(self, u) -> float:
        return float(u @ (self.M @ u))

    def energy_sq(self, u) -> float:
        """||u||_W^2 = nu ||grad u||^2."""
        return float(u @ (self.A @ u))

    def div_residual(self, u) -> float:
        return float(np.max(np.abs(self.B @ u), initial=0.0))


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InstabilityError("non-finite values in time step (explicit CFL limit exceeded?)")


# -- coarse level ------------------------------------------------------------

@dataclass
class CoarseState:
    u_n: np.ndarray
    p_n: np.ndarray
    u_pred: np.ndarray
    p_pred: np.ndarray
    n: int = 0
    p_stage: np.ndarray | None = None  # predictor multiplier, kept for diagnostics


def maccormack_predictor(state: CoarseState, ops: LevelOperators, load_n, dt: float,
                         scheme: SchemeConfig = SchemeConfig()):
    """Predicted velocity from level n; returns ``(u_pred, p_stage)``.

        M (u* - u^n)/dt + A (theta u* + (1-theta) u^n) + N(u^n) u^n - B^T p = F^n
    """
    th = scheme.viscous_theta
    K = ops.M / dt + th * ops.A if th else ops.M / dt
    rhs = load_n + ops.M @ state.u_n / dt - convection_vector(ops.space, state.u_n)
    if th != 1.0:
        rhs = rhs - (1.0 - th) * (ops.A @ state.u_n)
    if scheme.predictor_pressure == "literal":
        rhs = np.where(ops.mask, 0.0, rhs + ops.B.T @ state.p_n)
        u = ops.spd_solver(("pred_spd", dt, th), K).solve(rhs, scheme.solver_tol)
        p = state.p_n.copy()
    else:
        u, p = ops.saddle_solver(("pred", dt, th), K).solve(rhs, None, scheme.solver_tol)
    _check_finite(u, p)
    return u, p


def maccormack_corrector(state: CoarseState, ops: LevelOperators, load_half, dt: float,
                         scheme: SchemeConfig = SchemeConfig()):
    """Corrected velocity at level n+1 and the predicted-level pressure.

        M (u^{n+1} - (u* + u^n)/2) / (dt/2)
          + A (theta u^{n+1} + theta u^n + (1 - 2 theta) u*) + N(u*) u* - B^T p = F^{n+1/2}

    with B u^{n+1} = 0.  theta = 0 is the literal corrector.
    """
    th = scheme.viscous_theta
    K = 2.0 * ops.M / dt + th * ops.A if th else 2.0 * ops.M / dt
    rhs = (load_half + ops.M @ (state.u_pred + state.u_n) / dt
           - convection_vector(ops.space, state.u_pred))
    if th:
        rhs = rhs - th * (ops.A @ state.u_n)
    if 1.0 - 2.0 * th:
        rhs = rhs - (1.0 - 2.0 * th) * (ops.A @ state.u_pred)
    u, p = ops.saddle_solver(("corr", dt, th), K).solve(rhs, None, scheme.solver_tol)
    _check_finite(u, p)
    return u, p


def maccormack_step(state: CoarseState, ops: LevelOperators, problem, dt: float,
                    scheme: SchemeConfig = SchemeConfig(), ledger: "EnergyLedger | None" = None,
                    forcing_norms: Callable[[float], float] | None = None) -> CoarseState:
    n = state.n
    t_n = n * dt
    t_half = t_n + (dt if scheme.predicted_time == "full" else 0.5 * dt)
    u_pred, p_stage = maccormack_predictor(state, ops, ops.load(problem, t_n), dt, scheme)
    mid = replace(state, u_pred=u_pred, p_stage=p_stage)
    u_next, p_bar = maccormack_corrector(mid, ops, ops.load(problem, t_half), dt, scheme)
    if ledger is not None:
        fn = forcing_norms or (lambda t: 0.0)
        ledger.append(
            u_n_sq=ops.l2_sq(state.u_n), u_n_w=ops.energy_sq(state.u_n),
            u_pred_sq=ops.l2_sq(u_pred), u_pred_w=ops.energy_sq(u_pred),
            u_next_sq=ops.l2_sq(u_next), f_n_sq=fn(t_n), f_half_sq=fn(t_half),
        )
    return CoarseState(u_next, p_bar, u_pred, p_bar, n + 1, p_stage)


# -- fine level --------------------------------------------------------------

@dataclass
class FineState:
    u_prev: np.ndarray | None
    u_curr: np.ndarray
    p_prev: np.ndarray | None
    p_curr: np.ndarray
    n: int = 0
    u_next: np.ndarray | None = None
    p_next: np.ndarray | None = None


def crank_nicolson_step(state: FineState, coarse_velocity_on_fine, ops: LevelOperators,
                        load_next, dt: float, scheme: SchemeConfig = SchemeConfig()) -> FineState:
    """Three-level step from (u^{n-1}, u^n) to u^{n+1}.

    The time derivative uses u^n ~ (u^{n+1} + u^{n-1})/2, giving

        M (u^{n+1} - u^{n-1}) / (2 dt) + A (u^{n+1} + u^{n-1})/2
          + N(w) w - B^T P = F^{n+1},   B (u^{n+1} + u^{n-1})/2 = 0,

    with w the prolongated coarse velocity and P = (p^{n+1} + p^{n-1})/2.
    """
    if state.n < 1 or state.u_prev is None:
        raise ValueError("Crank-Nicolson step needs two history levels; bootstrap first")
    K = ops.M / (2.0 * dt) + 0.5 * ops.A
    rhs = (load_next + ops.M @ state.u_prev / (2.0 * dt) - 0.5 * (ops.A @ state.u_prev)
           - convection_vector(ops.space, coarse_velocity_on_fine))
    g = -(ops.B @ state.u_prev)
    u, P = ops.saddle_solver(("cn", dt), K).solve(rhs, g, scheme.solver_tol)
    p = 2.0 * P - state.p_prev
    _check_finite(u, p)
    return FineState(state.u_curr, u, state.p_curr, p, state.n + 1, u, p)


def _backward_euler_bootstrap(u0, ops: LevelOperators, problem, dt: float, scheme: SchemeConfig):
    tau = 0.5 * dt
    K = ops.M / tau + ops.A
    solver = ops.saddle_solver(("be", tau), K)
    u, p = u0, None
    for k in (1, 2):
        rhs = ops.load(problem, k * tau) + ops.M @ u / tau - convection_vector(ops.space, u)
        u, p = solver.solve(rhs, None, scheme.solver_tol)
    _check_finite(u, p)
    return u, p


def initial_states(problem, coarse_ops: LevelOperators, fine_ops: LevelOperators,
                   scheme: SchemeConfig = SchemeConfig()):
    """Level-0 states from projections of the initial data.

    Velocities are projected onto the discretely divergence-free subspace so
    that the schemes start inside it.
    """
    def u0(x, y):
        return problem.initial_velocity(x, y)

    def p0(x, y):
        return problem.initial_pressure(x, y)

    uH = project_divergence_free(coarse_ops.space, u0, scheme.solver_tol)
    pH = project_pressure(coarse_ops.space, p0)
    uh = project_divergence_free(fine_ops.space, u0, scheme.solver_tol)
    ph = project_pressure(fine_ops.space, p0)
    coarse = CoarseState(uH, pH, uH.copy(), pH.copy(), 0)
    fine = FineState(None, uh, None, ph, 0)
    return coarse, fine


def bootstrap_first_step(coarse: CoarseState, fine: FineState, coarse_ops: LevelOperators,
                         fine_ops: LevelOperators, problem, dt: float,
                         scheme: SchemeConfig = SchemeConfig(), ledger=None, forcing_norms=None):
    """Advance both levels from n = 0 to n = 1.

    The coarse level takes an ordinary MacCormack step.  The fine level,
    which needs two history levels for Crank-Nicolson, is started either by
    one MacCormack step on the fine mesh or by two backward-Euler half steps.
    """
    if coarse.n != 0 or fine.n != 0:
        raise ValueError("bootstrap expects states at n = 0")
    coarse1 = maccormack_step(coarse, coarse_ops, problem, dt, scheme, ledger, forcing_norms)
    if scheme.bootstrap == "maccormack":
        tmp = CoarseState(fine.u_curr, fine.p_curr, fine.u_curr, fine.p_curr, 0)
        f1 = maccormack_step(tmp, fine_ops, problem, dt, scheme)
        uh1, ph1 = f1.u_n, f1.p_n
    else:
        uh1, ph1 = _backward_euler_bootstrap(fine.u_curr, fine_ops, problem, dt, scheme)
    fine1 = FineState(fine.u_curr, uh1, fine.p_curr, ph1, 1, uh1, ph1)
    return coarse1, fine1


def mcrs_step(coarse: CoarseState, fine: FineState, prolong: sp.spmatrix,
              coarse_ops: LevelOperators, fine_ops: LevelOperators, problem, dt: float,
              scheme: SchemeConfig = SchemeConfig(), ledger=None, forcing_norms=None):
    """One two-level step n -> n+1 (n >= 1).

    ``prolong`` is the coarse-to-fine velocity interpolation matrix (see
    :func:`mcrs.geometry.prolongation_matrix`).
    """
    if coarse.n != fine.n or fine.n < 1:
        raise ValueError(f"incompatible step indices coarse={coarse.n}, fine={fine.n}")
    w = prolong @ coarse.u_n
    t_next = (fine.n + 1) * dt
    fine_next = crank_nicolson_step(fine, w, fine_ops, fine_ops.load(problem, t_next), dt, scheme)
    coarse_next = maccormack_step(coarse, coarse_ops, problem, dt, scheme, ledger, forcing_norms)
    return coarse_next, fine_next


# -- energy monitor ----------------------------------------------------------

@dataclass
class EnergyLedger:
    """Per-step norms of the coarse run; index k holds step k -> k+1."""

    nu: float
    dt: float
    lambda1: float = LAMBDA1_UNIT_SQUARE
    slack: float = 1.05
    u0_sq: float | None = None
    records: dict = field(default_factory=lambda: {k: [] for k in (
        "u_n_sq", "u_n_w", "u_pred_sq", "u_pred_w", "u_next_sq", "f_n_sq", "f_half_sq")})

    def append(self, **values):
        if self.u0_sq is None:
            self.u0_sq = values["u_n_sq"]
        for k, lst in self.records.items():
            lst.append(float(values[k]))

    def __len__(self):
        return len(self.records["u_n_sq"])


def check_energy_bound(ledger: EnergyLedger, N: int, lambda1: float | None = None,
                       slack: float | None = None) -> tuple[float, float, bool]:
    """Both sides of the coarse-level energy inequality at step N >= 1.

        3|u^N|^2 + |u*^N|^2 + 2 nu dt sum_{n<N} (|u^n|_W^2 + |u*^{n+1}|_W^2)
          <= 2 dt / (lambda1 nu^2) sum_{n<N} (|f^{n+1/2}|^2 + |f^n|^2) + 4 |u^0|^2
    """
    if N < 1 or N > len(ledger):
        raise ValueError(f"ledger holds {len(ledger)} steps, cannot evaluate N={N}")
    lam = ledger.lambda1 if lambda1 is None else lambda1
    slack = ledger.slack if slack is None else slack
    r = {k: np.asarray(v[:N]) for k, v in ledger.records.items()}
    nu, dt = ledger.nu, ledger.dt
    lhs = (3 * r["u_next_sq"][-1] + r["u_pred_sq"][-1]
           + 2 * nu * dt * float(np.sum(r["u_n_w"] + r["u_pred_w"])))
    rhs = 2 * dt / (lam * nu**2) * float(np.sum(r["f_half_sq"] + r["f_n_sq"])) + 4 * ledger.u0_sq
    return float(lhs), float(rhs), bool(lhs <= slack * rhs)


def cfl_diagnostic(H: float, nu: float, dt: float) -> tuple[float, float]:
    """Heuristic explicit-diffusion limit H^2/(4 nu) and dt relative to it."""
    if not (H > 0 and nu > 0 and dt > 0):
        raise ValueError("H, nu and dt must be positive")
    limit = H * H / (4.0 * nu)
    return limit, dt / limit


def field_norm_sq(mesh: QuadMesh, field_fn) -> float:
    """Squared L2 norm of a vector field by 3x3 Gauss quadrature."""
    xq = quadrature_points(mesh)
    f1, f2 = field_fn(xq[..., 0], xq[..., 1])
    w = gauss_rule(3).weights * (mesh.spacing**2 / 4.0)
    return float(np.sum((np.asarray(f1) ** 2 + np.asarray(f2) ** 2) * w))


# -- driver ------------------------------------------------------------------

@dataclass
class RunResult:
    coarse: CoarseState
    fine: FineState
    ledger: EnergyLedger
    time_grid: TimeGrid
    max_div_residual: float
    energy_ok: bool
    cfl_limit: float
    cfl_ratio: float
    trace: list = field(default_factory=list)


def simulate(problem, hierarchy: TwoLevelHierarchy, T: float, dt: float,
             scheme: SchemeConfig = SchemeConfig(), pressure_space: str = "q1",
             lambda1: float = LAMBDA1_UNIT_SQUARE, slack: float = 1.05,
             on_step: Callable | None = None, trace: bool = False) -> RunResult:
    """Integrate ``problem`` to time T with the two-level scheme.

    ``on_step(n, t, coarse, fine, fine_ops)`` is called at every level
    n = 0..N after the states are available.
    """
    grid = TimeGrid.from_step(dt, T)
    nu = problem.nu
    cops = LevelOperators(hierarchy.coarse, nu, pressure_space, scheme.solver_method)
    fops = LevelOperators(hierarchy.fine, nu, pressure_space, scheme.solver_method)
    limit, ratio = cfl_diagnostic(hierarchy.coarse.spacing, nu, dt)
    if scheme.viscous_theta == 0.0 and ratio >= 1.0:
        logger.warning("explicit viscous step: dt/limit = %.3g >= 1 (limit %.3g)", ratio, limit)
    P = prolongation_matrix(hierarchy, "velocity")
    ledger = EnergyLedger(nu, dt, lambda1, slack)

    def fnorm(t):
        return field_norm_sq(hierarchy.coarse, lambda x, y: problem.forcing(t, x, y))

    coarse, fine = initial_states(problem, cops, fops, scheme)
    max_div = 0.0
    energy_ok = True
    rows = []

    def observe(n):
        nonlocal max_div, energy_ok
        div = max(cops.div_residual(coarse.u_n), cops.div_residual(coarse.u_pred),
                  fops.div_residual(fine.u_curr))
        max_div = max(max_div, div)
        lhs = rhs = 0.0
        if n >= 1:
            lhs, rhs, ok = check_energy_bound(ledger, n)
            energy_ok &= ok
        if on_step is not None:
            on_step(n, grid.t(n), coarse, fine, fops)
        if trace:
            rows.append((n, grid.t(n), math.sqrt(cops.l2_sq(coarse.u_n)),
                         math.sqrt(fops.l2_sq(fine.u_curr)), div, lhs, rhs))

    observe(0)
    coarse, fine = bootstrap_first_step(coarse, fine, cops, fops, problem, dt, scheme, ledger, fnorm)
    observe(1)
    for n in range(1, grid.N):
        coarse, fine = mcrs_step(coarse, fine, P, cops, fops, problem, dt, scheme, ledger, fnorm)
        observe(n + 1)
    return RunResult(coarse, fine, ledger, grid, max_div, energy_ok, limit, ratio, rows)
