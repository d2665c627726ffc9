"""Space-time error norms and convergence studies against manufactured solutions."""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .discretization.assembly import evaluate_at_quadrature, quadrature_points
from .discretization.elements import gauss_rule
from .discretization.space import FunctionSpace
from .geometry import build_hierarchy
from .manufactured import ManufacturedSolution, manufactured_solution
from .timestepping import LAMBDA1_UNIT_SQUARE, SchemeConfig, TimeGrid, check_energy_bound, simulate

STUDY_HEADER = [
    "test", "nu", "ratio", "level", "h", "dt",
    "E_u", "r_u", "theta_u", "E_p", "r_p", "theta_p",
    "E_gradu", "r_gradu", "theta_gradu", "energy_ok", "wall_seconds",
]
TRACE_HEADER = ["n", "t", "norm_u_coarse", "norm_u_fine", "div_residual", "energy_lhs", "energy_rhs"]


@dataclass(frozen=True)
class DtRule:
    """How the time step follows the fine mesh width h.

    ``dt_equals_h``, ``fixed`` (dt = value) or ``scaled`` (dt = c h^q).
    """

    kind: str = "dt_equals_h"
    value: float = 0.0
    c: float = 1.0
    q: float = 1.0

    @classmethod
    def parse(cls, text: str) -> "DtRule":
        text = text.strip()
        if text == "dt_equals_h":
            return cls()
        kind, _, args = text.partition(":")
        try:
            if kind == "fixed":
                v = float(args)
                if not v > 0:
                    raise ValueError
                return cls("fixed", value=v)
            if kind == "scaled":
                c, q = (float(a) for a in args.split(","))
                if not c > 0:
                    raise ValueError
                return cls("scaled", c=c, q=q)
        except ValueError:
            pass
        raise ValueError(f"invalid dt rule {text!r}; expected dt_equals_h, fixed:<dt> or scaled:<c>,<q>")

    def dt(self, h: float) -> float:
        if self.kind == "fixed":
            return self.value
        if self.kind == "scaled":
            return self.c * h**self.q
        return h

    def __str__(self):
        if self.kind == "fixed":
            return f"fixed:{self.value!r}"
        if self.kind == "scaled":
            return f"scaled:{self.c!r},{self.q!r}"
        return "dt_equals_h"


class ErrorAccumulator:
    """Running sums for E(u), E(grad u) and E(p) over the stored time levels.

    Exact fields are evaluated at the quadrature points used for assembly;
    nothing but the three sums is kept between steps.
    """

    def __init__(self, sol: ManufacturedSolution, dt: float, first_level: int = 0):
        self.sol = sol
        self.dt = dt
        self.first_level = first_level
        self.sum_u = self.sum_gu = self.sum_p = 0.0
        self.levels = 0

    def add(self, t: float, space: FunctionSpace, u, p):
        mesh = space.mesh
        uh, guh, ph = evaluate_at_quadrature(space, u, p)
        xq = quadrature_points(mesh)
        X, Y = xq[..., 0], xq[..., 1]
        w = gauss_rule(3).weights * (mesh.spacing**2 / 4.0)
        ue = np.stack(self.sol.velocity(t, X, Y), axis=-1)
        ge = np.asarray(self.sol.velocity_grad(t, X, Y), dtype=float).transpose(2, 3, 0, 1)
        pe = self.sol.pressure(t, X, Y)
        self.sum_u += float(np.sum(((uh - ue) ** 2).sum(-1) * w))
        self.sum_gu += float(np.sum(((guh - ge) ** 2).sum((-1, -2)) * w))
        self.sum_p += float(np.sum((ph - pe) ** 2 * w))
        self.levels += 1

    def __call__(self, n, t, coarse, fine, fine_ops):
        if n >= self.first_level:
            self.add(t, fine_ops.space, fine.u_curr, fine.p_curr)

    def norms(self) -> tuple[float, float, float]:
        """(E_u, E_gradu, E_p)."""
        if self.levels == 0:
            raise ValueError("no snapshots accumulated")
        return (math.sqrt(self.dt * self.sum_u),
                math.sqrt(self.sol.nu * self.dt * self.sum_gu),
                math.sqrt(self.dt * self.sum_p))


def error_norms(snapshots, sol: ManufacturedSolution, space: FunctionSpace, time_grid: TimeGrid):
    """E_u, E_gradu, E_p from ``snapshots``: a sequence of (u, p) for n = 0..N."""
    snapshots = list(snapshots)
    if len(snapshots) != time_grid.N + 1:
        raise ValueError(f"expected {time_grid.N + 1} snapshots, got {len(snapshots)}")
    acc = ErrorAccumulator(sol, time_grid.dt)
    for n, (u, p) in enumerate(snapshots):
        acc.add(time_grid.t(n), space, u, p)
    return acc.norms()


@dataclass
class LevelResult:
    level: int
    h: float
    dt: float
    E_u: float = math.nan
    E_gradu: float = math.nan
    E_p: float = math.nan
    energy_ok: bool = False
    energy_ok_presets: dict = field(default_factory=dict)
    energy_worst: dict = field(default_factory=dict)
    max_div_residual: float = math.nan
    cfl_limit: float = math.nan
    cfl_ratio: float = math.nan
    wall_seconds: float = 0.0
    failed: bool = False
    error: str = ""
    trace: list = field(default_factory=list)


@dataclass
class ConvergenceRow:
    level: int
    h: float
    dt: float
    E_u: float
    E_p: float
    E_gradu: float
    r_u: float | None = None
    r_p: float | None = None
    r_gradu: float | None = None
    energy_ok: bool = True
    wall_seconds: float = 0.0
    failed: bool = False

    @staticmethod
    def theta(r):
        return None if r is None else math.log2(r)

    @property
    def theta_u(self):
        return self.theta(self.r_u)

    @property
    def theta_p(self):
        return self.theta(self.r_p)

    @property
    def theta_gradu(self):
        return self.theta(self.r_gradu)


def _ratio(prev, cur):
    if prev is None or not (math.isfinite(prev) and math.isfinite(cur)) or cur <= 0:
        return None
    return prev / cur


def convergence_rows(results: list[LevelResult]) -> list[ConvergenceRow]:
    rows, prev = [], None
    for res in results:
        row = ConvergenceRow(res.level, res.h, res.dt, res.E_u, res.E_p, res.E_gradu,
                             energy_ok=res.energy_ok, wall_seconds=res.wall_seconds, failed=res.failed)
        if prev is not None and not prev.failed and not res.failed:
            row.r_u = _ratio(prev.E_u, res.E_u)
            row.r_p = _ratio(prev.E_p, res.E_p)
            row.r_gradu = _ratio(prev.E_gradu, res.E_gradu)
        rows.append(row)
        prev = res
    return rows


@dataclass(frozen=True)
class LevelTask:
    test: str
    nu: float
    T: float
    level: int
    ratio: int
    dt: float
    scheme: SchemeConfig
    pressure_space: str = "q1"
    lambda1: float = LAMBDA1_UNIT_SQUARE
    slack: float = 1.05
    trace: bool = False
    error_first_level: int = 0


LAMBDA1_PRESETS = {"one": 1.0, "2pi2": LAMBDA1_UNIT_SQUARE}


def run_level(task: LevelTask) -> LevelResult:
    """One full two-level run with error accumulation; failures are captured."""
    h = 1.0 / task.level
    res = LevelResult(task.level, h, task.dt)
    t0 = time.perf_counter()
    try:
        if task.level % task.ratio:
            raise ValueError(f"level {task.level} is not divisible by ratio {task.ratio}")
        sol = manufactured_solution(task.test, task.nu)
        acc = ErrorAccumulator(sol, task.dt, task.error_first_level)
        hier = build_hierarchy(task.level // task.ratio, task.ratio)
        run = simulate(sol, hier, task.T, task.dt, task.scheme, task.pressure_space,
                       task.lambda1, task.slack, on_step=acc, trace=task.trace)
        res.E_u, res.E_gradu, res.E_p = acc.norms()
        res.energy_ok = run.energy_ok
        for name, lam in {"configured": task.lambda1, **LAMBDA1_PRESETS}.items():
            worst, ok = 0.0, True
            for N in range(1, len(run.ledger) + 1):
                lhs, rhs, holds = check_energy_bound(run.ledger, N, lambda1=lam, slack=task.slack)
                ok &= holds
                if rhs > 0:
                    worst = max(worst, lhs / rhs)
            res.energy_ok_presets[name] = ok
            res.energy_worst[name] = worst
        res.max_div_residual = run.max_div_residual
        res.cfl_limit, res.cfl_ratio = run.cfl_limit, run.cfl_ratio
        res.trace = run.trace
    except Exception as exc:  # a failed level is reported, the study goes on
        res.failed = True
        res.error = f"{type(exc).__name__}: {exc}"
    res.wall_seconds = time.perf_counter() - t0
    return res


def convergence_study(tasks: list[LevelTask], jobs: int = 1, runner=run_level):
    """Run ``tasks`` (coarse to fine) and return (level results, convergence rows).

    With ``jobs > 1`` levels run in worker processes; results stay in task order.
    """
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(runner, tasks))
    else:
        results = [runner(t) for t in tasks]
    return results, convergence_rows(results)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    return f"{x:.10e}"


def study_csv(rows: list[ConvergenceRow], test: str, nu: float, ratio: int,
              record_timing: bool = False) -> str:
    """Study table as CSV text.  ``wall_seconds`` is left empty unless
    ``record_timing`` is set, so repeated runs give identical bytes."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STUDY_HEADER)
    for r in rows:
        energy = "failed" if r.failed else _fmt(bool(r.energy_ok))
        w.writerow([test, _fmt(float(nu)), ratio, r.level, _fmt(r.h), _fmt(r.dt),
                    _fmt(r.E_u), _fmt(r.r_u), _fmt(r.theta_u),
                    _fmt(r.E_p), _fmt(r.r_p), _fmt(r.theta_p),
                    _fmt(r.E_gradu), _fmt(r.r_gradu), _fmt(r.theta_gradu),
                    energy, _fmt(r.wall_seconds) if record_timing else ""])
    return buf.getvalue()


def trace_csv(trace_rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_HEADER)
    for n, t, *vals in trace_rows:
        w.writerow([n, _fmt(float(t))] + [_fmt(float(v)) for v in vals])
    return buf.getvalue()
