"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the output)
or directly with ``python tests/test_acceptance.py``.
"""
import math
import subprocess
import sys
import time
from functools import lru_cache

import numpy as np
import pytest

from mcrs.checks import (
    check_assembly_oracle,
    check_manufactured,
    check_prolongation,
    check_quadrature,
    check_shape_gradients,
    check_skew_symmetry,
)
from mcrs.discretization import project_divergence_free
from mcrs.geometry import build_hierarchy
from mcrs.manufactured import UnforcedProblem, manufactured_solution
from mcrs.timestepping import LevelOperators, SchemeConfig, bootstrap_first_step, initial_states, simulate
from mcrs.verification import LevelTask, convergence_study

LEVELS = (8, 16, 32)
T_FINAL = 4.0
# published reference errors at dt = h = 2^-3, 2^-4, 2^-5 (informational only)
REF_TEST1_EU = (0.3715, 0.1848, 0.0921)
REF_TEST1_EP = (0.1857, 0.0924, 0.0461)
REF_TEST2_EU = (0.7921, 0.3923, 0.1952)


def report(number, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    print(line, flush=True)
    return passed


@lru_cache(maxsize=None)
def study(test):
    nu = {"test1": 0.1, "test2": 1.0}[test]
    tasks = [LevelTask(test, nu, T_FINAL, n, 2, 1.0 / n, SchemeConfig(viscous_theta=0.5)) for n in LEVELS]
    start = time.perf_counter()
    results, rows = convergence_study(tasks)
    return results, rows, time.perf_counter() - start


def criterion_1():
    start = time.perf_counter()
    values = {"skew": (check_skew_symmetry(8, 100), 1e-11)}
    for key, err in check_assembly_oracle(2).items():
        values[f"oracle {key}"] = (err, 1e-12)
    values["shape grad FD"] = (check_shape_gradients(), 1e-6)
    values["quadrature x^4y^4"] = (check_quadrature(), 4 * np.finfo(float).eps * (1 / 25))
    values["prolongation"] = (check_prolongation(), 1e-12)
    elapsed = time.perf_counter() - start
    ok = all(v <= tol for v, tol in values.values()) and elapsed < 60
    worst = ", ".join(f"{k}={v:.1e}" for k, (v, _) in values.items())
    return report(1, ok, f"property suite in {elapsed:.1f}s ({worst})")


def criterion_2():
    parts, ok = [], True
    for name in ("test1", "test2"):
        div, bnd, fd = check_manufactured(name, seed=2024, samples=1000, forcing_samples=200)
        ok &= div <= 1e-12 and bnd <= 1e-12 and fd <= 1e-6
        parts.append(f"{name}: div={div:.1e} bnd={bnd:.1e} fd={fd:.1e}")
    return report(2, ok, "; ".join(parts))


def _trend(rows, key):
    return [getattr(r, key) for r in rows]


def criterion_3():
    results, rows, elapsed = study("test2")
    E = _trend(rows, "E_u")
    ratios = [r.r_u for r in rows[1:]]
    ok = (not any(r.failed for r in results)
          and all(a > b for a, b in zip(E, E[1:]))
          and all(r is not None and 1.7 <= r <= 4.3 for r in ratios))
    regime = "second-order (r~4)" if ratios and min(ratios) > 3.0 else "first-order pattern (r~2)"
    detail = (f"test2 E_u={['%.4e' % e for e in E]} r_u={['%.3f' % r for r in ratios]} "
              f"regime={regime} ref E_u={REF_TEST2_EU} ({elapsed:.0f}s)")
    return report(3, ok, detail)


def criterion_4():
    results, rows, elapsed = study("test1")
    Eu, Ep, Eg = _trend(rows, "E_u"), _trend(rows, "E_p"), _trend(rows, "E_gradu")
    ok = (not any(r.failed for r in results)
          and all(a > b for a, b in zip(Eu, Eu[1:]))
          and all(a > b for a, b in zip(Ep, Ep[1:])))
    detail = (f"test1 E_u={['%.4e' % e for e in Eu]} (ref {REF_TEST1_EU}) "
              f"r_u={['%.3f' % r.r_u for r in rows[1:]]} (ref ~2.01); "
              f"E_p={['%.4e' % e for e in Ep]} (ref {REF_TEST1_EP}) "
              f"r_p={['%.3f' % r.r_p for r in rows[1:]]}; "
              f"r_gradu={['%.3f' % r.r_gradu for r in rows[1:]]} (ref ~1.42) ({elapsed:.0f}s)")
    return report(4, ok, detail)


def criterion_5():
    ok, parts = True, []
    for test in ("test2", "test1"):
        results, _, _ = study(test)
        for res in results:
            both = res.energy_ok_presets.get("one", False) and res.energy_ok_presets.get("2pi2", False)
            ok &= bool(both and res.energy_ok)
            parts.append(f"{test}/n={res.level}: max lhs/rhs 1={res.energy_worst.get('one', math.nan):.3f} "
                         f"2pi2={res.energy_worst.get('2pi2', math.nan):.3f}")
    return report(5, ok, "slack 1.05; " + "; ".join(parts))


def criterion_6():
    worst = 0.0
    ok = True
    for test in ("test2", "test1"):
        results, _, _ = study(test)
        for res in results:
            ok &= not res.failed and res.max_div_residual <= 1e-9
            worst = max(worst, res.max_div_residual)
    return report(6, ok, f"max |Bu| over all stored levels = {worst:.2e} (tol 1e-9)")


def criterion_7():
    res = simulate(UnforcedProblem(0.1), build_hierarchy(4, 2), T=50 * 0.05, dt=0.05)
    norms = [np.max(np.abs(a)) for a in (res.coarse.u_n, res.coarse.u_pred, res.coarse.p_n,
                                          res.fine.u_curr, res.fine.u_prev, res.fine.p_curr)]
    ok = res.time_grid.N == 50 and max(norms) <= 1e-13
    return report(7, ok, f"{res.time_grid.N} steps, max state entry {max(norms):.1e} (tol 1e-13)")


def criterion_8():
    sol = manufactured_solution("test1")
    hier = build_hierarchy(8, 2)  # fine h = 1/16
    cops, fops = LevelOperators(hier.coarse, sol.nu), LevelOperators(hier.fine, sol.nu)
    scheme = SchemeConfig()
    errs = []
    for dt in (1 / 16, 1 / 32):
        c, f = initial_states(sol, cops, fops, scheme)
        _, f1 = bootstrap_first_step(c, f, cops, fops, sol, dt, scheme)
        exact = project_divergence_free(fops.space, lambda x, y: sol.velocity(dt, x, y))
        errs.append(math.sqrt(fops.l2_sq(f1.u_curr - exact)))
    factor = errs[0] / errs[1]
    return report(8, factor >= 3.5, f"h=1/16, dt 1/16 -> 1/32: error {errs[0]:.3e} -> {errs[1]:.3e}, "
                                     f"factor {factor:.2f} (need >= 3.5)")


def criterion_9(tmp_dir):
    outs = []
    for k in range(2):
        out = tmp_dir / f"study{k}.csv"
        proc = subprocess.run([sys.executable, "-m", "mcrs", "study", "--test", "test2", "--levels", "4,8,16",
                               "--jobs", "1", "--out", str(out)], capture_output=True, text=True)
        if proc.returncode != 0:
            return report(9, False, f"study exited {proc.returncode}: {proc.stderr.strip()}")
        outs.append(out.read_bytes())
    same = outs[0] == outs[1]
    return report(9, same, f"two study runs, {len(outs[0])} bytes each, identical={same}")


@pytest.mark.parametrize("number", range(1, 9))
def test_criterion(number, capsys):
    with capsys.disabled():
        print()
        passed = globals()[f"criterion_{number}"]()
    assert passed


def test_criterion_9(tmp_path, capsys):
    with capsys.disabled():
        print()
        passed = criterion_9(tmp_path)
    assert passed


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        results = [globals()[f"criterion_{k}"]() for k in range(1, 9)] + [criterion_9(Path(d))]
    sys.exit(0 if all(results) else 1)
