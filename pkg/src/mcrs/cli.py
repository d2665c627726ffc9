"""Command-line entry point: ``mcrs run|study|check``.

Settings are resolved in increasing priority: built-in defaults, a JSON
``--config`` file, ``MCRS_<FIELD>`` environment variables, command-line flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import subprocess
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import __version__
from .timestepping import SchemeConfig, TimeGrid, cfl_diagnostic
from .verification import (
    LAMBDA1_PRESETS,
    DtRule,
    LevelTask,
    convergence_study,
    study_csv,
    trace_csv,
)

logger = logging.getLogger("mcrs")

ENV_PREFIX = "MCRS_"
MAX_DESK_LEVEL = 128
EXIT_OK, EXIT_FAILED_LEVEL, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2, 3
DEFAULT_NU = {"test1": 0.1, "test2": 1.0}


class ConfigError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class RunConfig:
    test: str = "test1"
    nu: float | None = None
    T: float = 4.0
    levels: list = field(default_factory=list)
    ratio: int = 2
    dt_rule: str = "dt_equals_h"
    viscous_theta: float = 0.5
    pressure_space: str = "q1"
    lambda1: float = LAMBDA1_PRESETS["2pi2"]
    slack: float = 1.05
    solver_tol: float = 1e-10
    solver_method: str = "direct"
    predictor_pressure: str = "projected"
    bootstrap: str = "maccormack"
    predicted_time: str = "full"
    error_first_level: int = 0
    out: str = "study.csv"
    metadata: str | None = None
    trace_dir: str | None = None
    jobs: int = 1
    allow_large: bool = False
    record_timing: bool = False

    def scheme(self) -> SchemeConfig:
        return SchemeConfig(self.viscous_theta, self.predictor_pressure, self.bootstrap,
                            self.predicted_time, self.solver_tol, self.solver_method)

    def metadata_path(self) -> Path:
        return Path(self.metadata) if self.metadata else Path(self.out).with_suffix(".meta.json")


CONFIG_FIELDS = {f for f in RunConfig.__dataclass_fields__}


def _parse_levels(v):
    if isinstance(v, str):
        v = [s for s in v.replace(" ", "").split(",") if s]
    return [int(x) for x in v]


def _parse_lambda1(v):
    if isinstance(v, str) and v in LAMBDA1_PRESETS:
        return LAMBDA1_PRESETS[v]
    return float(v)


def _parse_bool(v):
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ValueError(f"not a boolean: {v!r}")


_CONVERTERS = {
    "nu": float, "T": float, "levels": _parse_levels, "ratio": int, "viscous_theta": float,
    "lambda1": _parse_lambda1, "slack": float, "solver_tol": float, "jobs": int,
    "error_first_level": int, "allow_large": _parse_bool, "record_timing": _parse_bool,
}


def _coerce(key, value, problems):
    try:
        return _CONVERTERS.get(key, str)(value)
    except (TypeError, ValueError) as exc:
        problems.append(f"{key}: cannot parse {value!r} ({exc})")
        return None


def validate(cfg: RunConfig) -> list[str]:
    p = []
    if cfg.test not in DEFAULT_NU:
        p.append(f"test: must be test1 or test2, got {cfg.test!r}")
    if cfg.nu is not None and not cfg.nu > 0:
        p.append(f"nu: must be positive, got {cfg.nu}")
    if not cfg.T > 0:
        p.append(f"T: must be positive, got {cfg.T}")
    if not cfg.levels:
        p.append("levels: at least one level is required")
    elif any(b <= a for a, b in zip(cfg.levels, cfg.levels[1:])) or cfg.levels[0] < 1:
        p.append(f"levels: must be positive and strictly increasing, got {cfg.levels}")
    if cfg.ratio < 1:
        p.append(f"ratio: must be a positive integer, got {cfg.ratio}")
    else:
        bad = [n for n in cfg.levels if n % cfg.ratio]
        if bad:
            p.append(f"levels: {bad} not divisible by ratio {cfg.ratio}")
    if cfg.levels and max(cfg.levels) > MAX_DESK_LEVEL and not cfg.allow_large:
        p.append(f"levels: {max(cfg.levels)} cells per side exceeds {MAX_DESK_LEVEL}; pass --allow-large")
    try:
        rule = DtRule.parse(cfg.dt_rule)
    except ValueError as exc:
        p.append(f"dt_rule: {exc}")
        rule = None
    if rule is not None and cfg.T > 0:
        for n in cfg.levels:
            try:
                TimeGrid.from_step(rule.dt(1.0 / n), cfg.T)
            except ValueError as exc:
                p.append(f"dt_rule: level {n}: {exc}")
    if cfg.viscous_theta not in (0.0, 0.5):
        p.append(f"viscous_theta: must be 0 or 0.5, got {cfg.viscous_theta}")
    if cfg.pressure_space not in ("q1", "q1_plus_q0"):
        p.append(f"pressure_space: must be q1 or q1_plus_q0, got {cfg.pressure_space!r}")
    for name in ("lambda1", "slack", "solver_tol"):
        if not getattr(cfg, name) > 0:
            p.append(f"{name}: must be positive, got {getattr(cfg, name)}")
    choices = {"solver_method": ("direct", "iterative"), "predictor_pressure": ("projected", "literal"),
               "bootstrap": ("maccormack", "backward_euler"), "predicted_time": ("full", "half")}
    for name, allowed in choices.items():
        if getattr(cfg, name) not in allowed:
            p.append(f"{name}: must be one of {allowed}, got {getattr(cfg, name)!r}")
    if cfg.jobs < 1:
        p.append(f"jobs: must be >= 1, got {cfg.jobs}")
    if cfg.error_first_level not in (0, 1):
        p.append(f"error_first_level: must be 0 or 1, got {cfg.error_first_level}")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcrs", description="Two-level MacCormack rapid solver")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        S = argparse.SUPPRESS
        sp.add_argument("--config", help="JSON file with RunConfig fields")
        sp.add_argument("--test", choices=sorted(DEFAULT_NU), default=S)
        sp.add_argument("--nu", default=S, help="viscosity (default: 0.1 for test1, 1 for test2)")
        sp.add_argument("--T", "--final-time", dest="T", default=S)
        sp.add_argument("--levels", default=S, help="comma-separated fine cells per side, e.g. 8,16,32")
        sp.add_argument("--ratio", default=S, help="coarse/fine mesh-width ratio H/h (default 2)")
        sp.add_argument("--dt-rule", dest="dt_rule", default=S,
                        help="dt_equals_h | fixed:<dt> | scaled:<c>,<q> (dt = c h^q)")
        sp.add_argument("--viscous-theta", dest="viscous_theta", default=S, help="0 or 0.5")
        sp.add_argument("--pressure-space", dest="pressure_space", default=S, help="q1 | q1_plus_q0")
        sp.add_argument("--lambda1", default=S, help="number, or preset 'one' / '2pi2'")
        sp.add_argument("--slack", default=S)
        sp.add_argument("--solver-tol", dest="solver_tol", default=S)
        sp.add_argument("--solver-method", dest="solver_method", default=S, help="direct | iterative")
        sp.add_argument("--predictor-pressure", dest="predictor_pressure", default=S,
                        help="projected | literal")
        sp.add_argument("--bootstrap", default=S, help="maccormack | backward_euler")
        sp.add_argument("--predicted-time", dest="predicted_time", default=S, help="full | half")
        sp.add_argument("--error-first-level", dest="error_first_level", default=S, help="0 or 1")
        sp.add_argument("--out", "-o", default=S, help="study CSV path")
        sp.add_argument("--metadata", default=S, help="metadata JSON path (default: <out>.meta.json)")
        sp.add_argument("--trace-dir", dest="trace_dir", default=S, help="write per-step trace CSVs here")
        sp.add_argument("--jobs", "-j", default=S)
        sp.add_argument("--allow-large", dest="allow_large", action="store_const", const=True, default=S)
        sp.add_argument("--record-timing", dest="record_timing", action="store_const", const=True,
                        default=S, help="fill wall_seconds in the CSV (breaks byte-identical reruns)")

    run = sub.add_parser("run", help="run single levels and write per-step traces")
    common(run)
    run.add_argument("--level", type=int, default=argparse.SUPPRESS, help="single fine level")
    common(sub.add_parser("study", help="convergence sweep over levels"))
    chk = sub.add_parser("check", help="property-check bundle")
    chk.add_argument("--seed", type=int, default=0)
    return parser


def parse_config(argv=None, environ=None) -> tuple[str, RunConfig | None, argparse.Namespace]:
    """Resolve ``argv`` into (command, RunConfig, raw namespace).

    Raises :class:`ConfigError` listing every invalid field.
    """
    environ = os.environ if environ is None else environ
    ns = build_parser().parse_args(argv)
    if ns.command == "check":
        return ns.command, None, ns
    problems: list[str] = []
    values: dict = {}
    if getattr(ns, "config", None):
        try:
            data = json.loads(Path(ns.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError([f"config: cannot read {ns.config}: {exc}"]) from exc
        if not isinstance(data, dict):
            raise ConfigError(["config: top level must be an object"])
        for key in sorted(set(data) - CONFIG_FIELDS):
            problems.append(f"{key}: unknown configuration key")
        values.update({k: v for k, v in data.items() if k in CONFIG_FIELDS})
    for key in CONFIG_FIELDS:
        env = environ.get(ENV_PREFIX + key.upper())
        if env is not None:
            values[key] = env
    for key in CONFIG_FIELDS:
        if key in vars(ns):
            values[key] = getattr(ns, key)
    if "level" in vars(ns):
        values["levels"] = [ns.level]
    cfg = RunConfig()
    for key, v in values.items():
        if v is None and key in ("nu", "metadata", "trace_dir"):
            setattr(cfg, key, None)
            continue
        conv = _coerce(key, v, problems)
        if conv is not None:
            setattr(cfg, key, conv)
    if cfg.nu is None and cfg.test in DEFAULT_NU:
        cfg.nu = DEFAULT_NU[cfg.test]
    problems += validate(cfg)
    if problems:
        raise ConfigError(problems)
    return ns.command, cfg, ns


def _version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def tasks_for(cfg: RunConfig, trace: bool) -> list[LevelTask]:
    rule = DtRule.parse(cfg.dt_rule)
    return [LevelTask(cfg.test, cfg.nu, cfg.T, n, cfg.ratio, rule.dt(1.0 / n), cfg.scheme(),
                      cfg.pressure_space, cfg.lambda1, cfg.slack, trace, cfg.error_first_level)
            for n in cfg.levels]


def run_study(cfg: RunConfig, write_traces: bool = False) -> int:
    """Execute the configured levels and write CSV + metadata; returns the exit status."""
    out = Path(cfg.out)
    meta_path = cfg.metadata_path()
    trace = write_traces or cfg.trace_dir is not None
    meta = {"version": _version(), "config": asdict(cfg), "scheme": asdict(cfg.scheme()),
            "dt_rule": str(DtRule.parse(cfg.dt_rule)), "levels": [], "status": None}
    status = EXIT_FAILED_LEVEL
    try:
        for n in cfg.levels:
            dt = DtRule.parse(cfg.dt_rule).dt(1.0 / n)
            limit, ratio = cfl_diagnostic(cfg.ratio / n, cfg.nu, dt)
            if cfg.viscous_theta == 0.0 and ratio >= 1.0:
                msg = f"level {n}: explicit viscous step dt/limit = {ratio:.3g} (limit {limit:.3g})"
                meta.setdefault("cfl_warnings", []).append(msg)
        results, rows = convergence_study(tasks_for(cfg, trace), cfg.jobs)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(study_csv(rows, cfg.test, cfg.nu, cfg.ratio, cfg.record_timing), encoding="utf-8")
        invariant_ok = True
        div_bound = 10 * cfg.solver_tol
        for res in results:
            entry = {"level": res.level, "h": res.h, "H": res.h * cfg.ratio, "dt": res.dt,
                     "failed": res.failed, "error": res.error, "wall_seconds": res.wall_seconds,
                     "max_div_residual": res.max_div_residual, "energy_ok": res.energy_ok,
                     "energy_ok_presets": res.energy_ok_presets,
                     "energy_worst_ratio": res.energy_worst,
                     "cfl_limit": res.cfl_limit, "cfl_ratio": res.cfl_ratio}
            meta["levels"].append(entry)
            if not res.failed:
                invariant_ok &= bool(res.energy_ok) and res.max_div_residual <= div_bound
            if trace and res.trace:
                tdir = Path(cfg.trace_dir) if cfg.trace_dir else out.parent
                tdir.mkdir(parents=True, exist_ok=True)
                (tdir / f"trace_{cfg.test}_n{res.level}.csv").write_text(trace_csv(res.trace), encoding="utf-8")
        if any(r.failed for r in results):
            status = EXIT_FAILED_LEVEL
        elif not invariant_ok:
            status = EXIT_INVARIANT
        else:
            status = EXIT_OK
        regime = [r.r_u for r in rows if r.r_u is not None]
        if regime:
            meta["observed_regime"] = "second-order (r~4)" if min(regime) > 3.0 else "first-order (r~2)"
    finally:
        meta["status"] = status
        meta_path.parent.mkdir(parents=True, exist_ok=True)
        meta_path.write_text(json.dumps(_json_safe(meta), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return status


def _json_safe(obj):
    """NaN/inf become null so the metadata stays strict JSON."""
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return str(obj)


def run_checks(seed: int = 0) -> int:
    from .checks import run_all

    results = run_all(seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVARIANT


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        command, cfg, ns = parse_config(argv)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    if command == "check":
        return run_checks(ns.seed)
    status = run_study(cfg, write_traces=(command == "run"))
    print(Path(cfg.out).read_text(encoding="utf-8") if Path(cfg.out).exists() else "", end="")
    return status


if __name__ == "__main__":
    sys.exit(main())
