"""Command-line front end.

    vscopf parse      --case case30
    vscopf solve      --case case30 --t 0.97 --format json
    vscopf stability  --case case9 --samples 1000
    vscopf margin     --case case30 --t 0.97
    vscopf sweep      --case case300 --gammas 0.9,0.95,1.0 --format csv
    vscopf compare    --case case30 --case case39 --format csv

``--case`` takes a MATPOWER file, a JSON case written by ``parse``, or the
name of a bundled case. Exit status: 0 success, 1 unreadable or malformed
input, 2 solver or pipeline failure, 3 invalid arguments.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from dataclasses import dataclass

import numpy as np

from .analysis import (BaseCaseDiverged, Dispatch, SolveFailed, compare_metrics,
                       default_threshold, gamma_sweep, loading_margin, prepare, run_pipeline,
                       sigma_min_at)
from .case_io import CaseError, NetworkCase, load_case, network_to_json
from .conic import solve
from .formulation import FormulationSpec, build_sparse_vscopf, sparsify
from .network import SingularYLL, ZeroImpedanceBranch, partition_and_equivalent
from .powerflow import Diverged, SingularJacobian, newton_pf
from .stability import c_index_at, segment_connectedness, vcpi_max

log = logging.getLogger("vscopf")

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2, 3
COMMANDS = ("parse", "solve", "stability", "margin", "sweep", "compare")

# fixed CSV column orders
SOLVE_COLUMNS = ("case", "status", "objective", "t_lower", "t_star", "gamma", "solve_time",
                 "primal_feas", "dual_feas", "gap", "iterations")
STABILITY_COLUMNS = ("case", "source", "t_min", "holds", "sigma_min", "vcpi_max",
                     "segment_holds", "witness_t", "witness_bus")
MARGIN_COLUMNS = ("case", "source", "lambda_max", "sigma_min_base", "steps")
SWEEP_COLUMNS = ("gamma", "time_s", "relative_error_pct")
COMPARE_COLUMNS = ("case", "t_lower", "objective_lb", "objective_ub", "og_percent", "t_a",
                   "t_a_socp", "sigma_min", "sigma_min_socp", "sigma_min_relaxed", "lambda_max",
                   "lambda_max_relaxed", "delta_lambda_percent", "delta_sigma_percent",
                   "ds_percent", "limits_ok", "solve_time", "error")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    case_paths: tuple[str, ...]
    t_lower: float | None = None
    gamma: float | None = None
    gammas: tuple[float, ...] | None = None
    output_format: str = "json"
    output_path: str | None = None
    tol: float = 1e-8
    max_iter: int = 200
    include_line_limits: bool = False
    samples: int = 1000

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if not self.case_paths:
            raise ConfigError("--case is required")
        if self.command != "compare" and len(self.case_paths) > 1:
            raise ConfigError("--case may be repeated only for compare")
        if self.t_lower is not None and not (math.isfinite(self.t_lower) and self.t_lower > 0):
            raise ConfigError(f"--t must be a positive number, got {self.t_lower}")
        if self.gamma is not None and not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"--gamma must lie in [0, 1], got {self.gamma}")
        if self.gammas is not None:
            if not self.gammas:
                raise ConfigError("--gammas is empty")
            bad = [g for g in self.gammas if not 0.0 <= g <= 1.0]
            if bad:
                raise ConfigError(f"--gammas values must lie in [0, 1], got {bad}")
        if self.output_format not in ("json", "csv"):
            raise ConfigError(f"--format must be json or csv, got {self.output_format!r}")
        if not self.tol > 0:
            raise ConfigError(f"--tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ConfigError(f"--max-iter must be at least 1, got {self.max_iter}")
        if self.samples < 1:
            raise ConfigError(f"--samples must be at least 1, got {self.samples}")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _gamma_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vscopf", description="Voltage-stability-constrained OPF toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--case", action="append", required=True, metavar="PATH",
                       help="MATPOWER/JSON case file or bundled case name")
        s.add_argument("--t", type=float, dest="t_lower", help="stability threshold (default 0.99 t*)")
        s.add_argument("--gamma", type=float, help="sparsity parameter in [0, 1]")
        s.add_argument("--gammas", type=_gamma_list, help="comma-separated gammas for sweep")
        s.add_argument("--format", dest="output_format", default="json", choices=("json", "csv"))
        s.add_argument("--out", dest="output_path", metavar="PATH")
        s.add_argument("--tol", type=float, default=1e-8)
        s.add_argument("--max-iter", type=int, default=200)
        s.add_argument("--include-line-limits", action="store_true")
        s.add_argument("--samples", type=int, default=1000, help="segment samples (stability)")
        s.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    return p


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=ns.command,
        case_paths=tuple(ns.case),
        t_lower=ns.t_lower,
        gamma=ns.gamma,
        gammas=ns.gammas,
        output_format=ns.output_format,
        output_path=ns.output_path,
        tol=ns.tol,
        max_iter=ns.max_iter,
        include_line_limits=ns.include_line_limits,
        samples=ns.samples,
    )


# ---------------------------------------------------------------------------
# commands; each returns (records, error message or None)


def _threshold(cfg: RunConfig, data) -> tuple[float, float | None]:
    if cfg.t_lower is not None:
        return cfg.t_lower, None
    t, t_star = default_threshold(data, tol=cfg.tol, max_iter=cfg.max_iter)
    log.info("default threshold 0.99 t* = %.6f (t* = %.6f)", t, t_star)
    return t, t_star


def _cmd_parse(cfg: RunConfig, case: NetworkCase):
    if cfg.output_format == "json":
        return json.loads(network_to_json(case)), None
    rows = [{"id": b.id, "kind": b.kind, "p_load": b.p_load, "q_load": b.q_load,
             "g_shunt": b.g_shunt, "b_shunt": b.b_shunt, "v_min": b.v_min, "v_max": b.v_max}
            for b in case.buses]
    return rows, None


def _cmd_solve(cfg: RunConfig, case: NetworkCase):
    data = prepare(case)
    t, t_star = _threshold(cfg, data)
    gamma = 1.0 if cfg.gamma is None else cfg.gamma
    spec = FormulationSpec(t_lower=t, gamma=gamma, include_line_limits=cfg.include_line_limits)
    t0 = time.perf_counter()
    prog = build_sparse_vscopf(case, sparsify(data.coupling, gamma), spec)
    sol = solve(prog, tol=cfg.tol, max_iter=cfg.max_iter)
    elapsed = time.perf_counter() - t0
    log.info("%s: %s (%s), objective %.8g, %.3fs", case.name, sol.status, sol.solver_status,
             sol.objective_value, elapsed)
    rec = {"case": case.name, "status": sol.status, "objective": sol.objective_value,
           "t_lower": t, "t_star": t_star, "gamma": gamma, "solve_time": elapsed,
           "primal_feas": sol.residuals.primal_feas, "dual_feas": sol.residuals.dual_feas,
           "gap": sol.residuals.gap, "iterations": sol.iterations}
    err = None if sol.status == "optimal" else f"solver status {sol.status}"
    return rec, err


def _operating_point(cfg: RunConfig, case: NetworkCase):
    """Case dispatch power flow, or the VSC-OPF AC point when ``--t`` is given."""
    data = prepare(case)
    if cfg.t_lower is None:
        pf = newton_pf(case, data.Y, tol=cfg.tol)
        pg = np.array([g.p_init for g in case.generators])
        return data, pf.state, Dispatch(pg, case.bus_v_set()), "case dispatch"
    res = run_pipeline(data, "vscopf", t_lower=cfg.t_lower, gamma=cfg.gamma or 1.0,
                       with_margin=False, tol=cfg.tol, max_iter=cfg.max_iter,
                       include_line_limits=cfg.include_line_limits)
    if res.ac is None:
        raise Diverged(0, float("nan"))
    return data, res.ac.pf.state, Dispatch(res.ac.pg, res.ac.pf.state.magnitude), "vscopf"


def _cmd_stability(cfg: RunConfig, case: NetworkCase):
    data, state, _, source = _operating_point(cfg, case)
    rep = c_index_at(state, case, data.coupling)
    model = partition_and_equivalent(case, data.Y, state.V[case.gen_pos])
    seg = segment_connectedness(model, state.V[case.load_pos], samples=cfg.samples)
    rec = {"case": case.name, "source": source, "t_min": rep.t_min, "holds": rep.holds,
           "sigma_min": sigma_min_at(state, case, data.Y), "vcpi_max": vcpi_max(state, case),
           "segment_holds": seg.holds,
           "witness_t": seg.witness[0] if seg.witness else None,
           "witness_bus": int(case.bus_ids[case.load_pos[seg.witness[1]]]) if seg.witness else None}
    return rec, None


def _cmd_margin(cfg: RunConfig, case: NetworkCase):
    data, state, dispatch, source = _operating_point(cfg, case)
    m = loading_margin(case, dispatch, state, Y=data.Y)
    rec = {"case": case.name, "source": source, "lambda_max": m.lambda_max,
           "sigma_min_base": m.trace[0][1], "steps": len(m.trace),
           "trace": [{"lambda": lam, "sigma_min": s if math.isfinite(s) else None, "converged": ok}
                     for lam, s, ok in m.trace]}
    return rec, None


def _cmd_sweep(cfg: RunConfig, case: NetworkCase):
    gammas = cfg.gammas or ((cfg.gamma,) if cfg.gamma is not None else (1.0, 0.98, 0.94, 0.9))
    data = prepare(case)
    t, _ = _threshold(cfg, data)
    rows = gamma_sweep(data, gammas, t, tol=cfg.tol)
    out = [{"gamma": r["gamma"], "time_s": r["solve_time"],
            "relative_error_pct": 100.0 * r["relative_error"]} for r in rows]
    return out, None


def _cmd_compare(cfg: RunConfig, cases: list[NetworkCase]):
    out, errors = [], []
    for case in sorted(cases, key=lambda c: c.name):
        data = prepare(case)
        t, _ = _threshold(cfg, data)
        kw = dict(tol=cfg.tol, max_iter=cfg.max_iter, include_line_limits=cfg.include_line_limits)
        vsc = run_pipeline(data, "vscopf", t_lower=t, gamma=cfg.gamma or 1.0, **kw)
        relaxed = run_pipeline(data, "relaxed", **kw)
        rep = compare_metrics(vsc, relaxed, case.name, t).as_dict()
        out.append(rep)
        if rep["error"]:
            errors.append(f"{case.name}: {rep['error']}")
    return out, "; ".join(errors) or None


# ---------------------------------------------------------------------------
# output


def _clean(v):
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        v = v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _columns(command: str, records: list[dict]) -> tuple[str, ...]:
    fixed = {"solve": SOLVE_COLUMNS, "stability": STABILITY_COLUMNS, "margin": MARGIN_COLUMNS,
             "sweep": SWEEP_COLUMNS, "compare": COMPARE_COLUMNS}
    if command in fixed:
        return fixed[command]
    return tuple(records[0]) if records else ()


def render(command: str, report, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(_clean(report), indent=1) + "\n"
    records = report if isinstance(report, list) else [report]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=_columns(command, records), extrasaction="ignore",
                       lineterminator="\n")
    w.writeheader()
    for r in records:
        # repr keeps full float precision
        w.writerow({k: ("" if v is None else repr(v) if isinstance(v, float) else v)
                    for k, v in _clean(r).items()})
    return buf.getvalue()


def run(cfg: RunConfig) -> tuple[int, object]:
    """Execute one command; returns the exit status and the emitted report."""
    try:
        cases = [load_case(p) for p in cfg.case_paths]
    except (OSError, CaseError, ValueError, KeyError) as exc:
        log.error("cannot read case: %s", exc)
        return EXIT_INPUT, {"error": f"cannot read case: {exc}"}
    try:
        if cfg.command == "compare":
            report, err = _cmd_compare(cfg, cases)
        else:
            handler = {"parse": _cmd_parse, "solve": _cmd_solve, "stability": _cmd_stability,
                       "margin": _cmd_margin, "sweep": _cmd_sweep}[cfg.command]
            report, err = handler(cfg, cases[0])
    except (SolveFailed, Diverged, SingularJacobian, BaseCaseDiverged, SingularYLL,
            ZeroImpedanceBranch) as exc:
        log.error("%s failed: %s", cfg.command, exc)
        return EXIT_SOLVER, {"error": str(exc)}
    if err:
        log.error("%s", err)
        if isinstance(report, dict):
            report = {**report, "error": err}
        return EXIT_SOLVER, report
    return EXIT_OK, report


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if ns.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = config_from_args(ns)
    except ConfigError as exc:
        print(f"vscopf: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code, report = run(cfg)
    text = render(cfg.command, report, cfg.output_format)
    if cfg.output_path:
        with open(cfg.output_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
