"""From SOCP solutions to AC operating points and stability metrics.

The pipeline for one formulation is

    solve -> recover_voltages -> refine_ac -> sigma_min / c_index -> loading_margin

and :func:`compare_metrics` contrasts a stability-constrained run with its
relaxed-OPF counterpart.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .case_io import NetworkCase
from .conic import ConicProgram, ConicSolution, ProgramBuilder, solve
from .formulation import (FormulationSpec, build_relaxed_opf, build_sparse_vscopf,
                          build_threshold_max, sparsify, unpack)
from .network import (AdmittanceMatrix, CouplingMatrix, build_admittance, coupling_matrix,
                      partition_and_equivalent)
from .powerflow import (Diverged, PFSolution, SingularJacobian, VoltageState, complex_jacobian,
                        injections, jacobian_LL, min_singular_value, newton_pf)
from .stability import c_index_at

__all__ = [
    "NonpositiveMagnitude",
    "NonpositiveUpperBound",
    "BaseCaseDiverged",
    "SolveFailed",
    "RecoverySystem",
    "RefineResult",
    "RepairResult",
    "repair_ac",
    "MarginResult",
    "Dispatch",
    "PipelineResult",
    "StabilityReport",
    "CaseData",
    "prepare",
    "recover_voltages",
    "recovery_system",
    "refine_ac",
    "optimality_gap",
    "loading_margin",
    "sigma_min_at",
    "run_pipeline",
    "compare_metrics",
    "gamma_sweep",
    "default_threshold",
]

log = logging.getLogger(__name__)


class NonpositiveMagnitude(ValueError):
    def __init__(self, bus: int):
        super().__init__(f"squared magnitude at bus {bus} is not positive")
        self.bus = bus


class NonpositiveUpperBound(ValueError):
    pass


class BaseCaseDiverged(RuntimeError):
    pass


class SolveFailed(RuntimeError):
    def __init__(self, kind: str, status: str):
        super().__init__(f"{kind} solve ended with status {status}")
        self.status = status


@dataclass(frozen=True)
class CaseData:
    """Case together with the matrices every formulation needs."""

    case: NetworkCase
    Y: AdmittanceMatrix
    coupling: CouplingMatrix
    Z: np.ndarray


def prepare(case: NetworkCase) -> CaseData:
    Y = build_admittance(case)
    model = partition_and_equivalent(case, Y)
    A = coupling_matrix(model, case.load_injections())
    return CaseData(case, Y, A, model.Z)


# ---------------------------------------------------------------------------
# phasor recovery


@dataclass(frozen=True)
class RecoverySystem:
    incidence: sp.csr_matrix  # bus x edge, -1 at the lower-index end, +1 at the other
    b: np.ndarray  # atan2(s_ij, c_ij) = theta_j - theta_i per edge
    theta: np.ndarray
    residual: float  # ||A_inc' theta - b||_inf


def recovery_system(prog: ConicProgram, sol: ConicSolution, case: NetworkCase) -> RecoverySystem:
    v = unpack(prog, sol)
    pa, pb = prog.meta["pair_from"], prog.meta["pair_to"]
    n, m = case.n_bus, len(pa)
    k = np.arange(m)
    inc = sp.csr_matrix((np.concatenate([-np.ones(m), np.ones(m)]),
                         (np.concatenate([pa, pb]), np.concatenate([k, k]))), shape=(n, m))
    b = np.arctan2(v["sij"], v["cij"])
    # least squares on the reduced Laplacian; any solution differs from the
    # pseudoinverse one by a constant, which the reference shift removes
    ref = case.slack_pos
    keep = np.setdiff1d(np.arange(n), [ref])
    L = (inc @ inc.T).tocsc()
    rhs = inc @ b
    theta = np.zeros(n)
    if len(keep):
        theta[keep] = spla.spsolve(L[keep][:, keep], rhs[keep])
    theta += case.buses[ref].angle_init - theta[ref]
    resid = float(np.max(np.abs(inc.T @ theta - b), initial=0.0))
    return RecoverySystem(inc, b, theta, resid)


def recover_voltages(prog: ConicProgram, sol: ConicSolution, case: NetworkCase) -> VoltageState:
    """Magnitudes ``sqrt(c_ii)`` and least-squares angles from ``atan2(s_ij, c_ij)``."""
    cii = unpack(prog, sol)["cii"]
    bad = np.flatnonzero(cii <= 0)
    if bad.size:
        raise NonpositiveMagnitude(int(case.bus_ids[bad[0]]))
    rs = recovery_system(prog, sol, case)
    return VoltageState.from_complex(np.sqrt(cii) * np.exp(1j * rs.theta))


# ---------------------------------------------------------------------------
# AC refinement


@dataclass(frozen=True)
class Dispatch:
    """Generator real outputs and regulated bus magnitudes defining a power flow."""

    pg: np.ndarray
    v_set: np.ndarray


@dataclass(frozen=True)
class RefineResult:
    pf: PFSolution
    cost: float
    limits_ok: bool
    pg: np.ndarray
    qg: np.ndarray
    violations: dict = field(default_factory=dict)


def _bus_specs(case: NetworkCase, pg: np.ndarray, scale: float = 1.0):
    P = -scale * case.p_load
    Q = -scale * case.q_load
    np.add.at(P, case.gen_bus_pos, scale * pg)
    return P, Q


def _split_generation(case: NetworkCase, pg_fixed, P_inj, Q_inj):
    """Per-generator outputs consistent with solved bus injections."""
    n_gen = len(case.generators)
    pg = np.array(pg_fixed, float)
    qg = np.zeros(n_gen)
    p_bus = P_inj + case.p_load
    q_bus = Q_inj + case.q_load
    for pos in np.unique(case.gen_bus_pos):
        gens = np.flatnonzero(case.gen_bus_pos == pos)
        qmin = np.array([case.generators[g].q_min for g in gens])
        qmax = np.array([case.generators[g].q_max for g in gens])
        span = qmax - qmin
        if np.all(np.isfinite(span)) and span.sum() > 0:
            qg[gens] = qmin + span / span.sum() * (q_bus[pos] - qmin.sum())
        else:
            qg[gens] = q_bus[pos] / len(gens)
        if case.buses[pos].kind == "slack":
            pmax = np.array([max(case.generators[g].p_max, 0.0) for g in gens])
            w = pmax / pmax.sum() if pmax.sum() > 0 else np.full(len(gens), 1.0 / len(gens))
            pg[gens] += w * (p_bus[pos] - pg[gens].sum())
    return pg, qg


def refine_ac(state: VoltageState, case: NetworkCase, pg: np.ndarray,
              Y: AdmittanceMatrix | None = None, tol: float = 1e-8, max_iter: int = 30,
              limit_tol: float = 1e-4) -> RefineResult:
    """AC power flow from a recovered state with PV magnitudes and non-slack outputs held.

    The slack bus absorbs the losses; ``limits_ok`` reports whether the
    resulting point respects generator and voltage limits.
    """
    Y = Y or build_admittance(case)
    v_set = state.magnitude
    P, Q = _bus_specs(case, pg)
    pf = newton_pf(case, Y, state, p_spec=P, q_spec=Q, v_set=v_set, tol=tol, max_iter=max_iter)
    Pi, Qi = injections(pf.state, Y)
    pg_out, qg_out = _split_generation(case, pg, Pi, Qi)
    gens = case.generators
    viol = {
        "p_max": float(np.max(pg_out - [g.p_max for g in gens], initial=0.0)),
        "p_min": float(np.max([g.p_min for g in gens] - pg_out, initial=0.0)),
        "q_max": float(np.max(qg_out - [g.q_max for g in gens], initial=0.0)),
        "q_min": float(np.max([g.q_min for g in gens] - qg_out, initial=0.0)),
        "v_max": float(np.max(pf.state.magnitude - case.v_max, initial=0.0)),
        "v_min": float(np.max(case.v_min - pf.state.magnitude, initial=0.0)),
    }
    ok = all(v <= limit_tol for v in viol.values())
    return RefineResult(pf, case.generation_cost(pg_out), ok, pg_out, qg_out, viol)


def _violations(case: NetworkCase, state: VoltageState, pg, qg, A=None, t_lower=None) -> dict:
    gens = case.generators
    vm = state.magnitude
    out = {
        "p_max": np.maximum(pg - [g.p_max for g in gens], 0.0),
        "p_min": np.maximum([g.p_min for g in gens] - pg, 0.0),
        "q_max": np.maximum(qg - [g.q_max for g in gens], 0.0),
        "q_min": np.maximum([g.q_min for g in gens] - qg, 0.0),
        "v_max": np.maximum(vm - case.v_max, 0.0),
        "v_min": np.maximum(case.v_min - vm, 0.0),
    }
    if A is not None and t_lower is not None:
        t = c_index_at(state, case, A).t
        out["stability"] = np.maximum(np.asarray(t_lower, float) - t, 0.0)
    return out


@dataclass(frozen=True)
class RepairResult:
    refined: RefineResult
    rounds: int
    max_violation: float
    t_min: float | None
    history: tuple[tuple[float, float], ...]  # (cost, max violation) of accepted points


def _polar_jacobian(state: VoltageState, Y: AdmittanceMatrix):
    dS_de, dS_df = complex_jacobian(state, Y)
    th = state.angle
    dS_dv = dS_de @ sp.diags(np.cos(th)) + dS_df @ sp.diags(np.sin(th))
    dS_dt = dS_de @ sp.diags(-state.f) + dS_df @ sp.diags(state.e)
    return dS_dv.tocsr(), dS_dt.tocsr()


def _linearized_step(case, Y, state, A, t_lower, rho, penalty, tol, scale):
    """One trust-region SOCP on the power flow equations linearized at ``state``."""
    n = case.n_bus
    gens = case.generators
    vm, th = state.magnitude, state.angle
    P0, Q0 = injections(state, Y)
    dS_dv, dS_dt = _polar_jacobian(state, Y)
    b = ProgramBuilder()
    lo, hi = case.v_min - vm, case.v_max - vm
    dv = b.add_variables([f"dv[{i}]" for i in range(n)],
                         lb=np.maximum(lo, np.minimum(-rho, hi)), ub=np.minimum(hi, np.maximum(rho, lo)))
    ref = np.zeros(n, bool)
    ref[case.slack_positions] = True
    dt = b.add_variables([f"dt[{i}]" for i in range(n)],
                         lb=np.where(ref, 0.0, -rho), ub=np.where(ref, 0.0, rho))
    pg = b.add_variables([f"pg[{k}]" for k in range(len(gens))],
                         lb=[g.p_min for g in gens], ub=[g.p_max for g in gens])
    qg = b.add_variables([f"qg[{k}]" for k in range(len(gens))],
                         lb=[g.q_min for g in gens], ub=[g.q_max for g in gens])
    # mismatch slacks only keep the step feasible; the exact power flow never
    # honours them, so they must cost far more than any limit violation
    el = b.add_variables([f"e[{k}]" for k in range(4 * n)], lb=0.0)
    b.add_objective(el, np.full(4 * n, 1e3 * penalty))
    for k, g in enumerate(gens):
        c2, c1, c0 = g.cost
        b.add_quadratic_cost(int(pg[k]), c2 / scale, c1 / scale, c0 / scale, f"cost[{k}]")
    gp = case.gen_bus_pos
    for part, J_v, J_t, base, load, gcols, off in (
        ("P", dS_dv.real, dS_dt.real, P0, case.p_load, pg, 0),
        ("Q", dS_dv.imag, dS_dt.imag, Q0, case.q_load, qg, 2 * n),
    ):
        Jv, Jt = J_v.tocoo(), J_t.tocoo()
        rows = np.concatenate([gp, Jv.row, Jt.row, np.arange(n), np.arange(n)])
        cols = np.concatenate([gcols, dv[Jv.col], dt[Jt.col], el[off:off + n], el[off + n:off + 2 * n]])
        vals = np.concatenate([np.ones(len(gcols)), -Jv.data, -Jt.data, np.ones(n), -np.ones(n)])
        b.add_constraints(rows, cols, vals, base + load, "==", [f"{part}[{i}]" for i in range(n)])
    if A is not None and t_lower is not None:
        A_ = A.A if isinstance(A, CouplingMatrix) else np.asarray(A)
        lp = case.load_pos
        nl = len(lp)
        z = b.add_variables([f"z[{i}]" for i in range(nl)], lb=0.0)
        es = b.add_variables([f"es[{i}]" for i in range(nl)], lb=0.0)
        b.add_objective(es, np.full(nl, penalty))
        # (vm + dv) z >= 1
        for i, k in enumerate(lp):
            b.add_cone([({int(dv[k]): 0.5, int(z[i]): 0.5}, 0.5 * vm[k]), ({}, 1.0),
                        ({int(dv[k]): 0.5, int(z[i]): -0.5}, 0.5 * vm[k])])
        coo = sp.coo_matrix(A_)
        rows = np.concatenate([np.arange(nl), coo.row, np.arange(nl)])
        cols = np.concatenate([dv[lp], z[coo.col], es])
        vals = np.concatenate([np.ones(nl), -coo.data, np.ones(nl)])
        rhs = np.broadcast_to(np.asarray(t_lower, float), (nl,)) - vm[lp]
        b.add_constraints(rows, cols, vals, rhs, ">=")
    prog = b.build()
    # the exact power flow that follows is the real check, so an uncertified
    # but converged step is still worth trying
    sol = solve(prog, tol=tol, accept_tol=np.inf)
    if sol.status != "optimal" and "Almost" not in str(sol.solver_status):
        return None
    x = sol.primal
    shortfall = float(x[es].max(initial=0.0)) if A is not None and t_lower is not None else 0.0
    return vm + x[dv], th + x[dt], x[pg], shortfall


def repair_ac(case: NetworkCase, start: RefineResult, Y: AdmittanceMatrix | None = None,
              A: CouplingMatrix | None = None, t_lower=None, rounds: int = 150,
              feas_tol: float = 1e-6, rho: float = 0.05, tol: float = 1e-8,
              rel_stop: float = 1e-8) -> RepairResult:
    """Move a power-flow point onto the limits (and ``t_lower``) and locally lower its cost.

    Sequential convex programming with a trust region: each round solves the
    power flow equations linearized at the current point (with penalized
    elastic slacks), then an exact Newton power flow with the new generator
    set-points decides acceptance through an L1 exact-penalty merit. The
    penalty starts moderate, which keeps curvature from blocking progress,
    and grows tenfold whenever the iteration stalls at an infeasible point.
    The result is a genuine power-flow solution, so its cost is a valid upper
    bound whenever the reported violation is within tolerance.
    """
    Y = Y or build_admittance(case)
    scale = max(max(abs(2 * g.cost[0] * g.p_max + g.cost[1]), abs(g.cost[1])) for g in case.generators)
    scale = max(scale, 1.0)
    mu = 20.0

    def measure(r: RefineResult):
        v = _violations(case, r.pf.state, r.pg, r.qg, A, t_lower)
        total = sum(float(x.sum()) for x in v.values())
        worst = max(float(x.max(initial=0.0)) for x in v.values())
        return r.cost + mu * scale * total, worst

    cur = start
    merit, worst = measure(cur)
    history = [(cur.cost, worst)]
    k = 0
    while k < rounds:
        if rho < 1e-7:
            if worst <= feas_tol or mu >= 1e6:
                break
            mu *= 10
            merit, worst = measure(cur)
            rho = 1e-2
        k += 1
        step = _linearized_step(case, Y, cur.pf.state, A, t_lower, rho, mu, tol, scale)
        if step is None:
            rho *= 0.25
            continue
        vm, th, pg, shortfall = step
        if shortfall > feas_tol and mu < 1e6:
            # the model prefers paying the penalty: it is below the multiplier
            mu *= 10
            merit, worst = measure(cur)
            continue
        try:
            cand = refine_ac(VoltageState.from_complex(vm * np.exp(1j * th)), case, pg, Y)
        except (Diverged, SingularJacobian):
            rho *= 0.25
            continue
        m2, w2 = measure(cand)
        if m2 < merit - 1e-12 * max(1.0, abs(merit)):
            improvement = merit - m2
            cur, merit, worst = cand, m2, w2
            history.append((cur.cost, worst))
            log.debug("repair round %d: cost %.6f, violation %.2e, rho %.2e", k, cur.cost, worst, rho)
            if worst <= feas_tol and improvement <= rel_stop * max(1.0, abs(merit)):
                break
            rho = min(2 * rho, 0.5)
        else:
            rho *= 0.5
    t_min = c_index_at(cur.pf.state, case, A).t_min if A is not None else None
    return RepairResult(cur, k, worst, t_min, tuple(history))


def optimality_gap(lb: float, ub: float) -> float:
    """Percentage gap ``100 (1 - LB/UB)``."""
    if not ub > 0:
        raise NonpositiveUpperBound(f"upper bound must be positive, got {ub}")
    return 100.0 * (1.0 - lb / ub)


def sigma_min_at(state: VoltageState, case: NetworkCase, Y: AdmittanceMatrix) -> float:
    """Smallest singular value of the load-bus block of the power flow Jacobian."""
    return min_singular_value(jacobian_LL(state, Y, case.load_pos, sparse=True))


# ---------------------------------------------------------------------------
# loading margin


@dataclass(frozen=True)
class MarginResult:
    lambda_max: float
    trace: tuple[tuple[float, float, bool], ...]  # (lambda, sigma_min, converged)


def loading_margin(case: NetworkCase, base: Dispatch, init: VoltageState | None = None,
                   step: float = 0.1, shrink: float = 0.5, tol: float = 1e-3,
                   Y: AdmittanceMatrix | None = None, lambda_cap: float = 100.0,
                   pf_tol: float = 1e-8, max_iter: int = 30) -> MarginResult:
    """Largest proportional load/generation multiplier with a convergent power flow.

    Loads (P and Q) and non-slack generation are multiplied by ``lambda``;
    the slack bus takes the remaining imbalance. ``lambda`` advances by
    ``step`` from each converged point (warm-started) and the step shrinks by
    ``shrink`` after a failure until it drops below ``tol``.
    """
    Y = Y or build_admittance(case)

    def attempt(lam, start):
        P, Q = _bus_specs(case, base.pg, lam)
        pf = newton_pf(case, Y, start, p_spec=P, q_spec=Q, v_set=base.v_set,
                       tol=pf_tol, max_iter=max_iter)
        return pf.state

    try:
        state = attempt(1.0, init)
    except (Diverged, SingularJacobian) as exc:
        raise BaseCaseDiverged(str(exc)) from exc
    lam = 1.0
    trace = [(1.0, sigma_min_at(state, case, Y), True)]
    h = step
    while h >= tol and lam < lambda_cap:
        trial = lam + h
        try:
            new = attempt(trial, state)
        except (Diverged, SingularJacobian):
            trace.append((trial, float("nan"), False))
            h *= shrink
            continue
        # guard against jumping onto the low-voltage branch
        if np.min(new.magnitude[case.load_pos]) < 0.3 * np.min(state.magnitude[case.load_pos]):
            trace.append((trial, float("nan"), False))
            h *= shrink
            continue
        lam, state = trial, new
        trace.append((lam, sigma_min_at(state, case, Y), True))
    return MarginResult(lam, tuple(trace))


# ---------------------------------------------------------------------------
# full pipelines and reports


@dataclass(frozen=True)
class PipelineResult:
    kind: str
    program: ConicProgram
    solution: ConicSolution
    objective_lb: float
    solve_time: float
    recovered: VoltageState
    sigma_socp: float
    t_a_socp: float
    refined: RefineResult | None  # plain power flow from the recovered point
    repaired: RepairResult | None
    ac: RefineResult | None  # the AC point all AC metrics refer to
    ac_feasible: bool
    sigma_ac: float | None
    t_a: float | None
    margin: MarginResult | None
    t_lower: np.ndarray | None = None
    error: str | None = None

    @property
    def upper_bound(self) -> float | None:
        return self.ac.cost if self.ac is not None and self.ac_feasible else None


@dataclass(frozen=True)
class StabilityReport:
    case: str
    t_lower: float | None
    objective_lb: float
    objective_ub: float | None
    og_percent: float | None
    t_a: float | None
    t_a_socp: float
    sigma_min: float | None
    sigma_min_socp: float
    sigma_min_relaxed: float | None
    lambda_max: float | None
    lambda_max_relaxed: float | None
    delta_lambda_percent: float | None
    delta_sigma_percent: float | None
    ds_percent: float | None
    limits_ok: bool | None
    solve_time: float
    error: str | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def run_pipeline(data: CaseData, kind: str = "vscopf", t_lower=None, gamma: float = 1.0,
                 with_margin: bool = True, repair: bool = True, tol: float = 1e-8,
                 max_iter: int = 200, include_line_limits: bool = False,
                 margin_tol: float = 1e-3, feas_tol: float = 1e-6) -> PipelineResult:
    """Build and solve one formulation, then recover, refine and measure it.

    ``kind`` is ``"vscopf"`` (needs ``t_lower``) or ``"relaxed"``. The AC
    point is the power flow from the recovered voltages, moved onto the
    limits and locally improved by :func:`repair_ac` unless ``repair`` is off.
    """
    case = data.case
    t0 = time.perf_counter()
    spec = FormulationSpec(t_lower=t_lower, gamma=gamma, include_line_limits=include_line_limits)
    if kind == "vscopf":
        prog = build_sparse_vscopf(case, sparsify(data.coupling, gamma), spec)
        t_vec = prog.meta["t_lower"]
    elif kind == "relaxed":
        prog = build_relaxed_opf(case, data.coupling, spec)
        t_vec = None
    else:
        raise ValueError(f"unknown pipeline kind {kind!r}")
    sol = solve(prog, tol=tol, max_iter=max_iter)
    elapsed = time.perf_counter() - t0
    if sol.status != "optimal":
        raise SolveFailed(kind, sol.status)
    log.info("%s %s: objective %.6g in %.3fs", case.name, kind, sol.objective_value, elapsed)
    V = recover_voltages(prog, sol, case)
    sigma_socp = sigma_min_at(V, case, data.Y)
    t_socp = c_index_at(V, case, data.coupling).t_min
    pg = unpack(prog, sol)["pg"]
    refined = repaired = ac = sigma_ac = t_a = margin = None
    feasible = False
    error = None
    try:
        refined = ac = refine_ac(V, case, pg, data.Y)
        if repair:
            repaired = repair_ac(case, refined, data.Y, data.coupling, t_vec, feas_tol=feas_tol)
            ac = repaired.refined
        worst = max(float(x.max(initial=0.0)) for x in
                    _violations(case, ac.pf.state, ac.pg, ac.qg, data.coupling, t_vec).values())
        feasible = worst <= feas_tol
        sigma_ac = sigma_min_at(ac.pf.state, case, data.Y)
        t_a = c_index_at(ac.pf.state, case, data.coupling).t_min
        if with_margin:
            base = Dispatch(ac.pg, ac.pf.state.magnitude)
            margin = loading_margin(case, base, ac.pf.state, Y=data.Y, tol=margin_tol)
    except (Diverged, SingularJacobian, BaseCaseDiverged) as exc:
        error = str(exc)
        log.warning("%s %s: %s", case.name, kind, exc)
    return PipelineResult(kind, prog, sol, sol.objective_value, elapsed, V, sigma_socp, t_socp,
                          refined, repaired, ac, feasible, sigma_ac, t_a, margin, t_vec, error)


def _pct_ratio(a, b):
    if a is None or b is None or b == 0:
        return None
    return 100.0 * (a / b - 1.0)


def compare_metrics(vsc: PipelineResult, relaxed: PipelineResult, case_name: str = "",
                    t_lower: float | None = None) -> StabilityReport:
    """Metrics of a stability-constrained run against its relaxed-OPF counterpart."""
    ub = vsc.upper_bound
    og = optimality_gap(vsc.objective_lb, ub) if ub is not None and ub > 0 else None
    lam1 = vsc.margin.lambda_max if vsc.margin else None
    lam2 = relaxed.margin.lambda_max if relaxed.margin else None
    ds = None
    if vsc.sigma_ac:
        ds = 100.0 * abs(vsc.sigma_socp / vsc.sigma_ac - 1.0)
    if t_lower is None and vsc.t_lower is not None:
        t_lower = float(np.min(vsc.t_lower))
    errors = [e for e in (vsc.error, relaxed.error) if e]
    return StabilityReport(
        case=case_name,
        t_lower=t_lower,
        objective_lb=vsc.objective_lb,
        objective_ub=ub,
        og_percent=og,
        t_a=vsc.t_a,
        t_a_socp=vsc.t_a_socp,
        sigma_min=vsc.sigma_ac,
        sigma_min_socp=vsc.sigma_socp,
        sigma_min_relaxed=relaxed.sigma_ac,
        lambda_max=lam1,
        lambda_max_relaxed=lam2,
        delta_lambda_percent=_pct_ratio(lam1, lam2),
        delta_sigma_percent=_pct_ratio(vsc.sigma_ac, relaxed.sigma_ac),
        ds_percent=ds,
        limits_ok=vsc.ac_feasible if vsc.ac is not None else None,
        solve_time=vsc.solve_time,
        error="; ".join(errors) or None,
    )


def default_threshold(data: CaseData, factor: float = 0.99, **solve_kw) -> tuple[float, float]:
    """``(factor * t*, t*)`` where ``t*`` is the optimal max-min stability margin."""
    prog = build_threshold_max(data.case, data.coupling)
    sol = solve(prog, **solve_kw)
    if sol.status != "optimal":
        raise SolveFailed("threshold", sol.status)
    t_star = sol.objective_value
    return factor * t_star, t_star


def gamma_sweep(data: CaseData, gammas, t_lower, tol: float = 1e-8) -> list[dict]:
    """Sparse-model accuracy and timing across ``gammas``.

    ``relative_error = |sigma_1 - sigma_g| / |sigma_1 - sigma_0|`` with MSVs at
    the recovered SOCP voltages of the full model (``sigma_1``), the relaxed
    OPF (``sigma_0``) and the sparse model (``sigma_g``).
    """
    case = data.case

    def timed(builder):
        t0 = time.perf_counter()
        prog = builder()
        sol = solve(prog, tol=tol)
        return prog, sol, time.perf_counter() - t0

    def sigma_of(prog, sol, kind):
        if sol.status != "optimal":
            raise SolveFailed(kind, sol.status)
        return sigma_min_at(recover_voltages(prog, sol, case), case, data.Y)

    spec = FormulationSpec(t_lower=t_lower)
    p1, s1, time1 = timed(lambda: build_sparse_vscopf(case, sparsify(data.coupling, 1.0), spec))
    sigma1 = sigma_of(p1, s1, "vscopf")
    p0, s0, _ = timed(lambda: build_relaxed_opf(case, data.coupling))
    sigma0 = sigma_of(p0, s0, "relaxed")
    denom = abs(sigma1 - sigma0)
    rows = []
    for g in gammas:
        g = float(g)
        if g == 1.0:
            prog, sol, elapsed = p1, s1, time1
        else:
            prog, sol, elapsed = timed(
                lambda: build_sparse_vscopf(case, sparsify(data.coupling, g), spec))
        sig = sigma_of(prog, sol, "sparse")
        rel = abs(sigma1 - sig) / denom if denom > 0 else (0.0 if sig == sigma1 else float("inf"))
        rows.append({"gamma": g, "solve_time": elapsed, "objective": sol.objective_value,
                     "relative_error": rel, "sigma_min": sig,
                     "sigma_full": sigma1, "sigma_relaxed": sigma0})
    return rows
