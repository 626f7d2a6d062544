"""Second-order cone programs: construction, interior-point solve, KKT check.

A :class:`ConicProgram` is

    minimize (or maximize)  c'x + offset
    subject to              A_eq x  = b_eq
                            A_in x <= b_in
                            lb <= x <= ub
                            M_k x + d_k in SOC   for every cone k

where ``SOC = {(h, w): ||w||_2 <= h}`` with the head stored first.
Quadratic costs are added through epigraph variables and rotated cones, so
the solver only ever sees a linear objective.

Solving is delegated to Clarabel (a primal-dual interior-point method with
Ruiz equilibration) or optionally CVXOPT. :func:`kkt_residuals` recomputes
feasibility and optimality from the program data alone.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DimensionMismatch",
    "ConicProgram",
    "ProgramBuilder",
    "ConicSolution",
    "KKTResiduals",
    "solve",
    "kkt_residuals",
    "dump_program",
]

log = logging.getLogger(__name__)


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ConicProgram:
    var_names: tuple[str, ...]
    c: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    A_eq: sp.csr_matrix
    b_eq: np.ndarray
    A_in: sp.csr_matrix
    b_in: np.ndarray
    cone_mat: sp.csr_matrix
    cone_vec: np.ndarray
    cone_sizes: np.ndarray
    offset: float = 0.0
    maximize: bool = False
    eq_names: tuple[str, ...] = ()
    in_names: tuple[str, ...] = ()
    cone_names: tuple[str, ...] = ()
    groups: Mapping[str, np.ndarray] = field(default_factory=dict)
    meta: Mapping[str, object] = field(default_factory=dict)

    @property
    def n_var(self) -> int:
        return len(self.var_names)

    @property
    def n_cones(self) -> int:
        return len(self.cone_sizes)

    @cached_property
    def _name_index(self) -> dict[str, int]:
        return {n: k for k, n in enumerate(self.var_names)}

    def index(self, name: str) -> int:
        return self._name_index[name]

    @cached_property
    def cone_starts(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.cone_sizes)]).astype(int)

    def objective(self, x: np.ndarray) -> float:
        return float(self.c @ x + self.offset)

    def with_objective_scale(self, alpha: float) -> "ConicProgram":
        """Copy with the objective multiplied by ``alpha``."""
        from dataclasses import replace
        return replace(self, c=self.c * alpha, offset=self.offset * alpha)


class ProgramBuilder:
    """Incremental, vectorised construction of a :class:`ConicProgram`."""

    def __init__(self):
        self._names: list[str] = []
        self._lb: list[np.ndarray] = []
        self._ub: list[np.ndarray] = []
        self._seen: set[str] = set()
        self._obj: dict[int, float] = {}
        self._offset = 0.0
        # row blocks: (rows, cols, vals, rhs, names)
        self._eq: list[tuple] = []
        self._in: list[tuple] = []
        self._cone: list[tuple] = []
        self._n_eq = self._n_in = self._n_cone_rows = 0
        self._cone_sizes: list[int] = []
        self._cone_names: list[str] = []

    @property
    def n_var(self) -> int:
        return len(self._names)

    def add_variables(self, names: Sequence[str], lb=-np.inf, ub=np.inf) -> np.ndarray:
        names = list(names)
        for n in names:
            if n in self._seen:
                raise ValueError(f"duplicate variable name {n!r}")
            self._seen.add(n)
        start = len(self._names)
        self._names.extend(names)
        k = len(names)
        self._lb.append(np.broadcast_to(np.asarray(lb, float), (k,)).copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, float), (k,)).copy())
        return np.arange(start, start + k)

    def add_variable(self, name: str, lb: float = -np.inf, ub: float = np.inf) -> int:
        return int(self.add_variables([name], lb, ub)[0])

    def add_constraints(self, rows, cols, vals, rhs, sense: str = "==",
                        names: Sequence[str] | None = None) -> np.ndarray:
        """Add a block of linear rows given in local COO form (row ids ``0..len(rhs)-1``)."""
        rows = np.asarray(rows, int)
        cols = np.asarray(cols, int)
        vals = np.asarray(vals, float)
        rhs = np.atleast_1d(np.asarray(rhs, float))
        k = len(rhs)
        if names is None:
            names = [""] * k
        if sense == ">=":
            vals, rhs = -vals, -rhs
        elif sense not in ("==", "<="):
            raise ValueError(f"unknown sense {sense!r}")
        if sense == "==":
            start = self._n_eq
            self._eq.append((rows + start, cols, vals, rhs, list(names)))
            self._n_eq += k
        else:
            start = self._n_in
            self._in.append((rows + start, cols, vals, rhs, list(names)))
            self._n_in += k
        return np.arange(start, start + k)

    def add_constraint(self, terms: Mapping[int, float], sense: str, rhs: float, name: str = "") -> int:
        cols = np.fromiter(terms.keys(), int, len(terms))
        vals = np.fromiter(terms.values(), float, len(terms))
        return int(self.add_constraints(np.zeros(len(cols), int), cols, vals, [rhs], sense, [name])[0])

    def add_cones(self, rows, cols, vals, consts, sizes: Sequence[int],
                  names: Sequence[str] | None = None) -> None:
        """Add cones whose stacked coordinates are ``M x + d`` (local COO rows)."""
        sizes = [int(s) for s in sizes]
        total = sum(sizes)
        consts = np.asarray(consts, float)
        if consts.shape != (total,):
            raise ValueError("cone constant vector has the wrong length")
        start = self._n_cone_rows
        self._cone.append((np.asarray(rows, int) + start, np.asarray(cols, int),
                           np.asarray(vals, float), consts))
        self._n_cone_rows += total
        self._cone_sizes.extend(sizes)
        self._cone_names.extend(names if names is not None else [""] * len(sizes))

    def add_cone(self, coords: Sequence[tuple[Mapping[int, float], float]], name: str = "") -> None:
        """One cone from ``[(terms, const), ...]``, head coordinate first."""
        rows, cols, vals, consts = [], [], [], []
        for r, (terms, const) in enumerate(coords):
            for j, v in terms.items():
                rows.append(r)
                cols.append(j)
                vals.append(v)
            consts.append(const)
        self.add_cones(rows, cols, vals, consts, [len(coords)], [name])

    def add_objective(self, cols, vals) -> None:
        for j, v in zip(np.atleast_1d(cols), np.atleast_1d(vals)):
            self._obj[int(j)] = self._obj.get(int(j), 0.0) + float(v)

    def add_offset(self, value: float) -> None:
        self._offset += float(value)

    def add_quadratic_cost(self, var: int, c2: float, c1: float, c0: float, name: str) -> int | None:
        """Add ``c2 p^2 + c1 p + c0`` to the objective; returns the epigraph variable, if any."""
        if c2 < 0:
            raise ValueError("quadratic cost must be convex")
        self.add_objective([var], [c1])
        self.add_offset(c0)
        if c2 == 0:
            return None
        u = self.add_variable(name, lb=0.0)
        # p^2 <= u  <=>  ||(2p, u - 1)|| <= u + 1
        self.add_cone([({u: 1.0}, 1.0), ({var: 2.0}, 0.0), ({u: 1.0}, -1.0)], name=f"epi:{name}")
        self.add_objective([u], [c2])
        return u

    def build(self, maximize: bool = False, groups: Mapping[str, np.ndarray] | None = None,
              meta: Mapping[str, object] | None = None) -> ConicProgram:
        n = self.n_var

        def stack(blocks, m):
            if not blocks:
                return sp.csr_matrix((m, n)), np.zeros(m), []
            rows = np.concatenate([b[0] for b in blocks])
            cols = np.concatenate([b[1] for b in blocks])
            vals = np.concatenate([b[2] for b in blocks])
            M = sp.coo_matrix((vals, (rows, cols)), shape=(m, n)).tocsr()
            M.sum_duplicates()
            rhs = np.concatenate([b[3] for b in blocks])
            names = [nm for b in blocks for nm in b[4]] if len(blocks[0]) > 4 else []
            return M, rhs, names

        A_eq, b_eq, eq_names = stack(self._eq, self._n_eq)
        A_in, b_in, in_names = stack(self._in, self._n_in)
        cone_mat, cone_vec, _ = stack(self._cone, self._n_cone_rows)
        c = np.zeros(n)
        for j, v in self._obj.items():
            c[j] += v
        lb = np.concatenate(self._lb) if self._lb else np.zeros(0)
        ub = np.concatenate(self._ub) if self._ub else np.zeros(0)
        if np.any(lb > ub):
            raise ValueError("variable lower bound exceeds upper bound")
        return ConicProgram(
            var_names=tuple(self._names), c=c, lb=lb, ub=ub,
            A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
            cone_mat=cone_mat, cone_vec=cone_vec,
            cone_sizes=np.asarray(self._cone_sizes, int),
            offset=self._offset, maximize=maximize,
            eq_names=tuple(eq_names), in_names=tuple(in_names),
            cone_names=tuple(self._cone_names),
            groups=dict(groups or {}), meta=dict(meta or {}),
        )


class KKTResiduals(NamedTuple):
    primal_feas: float
    dual_feas: float
    gap: float


@dataclass(frozen=True)
class ConicSolution:
    """Result of :func:`solve`.

    Dual multipliers follow the minimisation form of the program (the
    objective is negated first when ``maximize`` is set): stationarity reads
    ``q + A_eq'y + A_in'z_in + z_upper - z_lower - sum_k M_k' z_k = 0``.
    """

    status: str  # optimal | infeasible | unbounded | numerical_failure
    primal: np.ndarray
    dual: Mapping[str, np.ndarray]
    objective_value: float
    residuals: KKTResiduals
    iterations: int = 0
    solve_time: float = 0.0
    solver_status: str = ""

    def value(self, prog: ConicProgram, name: str) -> float:
        return float(self.primal[prog.index(name)])


def _soc_violation(w: np.ndarray, sizes: np.ndarray) -> float:
    worst = 0.0
    start = 0
    for k in sizes:
        head, tail = w[start], w[start + 1:start + k]
        worst = max(worst, float(np.linalg.norm(tail) - head))
        start += k
    return worst


def _soc_violation_vec(w: np.ndarray, sizes: np.ndarray) -> float:
    if len(sizes) == 0:
        return 0.0
    if np.all(sizes == sizes[0]):
        blocks = w.reshape(-1, int(sizes[0]))
        return float(np.max(np.linalg.norm(blocks[:, 1:], axis=1) - blocks[:, 0]))
    return _soc_violation(w, sizes)


def kkt_residuals(prog: ConicProgram, sol: ConicSolution) -> KKTResiduals:
    """Primal infeasibility (absolute), dual infeasibility and duality gap.

    The dual residual is scaled by ``1 + ||q||_inf`` and the gap by
    ``1 + |objective|`` so that $/h-sized costs and p.u. constraints are
    comparable. Only the program data and the solution vectors are used.
    """
    x = np.asarray(sol.primal, float)
    n = prog.n_var
    d = sol.dual
    y = np.asarray(d.get("eq", np.zeros(prog.A_eq.shape[0])), float)
    zi = np.asarray(d.get("ineq", np.zeros(prog.A_in.shape[0])), float)
    zl = np.asarray(d.get("lower", np.zeros(n)), float)
    zu = np.asarray(d.get("upper", np.zeros(n)), float)
    zc = np.asarray(d.get("cone", np.zeros(prog.cone_mat.shape[0])), float)
    if (x.shape != (n,) or y.shape != (prog.A_eq.shape[0],) or zi.shape != (prog.A_in.shape[0],)
            or zl.shape != (n,) or zu.shape != (n,) or zc.shape != (prog.cone_mat.shape[0],)):
        raise DimensionMismatch("solution vectors do not match the program dimensions")

    viol = [0.0]
    if prog.A_eq.shape[0]:
        viol.append(float(np.max(np.abs(prog.A_eq @ x - prog.b_eq))))
    if prog.A_in.shape[0]:
        viol.append(float(np.max(prog.A_in @ x - prog.b_in)))
    fin_l, fin_u = np.isfinite(prog.lb), np.isfinite(prog.ub)
    if fin_l.any():
        viol.append(float(np.max(prog.lb[fin_l] - x[fin_l])))
    if fin_u.any():
        viol.append(float(np.max(x[fin_u] - prog.ub[fin_u])))
    w = prog.cone_mat @ x + prog.cone_vec
    viol.append(_soc_violation_vec(w, prog.cone_sizes))
    primal = max(0.0, max(viol))

    q = -prog.c if prog.maximize else prog.c
    r = q + prog.A_eq.T @ y + prog.A_in.T @ zi + zu - zl - prog.cone_mat.T @ zc
    dviol = [float(np.max(np.abs(r), initial=0.0)),
             float(np.max(-zi, initial=0.0)),
             float(np.max(-zl[fin_l], initial=0.0)),
             float(np.max(-zu[fin_u], initial=0.0)),
             float(np.max(np.abs(zl[~fin_l]), initial=0.0)),
             float(np.max(np.abs(zu[~fin_u]), initial=0.0)),
             _soc_violation_vec(zc, prog.cone_sizes)]
    qscale = 1.0 + float(np.max(np.abs(q), initial=0.0))
    dual = max(0.0, max(dviol)) / qscale

    pobj = float(q @ x)
    dobj = -(float(prog.b_eq @ y) + float(prog.b_in @ zi)
             + float(prog.ub[fin_u] @ zu[fin_u]) - float(prog.lb[fin_l] @ zl[fin_l])
             + float(prog.cone_vec @ zc))
    gap = abs(pobj - dobj) / (1.0 + abs(pobj))
    return KKTResiduals(primal, dual, gap)


def _standard_form(prog: ConicProgram):
    """Stack the program as ``A x + s = b`` with ``s`` in zero x nonneg x SOC cones."""
    n = prog.n_var
    eye = sp.identity(n, format="csr")
    fin_l = np.flatnonzero(np.isfinite(prog.lb))
    fin_u = np.flatnonzero(np.isfinite(prog.ub))
    A = sp.vstack([prog.A_eq, prog.A_in, eye[fin_u], -eye[fin_l], -prog.cone_mat]).tocsc()
    b = np.concatenate([prog.b_eq, prog.b_in, prog.ub[fin_u], -prog.lb[fin_l], prog.cone_vec])
    q = -prog.c if prog.maximize else prog.c.copy()
    n_l = prog.A_in.shape[0] + len(fin_u) + len(fin_l)
    return q, A, b, n_l, fin_l, fin_u


def _split_duals(prog: ConicProgram, z: np.ndarray, fin_l, fin_u) -> dict[str, np.ndarray]:
    n = prog.n_var
    m_eq, m_in = prog.A_eq.shape[0], prog.A_in.shape[0]
    k = 0
    y = z[k:k + m_eq]; k += m_eq
    zi = z[k:k + m_in]; k += m_in
    zu = np.zeros(n); zu[fin_u] = z[k:k + len(fin_u)]; k += len(fin_u)
    zl = np.zeros(n); zl[fin_l] = z[k:k + len(fin_l)]; k += len(fin_l)
    zc = z[k:]
    return {"eq": np.array(y), "ineq": np.array(zi), "lower": zl, "upper": zu, "cone": np.array(zc)}


_CLARABEL_STATUS = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


def _solve_clarabel(prog, tol, max_iter, static_reg=1e-8):
    import clarabel

    q, A, b, n_l, fin_l, fin_u = _standard_form(prog)
    n = prog.n_var
    cones = []
    if prog.A_eq.shape[0]:
        cones.append(clarabel.ZeroConeT(prog.A_eq.shape[0]))
    if n_l:
        cones.append(clarabel.NonnegativeConeT(n_l))
    cones.extend(clarabel.SecondOrderConeT(int(k)) for k in prog.cone_sizes)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.tol_feas = tol
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.equilibrate_enable = True
    settings.presolve_enable = False
    settings.static_regularization_constant = static_reg
    P = sp.csc_matrix((n, n))
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    res = solver.solve()
    raw = str(res.status).split(".")[-1]
    x = np.array(res.x, float)
    z = np.array(res.z, float)
    return raw, _CLARABEL_STATUS.get(raw, "numerical_failure"), x, _split_duals(prog, z, fin_l, fin_u), int(res.iterations)


def _solve_cvxopt(prog, tol, max_iter):
    from cvxopt import matrix, solvers, spmatrix

    q, A, b, n_l, fin_l, fin_u = _standard_form(prog)
    m_eq = prog.A_eq.shape[0]

    def to_sp(M):
        M = sp.coo_matrix(M)
        return spmatrix(M.data.tolist(), M.row.tolist(), M.col.tolist(), size=M.shape)

    G = to_sp(A[m_eq:])
    h = matrix(b[m_eq:])
    dims = {"l": int(n_l), "q": [int(k) for k in prog.cone_sizes], "s": []}
    kwargs = {}
    if m_eq:
        kwargs = {"A": to_sp(A[:m_eq]), "b": matrix(b[:m_eq])}
    opts = {"show_progress": False, "abstol": tol, "reltol": tol, "feastol": tol, "maxiters": max_iter}
    res = solvers.conelp(matrix(q), G, h, dims, options=opts, **kwargs)
    raw = res["status"]
    status = {"optimal": "optimal", "primal infeasible": "infeasible",
              "dual infeasible": "unbounded"}.get(raw, "numerical_failure")
    n = prog.n_var
    x = np.array(res["x"]).ravel() if res["x"] is not None else np.zeros(n)
    y = np.array(res["y"]).ravel() if (m_eq and res["y"] is not None) else np.zeros(m_eq)
    zz = np.array(res["z"]).ravel() if res["z"] is not None else np.zeros(A.shape[0] - m_eq)
    return raw, status, x, _split_duals(prog, np.concatenate([y, zz]), fin_l, fin_u), int(res.get("iterations", 0))


def _attempt(prog: ConicProgram, runner, backend: str, tol: float, max_iter: int,
             accept_tol: float, **options) -> ConicSolution:
    t0 = time.perf_counter()
    try:
        raw, status, x, dual, iters = runner(prog, tol, max_iter, **options)
    except (ValueError, ArithmeticError) as exc:  # cvxopt raises on rank-deficient data
        log.warning("%s backend failed: %s", backend, exc)
        n = prog.n_var
        raw, status, x, iters = str(exc), "numerical_failure", np.zeros(n), 0
        dual = {"eq": np.zeros(prog.A_eq.shape[0]), "ineq": np.zeros(prog.A_in.shape[0]),
                "lower": np.zeros(n), "upper": np.zeros(n), "cone": np.zeros(prog.cone_mat.shape[0])}
    elapsed = time.perf_counter() - t0
    x = np.where(np.isfinite(x), x, 0.0)
    sol = ConicSolution(status, x, dual, prog.objective(x), KKTResiduals(np.inf, np.inf, np.inf),
                        iters, elapsed, raw)
    res = kkt_residuals(prog, sol)
    if status == "optimal" and max(res) > accept_tol:
        log.info("backend reported %s but KKT residuals are %s", raw, res)
        status = "numerical_failure"
    log.debug("conic solve: %s (%s) in %.3fs, %d iterations", status, raw, elapsed, iters)
    return ConicSolution(status, x, dual, prog.objective(x), res, iters, elapsed, raw)


# Clarabel's default static regularization (1e-8) leaves ~1e-5 primal residuals
# on some larger network models, while a smaller value upsets others; an
# uncertified solve is repeated once with the smaller value.
_CLARABEL_RETRIES = ({}, {"static_reg": 1e-10})


def solve(prog: ConicProgram, tol: float = 1e-8, max_iter: int = 200,
          backend: str = "clarabel", accept_tol: float = 1e-6) -> ConicSolution:
    """Solve ``prog``; never raises on a well-formed program.

    The status is ``optimal`` only when the backend reports convergence and the
    independently recomputed KKT residuals are all below ``accept_tol``.
    ``solve_time`` covers every attempt.
    """
    runner = {"clarabel": _solve_clarabel, "cvxopt": _solve_cvxopt}[backend]
    retries = _CLARABEL_RETRIES if backend == "clarabel" else ({},)
    first = None
    spent = 0.0
    for options in retries:
        sol = _attempt(prog, runner, backend, tol, max_iter, accept_tol, **options)
        spent += sol.solve_time
        first = first or sol
        if sol.status in ("optimal", "infeasible", "unbounded"):
            break
    else:
        sol = first
        log.warning("solve not certified: %s, KKT residuals %s", sol.solver_status, sol.residuals)
    return replace(sol, solve_time=spent)


def dump_program(prog: ConicProgram) -> str:
    """Plain-text listing of variables, rows and cones for cross-solver debugging."""
    out = [f"# {'maximize' if prog.maximize else 'minimize'} n_var={prog.n_var} "
           f"n_eq={prog.A_eq.shape[0]} n_in={prog.A_in.shape[0]} n_cones={prog.n_cones}",
           f"OFFSET {prog.offset:.17g}"]
    for j, name in enumerate(prog.var_names):
        out.append(f"VAR {name} {prog.lb[j]:.17g} {prog.ub[j]:.17g} {prog.c[j]:.17g}")

    def row_text(M, i):
        lo, hi = M.indptr[i], M.indptr[i + 1]
        return " ".join(f"{prog.var_names[j]}:{v:.17g}" for j, v in zip(M.indices[lo:hi], M.data[lo:hi]))

    for i in range(prog.A_eq.shape[0]):
        name = prog.eq_names[i] if i < len(prog.eq_names) else ""
        out.append(f"EQ {name or i} {prog.b_eq[i]:.17g} : {row_text(prog.A_eq, i)}")
    for i in range(prog.A_in.shape[0]):
        name = prog.in_names[i] if i < len(prog.in_names) else ""
        out.append(f"LE {name or i} {prog.b_in[i]:.17g} : {row_text(prog.A_in, i)}")
    starts = prog.cone_starts
    for k, size in enumerate(prog.cone_sizes):
        name = prog.cone_names[k] if k < len(prog.cone_names) else ""
        out.append(f"SOC {name or k} {size}")
        for i in range(starts[k], starts[k] + size):
            out.append(f"  {prog.cone_vec[i]:.17g} : {row_text(prog.cone_mat, i)}")
    return "\n".join(out) + "\n"
