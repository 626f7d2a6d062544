"""SOCP models of voltage-stability-constrained OPF.

All builders share the same lifted network relaxation in the variables
``c_ii = |V_i|^2`` (per bus) and ``c_ij, s_ij`` (per connected bus pair,
``V_i conj(V_j) = c_ij - i s_ij``), plus the stability auxiliaries ``x_i``
and ``z_i`` at every load bus:

* ``x_i^2 <= c_ii`` and ``x_i z_i >= 1`` as rotated cones,
* ``x_i - sum_j A_ij z_j >= t_i`` as a linear row (omitted in the relaxed
  OPF, turned into ``>= s`` in the threshold problem).

Parallel branches share one ``(c_ij, s_ij)`` pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .case_io import NetworkCase
from .conic import ConicProgram, ConicSolution, ProgramBuilder
from .network import CouplingMatrix, branch_admittances

__all__ = [
    "InfeasibleBounds",
    "FormulationSpec",
    "SparseApprox",
    "build_vscopf_socp",
    "build_relaxed_opf",
    "build_threshold_max",
    "build_stability_improvement",
    "build_sparse_vscopf",
    "sparsify",
    "unpack",
    "v_bar",
]


class InfeasibleBounds(ValueError):
    pass


@dataclass(frozen=True)
class FormulationSpec:
    t_lower: float | np.ndarray | None = None
    include_line_limits: bool = False
    gamma: float = 1.0
    v_bar: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.t_lower is not None and not np.all(np.isfinite(self.t_lower)):
            raise ValueError("t_lower must be finite")


@dataclass(frozen=True)
class SparseApprox:
    A_tilde: sp.csr_matrix
    delta_a: np.ndarray
    gamma_used: float


def v_bar(case: NetworkCase) -> float:
    """Largest voltage upper bound over load buses."""
    if len(case.load_pos) == 0:
        return float(case.v_max.max())
    return float(case.v_max[case.load_pos].max())


def sparsify(A: CouplingMatrix | np.ndarray, gamma: float) -> SparseApprox:
    """Keep the largest entries of each row until they cover ``gamma`` of the row sum.

    Ties are broken towards the lower column index. ``delta_a`` is the mass
    dropped from each row.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    A = A.A if isinstance(A, CouplingMatrix) else np.asarray(A, float)
    n, m = A.shape
    order = np.argsort(-A, axis=1, kind="stable")
    sorted_vals = np.take_along_axis(A, order, axis=1)
    csum = np.cumsum(sorted_vals, axis=1)
    total = csum[:, -1] if m else np.zeros(n)
    target = gamma * total
    # number of entries moved: smallest k with csum[k-1] >= target (k = 0 if target <= 0)
    reached = csum >= target[:, None]
    first = np.where(reached.any(axis=1), reached.argmax(axis=1) + 1, m)
    keep = np.where(target <= 0, 0, first)
    rows, cols, vals = [], [], []
    delta = np.zeros(n)
    for i in range(n):
        k = keep[i]
        chosen = order[i, :k]
        nz = sorted_vals[i, :k] != 0
        rows.append(np.full(int(nz.sum()), i))
        cols.append(chosen[nz])
        vals.append(sorted_vals[i, :k][nz])
        delta[i] = sorted_vals[i, k:].sum()
    A_tilde = sp.csr_matrix(
        (np.concatenate(vals) if vals else [], (np.concatenate(rows) if rows else [],
                                                np.concatenate(cols) if cols else [])),
        shape=(n, m))
    return SparseApprox(A_tilde, delta, float(gamma))


def _pairs(case: NetworkCase, br):
    a = np.minimum(br.f, br.t)
    b = np.maximum(br.f, br.t)
    key = a * case.n_bus + b
    uniq, inv = np.unique(key, return_inverse=True)
    return uniq // case.n_bus, uniq % case.n_bus, inv


def _base_builder(case: NetworkCase, include_line_limits: bool):
    """Network relaxation, generation limits, stability cones and the cost epigraphs."""
    if np.any(case.v_min > case.v_max):
        raise InfeasibleBounds("v_min exceeds v_max at some bus")
    for g in case.generators:
        if g.p_min > g.p_max or g.q_min > g.q_max:
            raise InfeasibleBounds(f"generator at bus {g.bus_id} has crossed limits")
    n = case.n_bus
    ids = case.bus_ids
    br = branch_admittances(case)
    pa, pb, inv = _pairs(case, br)
    npair = len(pa)
    b = ProgramBuilder()

    cii = b.add_variables([f"c[{i}]" for i in ids], lb=case.v_min**2, ub=case.v_max**2)
    cij = b.add_variables([f"cij[{ids[i]},{ids[j]}]" for i, j in zip(pa, pb)])
    sij = b.add_variables([f"sij[{ids[i]},{ids[j]}]" for i, j in zip(pa, pb)])
    load_ids = ids[case.load_pos]
    # x_i >= vmin_i and z_i <= 1/vmin_i lose nothing: raising x_i to sqrt(c_ii) and
    # lowering z_i to 1/x_i only relaxes the stability rows. They keep z bounded at
    # buses whose column of A is zero.
    vmin_l = case.v_min[case.load_pos]
    x = b.add_variables([f"x[{i}]" for i in load_ids], lb=np.maximum(vmin_l, 0.0))
    z = b.add_variables([f"z[{i}]" for i in load_ids],
                        ub=np.where(vmin_l > 0, 1.0 / np.where(vmin_l > 0, vmin_l, 1.0), np.inf))
    gens = case.generators
    pg = b.add_variables([f"pg[{k}]" for k in range(len(gens))],
                         lb=[g.p_min for g in gens], ub=[g.p_max for g in gens])
    qg = b.add_variables([f"qg[{k}]" for k in range(len(gens))],
                         lb=[g.q_min for g in gens], ub=[g.q_max for g in gens])

    # branch-end flows as linear functions of (c_ff, c_tt, c_p, s_p)
    sigma = np.where(br.f == pa[inv], 1.0, -1.0)
    cp, spv = cij[inv], sij[inv]
    g_ft, b_ft = br.yft.real, br.yft.imag
    g_tf, b_tf = br.ytf.real, br.ytf.imag
    # rows for P balance: sum pg - sum flows - gsh c = P_D
    P_r, P_c, P_v = [], [], []
    Q_r, Q_c, Q_v = [], [], []

    def put(R, C, V, rows, cols, vals):
        R.append(np.asarray(rows)); C.append(np.asarray(cols)); V.append(np.asarray(vals, float))

    gp = case.gen_bus_pos
    put(P_r, P_c, P_v, gp, pg, np.ones(len(gens)))
    put(Q_r, Q_c, Q_v, gp, qg, np.ones(len(gens)))
    # from ends
    put(P_r, P_c, P_v, br.f, cii[br.f], -br.yff.real)
    put(P_r, P_c, P_v, br.f, cp, -g_ft)
    put(P_r, P_c, P_v, br.f, spv, sigma * b_ft)
    put(Q_r, Q_c, Q_v, br.f, cii[br.f], br.yff.imag)
    put(Q_r, Q_c, Q_v, br.f, spv, sigma * g_ft)
    put(Q_r, Q_c, Q_v, br.f, cp, b_ft)
    # to ends
    put(P_r, P_c, P_v, br.t, cii[br.t], -br.ytt.real)
    put(P_r, P_c, P_v, br.t, cp, -g_tf)
    put(P_r, P_c, P_v, br.t, spv, -sigma * b_tf)
    put(Q_r, Q_c, Q_v, br.t, cii[br.t], br.ytt.imag)
    put(Q_r, Q_c, Q_v, br.t, spv, -sigma * g_tf)
    put(Q_r, Q_c, Q_v, br.t, cp, b_tf)
    # bus shunts
    gsh = np.array([bus.g_shunt for bus in case.buses])
    bsh = np.array([bus.b_shunt for bus in case.buses])
    put(P_r, P_c, P_v, np.arange(n), cii, -gsh)
    put(Q_r, Q_c, Q_v, np.arange(n), cii, bsh)
    b.add_constraints(np.concatenate(P_r), np.concatenate(P_c), np.concatenate(P_v),
                      case.p_load, "==", [f"P[{i}]" for i in ids])
    b.add_constraints(np.concatenate(Q_r), np.concatenate(Q_c), np.concatenate(Q_v),
                      case.q_load, "==", [f"Q[{i}]" for i in ids])

    # ||(c_ij, s_ij, (c_ii - c_jj)/2)|| <= (c_ii + c_jj)/2
    k = np.arange(npair)
    rows = np.concatenate([4 * k, 4 * k, 4 * k + 1, 4 * k + 2, 4 * k + 3, 4 * k + 3])
    cols = np.concatenate([cii[pa], cii[pb], cij, sij, cii[pa], cii[pb]])
    vals = np.concatenate([np.full(npair, 0.5), np.full(npair, 0.5), np.ones(npair), np.ones(npair),
                           np.full(npair, 0.5), np.full(npair, -0.5)])
    b.add_cones(rows, cols, vals, np.zeros(4 * npair), [4] * npair,
                [f"pair[{ids[i]},{ids[j]}]" for i, j in zip(pa, pb)])

    # ||(x_i, (c_ii - 1)/2)|| <= (c_ii + 1)/2   and   ||(1, (x_i - z_i)/2)|| <= (x_i + z_i)/2
    nl = len(load_ids)
    k = np.arange(nl)
    cl = cii[case.load_pos]
    rows = np.concatenate([3 * k, 3 * k + 1, 3 * k + 2])
    cols = np.concatenate([cl, x, cl])
    vals = np.concatenate([np.full(nl, 0.5), np.ones(nl), np.full(nl, 0.5)])
    consts = np.tile([0.5, 0.0, -0.5], nl)
    b.add_cones(rows, cols, vals, consts, [3] * nl, [f"sqrt[{i}]" for i in load_ids])
    rows = np.concatenate([3 * k, 3 * k, 3 * k + 2, 3 * k + 2])
    cols = np.concatenate([x, z, x, z])
    vals = np.concatenate([np.full(nl, 0.5), np.full(nl, 0.5), np.full(nl, 0.5), np.full(nl, -0.5)])
    consts = np.tile([0.0, 1.0, 0.0], nl)
    b.add_cones(rows, cols, vals, consts, [3] * nl, [f"recip[{i}]" for i in load_ids])

    if include_line_limits:
        _add_line_limits(b, case, br, cii, cp, spv, sigma)

    groups = {"cii": cii, "cij": cij, "sij": sij, "x": x, "z": z, "pg": pg, "qg": qg}
    meta = {"pair_from": pa, "pair_to": pb, "v_bar": v_bar(case), "case": case.name}
    return b, groups, meta


def _add_line_limits(b, case, br, cii, cp, spv, sigma):
    live = [x for x in case.branches if x.status]
    rate = np.array([x.rate_a for x in live])
    lim = np.flatnonzero(rate > 0)
    if lim.size == 0:
        return
    f, t = br.f[lim], br.t[lim]
    s_, c_, s_sig = spv[lim], cp[lim], sigma[lim]
    r = rate[lim]
    m = len(lim)
    k = np.arange(m)
    # real power at both ends, |P| <= rate
    for cols, vals in (
        ((cii[f], c_, s_), (br.yff.real[lim], br.yft.real[lim], -s_sig * br.yft.imag[lim])),
        ((cii[t], c_, s_), (br.ytt.real[lim], br.ytf.real[lim], s_sig * br.ytf.imag[lim])),
    ):
        rows = np.concatenate([k, k, k])
        cc = np.concatenate(cols)
        vv = np.concatenate(vals)
        b.add_constraints(rows, cc, vv, r, "<=")
        b.add_constraints(rows, cc, -vv, r, "<=")
    # squared current magnitude at both ends, |I|^2 <= rate^2 (rating at 1 p.u. voltage)
    w = br.yff[lim] * np.conj(br.yft[lim])
    wt = br.ytt[lim] * np.conj(br.ytf[lim])
    for cols, vals in (
        ((cii[f], cii[t], c_, s_), (np.abs(br.yff[lim]) ** 2, np.abs(br.yft[lim]) ** 2,
                                    2 * w.real, 2 * s_sig * w.imag)),
        ((cii[t], cii[f], c_, s_), (np.abs(br.ytt[lim]) ** 2, np.abs(br.ytf[lim]) ** 2,
                                    2 * wt.real, -2 * s_sig * wt.imag)),
    ):
        rows = np.concatenate([k, k, k, k])
        b.add_constraints(rows, np.concatenate(cols), np.concatenate(vals), r**2, "<=")


def _add_cost(b: ProgramBuilder, case: NetworkCase, pg: np.ndarray) -> None:
    for k, g in enumerate(case.generators):
        c2, c1, c0 = g.cost
        b.add_quadratic_cost(int(pg[k]), c2, c1, c0, f"cost[{k}]")


def _stability_rows(b, groups, A_rows: sp.csr_matrix, rhs, load_ids, extra_col=None):
    """Rows ``x_i - sum_j A_ij z_j (- s) >= rhs_i``."""
    A_rows = sp.csr_matrix(A_rows)
    x, z = groups["x"], groups["z"]
    nl = len(x)
    coo = A_rows.tocoo()
    rows = [np.arange(nl), coo.row]
    cols = [x, z[coo.col]]
    vals = [np.ones(nl), -coo.data]
    if extra_col is not None:
        rows.append(np.arange(nl))
        cols.append(np.full(nl, extra_col))
        vals.append(-np.ones(nl))
    b.add_constraints(np.concatenate(rows), np.concatenate(cols), np.concatenate(vals),
                      np.broadcast_to(np.asarray(rhs, float), (nl,)), ">=",
                      [f"stab[{i}]" for i in load_ids])


def _threshold_vector(case: NetworkCase, t_lower) -> np.ndarray:
    if t_lower is None:
        raise ValueError("a stability threshold t_lower is required")
    return np.broadcast_to(np.asarray(t_lower, float), (len(case.load_pos),)).copy()


def build_sparse_vscopf(case: NetworkCase, approx: SparseApprox, spec: FormulationSpec) -> ConicProgram:
    """Cost minimisation with stability rows ``x - A~ z >= t + delta_a / V_bar``."""
    b, groups, meta = _base_builder(case, spec.include_line_limits)
    _add_cost(b, case, groups["pg"])
    vb = spec.v_bar if spec.v_bar is not None else meta["v_bar"]
    t = _threshold_vector(case, spec.t_lower)
    rhs = t + approx.delta_a / vb
    _stability_rows(b, groups, approx.A_tilde, rhs, case.bus_ids[case.load_pos])
    meta.update(kind="vscopf", t_lower=t, gamma=approx.gamma_used, v_bar=vb)
    return b.build(groups=groups, meta=meta)


def build_vscopf_socp(case: NetworkCase, A: CouplingMatrix, spec: FormulationSpec) -> ConicProgram:
    """SOCP relaxation of the stability-constrained OPF with the dense coupling matrix."""
    return build_sparse_vscopf(case, sparsify(A, 1.0), spec)


def build_relaxed_opf(case: NetworkCase, A: CouplingMatrix | None = None,
                      spec: FormulationSpec | None = None) -> ConicProgram:
    """Same model with the stability rows dropped (cones and variables kept)."""
    spec = spec or FormulationSpec()
    b, groups, meta = _base_builder(case, spec.include_line_limits)
    _add_cost(b, case, groups["pg"])
    meta.update(kind="relaxed")
    return b.build(groups=groups, meta=meta)


def build_threshold_max(case: NetworkCase, A: CouplingMatrix,
                        spec: FormulationSpec | None = None) -> ConicProgram:
    """Maximise ``s`` subject to ``x_i - sum_j A_ij z_j >= s`` at every load bus."""
    spec = spec or FormulationSpec()
    if len(case.load_pos) == 0:
        raise ValueError("case has no load buses")
    b, groups, meta = _base_builder(case, spec.include_line_limits)
    s = b.add_variable("s")
    _stability_rows(b, groups, sp.csr_matrix(A.A), 0.0, case.bus_ids[case.load_pos], extra_col=s)
    b.add_objective([s], [1.0])
    groups["s"] = np.array([s])
    meta.update(kind="threshold")
    return b.build(maximize=True, groups=groups, meta=meta)


def build_stability_improvement(case: NetworkCase, A: CouplingMatrix,
                                spec: FormulationSpec | None = None) -> ConicProgram:
    """Maximise ``sum_i (x_i - sum_j A_ij z_j)`` over the relaxed feasible set."""
    spec = spec or FormulationSpec()
    b, groups, meta = _base_builder(case, spec.include_line_limits)
    colsum = A.A.sum(axis=0)
    b.add_objective(groups["x"], np.ones(len(groups["x"])))
    b.add_objective(groups["z"], -colsum)
    meta.update(kind="improvement")
    return b.build(maximize=True, groups=groups, meta=meta)


def unpack(prog: ConicProgram, sol: ConicSolution) -> dict[str, np.ndarray]:
    """Variable groups of a solved model as arrays."""
    return {name: sol.primal[idx] for name, idx in prog.groups.items()}
