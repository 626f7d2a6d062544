import functools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import cached_data, zero_load_case
from vscopf.analysis import prepare
from vscopf.conic import kkt_residuals, solve
from vscopf.formulation import (FormulationSpec, InfeasibleBounds, build_relaxed_opf,
                                build_sparse_vscopf, build_stability_improvement,
                                build_threshold_max, build_vscopf_socp, sparsify, unpack, v_bar)


@functools.lru_cache(maxsize=None)
def solved(name, kind, t=None, gamma=1.0):
    data = cached_data(name)
    case, A = data.case, data.coupling
    if kind == "vscopf":
        spec = FormulationSpec(t_lower=t)
        prog = (build_vscopf_socp(case, A, spec) if gamma == 1.0
                else build_sparse_vscopf(case, sparsify(A, gamma), spec))
    elif kind == "relaxed":
        prog = build_relaxed_opf(case, A)
    elif kind == "threshold":
        prog = build_threshold_max(case, A)
    else:
        prog = build_stability_improvement(case, A)
    sol = solve(prog)
    assert sol.status == "optimal", (name, kind, sol.solver_status)
    return prog, sol


# ---- sparse approximation ---------------------------------------------------

def test_hand_trace_row():
    ap = sparsify(np.array([[0.5, 0.4, 0.1]]), 0.9)
    np.testing.assert_allclose(ap.A_tilde.toarray(), [[0.5, 0.4, 0.0]])
    np.testing.assert_allclose(ap.delta_a, [0.1])


def test_gamma_extremes(rng):
    A = rng.uniform(0, 1, (5, 5))
    full = sparsify(A, 1.0)
    np.testing.assert_allclose(full.A_tilde.toarray(), A)
    np.testing.assert_allclose(full.delta_a, 0, atol=1e-15)
    empty = sparsify(A, 0.0)
    assert empty.A_tilde.nnz == 0
    np.testing.assert_allclose(empty.delta_a, A.sum(axis=1))
    with pytest.raises(ValueError):
        sparsify(A, 1.5)


def test_ties_go_to_lowest_column():
    ap = sparsify(np.array([[0.3, 0.3, 0.3, 0.1]]), 0.5)
    np.testing.assert_allclose(ap.A_tilde.toarray(), [[0.3, 0.3, 0.0, 0.0]])


@settings(max_examples=60, deadline=None)
@given(arrays(float, (4, 6), elements=st.floats(0, 10)), st.floats(0, 1))
def test_sparsify_invariants(A, gamma):
    ap = sparsify(A, gamma)
    At = ap.A_tilde.toarray()
    assert np.all(At >= 0) and np.all(At <= A)
    assert np.all(ap.delta_a >= -1e-12)
    rs = A.sum(axis=1)
    assert np.all(At.sum(axis=1) >= gamma * rs - 1e-9 * (1 + rs))
    np.testing.assert_allclose(ap.delta_a, rs - At.sum(axis=1), atol=1e-9)


# ---- structure ----------------------------------------------------------------

@pytest.mark.parametrize("name", ["case9", "case30", "case118"])
def test_structural_counts(name):
    data = cached_data(name)
    case = data.case
    prog = build_vscopf_socp(case, data.coupling, FormulationSpec(t_lower=0.5))
    npair = len(prog.meta["pair_from"])
    nl, g = len(case.load_pos), len(case.generators)
    n_epi = sum(1 for gen in case.generators if gen.cost[0] > 0)
    assert prog.n_var == case.n_bus + 2 * npair + 2 * nl + 2 * g + n_epi
    assert prog.n_cones == npair + 2 * nl + n_epi
    assert prog.A_in.shape[0] == nl
    relaxed = build_relaxed_opf(case, data.coupling)
    assert relaxed.n_var == prog.n_var
    assert relaxed.A_in.shape[0] == 0


def test_gamma_one_matches_full_program():
    data = cached_data("case30")
    spec = FormulationSpec(t_lower=0.97)
    full = build_vscopf_socp(data.case, data.coupling, spec)
    sparse = build_sparse_vscopf(data.case, sparsify(data.coupling, 1.0), spec)
    assert (full.A_in != sparse.A_in).nnz == 0
    np.testing.assert_array_equal(full.b_in, sparse.b_in)


def test_crossed_bounds():
    from dataclasses import replace

    from vscopf.case_io import CaseError
    case = zero_load_case()
    buses = list(case.buses)
    buses[1] = replace(buses[1], v_min=1.2, v_max=1.0)
    with pytest.raises(CaseError):
        replace(case, buses=tuple(buses))
    gens = list(case.generators)
    gens[0] = replace(gens[0], p_min=2.0, p_max=1.0)
    with pytest.raises(InfeasibleBounds):
        build_relaxed_opf(replace(case, generators=tuple(gens)))


def test_spec_validation():
    with pytest.raises(ValueError):
        FormulationSpec(gamma=-0.1)
    with pytest.raises(ValueError):
        FormulationSpec(t_lower=np.inf)


# ---- solved models ------------------------------------------------------------

def test_case30_objective():
    prog, sol = solved("case30", "vscopf", 0.97)
    assert sol.objective_value == pytest.approx(574.90, rel=0.01)


@pytest.mark.slow
def test_case118_objective():
    prog, sol = solved("case118", "vscopf", 0.98)
    assert sol.objective_value == pytest.approx(129385.66, rel=0.01)


def test_relaxation_ordering_and_cost_of_stability():
    _, rel = solved("case30", "relaxed")
    prog, vsc = solved("case30", "vscopf", 0.97)
    assert rel.objective_value <= vsc.objective_value + 1e-6
    # the rows bind, so enforcing them costs something
    slack = prog.A_in @ vsc.primal - prog.b_in
    assert np.max(slack) > -1e-6
    assert vsc.objective_value - rel.objective_value > 1e-3


def test_active_rows_are_exact():
    prog, sol = solved("case30", "vscopf", 0.97)
    v = unpack(prog, sol)
    case = cached_data("case30").case
    active = np.flatnonzero(prog.A_in @ sol.primal - prog.b_in > -1e-7)
    assert active.size
    c = v["cii"][case.load_pos]
    np.testing.assert_allclose(v["x"][active], np.sqrt(c[active]), atol=1e-6)
    np.testing.assert_allclose(v["z"][active], 1 / v["x"][active], atol=1e-6)
    vm = np.sqrt(c)
    t = vm - cached_data("case30").coupling.A @ (1 / vm)
    assert np.all(t[active] >= 0.97 - 1e-6)


@pytest.mark.parametrize("gamma", [0.9, 0.98])
def test_full_feasible_point_satisfies_sparse_rows(gamma):
    data = cached_data("case30")
    prog, sol = solved("case30", "vscopf", 0.97)
    v = unpack(prog, sol)
    ap = sparsify(data.coupling, gamma)
    lhs = v["x"] - ap.A_tilde @ v["z"]
    rhs = 0.97 + ap.delta_a / v_bar(data.case)
    assert np.all(lhs >= rhs - 1e-7)


def test_kkt_certified_for_all_kinds():
    for kind, t in (("vscopf", 0.97), ("relaxed", None), ("threshold", None), ("improve", None)):
        prog, sol = solved("case30", kind, t)
        assert max(kkt_residuals(prog, sol)) <= 1e-6


def test_threshold_on_zero_load_network():
    data = prepare(zero_load_case())
    prog = build_threshold_max(data.case, data.coupling)
    sol = solve(prog)
    assert sol.status == "optimal"
    assert sol.objective_value == pytest.approx(v_bar(data.case), abs=1e-6)
    imp = build_stability_improvement(data.case, data.coupling)
    s2 = solve(imp)
    np.testing.assert_allclose(unpack(imp, s2)["x"], data.case.v_max[data.case.load_pos], atol=1e-6)


def test_threshold_case30_and_heavier_load():
    _, sol = solved("case30", "threshold")
    t_star = sol.objective_value
    assert t_star >= 0.97
    heavy = prepare(cached_data("case30").case.scaled(1.1))
    s2 = solve(build_threshold_max(heavy.case, heavy.coupling))
    assert s2.status == "optimal"
    assert s2.objective_value <= t_star + 1e-6


def test_improvement_dominates_threshold():
    case = cached_data("case30").case
    _, thr = solved("case30", "threshold")
    _, imp = solved("case30", "improve")
    assert imp.objective_value >= len(case.load_pos) * thr.objective_value - 1e-6


def test_line_limits_only_tighten():
    data = cached_data("case30")
    spec = FormulationSpec(t_lower=0.97, include_line_limits=True)
    prog = build_vscopf_socp(data.case, data.coupling, spec)
    assert prog.A_in.shape[0] > len(data.case.load_pos)
    sol = solve(prog)
    assert sol.status == "optimal"
    assert sol.objective_value >= solved("case30", "vscopf", 0.97)[1].objective_value - 1e-6


def test_per_bus_threshold_vector():
    data = cached_data("case9")
    nl = len(data.case.load_pos)
    prog = build_vscopf_socp(data.case, data.coupling, FormulationSpec(t_lower=np.full(nl, 0.5)))
    same = build_vscopf_socp(data.case, data.coupling, FormulationSpec(t_lower=0.5))
    np.testing.assert_array_equal(prog.b_in, same.b_in)
    assert sp.issparse(prog.A_in)
