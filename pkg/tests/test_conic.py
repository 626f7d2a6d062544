import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vscopf.conic import (ConicSolution, DimensionMismatch, KKTResiduals, ProgramBuilder,
                          dump_program, kkt_residuals, solve)


def pythagorean():
    b = ProgramBuilder()
    x, y, z = (b.add_variable(n) for n in "xyz")
    b.add_constraint({y: 1.0}, "==", 3.0, "y")
    b.add_constraint({z: 1.0}, "==", 4.0, "z")
    b.add_cone([({x: 1.0}, 0.0), ({y: 1.0}, 0.0), ({z: 1.0}, 0.0)], "soc")
    b.add_objective([x], [1.0])
    return b.build()


def _hand_solution(prog, x):
    dual = {"eq": np.array([-0.6, -0.8]), "ineq": np.zeros(0), "lower": np.zeros(3),
            "upper": np.zeros(3), "cone": np.array([1.0, -0.6, -0.8])}
    return ConicSolution("optimal", np.asarray(x, float), dual, float(x[0]), KKTResiduals(0, 0, 0))


def test_pythagorean_cone():
    prog = pythagorean()
    sol = solve(prog)
    assert sol.status == "optimal"
    assert sol.value(prog, "x") == pytest.approx(5.0, abs=1e-7)
    assert max(kkt_residuals(prog, sol)) <= 1e-6


def test_hand_kkt_point():
    prog = pythagorean()
    res = kkt_residuals(prog, _hand_solution(prog, [5.0, 3.0, 4.0]))
    assert max(res) <= 1e-12


def test_perturbed_primal_reports_violation():
    prog = pythagorean()
    res = kkt_residuals(prog, _hand_solution(prog, [5.0, 3.001, 4.0]))
    assert res.primal_feas == pytest.approx(1e-3, rel=1e-6)


def test_dimension_mismatch():
    prog = pythagorean()
    with pytest.raises(DimensionMismatch):
        kkt_residuals(prog, _hand_solution(prog, [5.0, 3.0]))


def test_linear_bound_and_infeasible():
    b = ProgramBuilder()
    x = b.add_variable("x", lb=1.0)
    b.add_objective([x], [1.0])
    sol = solve(b.build())
    assert sol.status == "optimal" and sol.primal[0] == pytest.approx(1.0, abs=1e-7)

    b = ProgramBuilder()
    x = b.add_variable("x")
    b.add_constraint({x: 1.0}, ">=", 1.0)
    b.add_constraint({x: 1.0}, "<=", 0.0)
    b.add_objective([x], [1.0])
    prog = b.build()
    sol = solve(prog)
    assert sol.status == "infeasible"
    assert kkt_residuals(prog, sol).primal_feas >= 0  # still defined


def test_unbounded():
    b = ProgramBuilder()
    x = b.add_variable("x")
    b.add_objective([x], [1.0])
    assert solve(b.build()).status == "unbounded"


def test_quadratic_epigraph():
    # min 2 p^2 - 4 p + 3 over p in [0, 5] -> p = 1, value 1
    b = ProgramBuilder()
    p = b.add_variable("p", 0.0, 5.0)
    b.add_quadratic_cost(p, 2.0, -4.0, 3.0, "u")
    prog = b.build()
    sol = solve(prog)
    assert sol.status == "optimal"
    # the argmin of a quadratic is only sqrt-accurate in the objective tolerance
    assert sol.value(prog, "p") == pytest.approx(1.0, abs=1e-4)
    assert sol.objective_value == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(ValueError):
        ProgramBuilder().add_quadratic_cost(0, -1.0, 0.0, 0.0, "bad")


def test_duplicate_names_rejected():
    b = ProgramBuilder()
    b.add_variable("a")
    with pytest.raises(ValueError):
        b.add_variable("a")


def test_maximize_flag():
    b = ProgramBuilder()
    x, y = b.add_variable("x"), b.add_variable("y")
    # max x s.t. ||(x, y)|| <= 2, y = 1
    b.add_constraint({y: 1.0}, "==", 1.0)
    b.add_cone([({}, 2.0), ({x: 1.0}, 0.0), ({y: 1.0}, 0.0)])
    b.add_objective([x], [1.0])
    prog = b.build(maximize=True)
    sol = solve(prog)
    assert sol.status == "optimal"
    assert sol.objective_value == pytest.approx(np.sqrt(3.0), abs=1e-7)


def _random_program(seed):
    """Random linear objective over a chord of a ball.

    Three equalities leave a line through the ball, so the minimiser is a chord
    end point where the objective grows linearly and the argmin is sharp.
    """
    rng = np.random.default_rng(seed)
    n = 4
    b = ProgramBuilder()
    v = b.add_variables([f"v{k}" for k in range(n)], -10.0, 10.0)
    t = b.add_variable("t")
    center = rng.normal(size=n)
    b.add_cone([({t: 1.0}, 0.0)] + [({int(v[k]): 1.0}, -center[k]) for k in range(n)])
    b.add_constraint({t: 1.0}, "<=", 1.0 + rng.uniform())
    M = rng.normal(size=(n - 1, n))
    offset = M @ center  # the line passes through the centre
    b.add_constraints(np.repeat(np.arange(n - 1), n), np.tile(v, n - 1), M.ravel(), offset)
    b.add_objective(v, rng.normal(size=n))
    return b.build()


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
def test_objective_scaling_keeps_argmin(seed, alpha):
    prog = _random_program(seed)
    s1 = solve(prog)
    s2 = solve(prog.with_objective_scale(alpha))
    assert s1.status == s2.status == "optimal"
    np.testing.assert_allclose(s1.primal, s2.primal, atol=1e-6)
    assert s2.objective_value == pytest.approx(alpha * s1.objective_value, rel=1e-6, abs=1e-6)


def test_deterministic():
    prog = _random_program(7)
    a, b = solve(prog), solve(prog)
    assert a.status == b.status
    assert a.objective_value == b.objective_value
    np.testing.assert_array_equal(a.primal, b.primal)


def test_cvxopt_backend_agrees():
    pytest.importorskip("cvxopt")
    prog = _random_program(3)
    a, b = solve(prog), solve(prog, backend="cvxopt")
    assert b.status == "optimal"
    assert b.objective_value == pytest.approx(a.objective_value, abs=1e-6)


def test_dump_lists_everything():
    text = dump_program(pythagorean())
    assert text.startswith("# minimize n_var=3 n_eq=2 n_in=0 n_cones=1")
    assert text.count("\nVAR ") == 3
    assert "SOC soc 3" in text
