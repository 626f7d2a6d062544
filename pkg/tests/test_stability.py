import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import cached_case, two_bus_case
from vscopf.network import build_admittance, coupling_matrix, partition_and_equivalent
from vscopf.powerflow import base_injections, jacobian_LL, min_singular_value, newton_pf
from vscopf.stability import (ZeroSendingVoltage, ZeroVoltage, c_index, c_index_at,
                              segment_connectedness, vcpi, vcpi_max, voltage_drop_indices)


def _setup(name):
    case = cached_case(name) if isinstance(name, str) else name
    Y = build_admittance(case)
    model = partition_and_equivalent(case, Y)
    S_L = -(case.p_load + 1j * case.q_load)[case.load_pos]
    return case, Y, model, coupling_matrix(model, S_L)


def _scaled_pf(case, Y, lam):
    P, Q = base_injections(case)
    return newton_pf(case, Y, p_spec=lam * P, q_spec=lam * Q).state


def test_zero_load_index_is_magnitude():
    rep = c_index(np.exp(1j * np.array([0.1, -0.2, 0.3])), np.zeros((3, 3)))
    np.testing.assert_allclose(rep.t, 1.0)
    assert rep.holds and rep.t_min == pytest.approx(1.0)


def test_zero_voltage_rejected():
    with pytest.raises(ZeroVoltage) as err:
        c_index(np.array([1.0, 0.0]), np.eye(2))
    assert err.value.args


def test_two_bus_index_from_fixed_point():
    case, Y, model, A = _setup(two_bus_case())
    V = 1.0 + 0j
    for _ in range(200):
        V = 1.0 + 0.1j * np.conj(-(0.4 + 0.2j) / V)
    rep = c_index(np.array([V]), A)
    assert rep.t[0] == pytest.approx(abs(V) - 0.044721 / abs(V), abs=1e-6)
    pf = newton_pf(case, Y)
    assert c_index_at(pf.state, case, A).t[0] == pytest.approx(rep.t[0], abs=1e-9)


def test_drop_indices_trivial_cases(rng):
    case, Y, model, A = _setup("case9")
    zero, zero2 = voltage_drop_indices(model.E, model)
    np.testing.assert_allclose(zero, 0, atol=1e-12)
    np.testing.assert_allclose(zero2, 0, atol=1e-12)
    n = len(case.load_pos)
    I = np.zeros(n, complex)
    I[2] = 0.3 - 0.1j
    V = model.E + model.Z @ I
    g, a = voltage_drop_indices(V, model)
    np.testing.assert_allclose(g, a, atol=1e-12)
    I = rng.normal(size=n) + 1j * rng.normal(size=n)
    g, a = voltage_drop_indices(model.E + model.Z @ I, model)
    assert np.all(a <= g + 1e-12)


@pytest.mark.parametrize("name", ["case9", "case14", "case30"])
def test_index_equals_drop_margin(name):
    case, Y, model, A = _setup(name)
    V = newton_pf(case, Y).state.V
    V_L = V[case.load_pos]
    # the source must use the generator phasors of the same operating point
    g, _ = voltage_drop_indices(V_L, partition_and_equivalent(case, Y, V_G=V[case.gen_pos]))
    np.testing.assert_allclose(c_index(V_L, A).t, np.abs(V_L) - g, atol=1e-9)


def test_segment_trivial_and_endpoint_violation():
    case, Y, model, A = _setup("case9")
    assert segment_connectedness(model, model.E).holds
    far = model.E + 5.0 * (newton_pf(case, Y).state.V[case.load_pos] - model.E)
    bad = 0.05 * far  # tiny magnitudes with a large drop
    res = segment_connectedness(model, bad, samples=1000)
    assert not res.holds
    assert res.witness is not None and 0 < res.witness[0] <= 1


def test_segment_violated_only_at_endpoint():
    case, Y, model, A = _setup(two_bus_case())
    # low-voltage branch of the two-bus nose curve: condition fails at t = 1 only
    v_low = np.array([0.2 * np.exp(-0.3j)])
    res = segment_connectedness(model, v_low, samples=10)
    margin = np.abs(model.E + (v_low - model.E) * 0.9) - 0.9 * np.abs(model.Z @ (model.Y_LL @ (v_low - model.E)))
    if margin[0] > 0:
        assert res.witness == (1.0, 0)
    else:
        assert not res.holds


def test_case9_solution_segment_holds():
    case, Y, model, A = _setup("case9")
    V = newton_pf(case, Y).state.V
    model = partition_and_equivalent(case, Y, V_G=V[case.gen_pos])
    assert segment_connectedness(model, V[case.load_pos], samples=1000).holds


@pytest.mark.parametrize("name", ["case9", "case14", "case30"])
def test_segments_between_random_operating_points(name, rng):
    case, Y, model, A = _setup(name)
    lams = rng.uniform(0.3, 1.6, 20)
    for lam in lams:
        state = _scaled_pf(case, Y, lam)
        V_L = state.V[case.load_pos]
        A_l = coupling_matrix(model, lam * A.S_L)
        if c_index(V_L, A_l).holds:
            here = partition_and_equivalent(case, Y, V_G=state.V[case.gen_pos])
            assert segment_connectedness(here, V_L, samples=1000).holds


@pytest.mark.parametrize("name", ["case9", "case14", "case30"])
def test_index_holding_implies_nonsingular_jacobian(name):
    case, Y, model, A = _setup(name)
    for lam in (0.5, 1.0, 1.5, 2.0):
        state = _scaled_pf(case, Y, lam)
        A_l = coupling_matrix(model, lam * A.S_L)
        if c_index_at(state, case, A_l).holds:
            assert min_singular_value(jacobian_LL(state, Y, case.load_pos)) > 0


def test_vcpi_examples():
    assert vcpi(1 + 0j, 1 + 0j) == pytest.approx(0.0, abs=1e-15)
    assert vcpi(1 + 0j, 0.5 + 0j) == pytest.approx(1.0)
    v = vcpi(1 + 0j, 0.9 * np.exp(-0.1j))
    assert 0 < v < 1
    with pytest.raises(ZeroSendingVoltage):
        vcpi(0j, 1 + 0j)


@pytest.mark.parametrize("name", ["case9", "case14", "case30", "case57"])
def test_vcpi_range_on_power_flows(name):
    case = cached_case(name)
    Y = build_admittance(case)
    for lam in (0.5, 1.0, 1.3):
        v = vcpi_max(_scaled_pf(case, Y, lam), case)
        assert 0 <= v <= 1 + 1e-9


@settings(max_examples=60, deadline=None)
@given(st.floats(0.5, 1.5), st.floats(0.5, 1.5), st.floats(-0.5, 0.5))
def test_vcpi_bounded_by_one(ms, mr, dth):
    v = vcpi(complex(ms), mr * np.exp(1j * dth))
    assert v <= 1 + 1e-12


def test_fig1_index_shrinks_with_loading():
    case, Y, model, A = _setup("case9")
    t_prev = np.inf
    for lam in np.linspace(1.0, 2.0, 6):
        state = _scaled_pf(case, Y, lam)
        t = c_index_at(state, case, coupling_matrix(model, lam * A.S_L)).t_min
        assert t <= t_prev + 1e-9
        t_prev = t
