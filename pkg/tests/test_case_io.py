import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bus_row, branch_row, cached_case, gen_row, matpower_text
from vscopf.case_io import (Disconnected, MalformedRow, MissingSection, NoSlack, RawCase,
                            UnsupportedCost, bundled_cases, load_case, network_from_json,
                            network_to_json, parse_matpower, to_network)

BASIC = dict(
    buses=[bus_row(1, 3), bus_row(2, 1, 21.7, 12.7)],
    gens=[gen_row(1)],
    branches=[branch_row(1, 2)],
)


def basic_text(**over):
    kw = {**BASIC, **over}
    return matpower_text(kw["buses"], kw["gens"], kw["branches"], kw.get("costs"))


def test_minimal_text_echoes_structure():
    raw = parse_matpower(basic_text())
    assert isinstance(raw, RawCase)
    assert raw.base_mva == 100
    assert len(raw.bus_rows) == 2
    assert raw.gencost_rows == () or raw.gencost_rows is None or len(raw.gencost_rows) == 0


def test_missing_branch_section():
    text = basic_text().split("mpc.branch")[0]
    with pytest.raises(MissingSection) as err:
        parse_matpower(text)
    assert err.value.args and "branch" in str(err.value)


def test_nonnumeric_and_short_rows():
    bad = basic_text().replace("\t21.7", "\tabc", 1)
    with pytest.raises(MalformedRow):
        parse_matpower(bad)
    short = matpower_text([bus_row(1, 3), bus_row(2, 1)[:5]], BASIC["gens"], BASIC["branches"])
    with pytest.raises(MalformedRow):
        parse_matpower(short)


def test_case30_row_counts():
    # counts taken from the distributed file by a separate regex pass
    from importlib import resources
    text = (resources.files("vscopf") / "cases" / "case30.m").read_text()
    raw = parse_matpower(text)
    assert (len(raw.bus_rows), len(raw.gen_rows), len(raw.branch_rows)) == (30, 6, 41)


def test_per_unit_load_and_cost_rescaling():
    costs = [[2, 0, 0, 3, 0.02, 2.0, 1.5]]
    case = to_network(parse_matpower(basic_text(costs=costs)))
    load = case.buses[case.position[2]]
    assert load.p_load == pytest.approx(0.217)
    assert load.q_load == pytest.approx(0.127)
    # f(P_MW) = 0.02 P^2 + 2 P + 1.5 with P_MW = 100 P_pu
    assert case.generators[0].cost == pytest.approx((200.0, 200.0, 1.5))
    assert case.generation_cost(np.array([0.5])) == pytest.approx(0.02 * 50**2 + 2 * 50 + 1.5)


def test_missing_gencost_defaults_to_linear_unit_cost():
    # default coefficients are applied in per-unit output
    case = to_network(parse_matpower(basic_text()))
    assert case.generators[0].cost == pytest.approx((0.0, 1.0, 0.0))
    assert case.generation_cost(np.array([0.3])) == pytest.approx(0.3)


def test_out_of_service_branch_dropped():
    branches = [branch_row(1, 2), branch_row(1, 2, x=0.2, status=0)]
    case = to_network(parse_matpower(basic_text(branches=branches)))
    assert len(case.branches) == 1
    assert case.branches[0].x == pytest.approx(0.1)


def test_islands_raise_disconnected():
    buses = BASIC["buses"] + [bus_row(3, 1, 5.0), bus_row(4, 1, 5.0)]
    branches = [branch_row(1, 2), branch_row(3, 4), branch_row(2, 3, status=0)]
    with pytest.raises(Disconnected) as err:
        to_network(parse_matpower(basic_text(buses=buses, branches=branches)))
    assert len(err.value.components) == 2


def test_no_slack():
    buses = [bus_row(1, 2), bus_row(2, 1, 10.0)]
    with pytest.raises(NoSlack):
        to_network(parse_matpower(basic_text(buses=buses)))


def test_piecewise_cost_rejected():
    costs = [[1, 0, 0, 2, 0.0, 0.0, 100.0, 2000.0]]
    with pytest.raises(UnsupportedCost):
        to_network(parse_matpower(basic_text(costs=costs)))


def test_generator_bus_without_live_unit_becomes_load():
    buses = BASIC["buses"] + [bus_row(3, 2)]
    gens = BASIC["gens"] + [gen_row(3, status=0)]
    branches = BASIC["branches"] + [branch_row(2, 3)]
    case = to_network(parse_matpower(basic_text(buses=buses, gens=gens, branches=branches)))
    assert case.buses[case.position[3]].kind == "load"
    assert len(case.generators) == 1


def test_units_at_one_bus_kept_separately():
    gens = [gen_row(1, pmax=50), gen_row(1, pmax=70)]
    costs = [[2, 0, 0, 3, 0.0, 1.0, 0.0], [2, 0, 0, 3, 0.0, 3.0, 0.0]]
    case = to_network(parse_matpower(basic_text(gens=gens, costs=costs)))
    assert len(case.generators) == 2
    assert sum(g.p_max for g in case.generators) == pytest.approx(1.2)
    assert list(case.gen_bus_pos) == [0, 0]


@pytest.mark.parametrize("name", ["case9", "case14", "case30", "case_ieee30", "case39", "case57",
                                  "case118", "case300", "case24_ieee_rts", "case89pegase"])
def test_partition_covers_buses(name):
    case = cached_case(name)
    load, gen = set(case.load_bus_index), set(case.gen_bus_index)
    assert not load & gen
    assert len(load) + len(gen) == case.n_bus
    assert np.all(case.v_min <= case.v_max)


@pytest.mark.parametrize("name", ["case9", "case30", "case118"])
def test_json_round_trip_is_idempotent(name):
    case = cached_case(name)
    once = network_from_json(network_to_json(case))
    assert once == case
    assert network_to_json(once) == network_to_json(case)


def test_load_case_from_path_and_json(tmp_path):
    p = tmp_path / "tiny.m"
    p.write_text(basic_text())
    case = load_case(p)
    assert case.n_bus == 2
    q = tmp_path / "tiny.json"
    q.write_text(network_to_json(case))
    assert load_case(q) == case
    with pytest.raises(FileNotFoundError):
        load_case(tmp_path / "absent.m")


def test_bundled_cases_listed():
    names = bundled_cases()
    for n in ("case9", "case30", "case_ieee30", "case300", "case2383wp"):
        assert n in names


def _rewrite(text: str, spaces, comments) -> str:
    out = []
    for k, line in enumerate(text.splitlines()):
        line = line.replace("\t", " " * (1 + spaces[k % len(spaces)]))
        if comments[k % len(comments)]:
            line += "  % note ; with ] inside"
        out.append(line)
        if comments[(k + 1) % len(comments)]:
            out.append("% a full-line comment")
    return "\n".join(out)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 4), min_size=1, max_size=7),
       st.lists(st.booleans(), min_size=1, max_size=5))
def test_whitespace_and_comments_do_not_matter(spaces, comments):
    text = basic_text(costs=[[2, 0, 0, 3, 0.01, 1.0, 0.0]])
    assert parse_matpower(_rewrite(text, spaces, comments)) == parse_matpower(text)


def test_prefixless_matrices():
    text = matpower_text(BASIC["buses"], BASIC["gens"], BASIC["branches"], prefix="")
    raw = parse_matpower(text)
    assert len(raw.branch_rows) == 1


def test_json_document_fields():
    doc = json.loads(network_to_json(cached_case("case9")))
    assert {"buses", "generators", "branches", "load_bus_index", "gen_bus_index"} <= set(doc)
    assert doc["buses"][0]["kind"] in ("load", "generator", "slack")
