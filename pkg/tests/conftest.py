from __future__ import annotations

import functools

import numpy as np
import pytest

from vscopf.analysis import prepare
from vscopf.case_io import load_case, parse_matpower, to_network


def matpower_text(buses, gens, branches, costs=None, base=100.0, prefix="mpc."):
    """MATPOWER script from row lists (columns as in the MATPOWER format)."""

    def block(name, rows):
        body = "\n".join("\t" + "\t".join(repr(float(v)) for v in r) + ";" for r in rows)
        return f"{prefix}{name} = [\n{body}\n];\n"

    text = f"function mpc = synthetic\n{prefix}version = '2';\n{prefix}baseMVA = {base};\n"
    text += block("bus", buses) + block("gen", gens) + block("branch", branches)
    if costs is not None:
        text += block("gencost", costs)
    return text


def bus_row(i, kind, pd=0.0, qd=0.0, gs=0.0, bs=0.0, vm=1.0, va=0.0, vmax=1.1, vmin=0.9):
    return [i, kind, pd, qd, gs, bs, 1, vm, va, 100, 1, vmax, vmin]


def gen_row(bus, pg=0.0, qg=0.0, qmax=999.0, qmin=-999.0, vg=1.0, pmax=999.0, pmin=0.0, status=1):
    return [bus, pg, qg, qmax, qmin, vg, 100, status, pmax, pmin]


def branch_row(f, t, r=0.0, x=0.1, b=0.0, rate=0.0, tap=0.0, shift=0.0, status=1):
    return [f, t, r, x, b, rate, rate, rate, tap, shift, status, -360, 360]


def two_bus_case(p_mw=40.0, q_mvar=20.0, x=0.1, r=0.0, vg=1.0):
    """Load bus 1 fed from slack bus 2 over a single branch."""
    text = matpower_text(
        [bus_row(1, 1, p_mw, q_mvar, vmin=0.0, vmax=2.0), bus_row(2, 3, vm=vg)],
        [gen_row(2, vg=vg)],
        [branch_row(2, 1, r=r, x=x)],
        [[2, 0, 0, 3, 0.0, 1.0, 0.0]],
    )
    return to_network(parse_matpower(text, "two_bus"))


def radial_case(p_mw=30.0, q_mvar=10.0):
    """Four-bus tree: slack 1, generator 4, loads 2 and 3."""
    text = matpower_text(
        [bus_row(1, 3), bus_row(2, 1, p_mw, q_mvar), bus_row(3, 1, p_mw, q_mvar), bus_row(4, 2)],
        [gen_row(1, pmax=300), gen_row(4, pg=20, pmax=100)],
        [branch_row(1, 2, r=0.01, x=0.08, b=0.02), branch_row(2, 3, r=0.02, x=0.1),
         branch_row(2, 4, r=0.01, x=0.05)],
        [[2, 0, 0, 3, 0.02, 10.0, 0.0], [2, 0, 0, 3, 0.05, 20.0, 0.0]],
    )
    return to_network(parse_matpower(text, "radial4"))


def zero_load_case():
    text = matpower_text(
        [bus_row(1, 3), bus_row(2, 1), bus_row(3, 1), bus_row(4, 2)],
        [gen_row(1), gen_row(4, pg=0.0)],
        [branch_row(1, 2, r=0.01, x=0.1), branch_row(2, 3, r=0.01, x=0.1),
         branch_row(3, 4, r=0.01, x=0.1), branch_row(1, 3, r=0.02, x=0.2)],
        [[2, 0, 0, 3, 0.01, 1.0, 0.5], [2, 0, 0, 3, 0.01, 1.0, 0.25]],
    )
    return to_network(parse_matpower(text, "zero_load"))


@functools.lru_cache(maxsize=None)
def cached_case(name: str):
    return load_case(name)


@functools.lru_cache(maxsize=None)
def cached_data(name: str):
    return prepare(cached_case(name))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
