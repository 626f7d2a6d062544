"""
Stability index on a two-bus feeder
===================================

A single load fed from a stiff source through a reactance of 0.1 p.u.
We push the load up and watch three things move together: the load
voltage, the index ``t = |V| - A/|V|`` and the smallest singular value of
the load-bus Jacobian.
"""

import numpy as np

from vscopf.analysis import Dispatch, loading_margin, prepare, sigma_min_at
from vscopf.case_io import parse_matpower, to_network
from vscopf.powerflow import base_injections, newton_pf
from vscopf.stability import c_index_at

# %%
# Build the case from text. Bus 2 is the slack at 1.0 p.u., bus 1 draws
# 100 MW at unity power factor.

text = """
mpc.baseMVA = 100;
mpc.bus = [
  1 1 100 0 0 0 1 1 0 100 1 2.0 0.0;
  2 3 0   0 0 0 1 1 0 100 1 1.1 0.9;
];
mpc.gen = [ 2 0 0 999 -999 1 100 1 999 0 ];
mpc.branch = [ 2 1 0 0.1 0 0 0 0 0 0 1 -360 360 ];
"""
case = to_network(parse_matpower(text, "two_bus"))
data = prepare(case)
print("A =", data.coupling.A)

# %%
# Sweep the load. ``A`` scales with the load, so the index is evaluated
# with the scaled coupling matrix.

P, Q = base_injections(case)
for lam in (1.0, 2.0, 3.0, 4.0, 4.9):
    st = newton_pf(case, data.Y, p_spec=lam * P, q_spec=lam * Q).state
    t = c_index_at(st, case, lam * data.coupling.A).t_min
    print(f"lambda={lam:4.1f}  |V|={st.magnitude[0]:.4f}  t={t:+.4f}  "
          f"sigma_min={sigma_min_at(st, case, data.Y):.4f}")

# %%
# The analytic nose of this feeder is at P = E^2 / (2X) = 5 p.u.

base = Dispatch(np.array([0.0]), case.bus_v_set())
m = loading_margin(case, base)
print(f"lambda_max = {m.lambda_max:.4f} after {len(m.trace)} power flows")
