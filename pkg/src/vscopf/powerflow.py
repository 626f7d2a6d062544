"""Rectangular-coordinate power flow.

Voltages are ``V = e + i f``. PV buses hold ``|V|`` and real injection,
PQ (load) buses hold both injections, and slack buses hold the full phasor.
Reactive limits are not enforced here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .case_io import NetworkCase
from .network import AdmittanceMatrix

__all__ = [
    "Diverged",
    "SingularJacobian",
    "VoltageState",
    "PFSolution",
    "injections",
    "complex_jacobian",
    "jacobian_LL",
    "newton_pf",
    "flat_start",
    "min_singular_value",
    "DENSE_SVD_LIMIT",
    "base_injections",
]


class Diverged(RuntimeError):
    def __init__(self, iterations: int, mismatch: float, state: "VoltageState | None" = None):
        super().__init__(f"power flow did not converge after {iterations} iterations "
                         f"(max mismatch {mismatch:.3e})")
        self.iterations = iterations
        self.mismatch = mismatch
        self.state = state


class SingularJacobian(RuntimeError):
    pass


@dataclass(frozen=True)
class VoltageState:
    e: np.ndarray
    f: np.ndarray

    @classmethod
    def from_complex(cls, V) -> "VoltageState":
        V = np.asarray(V, dtype=complex)
        return cls(V.real.copy(), V.imag.copy())

    @property
    def V(self) -> np.ndarray:
        return self.e + 1j * self.f

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.e, self.f)

    @property
    def angle(self) -> np.ndarray:
        return np.arctan2(self.f, self.e)


@dataclass(frozen=True)
class PFSolution:
    state: VoltageState
    iterations: int
    max_mismatch: float
    converged: bool


def injections(state: VoltageState, Y: AdmittanceMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Real and reactive bus injections from the rectangular power flow equations."""
    G, B = Y.G, Y.B
    e, f = np.asarray(state.e, float), np.asarray(state.f, float)
    Ge, Gf, Be, Bf = G @ e, G @ f, B @ e, B @ f
    # P_i = sum_j G_ij (e_i e_j + f_i f_j) + B_ij (e_j f_i - e_i f_j)
    P = e * (Ge - Bf) + f * (Gf + Be)
    # Q_i = sum_j G_ij (e_j f_i - e_i f_j) - B_ij (e_i e_j + f_i f_j)
    Q = f * (Ge - Bf) - e * (Gf + Be)
    return P, Q


def complex_jacobian(state: VoltageState, Y: AdmittanceMatrix):
    """Sparse ``(dS/de, dS/df)`` of the complex injections ``S = V conj(Y V)``."""
    V = state.V
    Ybus = Y.Y
    Ic = np.conj(Ybus @ V)
    dV = sp.diags(V) @ Ybus.conj()
    dS_de = sp.diags(Ic) + dV
    dS_df = 1j * (sp.diags(Ic) - dV)
    return dS_de.tocsr(), dS_df.tocsr()


def jacobian_LL(state: VoltageState, Y: AdmittanceMatrix, load_index, sparse: bool = False):
    """``[[dP_L/de_L, dP_L/df_L], [dQ_L/de_L, dQ_L/df_L]]``, dense unless ``sparse``."""
    idx = np.asarray(load_index, dtype=int)
    dS_de, dS_df = complex_jacobian(state, Y)
    Se = dS_de[idx][:, idx]
    Sf = dS_df[idx][:, idx]
    J = sp.bmat([[Se.real, Sf.real], [Se.imag, Sf.imag]], format="csc")
    return J if sparse else J.toarray()


DENSE_SVD_LIMIT = 800


def min_singular_value(M) -> float:
    """Smallest singular value; large sparse matrices go through ``1 / ||M^-1||_2``."""
    if sp.issparse(M):
        if M.shape[0] == 0:
            return 0.0
        if M.shape[0] <= DENSE_SVD_LIMIT or M.shape[0] != M.shape[1]:
            return min_singular_value(M.toarray())
        try:
            lu = spla.splu(sp.csc_matrix(M))
        except RuntimeError:  # exactly singular
            return 0.0
        n = M.shape[0]
        inv = spla.LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda v: lu.solve(v, trans="T"),
                                  dtype=float)
        s = spla.svds(inv, k=1, which="LM", return_singular_vectors=False,
                      solver="arpack", tol=1e-12, random_state=0)
        return float(1.0 / s[0])
    M = np.asarray(M, dtype=float)
    if M.size == 0:
        return 0.0
    return float(sla.svdvals(M, check_finite=True).min())


def base_injections(case: NetworkCase, pg: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Specified bus injections ``P_G - P_D`` and ``Q_G - Q_D`` for a generator dispatch."""
    if pg is None:
        pg = np.array([g.p_init for g in case.generators])
    qg = np.array([g.q_init for g in case.generators])
    P = -case.p_load.copy()
    Q = -case.q_load.copy()
    np.add.at(P, case.gen_bus_pos, pg)
    np.add.at(Q, case.gen_bus_pos, qg)
    return P, Q


def flat_start(case: NetworkCase, v_set: np.ndarray | None = None) -> VoltageState:
    """``e = 1, f = 0`` at load buses; set-point magnitudes at PV/slack buses."""
    vm = case.bus_v_set() if v_set is None else np.asarray(v_set, float)
    vm = np.where(np.isin(np.arange(case.n_bus), case.load_pos), 1.0, vm)
    ang = np.zeros(case.n_bus)
    for k in case.slack_positions:
        ang[k] = case.buses[k].angle_init
    return VoltageState.from_complex(vm * np.exp(1j * ang))


def newton_pf(
    case: NetworkCase,
    Y: AdmittanceMatrix,
    init: VoltageState | None = None,
    *,
    p_spec: np.ndarray | None = None,
    q_spec: np.ndarray | None = None,
    v_set: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iter: int = 30,
) -> PFSolution:
    """Newton-Raphson power flow in rectangular coordinates.

    ``p_spec``/``q_spec`` are bus injections (defaults from the case
    dispatch), ``v_set`` the bus magnitudes held at PV buses (defaults to the
    generator set points). Slack phasors are taken from ``init``.
    Raises :class:`Diverged` or :class:`SingularJacobian`.
    """
    n = case.n_bus
    P0, Q0 = base_injections(case)
    p_spec = P0 if p_spec is None else np.asarray(p_spec, float)
    q_spec = Q0 if q_spec is None else np.asarray(q_spec, float)
    if v_set is None:
        v_set = case.bus_v_set()
    v_set = np.asarray(v_set, float)
    if init is None:
        init = flat_start(case, v_set)

    slack = np.zeros(n, bool)
    slack[case.slack_positions] = True
    pq = np.zeros(n, bool)
    pq[case.load_pos] = True
    pv = ~slack & ~pq
    free = np.flatnonzero(~slack)
    pq_idx = np.flatnonzero(pq)
    pv_idx = np.flatnonzero(pv)
    p_rows = free
    e = np.array(init.e, float)
    f = np.array(init.f, float)
    vset2 = v_set[pv_idx] ** 2

    def mismatch(e, f):
        P, Q = injections(VoltageState(e, f), Y)
        return np.concatenate([
            P[p_rows] - p_spec[p_rows],
            Q[pq_idx] - q_spec[pq_idx],
            e[pv_idx] ** 2 + f[pv_idx] ** 2 - vset2,
        ])

    F = mismatch(e, f)
    norm = float(np.max(np.abs(F), initial=0.0))
    it = 0
    while norm > tol:
        if it >= max_iter or not np.isfinite(norm) or norm > 1e8:
            raise Diverged(it, norm, VoltageState(e, f))
        state = VoltageState(e, f)
        dS_de, dS_df = complex_jacobian(state, Y)
        Je = sp.vstack([dS_de[p_rows].real, dS_de[pq_idx].imag,
                        sp.csr_matrix((2 * e[pv_idx], (np.arange(len(pv_idx)), pv_idx)),
                                      shape=(len(pv_idx), n))])
        Jf = sp.vstack([dS_df[p_rows].real, dS_df[pq_idx].imag,
                        sp.csr_matrix((2 * f[pv_idx], (np.arange(len(pv_idx)), pv_idx)),
                                      shape=(len(pv_idx), n))])
        J = sp.hstack([Je[:, free], Jf[:, free]]).tocsc()
        try:
            step = spla.splu(J).solve(-F)
        except RuntimeError as exc:
            raise SingularJacobian(str(exc)) from None
        if not np.all(np.isfinite(step)):
            raise SingularJacobian("non-finite Newton step")
        m = len(free)
        e[free] += step[:m]
        f[free] += step[m:]
        it += 1
        F = mismatch(e, f)
        norm = float(np.max(np.abs(F), initial=0.0))
    return PFSolution(VoltageState(e, f), it, norm, True)
