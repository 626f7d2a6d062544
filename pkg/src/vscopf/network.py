"""Admittance matrix, load/generator partition and the equivalent-source model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .case_io import NetworkCase

__all__ = [
    "ZeroImpedanceBranch",
    "SingularYLL",
    "BranchAdmittances",
    "AdmittanceMatrix",
    "EquivalentModel",
    "CouplingMatrix",
    "branch_admittances",
    "build_admittance",
    "partition_and_equivalent",
    "coupling_matrix",
    "default_generator_voltages",
    "dump_triplets",
]


class ZeroImpedanceBranch(ValueError):
    def __init__(self, from_bus: int, to_bus: int):
        super().__init__(f"branch {from_bus}-{to_bus} has r = x = 0")
        self.from_bus = from_bus
        self.to_bus = to_bus


class SingularYLL(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class BranchAdmittances:
    """Two-port pi-model admittances of every in-service branch.

    ``I_from = yff V_from + yft V_to`` and ``I_to = ytf V_from + ytt V_to``.
    """

    f: np.ndarray  # from-bus positions
    t: np.ndarray  # to-bus positions
    yff: np.ndarray
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray


@dataclass(frozen=True)
class AdmittanceMatrix:
    Y: sp.csr_matrix

    @property
    def G(self) -> sp.csr_matrix:
        return self.Y.real.tocsr()

    @property
    def B(self) -> sp.csr_matrix:
        return self.Y.imag.tocsr()

    @property
    def shape(self) -> tuple[int, int]:
        return self.Y.shape

    def dense(self) -> np.ndarray:
        return self.Y.toarray()


@dataclass(frozen=True)
class EquivalentModel:
    """Load-bus impedance ``Z = Y_LL^-1`` and equivalent source ``E = -Z Y_LG V_G``."""

    Z: np.ndarray
    E: np.ndarray
    V_G: np.ndarray
    Y_LL: sp.csr_matrix
    Y_LG: sp.csr_matrix
    load_pos: np.ndarray
    gen_pos: np.ndarray


@dataclass(frozen=True)
class CouplingMatrix:
    A: np.ndarray
    S_L: np.ndarray


def branch_admittances(case: NetworkCase) -> BranchAdmittances:
    pos = case.position
    live = [br for br in case.branches if br.status]
    f = np.array([pos[br.from_bus] for br in live], dtype=int)
    t = np.array([pos[br.to_bus] for br in live], dtype=int)
    r = np.array([br.r for br in live], dtype=float)
    x = np.array([br.x for br in live], dtype=float)
    zero = (r == 0) & (x == 0)
    if zero.any():
        br = live[int(np.flatnonzero(zero)[0])]
        raise ZeroImpedanceBranch(br.from_bus, br.to_bus)
    ys = 1.0 / (r + 1j * x)
    bc = np.array([br.b_charging for br in live], dtype=float)
    tap = np.array([br.tap_ratio for br in live], dtype=float)
    shift = np.array([br.phase_shift for br in live], dtype=float)
    ratio = tap * np.exp(1j * shift)
    ytt = ys + 0.5j * bc
    yff = ytt / (tap * tap)
    yft = -ys / np.conj(ratio)
    ytf = -ys / ratio
    return BranchAdmittances(f, t, yff, yft, ytf, ytt)


def build_admittance(case: NetworkCase) -> AdmittanceMatrix:
    n = case.n_bus
    br = branch_admittances(case)
    rows = np.concatenate([br.f, br.f, br.t, br.t])
    cols = np.concatenate([br.f, br.t, br.f, br.t])
    vals = np.concatenate([br.yff, br.yft, br.ytf, br.ytt])
    Y = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    shunt = np.array([b.g_shunt + 1j * b.b_shunt for b in case.buses])
    Y = (Y + sp.diags(shunt)).tocsr()
    Y.sum_duplicates()
    return AdmittanceMatrix(Y)


def default_generator_voltages(case: NetworkCase) -> np.ndarray:
    """Generator-bus phasors from set points: angle 0, slack buses at their own angle."""
    v = case.bus_v_set()[case.gen_pos]
    ang = np.zeros(len(case.gen_pos))
    for k, p in enumerate(case.gen_pos):
        if case.buses[p].kind == "slack":
            ang[k] = case.buses[p].angle_init
    return v * np.exp(1j * ang)


def _partition(Y: sp.csr_matrix, load_pos, gen_pos):
    Y = sp.csr_matrix(Y)
    Y_LL = Y[load_pos][:, load_pos].tocsr()
    Y_LG = Y[load_pos][:, gen_pos].tocsr()
    return Y_LL, Y_LG


def partition_and_equivalent(
    case: NetworkCase,
    Y: AdmittanceMatrix,
    V_G: np.ndarray | None = None,
) -> EquivalentModel:
    load_pos, gen_pos = case.load_pos, case.gen_pos
    if V_G is None:
        V_G = default_generator_voltages(case)
    V_G = np.asarray(V_G, dtype=complex)
    if V_G.shape != (len(gen_pos),):
        raise ValueError(f"V_G must have length {len(gen_pos)}")
    Y_LL, Y_LG = _partition(Y.Y, load_pos, gen_pos)
    n = len(load_pos)
    if n == 0:
        return EquivalentModel(np.zeros((0, 0), complex), np.zeros(0, complex), V_G,
                               Y_LL, Y_LG, load_pos, gen_pos)
    lu, piv = sla.lu_factor(Y_LL.toarray(), check_finite=True)
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= n * np.finfo(float).eps * max(pivots.max(), 1.0):
        raise SingularYLL("Y_LL is numerically singular")
    Z = sla.lu_solve((lu, piv), np.eye(n, dtype=complex))
    E = -Z @ (Y_LG @ V_G)
    return EquivalentModel(Z, E, V_G, Y_LL, Y_LG, load_pos, gen_pos)


def coupling_matrix(model: EquivalentModel, S_L: np.ndarray) -> CouplingMatrix:
    """``A_ij = |Z_ij| |S_j|`` for load injections ``S_L`` (load_bus_index order)."""
    S_L = np.asarray(S_L, dtype=complex)
    A = np.abs(model.Z) * np.abs(S_L)[None, :]
    return CouplingMatrix(A, S_L)


def dump_triplets(M) -> str:
    """Text triplets ``row col re im`` (0-based) of the structural nonzeros of ``M``."""
    M = sp.coo_matrix(M)
    lines = [f"{i} {j} {v.real:.17g} {v.imag:.17g}" for i, j, v in
             zip(M.row, M.col, M.data.astype(complex))]
    return "\n".join(lines) + ("\n" if lines else "")
