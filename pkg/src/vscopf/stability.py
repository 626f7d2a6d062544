"""Jacobian-nonsingularity index, voltage-drop diagnostics and branch VCPI."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .case_io import NetworkCase
from .network import CouplingMatrix, EquivalentModel
from .powerflow import VoltageState

__all__ = [
    "ZeroVoltage",
    "ZeroSendingVoltage",
    "IndexReport",
    "SegmentResult",
    "c_index",
    "c_index_at",
    "voltage_drop_indices",
    "segment_connectedness",
    "vcpi",
    "vcpi_max",
]


class ZeroVoltage(ValueError):
    def __init__(self, bus: int):
        super().__init__(f"load bus at position {bus} has zero voltage")
        self.bus = bus


class ZeroSendingVoltage(ValueError):
    pass


@dataclass(frozen=True)
class IndexReport:
    t: np.ndarray
    t_min: float
    holds: bool
    generalized_drop: np.ndarray | None = None
    aggregate_drop: np.ndarray | None = None


@dataclass(frozen=True)
class SegmentResult:
    holds: bool
    witness: tuple[float, int] | None = None  # (t, load-bus position)


def c_index(V_L, A: CouplingMatrix | np.ndarray) -> IndexReport:
    """``t_i = |V_i| - sum_j A_ij / |V_j|`` over load buses."""
    A = A.A if isinstance(A, CouplingMatrix) else np.asarray(A, float)
    vm = np.abs(np.asarray(V_L, dtype=complex))
    zero = np.flatnonzero(vm == 0)
    if zero.size:
        raise ZeroVoltage(int(zero[0]))
    t = vm - A @ (1.0 / vm)
    t_min = float(t.min()) if t.size else float("inf")
    return IndexReport(t=t, t_min=t_min, holds=bool(t_min > 0))


def c_index_at(state: VoltageState, case: NetworkCase, A: CouplingMatrix | np.ndarray) -> IndexReport:
    """Index evaluated at the load-bus voltages of a full network state."""
    return c_index(state.V[case.load_pos], A)


def voltage_drop_indices(V_L, model: EquivalentModel) -> tuple[np.ndarray, np.ndarray]:
    """Per-bus ``sum_j |Z_ij I_j|`` and ``|sum_j Z_ij I_j|`` with ``I_L = Y_LL (V_L - E)``."""
    V_L = np.asarray(V_L, dtype=complex)
    I_L = model.Y_LL @ (V_L - model.E)
    ZI = model.Z * I_L[None, :]
    return np.abs(ZI).sum(axis=1), np.abs(ZI.sum(axis=1))


def segment_connectedness(model: EquivalentModel, v1, samples: int = 1000) -> SegmentResult:
    """Sample the segment from ``E`` to ``v1`` and test the index condition on each point.

    Along ``V_L(t) = E + (v1 - E) t`` the load currents are ``t Y_LL (v1 - E)``,
    so the generalized drop grows linearly in ``t``.
    """
    v1 = np.asarray(v1, dtype=complex)
    E = model.E
    I1 = model.Y_LL @ (v1 - E)
    drop1 = np.abs(model.Z * I1[None, :]).sum(axis=1)
    ts = np.linspace(0.0, 1.0, samples + 1)
    V = E[None, :] + ts[:, None] * (v1 - E)[None, :]
    margin = np.abs(V) - ts[:, None] * drop1[None, :]
    bad = margin <= 0
    if not bad.any():
        return SegmentResult(True)
    k = int(np.flatnonzero(bad.any(axis=1))[0])
    bus = int(np.flatnonzero(bad[k])[0])
    return SegmentResult(False, (float(ts[k]), bus))


def vcpi(V_s: complex, V_r: complex) -> float:
    """Voltage collapse proximity index of a branch from its end voltages."""
    vs, vr = abs(V_s), abs(V_r)
    if vs == 0:
        raise ZeroSendingVoltage("sending-end voltage is zero")
    vd = abs(V_s - V_r)
    dtheta = np.angle(V_s) - np.angle(V_r)
    return float(2 * vr * vd / vs**2 + 2 * vr * np.cos(dtheta) / vs - 2 * vr**2 / vs**2)


def vcpi_max(state: VoltageState, case: NetworkCase) -> float:
    """Largest VCPI over in-service branches, each evaluated in both directions."""
    V = state.V
    pos = case.position
    best = 0.0
    for br in case.branches:
        if not br.status:
            continue
        a, b = V[pos[br.from_bus]], V[pos[br.to_bus]]
        best = max(best, vcpi(a, b), vcpi(b, a))
    return best
