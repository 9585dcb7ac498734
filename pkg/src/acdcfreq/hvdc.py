"""HVDC links: first-order converter response and the EPC droop."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional

import numpy as np

from .model import EpcSpec, FrequencyTargets, HvdcLinkSpec


@dataclass(frozen=True)
class EpcController:
    """Under-frequency EPC droop for one link (or an array of links).

    Below ``f_tfl`` the correction is ``P_N (f_TFL - f) / (R_h f_N)``,
    clamped to ``[0, headroom_import]``; at or above ``f_tfl`` it is reset to
    exactly zero.
    """

    enabled: bool
    r_pu: float
    p_n_mw: float
    headroom_import_mw: float
    headroom_export_mw: float = 0.0

    @classmethod
    def from_link(cls, link: HvdcLinkSpec) -> "EpcController":
        return cls(enabled=link.epc.enabled, r_pu=link.epc.r_pu, p_n_mw=link.p_n_mw,
                   headroom_import_mw=link.import_headroom_mw,
                   headroom_export_mw=link.export_headroom_mw)

    def beta_mw_hz(self, f_n: float = 50.0) -> float:
        return self.p_n_mw / (self.r_pu * f_n) if self.enabled else 0.0


def epc_output(f_hz, ctrl: EpcController, targets: FrequencyTargets = FrequencyTargets()):
    """EPC power correction (MW, import-support positive)."""
    f = np.asarray(f_hz, dtype=float)
    if not ctrl.enabled:
        return np.zeros_like(f)
    return epc_droop(f, ctrl.p_n_mw, ctrl.r_pu, ctrl.headroom_import_mw, targets)


def epc_droop(f_hz, p_n_mw, r_pu, headroom_mw, targets: FrequencyTargets = FrequencyTargets()):
    """Vectorized EPC law; ``r_pu = inf`` gives no response."""
    f = np.asarray(f_hz, dtype=float)
    raw = np.asarray(p_n_mw) * (targets.f_tfl - f) / (np.asarray(r_pu) * targets.f_n)
    out = np.clip(raw, 0.0, headroom_mw)
    return np.where(f >= targets.f_tfl, 0.0, out)


def converter_dynamics(p_mw, p_ref_mw, t_c_s):
    """``dP/dt = (P_ref - P) / T_c``."""
    return (np.asarray(p_ref_mw) - np.asarray(p_mw)) / np.asarray(t_c_s)


def aggregate_beta_h(links: Iterable[HvdcLinkSpec], f_n: float = 50.0) -> float:
    """Link stiffness ``(1/f_N) sum P_N / R_h`` over EPC-enabled links (MW/Hz)."""
    return float(sum(k.p_n_mw / k.epc.r_pu for k in links if k.epc.enabled) / f_n)


def uniform_droop(p_n_total_mw: float, beta_h: float, f_n: float = 50.0) -> float:
    """Common per-unit droop giving ``beta_h`` over links totalling ``p_n_total_mw``."""
    if beta_h <= 0:
        return float("inf")
    return p_n_total_mw / (f_n * beta_h)


def with_epc(link: HvdcLinkSpec, r_pu: Optional[float], enabled: bool = True) -> HvdcLinkSpec:
    """Copy of ``link`` with EPC droop ``r_pu`` (``None`` or inf disables EPC)."""
    if r_pu is None or not np.isfinite(r_pu):
        return replace(link, epc=replace(link.epc, enabled=False))
    return replace(link, epc=replace(link.epc, enabled=enabled, r_pu=float(r_pu)))


__all__ = ["EpcController", "EpcSpec", "epc_output", "epc_droop", "converter_dynamics",
           "aggregate_beta_h", "uniform_droop", "with_epc"]
