"""Offshore energy hub: island frequency, converter droops, coordinator.

The hub is one electrical node. Converter powers are taken positive *into*
the hub, so an exporting link has a negative set-point and the hub balance
is ``P_wpp + sum p_i`` (surplus accelerates the condensers). Each converter
follows

    p_ref,i = p_set,i + P_N,i (f_N - f_hub) / (R_i f_N) + c_i - P_EPC,i

clamped to ``+-limit_i``, where ``c_i`` is the coordinator correction and
``P_EPC`` is only present on the NPS-connected link.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .hvdc import epc_droop
from .model import FrequencyTargets, HubConverter, HubSpec


class HubInfeasibleError(RuntimeError):
    """Every converter is saturated and the hub cannot balance."""

    def __init__(self, surplus_mw: float, t: Optional[float] = None):
        when = "" if t is None else f" at t = {t:.4f} s"
        super().__init__(f"hub balance infeasible{when}: all converters saturated, "
                         f"surplus {surplus_mw:.1f} MW")
        self.surplus_mw = surplus_mw
        self.t = t


def coordinator_derivative(f_hub, k_hc: float, f_n: float = 50.0):
    """Integrator rate ``K_hc (f_N - f_hub) / f_N`` (pu of hub base per s)."""
    return k_hc * (f_n - np.asarray(f_hub)) / f_n


def coordinator_corrections(y: float, factors: Dict[str, float], base_mw: float) -> Dict[str, float]:
    """Set-point correction of each converter, ``participation_i y base``."""
    return {cid: w * y * base_mw for cid, w in factors.items()}


def coordinator_step(f_hub: float, y: float, k_hc: float, factors: Dict[str, float],
                     dt: float, base_mw: float = 2000.0, f_n: float = 50.0,
                     saturated: bool = False):
    """Advance the coordinator integrator by ``dt`` (explicit Euler).

    Returns ``(y_new, corrections)``. With ``saturated`` the integrator is
    frozen (anti-windup).
    """
    if not saturated:
        y = y + dt * float(coordinator_derivative(f_hub, k_hc, f_n))
    return y, coordinator_corrections(y, factors, base_mw)


def nswph_no_epc_reference(f_nps_hz, converter: HubConverter,
                           targets: FrequencyTargets = FrequencyTargets()):
    """EPC correction of the NPS-connected hub link (MW, NPS support positive).

    The converter reference drops by this amount, i.e. less power is drawn
    from the NPS into the hub.
    """
    if converter.epc is None or not converter.epc.enabled:
        return np.zeros_like(np.asarray(f_nps_hz, dtype=float))
    return epc_droop(f_nps_hz, converter.p_n_mw, converter.epc.r_pu,
                     converter.epc_headroom_mw, targets)


@dataclass
class HubModel:
    """Array view of a :class:`HubSpec`."""

    ids: tuple
    p_n: np.ndarray
    p_set: np.ndarray
    droop: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    t_c: np.ndarray
    nps_index: Optional[int]
    weights: np.ndarray
    wpp_mw: float
    e_sc_mws: float
    d_sc_mw: float
    k_hc: float
    base_mw: float
    zero_inertia: bool
    f_n: float = 50.0

    @classmethod
    def from_spec(cls, hub: HubSpec, f_n: float = 50.0) -> "HubModel":
        conv = hub.converters
        ids = tuple(c.id for c in conv)
        limit = np.array([np.inf if c.limit_mw is None else c.limit_mw for c in conv])
        factors = hub.coordinator.factors(ids)
        nps = [k for k, c in enumerate(conv) if c.nps_bus is not None]
        return cls(
            ids=ids,
            p_n=np.array([c.p_n_mw for c in conv], dtype=float),
            p_set=np.array([c.p_set_mw for c in conv], dtype=float),
            droop=np.array([c.droop_pu for c in conv], dtype=float),
            lo=-limit, hi=limit,
            t_c=np.array([c.t_c_s for c in conv], dtype=float),
            nps_index=nps[0] if nps else None,
            weights=np.array([factors.get(c, 0.0) for c in ids], dtype=float),
            wpp_mw=hub.wpp_mw,
            e_sc_mws=hub.kinetic_energy_mws,
            d_sc_mw=sum(c.d_pu * c.s_n_mva for c in hub.condensers),
            k_hc=hub.coordinator.k_hc_pu_s,
            base_mw=hub.coordinator.base_mw,
            zero_inertia=hub.mode == "zero-inertia",
            f_n=f_n,
        )

    @property
    def stiffness(self) -> np.ndarray:
        """Droop stiffness P_N / (R f_N) of each converter (MW/Hz)."""
        return self.p_n / (self.droop * self.f_n)

    def participation(self, alive: np.ndarray) -> np.ndarray:
        """Participation factors renormalized over converters still in service."""
        w = np.where(alive, self.weights, 0.0)
        total = w.sum()
        if total <= 0:
            w = alive.astype(float)
            total = w.sum()
        return w / total if total > 0 else w

    def initial_coordinator(self) -> float:
        """Integrator value that absorbs any set-point imbalance at t = 0."""
        return -(self.wpp_mw + self.p_set.sum()) / self.base_mw

    def unclamped_reference(self, f_hub, y, epc_mw, alive):
        ref = self.p_set + self.stiffness * (self.f_n - f_hub) + \
            self.participation(alive) * y * self.base_mw
        if self.nps_index is not None:
            ref = ref.copy()
            ref[self.nps_index] -= epc_mw
        return np.where(alive, ref, 0.0)

    def reference(self, f_hub, y, epc_mw, alive):
        """Clamped converter references and a saturation mask."""
        raw = self.unclamped_reference(f_hub, y, epc_mw, alive)
        ref = np.clip(raw, self.lo, self.hi)
        sat = alive & ((raw <= self.lo) | (raw >= self.hi))
        return np.where(alive, ref, 0.0), sat

    def surplus(self, p, alive) -> float:
        return self.wpp_mw + float(np.sum(np.where(alive, p, 0.0)))

    def balance(self, y, epc_mw, alive, t: Optional[float] = None):
        """Zero-inertia hub: algebraic frequency where the hub node balances.

        Returns ``(f_hub, p)``. Saturated converters drop out of the droop
        sum automatically through the clamp.
        """
        return hub_frequency_zero_inertia(self, y, epc_mw, alive, t)

    def derivatives(self, f_hub, p, y, epc_mw, alive):
        """Low-inertia hub: (df_hub/dt, dp/dt, dy/dt)."""
        ref, sat = self.reference(f_hub, y, epc_mw, alive)
        dp = np.where(alive, (ref - p) / self.t_c, 0.0)
        surplus = self.surplus(p, alive) - self.d_sc_mw * (f_hub - self.f_n) / self.f_n
        df = self.f_n * surplus / (2.0 * self.e_sc_mws)
        dy = 0.0 if bool(np.all(sat[alive])) else float(
            coordinator_derivative(f_hub, self.k_hc, self.f_n))
        return df, dp, dy

    def coordinator_rate(self, f_hub, y, epc_mw, alive) -> float:
        _, sat = self.reference(f_hub, y, epc_mw, alive)
        if bool(np.all(sat[alive])):
            return 0.0
        return float(coordinator_derivative(f_hub, self.k_hc, self.f_n))


def hub_frequency_zero_inertia(model: HubModel, y: float, epc_mw: float,
                               alive: Sequence[bool], t: Optional[float] = None):
    """Frequency of a zero-inertia hub from its grid-forming droop balance.

    Without binding limits this is
    ``f_N + (P_wpp + sum(p_set + c) - P_EPC) / sum(P_N / (R f_N))``; with
    limits, the monotone clamped balance is solved by bracketing.

    Raises
    ------
    HubInfeasibleError
        If no converter is left unsaturated.
    """
    alive = np.asarray(alive, dtype=bool)
    if not np.any(alive):
        raise HubInfeasibleError(model.wpp_mw, t)
    k = np.where(alive, model.stiffness, 0.0)
    base_ref = model.unclamped_reference(model.f_n, y, epc_mw, alive)
    f_lin = model.f_n + (model.wpp_mw + base_ref.sum()) / k.sum()

    def net(f):
        ref, _ = model.reference(f, y, epc_mw, alive)
        return model.surplus(ref, alive)

    ref, sat = model.reference(f_lin, y, epc_mw, alive)
    if not np.any(sat):
        return f_lin, ref
    # net(f) is non-increasing; find a sign change
    lo_p = model.wpp_mw + np.sum(np.where(alive, model.lo, 0.0))
    hi_p = model.wpp_mw + np.sum(np.where(alive, model.hi, 0.0))
    if lo_p > 0:
        raise HubInfeasibleError(lo_p, t)
    if hi_p < 0:
        raise HubInfeasibleError(hi_p, t)
    span = 1.0
    a, b = f_lin - span, f_lin + span
    while net(a) < 0 or net(b) > 0:
        span *= 2.0
        a, b = f_lin - span, f_lin + span
        if span > 1e6:
            raise HubInfeasibleError(net(f_lin), t)
    if net(a) == 0:
        f = a
    elif net(b) == 0:
        f = b
    else:
        f = brentq(net, a, b, xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)
    ref, _ = model.reference(f, y, epc_mw, alive)
    return f, ref


def hub_dynamics_low_inertia(model: HubModel, f_hub, p, y, epc_mw, alive):
    """Functional form of :meth:`HubModel.derivatives`."""
    return model.derivatives(f_hub, p, y, epc_mw, np.asarray(alive, dtype=bool))
