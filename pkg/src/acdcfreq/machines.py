"""Swing dynamics and the hydro turbine/governor used for FCR-D.

The governor chain, per unit of the turbine rating, is

    e = max(0, f_FCRD - f) / f_N                      one-sided activation
    y = (1/R) (1 + s T_r) / (1 + s T_r r_t / R) e     transient droop
    dg/dt = clip((g0 + y - g) / T_g, +-rate)          servo with gate limits
    P_m = P_N (1 - s T_w) / (1 + 0.5 s T_w) g         hydro turbine

so that in steady state ``dP_m = P_N (f_FCRD - f) / (R f_N)``. Every
function below works elementwise on numpy arrays of any shape, which lets the
same code drive one machine, a multi-machine fleet or a batch of
single-machine equivalents.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence, Tuple

import numpy as np

from .model import FrequencyTargets, GovernorSpec, MachineSpec


def swing_derivatives(dw, p_m, p_e, h_s, d_pu=0.0, f_n: float = 50.0):
    """Classical swing equation on the machine base.

    Parameters
    ----------
    dw : speed deviation (pu)
    p_m, p_e : mechanical and electrical power (pu on machine base)
    h_s : inertia constant (s)
    d_pu : damping (pu power per pu speed)

    Returns
    -------
    (d delta/dt in rad/s, d dw/dt in pu/s)
    """
    ddelta = 2.0 * np.pi * f_n * np.asarray(dw)
    ddw = (np.asarray(p_m) - np.asarray(p_e) - d_pu * np.asarray(dw)) / (2.0 * np.asarray(h_s))
    return ddelta, ddw


def kinetic_energy(machines: Iterable[MachineSpec]) -> float:
    """Stored kinetic energy ``sum H S_N`` in MWs."""
    return float(sum(m.kinetic_energy_mws for m in machines))


def aggregate_beta_g(machines: Iterable[MachineSpec], f_n: float = 50.0) -> float:
    """Generator stiffness ``(1/f_N) sum P_N / R`` over FCR-D units (MW/Hz)."""
    return float(sum(m.turbine_rating_mw / m.governor.r_pu for m in machines if m.fcrd) / f_n)


@dataclass(frozen=True)
class GovernorParams:
    """Array form of one or more :class:`GovernorSpec` (broadcastable)."""

    r: np.ndarray
    rt: np.ndarray
    tr: np.ndarray
    tg: np.ndarray
    tw: np.ndarray
    gate_min: np.ndarray
    gate_max: np.ndarray
    rate: np.ndarray
    p_n_mw: np.ndarray

    @classmethod
    def from_specs(cls, specs: Sequence[GovernorSpec], p_n_mw: Sequence[float]) -> "GovernorParams":
        def col(name):
            return np.array([getattr(g, name) for g in specs], dtype=float)
        return cls(r=col("r_pu"), rt=col("rt_pu"), tr=col("tr_s"), tg=col("tg_s"),
                   tw=col("tw_s"), gate_min=col("gate_min"), gate_max=col("gate_max"),
                   rate=col("rate_max_pu_s"), p_n_mw=np.asarray(p_n_mw, dtype=float))

    @classmethod
    def from_spec(cls, spec: GovernorSpec, p_n_mw) -> "GovernorParams":
        p = np.asarray(p_n_mw, dtype=float)
        full = lambda v: np.full(p.shape, float(v))  # noqa: E731
        return cls(r=full(spec.r_pu), rt=full(spec.rt_pu), tr=full(spec.tr_s),
                   tg=full(spec.tg_s), tw=full(spec.tw_s), gate_min=full(spec.gate_min),
                   gate_max=full(spec.gate_max), rate=full(spec.rate_max_pu_s), p_n_mw=p)


@dataclass
class GovernorState:
    """Washout (x), gate (g) and turbine (z) states, plus the gate set-point."""

    x: np.ndarray
    g: np.ndarray
    z: np.ndarray
    g0: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.stack([self.x, self.g, self.z])


def governor_init(params: GovernorParams, p_m0_mw) -> GovernorState:
    """Rest state delivering ``p_m0_mw``."""
    g0 = np.asarray(p_m0_mw, dtype=float) / params.p_n_mw
    return GovernorState(x=np.zeros_like(g0), g=g0.copy(), z=g0.copy(), g0=g0)


def _lead_lag_ratio(params: GovernorParams):
    tb = params.tr * params.rt / params.r
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(tb > 0, params.tr / np.where(tb > 0, tb, 1.0), 1.0)
    return tb, ratio


def governor_derivatives(x, g, z, f_hz, g0, params: GovernorParams,
                         targets: FrequencyTargets = FrequencyTargets()):
    """Governor state derivatives and mechanical power.

    ``r_t = 0`` removes the transient-droop compensation (static gain only);
    ``T_w = 0`` removes the water column.

    Returns
    -------
    (dx, dg, dz, p_m_mw)
    """
    e = np.maximum(0.0, targets.f_fcrd - np.asarray(f_hz)) / targets.f_n
    u = e / params.r
    tb, ratio = _lead_lag_ratio(params)
    active = tb > 0
    dx = np.where(active, (u - x) / np.where(active, tb, 1.0), 0.0)
    y = np.where(active, ratio * u + (1.0 - ratio) * x, u)
    gc = np.clip(g, params.gate_min, params.gate_max)
    dg = np.clip((g0 + y - gc) / params.tg, -params.rate, params.rate)
    dg = np.where((g >= params.gate_max) & (dg > 0), 0.0, dg)
    dg = np.where((g <= params.gate_min) & (dg < 0), 0.0, dg)
    water = params.tw > 0
    dz = np.where(water, (gc - z) / np.where(water, 0.5 * params.tw, 1.0), 0.0)
    p_pu = np.where(water, 3.0 * z - 2.0 * gc, gc)
    return dx, dg, dz, params.p_n_mw * p_pu


def steady_state_droop_mw(f_hz, params: GovernorParams,
                          targets: FrequencyTargets = FrequencyTargets()):
    """Steady-state FCR-D output ``P_N max(0, f_FCRD - f) / (R f_N)``."""
    return params.p_n_mw * np.maximum(0.0, targets.f_fcrd - np.asarray(f_hz)) / (
        params.r * targets.f_n)


def turbine_step_response(t, tw: float) -> np.ndarray:
    """Unit gate-step response of (1 - s T_w)/(1 + 0.5 s T_w): 1 - 3 exp(-2t/T_w)."""
    t = np.asarray(t, dtype=float)
    return 1.0 - 3.0 * np.exp(-2.0 * t / tw)


def fcrd_split(machines: Sequence[MachineSpec]) -> Tuple[np.ndarray, GovernorParams]:
    """Indices of FCR-D machines and their stacked governor parameters."""
    idx = np.array([k for k, m in enumerate(machines) if m.fcrd], dtype=int)
    specs = [machines[k].governor for k in idx]
    ratings = [machines[k].turbine_rating_mw for k in idx]
    return idx, GovernorParams.from_specs(specs, ratings)
