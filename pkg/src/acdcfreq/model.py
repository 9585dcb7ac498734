"""Scenario-level domain types.

All element powers are kept in MW / MVar. Conversion to per unit happens
inside the solvers on ``Scenario.base_power_mva``. Instances are frozen and
may be shared freely once a scenario has been validated.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

SCHEMA_VERSION = "1.0"

EVENT_KINDS = ("generator-trip", "hvdc-trip", "load-step")
HUB_MODES = ("low-inertia", "zero-inertia")
CONVERTER_MODES = ("grid-following", "grid-forming")
INTEGRATORS = ("rk4", "trapezoidal")


@dataclass(frozen=True)
class FrequencyTargets:
    """Absolute frequency thresholds in Hz.

    Construction does not check the ordering so the steady-state algebra can
    be evaluated in limit cases (e.g. ``f_tfl == f_n``); scenario validation
    reports ordering violations instead.
    """

    f_n: float = 50.0
    f_fcrd: float = 49.9
    f_tfl: float = 49.6
    f_min: float = 49.0
    f_shed: float = 48.8
    df_ss_max: float = 0.5

    @property
    def ordered(self) -> bool:
        return self.f_shed < self.f_min < self.f_tfl < self.f_fcrd < self.f_n


@dataclass(frozen=True)
class Bus:
    id: str
    kv: float = 400.0
    slack: bool = False


@dataclass(frozen=True)
class Branch:
    """Pi-equivalent branch; ``ratio`` is the off-nominal tap on the from side."""

    id: str
    from_bus: str
    to_bus: str
    r_pu: float
    x_pu: float
    b_pu: float = 0.0
    ratio: float = 1.0


@dataclass(frozen=True)
class GovernorSpec:
    """Hydro turbine/governor providing FCR-D.

    ``p_n_mw`` is the turbine rating used for the droop gain; when omitted the
    machine MVA rating is used. Gate limits are in pu of ``p_n_mw``.
    """

    enabled: bool = True
    r_pu: float = 0.1
    rt_pu: float = 0.4
    tr_s: float = 5.0
    tg_s: float = 0.2
    tw_s: float = 1.5
    gate_min: float = 0.0
    gate_max: float = 1.0
    rate_max_pu_s: float = 0.1
    p_n_mw: Optional[float] = None


@dataclass(frozen=True)
class MachineSpec:
    """Classical synchronous machine (constant E' behind x'd).

    ``v_set_pu`` makes the machine bus a PV bus in the initial power flow;
    otherwise ``q0_mvar`` is imposed.
    """

    id: str
    bus: str
    s_n_mva: float
    h_s: float
    p0_mw: float
    q0_mvar: float = 0.0
    d_pu: float = 1.0
    xd_prime_pu: float = 0.3
    v_set_pu: Optional[float] = None
    governor: Optional[GovernorSpec] = None

    @property
    def kinetic_energy_mws(self) -> float:
        return self.h_s * self.s_n_mva

    @property
    def fcrd(self) -> bool:
        return self.governor is not None and self.governor.enabled

    @property
    def turbine_rating_mw(self) -> float:
        if self.governor is not None and self.governor.p_n_mw is not None:
            return self.governor.p_n_mw
        return self.s_n_mva


@dataclass(frozen=True)
class ZipLoadSpec:
    """Voltage-dependent load; the same z/i/p split applies to P and Q.

    ``v0_pu=None`` means the reference voltage is the initial power-flow
    voltage, i.e. the load draws exactly ``p0_mw`` before any disturbance.
    """

    id: str
    bus: str
    p0_mw: float
    q0_mvar: float = 0.0
    z: float = 0.0
    i: float = 0.0
    p: float = 1.0
    v0_pu: Optional[float] = None


@dataclass(frozen=True)
class EpcSpec:
    enabled: bool = False
    r_pu: float = 0.33
    headroom_import_mw: Optional[float] = None
    headroom_export_mw: Optional[float] = None
    delay_s: float = 0.0


@dataclass(frozen=True)
class HvdcLinkSpec:
    """Point-to-point link seen from the NPS terminal (import positive)."""

    id: str
    bus: str
    p_n_mw: float
    p0_mw: float
    t_c_s: float = 0.1
    q0_mvar: float = 0.0
    epc: EpcSpec = field(default_factory=EpcSpec)

    @property
    def import_headroom_mw(self) -> float:
        physical = max(self.p_n_mw - self.p0_mw, 0.0)
        if self.epc.headroom_import_mw is None:
            return physical
        return min(physical, self.epc.headroom_import_mw)

    @property
    def export_headroom_mw(self) -> float:
        physical = max(self.p_n_mw + self.p0_mw, 0.0)
        if self.epc.headroom_export_mw is None:
            return physical
        return min(physical, self.epc.headroom_export_mw)


@dataclass(frozen=True)
class CondenserSpec:
    id: str
    s_n_mva: float = 300.0
    h_s: float = 2.0
    d_pu: float = 0.0


@dataclass(frozen=True)
class HubConverter:
    """Offshore terminal of a hub link; ``p_set_mw`` is power into the hub.

    ``nps_bus`` marks the link whose onshore end is in the NPS; only that one
    carries EPC settings. ``limit_mw=None`` disables the power clamp.
    """

    id: str
    area: str
    p_n_mw: float
    p_set_mw: float
    droop_pu: float
    mode: str = "grid-following"
    limit_mw: Optional[float] = None
    t_c_s: float = 0.05
    nps_bus: Optional[str] = None
    epc: Optional[EpcSpec] = None

    @property
    def epc_headroom_mw(self) -> float:
        """Room to cut import into the hub, i.e. raise NPS-side injection."""
        physical = max(self.p_n_mw + self.p_set_mw, 0.0)
        if self.epc is None or self.epc.headroom_import_mw is None:
            return physical
        return min(physical, self.epc.headroom_import_mw)


@dataclass(frozen=True)
class CoordinatorSpec:
    k_hc_pu_s: float = 1.65
    base_mw: float = 2000.0
    participation: Optional[Tuple[Tuple[str, float], ...]] = None

    def factors(self, converter_ids) -> Dict[str, float]:
        ids = list(converter_ids)
        if self.participation is None:
            return {c: 1.0 / len(ids) for c in ids} if ids else {}
        return dict(self.participation)


@dataclass(frozen=True)
class HubSpec:
    mode: str
    wpp_mw: float
    converters: Tuple[HubConverter, ...]
    condensers: Tuple[CondenserSpec, ...] = ()
    coordinator: CoordinatorSpec = field(default_factory=CoordinatorSpec)

    @property
    def kinetic_energy_mws(self) -> float:
        return sum(c.h_s * c.s_n_mva for c in self.condensers)


@dataclass(frozen=True)
class Event:
    t_s: float
    kind: str
    target: str
    magnitude_mw: Optional[float] = None


@dataclass(frozen=True)
class SolverConfig:
    dt_s: float = 0.01
    t_end_s: float = 60.0
    integrator: str = "rk4"
    newton_tol: float = 1e-8
    newton_max_iter: int = 20


@dataclass(frozen=True)
class Scenario:
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...] = ()
    machines: Tuple[MachineSpec, ...] = ()
    loads: Tuple[ZipLoadSpec, ...] = ()
    hvdc_links: Tuple[HvdcLinkSpec, ...] = ()
    hub: Optional[HubSpec] = None
    events: Tuple[Event, ...] = ()
    targets: FrequencyTargets = field(default_factory=FrequencyTargets)
    solver: SolverConfig = field(default_factory=SolverConfig)
    base_power_mva: float = 1000.0
    initial_frequency_hz: float = 49.9
    name: str = ""
    description: str = ""
    schema_version: str = SCHEMA_VERSION

    @property
    def kinetic_energy_mws(self) -> float:
        return sum(m.kinetic_energy_mws for m in self.machines)

    @property
    def slack_bus(self) -> Bus:
        slack = [b for b in self.buses if b.slack]
        if len(slack) != 1:
            raise ValueError(f"expected exactly one slack bus, found {len(slack)}")
        return slack[0]

    def machine(self, mid: str) -> MachineSpec:
        for m in self.machines:
            if m.id == mid:
                return m
        raise KeyError(mid)

    def link(self, lid: str) -> HvdcLinkSpec:
        for link in self.hvdc_links:
            if link.id == lid:
                return link
        raise KeyError(lid)

    def with_solver(self, **changes) -> "Scenario":
        return replace(self, solver=replace(self.solver, **changes))


@dataclass
class Metrics:
    nadir_hz: float
    t_nadir_s: float
    max_ifd_hz: float
    rocof_hz_s: float
    df_ss_hz: float
    peak_epc_mw: Dict[str, float] = field(default_factory=dict)
    fcrd_power_at_nadir_mw: float = 0.0
    below_min_allowed: bool = False
    load_shedding_breach: bool = False
    ss_limit_breach: bool = False

    def to_dict(self) -> dict:
        out = {
            "nadir_hz": self.nadir_hz,
            "t_nadir_s": self.t_nadir_s,
            "max_ifd_hz": self.max_ifd_hz,
            "rocof_hz_s": self.rocof_hz_s,
            "df_ss_hz": self.df_ss_hz,
            "fcrd_power_at_nadir_mw": self.fcrd_power_at_nadir_mw,
            "below_min_allowed": self.below_min_allowed,
            "load_shedding_breach": self.load_shedding_breach,
            "ss_limit_breach": self.ss_limit_breach,
        }
        for lid, value in self.peak_epc_mw.items():
            out[f"peak_epc_mw.{lid}"] = value
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "Metrics":
        peak = {k.split(".", 1)[1]: float(v) for k, v in data.items()
                if k.startswith("peak_epc_mw.")}
        return cls(
            nadir_hz=float(data["nadir_hz"]),
            t_nadir_s=float(data["t_nadir_s"]),
            max_ifd_hz=float(data["max_ifd_hz"]),
            rocof_hz_s=float(data["rocof_hz_s"]),
            df_ss_hz=float(data["df_ss_hz"]),
            peak_epc_mw=peak,
            fcrd_power_at_nadir_mw=float(data["fcrd_power_at_nadir_mw"]),
            below_min_allowed=bool(data["below_min_allowed"]),
            load_shedding_breach=bool(data["load_shedding_breach"]),
            ss_limit_breach=bool(data["ss_limit_breach"]),
        )


@dataclass
class SimulationResult:
    """Recorded channels on a common time grid.

    Channel names follow ``<element_id>.<quantity>``; system-wide channels use
    the ``system`` prefix and the offshore hub the ``hub`` prefix.
    """

    t: np.ndarray
    channels: Dict[str, np.ndarray]
    metrics: Optional[Metrics] = None
    scenario_name: str = ""

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def select(self, suffix: str) -> Dict[str, np.ndarray]:
        """Channels ending in ``.<suffix>`` keyed by element id."""
        tail = "." + suffix
        return {k[: -len(tail)]: v for k, v in self.channels.items() if k.endswith(tail)}

    @property
    def f_avg(self) -> np.ndarray:
        return self.channels["system.f_avg_fcrd_hz"]

    @property
    def speeds(self) -> Dict[str, np.ndarray]:
        return self.select("speed_hz")

    @property
    def voltages(self) -> Dict[str, np.ndarray]:
        return self.select("v_pu")

    @property
    def link_powers(self) -> Dict[str, np.ndarray]:
        return self.select("p_mw")

    @property
    def epc_powers(self) -> Dict[str, np.ndarray]:
        return self.select("p_epc_mw")

    @property
    def hub_frequency(self) -> Optional[np.ndarray]:
        return self.channels.get("hub.f_hz")
