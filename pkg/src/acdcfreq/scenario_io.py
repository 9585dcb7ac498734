"""Loading, validating and serializing scenario files (JSON)."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .model import (
    CONVERTER_MODES,
    EVENT_KINDS,
    HUB_MODES,
    INTEGRATORS,
    SCHEMA_VERSION,
    Branch,
    Bus,
    CondenserSpec,
    CoordinatorSpec,
    EpcSpec,
    Event,
    FrequencyTargets,
    GovernorSpec,
    HubConverter,
    HubSpec,
    HvdcLinkSpec,
    MachineSpec,
    Scenario,
    SolverConfig,
    ZipLoadSpec,
)

PathLike = Union[str, Path]

_REQUIRED = object()


class ScenarioParseError(ValueError):
    """Malformed scenario document; ``field`` is a dotted path."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ScenarioValidationError(ValueError):
    def __init__(self, diagnostics: List["Diagnostic"]):
        errors = [d for d in diagnostics if d.severity == "error"]
        lines = "\n".join(f"  {d}" for d in errors)
        super().__init__(f"scenario failed validation with {len(errors)} error(s):\n{lines}")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Diagnostic:
    element: str
    rule: str
    message: str
    severity: str = "error"

    def __str__(self) -> str:
        return f"[{self.severity}] {self.rule} ({self.element}): {self.message}"


# -- parsing ---------------------------------------------------------------

class _Reader:
    """Pulls typed fields out of a mapping and rejects unknown keys."""

    def __init__(self, data: Any, path: str):
        if not isinstance(data, Mapping):
            raise ScenarioParseError(path, "expected an object")
        self.data = data
        self.path = path
        self.seen = set()

    def get(self, key, kind=float, default=_REQUIRED):
        self.seen.add(key)
        where = f"{self.path}.{key}" if self.path else key
        if key not in self.data or self.data[key] is None:
            if default is _REQUIRED:
                raise ScenarioParseError(where, "missing required field")
            return default
        value = self.data[key]
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ScenarioParseError(where, f"expected a number, got {value!r}")
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ScenarioParseError(where, f"expected an integer, got {value!r}")
            return value
        if kind is bool:
            if not isinstance(value, bool):
                raise ScenarioParseError(where, f"expected true/false, got {value!r}")
            return value
        if kind is str:
            if not isinstance(value, str):
                raise ScenarioParseError(where, f"expected a string, got {value!r}")
            return value
        if kind is list:
            if not isinstance(value, list):
                raise ScenarioParseError(where, "expected a list")
            return value
        if kind is dict:
            if not isinstance(value, Mapping):
                raise ScenarioParseError(where, "expected an object")
            return value
        raise TypeError(kind)

    def sub(self, key) -> str:
        return f"{self.path}.{key}" if self.path else key

    def done(self):
        extra = sorted(set(self.data) - self.seen)
        if extra:
            raise ScenarioParseError(self.sub(extra[0]), "unknown field")


def _epc(data, path) -> EpcSpec:
    r = _Reader(data, path)
    out = EpcSpec(
        enabled=r.get("enabled", bool, False),
        r_pu=r.get("r_pu", float, 0.33),
        headroom_import_mw=r.get("headroom_import_mw", float, None),
        headroom_export_mw=r.get("headroom_export_mw", float, None),
        delay_s=r.get("delay_s", float, 0.0),
    )
    r.done()
    return out


def _governor(data, path) -> GovernorSpec:
    r = _Reader(data, path)
    d = GovernorSpec()
    out = GovernorSpec(
        enabled=r.get("enabled", bool, True),
        r_pu=r.get("r_pu", float, d.r_pu),
        rt_pu=r.get("rt_pu", float, d.rt_pu),
        tr_s=r.get("tr_s", float, d.tr_s),
        tg_s=r.get("tg_s", float, d.tg_s),
        tw_s=r.get("tw_s", float, d.tw_s),
        gate_min=r.get("gate_min", float, d.gate_min),
        gate_max=r.get("gate_max", float, d.gate_max),
        rate_max_pu_s=r.get("rate_max_pu_s", float, d.rate_max_pu_s),
        p_n_mw=r.get("p_n_mw", float, None),
    )
    r.done()
    return out


def _items(r: _Reader, key: str) -> List[tuple]:
    return [(item, f"{r.sub(key)}[{k}]") for k, item in enumerate(r.get(key, list, []))]


def scenario_from_dict(data: Mapping) -> Scenario:
    """Build a :class:`Scenario` from a parsed JSON document (no validation)."""
    top = _Reader(data, "")
    buses, branches, machines, loads, links, events = [], [], [], [], [], []
    for item, path in _items(top, "buses"):
        r = _Reader(item, path)
        buses.append(Bus(id=r.get("id", str), kv=r.get("kv", float, 400.0),
                         slack=r.get("slack", bool, False)))
        r.done()
    for item, path in _items(top, "branches"):
        r = _Reader(item, path)
        branches.append(Branch(
            id=r.get("id", str), from_bus=r.get("from", str), to_bus=r.get("to", str),
            r_pu=r.get("r_pu"), x_pu=r.get("x_pu"), b_pu=r.get("b_pu", float, 0.0),
            ratio=r.get("ratio", float, 1.0)))
        r.done()
    for item, path in _items(top, "machines"):
        r = _Reader(item, path)
        gov = r.get("governor", dict, None)
        machines.append(MachineSpec(
            id=r.get("id", str), bus=r.get("bus", str), s_n_mva=r.get("s_n_mva"),
            h_s=r.get("h_s"), p0_mw=r.get("p0_mw"), q0_mvar=r.get("q0_mvar", float, 0.0),
            d_pu=r.get("d_pu", float, 1.0), xd_prime_pu=r.get("xd_prime_pu", float, 0.3),
            v_set_pu=r.get("v_set_pu", float, None),
            governor=None if gov is None else _governor(gov, r.sub("governor"))))
        r.done()
    for item, path in _items(top, "loads"):
        r = _Reader(item, path)
        zr = _Reader(r.get("zip", dict, {"z": 0.0, "i": 0.0, "p": 1.0}), r.sub("zip"))
        z, i, p = zr.get("z"), zr.get("i"), zr.get("p")
        zr.done()
        loads.append(ZipLoadSpec(
            id=r.get("id", str), bus=r.get("bus", str), p0_mw=r.get("p0_mw"),
            q0_mvar=r.get("q0_mvar", float, 0.0), z=z, i=i, p=p,
            v0_pu=r.get("v0_pu", float, None)))
        r.done()
    for item, path in _items(top, "hvdc"):
        r = _Reader(item, path)
        epc = r.get("epc", dict, None)
        links.append(HvdcLinkSpec(
            id=r.get("id", str), bus=r.get("bus", str), p_n_mw=r.get("p_n_mw"),
            p0_mw=r.get("p0_mw"), t_c_s=r.get("t_c_s", float, 0.1),
            q0_mvar=r.get("q0_mvar", float, 0.0),
            epc=EpcSpec() if epc is None else _epc(epc, r.sub("epc"))))
        r.done()
    for item, path in _items(top, "events"):
        r = _Reader(item, path)
        events.append(Event(t_s=r.get("t_s"), kind=r.get("kind", str),
                            target=r.get("target", str),
                            magnitude_mw=r.get("magnitude_mw", float, None)))
        r.done()

    tr = _Reader(top.get("targets", dict, {}), "targets")
    d = FrequencyTargets()
    targets = FrequencyTargets(
        f_n=tr.get("f_n", float, d.f_n), f_fcrd=tr.get("f_fcrd", float, d.f_fcrd),
        f_tfl=tr.get("f_tfl", float, d.f_tfl), f_min=tr.get("f_min", float, d.f_min),
        f_shed=tr.get("f_shed", float, d.f_shed),
        df_ss_max=tr.get("df_ss_max", float, d.df_ss_max))
    tr.done()

    sr = _Reader(top.get("solver", dict, {}), "solver")
    ds = SolverConfig()
    solver = SolverConfig(
        dt_s=sr.get("dt_s", float, ds.dt_s), t_end_s=sr.get("t_end_s", float, ds.t_end_s),
        integrator=sr.get("integrator", str, ds.integrator),
        newton_tol=sr.get("newton_tol", float, ds.newton_tol),
        newton_max_iter=sr.get("newton_max_iter", int, ds.newton_max_iter))
    sr.done()

    hub_data = top.get("hub", dict, None)
    hub = None if hub_data is None else _hub(hub_data, "hub")

    scenario = Scenario(
        buses=tuple(buses), branches=tuple(branches), machines=tuple(machines),
        loads=tuple(loads), hvdc_links=tuple(links), hub=hub, events=tuple(events),
        targets=targets, solver=solver,
        base_power_mva=top.get("base_power_mva", float, 1000.0),
        initial_frequency_hz=top.get("initial_frequency_hz", float, 49.9),
        name=top.get("name", str, ""), description=top.get("description", str, ""),
        schema_version=top.get("schema_version", str),
    )
    top.done()
    return scenario


def _hub(data, path) -> HubSpec:
    r = _Reader(data, path)
    converters, condensers = [], []
    for item, p in _items(r, "converters"):
        cr = _Reader(item, p)
        epc = cr.get("epc", dict, None)
        converters.append(HubConverter(
            id=cr.get("id", str), area=cr.get("area", str), p_n_mw=cr.get("p_n_mw"),
            p_set_mw=cr.get("p_set_mw"), droop_pu=cr.get("droop_pu"),
            mode=cr.get("mode", str, "grid-following"),
            limit_mw=cr.get("limit_mw", float, None), t_c_s=cr.get("t_c_s", float, 0.05),
            nps_bus=cr.get("nps_bus", str, None),
            epc=None if epc is None else _epc(epc, cr.sub("epc"))))
        cr.done()
    for item, p in _items(r, "condensers"):
        cr = _Reader(item, p)
        condensers.append(CondenserSpec(
            id=cr.get("id", str), s_n_mva=cr.get("s_n_mva", float, 300.0),
            h_s=cr.get("h_s", float, 2.0), d_pu=cr.get("d_pu", float, 0.0)))
        cr.done()
    kr = _Reader(r.get("coordinator", dict, {}), r.sub("coordinator"))
    part = kr.get("participation", dict, None)
    if part is not None:
        for cid, value in part.items():
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ScenarioParseError(f"{kr.sub('participation')}.{cid}", "expected a number")
        part = tuple((str(k), float(v)) for k, v in part.items())
    coordinator = CoordinatorSpec(
        k_hc_pu_s=kr.get("k_hc_pu_s", float, 1.65), base_mw=kr.get("base_mw", float, 2000.0),
        participation=part)
    kr.done()
    hub = HubSpec(mode=r.get("mode", str), wpp_mw=r.get("wpp_mw"),
                  converters=tuple(converters), condensers=tuple(condensers),
                  coordinator=coordinator)
    r.done()
    return hub


def load_scenario(path: PathLike, validate: bool = True) -> Scenario:
    """Read and validate a scenario file.

    Raises
    ------
    ScenarioParseError
        Malformed JSON or a field of the wrong shape.
    ScenarioValidationError
        Any error-severity diagnostic from :func:`validate_scenario`.
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioParseError(f"<{Path(path).name}:{exc.lineno}:{exc.colno}>", exc.msg) from exc
    scenario = scenario_from_dict(data)
    if validate:
        diagnostics = validate_scenario(scenario)
        if any(d.severity == "error" for d in diagnostics):
            raise ScenarioValidationError(diagnostics)
    return scenario


# -- serialization ---------------------------------------------------------

def _epc_dict(e: EpcSpec) -> dict:
    return {"enabled": e.enabled, "r_pu": e.r_pu, "headroom_import_mw": e.headroom_import_mw,
            "headroom_export_mw": e.headroom_export_mw, "delay_s": e.delay_s}


def scenario_to_dict(s: Scenario) -> Dict[str, Any]:
    """Inverse of :func:`scenario_from_dict`; every field is written out."""
    t = s.targets
    out: Dict[str, Any] = {
        "schema_version": s.schema_version,
        "name": s.name,
        "description": s.description,
        "base_power_mva": s.base_power_mva,
        "initial_frequency_hz": s.initial_frequency_hz,
        "targets": {"f_n": t.f_n, "f_fcrd": t.f_fcrd, "f_tfl": t.f_tfl, "f_min": t.f_min,
                    "f_shed": t.f_shed, "df_ss_max": t.df_ss_max},
        "buses": [{"id": b.id, "kv": b.kv, "slack": b.slack} for b in s.buses],
        "branches": [{"id": b.id, "from": b.from_bus, "to": b.to_bus, "r_pu": b.r_pu,
                      "x_pu": b.x_pu, "b_pu": b.b_pu, "ratio": b.ratio} for b in s.branches],
        "machines": [],
        "loads": [{"id": ld.id, "bus": ld.bus, "p0_mw": ld.p0_mw, "q0_mvar": ld.q0_mvar,
                   "zip": {"z": ld.z, "i": ld.i, "p": ld.p}, "v0_pu": ld.v0_pu}
                  for ld in s.loads],
        "hvdc": [{"id": k.id, "bus": k.bus, "p_n_mw": k.p_n_mw, "p0_mw": k.p0_mw,
                  "t_c_s": k.t_c_s, "q0_mvar": k.q0_mvar, "epc": _epc_dict(k.epc)}
                 for k in s.hvdc_links],
        "events": [{"t_s": e.t_s, "kind": e.kind, "target": e.target,
                    "magnitude_mw": e.magnitude_mw} for e in s.events],
        "solver": {"dt_s": s.solver.dt_s, "t_end_s": s.solver.t_end_s,
                   "integrator": s.solver.integrator, "newton_tol": s.solver.newton_tol,
                   "newton_max_iter": s.solver.newton_max_iter},
    }
    for m in s.machines:
        md = {"id": m.id, "bus": m.bus, "s_n_mva": m.s_n_mva, "h_s": m.h_s, "d_pu": m.d_pu,
              "xd_prime_pu": m.xd_prime_pu, "p0_mw": m.p0_mw, "q0_mvar": m.q0_mvar,
              "v_set_pu": m.v_set_pu, "governor": None}
        if m.governor is not None:
            g = m.governor
            md["governor"] = {"enabled": g.enabled, "r_pu": g.r_pu, "rt_pu": g.rt_pu,
                              "tr_s": g.tr_s, "tg_s": g.tg_s, "tw_s": g.tw_s,
                              "gate_min": g.gate_min, "gate_max": g.gate_max,
                              "rate_max_pu_s": g.rate_max_pu_s, "p_n_mw": g.p_n_mw}
        out["machines"].append(md)
    if s.hub is not None:
        h = s.hub
        c = h.coordinator
        out["hub"] = {
            "mode": h.mode, "wpp_mw": h.wpp_mw,
            "converters": [{"id": v.id, "area": v.area, "p_n_mw": v.p_n_mw,
                            "p_set_mw": v.p_set_mw, "droop_pu": v.droop_pu, "mode": v.mode,
                            "limit_mw": v.limit_mw, "t_c_s": v.t_c_s, "nps_bus": v.nps_bus,
                            "epc": None if v.epc is None else _epc_dict(v.epc)}
                           for v in h.converters],
            "condensers": [{"id": k.id, "s_n_mva": k.s_n_mva, "h_s": k.h_s, "d_pu": k.d_pu}
                           for k in h.condensers],
            "coordinator": {"k_hc_pu_s": c.k_hc_pu_s, "base_mw": c.base_mw,
                            "participation": None if c.participation is None
                            else dict(c.participation)},
        }
    return out


def dump_scenario(s: Scenario, path: PathLike) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(s), indent=2) + "\n")


# -- validation ------------------------------------------------------------

def _aligned(t: float, dt: float) -> bool:
    k = round(t / dt)
    return abs(k * dt - t) <= 1e-9 * max(1.0, abs(t))


def validate_scenario(s: Scenario) -> List[Diagnostic]:
    """Check every scenario invariant; returns an empty list iff all hold."""
    out: List[Diagnostic] = []

    def flag(element, rule, message, severity="error"):
        out.append(Diagnostic(str(element), rule, message, severity))

    if s.schema_version != SCHEMA_VERSION:
        flag("schema_version", "schema-version",
             f"unsupported schema version {s.schema_version!r} (expected {SCHEMA_VERSION})")
    if not s.base_power_mva > 0:
        flag("base_power_mva", "base-power", "system base must be positive")
    if not s.initial_frequency_hz > 0:
        flag("initial_frequency_hz", "initial-frequency", "must be positive")

    t = s.targets
    if not t.ordered:
        flag("targets", "threshold-ordering",
             "require f_shed < f_min < f_tfl < f_fcrd < f_n, got "
             f"{t.f_shed} / {t.f_min} / {t.f_tfl} / {t.f_fcrd} / {t.f_n}")
    if not t.df_ss_max > 0:
        flag("targets.df_ss_max", "df-ss-max", "must be positive")

    groups = {"bus": s.buses, "branch": s.branches, "machine": s.machines, "load": s.loads,
              "hvdc": s.hvdc_links}
    if s.hub is not None:
        groups["hub-converter"] = s.hub.converters
        groups["condenser"] = s.hub.condensers
    for label, items in groups.items():
        seen = set()
        for item in items:
            if item.id in seen:
                flag(item.id, "duplicate-id", f"duplicate {label} identifier")
            seen.add(item.id)
    link_ids = {k.id for k in s.hvdc_links}
    if s.hub is not None:
        for v in s.hub.converters:
            if v.id in link_ids:
                flag(v.id, "duplicate-id", "hub converter shares an identifier with an HVDC link")

    bus_ids = {b.id for b in s.buses}
    slack = [b for b in s.buses if b.slack]
    if len(slack) != 1:
        flag("buses", "slack-count", f"exactly one slack bus required, found {len(slack)}")
    elif not any(m.bus == slack[0].id for m in s.machines):
        flag(slack[0].id, "slack-without-machine", "slack bus hosts no machine")

    for br in s.branches:
        for end in (br.from_bus, br.to_bus):
            if end not in bus_ids:
                flag(br.id, "dangling-reference", f"unknown bus {end!r}")
        if br.r_pu == 0 and br.x_pu == 0:
            flag(br.id, "branch-impedance", "zero series impedance")
        if not br.ratio > 0:
            flag(br.id, "branch-impedance", "off-nominal ratio must be positive")

    for m in s.machines:
        if m.bus not in bus_ids:
            flag(m.id, "dangling-reference", f"unknown bus {m.bus!r}")
        if not (m.s_n_mva > 0 and m.xd_prime_pu > 0):
            flag(m.id, "machine-rating", "s_n_mva and xd_prime_pu must be positive")
        if not m.h_s > 0:
            flag(m.id, "zero-inertia-onshore",
                 "onshore machines need H > 0; zero-inertia units belong to the hub")
        if m.d_pu < 0:
            flag(m.id, "machine-damping", "damping must be non-negative")
        g = m.governor
        if g is not None:
            if not 0 < g.r_pu <= 1:
                flag(m.id, "governor-droop", f"permanent droop {g.r_pu} outside (0, 1]")
            if not (g.tg_s > 0 and g.tr_s > 0 and g.tw_s >= 0 and g.rt_pu >= 0
                    and g.rate_max_pu_s > 0):
                flag(m.id, "governor-time-constants",
                     "tg_s, tr_s, rate_max_pu_s must be positive; tw_s, rt_pu non-negative")
            if g.p_n_mw is not None and not g.p_n_mw > 0:
                flag(m.id, "governor-rating", "turbine rating must be positive")
            if not g.gate_min < g.gate_max:
                flag(m.id, "gate-limits", "gate_min must be below gate_max")
            else:
                g0 = m.p0_mw / m.turbine_rating_mw
                if not g.gate_min <= g0 <= g.gate_max:
                    flag(m.id, "gate-limits",
                         f"initial gate {g0:.3f} outside [{g.gate_min}, {g.gate_max}]")

    for ld in s.loads:
        if ld.bus not in bus_ids:
            flag(ld.id, "dangling-reference", f"unknown bus {ld.bus!r}")
        coeffs = (ld.z, ld.i, ld.p)
        if min(coeffs) < 0 or abs(sum(coeffs) - 1.0) > 1e-9:
            flag(ld.id, "zip-coefficients", f"z, i, p = {coeffs} must be >= 0 and sum to 1")
        if ld.v0_pu is not None and not ld.v0_pu > 0:
            flag(ld.id, "zip-coefficients", "reference voltage must be positive")

    dt = s.solver.dt_s
    for k in s.hvdc_links:
        if k.bus not in bus_ids:
            flag(k.id, "dangling-reference", f"unknown bus {k.bus!r}")
        if not k.p_n_mw > 0 or abs(k.p0_mw) > k.p_n_mw:
            flag(k.id, "hvdc-rating", f"|p0| = {abs(k.p0_mw)} exceeds p_n = {k.p_n_mw}")
        if not k.t_c_s > 0:
            flag(k.id, "hvdc-time-constant", "converter time constant must be positive")
        elif not 0.05 <= k.t_c_s <= 0.3:
            flag(k.id, "hvdc-time-constant",
                 f"t_c = {k.t_c_s} s outside the 0.05-0.3 s response band", "warning")
        _check_epc(k.id, k.epc, dt, flag)

    if s.hub is not None:
        _check_hub(s, bus_ids, dt, flag)

    sv = s.solver
    if not (sv.dt_s > 0 and sv.t_end_s > 0 and sv.dt_s <= sv.t_end_s):
        flag("solver", "solver-step", "require 0 < dt_s <= t_end_s")
    if sv.integrator not in INTEGRATORS:
        flag("solver.integrator", "integrator", f"unknown integrator {sv.integrator!r}")
    if not (sv.newton_tol > 0 and sv.newton_max_iter > 0):
        flag("solver", "solver-newton", "newton_tol and newton_max_iter must be positive")
    if s.hub is not None and s.hub.mode == "zero-inertia" and sv.dt_s > 0.02:
        flag("solver.dt_s", "solver-stiff-hub",
             "dt above 0.02 s with a zero-inertia hub", "warning")

    _check_events(s, flag)
    _check_islands(s, bus_ids, flag)
    return out


def _check_epc(owner, epc: Optional[EpcSpec], dt, flag):
    if epc is None:
        return
    if not epc.r_pu > 0:
        flag(owner, "epc-droop", f"EPC droop {epc.r_pu} must be positive")
    for name in ("headroom_import_mw", "headroom_export_mw"):
        value = getattr(epc, name)
        if value is not None and value < 0:
            flag(owner, "epc-headroom", f"{name} must be non-negative")
    if epc.delay_s < 0 or (0 < epc.delay_s < dt):
        flag(owner, "epc-delay", "activation delay must be 0 or at least one time step")


def _check_hub(s: Scenario, bus_ids, dt, flag):
    h = s.hub
    if h.mode not in HUB_MODES:
        flag("hub", "hub-mode", f"unknown hub mode {h.mode!r}")
    if h.mode == "low-inertia" and not h.condensers:
        flag("hub", "hub-condensers", "low-inertia hub needs at least one condenser")
    for c in h.condensers:
        if not (c.s_n_mva > 0 and c.h_s > 0):
            flag(c.id, "hub-condensers", "condenser rating and inertia must be positive")
    if not h.converters:
        flag("hub", "hub-converters", "hub has no converters")
    nps = [v for v in h.converters if v.nps_bus is not None]
    if len(nps) > 1:
        flag("hub", "hub-nps-link", "at most one hub converter may connect to the NPS")
    for v in h.converters:
        if v.mode not in CONVERTER_MODES:
            flag(v.id, "hub-converter-mode", f"unknown converter mode {v.mode!r}")
        if h.mode == "zero-inertia" and v.mode != "grid-forming":
            flag(v.id, "hub-grid-forming", "zero-inertia hub requires grid-forming converters")
        if not v.p_n_mw > 0 or abs(v.p_set_mw) > v.p_n_mw:
            flag(v.id, "hub-setpoint", f"|p_set| = {abs(v.p_set_mw)} exceeds p_n = {v.p_n_mw}")
        if not v.droop_pu > 0:
            flag(v.id, "hub-droop", "droop must be positive")
        if v.limit_mw is not None and not v.limit_mw >= abs(v.p_set_mw):
            flag(v.id, "hub-setpoint", "power limit below the initial setpoint")
        if not v.t_c_s > 0:
            flag(v.id, "hvdc-time-constant", "converter time constant must be positive")
        if v.nps_bus is not None and v.nps_bus not in bus_ids:
            flag(v.id, "dangling-reference", f"unknown bus {v.nps_bus!r}")
        if v.epc is not None and v.nps_bus is None:
            flag(v.id, "hub-nps-link", "EPC settings on a converter not connected to the NPS")
        _check_epc(v.id, v.epc, dt, flag)
    part = h.coordinator.participation
    if part is not None:
        ids = {v.id for v in h.converters}
        for cid, value in part:
            if cid not in ids:
                flag(cid, "dangling-reference", "participation factor for unknown converter")
            if value < 0:
                flag(cid, "hub-participation", "participation factors must be non-negative")
        if abs(sum(v for _, v in part) - 1.0) > 1e-9:
            flag("hub.coordinator", "hub-participation", "participation factors must sum to 1")
    if h.coordinator.k_hc_pu_s < 0 or not h.coordinator.base_mw > 0:
        flag("hub.coordinator", "hub-coordinator", "k_hc must be >= 0 and base_mw > 0")
    imbalance = h.wpp_mw + sum(v.p_set_mw for v in h.converters)
    if abs(imbalance) > 1.0:
        flag("hub", "hub-balance",
             f"setpoints leave {imbalance:.1f} MW unbalanced; the coordinator absorbs it",
             "warning")


def _check_events(s: Scenario, flag):
    machines = {m.id for m in s.machines}
    links = {k.id for k in s.hvdc_links}
    if s.hub is not None:
        links |= {v.id for v in s.hub.converters}
    loads = {ld.id for ld in s.loads}
    wanted = {"generator-trip": (machines, "machine"), "hvdc-trip": (links, "HVDC link"),
              "load-step": (loads, "load")}
    tripped = set()
    for k, e in enumerate(s.events):
        label = f"events[{k}]"
        if not (0 < e.t_s <= s.solver.t_end_s):
            flag(label, "event-time", f"t = {e.t_s} s outside (0, t_end]")
        elif s.solver.dt_s > 0 and not _aligned(e.t_s, s.solver.dt_s):
            flag(label, "event-alignment", f"t = {e.t_s} s is not a multiple of dt")
        if e.kind not in EVENT_KINDS:
            flag(label, "event-kind", f"unknown event kind {e.kind!r}")
            continue
        pool, noun = wanted[e.kind]
        if e.target not in pool:
            flag(e.target, "event-target", f"{e.kind} references unknown {noun} {e.target!r}")
        if e.kind == "load-step" and e.magnitude_mw is None:
            flag(label, "event-magnitude", "load-step needs magnitude_mw")
        if e.kind != "load-step":
            if e.target in tripped:
                flag(e.target, "double-trip", "element tripped more than once")
            tripped.add(e.target)


def _check_islands(s: Scenario, bus_ids, flag):
    ids = [b.id for b in s.buses]
    index = {b: k for k, b in enumerate(ids)}
    rows, cols = [], []
    for br in s.branches:
        if br.from_bus in index and br.to_bus in index:
            rows.append(index[br.from_bus])
            cols.append(index[br.to_bus])
    n = len(ids)
    if n == 0:
        flag("buses", "slack-count", "scenario has no buses")
        return
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, labels = connected_components(graph, directed=False)
    sourced = {labels[index[m.bus]] for m in s.machines if m.bus in index}
    for comp in range(ncomp):
        if comp not in sourced:
            members = [ids[k] for k in range(n) if labels[k] == comp]
            flag(",".join(members), "island-without-source",
                 f"island {members} has no synchronous machine")


def diagnostics_text(diagnostics: List[Diagnostic]) -> str:
    return "\n".join(str(d) for d in diagnostics)


def finite_or_none(x: float) -> Optional[float]:
    return x if math.isfinite(x) else None
