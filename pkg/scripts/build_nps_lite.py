"""Generate the shipped scenario and tuning-problem files.

The nps-lite system is an illustrative 13-zone equivalent of the Nordic
grid: zone loads, wind output, HVDC ratings and placements are authoring
choices and only the system totals are anchored (load, wind share,
generation, kinetic energy, FCR-D stiffness, aggregate link rating).

Run from the repository root::

    python3 scripts/build_nps_lite.py
"""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from acdcfreq.model import (  # noqa: E402
    Branch, Bus, CondenserSpec, CoordinatorSpec, EpcSpec, Event, GovernorSpec, HubConverter,
    HubSpec, HvdcLinkSpec, MachineSpec, Scenario, SolverConfig, ZipLoadSpec,
)
from acdcfreq.network import solve_power_flow  # noqa: E402
from acdcfreq.scenario_io import dump_scenario  # noqa: E402

DATA = ROOT / "src" / "acdcfreq" / "data"

TOTAL_LOAD = 43531.2
TOTAL_WIND = 14900.0
TOTAL_GENERATION = 43723.32
TOTAL_EK = 125000.0
F_N = 50.0

# calibrated FCR-D fleet dynamics (see the decisions ledger)
FLEET = GovernorSpec(r_pu=0.1, rt_pu=0.3, tr_s=5.0, tg_s=0.2, tw_s=1.0, rate_max_pu_s=0.1)
LOAD_ZIP = (0.1, 0.1, 0.8)

ZONES = ["NO1", "NO2", "NO3", "NO4", "NO5", "SE1", "SE2", "SE3W", "SE3E", "SE4",
         "FIN", "FIS", "DK2"]
LOAD_SHARE = dict(NO1=.10, NO2=.08, NO3=.06, NO4=.04, NO5=.05, SE1=.03, SE2=.05, SE3W=.14,
                  SE3E=.11, SE4=.07, FIN=.06, FIS=.14, DK2=.07)
WIND_SHARE = dict(NO2=.05, NO3=.10, NO4=.08, SE1=.10, SE2=.15, SE3W=.10, SE3E=.07, SE4=.10,
                  FIN=.12, FIS=.05, DK2=.08)
NORTH = {"NO3", "NO4", "SE1", "SE2", "FIN"}
CORRIDORS = [
    ("NO3", "NO4", 0.040), ("NO3", "NO1", 0.035), ("NO3", "SE2", 0.045), ("NO4", "SE1", 0.045),
    ("NO4", "SE2", 0.050), ("NO5", "NO1", 0.040), ("NO5", "NO2", 0.035), ("NO2", "NO1", 0.030),
    ("NO1", "SE3W", 0.030), ("SE1", "SE2", 0.025), ("SE1", "FIN", 0.040), ("SE2", "SE3W", 0.025),
    ("SE2", "SE3E", 0.030), ("SE3W", "SE3E", 0.020), ("SE3W", "SE4", 0.030),
    ("SE3E", "SE4", 0.030), ("SE4", "DK2", 0.035), ("SE3E", "FIS", 0.045), ("FIN", "FIS", 0.030),
]
# (id, bus, beta MW/Hz); the last three are the units switched off in replacement studies
FCRD_UNITS = [("H1", "NO5", 360), ("H2", "NO2", 350), ("H3", "NO3", 340), ("H4", "NO4", 345),
              ("H5", "SE1", 338), ("H6", "SE2", 340), ("H7", "NO1", 345),
              ("H8", "NO5", 400), ("H9", "SE2", 410), ("H10", "NO2", 420)]
REMOVABLE = ["H8", "H9", "H10"]
# (id, bus, P_N, P0) import to the NPS positive
LINKS = [
    ("NSWPH-NO", "NO2", 2000.0, -443.0), ("NorNed", "NO2", 420.0, -300.0),
    ("NordLink", "NO2", 480.0, 200.0), ("NSL", "NO2", 480.0, -350.0),
    ("Skagerrak", "NO2", 560.0, 300.0), ("KontiSkan", "SE3W", 300.0, 150.0),
    ("BalticCable", "SE4", 300.0, -100.0), ("SwePol", "SE4", 300.0, 200.0),
    ("NordBalt", "SE4", 350.0, -150.0), ("Estlink", "FIS", 400.0, 300.0),
    ("Vyborg", "FIS", 460.0, 350.0), ("Kontek", "DK2", 300.0, -150.0),
    ("GreatBelt", "DK2", 300.0, 100.0), ("KriegersFlak", "DK2", 200.0, 0.0),
    ("Hansa", "SE4", 350.0, 100.0), ("Viking", "NO2", 450.0, -200.0),
    ("FennoRU", "FIN", 300.0, 100.0), ("SE-PL2", "DK2", 250.0, -50.0),
    ("SE3-EE", "SE3E", 363.5, -57.0),
]
OKG = ("O3", "SE3E", 1450.0, 1600.0, 6.0)
NORTH_SOUTH_MW = 4000.0
R_OVER_X_INV = 8.0
# damping against the centre of inertia; stands in for damper windings and PSS
MACHINE_D = 5.0


def _machines(bias_mw: float):
    fcrd = []
    for mid, bus, beta in FCRD_UNITS:
        p_n = beta * F_N * FLEET.r_pu
        fcrd.append(MachineSpec(mid, bus, s_n_mva=p_n / 0.95, h_s=3.0, p0_mw=0.6 * p_n, d_pu=MACHINE_D,
                                v_set_pu=1.0, governor=replace(FLEET, p_n_mw=p_n)))
    oid, obus, op0, osn, oh = OKG
    okg = MachineSpec(oid, obus, s_n_mva=osn, h_s=oh, p0_mw=op0, d_pu=MACHINE_D, v_set_pu=1.0)
    fixed = {z: 0.0 for z in ZONES}
    for m in fcrd + [okg]:
        fixed[m.bus] += m.p0_mw
    for lid, bus, p_n, p0 in LINKS:
        fixed[bus] += p0
    other = {}
    for z in ZONES:
        need = TOTAL_LOAD * LOAD_SHARE[z] - TOTAL_WIND * WIND_SHARE.get(z, 0.0) - fixed[z]
        other[z] = need
    # north-south transfer: north zones generate more, load centres less
    n_north = sum(1 for z in ZONES if z in NORTH)
    n_south = len(ZONES) - n_north
    for z in ZONES:
        other[z] += bias_mw / n_north if z in NORTH else -bias_mw / n_south
    others = []
    for z in ZONES:
        if other[z] > 1.0:
            others.append((f"G-{z}", z, other[z]))
    ek_left = TOTAL_EK - sum(m.kinetic_energy_mws for m in fcrd + [okg])
    s_total = sum(p / 0.9 for _, _, p in others)
    h = ek_left / s_total
    machines = fcrd + [okg] + [MachineSpec(mid, z, s_n_mva=p / 0.9, h_s=h, p0_mw=p, d_pu=MACHINE_D,
                                           v_set_pu=1.0)
                               for mid, z, p in others]
    return machines


def _loads():
    loads = []
    for z in ZONES:
        p = TOTAL_LOAD * LOAD_SHARE[z]
        loads.append(ZipLoadSpec(f"L-{z}", z, p0_mw=p, q0_mvar=0.2 * p, z=LOAD_ZIP[0],
                                 i=LOAD_ZIP[1], p=LOAD_ZIP[2]))
    for z in ZONES:
        if z in WIND_SHARE:
            loads.append(ZipLoadSpec(f"WPP-{z}", z, p0_mw=-TOTAL_WIND * WIND_SHARE[z],
                                     z=0.0, i=0.0, p=1.0))
    return loads


def nps_lite(z_scale: float = 1.0, links=LINKS) -> Scenario:
    buses = tuple(Bus(z, 400.0, slack=(z == "SE3W")) for z in ZONES)
    branches = tuple(Branch(f"{a}-{b}", a, b, r_pu=round(z_scale * x / R_OVER_X_INV, 6),
                            x_pu=round(z_scale * x, 6), b_pu=0.0) for a, b, x in CORRIDORS)
    hvdc = tuple(HvdcLinkSpec(lid, bus, p_n, p0, t_c_s=0.1,
                              epc=EpcSpec(enabled=False, r_pu=0.33)) for lid, bus, p_n, p0 in links)
    return Scenario(
        buses=buses, branches=branches, machines=tuple(_machines(NORTH_SOUTH_MW)), loads=tuple(_loads()),
        hvdc_links=hvdc, events=(Event(1.0, "generator-trip", "O3"),),
        solver=SolverConfig(dt_s=0.01, t_end_s=60.0),
        name="nps-lite",
        description="Illustrative 13-zone Nordic equivalent, 125 GWs kinetic energy, "
                    "trip of the 1450 MW unit O3 at t = 1 s, EPC disabled.",
    )


def calibrate_impedance() -> float:
    """Corridor impedance scale giving generation = load + losses at the anchored totals."""
    target = TOTAL_GENERATION - TOTAL_LOAD
    lo, hi = 1.0, 20.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        op = solve_power_flow(nps_lite(mid))
        if op.losses_mw < target:
            lo = mid
        else:
            hi = mid
    return round(0.5 * (lo + hi), 3)


def smib() -> Scenario:
    gov = replace(FLEET, p_n_mw=2000.0)
    return Scenario(
        buses=(Bus("GEN", slack=True), Bus("LOAD")),
        branches=(Branch("LINE", "GEN", "LOAD", r_pu=0.0, x_pu=0.1),),
        machines=(MachineSpec("G1", "GEN", s_n_mva=2200.0, h_s=5.0, p0_mw=1000.0, d_pu=1.0,
                              v_set_pu=1.0, governor=gov),),
        loads=(ZipLoadSpec("LD", "LOAD", p0_mw=1000.0, q0_mvar=100.0, z=0.0, i=0.0, p=1.0),),
        events=(Event(1.0, "load-step", "LD", magnitude_mw=100.0),),
        solver=SolverConfig(dt_s=0.01, t_end_s=30.0),
        name="smib", description="Single machine feeding one load; 100 MW load step at 1 s.",
    )


HUB_EXPORTS = [("NSWPH-GB", "GB", -1743.0), ("NSWPH-NL", "NL", -1743.0),
               ("NSWPH-DE", "DE", -1460.0), ("NSWPH-DK", "DK", -1449.0),
               ("NSWPH-BE", "BE", -1241.0)]


def hub_spec(mode: str, gb_limit=None, epc=None, nps_bus="NO2") -> HubSpec:
    grid_forming = mode == "zero-inertia"
    droop = 0.01 if grid_forming else 1.0 / 3.5
    cmode = "grid-forming" if grid_forming else "grid-following"
    conv = [HubConverter(cid, area, 2000.0, p, droop, mode=cmode,
                         limit_mw=gb_limit if area == "GB" else None, t_c_s=0.05)
            for cid, area, p in HUB_EXPORTS]
    conv.append(HubConverter("NSWPH-NO", "NO", 2000.0, 443.0, droop, mode=cmode, t_c_s=0.05,
                             nps_bus=nps_bus, epc=epc))
    wpp = -sum(c.p_set_mw for c in conv)
    sc = () if grid_forming else tuple(CondenserSpec(f"SC{k}", 300.0, 2.0) for k in (1, 2, 3))
    return HubSpec(mode=mode, wpp_mw=wpp, converters=tuple(conv), condensers=sc,
                   coordinator=CoordinatorSpec(k_hc_pu_s=1.65, base_mw=2000.0))


def nps_equivalent() -> Scenario:
    """Small onshore system the hub studies attach to."""
    gov = replace(FLEET, p_n_mw=18240.0)
    return Scenario(
        buses=(Bus("NPS", slack=True), Bus("NO2")),
        branches=(Branch("NPS-NO2", "NPS", "NO2", r_pu=0.001, x_pu=0.01),),
        machines=(MachineSpec("NPS-G", "NPS", s_n_mva=30000.0, h_s=125000.0 / 30000.0,
                              p0_mw=10944.0, v_set_pu=1.0, governor=gov),),
        loads=(ZipLoadSpec("NPS-L", "NO2", p0_mw=10501.0, q0_mvar=1000.0),),
        solver=SolverConfig(dt_s=0.01, t_end_s=140.0),
    )


def hub_study(mode: str, gb_limit=None) -> Scenario:
    base = nps_equivalent()
    return replace(base, hub=hub_spec(mode, gb_limit),
                   events=(Event(1.0, "hvdc-trip", "NSWPH-NL"),),
                   name=f"hub-{mode}",
                   description=f"{mode} hub, trip of the 1743 MW NSWPH-NL export link at 1 s"
                               + ("" if gb_limit is None else f", GB converter limited to "
                                                              f"{gb_limit:g} MW"))


def coupled(z_scale: float) -> Scenario:
    base = nps_lite(z_scale, links=[k for k in LINKS if k[0] != "NSWPH-NO"])
    epc = EpcSpec(enabled=True, r_pu=0.33)
    return replace(base, hub=hub_spec("low-inertia", gb_limit=1850.0, epc=epc),
                   solver=SolverConfig(dt_s=0.01, t_end_s=120.0),
                   name="nps-lite-hub",
                   description="nps-lite with the low-inertia hub; EPC only on NSWPH-NO "
                               "(R = 0.33 pu); trip of O3 at 1 s.")


def epc_variants(base: Scenario, problems: dict):
    from acdcfreq.tuning import (TuningProblem, apply_droops, disable_governors, tune_epc,
                                 uniform_droops)
    uniform = replace(uniform_droops(base, 0.33), name="nps-lite-epc",
                      description="nps-lite with EPC at R = 0.33 pu on all 19 links.")
    reduced = disable_governors(base, REMOVABLE)
    tuned = tune_epc(TuningProblem.from_dict(problems["nps-lite-replacement-problem.json"]))
    repl = replace(apply_droops(reduced, tuned.droops), name="nps-lite-replacement",
                   description="nps-lite with FCR-D off on " + ", ".join(REMOVABLE)
                               + " and EPC droops from replacement tuning.")
    return uniform, repl


def tuning_problems(s: Scenario) -> dict:
    from acdcfreq.machines import aggregate_beta_g
    from acdcfreq.tuning import links_from_scenario
    links = [{"id": k.id, "p_n_mw": k.p_n_mw, "headroom_mw": k.headroom_mw}
             for k in links_from_scenario(s)]
    gov = {k: getattr(FLEET, k) for k in ("r_pu", "rt_pu", "tr_s", "tg_s", "tw_s",
                                         "rate_max_pu_s")}
    beta_g = aggregate_beta_g(s.machines)
    common = {"e_k_mws": s.kinetic_energy_mws, "dp_mw": 1450.0, "governor": gov,
              "gate0": 0.6, "t_c_s": 0.1, "links": links}
    removed = sum(m.turbine_rating_mw / m.governor.r_pu / F_N
                  for m in s.machines if m.id in REMOVABLE)
    return {
        "nps-lite-complement-problem.json": dict(common, beta_g=beta_g, mode="complement",
                                                 name="nps-lite complement"),
        "nps-lite-replacement-problem.json": dict(common, beta_g=beta_g - removed,
                                                  mode="replacement",
                                                  name="nps-lite replacement"),
        "two-link-problem.json": {
            "name": "two links, one with little headroom", "e_k_mws": 125000.0,
            "dp_mw": 1450.0, "beta_g": 2418.0, "mode": "replacement", "governor": gov,
            "links": [{"id": "A", "p_n_mw": 1000.0, "headroom_mw": 500.0},
                      {"id": "B", "p_n_mw": 4000.0, "headroom_mw": 8000.0}]},
        "zero-disturbance-problem.json": {
            "name": "no disturbance", "e_k_mws": 125000.0, "dp_mw": 0.0, "beta_g": 3648.0,
            "mode": "complement", "governor": gov,
            "links": [{"id": "A", "p_n_mw": 1000.0, "headroom_mw": 500.0}]},
    }


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    scale = calibrate_impedance()
    base = nps_lite(scale)
    op = solve_power_flow(base)
    wind = -sum(p for p, ld in zip(op.load_p_mw, base.loads) if ld.p0_mw < 0)
    print(f"impedance scale {scale}, losses {op.losses_mw:.1f} MW, generation "
          f"{op.generation_mw + wind:.1f} MW, E_k {base.kinetic_energy_mws:.0f} MWs")
    dump_scenario(base, DATA / "nps-lite.json")
    dump_scenario(smib(), DATA / "smib.json")
    dump_scenario(hub_study("low-inertia", gb_limit=1850.0), DATA / "hub-low-inertia.json")
    dump_scenario(hub_study("zero-inertia"), DATA / "hub-zero-inertia.json")
    dump_scenario(coupled(scale), DATA / "nps-lite-hub.json")
    problems = tuning_problems(base)
    for name, problem in problems.items():
        (DATA / name).write_text(json.dumps(problem, indent=2) + "\n")
    uniform, repl = epc_variants(base, problems)
    dump_scenario(uniform, DATA / "nps-lite-epc.json")
    dump_scenario(repl, DATA / "nps-lite-replacement.json")


if __name__ == "__main__":
    main()
