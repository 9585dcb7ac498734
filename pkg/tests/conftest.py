from dataclasses import replace

import pytest

from acdcfreq import data_path
from acdcfreq.model import (Branch, Bus, Event, GovernorSpec, MachineSpec, Scenario,
                            SolverConfig, ZipLoadSpec)
from acdcfreq.scenario_io import load_scenario

# criterion id -> (passed, description, detail); filled by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE, key=int):
        ok, text, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"criterion {cid:>2}: {'PASS' if ok else 'FAIL'}  {text}"
                                    + (f"  [{detail}]" if detail else ""))


def two_bus(governor=None, d_pu=0.0, h_s=5.0, load_z=0.0, t_end=5.0, dt=0.01, events=None,
            f0=49.9) -> Scenario:
    """One machine feeding one constant-power load through x = 0.1 pu."""
    return Scenario(
        buses=(Bus("B1", slack=True), Bus("B2")),
        branches=(Branch("L1", "B1", "B2", r_pu=0.0, x_pu=0.1),),
        machines=(MachineSpec("G1", "B1", s_n_mva=2000.0, h_s=h_s, p0_mw=1000.0, d_pu=d_pu,
                              v_set_pu=1.0, governor=governor),),
        loads=(ZipLoadSpec("LD", "B2", p0_mw=1000.0, q0_mvar=100.0, z=load_z, i=0.0,
                           p=1.0 - load_z),),
        events=(Event(1.0, "load-step", "LD", 100.0),) if events is None else events,
        solver=SolverConfig(dt_s=dt, t_end_s=t_end),
        initial_frequency_hz=f0,
    )


def three_bus() -> Scenario:
    """Two machines and two loads on a triangle; exercises multi-machine paths."""
    gov = GovernorSpec(r_pu=0.1, rt_pu=0.3, tr_s=5.0, tg_s=0.2, tw_s=1.0, p_n_mw=1500.0)
    return Scenario(
        buses=(Bus("A", slack=True), Bus("B"), Bus("C")),
        branches=(Branch("AB", "A", "B", 0.005, 0.05), Branch("BC", "B", "C", 0.005, 0.05),
                  Branch("AC", "A", "C", 0.01, 0.08, b_pu=0.02)),
        machines=(MachineSpec("GA", "A", s_n_mva=1500.0, h_s=4.0, p0_mw=800.0, d_pu=2.0,
                              v_set_pu=1.0, governor=gov),
                  MachineSpec("GB", "B", s_n_mva=1000.0, h_s=6.0, p0_mw=600.0, d_pu=2.0,
                              v_set_pu=1.0)),
        loads=(ZipLoadSpec("LB", "B", 500.0, 100.0, z=0.2, i=0.2, p=0.6),
               ZipLoadSpec("LC", "C", 880.0, 150.0, z=0.3, i=0.0, p=0.7)),
        events=(Event(1.0, "generator-trip", "GB"),),
        solver=SolverConfig(dt_s=0.01, t_end_s=5.0),
    )


@pytest.fixture
def smib_scenario():
    return load_scenario(data_path("smib.json"))


@pytest.fixture(scope="session")
def nps_lite():
    return load_scenario(data_path("nps-lite.json"))


@pytest.fixture
def small():
    return three_bus()


__all__ = ["ACCEPTANCE", "two_bus", "three_bus", "replace"]
