from dataclasses import replace

import numpy as np
import pytest
import scipy.io

from acdcfreq.model import Branch, Bus, MachineSpec, Scenario, ZipLoadSpec
from acdcfreq.network import (NetworkSolver, PowerFlowError, VoltageCollapseError,
                              branch_flows, build_admittance, dump_admittance,
                              find_sourceless_islands, solve_power_flow, zip_power)
from conftest import three_bus, two_bus


def test_single_branch_admittance():
    # r = 0, x = 0.1: series admittance -j10, so Y_12 = +j10 and Y_11 = -j10
    Y = build_admittance(two_bus()).toarray()
    assert Y[0, 1] == pytest.approx(10j)
    assert Y[0, 0] == pytest.approx(-10j)


def test_off_diagonal_is_minus_series_admittance():
    Y = build_admittance(two_bus()).toarray()
    assert Y[0, 1] == pytest.approx(-(1.0 / (1j * 0.1)))
    assert np.allclose(Y.sum(axis=1), 0.0)


def test_pi_model_with_tap_matches_hand_formula():
    r, x, b, tau = 0.01, 0.08, 0.04, 1.05
    s = replace(two_bus(), branches=(Branch("T", "B1", "B2", r, x, b_pu=b, ratio=tau),))
    Y = build_admittance(s).toarray()
    ys = 1.0 / complex(r, x)
    assert Y[0, 0] == pytest.approx((ys + 0.5j * b) / tau ** 2)
    assert Y[1, 1] == pytest.approx(ys + 0.5j * b)
    assert Y[0, 1] == pytest.approx(-ys / tau)
    assert Y[1, 0] == pytest.approx(-ys / tau)


def test_admittance_is_symmetric_for_nps_lite(nps_lite):
    Y = build_admittance(nps_lite).matrix
    assert abs(Y - Y.T).max() < 1e-12


def test_dump_admittance_round_trip(tmp_path):
    A = build_admittance(three_bus())
    dump_admittance(A, tmp_path / "y.mtx")
    back = scipy.io.mmread(str(tmp_path / "y.mtx")).toarray()
    assert np.allclose(back, A.toarray())


def test_sourceless_island_detected():
    s = replace(three_bus(), buses=three_bus().buses + (Bus("D"),))
    assert find_sourceless_islands(s) == [["D"]]
    from acdcfreq.network import NetworkError
    with pytest.raises(NetworkError):
        build_admittance(s)


def test_two_bus_power_flow_closed_form():
    # lossless line, constant-power load P only: P = V1 V2 sin(d) / x, V1 = 1
    s = replace(two_bus(), loads=(ZipLoadSpec("LD", "B2", 1000.0, 0.0),))
    op = solve_power_flow(s)
    v1, v2 = op.v
    p = 1.0
    x = 0.1
    d = np.angle(v1) - np.angle(v2)
    assert abs(v1) == pytest.approx(1.0, abs=1e-9)
    assert abs(v1) * abs(v2) * np.sin(d) / x == pytest.approx(p, abs=1e-8)
    # Q balance at the load bus: 0 = (V2^2 - V1 V2 cos d) / x
    assert (abs(v2) ** 2 - abs(v1) * abs(v2) * np.cos(d)) / x == pytest.approx(0.0, abs=1e-8)
    assert op.machine_p_mw[0] == pytest.approx(1000.0, abs=1e-5)


def test_power_flow_balance_and_losses(small):
    op = solve_power_flow(small)
    assert op.mismatch_pu < 1e-8
    assert op.balance_residual_mw == pytest.approx(0.0, abs=1e-5)
    assert op.losses_mw > 0
    pf, pt = branch_flows(small, op.v)
    assert (pf + pt).sum().real * small.base_power_mva == pytest.approx(op.losses_mw, rel=1e-9)


def test_emf_behind_transient_reactance(small):
    op = solve_power_flow(small)
    base = small.base_power_mva
    for j, m in enumerate(small.machines):
        v = op.v[op.bus_ids.index(m.bus)]
        s = complex(op.machine_p_mw[j], op.machine_q_mvar[j]) / base
        i = np.conj(s / v)
        x = m.xd_prime_pu * base / m.s_n_mva
        e = v + 1j * x * i
        assert op.emf_pu[j] == pytest.approx(abs(e))
        assert op.delta_rad[j] == pytest.approx(np.angle(e))


def test_nps_lite_operating_point(nps_lite):
    op = solve_power_flow(nps_lite)
    wind = -sum(p for p, ld in zip(op.load_p_mw, nps_lite.loads) if ld.p0_mw < 0)
    consumption = sum(p for p, ld in zip(op.load_p_mw, nps_lite.loads) if ld.p0_mw > 0)
    assert consumption == pytest.approx(43531.2, rel=1e-6)
    assert wind == pytest.approx(14900.0, rel=1e-6)
    assert op.generation_mw + wind == pytest.approx(43723.32, rel=5e-3)
    assert min(abs(op.v)) > 0.95


def test_voltage_collapse_is_reported():
    s = replace(two_bus(), loads=(ZipLoadSpec("LD", "B2", 20000.0, 0.0),),
                machines=(replace(two_bus().machines[0], s_n_mva=30000.0, p0_mw=20000.0),))
    with pytest.raises(PowerFlowError) as info:
        solve_power_flow(s)
    assert isinstance(info.value, (VoltageCollapseError, PowerFlowError))


@pytest.mark.parametrize("z,i,p", [(1, 0, 0), (0, 1, 0), (0, 0, 1), (0.2, 0.3, 0.5)])
def test_zip_power_law(z, i, p):
    s0 = np.array([100.0 + 20j])
    for vm in (0.9, 1.0, 1.07):
        got = zip_power(s0, np.array([z]), np.array([i]), np.array([p]), np.array([vm]),
                        np.array([1.0]))
        assert got[0] == pytest.approx(s0[0] * (z * vm ** 2 + i * vm + p))


def test_network_solver_reproduces_power_flow(small):
    op = solve_power_flow(small)
    ns = NetworkSolver(small, op)
    n = len(op.bus_ids)
    emf = op.emf_pu * np.exp(1j * op.delta_rad)
    v = ns.solve(emf, np.zeros(n, complex), op.v * 0.98)
    assert np.allclose(v, op.v, atol=1e-8)
    pe = ns.machine_pe(emf, v) * small.base_power_mva
    assert np.allclose(pe, op.machine_p_mw, atol=1e-5)


def test_frequency_divider_rows_sum_to_one(small):
    op = solve_power_flow(small)
    W = NetworkSolver(small, op).frequency_divider()
    assert W.shape == (3, 2)
    assert np.allclose(W.sum(axis=1), 1.0)
    assert np.all(W >= -1e-12)


def test_dense_and_sparse_paths_agree(small, monkeypatch):
    import acdcfreq.network as net
    op = solve_power_flow(small)
    n = len(op.bus_ids)
    emf = 1.01 * op.emf_pu * np.exp(1j * op.delta_rad)
    dense = NetworkSolver(small, op).solve(emf, np.zeros(n, complex), op.v)
    monkeypatch.setattr(net, "DENSE_BUS_LIMIT", 0)
    sparse = NetworkSolver(small, op).solve(emf, np.zeros(n, complex), op.v)
    assert np.allclose(dense, sparse, atol=1e-10)


def test_pv_bus_holds_voltage_setpoint():
    s = three_bus()
    s = replace(s, machines=(s.machines[0], replace(s.machines[1], v_set_pu=1.02)))
    op = solve_power_flow(s)
    assert abs(op.v[op.bus_ids.index("B")]) == pytest.approx(1.02, abs=1e-9)


def test_machine_without_setpoint_imposes_q():
    s = three_bus()
    s = replace(s, machines=(s.machines[0], replace(s.machines[1], v_set_pu=None,
                                                    q0_mvar=50.0)))
    op = solve_power_flow(s)
    assert op.machine_q_mvar[1] == pytest.approx(50.0, abs=1e-6)


def test_scenario_with_single_bus():
    s = Scenario(buses=(Bus("A", slack=True),),
                 machines=(MachineSpec("G", "A", 100.0, 5.0, 50.0, v_set_pu=1.0),),
                 loads=(ZipLoadSpec("L", "A", 50.0, 10.0),))
    op = solve_power_flow(s)
    assert op.machine_p_mw[0] == pytest.approx(50.0)
    assert op.losses_mw == pytest.approx(0.0, abs=1e-12)


def test_parallel_branches_double_off_diagonal():
    br = two_bus().branches[0]
    s = replace(two_bus(), branches=(br, replace(br, id="L2")))
    assert build_admittance(s).toarray()[0, 1] == pytest.approx(20j)


def five_bus():
    buses = tuple(Bus(f"N{k}", slack=(k == 0)) for k in range(5))
    spec = [("N0", "N1", 0.01, 0.05, 0.02, 1.0), ("N1", "N2", 0.02, 0.06, 0.0, 1.0),
            ("N2", "N3", 0.0, 0.04, 0.01, 0.97), ("N3", "N4", 0.015, 0.07, 0.03, 1.0),
            ("N0", "N4", 0.01, 0.09, 0.0, 1.03), ("N1", "N3", 0.03, 0.1, 0.05, 1.0)]
    branches = tuple(Branch(f"b{k}", *row[:4], b_pu=row[4], ratio=row[5])
                     for k, row in enumerate(spec))
    machines = (MachineSpec("G0", "N0", 500.0, 5.0, 100.0, v_set_pu=1.0),)
    return replace(two_bus(), buses=buses, branches=branches, machines=machines,
                   loads=(ZipLoadSpec("L", "N3", 100.0, 20.0),), events=())


def test_five_bus_matches_dense_construction():
    s = five_bus()
    n = 5
    Y = np.zeros((n, n), complex)
    idx = {b.id: k for k, b in enumerate(s.buses)}
    for br in s.branches:
        i, j = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r_pu, br.x_pu)
        ysh = 0.5j * br.b_pu
        t = br.ratio
        # two-port: [I_i; I_j] = [[(ys+ysh)/t^2, -ys/t], [-ys/t, ys+ysh]] [V_i; V_j]
        Y[i, i] += (ys + ysh) / t ** 2
        Y[j, j] += ys + ysh
        Y[i, j] -= ys / t
        Y[j, i] -= ys / t
    assert np.max(np.abs(build_admittance(s).toarray() - Y)) < 1e-12
