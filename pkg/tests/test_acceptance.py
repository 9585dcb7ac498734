"""Acceptance suite; each test records one pass/fail line in conftest.ACCEPTANCE."""

import math
import time
from contextlib import contextmanager
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
import sympy as sp

from acdcfreq import data_path
from acdcfreq.cli import main
from acdcfreq.engine import run_simulation
from acdcfreq.hub import HubModel, hub_frequency_zero_inertia
from acdcfreq.hvdc import aggregate_beta_h, epc_droop, epc_output, EpcController
from acdcfreq.machines import aggregate_beta_g
from acdcfreq.model import Event, FrequencyTargets, GovernorSpec
from acdcfreq.scenario_io import load_scenario
from acdcfreq.tuning import (load_tuning_problem, required_beta_h, smib_simulate,
                             steady_state_deviation, tune_epc, uniform_droops)
from conftest import ACCEPTANCE, three_bus

T = FrequencyTargets()
FLEET = GovernorSpec(r_pu=0.1, rt_pu=0.3, tr_s=5.0, tg_s=0.2, tw_s=1.0)


@contextmanager
def criterion(cid, text):
    """Record FAIL up front so that an exception still leaves a line."""
    ACCEPTANCE[cid] = (False, text, "raised")
    box = {}
    yield box
    ok = bool(box.get("ok", False))
    ACCEPTANCE[cid] = (ok, text, box.get("detail", ""))
    assert ok, f"criterion {cid}: {box.get('detail', '')}"


def test_c01_steady_state_consistency():
    with criterion(1, "simulated settled deviation matches the closed form, >= 100 SMIB problems") as c:
        rng = np.random.default_rng(20240601)
        n = 300
        e_k = rng.uniform(50e3, 250e3, n)
        dp = rng.uniform(500.0, 2000.0, n)
        bg = rng.uniform(1500.0, 5000.0, n)
        bh = rng.uniform(0.0, 5000.0, n)
        ss = [steady_state_deviation(*a, T) for a in zip(dp, bg, bh)]
        ref = np.array([s.df_hz for s in ss])
        # below f_TFL, so both reserves are active and the closed form applies
        keep = np.array([s.valid for s in ss]) & (ref + T.f_n < T.f_tfl)
        t0 = time.perf_counter()
        tr = smib_simulate(e_k[keep], bg[keep], dp[keep], T, beta_h=bh[keep], governor=FLEET,
                           horizon_s=300.0, dt_s=0.02)
        elapsed = time.perf_counter() - t0
        # no clamps: gates stay inside limits and links run without headroom caps
        gate_peak = (np.max(tr.p_m, axis=1) / (bg[keep] * T.f_n * FLEET.r_pu))
        settled = np.ptp(tr.f[:, -250:], axis=1) < 1e-4
        err = np.abs(tr.df_ss_hz - ref[keep])
        c["ok"] = (keep.sum() >= 100 and np.all(settled) and np.all(gate_peak < FLEET.gate_max)
                   and err.max() < 1e-3 and elapsed < 30.0)
        c["detail"] = f"{keep.sum()} problems, max error {err.max():.2e} Hz, {elapsed:.1f} s"


def test_c02_final_deviation_anchor(capsys):
    with criterion(2, "1040 MW loss gives -0.385 Hz, within 0.02 Hz of the published 0.4 Hz") as c:
        df = steady_state_deviation(1040.0, 3648.0, 0.0, T).df_hz
        rc = main(["ss-freq", "--dp", "1040", "--beta-g", "3648", "--beta-h", "0"])
        out = capsys.readouterr().out
        c["ok"] = (rc == 0 and "df = -0.3851 Hz" in out and round(df, 3) == -0.385
                   and abs(abs(df) - 0.4) < 0.02)
        c["detail"] = f"df = {df:+.4f} Hz, gap to 0.4 Hz {abs(abs(df) - 0.4):.4f}"


def test_c03_replacement_algebra(capsys):
    with criterion(3, "required beta_h = 4828 MW/Hz; --paper-compare reports 4828 and 3715") as c:
        beta = required_beta_h(1450.0, 2418.0, -0.5, T)
        d, a, b = sp.Rational(1, 2), sp.Rational(1, 10), sp.Rational(2, 5)
        exact = (1450 + (a - d) * 2418) / (d - b)
        rc = main(["ss-freq", "--dp", "1450", "--beta-g", "2418", "--df-target", "-0.5",
                   "--paper-compare"])
        out = capsys.readouterr().out
        c["ok"] = (exact == 4828 and abs(beta - 4828.0) < 1e-9 and rc == 0
                   and "4828" in out and "3715" in out and "published reference" in out)
        c["detail"] = f"computed {beta:.6f}, sympy {exact}"


def test_c04_stiffness_formulas(nps_lite):
    with criterion(4, "aggregate stiffness formulas exact; 8563.5 MW at R = 0.33 gives 519 MW/Hz") as c:
        bg = aggregate_beta_g(nps_lite.machines)
        exact_g = sum(Fraction(m.turbine_rating_mw) / Fraction(m.governor.r_pu)
                      for m in nps_lite.machines if m.fcrd) / 50
        s = uniform_droops(nps_lite, 0.33)
        bh = aggregate_beta_h(s.hvdc_links)
        exact_h = sum(Fraction(k.p_n_mw) / Fraction(k.epc.r_pu) for k in s.hvdc_links) / 50
        p_n = sum(k.p_n_mw for k in s.hvdc_links)
        c["ok"] = (bg == pytest.approx(float(exact_g), rel=1e-15) and abs(bg - 3648.0) < 1e-9
                   and bh == pytest.approx(float(exact_h), rel=1e-15) and p_n == 8563.5
                   and abs(bh - 519.0) < 1.0)
        c["detail"] = f"beta_g {bg:.3f}, beta_h {bh:.3f} MW/Hz"


def test_c05_epc_semantics():
    with criterion(5, "EPC law holds on 1000 synthetic trajectories") as c:
        t0 = time.perf_counter()
        rng = np.random.default_rng(7)
        n, m = 1000, 600
        t = np.linspace(0.0, 60.0, m)
        amp = rng.uniform(0.05, 1.2, (n, 1))
        tau = rng.uniform(1.0, 20.0, (n, 1))
        f = (T.f_fcrd - amp * (1 - np.exp(-t / tau)) + 0.3 * amp * np.sin(t / tau)
             + rng.normal(0.0, 0.01, (n, m)))
        f[:, ::97] = T.f_tfl                   # hit the threshold exactly
        p_n = rng.uniform(100.0, 2000.0, (n, 1))
        r = rng.uniform(0.05, 1.0, (n, 1))
        head = rng.uniform(0.0, 1500.0, (n, 1))
        out = epc_droop(f, p_n, r, head, T)
        slope = p_n / (r * T.f_n)
        above = f >= T.f_tfl
        linear = (T.f_tfl - f) * slope
        unclamped = ~above & (linear <= head)
        ok = (np.all(out[above] == 0.0)
              and np.allclose(out[unclamped], np.broadcast_to(linear, f.shape)[unclamped],
                              rtol=1e-12, atol=1e-12)
              and np.all(out <= head) and np.all(out >= 0.0))
        # the controller wrapper agrees row by row
        for j in range(0, n, 50):
            ctrl = EpcController(True, float(r[j, 0]), float(p_n[j, 0]), float(head[j, 0]))
            ok &= np.array_equal(epc_output(f[j], ctrl, T), out[j])
        elapsed = time.perf_counter() - t0
        c["ok"] = bool(ok) and elapsed < 5.0
        c["detail"] = f"{n} trajectories x {m} samples, {unclamped.sum()} linear, {elapsed:.2f} s"


def test_c06_nadir_ordering():
    with criterion(6, "nps-lite nadir: no EPC < uniform R = 0.33 < replacement; 49.0 Hz bounds") as c:
        t0 = time.perf_counter()
        nadir = {}
        for name in ("nps-lite", "nps-lite-epc", "nps-lite-replacement"):
            nadir[name] = run_simulation(load_scenario(data_path(f"{name}.json"))).metrics.nadir_hz
        elapsed = time.perf_counter() - t0
        # the shipped replacement droops are what the tuner produces
        res = tune_epc(load_tuning_problem(data_path("nps-lite-replacement-problem.json")))
        shipped = load_scenario(data_path("nps-lite-replacement.json"))
        droops_match = all(math.isclose(k.epc.r_pu, res.droops[k.id], rel_tol=1e-12)
                           for k in shipped.hvdc_links)
        a, b, r = nadir["nps-lite"], nadir["nps-lite-epc"], nadir["nps-lite-replacement"]
        c["ok"] = a < b < r and a < 49.0 < r and elapsed < 120.0 and droops_match
        c["detail"] = f"{a:.3f} < {b:.3f} < {r:.3f} Hz, {elapsed:.0f} s"


def test_c07_zero_inertia_hub():
    with criterion(7, "zero-inertia hub trip gives +0.0872 Hz; GB limit increases it") as c:
        s = load_scenario(data_path("hub-zero-inertia.json"))
        m = HubModel.from_spec(s.hub)
        alive = np.array([cid != "NSWPH-NL" for cid in m.ids])
        f_free, _ = hub_frequency_zero_inertia(m, m.initial_coordinator(), 0.0, alive)
        law = T.f_n * 0.01 * 1743.0 / (5 * 2000.0)
        limited = replace(s.hub, converters=tuple(
            replace(k, limit_mw=1850.0) if k.id == "NSWPH-GB" else k for k in s.hub.converters))
        ml = HubModel.from_spec(limited)
        f_lim, _ = hub_frequency_zero_inertia(ml, ml.initial_coordinator(), 0.0, alive)
        # the time-domain run shows the same step one sample after the trip
        r = run_simulation(s.with_solver(t_end_s=1.5))
        k = int(round(1.0 / s.solver.dt_s))
        sim_df = r["hub.f_hz"][k + 1] - T.f_n
        c["ok"] = (abs((f_free - T.f_n) - 0.0872) < 1e-4 and abs((f_free - T.f_n) - law) < 1e-12
                   and abs(sim_df - law) < 1e-4 and f_lim > f_free)
        c["detail"] = (f"free {f_free - 50:+.5f} Hz, limited {f_lim - 50:+.5f} Hz, "
                       f"simulated {sim_df:+.5f} Hz")


def test_c08_low_inertia_restoration():
    with criterion(8, "low-inertia hub back within 5 mHz of 50 Hz by t = 105 s") as c:
        s = load_scenario(data_path("hub-low-inertia.json"))
        r = run_simulation(s)
        f = r["hub.f_hz"]
        late = r.t >= 105.0
        bad = np.flatnonzero(np.abs(f - T.f_n) >= 5e-3)
        c["ok"] = (s.hub.coordinator.k_hc_pu_s == 1.65 and late.any()
                   and np.all(np.abs(f[late] - T.f_n) < 5e-3))
        c["detail"] = (f"peak {f.max():.2f} Hz, last |df| >= 5 mHz at "
                       f"{r.t[bad[-1]] if len(bad) else 0.0:.1f} s")


def test_c09_coupled_hub_link_flow():
    with criterion(9, "NSWPH-NO flow at NPS nadir and settled within 25 MW of 379/430 MW") as c:
        r = run_simulation(load_scenario(data_path("nps-lite-hub.json")))
        p = r["NSWPH-NO.p_mw"]
        at_nadir = p[int(np.argmin(r.f_avg))]
        settled = p[-1]
        c["ok"] = abs(at_nadir - 379.0) <= 25.0 and abs(settled - 430.0) <= 25.0
        c["detail"] = f"{at_nadir:.1f} MW at nadir, {settled:.1f} MW at end"


def two_machine_case():
    base = three_bus()
    return replace(base, machines=tuple(replace(m, governor=None) for m in base.machines),
                   events=(Event(1.0, "load-step", "LC", 150.0),))


def test_c10_numerics():
    with criterion(10, "RK4 error ratio >= 8 on dt halving; equilibrium to 1e-9; bit-identical reruns") as c:
        s = two_machine_case()

        def speed(dt):
            cfg = dict(dt_s=dt, t_end_s=4.0, newton_tol=1e-13, newton_max_iter=50)
            return run_simulation(s.with_solver(**cfg))["GA.speed_hz"]

        fine = 0.003125
        ref = speed(fine)
        errs = [np.max(np.abs(speed(dt) - ref[::int(round(dt / fine))]))
                for dt in (0.05, 0.025, 0.0125)]
        ratios = [errs[0] / errs[1], errs[1] / errs[2]]

        rest = replace(load_scenario(data_path("nps-lite.json")), events=())
        rr = run_simulation(rest)
        f0 = rest.initial_frequency_hz
        drift = max(np.max(np.abs(v - f0)) for v in rr.speeds.values())

        event = load_scenario(data_path("nps-lite.json")).with_solver(t_end_s=5.0)
        a, b = run_simulation(event), run_simulation(event)
        same = all(a[k].tobytes() == b[k].tobytes() for k in a.channels)
        c["ok"] = min(ratios) >= 8.0 and drift < 1e-9 and same
        c["detail"] = (f"ratios {ratios[0]:.1f}, {ratios[1]:.1f}; drift {drift:.1e} Hz over "
                       f"{rest.solver.t_end_s:.0f} s; reruns identical {same}")
