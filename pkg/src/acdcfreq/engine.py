"""Time-domain engine: state integration, network solves, events, metrics.

The reference frame rotates at the initial frequency, so a system that starts
in steady state at ``initial_frequency_hz`` stays exactly at rest. Every
Runge-Kutta stage re-solves the algebraic network for the stage state, which
keeps the scheme fourth order on smooth segments. Events are applied on step
boundaries after the pre-event sample has been recorded.
"""

from __future__ import annotations

from collections import deque
from typing import Callable, Dict, List, Optional

import numpy as np

from .hub import HubModel
from .hvdc import epc_droop
from .machines import GovernorParams, governor_derivatives
from .model import Event, FrequencyTargets, Metrics, Scenario, SimulationResult
from .network import NetworkSolver, OperatingPoint, solve_power_flow


class SimulationError(RuntimeError):
    pass


class EventError(SimulationError):
    pass


def _event_step(t: float, dt: float) -> int:
    k = int(round(t / dt))
    if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
        raise EventError(f"event time {t} s is not a multiple of dt = {dt} s")
    return k


class Simulation:
    """Stateful simulator for one scenario.

    Attributes of interest after :meth:`run`: ``op`` (initial operating
    point), ``solver`` (network solver) and ``result``.
    """

    def __init__(self, s: Scenario, op: Optional[OperatingPoint] = None):
        self.s = s
        self.t_ = s.targets
        self.f_n = s.targets.f_n
        self.base = s.base_power_mva
        self.dt = s.solver.dt_s
        self.op = op if op is not None else solve_power_flow(s)
        self.solver = NetworkSolver(s, self.op)
        self.bus_index = {b: k for k, b in enumerate(self.op.bus_ids)}

        ms = s.machines
        self.nm = len(ms)
        self.m_ids = [m.id for m in ms]
        self.m_h = np.array([m.h_s * m.s_n_mva / self.base for m in ms])   # system base
        self.m_hs = np.array([m.h_s * m.s_n_mva for m in ms])
        self.m_d = np.array([m.d_pu * m.s_n_mva / self.base for m in ms])
        self.m_emf = self.op.emf_pu.copy()
        self.m_alive = np.ones(self.nm, bool)
        self.fcrd_idx = np.array([k for k, m in enumerate(ms) if m.fcrd], dtype=int)
        self.is_fcrd = np.zeros(self.nm, bool)
        self.is_fcrd[self.fcrd_idx] = True
        specs = [ms[k].governor for k in self.fcrd_idx]
        ratings = [ms[k].turbine_rating_mw for k in self.fcrd_idx]
        self.gov = GovernorParams.from_specs(specs, ratings) if len(specs) else None
        self.w0 = s.initial_frequency_hz / self.f_n

        lk = s.hvdc_links
        self.nl = len(lk)
        self.l_ids = [k.id for k in lk]
        self.l_bus = np.array([self.bus_index[k.bus] for k in lk], dtype=int)
        self.l_pn = np.array([k.p_n_mw for k in lk], dtype=float)
        self.l_p0 = np.array([k.p0_mw for k in lk], dtype=float)
        self.l_q0 = np.array([k.q0_mvar for k in lk], dtype=float)
        self.l_tc = np.array([k.t_c_s for k in lk], dtype=float)
        self.l_epc = np.array([k.epc.enabled for k in lk], dtype=bool)
        self.l_r = np.array([k.epc.r_pu if k.epc.enabled else np.inf for k in lk], dtype=float)
        self.l_head = np.array([k.import_headroom_mw for k in lk], dtype=float)
        self.l_delay = np.array([int(round(k.epc.delay_s / self.dt)) for k in lk], dtype=int)
        self.l_alive = np.ones(self.nl, bool)

        self.hub = None
        self.nc = 0
        self.hub_epc = None
        if s.hub is not None:
            self.hub = HubModel.from_spec(s.hub, self.f_n)
            self.nc = len(self.hub.ids)
            self.c_alive = np.ones(self.nc, bool)
            k = self.hub.nps_index
            if k is not None:
                conv = s.hub.converters[k]
                self.hub_bus = self.bus_index[conv.nps_bus]
                e = conv.epc
                self.hub_epc = None if e is None or not e.enabled else (
                    conv.p_n_mw, e.r_pu, conv.epc_headroom_mw, int(round(e.delay_s / self.dt)))

        # load bookkeeping
        self.load_sched_mw = float(np.sum(self.op.load_p_mw))
        self.W = self.solver.frequency_divider()
        self._v = self.op.v.copy()
        self._layout()
        self._f_hist = deque(maxlen=int(max([0, *self.l_delay,
                                             self.hub_epc[3] if self.hub_epc else 0])) + 1)
        x0 = self.initial_state()
        # mechanical power from the dynamic network solution keeps t = 0 exact
        emf = self.m_emf * np.exp(1j * x0[self.sl_delta])
        v = self.solver.solve(emf, self._s_conv(x0, None), self._v)
        self._v = v
        self.p_m0 = self.solver.machine_pe(emf, v) * self.base
        if self.gov is not None:
            self.g0 = self.p_m0[self.fcrd_idx] / self.gov.p_n_mw
            x0[self.sl_gg] = self.g0
            x0[self.sl_gz] = self.g0
        self.x0 = x0
        self.losses0_mw = self.solver.losses(v) * self.base
        self._delayed = None

    # -- state layout -----------------------------------------------------
    def _layout(self):
        nm, ng, nl, nc = self.nm, len(self.fcrd_idx), self.nl, self.nc
        edges = np.cumsum([0, nm, nm, ng, ng, ng, nl])
        self.sl_delta = slice(edges[0], edges[1])
        self.sl_w = slice(edges[1], edges[2])
        self.sl_gx = slice(edges[2], edges[3])
        self.sl_gg = slice(edges[3], edges[4])
        self.sl_gz = slice(edges[4], edges[5])
        self.sl_p = slice(edges[5], edges[6])
        n = edges[6]
        low = self.hub is not None and not self.hub.zero_inertia
        self.sl_fh = slice(n, n + (1 if low else 0))
        n = self.sl_fh.stop
        self.sl_ph = slice(n, n + (nc if low else 0))
        n = self.sl_ph.stop
        self.sl_y = slice(n, n + (1 if self.hub is not None else 0))
        self.nx = self.sl_y.stop

    def initial_state(self) -> np.ndarray:
        x = np.zeros(self.nx)
        x[self.sl_delta] = self.op.delta_rad
        x[self.sl_w] = self.w0
        x[self.sl_p] = self.l_p0
        if self.hub is not None:
            y0 = self.hub.initial_coordinator()
            x[self.sl_y] = y0
            if not self.hub.zero_inertia:
                x[self.sl_fh] = self.f_n
                ref, _ = self.hub.reference(self.f_n, y0, 0.0, self.c_alive)
                x[self.sl_ph] = ref
        return x

    # -- algebraic helpers -------------------------------------------------
    def _hub_powers(self, x, f_bus):
        """Hub frequency, converter powers and EPC on the NPS link."""
        hub = self.hub
        y = float(x[self.sl_y][0])
        epc = 0.0
        if self.hub_epc is not None:
            p_n, r, head, delay = self.hub_epc
            f_in = f_bus[self.hub_bus] if delay == 0 or self._delayed is None \
                else self._delayed[delay][self.hub_bus]
            epc = float(epc_droop(f_in, p_n, r, head, self.t_))
        if hub.zero_inertia:
            f_hub, p = hub.balance(y, epc, self.c_alive, self._t)
        else:
            f_hub, p = float(x[self.sl_fh][0]), np.where(self.c_alive, x[self.sl_ph], 0.0)
        return f_hub, p, y, epc

    def _s_conv(self, x, hub_p):
        s_conv = np.zeros(len(self.bus_index), complex)
        p = np.where(self.l_alive, x[self.sl_p], 0.0)
        q = np.where(self.l_alive, self.l_q0, 0.0)
        np.add.at(s_conv, self.l_bus, (p + 1j * q) / self.base)
        if self.hub is not None and self.hub.nps_index is not None:
            k = self.hub.nps_index
            if hub_p is None:
                hub_p = self.hub.reference(self.f_n, float(x[self.sl_y][0]), 0.0,
                                           self.c_alive)[0] if self.hub.zero_inertia \
                    else x[self.sl_ph]
            s_conv[self.hub_bus] += -hub_p[k] / self.base if self.c_alive[k] else 0.0
        return s_conv

    # -- right-hand side ---------------------------------------------------
    def rhs(self, t: float, x: np.ndarray, record: bool = False):
        self._t = t
        dx = np.zeros_like(x)
        w = x[self.sl_w]
        f_m = self.f_n * w
        f_bus = self.f_n * (self.W @ w)

        hub_vals = None
        if self.hub is not None:
            hub_vals = self._hub_powers(x, f_bus)
        emf = self.m_emf * np.exp(1j * x[self.sl_delta])
        s_conv = self._s_conv(x, None if hub_vals is None else hub_vals[1])
        v = self.solver.solve(emf, s_conv, self._v, t)
        self._v = v
        p_e = self.solver.machine_pe(emf, v)

        # governors
        p_m = self.p_m0 / self.base
        p_m = p_m.copy()
        if self.gov is not None:
            gi = self.fcrd_idx
            ddx, ddg, ddz, pm_g = governor_derivatives(
                x[self.sl_gx], x[self.sl_gg], x[self.sl_gz], f_m[gi], self.g0, self.gov, self.t_)
            alive_g = self.m_alive[gi]
            dx[self.sl_gx] = np.where(alive_g, ddx, 0.0)
            dx[self.sl_gg] = np.where(alive_g, ddg, 0.0)
            dx[self.sl_gz] = np.where(alive_g, ddz, 0.0)
            p_m[gi] = pm_g / self.base
        p_m = np.where(self.m_alive, p_m, 0.0)

        # swing
        hs = np.where(self.m_alive, self.m_hs, 0.0)
        w_coi = float(hs @ w / hs.sum())
        dw = (p_m - p_e - self.m_d * (w - w_coi)) / (2.0 * self.m_h)
        dx[self.sl_w] = np.where(self.m_alive, dw, 0.0)
        dx[self.sl_delta] = np.where(self.m_alive, 2.0 * np.pi * self.f_n * (w - self.w0), 0.0)

        # point-to-point links
        if self.nl:
            f_link = f_bus[self.l_bus]
            if self._delayed is not None and np.any(self.l_delay > 0):
                lagged = np.array([self._delayed[d][b] for d, b in zip(self.l_delay, self.l_bus)])
                f_link = np.where(self.l_delay > 0, lagged, f_link)
            epc = np.where(self.l_epc & self.l_alive,
                           epc_droop(f_link, self.l_pn, self.l_r, self.l_head, self.t_), 0.0)
            p_ref = np.clip(self.l_p0 + epc, -self.l_pn, self.l_pn)
            dx[self.sl_p] = np.where(self.l_alive, (p_ref - x[self.sl_p]) / self.l_tc, 0.0)
        else:
            epc = np.zeros(0)

        # hub
        if self.hub is not None:
            f_hub, p_hub, y, epc_h = hub_vals
            if self.hub.zero_inertia:
                dx[self.sl_y] = self.hub.coordinator_rate(f_hub, y, epc_h, self.c_alive)
            else:
                df, dp, dy = self.hub.derivatives(f_hub, x[self.sl_ph], y, epc_h, self.c_alive)
                dx[self.sl_fh] = df
                dx[self.sl_ph] = dp
                dx[self.sl_y] = dy

        if not record:
            return dx
        rec = {"v": v, "p_e": p_e * self.base, "p_m": p_m * self.base, "f_bus": f_bus,
               "epc": epc, "f_m": f_m}
        if hub_vals is not None:
            rec["hub"] = hub_vals
        return dx, rec

    # -- events ------------------------------------------------------------
    def apply_event(self, x: np.ndarray, e: Event) -> np.ndarray:
        """Apply one event to the state (in place on a copy)."""
        x = x.copy()
        if e.kind == "generator-trip":
            if e.target not in self.m_ids:
                raise EventError(f"generator-trip: unknown machine {e.target!r}")
            j = self.m_ids.index(e.target)
            if not self.m_alive[j]:
                raise EventError(f"machine {e.target!r} tripped twice")
            self.m_alive[j] = False
            self.solver.set_machine_alive(j, False)
            if not np.any(self.m_alive):
                raise EventError("no synchronous machine left in service")
            self.W = self.solver.frequency_divider()
        elif e.kind == "hvdc-trip":
            if e.target in self.l_ids:
                j = self.l_ids.index(e.target)
                if not self.l_alive[j]:
                    raise EventError(f"link {e.target!r} tripped twice")
                self.l_alive[j] = False
                x[self.sl_p.start + j] = 0.0
            elif self.hub is not None and e.target in self.hub.ids:
                j = self.hub.ids.index(e.target)
                if not self.c_alive[j]:
                    raise EventError(f"hub converter {e.target!r} tripped twice")
                self.c_alive[j] = False
                if not self.hub.zero_inertia:
                    x[self.sl_ph.start + j] = 0.0
            else:
                raise EventError(f"hvdc-trip: unknown link {e.target!r}")
        elif e.kind == "load-step":
            ids = [ld.id for ld in self.s.loads]
            if e.target not in ids:
                raise EventError(f"load-step: unknown load {e.target!r}")
            j = ids.index(e.target)
            self.solver.add_load_power(j, float(e.magnitude_mw))
            self.load_sched_mw += float(e.magnitude_mw)
        else:
            raise EventError(f"unknown event kind {e.kind!r}")
        return x

    # -- integration ---------------------------------------------------------
    def _step_rk4(self, t, x, k1):
        dt = self.dt
        k2 = self.rhs(t + dt / 2, x + dt / 2 * k1)
        k3 = self.rhs(t + dt / 2, x + dt / 2 * k2)
        k4 = self.rhs(t + dt, x + dt * k3)
        return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    def _step_trapezoidal(self, t, x, k1, tol=1e-11, max_iter=100):
        dt = self.dt
        xn = x + dt * k1
        for _ in range(max_iter):
            x_new = x + dt / 2 * (k1 + self.rhs(t + dt, xn))
            if np.max(np.abs(x_new - xn)) < tol:
                return x_new
            xn = x_new
        raise SimulationError(f"trapezoidal corrector did not converge at t = {t:.4f} s")

    def run(self, progress: Optional[Callable[[float], None]] = None) -> SimulationResult:
        s = self.s
        dt = self.dt
        n_steps = int(round(s.solver.t_end_s / dt))
        schedule: Dict[int, List[Event]] = {}
        for e in s.events:
            schedule.setdefault(_event_step(e.t_s, dt), []).append(e)
        step = self._step_rk4 if s.solver.integrator == "rk4" else self._step_trapezoidal

        rec = _Recorder(self, n_steps + 1)
        x = self.x0.copy()
        for k in range(n_steps + 1):
            t = k * dt
            self._push_frequency(x)
            k1, alg = self.rhs(t, x, record=True)
            rec.store(k, t, x, alg)
            if k == n_steps:
                break
            if k in schedule:
                for e in schedule[k]:
                    x = self.apply_event(x, e)
                self._push_frequency(x, replace=True)
                k1 = self.rhs(t, x)
            x = step(t, x, k1)
            if progress is not None and k % 100 == 0:
                progress(t)
        self.result = rec.result()
        first = min((e.t_s for e in s.events), default=None)
        self.result.metrics = compute_metrics(
            self.result.t, self.result.f_avg, s.targets, first,
            fcrd_mw=self.result["system.fcrd_mw"],
            epc_mw={k: v for k, v in self.result.epc_powers.items()})
        self.result.scenario_name = s.name
        return self.result

    def _push_frequency(self, x, replace: bool = False):
        if self._f_hist.maxlen <= 1:
            return
        f_bus = self.f_n * (self.W @ x[self.sl_w])
        if replace and self._f_hist:
            self._f_hist[-1] = f_bus
        else:
            self._f_hist.append(f_bus)
        hist = list(self._f_hist)
        # index by delay in steps, clamped to the oldest sample
        self._delayed = {d: hist[max(len(hist) - 1 - d, 0)] for d in range(self._f_hist.maxlen)}


class _Recorder:
    def __init__(self, sim: Simulation, n: int):
        self.sim = sim
        self.n = n
        self.t = np.zeros(n)
        self.ch: Dict[str, np.ndarray] = {}

    def _put(self, name, k, value):
        arr = self.ch.get(name)
        if arr is None:
            arr = self.ch[name] = np.zeros(self.n)
        arr[k] = value

    def store(self, k, t, x, alg):
        sim = self.sim
        self.t[k] = t
        put = self._put
        w = x[sim.sl_w]
        alive = sim.m_alive
        f_m = alg["f_m"]
        fc = sim.fcrd_idx[alive[sim.fcrd_idx]] if len(sim.fcrd_idx) else sim.fcrd_idx
        pool = fc if len(fc) else np.flatnonzero(alive)
        hs = sim.m_hs[pool]
        put("system.f_avg_fcrd_hz", k, float(hs @ f_m[pool] / hs.sum()))
        hs_all = np.where(alive, sim.m_hs, 0.0)
        put("system.f_coi_hz", k, float(sim.f_n * (hs_all @ w) / hs_all.sum()))
        for j, mid in enumerate(sim.m_ids):
            put(f"{mid}.speed_hz", k, f_m[j])
            put(f"{mid}.p_m_mw", k, alg["p_m"][j])
            put(f"{mid}.p_e_mw", k, alg["p_e"][j] if alive[j] else 0.0)
        v = alg["v"]
        for b, idx in sim.bus_index.items():
            put(f"{b}.v_pu", k, abs(v[idx]))
        p_links = np.where(sim.l_alive, x[sim.sl_p], 0.0)
        for j, lid in enumerate(sim.l_ids):
            put(f"{lid}.p_mw", k, p_links[j])
            put(f"{lid}.p_epc_mw", k, alg["epc"][j] if len(alg["epc"]) else 0.0)
        hvdc = float(p_links.sum())
        epc_total = float(np.sum(alg["epc"])) if len(alg["epc"]) else 0.0
        if "hub" in alg:
            f_hub, p_hub, y, epc_h = alg["hub"]
            put("hub.f_hz", k, f_hub)
            put("hub.coordinator_pu", k, y)
            for j, cid in enumerate(sim.hub.ids):
                put(f"{cid}.p_mw", k, p_hub[j] if sim.c_alive[j] else 0.0)
            if sim.hub.nps_index is not None:
                j = sim.hub.nps_index
                cid = sim.hub.ids[j]
                put(f"{cid}.p_epc_mw", k, epc_h)
                epc_total += epc_h
                hvdc += -p_hub[j] if sim.c_alive[j] else 0.0
        load = sim.solver.load_power(v)
        p_load = float(np.sum(load.real)) * sim.base
        put("system.load_p_mw", k, p_load)
        put("system.load_relief_mw", k, sim.load_sched_mw - p_load)
        put("system.losses_mw", k, sim.solver.losses(v) * sim.base)
        put("system.hvdc_mw", k, hvdc)
        put("system.epc_mw", k, epc_total)
        dpm = alg["p_m"] - sim.p_m0
        put("system.fcrd_mw", k, float(np.sum(np.where(alive & sim.is_fcrd, dpm, 0.0))))
        put("system.accel_mw", k, float(np.sum(np.where(alive, alg["p_m"] - alg["p_e"], 0.0))))

    def result(self) -> SimulationResult:
        return SimulationResult(t=self.t, channels=self.ch)


def run_simulation(s: Scenario, progress: Optional[Callable[[float], None]] = None
                   ) -> SimulationResult:
    """Simulate a validated scenario from its power-flow operating point.

    Raises
    ------
    PowerFlowError, NetworkConvergenceError, HubInfeasibleError, EventError
    """
    return Simulation(s).run(progress)


def compute_metrics(t: np.ndarray, f_avg: np.ndarray,
                    targets: FrequencyTargets = FrequencyTargets(),
                    event_time: Optional[float] = None,
                    fcrd_mw: Optional[np.ndarray] = None,
                    epc_mw: Optional[Dict[str, np.ndarray]] = None,
                    rocof_window_s: float = 0.5, ss_window_s: float = 5.0) -> Metrics:
    """Frequency metrics of a recorded trajectory.

    The nadir is the global minimum of ``f_avg``; RoCoF is the mean slope over
    ``rocof_window_s`` after ``event_time`` (0 without events); the
    steady-state deviation is the mean over the final ``ss_window_s`` minus
    f_N (negative for under-frequency).
    """
    t = np.asarray(t, dtype=float)
    f = np.asarray(f_avg, dtype=float)
    if len(t) == 0:
        raise ValueError("empty series")
    k = int(np.argmin(f))
    rocof = 0.0
    if event_time is not None and len(t) > 1:
        t1 = min(event_time + rocof_window_s, t[-1])
        if t1 > event_time:
            f0, f1 = np.interp([event_time, t1], t, f)
            rocof = float((f1 - f0) / (t1 - event_time))
    tail = f[t >= t[-1] - ss_window_s + 1e-12]
    df_ss = float(np.mean(tail) - targets.f_n)
    peak = {} if epc_mw is None else {lid: float(np.max(v)) for lid, v in epc_mw.items()}
    nadir = float(f[k])
    return Metrics(
        nadir_hz=nadir, t_nadir_s=float(t[k]),
        max_ifd_hz=float(np.max(np.abs(f - targets.f_n))),
        rocof_hz_s=rocof, df_ss_hz=df_ss, peak_epc_mw=peak,
        fcrd_power_at_nadir_mw=0.0 if fcrd_mw is None else float(np.asarray(fcrd_mw)[k]),
        below_min_allowed=nadir < targets.f_min,
        load_shedding_breach=nadir < targets.f_shed,
        ss_limit_breach=abs(df_ss) > targets.df_ss_max,
    )
