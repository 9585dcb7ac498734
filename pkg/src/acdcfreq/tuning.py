"""Steady-state frequency algebra, single-machine equivalent and EPC tuning.

With FCR-D activating below ``f_FCRD`` and EPC below ``f_TFL``, a system
that settles below both thresholds after losing ``dP`` satisfies

    dP = beta_g (f_FCRD - f_ss) + beta_h (f_TFL - f_ss)

which gives the closed form used by :func:`steady_state_deviation` and its
inverse :func:`required_beta_h`. The tuning procedure first sizes the total
link stiffness on the single-machine equivalent, then spreads it over the
links in proportion to their ratings while respecting headroom.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .machines import GovernorParams, governor_derivatives
from .model import FrequencyTargets, GovernorSpec, Scenario


class TuningInfeasibleError(ValueError):
    """Raised when a tuning stage cannot meet its condition.

    ``stage`` is one of ``"algebra"``, ``"nadir"``, ``"capacity"`` or
    ``"refinement"``; ``shortfall`` is in MW/Hz for capacity problems.
    """

    def __init__(self, stage: str, message: str, shortfall: float = 0.0):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.shortfall = shortfall


# -- algebra -----------------------------------------------------------------

def beta_from_droop(p_n_mw, r_pu, f_n: float = 50.0):
    """Stiffness ``P_N / (R f_N)`` in MW/Hz."""
    return np.asarray(p_n_mw) / (np.asarray(r_pu) * f_n)


@dataclass(frozen=True)
class SteadyState:
    df_hz: float
    f_ss_hz: float
    valid: bool
    note: str = ""


def steady_state_deviation(dp_mw: float, beta_g: float, beta_h: float,
                           targets: FrequencyTargets = FrequencyTargets()) -> SteadyState:
    """Settled frequency deviation after a loss of ``dp_mw``.

    ``valid`` is False when the predicted frequency does not lie below the
    activation threshold of every contributing reserve, in which case the
    formula does not describe the actual settling point.
    """
    if not beta_g + beta_h > 0:
        raise ValueError("beta_g + beta_h must be positive")
    a = targets.f_n - targets.f_fcrd
    b = targets.f_n - targets.f_tfl
    df = -(dp_mw + a * beta_g + b * beta_h) / (beta_g + beta_h)
    f_ss = targets.f_n + df
    notes = []
    if beta_g > 0 and f_ss > targets.f_fcrd:
        notes.append(f"f_ss = {f_ss:.4f} Hz is above f_FCRD")
    if beta_h > 0 and f_ss > targets.f_tfl:
        notes.append(f"f_ss = {f_ss:.4f} Hz is above f_TFL, EPC would not be active")
    return SteadyState(df, f_ss, not notes, "; ".join(notes))


def required_beta_h(dp_mw: float, beta_g: float, df_target_hz: float,
                    targets: FrequencyTargets = FrequencyTargets()) -> float:
    """Smallest link stiffness keeping the settled deviation within ``df_target_hz``.

    Raises
    ------
    TuningInfeasibleError
        When ``|df_target| <= f_N - f_TFL``: EPC cannot act before the target
        is crossed. The margin is reported in the message.
    """
    d = abs(df_target_hz)
    a = targets.f_n - targets.f_fcrd
    b = targets.f_n - targets.f_tfl
    margin = d - b
    if margin <= 1e-9:
        raise TuningInfeasibleError(
            "algebra", f"target |df| = {d} Hz does not exceed f_N - f_TFL = {b:.4f} Hz "
                       f"(margin {margin:.4f} Hz)")
    beta_h = (dp_mw + (a - d) * beta_g) / margin
    return max(beta_h, 0.0)


def replacement_ratio(df_target_hz: float,
                      targets: FrequencyTargets = FrequencyTargets()) -> float:
    """Link stiffness needed per MW/Hz of removed generator stiffness."""
    d = abs(df_target_hz)
    return (d - (targets.f_n - targets.f_fcrd)) / (d - (targets.f_n - targets.f_tfl))


def steady_state_contribution(p_n_mw: float, r_pu: float, threshold_hz: float, f_ss_hz: float,
                              f_n: float = 50.0) -> float:
    """Settled response of a droop unit activated below ``threshold_hz``."""
    return p_n_mw * max(threshold_hz - f_ss_hz, 0.0) / (r_pu * f_n)


# -- single-machine equivalent ---------------------------------------------

@dataclass
class SmibTrajectory:
    t: np.ndarray
    f: np.ndarray
    p_m: np.ndarray
    p_epc: np.ndarray
    nadir_hz: np.ndarray
    t_nadir_s: np.ndarray
    df_ss_hz: np.ndarray


def smib_simulate(e_k_mws, beta_g, dp_mw, targets: FrequencyTargets = FrequencyTargets(),
                  beta_h=0.0, governor: GovernorSpec = GovernorSpec(), gate0: float = 0.6,
                  epc_headroom_mw=np.inf, t_c_s: float = 0.1, d_mw_hz=0.0,
                  horizon_s: float = 60.0, dt_s: float = 0.01, f0_hz: Optional[float] = None,
                  with_governor: bool = True, store: bool = True) -> SmibTrajectory:
    """Single-machine equivalent response to a step loss at t = 0.

    ``dF/dt = f_N (dP_m + P_EPC - dp - D (f - f0)) / (2 E_k)`` with the fleet
    governor rated ``P_N = beta_g f_N R`` and an aggregate EPC of stiffness
    ``beta_h`` behind a first-order converter lag ``t_c_s``. All numeric
    inputs broadcast, so a batch of problems runs in one pass (the leading
    axis of the returned arrays).
    """
    f_n = targets.f_n
    e_k, beta_g, dp, beta_h, head, d = np.broadcast_arrays(
        *[np.atleast_1d(np.asarray(v, dtype=float))
          for v in (e_k_mws, beta_g, dp_mw, beta_h, epc_headroom_mw, d_mw_hz)])
    shape = e_k.shape
    f0 = targets.f_fcrd if f0_hz is None else f0_hz
    gov_on = with_governor and governor.enabled
    p_n = np.where(beta_g > 0, beta_g * f_n * governor.r_pu, 1.0)
    params = GovernorParams.from_spec(governor, p_n)
    g0 = np.full(shape, gate0)
    n_steps = int(round(horizon_s / dt_s))

    def rhs(f, x, g, z, pe):
        if gov_on:
            dx, dg, dz, pm = governor_derivatives(x, g, z, f, g0, params, targets)
            dpm = np.where(beta_g > 0, pm - p_n * gate0, 0.0)
        else:
            dx = dg = dz = np.zeros(shape)
            dpm = np.zeros(shape)
        ref = np.where(f >= targets.f_tfl, 0.0,
                       np.clip(beta_h * (targets.f_tfl - f), 0.0, head))
        dpe = (ref - pe) / t_c_s
        df = f_n * (dpm + pe - dp - d * (f - f0)) / (2.0 * e_k)
        return df, dx, dg, dz, dpe, dpm

    y = [np.full(shape, f0), np.zeros(shape), g0.copy(), g0.copy(), np.zeros(shape)]
    nrec = n_steps + 1 if store else 1
    f_rec = np.empty((nrec,) + shape)
    pm_rec = np.empty((nrec,) + shape)
    pe_rec = np.empty((nrec,) + shape)
    nadir = y[0].copy()
    t_nadir = np.zeros(shape)
    tail_start = n_steps - int(round(5.0 / dt_s))
    tail_sum = np.zeros(shape)
    tail_n = 0
    h = dt_s
    for k in range(n_steps + 1):
        k1 = rhs(*y)
        if store:
            f_rec[k], pm_rec[k], pe_rec[k] = y[0], k1[5], y[4]
        if k >= tail_start:
            tail_sum += y[0]
            tail_n += 1
        lower = y[0] < nadir
        nadir = np.where(lower, y[0], nadir)
        t_nadir = np.where(lower, k * h, t_nadir)
        if k == n_steps:
            break
        k2 = rhs(*[a + h / 2 * b for a, b in zip(y, k1)])
        k3 = rhs(*[a + h / 2 * b for a, b in zip(y, k2)])
        k4 = rhs(*[a + h * b for a, b in zip(y, k3)])
        y = [a + h / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
             for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]
    t = np.arange(nrec) * h
    return SmibTrajectory(t=t, f=np.moveaxis(f_rec, 0, -1), p_m=np.moveaxis(pm_rec, 0, -1),
                          p_epc=np.moveaxis(pe_rec, 0, -1), nadir_hz=nadir, t_nadir_s=t_nadir,
                          df_ss_hz=tail_sum / max(tail_n, 1) - f_n)


# -- allocation ---------------------------------------------------------------

@dataclass(frozen=True)
class LinkCapacity:
    id: str
    p_n_mw: float
    headroom_mw: float


@dataclass
class Allocation:
    droops: Dict[str, float]
    stiffness: Dict[str, float]
    beta_h: float
    clamped: Tuple[str, ...]
    log: List[dict] = field(default_factory=list)


def allocate_droops(beta_target: float, links: Sequence[LinkCapacity],
                    df_worst_hz: float = 1.0, f_n: float = 50.0) -> Allocation:
    """Spread ``beta_target`` over links with equal per-unit droop where possible.

    A link whose correction at ``df_worst_hz`` would exceed its headroom is
    capped at ``headroom / |df_worst|`` and the remainder is shared by the
    other links in proportion to their ratings. Capped links with no headroom
    get an infinite droop (no EPC).

    Raises
    ------
    TuningInfeasibleError
        If the total capped stiffness is below ``beta_target``.
    """
    if beta_target <= 0 or not links:
        if beta_target > 0:
            raise TuningInfeasibleError("capacity", "no links available", beta_target)
        return Allocation({}, {}, 0.0, ())
    dfw = abs(df_worst_hz)
    ids = [k.id for k in links]
    p_n = np.array([k.p_n_mw for k in links], dtype=float)
    cap = np.array([max(k.headroom_mw, 0.0) for k in links], dtype=float) / dfw
    if cap.sum() < beta_target * (1 - 1e-12):
        short = beta_target - cap.sum()
        raise TuningInfeasibleError(
            "capacity", f"headroom supports {cap.sum():.1f} MW/Hz, "
                        f"{short:.1f} MW/Hz short of {beta_target:.1f}", short)
    clamped = np.zeros(len(links), bool)
    log = []
    for it in range(len(links) + 1):
        free = ~clamped
        rest = beta_target - cap[clamped].sum()
        lam = rest / p_n[free].sum()
        k = np.where(clamped, cap, p_n * lam)
        over = free & (k > cap * (1 + 1e-12))
        log.append({"iteration": it, "uniform_droop_pu": 1.0 / (lam * f_n),
                    "clamped": [ids[j] for j in np.flatnonzero(clamped)],
                    "newly_clamped": [ids[j] for j in np.flatnonzero(over)]})
        if not np.any(over):
            break
        clamped |= over
    k = np.where(clamped, cap, p_n * lam)
    with np.errstate(divide="ignore", over="ignore"):
        r = np.where(k > 0, p_n / (np.where(k > 0, k, 1.0) * f_n), np.inf)
    return Allocation(droops=dict(zip(ids, r.tolist())), stiffness=dict(zip(ids, k.tolist())),
                      beta_h=float(k.sum()), clamped=tuple(ids[j] for j in np.flatnonzero(clamped)),
                      log=log)


# -- tuning problem -------------------------------------------------------

MODES = ("complement", "replacement")


@dataclass(frozen=True)
class TuningProblem:
    """Inputs of the EPC tuning procedure.

    ``governor`` gives the representative fleet dynamics; only its ``r_pu``
    and time constants matter because the fleet rating follows from
    ``beta_g``. ``df_worst_hz=None`` uses ``f_N - f_min``.
    """

    e_k_mws: float
    dp_mw: float
    beta_g: float
    links: Tuple[LinkCapacity, ...]
    targets: FrequencyTargets = FrequencyTargets()
    mode: str = "complement"
    governor: GovernorSpec = GovernorSpec()
    gate0: float = 0.6
    t_c_s: float = 0.1
    df_worst_hz: Optional[float] = None
    horizon_s: float = 60.0
    dt_s: float = 0.01
    tol_mw_hz: float = 1.0
    beta_h_max: float = 1e5

    @property
    def worst_deviation(self) -> float:
        if self.df_worst_hz is not None:
            return abs(self.df_worst_hz)
        return self.targets.f_n - self.targets.f_min

    def validate(self) -> None:
        if not self.e_k_mws > 0:
            raise ValueError("e_k_mws must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dp_mw > 0 and not any(k.headroom_mw > 0 for k in self.links):
            raise ValueError("at least one link needs positive headroom")

    @classmethod
    def from_dict(cls, data: Mapping) -> "TuningProblem":
        t = FrequencyTargets(**data.get("targets", {}))
        gov = GovernorSpec(**data.get("governor", {}))
        links = tuple(LinkCapacity(str(k["id"]), float(k["p_n_mw"]), float(k["headroom_mw"]))
                      for k in data.get("links", []))
        known = {"e_k_mws", "dp_mw", "beta_g", "mode", "gate0", "t_c_s", "df_worst_hz",
                 "horizon_s", "dt_s", "tol_mw_hz", "beta_h_max"}
        extra = set(data) - known - {"targets", "governor", "links", "name", "description"}
        if extra:
            raise ValueError(f"unknown tuning problem field(s): {sorted(extra)}")
        kwargs = {k: data[k] for k in known if k in data}
        return cls(links=links, targets=t, governor=gov, **kwargs)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("e_k_mws", "dp_mw", "beta_g", "mode", "gate0",
                                            "t_c_s", "df_worst_hz", "horizon_s", "dt_s",
                                            "tol_mw_hz", "beta_h_max")}
        out["targets"] = self.targets.__dict__.copy()
        out["governor"] = self.governor.__dict__.copy()
        out["links"] = [k.__dict__.copy() for k in self.links]
        return out


def load_tuning_problem(path) -> TuningProblem:
    return TuningProblem.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TuningResult:
    mode: str
    droops: Dict[str, float]
    beta_h_target: float
    beta_h: float
    predicted_nadir_hz: float
    predicted_df_ss_hz: float
    clamped: Tuple[str, ...] = ()
    analytic_beta_h: Optional[float] = None
    refined_scale: float = 1.0
    log: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        def num(x):
            return None if x is None or not math.isfinite(x) else x
        return {
            "mode": self.mode,
            "beta_h_target_mw_hz": self.beta_h_target,
            "beta_h_mw_hz": self.beta_h,
            "analytic_beta_h_mw_hz": self.analytic_beta_h,
            "predicted_nadir_hz": self.predicted_nadir_hz,
            "predicted_df_ss_hz": self.predicted_df_ss_hz,
            "refined_scale": self.refined_scale,
            "droops_pu": {k: num(v) for k, v in self.droops.items()},
            "clamped": list(self.clamped),
            "log": self.log,
        }


def _smib_for(problem: TuningProblem, beta_h, store=False) -> SmibTrajectory:
    return smib_simulate(problem.e_k_mws, problem.beta_g, problem.dp_mw, problem.targets,
                         beta_h=beta_h, governor=problem.governor, gate0=problem.gate0,
                         t_c_s=problem.t_c_s, horizon_s=problem.horizon_s, dt_s=problem.dt_s,
                         store=store)


def nadir_bisection(problem: TuningProblem, log: Optional[list] = None, width: int = 16) -> float:
    """Smallest beta_h (within ``tol_mw_hz``) with SMIB nadir >= f_min.

    Each round evaluates ``width`` interior points of the bracket in one
    vectorized SMIB pass, so the bracket shrinks by ``width + 1`` per round;
    ``width = 1`` is plain bisection.
    """
    f_min = problem.targets.f_min
    if float(_smib_for(problem, 0.0).nadir_hz[0]) >= f_min:
        return 0.0
    lo, hi = 0.0, 1000.0
    while float(_smib_for(problem, hi).nadir_hz[0]) < f_min:
        lo, hi = hi, 2 * hi
        if hi > problem.beta_h_max:
            raise TuningInfeasibleError(
                "nadir", f"nadir stays below {f_min} Hz up to beta_h = {problem.beta_h_max:g} MW/Hz")
    rounds = 0
    while hi - lo > problem.tol_mw_hz:
        grid = np.linspace(lo, hi, width + 2)[1:-1]
        ok = _smib_for(problem, grid).nadir_hz >= f_min
        rounds += 1
        if log is not None:
            log.append({"stage": "bisection", "round": rounds, "lo": lo, "hi": hi})
        passing = np.flatnonzero(ok)
        if len(passing):
            j = passing[0]
            hi = float(grid[j])
            lo = float(grid[j - 1]) if j > 0 else lo
        else:
            lo = float(grid[-1])
    return hi


def tune_epc(problem: TuningProblem,
             refine: Optional[Callable[[Dict[str, float]], Tuple[bool, float]]] = None,
             refine_factor: float = 0.9, refine_max_iter: int = 10) -> TuningResult:
    """Size and allocate EPC droops.

    Complement mode finds the smallest link stiffness giving a nadir at or
    above ``f_min`` on the single-machine equivalent. Replacement mode uses
    the closed-form stiffness keeping ``|df_ss| <= df_ss_max``. ``refine``
    receives the droop map and returns ``(ok, metric)``; while not ok, all
    droops are scaled by ``refine_factor``.
    """
    problem.validate()
    log: List[dict] = []
    if problem.dp_mw <= 0:
        return TuningResult(problem.mode, {}, 0.0, 0.0, problem.targets.f_fcrd,
                            problem.targets.f_fcrd - problem.targets.f_n, log=log)
    analytic = None
    if problem.mode == "complement":
        target = nadir_bisection(problem, log)
    else:
        analytic = required_beta_h(problem.dp_mw, problem.beta_g, -problem.targets.df_ss_max,
                                   problem.targets)
        target = analytic
        log.append({"stage": "algebra", "beta_h_mw_hz": analytic})
    alloc = allocate_droops(target, problem.links, problem.worst_deviation,
                            problem.targets.f_n)
    log.append({"stage": "allocation", "iterations": alloc.log, "beta_h_mw_hz": alloc.beta_h})
    droops = dict(alloc.droops)
    scale = 1.0
    if refine is not None and droops:
        for it in range(refine_max_iter + 1):
            ok, metric = refine(droops)
            log.append({"stage": "refinement", "iteration": it, "scale": scale,
                        "metric": metric, "ok": bool(ok)})
            if ok:
                break
            if it == refine_max_iter:
                raise TuningInfeasibleError(
                    "refinement", f"condition still violated after {refine_max_iter} "
                                  f"droop scalings (metric {metric:.4f})")
            scale *= refine_factor
            droops = {k: alloc.droops[k] * scale for k in alloc.droops}
    achieved = float(sum(beta_from_droop(problem_link.p_n_mw, droops[problem_link.id],
                                         problem.targets.f_n)
                         for problem_link in problem.links
                         if problem_link.id in droops and math.isfinite(droops[problem_link.id])))
    traj = _smib_for(problem, achieved)
    return TuningResult(
        mode=problem.mode, droops=droops, beta_h_target=target, beta_h=achieved,
        predicted_nadir_hz=float(traj.nadir_hz[0]), predicted_df_ss_hz=float(traj.df_ss_hz[0]),
        clamped=alloc.clamped, analytic_beta_h=analytic, refined_scale=scale, log=log)


# -- scenario helpers -------------------------------------------------------

def links_from_scenario(s: Scenario) -> Tuple[LinkCapacity, ...]:
    """Link capacities of a scenario (import headroom from the operating point)."""
    out = [LinkCapacity(k.id, k.p_n_mw, k.import_headroom_mw) for k in s.hvdc_links]
    if s.hub is not None:
        for c in s.hub.converters:
            if c.nps_bus is not None:
                out.append(LinkCapacity(c.id, c.p_n_mw, c.epc_headroom_mw))
    return tuple(out)


def apply_droops(s: Scenario, droops: Mapping[str, float]) -> Scenario:
    """Scenario copy with EPC enabled at the given droops (inf disables)."""
    links = []
    for k in s.hvdc_links:
        if k.id in droops:
            r = droops[k.id]
            on = r is not None and math.isfinite(r)
            k = replace(k, epc=replace(k.epc, enabled=on, r_pu=float(r) if on else k.epc.r_pu))
        links.append(k)
    return replace(s, hvdc_links=tuple(links))


def disable_epc(s: Scenario) -> Scenario:
    return replace(s, hvdc_links=tuple(replace(k, epc=replace(k.epc, enabled=False))
                                       for k in s.hvdc_links))


def uniform_droops(s: Scenario, r_pu: float) -> Scenario:
    return apply_droops(s, {k.id: r_pu for k in s.hvdc_links})


def disable_governors(s: Scenario, machine_ids: Sequence[str]) -> Scenario:
    """Scenario copy with FCR-D switched off on the given machines."""
    wanted = set(machine_ids)
    missing = wanted - {m.id for m in s.machines}
    if missing:
        raise KeyError(f"unknown machine(s): {sorted(missing)}")
    ms = tuple(replace(m, governor=replace(m.governor, enabled=False))
               if m.id in wanted and m.governor is not None else m for m in s.machines)
    return replace(s, machines=ms)


def scenario_refinement_hook(s: Scenario, mode: str):
    """Refinement check that simulates the full scenario with candidate droops."""
    from .engine import run_simulation

    def hook(droops: Dict[str, float]):
        m = run_simulation(apply_droops(s, droops)).metrics
        if mode == "complement":
            return m.nadir_hz >= s.targets.f_min, m.nadir_hz
        return abs(m.df_ss_hz) <= s.targets.df_ss_max, m.df_ss_hz
    return hook
