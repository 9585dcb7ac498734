"""Algebraic AC network: admittance matrix, initial power flow, step solves.

Per-unit quantities are on ``Scenario.base_power_mva``. Load and converter
powers are consumption-positive for loads and injection-positive for
converters. Branches use the pi model with the off-nominal tap on the from
side.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .model import Scenario

DENSE_BUS_LIMIT = 150


class NetworkError(RuntimeError):
    """Raised for topologies that cannot be solved (e.g. sourceless islands)."""


class PowerFlowError(RuntimeError):
    def __init__(self, message: str, mismatch: float, iterations: int):
        super().__init__(message)
        self.mismatch = mismatch
        self.iterations = iterations


class VoltageCollapseError(PowerFlowError):
    pass


class NetworkConvergenceError(RuntimeError):
    """Newton failure during time stepping; carries the worst bus."""

    def __init__(self, t: float, bus: str, mismatch: float):
        super().__init__(f"network solve failed at t = {t:.4f} s: "
                         f"worst mismatch {mismatch:.3e} pu at bus {bus!r}")
        self.t = t
        self.bus = bus
        self.mismatch = mismatch


@dataclass
class AdmittanceMatrix:
    matrix: sp.csr_matrix
    bus_ids: Tuple[str, ...]

    @property
    def index(self) -> Dict[str, int]:
        return {b: k for k, b in enumerate(self.bus_ids)}

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def __len__(self) -> int:
        return len(self.bus_ids)


def _branch_arrays(s: Scenario, index):
    nb = len(s.branches)
    f = np.array([index[b.from_bus] for b in s.branches], dtype=int)
    t = np.array([index[b.to_bus] for b in s.branches], dtype=int)
    ys = np.array([1.0 / complex(b.r_pu, b.x_pu) for b in s.branches], dtype=complex)
    bc = np.array([b.b_pu for b in s.branches], dtype=float)
    tap = np.array([b.ratio for b in s.branches], dtype=float)
    if nb == 0:
        ys = np.zeros(0, complex)
    return f, t, ys, bc, tap


def build_admittance(s: Scenario, check_islands: bool = True) -> AdmittanceMatrix:
    """Bus admittance matrix of the branch network.

    Raises
    ------
    NetworkError
        If ``check_islands`` and some island holds no synchronous machine.
    """
    ids = tuple(b.id for b in s.buses)
    index = {b: k for k, b in enumerate(ids)}
    n = len(ids)
    f, t, ys, bc, tap = _branch_arrays(s, index)
    ysh = 0.5j * bc
    yff = (ys + ysh) / tap ** 2
    ytt = ys + ysh
    yft = -ys / tap
    rows = np.concatenate([f, t, f, t])
    cols = np.concatenate([f, t, t, f])
    vals = np.concatenate([yff, ytt, yft, yft])
    Y = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    Y.sum_duplicates()
    if check_islands:
        islands = find_sourceless_islands(s)
        if islands:
            raise NetworkError("islands without a synchronous machine: "
                               + "; ".join(",".join(c) for c in islands))
    return AdmittanceMatrix(Y, ids)


def find_sourceless_islands(s: Scenario, alive_machines: Optional[Sequence[str]] = None):
    ids = [b.id for b in s.buses]
    index = {b: k for k, b in enumerate(ids)}
    n = len(ids)
    rows = [index[b.from_bus] for b in s.branches]
    cols = [index[b.to_bus] for b in s.branches]
    graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    ncomp, labels = connected_components(graph, directed=False)
    machines = s.machines if alive_machines is None else \
        [m for m in s.machines if m.id in set(alive_machines)]
    sourced = {labels[index[m.bus]] for m in machines}
    return [[ids[k] for k in range(n) if labels[k] == c] for c in range(ncomp) if c not in sourced]


def dump_admittance(Y: AdmittanceMatrix, path) -> None:
    """Write Y in Matrix Market coordinate format with a bus-order comment."""
    scipy.io.mmwrite(str(path), Y.matrix.tocoo(),
                     comment="bus order: " + " ".join(Y.bus_ids))


def branch_flows(s: Scenario, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Complex power entering each branch at its from and to ends (pu)."""
    index = {b.id: k for k, b in enumerate(s.buses)}
    f, t, ys, bc, tap = _branch_arrays(s, index)
    ysh = 0.5j * bc
    i_from = (ys + ysh) / tap ** 2 * v[f] - ys / tap * v[t]
    i_to = -ys / tap * v[f] + (ys + ysh) * v[t]
    return v[f] * np.conj(i_from), v[t] * np.conj(i_to)


def network_losses_pu(s: Scenario, v: np.ndarray) -> float:
    s_from, s_to = branch_flows(s, v)
    return float(np.sum(s_from.real + s_to.real))


def zip_power(s0: np.ndarray, z, i, p, vm, v0) -> np.ndarray:
    """ZIP consumption ``S0 (z (V/V0)^2 + i V/V0 + p)``."""
    r = vm / v0
    return s0 * (z * r * r + i * r + p)


# -- initial operating point -----------------------------------------------

@dataclass
class OperatingPoint:
    """Converged pre-disturbance state. Vectors follow scenario order."""

    bus_ids: Tuple[str, ...]
    v: np.ndarray
    machine_p_mw: np.ndarray
    machine_q_mvar: np.ndarray
    emf_pu: np.ndarray
    delta_rad: np.ndarray
    link_p_mw: np.ndarray
    hub_nps_p_mw: float
    load_p_mw: np.ndarray
    load_q_mvar: np.ndarray
    load_v0_pu: np.ndarray
    losses_mw: float
    iterations: int
    mismatch_pu: float
    extras: Dict[str, float] = field(default_factory=dict)

    @property
    def vm(self) -> np.ndarray:
        return np.abs(self.v)

    @property
    def generation_mw(self) -> float:
        return float(np.sum(self.machine_p_mw))

    @property
    def imports_mw(self) -> float:
        return float(np.sum(self.link_p_mw) + self.hub_nps_p_mw)

    @property
    def load_mw(self) -> float:
        return float(np.sum(self.load_p_mw))

    @property
    def balance_residual_mw(self) -> float:
        """Generation + imports - load - losses (zero at a solved point)."""
        return self.generation_mw + self.imports_mw - self.load_mw - self.losses_mw


def _dsbus_dv(Y: sp.csr_matrix, v: np.ndarray):
    """Partial derivatives of V conj(Y V) w.r.t. angle and magnitude."""
    i = Y @ v
    diag_v = sp.diags(v)
    diag_i = sp.diags(i)
    diag_vn = sp.diags(v / np.abs(v))
    ds_dvm = diag_v @ np.conj(Y @ diag_vn) + np.conj(diag_i) @ diag_vn
    ds_dva = 1j * diag_v @ np.conj(diag_i - Y @ diag_v)
    return ds_dva.tocsr(), ds_dvm.tocsr()


def injection_setpoints(s: Scenario):
    """Bus-wise fixed injections (pu) used by the power flow.

    Returns ``(s_fixed, hub_nps_mw)``: machine and converter injections on
    non-slack buses plus the NPS-side injection of the hub link (if any).
    """
    index = {b.id: k for k, b in enumerate(s.buses)}
    base = s.base_power_mva
    s_fixed = np.zeros(len(s.buses), complex)
    for m in s.machines:
        s_fixed[index[m.bus]] += complex(m.p0_mw, m.q0_mvar) / base
    for k in s.hvdc_links:
        s_fixed[index[k.bus]] += complex(k.p0_mw, k.q0_mvar) / base
    hub_mw = 0.0
    if s.hub is not None:
        for c in s.hub.converters:
            if c.nps_bus is not None:
                hub_mw = -c.p_set_mw
                s_fixed[index[c.nps_bus]] += hub_mw / base
    return s_fixed, hub_mw


def solve_power_flow(s: Scenario) -> OperatingPoint:
    """Polar Newton-Raphson power flow.

    The slack bus holds V = v_set angle 0; buses hosting a machine with
    ``v_set_pu`` are PV buses, all others PQ. Loads with ``v0_pu`` set are
    voltage dependent already here; the rest draw exactly their nominal power.
    Machine EMFs are back-computed behind x'd.

    Raises
    ------
    PowerFlowError
        No convergence within ``solver.newton_max_iter`` iterations.
    VoltageCollapseError
        The backtracking step shrinks below 1e-6 without progress.
    """
    Yobj = build_admittance(s)
    Y = Yobj.matrix
    index = Yobj.index
    n = len(index)
    base = s.base_power_mva
    tol = s.solver.newton_tol
    max_iter = max(s.solver.newton_max_iter, 1)

    slack = index[s.slack_bus.id]
    vset = np.ones(n)
    pv_mask = np.zeros(n, bool)
    for m in s.machines:
        if m.v_set_pu is not None:
            vset[index[m.bus]] = m.v_set_pu
            pv_mask[index[m.bus]] = True
    pv_mask[slack] = False
    pq_mask = ~pv_mask
    pq_mask[slack] = False
    pv = np.flatnonzero(pv_mask)
    pq = np.flatnonzero(pq_mask)
    pvpq = np.r_[pv, pq]

    s_fixed, hub_mw = injection_setpoints(s)
    # Q at PV and slack buses comes out of the solution
    lb = np.array([index[ld.bus] for ld in s.loads], dtype=int)
    ls0 = np.array([complex(ld.p0_mw, ld.q0_mvar) / base for ld in s.loads], dtype=complex)
    lz = np.array([ld.z for ld in s.loads])
    li = np.array([ld.i for ld in s.loads])
    lp = np.array([ld.p for ld in s.loads])
    lv0 = np.array([np.nan if ld.v0_pu is None else ld.v0_pu for ld in s.loads])
    fixed_v0 = ~np.isnan(lv0)

    def load_s(vm):
        v0 = np.where(fixed_v0, lv0, vm[lb] if len(lb) else 1.0)
        return zip_power(ls0, lz, li, lp, vm[lb], v0)

    def load_ds_dvm(vm):
        out = np.zeros(len(lb), complex)
        if np.any(fixed_v0):
            v0 = lv0[fixed_v0]
            out[fixed_v0] = ls0[fixed_v0] * (2 * lz[fixed_v0] * vm[lb][fixed_v0] / v0 ** 2
                                             + li[fixed_v0] / v0)
        return np.bincount(lb, weights=out.real, minlength=n) + \
            1j * np.bincount(lb, weights=out.imag, minlength=n)

    def bus_load(vm):
        sl = load_s(vm)
        return np.bincount(lb, weights=sl.real, minlength=n) + \
            1j * np.bincount(lb, weights=sl.imag, minlength=n)

    va = np.zeros(n)
    vm = np.where(pq_mask, 1.0, vset)

    def mismatch(va, vm):
        v = vm * np.exp(1j * va)
        mis = v * np.conj(Y @ v) - (s_fixed - bus_load(vm))
        return np.r_[mis[pvpq].real, mis[pq].imag], v

    F, v = mismatch(va, vm)
    norm = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    while norm >= tol:
        if it >= max_iter:
            raise PowerFlowError(f"power flow did not converge in {max_iter} iterations "
                                 f"(mismatch {norm:.3e} pu)", norm, it)
        it += 1
        ds_dva, ds_dvm = _dsbus_dv(Y, v)
        ds_dvm = ds_dvm + sp.diags(load_ds_dvm(vm))
        J = sp.vstack([
            sp.hstack([ds_dva[pvpq][:, pvpq].real, ds_dvm[pvpq][:, pq].real]),
            sp.hstack([ds_dva[pq][:, pvpq].imag, ds_dvm[pq][:, pq].imag]),
        ]).tocsc()
        dx = -spla.spsolve(J, F)
        alpha = 1.0
        while True:
            va_n = va.copy()
            vm_n = vm.copy()
            va_n[pvpq] += alpha * dx[: len(pvpq)]
            vm_n[pq] += alpha * dx[len(pvpq):]
            if np.all(vm_n > 0):
                F_n, v_n = mismatch(va_n, vm_n)
                norm_n = np.max(np.abs(F_n))
                if np.isfinite(norm_n) and norm_n < norm:
                    break
            alpha *= 0.5
            if alpha < 1e-6:
                raise VoltageCollapseError(
                    f"voltage collapse: Newton step reduced below 1e-6 "
                    f"(mismatch {norm:.3e} pu)", norm, it)
        va, vm, F, v, norm = va_n, vm_n, F_n, v_n, norm_n

    # machine powers: slack and PV machines share the balance by rating
    s_calc = v * np.conj(Y @ v)
    s_need = s_calc + bus_load(vm)          # required total injection per bus
    s_other = np.zeros(n, complex)          # non-machine injections
    for k in s.hvdc_links:
        s_other[index[k.bus]] += complex(k.p0_mw, k.q0_mvar) / base
    if s.hub is not None:
        for c in s.hub.converters:
            if c.nps_bus is not None:
                s_other[index[c.nps_bus]] += hub_mw / base
    nm = len(s.machines)
    pm = np.array([m.p0_mw / base for m in s.machines])
    qm = np.array([m.q0_mvar / base for m in s.machines])
    for b in np.r_[slack, pv]:
        members = [j for j, m in enumerate(s.machines) if index[m.bus] == b]
        if not members:
            continue
        rating = np.array([s.machines[j].s_n_mva for j in members])
        share = rating / rating.sum()
        residual = s_need[b] - s_other[b]
        for j, w in zip(members, share):
            if b == slack:
                pm[j] = residual.real * w
            qm[j] = residual.imag * w

    emf = np.zeros(nm)
    delta = np.zeros(nm)
    for j, m in enumerate(s.machines):
        vb = v[index[m.bus]]
        current = np.conj(complex(pm[j], qm[j]) / vb)
        x = m.xd_prime_pu * base / m.s_n_mva
        e = vb + 1j * x * current
        emf[j] = abs(e)
        delta[j] = np.angle(e)

    sl = load_s(vm)
    return OperatingPoint(
        bus_ids=Yobj.bus_ids, v=v, machine_p_mw=pm * base, machine_q_mvar=qm * base,
        emf_pu=emf, delta_rad=delta,
        link_p_mw=np.array([k.p0_mw for k in s.hvdc_links], dtype=float),
        hub_nps_p_mw=hub_mw, load_p_mw=sl.real * base, load_q_mvar=sl.imag * base,
        load_v0_pu=np.where(fixed_v0, lv0, vm[lb] if len(lb) else 1.0),
        losses_mw=network_losses_pu(s, v) * base, iterations=it, mismatch_pu=float(norm))


# -- time-stepping solve -----------------------------------------------------

class NetworkSolver:
    """Current-injection Newton solver for the network during simulation.

    Machines enter as Norton equivalents ``E'/(j x)``; the constant-
    impedance share of every load is folded into the matrix; the remaining
    ZIP terms and converter injections are nonlinear and handled by a
    full-Jacobian Newton iteration in rectangular coordinates. The LU
    factors are reused across solves and refreshed when convergence slows.
    """

    def __init__(self, s: Scenario, op: OperatingPoint):
        self.scenario = s
        self.base = s.base_power_mva
        self.bus_ids = op.bus_ids
        index = {b: k for k, b in enumerate(op.bus_ids)}
        self.n = len(index)
        self.Y = build_admittance(s, check_islands=False).matrix
        self.m_bus = np.array([index[m.bus] for m in s.machines], dtype=int)
        self.m_x = np.array([m.xd_prime_pu * self.base / m.s_n_mva for m in s.machines])
        self.m_alive = np.ones(len(s.machines), bool)
        self.l_bus = np.array([index[ld.bus] for ld in s.loads], dtype=int)
        self.l_s0 = np.array([complex(ld.p0_mw, ld.q0_mvar) / self.base for ld in s.loads],
                             dtype=complex)
        self.l_z = np.array([ld.z for ld in s.loads])
        self.l_i = np.array([ld.i for ld in s.loads])
        self.l_p = np.array([ld.p for ld in s.loads])
        self.l_v0 = np.asarray(op.load_v0_pu, dtype=float)
        self.tol = s.solver.newton_tol
        self.max_iter = s.solver.newton_max_iter
        self.refactorizations = 0
        self._assemble()

    # topology / parameter changes
    def set_machine_alive(self, j: int, alive: bool) -> None:
        self.m_alive[j] = alive
        self._assemble()

    def add_load_power(self, j: int, dp_mw: float) -> None:
        self.l_s0[j] += dp_mw / self.base
        self._assemble()

    def _assemble(self) -> None:
        n = self.n
        ym = np.where(self.m_alive, 1.0 / (1j * self.m_x), 0.0)
        diag = np.bincount(self.m_bus, weights=ym.real, minlength=n) + \
            1j * np.bincount(self.m_bus, weights=ym.imag, minlength=n)
        yl = self.l_z * np.conj(self.l_s0) / self.l_v0 ** 2
        diag = diag + np.bincount(self.l_bus, weights=yl.real, minlength=n) + \
            1j * np.bincount(self.l_bus, weights=yl.imag, minlength=n)
        self.Yaug = (self.Y + sp.diags(diag)).tocsr()
        G, B = self.Yaug.real, self.Yaug.imag
        self._Jlin = sp.bmat([[G, -B], [B, G]]).tocsc()
        # small systems are faster with dense linear algebra
        self.dense = n <= DENSE_BUS_LIMIT
        if self.dense:
            self.Yaug = self.Yaug.toarray()
            self._Jlin = self._Jlin.toarray()
        # nonlinear constant-current and constant-power parts per bus
        si = self.l_s0 * self.l_i / self.l_v0
        sp_ = self.l_s0 * self.l_p
        self.bus_si = np.bincount(self.l_bus, weights=si.real, minlength=n) + \
            1j * np.bincount(self.l_bus, weights=si.imag, minlength=n)
        self.bus_sp = np.bincount(self.l_bus, weights=sp_.real, minlength=n) + \
            1j * np.bincount(self.l_bus, weights=sp_.imag, minlength=n)
        self._lu = None

    # core solve
    def norton_currents(self, emf: np.ndarray) -> np.ndarray:
        im = np.where(self.m_alive, emf / (1j * self.m_x), 0.0)
        return np.bincount(self.m_bus, weights=im.real, minlength=self.n) + \
            1j * np.bincount(self.m_bus, weights=im.imag, minlength=self.n)

    def _injection(self, v, s_conv):
        vm = np.abs(v)
        s_inj = s_conv - self.bus_si * vm - self.bus_sp
        return np.conj(s_inj) / np.conj(v), s_inj, vm

    def _jacobian(self, v, s_conv):
        _, s_inj, vm = self._injection(v, s_conv)
        ds = -self.bus_si                       # d s_inj / d|V|
        cv = np.conj(v)
        c = np.conj(s_inj)
        e, f = v.real, v.imag
        di_de = np.conj(ds) * (e / vm) / cv - c / cv ** 2
        di_df = np.conj(ds) * (f / vm) / cv + 1j * c / cv ** 2
        n = self.n
        if self.dense:
            J = self._Jlin.copy()
            k = np.arange(n)
            J[k, k] -= di_de.real
            J[k, k + n] -= di_df.real
            J[k + n, k] -= di_de.imag
            J[k + n, k + n] -= di_df.imag
            return J
        blocks = sp.bmat([[sp.diags(di_de.real), sp.diags(di_df.real)],
                          [sp.diags(di_de.imag), sp.diags(di_df.imag)]])
        return (self._Jlin - blocks).tocsc()

    def solve(self, emf: np.ndarray, s_conv: np.ndarray, v0: np.ndarray, t: float = 0.0):
        """Bus voltages for machine EMF phasors and converter injections.

        Parameters
        ----------
        emf : complex array, per machine (ignored for tripped machines)
        s_conv : complex array, per bus converter injection in pu
        v0 : complex array, initial guess
        """
        i_src = self.norton_currents(emf)
        v = np.array(v0, dtype=complex)
        n = self.n
        prev = np.inf
        for it in range(self.max_iter + 1):
            i_inj, _, _ = self._injection(v, s_conv)
            r = self.Yaug @ v - i_src - i_inj
            norm = np.max(np.abs(r))
            if norm < self.tol:
                return v
            if it == self.max_iter:
                break
            if self._lu is None or norm > 0.25 * prev:
                J = self._jacobian(v, s_conv)
                self._lu = sla.lu_factor(J, check_finite=False) if self.dense else spla.splu(J)
                self.refactorizations += 1
            rhs = -np.concatenate((r.real, r.imag))
            dx = sla.lu_solve(self._lu, rhs, check_finite=False) if self.dense else self._lu.solve(rhs)
            v = v + dx[:n] + 1j * dx[n:]
            prev = norm
        worst = int(np.argmax(np.abs(r)))
        raise NetworkConvergenceError(t, self.bus_ids[worst], float(norm))

    # post-processing helpers
    def machine_currents(self, emf: np.ndarray, v: np.ndarray) -> np.ndarray:
        i = (emf - v[self.m_bus]) / (1j * self.m_x)
        return np.where(self.m_alive, i, 0.0)

    def machine_pe(self, emf: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Electrical power of each machine (pu on system base)."""
        return (emf * np.conj(self.machine_currents(emf, v))).real

    def load_power(self, v: np.ndarray) -> np.ndarray:
        vm = np.abs(v[self.l_bus])
        return zip_power(self.l_s0, self.l_z, self.l_i, self.l_p, vm, self.l_v0)

    def losses(self, v: np.ndarray) -> float:
        return network_losses_pu(self.scenario, v)

    def frequency_divider(self) -> np.ndarray:
        """Weights W with bus frequency = W @ machine frequency.

        Built from series susceptances plus machine 1/x'd; rows sum to one in
        every energized island. Tripped machines get zero columns.
        """
        s = self.scenario
        index = {b: k for k, b in enumerate(self.bus_ids)}
        n = self.n
        f, t, ys, _, _ = _branch_arrays(s, index)
        b = -ys.imag
        L = sp.coo_matrix((np.r_[-b, -b, b, b], (np.r_[f, t, f, t], np.r_[t, f, f, t])),
                          shape=(n, n)).tocsc()
        bg = np.where(self.m_alive, 1.0 / self.m_x, 0.0)
        M = L + sp.diags(np.bincount(self.m_bus, weights=bg, minlength=n))
        C = sp.coo_matrix((bg, (self.m_bus, np.arange(len(bg)))), shape=(n, len(bg))).tocsc()
        try:
            W = spla.spsolve(M.tocsc(), C)
        except RuntimeError as exc:
            raise NetworkError("frequency divider singular: island lost all machines") from exc
        W = W.toarray() if sp.issparse(W) else np.asarray(W).reshape(n, -1)
        if not np.all(np.isfinite(W)):
            raise NetworkError("frequency divider singular: island lost all machines")
        return W


def solve_network_step(solver: NetworkSolver, emf: np.ndarray, s_conv: np.ndarray,
                       v_prev: np.ndarray, t: float = 0.0) -> np.ndarray:
    """Functional wrapper around :meth:`NetworkSolver.solve`."""
    return solver.solve(emf, s_conv, v_prev, t)
