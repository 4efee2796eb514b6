"""Transient heat conduction with surface convection and radiation.

Backward Euler in time. Each step is solved by iterated linear solves:
temperature-dependent capacity and conductivity are refreshed each pass
(Picard) while the quartic radiation edge flux is linearized about the
current iterate (Newton), so constant-property problems converge in one
repeated solve and the strongly nonlinear torch steps stay stable.

Units: mm, s, K (temperatures in degC), mW, tonne.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import mesh as meshmod
from .fem import core
from .materials import ThermalProps

logger = logging.getLogger(__name__)

_EDGE_XI = np.array([-1.0, 1.0]) / np.sqrt(3.0)
_EDGE_N = np.stack([(1.0 - _EDGE_XI) / 2.0, (1.0 + _EDGE_XI) / 2.0], axis=1)  # (2 qp, 2 nodes)


class ThermalError(RuntimeError):
    pass


@dataclass
class WeldPass:
    """One bead: torch dwell on the cavity surface, then deposition."""
    region: str
    torch_nodeset: str
    torch_temp: float | None = None   # default: melt temperature
    torch_time: float = 5.0
    dwell_time: float = 10.0


@dataclass
class WeldSchedule:
    passes: list
    cooldown_tol: float = 0.5         # degC above ambient at the end
    dt0_torch: float = 0.05
    dtmax_torch: float = 0.5
    dt0_dwell: float = 0.1
    dtmax_dwell: float = 2.0
    dt0_cool: float = 0.5
    dtmax_cool: float = 300.0
    growth: float = 1.3
    max_halvings: int = 6
    max_steps: int = 100000


class ThermalSolver:
    """Conduction on the active part of a mesh with named-region properties."""

    def __init__(self, mesh, props_by_region, lumped=False, linear_method="direct"):
        self.mesh = mesh
        self.lumped = lumped
        self.linear_method = linear_method
        self.blocks = core.build_blocks(mesh)
        missing = [r for r in mesh.region_names if r not in props_by_region]
        if missing:
            raise ThermalError(f"no thermal properties for regions {missing}")
        self.props = [props_by_region[r] for r in mesh.region_names]
        ref = self.props[0]
        self.T0 = ref.T0
        self.T_abs = ref.T_abs
        self._qp_xy = [np.einsum("qa,ead->eqd", b.N, mesh.nodes[b.conn])
                       for b in self.blocks]
        self._edges = None
        self.refresh_topology()

    # -- topology ---------------------------------------------------------

    def refresh_topology(self):
        """Recompute exterior edges and untouched nodes after activation."""
        self._edges = meshmod.active_boundary_edges(self.mesh)
        touched = np.zeros(self.mesh.nnode, dtype=bool)
        for e in np.where(self.mesh.active)[0]:
            touched[self.mesh.element_nodes(e)] = True
        self._touched = touched

    def _edge_geom(self):
        """Per boundary edge: node pair, length, material props."""
        out = []
        for e, le in self._edges:
            a, b = self.mesh.edge_nodes(int(e), int(le))
            L = float(np.linalg.norm(self.mesh.nodes[b] - self.mesh.nodes[a]))
            pr = self.props[self.mesh.elem_region[e]]
            out.append((a, b, L, pr))
        return out

    # -- assembly ---------------------------------------------------------

    def _domain_matrices(self, T):
        """Capacity and conductivity matrices at the current iterate."""
        nn = self.mesh.nnode
        Ms, Ks = [], []
        rows, cols = [], []
        for b in self.blocks:
            act = self.mesh.active[b.elem_ids].astype(float)
            Te = T[b.conn]
            T_qp = np.einsum("ea,qa->eq", Te, b.N)
            rc = np.empty_like(T_qp)
            kk = np.empty_like(T_qp)
            mat = self.mesh.elem_region[b.elem_ids]
            for mid in np.unique(mat):
                pr = self.props[mid]
                sel = mat == mid
                rc[sel] = pr.rho * pr.c(T_qp[sel])
                kk[sel] = pr.k(T_qp[sel])
            w = b.detJw * act[:, None]
            Me = np.einsum("qa,eq,qb->eab", b.N, rc * w, b.N)
            if self.lumped:
                diag = Me.sum(axis=2)
                Me = np.zeros_like(Me)
                idx = np.arange(b.nn)
                Me[:, idx, idx] = diag
            Ke = np.einsum("eqad,eq,eqbd->eab", b.grads, kk * w, b.grads)
            Ms.append(Me)
            Ks.append(Ke)
        M = _assemble(self.blocks, Ms, nn)
        K = _assemble(self.blocks, Ks, nn)
        return M, K

    def _edge_terms(self, T):
        """Convection plus Newton-linearized radiation on exterior edges."""
        nn = self.mesh.nnode
        rows, cols, vals = [], [], []
        F = np.zeros(nn)
        for a, bnode, L, pr in self._edge_cache:
            idx = np.array([a, bnode])
            Tq = _EDGE_N @ T[idx]
            base = np.maximum(Tq - self.T_abs, 0.0)
            amb4 = (self.T0 - self.T_abs) ** 4
            q = pr.emissivity * pr.sb_const * (base ** 4 - amb4)
            dq = 4.0 * pr.emissivity * pr.sb_const * base ** 3
            He = np.zeros((2, 2))
            Fe = np.zeros(2)
            for qpi in range(2):
                w = 0.5 * L
                Nq = _EDGE_N[qpi]
                He += w * (pr.h_c + dq[qpi]) * np.outer(Nq, Nq)
                Fe += w * Nq * (pr.h_c * self.T0
                                - (q[qpi] - dq[qpi] * Tq[qpi]))
            rows.extend([a, a, bnode, bnode])
            cols.extend([a, bnode, a, bnode])
            vals.extend([He[0, 0], He[0, 1], He[1, 0], He[1, 1]])
            F[idx] += Fe
        H = sp.coo_matrix((vals, (rows, cols)), shape=(nn, nn)).tocsr()
        return H, F

    def _source_vector(self, source_fn, t):
        nn = self.mesh.nnode
        F = np.zeros(nn)
        for b, xy in zip(self.blocks, self._qp_xy):
            act = self.mesh.active[b.elem_ids].astype(float)
            s = source_fn(xy, t)
            Fe = np.einsum("qa,eq->ea", b.N, s * b.detJw * act[:, None])
            np.add.at(F, b.conn, Fe)
        return F

    # -- single step ------------------------------------------------------

    def step(self, T_old, dt, t_new, dirichlet=None, source_fn=None,
             tol=1e-8, max_iter=40):
        """One backward Euler step; returns (T_new, iterations).

        dirichlet: (node_ids, value) pinned for this step.
        Raises ThermalError if the nonlinear iteration stalls.
        """
        self._edge_cache = self._edge_geom()
        T = T_old.copy()
        if dirichlet is not None:
            ids, val = dirichlet
            T[ids] = val
        src = self._source_vector(source_fn, t_new) if source_fn else 0.0
        prev_delta = None
        for it in range(1, max_iter + 1):
            M, K = self._domain_matrices(T)
            H, Fh = self._edge_terms(T)
            A = M / dt + K + H
            rhs = M.dot(T_old) / dt + Fh + src
            A = A.tolil()
            if dirichlet is not None:
                ids, val = dirichlet
                for d in np.atleast_1d(ids):
                    A.rows[d] = [int(d)]
                    A.data[d] = [1.0]
                    rhs[d] = val
            for d in np.where(~self._touched)[0]:
                A.rows[d] = [int(d)]
                A.data[d] = [1.0]
                rhs[d] = T_old[d]
            T_new = core.solve_linear(A.tocsr(), rhs, method=self.linear_method)
            delta = float(np.max(np.abs(T_new - T)))
            T = T_new
            if delta <= tol:
                return T, it
            if prev_delta is not None and delta > 4.0 * prev_delta and it > 3:
                raise ThermalError(f"thermal step diverging at t={t_new:g} (dT={delta:g})")
            prev_delta = delta
        raise ThermalError(f"thermal step did not converge at t={t_new:g} (dT={delta:g})")

    # -- schedule driver ---------------------------------------------------

    def run_schedule(self, schedule: WeldSchedule, callback=None,
                     on_activate=None, probes=None, T_init=None):
        """Run torch/deposit/dwell phases for each pass, then cool down.

        callback(t, T, dt, phase) -> bool runs after each accepted step;
        returning False rejects the step and halves dt (used to sync a
        quasi-static stress solve). on_activate(region, T) fires when a
        bead is deposited. Returns (T, history dict).
        """
        mesh = self.mesh
        T = np.full(mesh.nnode, self.T0) if T_init is None else T_init.copy()
        probe_ids = []
        if probes:
            for xy in probes:
                d = np.linalg.norm(mesh.nodes - np.asarray(xy), axis=1)
                probe_ids.append(int(np.argmin(d)))
        hist = {"t": [], "dt": [], "phase": [], "T_max": [],
                "probes": [[] for _ in probe_ids]}
        state = {"t": 0.0, "steps": 0}

        def advance(duration, phase, dirichlet, dt0, dtmax, until=None):
            t_end = None if duration is None else state["t"] + duration
            dt = dt0
            while True:
                if t_end is not None:
                    remaining = t_end - state["t"]
                    if remaining <= 1e-12 * max(t_end, 1.0):
                        return
                    dt = min(dt, remaining)
                dt_try = dt
                halved = 0
                while True:
                    try:
                        T_new, _ = self.step(T, dt_try, state["t"] + dt_try,
                                             dirichlet=dirichlet)
                        ok = True if callback is None else callback(
                            state["t"] + dt_try, T_new, dt_try, phase)
                    except ThermalError:
                        ok = False
                    if ok:
                        break
                    halved += 1
                    if halved > schedule.max_halvings:
                        raise ThermalError(f"phase {phase}: step rejected "
                                           f"{halved} times at t={state['t']:g}")
                    dt_try *= 0.5
                T[:] = T_new
                state["t"] += dt_try
                state["steps"] += 1
                if state["steps"] > schedule.max_steps:
                    raise ThermalError("step budget exhausted")
                act = meshmod.active_nodes(mesh)
                hist["t"].append(state["t"])
                hist["dt"].append(dt_try)
                hist["phase"].append(phase)
                hist["T_max"].append(float(T[act].max()))
                for slot, pid in enumerate(probe_ids):
                    hist["probes"][slot].append(float(T[pid]))
                dt = min(dt_try * schedule.growth, dtmax)
                if until is not None and until(T):
                    return

        for k, wp in enumerate(schedule.passes, start=1):
            Tstar = self.props[0].T_melt if wp.torch_temp is None else wp.torch_temp
            torch_ids = mesh.nodesets[wp.torch_nodeset]
            advance(wp.torch_time, f"torch_{k}", (torch_ids, Tstar),
                    schedule.dt0_torch, schedule.dtmax_torch)
            bead = mesh.region_ids(wp.region)
            was_active = self._touched.copy()
            meshmod.activate(mesh, wp.region)
            self.refresh_topology()
            born = np.zeros(mesh.nnode, dtype=bool)
            for e in bead:
                born[mesh.element_nodes(e)] = True
            T[born & ~was_active] = Tstar
            T[torch_ids] = Tstar
            if on_activate is not None:
                on_activate(wp.region, T)
            advance(wp.dwell_time, f"dwell_{k}", None,
                    schedule.dt0_dwell, schedule.dtmax_dwell)

        tol = schedule.cooldown_tol
        act_ids = meshmod.active_nodes(mesh)
        advance(None, "cooldown", None, schedule.dt0_cool, schedule.dtmax_cool,
                until=lambda Tn: float(np.max(np.abs(Tn[act_ids] - self.T0))) <= tol)
        for key in ("t", "dt", "T_max"):
            hist[key] = np.array(hist[key])
        hist["probes"] = [np.array(p) for p in hist["probes"]]
        return T, hist


def _assemble(blocks, mats, nnode):
    rows, cols, vals = [], [], []
    for b, Me in zip(blocks, mats):
        r = np.repeat(b.conn, b.nn, axis=1)
        c = np.tile(b.conn, (1, b.nn))
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(Me.reshape(b.nel, -1).ravel())
    A = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(nnode, nnode))
    return A.tocsr()
