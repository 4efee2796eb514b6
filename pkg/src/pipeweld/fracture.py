"""Phase-field damage: energy split, history field, damage solve.

The damage equation is the second-order model with quadratic geometric
function, which is linear in phi for a frozen driving history, so each
damage update is a single sparse solve. A one-dimensional bar solver and
a seeded-profile energy check back the 2D implementation against the
closed-form strength and the regularized crack energy.
"""
from __future__ import annotations

import logging
from collections import deque

import numpy as np
import scipy.sparse as sp

from . import fem
from .fem import core

logger = logging.getLogger(__name__)


def degradation(phi, kres=1e-7):
    return (1.0 - phi) ** 2 + kres


def plastic_degradation(phi, beta, kres=1e-7):
    """Partial coupling of damage into the yield resistance."""
    return beta * degradation(phi, kres) + (1.0 - beta)


def split_energy(eps_e, E, nu):
    """Tension-side elastic energy: volumetric part only when dilating.

    eps_e is (..., 4) Voigt (xx, yy, zz, eng xy); E, nu broadcastable.
    """
    eps_e = np.asarray(eps_e, dtype=float)
    Kb = E / (3.0 * (1.0 - 2.0 * nu))
    G = E / (2.0 * (1.0 + nu))
    tr = eps_e[..., 0] + eps_e[..., 1] + eps_e[..., 2]
    m = tr / 3.0
    dev_sq = ((eps_e[..., 0] - m) ** 2 + (eps_e[..., 1] - m) ** 2
              + (eps_e[..., 2] - m) ** 2 + 0.5 * eps_e[..., 3] ** 2)
    return 0.5 * Kb * np.maximum(tr, 0.0) ** 2 + G * dev_sq


def update_history(H_old, psi_plus, psi_p, beta):
    """Monotone driving history from elastic and weighted plastic energy."""
    return np.maximum(H_old, psi_plus + beta * psi_p)


class PhaseFieldSolver:
    """One linear damage solve on the active mesh per call."""

    def __init__(self, mesh, ell_by_region, blocks=None, kres=1e-7,
                 linear_method="direct"):
        self.mesh = mesh
        self.blocks = blocks if blocks is not None else core.build_blocks(mesh)
        self.kres = kres
        self.linear_method = linear_method
        missing = [r for r in mesh.region_names if r not in ell_by_region]
        if missing:
            raise core.AssemblyError(f"no length scale for regions {missing}")
        ell_elem = np.array([ell_by_region[mesh.region_names[i]]
                             for i in mesh.elem_region])
        self._ell = [ell_elem[b.elem_ids] for b in self.blocks]

    def ell_of_block(self, ib):
        return self._ell[ib]

    def solve(self, H_qp, Gc_qp, phi_old, seeds=None):
        """Damage field for frozen history H and toughness Gc (per block qp).

        seeds: node ids pinned at phi = 1 (machined or porosity defects).
        Inactive-region nodes keep their previous value. The result is
        clipped to [0, 1]; overshoot beyond 1e-6 is logged.
        """
        mesh = self.mesh
        Ke_list, Fe_list, masks = [], [], []
        for ib, b in enumerate(self.blocks):
            active = mesh.active[b.elem_ids]
            Ke, Fe = fem.kernels.phase_batch(
                b.grads, b.detJw, b.N, H_qp[ib], Gc_qp[ib],
                self._ell[ib], active.astype(float))
            Ke_list.append(Ke)
            Fe_list.append(Fe)
            masks.append(active)
        K, F = core.scatter_add(self.blocks, Ke_list, Fe_list, 1, mesh.nnode,
                                active_masks=masks)
        K = K.tolil()
        touched = np.zeros(mesh.nnode, dtype=bool)
        for e in np.where(mesh.active)[0]:
            touched[mesh.element_nodes(e)] = True
        pin = {}
        for n in np.where(~touched)[0]:
            pin[int(n)] = float(phi_old[n])
        if seeds is not None:
            for n in np.atleast_1d(seeds):
                pin[int(n)] = 1.0
        for n, val in pin.items():
            K.rows[n] = [n]
            K.data[n] = [1.0]
            F[n] = val
        phi = core.solve_linear(K.tocsr(), F, method=self.linear_method)
        over = float(max(phi.max() - 1.0, -phi.min(), 0.0))
        if over > 1e-6:
            logger.debug("damage solve clipped by %.3e", over)
        return np.clip(phi, 0.0, 1.0)


def homogeneous_damage(H, Gc, ell):
    """Uniform-field damage for a given driving history."""
    x = 2.0 * np.asarray(H) * ell / Gc
    return x / (1.0 + x)


def peak_stress(E, Gc, ell):
    """Tensile strength of the homogeneous quadratic-degradation response."""
    return (9.0 / 16.0) * np.sqrt(E * Gc / (3.0 * ell))


# ---------------------------------------------------------------------------
# One-dimensional verification solvers
# ---------------------------------------------------------------------------

def _bar_operators(x, ell, Gc):
    h = np.diff(x)
    n = x.size
    main_k = np.zeros(n)
    off_k = -(ell ** 2) / h
    np.add.at(main_k, np.arange(n - 1), ell ** 2 / h)
    np.add.at(main_k, np.arange(1, n), ell ** 2 / h)
    K_grad = sp.diags([off_k, main_k, off_k], [-1, 0, 1], format="csr")
    # element-consistent mass
    main_m = np.zeros(n)
    np.add.at(main_m, np.arange(n - 1), h / 3.0)
    np.add.at(main_m, np.arange(1, n), h / 3.0)
    M = sp.diags([h / 6.0, main_m, h / 6.0], [-1, 0, 1], format="csr")
    return K_grad, M, h


def bar_strength(E, Gc, ell, h_over_ell=0.2, length_over_ell=40.0,
                 n_steps=400, overshoot=1.3, kres=1e-7):
    """Peak nominal stress of a stretched bar with damage, 1D model.

    Monotone end-displacement ramp past the analytic peak strain; damage
    and displacement are alternated to a tight staggered tolerance at each
    step. Returns the maximum reaction stress seen along the ramp.
    """
    L = length_over_ell * ell
    nel = max(int(round(L / (h_over_ell * ell))), 4)
    x = np.linspace(0.0, L, nel + 1)
    n = x.size
    K_grad, M, h = _bar_operators(x, ell, Gc)
    eps_star = np.sqrt(Gc / (3.0 * ell * E))
    phi = np.zeros(n)
    H = np.zeros(nel)
    peak = 0.0
    for eps_bar in np.linspace(0.0, overshoot * eps_star, n_steps + 1)[1:]:
        u = eps_bar * x                     # initial guess: uniform stretch
        for _ in range(200):
            # displacement solve with degraded stiffness, ends pinned
            g_el = degradation(0.5 * (phi[:-1] + phi[1:]), kres)
            k_el = g_el * E / h
            main = np.zeros(n)
            np.add.at(main, np.arange(nel), k_el)
            np.add.at(main, np.arange(1, n), k_el)
            Ku = sp.diags([-k_el, main, -k_el], [-1, 0, 1], format="lil")
            rhs = np.zeros(n)
            for d, val in ((0, 0.0), (n - 1, eps_bar * L)):
                Ku.rows[d] = [d]
                Ku.data[d] = [1.0]
                rhs[d] = val
            u = core.solve_linear(Ku.tocsr(), rhs)
            eps = np.diff(u) / h
            H = np.maximum(H, 0.5 * E * eps ** 2)
            # damage solve: l^2 phi'' term plus source-weighted mass
            src = 2.0 * H * ell / Gc
            main_m = np.zeros(n)
            np.add.at(main_m, np.arange(nel), (1.0 + src) * h / 3.0)
            np.add.at(main_m, np.arange(1, n), (1.0 + src) * h / 3.0)
            off_m = (1.0 + src) * h / 6.0
            A = K_grad + sp.diags([off_m, main_m, off_m], [-1, 0, 1], format="csr")
            F = np.zeros(n)
            np.add.at(F, np.arange(nel), src * h / 2.0)
            np.add.at(F, np.arange(1, n), src * h / 2.0)
            phi_new = np.clip(core.solve_linear(A, F), 0.0, 1.0)
            dphi = float(np.max(np.abs(phi_new - phi)))
            phi = phi_new
            if dphi <= 1e-10:
                break
        g_el = degradation(0.5 * (phi[:-1] + phi[1:]), kres)
        sigma = float((g_el * E * np.diff(u) / h)[0])
        peak = max(peak, sigma)
    return peak


def seeded_profile_energy(Gc, ell, h_over_ell=0.2, length_over_ell=40.0):
    """Regularized energy of an optimal single-crack profile, 1D.

    Solves the damage equation with a unit seed at the centre and no
    driving energy, then integrates the crack density. The continuum
    value is exactly Gc.
    """
    L = length_over_ell * ell
    nel = max(int(round(L / (h_over_ell * ell))), 4)
    x = np.linspace(-L / 2.0, L / 2.0, nel + 1)
    n = x.size
    K_grad, M, h = _bar_operators(x, ell, Gc)
    A = (K_grad + M).tolil()
    F = np.zeros(n)
    mid = n // 2
    A.rows[mid] = [mid]
    A.data[mid] = [1.0]
    F[mid] = 1.0
    phi = core.solve_linear(A.tocsr(), F)
    # Gc * integral of (phi^2/(2l) + l/2 phi'^2)
    dphi = np.diff(phi) / h
    phi_sq = (phi[:-1] ** 2 + phi[:-1] * phi[1:] + phi[1:] ** 2) / 3.0
    return float(Gc * np.sum(h * (phi_sq / (2.0 * ell) + 0.5 * ell * dphi ** 2)))


# ---------------------------------------------------------------------------
# Crack-path queries
# ---------------------------------------------------------------------------

def element_damage(mesh, phi):
    """Mean nodal damage per element."""
    out = np.zeros(mesh.nelem)
    for nn in (3, 4):
        m = mesh.elem_nn == nn
        if np.any(m):
            out[m] = phi[mesh.elem_conn[m, :nn]].mean(axis=1)
    return out


def connected_band(mesh, flags, start_nodes, goal_nodes, adjacency=None):
    """True if flagged active elements form an edge-connected path
    between two node sets (e.g. bore to outer surface)."""
    from .mesh import element_adjacency
    adj = adjacency if adjacency is not None else element_adjacency(mesh)
    flagged = np.asarray(flags, dtype=bool) & mesh.active
    start = set(np.atleast_1d(start_nodes).tolist())
    goal = set(np.atleast_1d(goal_nodes).tolist())
    seeds = deque()
    seen = np.zeros(mesh.nelem, dtype=bool)
    for e in np.where(flagged)[0]:
        if start.intersection(mesh.element_nodes(e).tolist()):
            seeds.append(e)
            seen[e] = True
    while seeds:
        e = seeds.popleft()
        if goal.intersection(mesh.element_nodes(e).tolist()):
            return True
        for nb in adj[e]:
            if flagged[nb] and not seen[nb]:
                seen[nb] = True
                seeds.append(nb)
    return False
