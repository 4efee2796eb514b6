"""Dilute lattice hydrogen transport with stress-gradient drift.

Implicit in time; the drift velocity comes from the gradient of the
nodal hydrostatic stress, and cracked material (high damage) acts as a
fast path through a damage-boosted diffusivity. Concentration is in
mass ppm, isothermal at the diffusion temperature of the material.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp

from . import GAS_CONSTANT
from . import fem
from .fem import core

logger = logging.getLogger(__name__)


class TransportError(RuntimeError):
    pass


def effective_diffusivity(D0, phi, k_d=1e4, phi_th=0.8):
    """Damage-accelerated diffusivity (free surface once phi ~ 1)."""
    return D0 * (1.0 + k_d * np.maximum(np.asarray(phi) - phi_th, 0.0))


class TransportSolver:
    """Concentration transport on the active mesh."""

    def __init__(self, mesh, hyd_by_region, blocks=None, linear_method="direct"):
        self.mesh = mesh
        self.blocks = blocks if blocks is not None else core.build_blocks(mesh)
        missing = [r for r in mesh.region_names if r not in hyd_by_region]
        if missing:
            raise TransportError(f"no transport properties for regions {missing}")
        self.linear_method = linear_method
        self.props = [hyd_by_region[r] for r in mesh.region_names]
        self._mat_ids = [mesh.elem_region[b.elem_ids] for b in self.blocks]
        self.T_diff = self.props[0].T_diff
        self.clipped = 0.0      # cumulative negative mass removed

    def _coefficients(self, phi):
        """Per-block qp diffusivity from nodal damage."""
        Ds = []
        for ib, b in enumerate(self.blocks):
            D = np.empty((b.nel, b.nqp))
            ids = self._mat_ids[ib]
            phi_qp = (np.zeros((b.nel, b.nqp)) if phi is None
                      else np.einsum("qn,en->eq", b.N, phi[b.conn]))
            for mid in np.unique(ids):
                pr = self.props[mid]
                sel = ids == mid
                D[sel] = effective_diffusivity(pr.D0, phi_qp[sel],
                                               pr.k_d, pr.phi_th)
            Ds.append(D)
        return Ds

    def drift_velocity(self, sigma_h):
        """V_H/(R T) grad(sigma_h) at qps from the nodal stress field."""
        vels = []
        fac = self.props[0].V_H / (GAS_CONSTANT * self.T_diff)
        for b in self.blocks:
            grad = np.einsum("eqnd,en->eqd", b.grads, sigma_h[b.conn])
            vels.append(fac * grad)
        return vels

    def _system(self, C_old, dt, sigma_h, phi):
        mesh = self.mesh
        Ds = self._coefficients(phi)
        vels = (self.drift_velocity(sigma_h) if sigma_h is not None
                else [np.zeros((b.nel, b.nqp, 2)) for b in self.blocks])
        Ke_list, Fe_list, masks = [], [], []
        for ib, b in enumerate(self.blocks):
            active = mesh.active[b.elem_ids]
            ce_old = C_old[b.conn]
            Ke, Fe = fem.kernels.transport_batch(
                b.grads, b.detJw, b.N, ce_old, Ds[ib], vels[ib], dt,
                active.astype(float))
            Ke_list.append(Ke)
            Fe_list.append(Fe)
            masks.append(active)
        return core.scatter_add(self.blocks, Ke_list, Fe_list, 1, mesh.nnode,
                                active_masks=masks)

    def _pin(self, K, F, C_ref, dirichlet):
        """dirichlet: iterable of (node_ids, value) pairs."""
        K = K.tolil()
        touched = np.zeros(self.mesh.nnode, dtype=bool)
        for e in np.where(self.mesh.active)[0]:
            touched[self.mesh.element_nodes(e)] = True
        pin = {int(n): float(C_ref[n]) for n in np.where(~touched)[0]}
        for ids, val in (dirichlet or ()):
            for n in np.atleast_1d(ids):
                pin[int(n)] = float(val)
        for n, v in pin.items():
            K.rows[n] = [n]
            K.data[n] = [1.0]
            F[n] = v
        return K.tocsr(), F

    def step(self, C_old, dt, sigma_h=None, phi=None, dirichlet=None):
        """One implicit transport step; sealed boundaries conserve mass
        exactly up to the linear-solver tolerance."""
        K, F = self._system(C_old, dt, sigma_h, phi)
        K, F = self._pin(K, F, C_old, dirichlet)
        C = core.solve_linear(K, F, method=self.linear_method)
        neg = C < 0.0
        if np.any(neg):
            self.clipped += float(-self.mass_vector() @ np.where(neg, C, 0.0))
            worst = float(C.min())
            if worst < -1e-8 * max(float(C.max()), 1.0):
                logger.warning("transport clipped negative concentration %.3e", worst)
            C = np.where(neg, 0.0, C)
        return C

    def steady(self, sigma_h=None, phi=None, dirichlet=None):
        """Stationary balance of diffusion and drift (needs a Dirichlet set)."""
        if dirichlet is None:
            raise TransportError("steady transport needs boundary concentrations")
        zeros = np.zeros(self.mesh.nnode)
        K, F = self._system(zeros, np.inf, sigma_h, phi)
        K, F = self._pin(K, F, zeros, dirichlet)
        C = core.solve_linear(K, F)
        return np.maximum(C, 0.0)

    def mass_vector(self):
        """Row vector m with total dissolved mass = m . C (active domain)."""
        m = np.zeros(self.mesh.nnode)
        for b in self.blocks:
            act = self.mesh.active[b.elem_ids].astype(float)
            Me = np.einsum("qa,eq,qb->eab", b.N, b.detJw * act[:, None], b.N)
            np.add.at(m, b.conn, Me.sum(axis=2))
        return m

    def total_mass(self, C):
        return float(self.mass_vector() @ C)
