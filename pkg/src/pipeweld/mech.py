"""Quasi-static elastoplastic equilibrium on the active mesh.

Wraps the batched element kernels in a Newton loop over constrained
displacement dofs. Plastic state lives in per-block quadrature arrays and
is only committed by the caller once a step is accepted, so rejected load
increments can be retried from the previous converged state.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import fem
from .fem import core

logger = logging.getLogger(__name__)


class MechError(RuntimeError):
    def __init__(self, message, res_norm=None, iterations=None):
        super().__init__(message)
        self.res_norm = res_norm
        self.iterations = iterations


@dataclass
class MechState:
    """Committed plastic state per element block (Voigt xx, yy, zz, xy)."""
    eps_p: list
    acc: list

    @classmethod
    def zeros(cls, blocks):
        return cls(eps_p=[np.zeros((b.nel, b.nqp, 4)) for b in blocks],
                   acc=[np.zeros((b.nel, b.nqp)) for b in blocks])

    def copy(self):
        return MechState(eps_p=[a.copy() for a in self.eps_p],
                         acc=[a.copy() for a in self.acc])


@dataclass
class MechFields:
    """Quadrature outputs of one equilibrium solve (not yet committed)."""
    eps_p: list
    acc: list
    eps_e: list
    sig: list
    psi_plus: list
    psi_p: list
    wp_inc: list
    sig_h: list

    def to_state(self):
        return MechState(eps_p=[a.copy() for a in self.eps_p],
                         acc=[a.copy() for a in self.acc])


class MechSolver:
    """Newton solver for momentum balance with named-region materials."""

    def __init__(self, mesh, mats_by_region, blocks=None, kres=1e-7):
        self.mesh = mesh
        self.blocks = blocks if blocks is not None else core.build_blocks(mesh)
        missing = [r for r in mesh.region_names if r not in mats_by_region]
        if missing:
            raise MechError(f"no material for regions {missing}")
        self.mats = [mats_by_region[r] for r in mesh.region_names]
        self.kres = kres
        self._mat_ids = [mesh.elem_region[b.elem_ids] for b in self.blocks]
        self._nu = [np.array([self.mats[m].mech.nu for m in ids])
                    for ids in self._mat_ids]
        self._n_hard = [np.array([self.mats[m].mech.n_hard for m in ids])
                        for ids in self._mat_ids]
        self._beta = [np.array([self.mats[m].mech.beta for m in ids])
                      for ids in self._mat_ids]
        self._sy_room_scale = None   # optional per-qp strength override

    def set_strength_scale(self, scale_qp):
        """Per-qp multiplier on the yield stress (hardness-mapped welds)."""
        self._sy_room_scale = scale_qp

    def qp_props(self, T_qp=None):
        """Per-block (E, sigma_y) arrays at the given qp temperatures."""
        Es, sys_ = [], []
        for ib, b in enumerate(self.blocks):
            if T_qp is None:
                T = np.full((b.nel, b.nqp), self.mats[0].thermal.T0)
            else:
                T = T_qp[ib]
            E = np.empty((b.nel, b.nqp))
            sy = np.empty((b.nel, b.nqp))
            ids = self._mat_ids[ib]
            for mid in np.unique(ids):
                mat = self.mats[mid].mech
                sel = ids == mid
                E[sel] = mat.E_at(T[sel])
                sy[sel] = mat.sigma_y_at(T[sel])
            if self._sy_room_scale is not None:
                sy = sy * self._sy_room_scale[ib]
            Es.append(E)
            sys_.append(sy)
        return Es, sys_

    def assemble(self, u, state: MechState, eps_extra, phi=None, T_qp=None,
                 qp_props=None):
        """Tangent, internal force, and trial qp fields at displacement u."""
        mesh = self.mesh
        Ke_list, fe_list, masks = [], [], []
        out = MechFields([], [], [], [], [], [], [], [])
        Es, sys_ = qp_props if qp_props is not None else self.qp_props(T_qp)
        for ib, b in enumerate(self.blocks):
            ue = np.empty((b.nel, 2 * b.nn))
            ue[:, 0::2] = u[2 * b.conn]
            ue[:, 1::2] = u[2 * b.conn + 1]
            phie = None if phi is None else phi[b.conn]
            active = self.mesh.active[b.elem_ids]
            res = fem.kernels.mech_batch(
                b.grads, b.detJw, b.N, ue, eps_extra[ib],
                state.eps_p[ib], state.acc[ib], phie,
                Es[ib], sys_[ib], self._nu[ib], self._n_hard[ib],
                self._beta[ib], self.kres, active)
            Ke, fint, eps_p, acc, eps_e, sig, psi_plus, psi_p, wp_inc, sig_h = res
            Ke_list.append(Ke)
            fe_list.append(fint)
            masks.append(active)
            out.eps_p.append(eps_p)
            out.acc.append(acc)
            out.eps_e.append(eps_e)
            out.sig.append(sig)
            out.psi_plus.append(psi_plus)
            out.psi_p.append(psi_p)
            out.wp_inc.append(wp_inc)
            out.sig_h.append(sig_h)
        K, F = core.scatter_add(self.blocks, Ke_list, fe_list, 2, mesh.nnode,
                                active_masks=masks)
        return K, F, out

    def solve(self, constraints: core.Constraints, state: MechState, eps_extra,
              phi=None, T_qp=None, u_init=None, tol=1e-9, abs_tol=1e-6,
              max_iter=40):
        """Newton iteration to equilibrium; returns (u, MechFields).

        Raises MechError if the residual stalls or diverges; committed
        state is untouched either way.
        """
        Tc, g = constraints.build()
        ndof = 2 * self.mesh.nnode
        if u_init is None:
            u = g.copy()
        else:
            uf = Tc.T.dot(u_init - g)
            u = Tc.dot(uf) + g
        qp_props = self.qp_props(T_qp)
        K, F, fields = self.assemble(u, state, eps_extra, phi=phi,
                                     qp_props=qp_props)
        r = Tc.T.dot(F)
        rn = float(np.linalg.norm(r))
        r0 = max(rn, abs_tol)
        for it in range(max_iter):
            if rn <= max(tol * r0, abs_tol):
                return u, fields
            if not np.isfinite(rn) or rn > 1e8 * r0:
                raise MechError(f"equilibrium diverged (|r|={rn:.3e})",
                                res_norm=rn, iterations=it)
            Kr = Tc.T.dot(K.dot(Tc)).tocsc()
            try:
                duf = core.solve_linear(Kr, -r)
            except Exception as exc:
                raise MechError(f"linear solve failed: {exc}") from exc
            # backtrack when the full correction overshoots (return-map
            # branch flips can make plain Newton cycle)
            alpha = 1.0
            for _ in range(6):
                u_try = u + alpha * Tc.dot(duf)
                K2, F2, fields2 = self.assemble(u_try, state, eps_extra,
                                                phi=phi, qp_props=qp_props)
                rn2 = float(np.linalg.norm(Tc.T.dot(F2)))
                if rn2 < rn or rn2 <= max(tol * r0, abs_tol):
                    break
                alpha *= 0.5
            u = u_try
            K, F, fields = K2, F2, fields2
            r = Tc.T.dot(F)
            rn = rn2
        raise MechError(f"equilibrium not converged in {max_iter} iterations "
                        f"(|r|={rn:.3e})", res_norm=rn, iterations=max_iter)


# ---------------------------------------------------------------------------
# Quadrature-state files
# ---------------------------------------------------------------------------

_STATE_COLS = ("eps_p_xx", "eps_p_yy", "eps_p_zz", "eps_p_xy", "acc",
               "eps_e_xx", "eps_e_yy", "eps_e_zz", "eps_e_xy")


def save_qp_state(path, blocks, fields: MechFields, header_lines=()):
    """Write committed per-quadrature state as plain text."""
    with open(path, "w", encoding="utf-8") as f:
        f.write("PIPEWELD-STATE v1\n")
        for line in header_lines:
            f.write(f"# {line}\n")
        nrows = sum(b.nel * b.nqp for b in blocks)
        f.write(f"QPDATA {nrows}\n")
        f.write("# elem qp " + " ".join(_STATE_COLS) + "\n")
        for ib, b in enumerate(blocks):
            ep = fields.eps_p[ib]
            ac = fields.acc[ib]
            ee = fields.eps_e[ib]
            for i, eid in enumerate(b.elem_ids):
                for q in range(b.nqp):
                    vals = [*ep[i, q], ac[i, q], *ee[i, q]]
                    f.write(f"{eid} {q} " + " ".join(f"{v!r}" for v in map(float, vals)) + "\n")


def load_qp_state(path, blocks):
    """Read a state file back onto matching blocks.

    Returns (eps_p, acc, eps_e) per-block lists. Every (element, qp) of the
    blocks must be present exactly once.
    """
    table = {}
    with open(path, "r", encoding="utf-8") as f:
        head = f.readline().strip()
        if head != "PIPEWELD-STATE v1":
            raise MechError(f"{path}: bad state header {head!r}")
        nrows = None
        for raw in f:
            line = raw.split("#")[0].strip()
            if not line:
                continue
            tok = line.split()
            if tok[0] == "QPDATA":
                nrows = int(tok[1])
                continue
            if len(tok) != 2 + len(_STATE_COLS):
                raise MechError(f"{path}: malformed state row {line!r}")
            key = (int(tok[0]), int(tok[1]))
            if key in table:
                raise MechError(f"{path}: duplicate state row for {key}")
            table[key] = np.array([float(v) for v in tok[2:]])
    if nrows is not None and len(table) != nrows:
        raise MechError(f"{path}: expected {nrows} rows, found {len(table)}")
    eps_p, acc, eps_e = [], [], []
    for b in blocks:
        ep = np.zeros((b.nel, b.nqp, 4))
        ac = np.zeros((b.nel, b.nqp))
        ee = np.zeros((b.nel, b.nqp, 4))
        for i, eid in enumerate(b.elem_ids):
            for q in range(b.nqp):
                row = table.pop((int(eid), q), None)
                if row is None:
                    raise MechError(f"{path}: missing state for element {eid} qp {q}")
                ep[i, q] = row[0:4]
                ac[i, q] = row[4]
                ee[i, q] = row[5:9]
        eps_p.append(ep)
        acc.append(ac)
        eps_e.append(ee)
    if table:
        raise MechError(f"{path}: {len(table)} state rows do not match the mesh")
    return eps_p, acc, eps_e
