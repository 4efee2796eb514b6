"""Shared finite-element machinery.

Linear triangles (1-point rule) and bilinear quads (2x2 Gauss),
precomputed per-element-type basis blocks, affine constraint handling
(including rotated per-node directions), sparse assembly, linear solves,
Newton iteration, and quadrature-to-node field recovery.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_SQ3 = 1.0 / np.sqrt(3.0)

# 2x2 Gauss points on the bilinear reference square, tensor order.
QUAD4_QP = np.array([[-_SQ3, -_SQ3], [_SQ3, -_SQ3], [-_SQ3, _SQ3], [_SQ3, _SQ3]])
QUAD4_W = np.array([1.0, 1.0, 1.0, 1.0])
TRI3_QP = np.array([[1.0 / 3.0, 1.0 / 3.0]])
TRI3_W = np.array([0.5])

# 2-point Gauss on an edge (for boundary integrals).
EDGE_QP = np.array([-_SQ3, _SQ3])
EDGE_W = np.array([1.0, 1.0])


class AssemblyError(RuntimeError):
    pass


def shape_quad4(xi, eta):
    """Bilinear shape values and parametric gradients at one point."""
    N = 0.25 * np.array([
        (1 - xi) * (1 - eta), (1 + xi) * (1 - eta),
        (1 + xi) * (1 + eta), (1 - xi) * (1 + eta)])
    dN = 0.25 * np.array([
        [-(1 - eta), -(1 - xi)],
        [(1 - eta), -(1 + xi)],
        [(1 + eta), (1 + xi)],
        [-(1 + eta), (1 - xi)]])
    return N, dN


def shape_tri3(xi, eta):
    N = np.array([1 - xi - eta, xi, eta])
    dN = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    return N, dN


@dataclass
class ElementBlock:
    """Precomputed basis data for all elements of one type.

    Arrays cover every element of the type, active or not; the caller
    masks with the mesh activation flags at assembly time.
    """
    elem_ids: np.ndarray      # (nel,) indices into the mesh element list
    conn: np.ndarray          # (nel, nn)
    N: np.ndarray             # (nqp, nn) shape values (same for all elements)
    grads: np.ndarray         # (nel, nqp, nn, 2) physical gradients
    detJw: np.ndarray         # (nel, nqp)

    @property
    def nel(self):
        return self.conn.shape[0]

    @property
    def nqp(self):
        return self.N.shape[0]

    @property
    def nn(self):
        return self.conn.shape[1]

    def volumes(self):
        return self.detJw.sum(axis=1)


def build_blocks(mesh):
    """Basis blocks for a mesh, one per element type present."""
    blocks = []
    for nn, qp, w, shape in ((3, TRI3_QP, TRI3_W, shape_tri3),
                             (4, QUAD4_QP, QUAD4_W, shape_quad4)):
        ids = np.where(mesh.elem_nn == nn)[0]
        if ids.size == 0:
            continue
        conn = mesh.elem_conn[ids, :nn]
        nqp = qp.shape[0]
        Nmat = np.empty((nqp, nn))
        dN = np.empty((nqp, nn, 2))
        for q in range(nqp):
            Nmat[q], dN[q] = shape(qp[q, 0], qp[q, 1])
        coords = mesh.nodes[conn]                       # (nel, nn, 2)
        # J[q] = dN[q].T @ coords per element
        J = np.einsum("qna,end->eqad", dN, coords)      # (nel, nqp, 2, 2)
        detJ = J[..., 0, 0] * J[..., 1, 1] - J[..., 0, 1] * J[..., 1, 0]
        if np.any(detJ <= 0):
            bad = ids[np.any(detJ <= 0, axis=1)]
            raise AssemblyError(f"non-positive Jacobian in elements {bad[:5]}")
        Jinv = np.empty_like(J)
        Jinv[..., 0, 0] = J[..., 1, 1] / detJ
        Jinv[..., 1, 1] = J[..., 0, 0] / detJ
        Jinv[..., 0, 1] = -J[..., 0, 1] / detJ
        Jinv[..., 1, 0] = -J[..., 1, 0] / detJ
        grads = np.einsum("qna,eqad->eqnd", dN, Jinv)
        detJw = detJ * w[None, :]
        blocks.append(ElementBlock(ids, np.ascontiguousarray(conn, dtype=np.int64),
                                   Nmat, np.ascontiguousarray(grads),
                                   np.ascontiguousarray(detJw)))
    return blocks


def qp_zeros(blocks, tail=()):
    """One zero array per block, shaped (nel, nqp) + tail."""
    return [np.zeros((b.nel, b.nqp) + tuple(tail)) for b in blocks]


def qp_interpolate(blocks, nodal):
    """Nodal field sampled at quadrature points, per block."""
    return [np.einsum("qn,en->eq", b.N, nodal[b.conn]) for b in blocks]


def qp_gradient(blocks, nodal):
    """Gradient of a nodal field at quadrature points, per block."""
    return [np.einsum("eqnd,en->eqd", b.grads, nodal[b.conn]) for b in blocks]


# ---------------------------------------------------------------------------
# Constraints: u = T u_free + g
# ---------------------------------------------------------------------------

class Constraints:
    """Affine Dirichlet constraints, including rotated per-node directions.

    For a vector field, `fix_direction` prescribes the displacement
    component along a unit direction while leaving the orthogonal
    component free (used for radial-only boundary conditions).
    """

    def __init__(self, nnode, ndpn=1):
        self.nnode = nnode
        self.ndpn = ndpn
        self.fixed = {}       # dof -> value
        self.rotated = {}     # node -> (unit direction (2,), value, tangent_fixed)

    @property
    def ndof(self):
        return self.nnode * self.ndpn

    def fix(self, node, comp=0, value=0.0):
        node = np.atleast_1d(np.asarray(node, dtype=int))
        value = np.broadcast_to(np.asarray(value, dtype=float), node.shape)
        for n, v in zip(node, value):
            if int(n) in self.rotated:
                raise ValueError(f"node {n} already has a rotated constraint")
            self.fixed[int(n) * self.ndpn + comp] = float(v)

    def fix_direction(self, node, direction, value, tangent_value=None):
        if self.ndpn != 2:
            raise ValueError("directional constraints need a 2-component field")
        d = np.asarray(direction, dtype=float)
        d = d / np.linalg.norm(d)
        self.rotated[int(node)] = (d, float(value), tangent_value)

    def build(self):
        """Assemble (T, g) with orthonormal columns in T."""
        ndof = self.ndof
        rows, cols, vals = [], [], []
        g = np.zeros(ndof)
        free_col = 0
        for n in range(self.nnode):
            if n in self.rotated:
                d, v, tv = self.rotated[n]
                t = np.array([-d[1], d[0]])
                dofs = (n * 2, n * 2 + 1)
                g[dofs[0]] = v * d[0]
                g[dofs[1]] = v * d[1]
                if tv is None:
                    rows.extend(dofs)
                    cols.extend((free_col, free_col))
                    vals.extend((t[0], t[1]))
                    free_col += 1
                else:
                    g[dofs[0]] += tv * t[0]
                    g[dofs[1]] += tv * t[1]
                continue
            for c in range(self.ndpn):
                dof = n * self.ndpn + c
                if dof in self.fixed:
                    g[dof] = self.fixed[dof]
                else:
                    rows.append(dof)
                    cols.append(free_col)
                    vals.append(1.0)
                    free_col += 1
        T = sp.csr_matrix((vals, (rows, cols)), shape=(ndof, free_col))
        return T, g


def solve_linear(K, b, method="direct", tol=1e-12):
    """Sparse linear solve; CG falls back to the direct path."""
    if method == "cg":
        diag = K.diagonal()
        M = sp.diags(np.where(np.abs(diag) > 0, 1.0 / diag, 1.0))
        x, info = spla.cg(K.tocsr(), b, rtol=tol, maxiter=5000, M=M)
        if info == 0:
            return x
    return spla.spsolve(K.tocsc(), b)


def scatter_add(blocks, Ke_list, Fe_list, ndpn, nnode, active_masks=None):
    """Global sparse matrix and vector from per-element dense blocks.

    Deterministic: single ordered pass over blocks, duplicate entries
    summed by the CSR conversion in canonical order.
    """
    ndof = nnode * ndpn
    F = np.zeros(ndof)
    mats = []
    for ib, (b, Ke, Fe) in enumerate(zip(blocks, Ke_list, Fe_list)):
        if active_masks is not None:
            mask = active_masks[ib]
            if not np.all(mask):
                Ke = Ke * mask[:, None, None]
                Fe = Fe * mask[:, None]
        if not np.all(np.isfinite(Ke)) or not np.all(np.isfinite(Fe)):
            bad_k = np.where(~np.all(np.isfinite(Ke.reshape(b.nel, -1)), axis=1))[0]
            bad_f = np.where(~np.all(np.isfinite(Fe), axis=1))[0]
            bad = np.union1d(bad_k, bad_f)
            raise AssemblyError(
                f"non-finite element contribution, elements {b.elem_ids[bad][:5]}")
        if ndpn == 1:
            edof = b.conn
        else:
            edof = (b.conn[:, :, None] * ndpn + np.arange(ndpn)).reshape(b.nel, -1)
        ne = edof.shape[1]
        rows = np.repeat(edof, ne, axis=1).ravel()
        cols = np.tile(edof, (1, ne)).ravel()
        mats.append(sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(ndof, ndof)))
        np.add.at(F, edof.ravel(), Fe.ravel())
    if mats:
        K = sum(m.tocsr() for m in mats) if len(mats) > 1 else mats[0].tocsr()
    else:
        K = sp.csr_matrix((ndof, ndof))
    return K, F


def pin_untouched(K, F, touched_dofs, values=None):
    """Identity rows for dofs no active element reaches."""
    ndof = K.shape[0]
    mask = np.ones(ndof, dtype=bool)
    mask[touched_dofs] = False
    idx = np.where(mask)[0]
    if idx.size:
        K = K + sp.csr_matrix((np.ones(idx.size), (idx, idx)), shape=K.shape)
        F[idx] = values[idx] if values is not None else 0.0
    return K, F


class NewtonError(RuntimeError):
    """Non-convergence, carrying the last iterate for load-drop handling."""

    def __init__(self, message, x_last, res_norm, iterations):
        super().__init__(message)
        self.x_last = x_last
        self.res_norm = res_norm
        self.iterations = iterations


def newton_solve(residual_fn, jacobian_fn, x0, tol=1e-8, max_iter=25,
                 abs_tol=1e-12, linear_method="direct"):
    """Newton iteration on R(x) = 0.

    Convergence when ||R|| <= max(tol * ||R(x0)||, abs_tol). Raises
    NewtonError with the last iterate on failure.
    """
    x = np.array(x0, dtype=float)
    r = np.atleast_1d(np.asarray(residual_fn(x), dtype=float))
    r0 = np.linalg.norm(r)
    target = max(tol * r0, abs_tol)
    for it in range(max_iter):
        if np.linalg.norm(r) <= target:
            return x
        J = jacobian_fn(x)
        if sp.issparse(J):
            dx = solve_linear(J, -r, method=linear_method)
        else:
            dx = np.linalg.solve(np.atleast_2d(J), -r)
        x = x + dx
        r = np.atleast_1d(np.asarray(residual_fn(x), dtype=float))
        if not np.all(np.isfinite(r)):
            raise NewtonError("non-finite residual", x, np.inf, it + 1)
    rn = np.linalg.norm(r)
    if rn <= target:
        return x
    raise NewtonError(f"no convergence in {max_iter} iterations "
                      f"(|R| = {rn:.3e}, target {target:.3e})", x, rn, max_iter)


# ---------------------------------------------------------------------------
# Quadrature field recovery
# ---------------------------------------------------------------------------

def _extrapolation_matrix(block):
    """Map qp values to element node values.

    Quads invert the (square) shape value matrix, which amounts to
    evaluating the qp-based bilinear interpolant at the corners; the
    1-point triangle rule broadcasts the single value.
    """
    if block.nqp == block.nn:
        return np.linalg.inv(block.N)
    return np.ones((block.nn, block.nqp))


def extrapolate_to_nodes(blocks, qp_fields, nnode, active_masks=None):
    """Volume-weighted nodal recovery of a quadrature field."""
    num = np.zeros(nnode)
    den = np.zeros(nnode)
    for ib, (b, fq) in enumerate(zip(blocks, qp_fields)):
        ext = _extrapolation_matrix(b)
        vnode = np.einsum("nq,eq->en", ext, fq)
        w = b.volumes()
        if active_masks is not None:
            w = w * active_masks[ib]
        np.add.at(num, b.conn.ravel(), (vnode * w[:, None]).ravel())
        np.add.at(den, b.conn.ravel(), np.repeat(w, b.nn))
    out = np.zeros(nnode)
    nz = den > 0
    out[nz] = num[nz] / den[nz]
    return out
