"""2D mesh container, plain-text mesh format, and the pipe-section generator.

The mesh is immutable after load except for the per-element activation
flags used for staged weld-bead deposition.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


class MeshError(ValueError):
    pass


class Mesh2D:
    """Nodes, elements, named regions and boundary sets, activation state.

    Elements are 3-node triangles or 4-node quads, stored in a padded
    connectivity table (-1 in unused slots). Each element belongs to
    exactly one region. Local edge i of an element runs from local node i
    to local node (i+1) % nn.
    """

    def __init__(self, nodes, elem_conn, elem_nn, elem_region_names,
                 nodesets=None, edgesets=None):
        self.nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
        self.elem_conn = np.asarray(elem_conn, dtype=np.int64).reshape(-1, 4)
        self.elem_nn = np.asarray(elem_nn, dtype=np.int64)
        self.region_names = sorted(set(elem_region_names))
        name_to_idx = {n: i for i, n in enumerate(self.region_names)}
        self.elem_region = np.array([name_to_idx[n] for n in elem_region_names],
                                    dtype=np.int64)
        self.nodesets = {k: np.asarray(v, dtype=np.int64) for k, v in (nodesets or {}).items()}
        self.edgesets = {k: np.asarray(v, dtype=np.int64).reshape(-1, 2)
                         for k, v in (edgesets or {}).items()}
        self.active = np.ones(self.nelem, dtype=bool)
        self._validate()

    @property
    def nnode(self):
        return self.nodes.shape[0]

    @property
    def nelem(self):
        return self.elem_conn.shape[0]

    def region_ids(self, name):
        if name not in self.region_names:
            raise MeshError(f"unknown region {name!r}; have {self.region_names}")
        return np.where(self.elem_region == self.region_names.index(name))[0]

    def element_nodes(self, e):
        return self.elem_conn[e, : self.elem_nn[e]]

    def edge_nodes(self, e, local_edge):
        nn = self.elem_nn[e]
        if not 0 <= local_edge < nn:
            raise MeshError(f"element {e} has no local edge {local_edge}")
        a = self.elem_conn[e, local_edge]
        b = self.elem_conn[e, (local_edge + 1) % nn]
        return a, b

    def centroids(self):
        c = np.zeros((self.nelem, 2))
        for nn in (3, 4):
            m = self.elem_nn == nn
            if np.any(m):
                c[m] = self.nodes[self.elem_conn[m, :nn]].mean(axis=1)
        return c

    # -- validation ------------------------------------------------------

    def _validate(self):
        if self.elem_conn.shape[0] != self.elem_nn.shape[0]:
            raise MeshError("connectivity/type length mismatch")
        for e in range(self.nelem):
            nn = self.elem_nn[e]
            if nn not in (3, 4):
                raise MeshError(f"element {e}: unsupported node count {nn}")
            conn = self.elem_conn[e, :nn]
            if np.any(conn < 0) or np.any(conn >= self.nnode):
                raise MeshError(f"element {e}: dangling node index")
            if len(set(conn.tolist())) != nn:
                raise MeshError(f"element {e}: repeated node")
        self._orient()
        for name, ids in self.nodesets.items():
            if ids.size and (ids.min() < 0 or ids.max() >= self.nnode):
                raise MeshError(f"nodeset {name!r}: dangling node index")
        for name, pairs in self.edgesets.items():
            for e, le in pairs:
                self.edge_nodes(int(e), int(le))

    def _orient(self):
        """Flip any clockwise element; reject degenerate ones."""
        scale = max(np.ptp(self.nodes[:, 0]), np.ptp(self.nodes[:, 1]), 1.0)
        tol = 1e-12 * scale * scale
        for e in range(self.nelem):
            nn = self.elem_nn[e]
            conn = self.elem_conn[e, :nn]
            xy = self.nodes[conn]
            area = 0.5 * np.sum(xy[:, 0] * np.roll(xy[:, 1], -1)
                                - np.roll(xy[:, 0], -1) * xy[:, 1])
            if abs(area) <= tol:
                raise MeshError(f"element {e}: zero-area element")
            if area < 0:
                self.elem_conn[e, :nn] = conn[::-1]


# ---------------------------------------------------------------------------
# Activation
# ---------------------------------------------------------------------------

def activate(mesh: Mesh2D, region):
    """Mark a region's elements active (idempotent)."""
    mesh.active[mesh.region_ids(region)] = True


def deactivate(mesh: Mesh2D, region):
    mesh.active[mesh.region_ids(region)] = False


def active_nodes(mesh: Mesh2D):
    """Nodes referenced by at least one active element."""
    out = np.zeros(mesh.nnode, dtype=bool)
    for e in np.where(mesh.active)[0]:
        out[mesh.element_nodes(e)] = True
    return np.where(out)[0]


def characteristic_length(mesh: Mesh2D, region):
    """Max element edge length within a region."""
    ids = mesh.region_ids(region)
    if ids.size == 0:
        raise MeshError(f"region {region!r} is empty")
    best = 0.0
    for e in ids:
        nn = mesh.elem_nn[e]
        xy = mesh.nodes[mesh.elem_conn[e, :nn]]
        d = np.linalg.norm(xy - np.roll(xy, -1, axis=0), axis=1)
        best = max(best, d.max())
    return best


# ---------------------------------------------------------------------------
# Topology helpers
# ---------------------------------------------------------------------------

def _edge_map(mesh: Mesh2D, elems=None):
    """Map sorted node pair -> list of (element, local_edge)."""
    edges = {}
    if elems is None:
        elems = range(mesh.nelem)
    for e in elems:
        nn = mesh.elem_nn[e]
        for le in range(nn):
            a, b = mesh.edge_nodes(e, le)
            edges.setdefault((min(a, b), max(a, b)), []).append((e, le))
    return edges

def boundary_edges_of(mesh: Mesh2D, elems):
    """Edges owned by exactly one element of the given set."""
    out = []
    for owners in _edge_map(mesh, elems).values():
        if len(owners) == 1:
            out.append(owners[0])
    out.sort()
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def active_boundary_edges(mesh: Mesh2D):
    """Exterior edges of the active domain (weld cavity faces included)."""
    return boundary_edges_of(mesh, np.where(mesh.active)[0])


def element_adjacency(mesh: Mesh2D):
    """List of edge-sharing neighbour element ids per element."""
    nbr = [[] for _ in range(mesh.nelem)]
    for owners in _edge_map(mesh).values():
        if len(owners) == 2:
            (e1, _), (e2, _) = owners
            nbr[e1].append(e2)
            nbr[e2].append(e1)
        elif len(owners) > 2:
            raise MeshError("non-manifold edge")
    return nbr


def interface_nodes(mesh: Mesh2D, region_elems, other_elems):
    """Nodes shared between two element sets (e.g. bead vs active domain)."""
    a = set()
    for e in region_elems:
        a.update(mesh.element_nodes(e).tolist())
    b = set()
    for e in other_elems:
        b.update(mesh.element_nodes(e).tolist())
    return np.array(sorted(a & b), dtype=np.int64)


def interface_edges(mesh: Mesh2D, inner_elems, facing_elems):
    """Edges of `inner_elems` shared with `facing_elems`."""
    inner = _edge_map(mesh, inner_elems)
    facing = _edge_map(mesh, facing_elems)
    out = []
    for key, owners in inner.items():
        if key in facing:
            out.append(owners[0])
    out.sort()
    return np.array(out, dtype=np.int64).reshape(-1, 2)


# ---------------------------------------------------------------------------
# Text format
# ---------------------------------------------------------------------------

def _tokens(path):
    with open(path, "r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            line = line.split("#")[0].strip()
            if line:
                yield ln, line.split()


def load_mesh(path):
    """Parse the plain-text mesh format; fully validated on return."""
    it = _tokens(path)

    def need(what):
        try:
            return next(it)
        except StopIteration:
            raise MeshError(f"{path}: unexpected end of file, expected {what}") from None

    ln, tok = need("header")
    if tok != ["MESH2D", "v1"]:
        raise MeshError(f"{path}:{ln}: bad header, expected 'MESH2D v1'")

    ln, tok = need("NODES")
    if tok[0] != "NODES" or len(tok) != 2:
        raise MeshError(f"{path}:{ln}: expected 'NODES n'")
    nnode = int(tok[1])
    ids = {}
    nodes = np.empty((nnode, 2))
    for i in range(nnode):
        ln, tok = need("node line")
        if len(tok) != 3:
            raise MeshError(f"{path}:{ln}: node line needs 'id x y'")
        nid = int(tok[0])
        if nid in ids:
            raise MeshError(f"{path}:{ln}: duplicate node id {nid}")
        ids[nid] = i
        nodes[i] = (float(tok[1]), float(tok[2]))

    ln, tok = need("ELEMENTS")
    if tok[0] != "ELEMENTS" or len(tok) != 2:
        raise MeshError(f"{path}:{ln}: expected 'ELEMENTS m'")
    nelem = int(tok[1])
    conn = -np.ones((nelem, 4), dtype=np.int64)
    elem_nn = np.empty(nelem, dtype=np.int64)
    regions = []
    eids = {}
    for i in range(nelem):
        ln, tok = need("element line")
        if len(tok) < 3 or tok[1] not in ("n3", "n4"):
            raise MeshError(f"{path}:{ln}: element line needs 'id type(n3|n4) nodes... region'")
        nn = 3 if tok[1] == "n3" else 4
        if len(tok) != 3 + nn:
            raise MeshError(f"{path}:{ln}: element needs {nn} nodes and a region")
        eid = int(tok[0])
        if eid in eids:
            raise MeshError(f"{path}:{ln}: duplicate element id {eid}")
        eids[eid] = i
        elem_nn[i] = nn
        for k in range(nn):
            raw = int(tok[2 + k])
            if raw not in ids:
                raise MeshError(f"{path}:{ln}: dangling node index {raw}")
            conn[i, k] = ids[raw]
        regions.append(tok[2 + nn])

    nodesets = {}
    edgesets = {}
    for ln, tok in it:
        kind = tok[0]
        if kind not in ("NODESET", "EDGESET") or len(tok) != 3:
            raise MeshError(f"{path}:{ln}: expected 'NODESET|EDGESET name k'")
        name, count = tok[1], int(tok[2])
        if name in (nodesets if kind == "NODESET" else edgesets):
            raise MeshError(f"{path}:{ln}: duplicate {kind} name {name!r}")
        if kind == "NODESET":
            members = []
            while len(members) < count:
                ln2, tok2 = need("nodeset ids")
                for t in tok2:
                    raw = int(t)
                    if raw not in ids:
                        raise MeshError(f"{path}:{ln2}: dangling node index {raw}")
                    members.append(ids[raw])
            nodesets[name] = np.array(members, dtype=np.int64)
        else:
            members = []
            for _ in range(count):
                ln2, tok2 = need("edge pair")
                if len(tok2) != 2:
                    raise MeshError(f"{path}:{ln2}: edge line needs 'elem localEdge'")
                raw = int(tok2[0])
                if raw not in eids:
                    raise MeshError(f"{path}:{ln2}: unknown element id {raw}")
                members.append((eids[raw], int(tok2[1])))
            edgesets[name] = np.array(members, dtype=np.int64).reshape(-1, 2)

    return Mesh2D(nodes, conn, elem_nn, regions, nodesets, edgesets)


def save_mesh(mesh: Mesh2D, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("MESH2D v1\n")
        f.write(f"NODES {mesh.nnode}\n")
        for i, (x, y) in enumerate(mesh.nodes):
            f.write(f"{i} {float(x)!r} {float(y)!r}\n")
        f.write(f"ELEMENTS {mesh.nelem}\n")
        for e in range(mesh.nelem):
            nn = mesh.elem_nn[e]
            conn = " ".join(str(v) for v in mesh.elem_conn[e, :nn])
            region = mesh.region_names[mesh.elem_region[e]]
            f.write(f"{e} n{nn} {conn} {region}\n")
        for name in sorted(mesh.nodesets):
            ids = mesh.nodesets[name]
            f.write(f"NODESET {name} {ids.size}\n")
            for start in range(0, ids.size, 12):
                f.write(" ".join(str(v) for v in ids[start:start + 12]) + "\n")
        for name in sorted(mesh.edgesets):
            pairs = mesh.edgesets[name]
            f.write(f"EDGESET {name} {pairs.shape[0]}\n")
            for e, le in pairs:
                f.write(f"{e} {le}\n")


# ---------------------------------------------------------------------------
# Rectangle generator
# ---------------------------------------------------------------------------

def generate_rectangle(x_breaks, y_breaks, region="domain") -> Mesh2D:
    """Structured quad mesh from coordinate break arrays.

    Emits boundary nodesets/edgesets named left, right, bottom, top.
    """
    x = np.asarray(x_breaks, dtype=float)
    y = np.asarray(y_breaks, dtype=float)
    if x.size < 2 or y.size < 2:
        raise MeshError("need at least two breaks per direction")
    if np.any(np.diff(x) <= 0) or np.any(np.diff(y) <= 0):
        raise MeshError("break arrays must be strictly increasing")
    nx, ny = x.size, y.size
    X, Y = np.meshgrid(x, y)                      # row j = constant y
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    def nid(i, j):
        return j * nx + i

    conn = np.empty(((nx - 1) * (ny - 1), 4), dtype=np.int64)
    e = 0
    for j in range(ny - 1):
        for i in range(nx - 1):
            conn[e] = (nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1))
            e += 1

    def eid(i, j):
        return j * (nx - 1) + i

    nodesets = {
        "left": np.array([nid(0, j) for j in range(ny)], dtype=np.int64),
        "right": np.array([nid(nx - 1, j) for j in range(ny)], dtype=np.int64),
        "bottom": np.array([nid(i, 0) for i in range(nx)], dtype=np.int64),
        "top": np.array([nid(i, ny - 1) for i in range(nx)], dtype=np.int64),
    }
    edgesets = {
        "bottom": np.array([(eid(i, 0), 0) for i in range(nx - 1)], dtype=np.int64),
        "top": np.array([(eid(i, ny - 2), 2) for i in range(nx - 1)], dtype=np.int64),
        "left": np.array([(eid(0, j), 3) for j in range(ny - 1)], dtype=np.int64),
        "right": np.array([(eid(nx - 2, j), 1) for j in range(ny - 1)], dtype=np.int64),
    }
    elem_nn = np.full(conn.shape[0], 4, dtype=np.int64)
    return Mesh2D(nodes, conn, elem_nn, [region] * conn.shape[0],
                  nodesets, edgesets)


# ---------------------------------------------------------------------------
# Pipe-section generator
# ---------------------------------------------------------------------------

@dataclass
class PipeSectionSpec:
    """Parametric seam-welded pipe section (full annulus, weld at top).

    The V-groove spans the full wall; its half-width grows linearly from
    `groove_root` at the bore to `groove_cap` at the outer surface.
    Groove elements are split radially into `n_passes` bead regions.
    """
    R: float = 110.0
    b: float = 7.5
    n_passes: int = 2
    n_r: int = 12               # radial element rows
    n_groove: int = 6           # angular columns across the groove
    groove_root: float = 1.0    # mm, half-width at inner surface
    groove_cap: float = 4.0     # mm, half-width at outer surface
    haz_width: float = 1.5      # mm, band outside the groove walls
    window_arc: float = 9.0     # mm, finely meshed arc beyond the groove
    h_fine: float = 0.7         # mm, angular spacing in the fine window
    h_coarse: float = 3.0       # mm, angular spacing far from the weld
    grading: float = 1.2

    def __post_init__(self):
        if self.R <= 0 or self.b <= 0:
            raise MeshError("R and b must be positive")
        if self.groove_cap >= 0.5 * np.pi * self.R:
            raise MeshError("groove wider than the pipe")
        if self.n_passes < 1 or self.n_r < self.n_passes:
            raise MeshError("need at least one radial row per pass")


def _graded_line(L, h_fine, window, h_coarse, ratio):
    """Symmetric 1D point set on [0, L]: fine near both ends, coarse middle."""
    pts = [0.0]
    h = h_fine
    while pts[-1] < 0.5 * L:
        if pts[-1] >= window:
            h = min(h * ratio, h_coarse)
        nxt = pts[-1] + h
        if nxt >= 0.5 * L - 0.25 * h:
            break
        pts.append(nxt)
    half = np.array(pts)
    other = L - half[::-1]
    mid_gap = other[0] - half[-1]
    if mid_gap > 1.5 * h_coarse:
        n_mid = int(round(mid_gap / h_coarse))
        mid = np.linspace(half[-1], other[0], n_mid + 1)[1:-1]
        return np.concatenate([half, mid, other])
    return np.concatenate([half, other])


def generate_pipe_section(spec: PipeSectionSpec) -> Mesh2D:
    """Structured polar mesh of the welded ring with groove/HAZ regions."""
    R_in, b = spec.R, spec.b
    n_r, n_g = spec.n_r, spec.n_groove
    radii = R_in + b * np.arange(n_r + 1) / n_r

    def half_width(r):
        return spec.groove_root + (spec.groove_cap - spec.groove_root) * (r - R_in) / b

    gamma = half_width(radii) / radii          # groove half-angle per row

    # outside-arc parameterization shared by all rows
    r_mid = R_in + 0.5 * b
    g_mid = half_width(r_mid) / r_mid
    L_out = (2.0 * np.pi - 2.0 * g_mid) * r_mid
    s = _graded_line(L_out, spec.h_fine, spec.window_arc, spec.h_coarse, spec.grading)
    t = s / L_out                              # 0 at groove right wall, 1 at left wall
    n_cols = n_g + (t.size - 1)

    nodes = np.empty(((n_r + 1) * n_cols, 2))
    for j, (r, g) in enumerate(zip(radii, gamma)):
        th = np.empty(n_cols)
        th[: n_g + 1] = np.pi / 2 - g + 2.0 * g * np.arange(n_g + 1) / n_g
        th[n_g + 1:] = np.pi / 2 + g + t[1:-1] * (2.0 * np.pi - 2.0 * g)
        base = j * n_cols
        nodes[base: base + n_cols, 0] = r * np.cos(th)
        nodes[base: base + n_cols, 1] = r * np.sin(th)

    conn = np.empty((n_r * n_cols, 4), dtype=np.int64)
    regions = []
    pass_rows = np.array_split(np.arange(n_r), spec.n_passes)
    row_pass = np.empty(n_r, dtype=int)
    for k, rows in enumerate(pass_rows):
        row_pass[rows] = k + 1

    e = 0
    for j in range(n_r):
        for c in range(n_cols):
            c1 = (c + 1) % n_cols
            conn[e] = (j * n_cols + c, j * n_cols + c1,
                       (j + 1) * n_cols + c1, (j + 1) * n_cols + c)
            if c < n_g:
                regions.append(f"weld_pass_{row_pass[j]}")
            else:
                xy = nodes[conn[e]].mean(axis=0)
                r_c = np.hypot(xy[0], xy[1])
                th_c = np.arctan2(xy[1], xy[0]) % (2.0 * np.pi)
                g_c = half_width(r_c) / r_c
                d_right = (th_c - (np.pi / 2 + g_c)) % (2.0 * np.pi)
                d_left = ((np.pi / 2 - g_c) - th_c) % (2.0 * np.pi)
                arc = r_c * min(d_right, d_left)
                regions.append("haz" if arc <= spec.haz_width else "base")
            e += 1

    nodesets = {
        "inner_surface": np.arange(n_cols, dtype=np.int64),
        "outer_surface": np.arange(n_r * n_cols, (n_r + 1) * n_cols, dtype=np.int64),
    }
    edgesets = {
        "inner_surface": np.array([(c, 0) for c in range(n_cols)], dtype=np.int64),
        "outer_surface": np.array([((n_r - 1) * n_cols + c, 2) for c in range(n_cols)],
                                  dtype=np.int64),
    }

    elem_nn = np.full(n_r * n_cols, 4, dtype=np.int64)
    mesh = Mesh2D(nodes, conn, elem_nn, regions, nodesets, edgesets)

    # torch node sets: bead-k nodes shared with the domain active before pass k
    pre = list(mesh.region_ids("base")) + list(mesh.region_ids("haz"))
    for k in range(1, spec.n_passes + 1):
        bead = mesh.region_ids(f"weld_pass_{k}")
        mesh.nodesets[f"torch_pass_{k}"] = interface_nodes(mesh, bead, pre)
        mesh.edgesets[f"weld_cavity_pass_{k}"] = interface_edges(mesh, pre, bead)
        pre += list(bead)
    # grid layout kept in memory for structured queries (not serialized)
    mesh.structure = {"n_r": n_r, "n_cols": n_cols, "n_groove": n_g}
    return mesh
