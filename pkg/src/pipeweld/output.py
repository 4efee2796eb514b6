"""Artifact writers: legacy VTK snapshots, CSV tables, JSON reports.

Every numeric file carries comment lines naming the units and the config
hash so a rerun with the same config and seed is byte-identical. No
wallclock or hostname ever enters an output file; timing goes to the log.
"""
from __future__ import annotations

import json
import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

_VTK_CELL = {3: 5, 4: 9}        # tri, quad


def _fmt(x):
    """Stable shortest-ish float formatting shared by all writers."""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def write_vtk(path, mesh, point_data=None, cell_data=None,
              title="pipeweld snapshot"):
    """Legacy ASCII VTK 3.0 unstructured grid, mixed tri/quad.

    point_data/cell_data: {name: (n,) or (n, 2) array}; 2-column arrays
    are written as 3-vectors with a zero z component.
    """
    nn = mesh.nnode
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{title}\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {nn} double\n")
        for x, y in mesh.nodes:
            f.write(f"{_fmt(x)} {_fmt(y)} 0\n")
        sizes = mesh.elem_nn
        total = int(np.sum(sizes + 1))
        f.write(f"CELLS {mesh.nelem} {total}\n")
        for e in range(mesh.nelem):
            n = int(sizes[e])
            conn = " ".join(str(int(c)) for c in mesh.elem_conn[e, :n])
            f.write(f"{n} {conn}\n")
        f.write(f"CELL_TYPES {mesh.nelem}\n")
        for e in range(mesh.nelem):
            f.write(f"{_VTK_CELL[int(sizes[e])]}\n")
        for label, data, count in (("POINT_DATA", point_data, nn),
                                   ("CELL_DATA", cell_data, mesh.nelem)):
            if not data:
                continue
            f.write(f"{label} {count}\n")
            for name, arr in data.items():
                arr = np.asarray(arr)
                if arr.shape[0] != count:
                    raise ValueError(
                        f"{name}: {arr.shape[0]} values for {count} entries")
                if arr.ndim == 1:
                    f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                    for v in arr:
                        f.write(_fmt(v) + "\n")
                else:
                    f.write(f"VECTORS {name} double\n")
                    for row in arr:
                        z = _fmt(row[2]) if arr.shape[1] > 2 else "0"
                        f.write(f"{_fmt(row[0])} {_fmt(row[1])} {z}\n")
    logger.info("wrote %s", path)


def write_csv(path, columns, meta=()):
    """CSV with '#' metadata lines, a mandatory header row, '.' decimals.

    columns: list of (header, sequence) pairs; headers should carry units,
    e.g. 'p_MPa'. meta: extra comment lines (config hash, parameters).
    """
    if not columns:
        raise ValueError("no columns to write")
    length = len(columns[0][1])
    for name, col in columns:
        if len(col) != length:
            raise ValueError(f"column {name!r} length {len(col)} != {length}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in meta:
            f.write(f"# {line}\n")
        f.write(",".join(name for name, _ in columns) + "\n")
        for i in range(length):
            f.write(",".join(_fmt(col[i]) for _, col in columns) + "\n")
    logger.info("wrote %s (%d rows)", path, length)


def write_report(path, payload):
    """Deterministic JSON: sorted keys, no timestamps."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("wrote %s", path)


def ensure_outdir(path):
    os.makedirs(path, exist_ok=True)
    probe = os.path.join(path, ".write_probe")
    try:
        with open(probe, "w") as f:
            f.write("")
        os.remove(probe)
    except OSError as exc:
        raise ValueError(f"output directory not writable: {path}: {exc}")
    return path


# ---------------------------------------------------------------------------
# Standard artifact assemblies
# ---------------------------------------------------------------------------

def weld_history_csv(path, hist, probe_eps, meta=()):
    """Thermal march history with probe temperatures and plastic strain."""
    cols = [("t_s", hist["t"]), ("dt_s", hist["dt"]),
            ("phase", hist["phase"]), ("T_max_degC", hist["T_max"])]
    for k, arr in enumerate(hist["probes"]):
        cols.append((f"probe{k}_T_degC", arr))
    eps_t = {t: v for t, v in probe_eps}
    if eps_t:
        eps_col = [eps_t.get(t, "") for t in hist["t"]]
        # mech solve runs per accepted step, so the gaps are empty strings
        cols.append(("probe_eps_p", [
            _fmt(v) if v != "" else "" for v in eps_col]))
    rows = len(hist["t"])
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in meta:
            f.write(f"# {line}\n")
        f.write(",".join(name for name, _ in cols) + "\n")
        for i in range(rows):
            out = []
            for _, col in cols:
                v = col[i]
                out.append(v if isinstance(v, str) else _fmt(v))
            f.write(",".join(out) + "\n")
    logger.info("wrote %s (%d rows)", path, rows)


def increments_csv(path, increments, meta=()):
    """Pressure-march rows from a failure report."""
    names = [("p_MPa", "p"), ("max_phi", "max_phi"),
             ("max_epsp_base", "max_epsp_base"),
             ("mass_H_wppm_mm2", "mass_H")]
    cols = [(label, [row[key] for row in increments])
            for label, key in names]
    write_csv(path, cols, meta=meta)


def rcurve_csv(path, rows, meta=()):
    cols = [("K_MPa_sqrt_mm", [r[0] for r in rows]),
            ("J_N_per_mm", [r[1] for r in rows]),
            ("delta_a_mm", [r[2] for r in rows])]
    write_csv(path, cols, meta=meta)


def fields_vtk(path, mesh, u=None, phi=None, C=None, T=None,
               elem_scalars=None, title="pipeweld snapshot"):
    point = {}
    if u is not None:
        point["displacement_mm"] = np.asarray(u).reshape(-1, 2)
    if phi is not None:
        point["phase_field"] = phi
    if C is not None:
        point["hydrogen_wppm"] = C
    if T is not None:
        point["temperature_degC"] = T
    cell = dict(elem_scalars or {})
    cell.setdefault("active", mesh.active.astype(float))
    write_vtk(path, mesh, point_data=point or None, cell_data=cell,
              title=title)
