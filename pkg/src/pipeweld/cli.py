"""Command-line entry points.

Subcommands: weld, pressurize, rcurve, genmesh, screen. Each takes one
INI config file; --out and --seed override the [output] section. Exit
codes: 0 success, 2 config error, 3 solver failure, 4 validity warning
escalated by --strict.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from . import materials as matmod
from . import output as outmod
from .config import ConfigError
from .coupling import (CouplingError, PressureStage, WeldStage,
                       hoop_profile, region_materials)
from .fem import core
from .fracture import element_damage
from .hydrogen import TransportError
from .mech import MechError, load_qp_state, save_qp_state
from .mesh import save_mesh
from .rcurve import BoundaryLayer, RcurveError
from .thermal import ThermalError

logger = logging.getLogger("pipeweld")

_SOLVER_ERRORS = (CouplingError, MechError, ThermalError, TransportError,
                  RcurveError)


def _common_meta(cfg, seed):
    return [f"config {os.path.basename(cfg.path)} hash {cfg.hash()}",
            f"seed {seed}"]


def _probe_point(cfg, mesh):
    """Temperature/strain probe; default mid-thickness next to the groove."""
    px = cfg.getfloat("output", "probe_x", None)
    py = cfg.getfloat("output", "probe_y", None)
    if px is not None and py is not None:
        return np.array([px, py])
    r = np.hypot(mesh.nodes[:, 0], mesh.nodes[:, 1])
    r_mid = 0.5 * (r.min() + r.max())
    cap = cfg.getfloat("geometry", "groove_cap", 4.0)
    haz = cfg.getfloat("geometry", "haz_width", 1.5)
    dth = (0.5 * (cap + cfg.getfloat("geometry", "groove_root", 1.0))
           + haz / 2.0) / r_mid
    ang = np.pi / 2.0 - dth
    return r_mid * np.array([np.cos(ang), np.sin(ang)])


def cmd_genmesh(cfg, outdir, seed, strict):
    mesh = cfgmod.build_mesh(cfg)
    path = os.path.join(outdir, "mesh.txt")
    save_mesh(mesh, path)
    print(f"mesh: {mesh.nelem} elements, {mesh.nnode} nodes -> {path}")
    return 0


def cmd_weld(cfg, outdir, seed, strict):
    mesh = cfgmod.build_mesh(cfg)
    mats = cfgmod.build_materials(cfg, mesh)
    schedule = cfgmod.build_schedule(cfg, mesh)
    probe = _probe_point(cfg, mesh)
    stage = WeldStage(mesh, mats, schedule,
                      temp_probes=[probe], strain_probe=probe)
    T, hist = stage.run()
    meta = _common_meta(cfg, seed)
    meta.append(f"probe at ({probe[0]:.3f}, {probe[1]:.3f}) mm")
    state_path = os.path.join(outdir, "weld_state.txt")
    save_qp_state(state_path, stage.blocks, stage.fields,
                  header_lines=meta)
    outmod.weld_history_csv(os.path.join(outdir, "weld_history.csv"),
                            hist, stage.probe_eps, meta=meta)
    profile = hoop_profile(mesh, stage.blocks, stage.fields.sig)
    outmod.write_csv(os.path.join(outdir, "weld_hoop_profile.csv"),
                     [("r_mm", profile[:, 0]),
                      ("hoop_stress_MPa", profile[:, 1])], meta=meta)
    np.save(os.path.join(outdir, "weld_displacement.npy"), stage.u)
    outmod.fields_vtk(os.path.join(outdir, "weld_final.vtk"), mesh,
                      u=stage.u, T=T, title="weld stage final state")
    eps = [v for _, v in stage.probe_eps]
    outmod.write_report(os.path.join(outdir, "weld_report.json"), {
        "thermal_steps": int(len(hist["t"])),
        "final_max_T_degC": float(np.max(T)),
        "probe_point_mm": [float(probe[0]), float(probe[1])],
        "probe_peak_T_degC": float(np.max(hist["probes"][0])),
        "probe_eps_p_final": float(eps[-1]) if eps else 0.0,
        "state_file": state_path,
        "config_hash": cfg.hash(),
    })
    print(f"weld stage complete: {len(hist['t'])} thermal steps, "
          f"state -> {state_path}")
    return 0


def cmd_pressurize(cfg, outdir, seed, strict):
    mesh = cfgmod.build_mesh(cfg)
    scen = cfgmod.build_scenario(cfg, seed)
    mats = region_materials(mesh, scen.grade,
                            ell_scale=scen.ell_scale, gc_scale=scen.gc_scale)
    residual = None
    if scen.residual_state:
        state_file = cfg.get("scenario", "state_file")
        if not state_file:
            raise ConfigError(
                "scenario.residual_state is on but no state_file given; "
                "run the weld subcommand first and point state_file at "
                "its weld_state.txt")
        if not os.path.isfile(state_file):
            raise ConfigError(
                f"residual state file not found: {state_file}; "
                "run the weld subcommand first")
        blocks = core.build_blocks(mesh)
        residual = load_qp_state(state_file, blocks)
    vtk_every = cfg.getint("output", "vtk_every", 0)

    def snapshot(p, stage):
        if vtk_every and (len(stage_report_rows) % vtk_every == 0):
            outmod.fields_vtk(
                os.path.join(outdir, f"pressurize_p{p:07.3f}.vtk"),
                mesh, u=stage.u, phi=stage.phi, C=stage.C,
                title=f"pressurize p={p:g} MPa")
        stage_report_rows.append(p)

    stage_report_rows = []
    stage = PressureStage(mesh, mats, scen, residual=residual,
                          snapshot_cb=snapshot if vtk_every else None)
    report = stage.run()
    meta = _common_meta(cfg, seed)
    outmod.increments_csv(os.path.join(outdir, "pressurize_increments.csv"),
                          report.increments, meta=meta)
    outmod.fields_vtk(os.path.join(outdir, "pressurize_final.vtk"), mesh,
                      u=stage.u, phi=stage.phi, C=stage.C,
                      elem_scalars={
                          "damage": element_damage(mesh, stage.phi)},
                      title="pressurize final state")
    payload = {
        "p_max_MPa": report.p_max,
        "mode": report.mode,
        "p_y_analytic_MPa": report.p_y_analytic,
        "crack_path_mm": [[float(x), float(y)] for x, y in report.crack_path],
        "validity": list(report.validity),
        "increments": int(len(report.increments)),
        "config_hash": cfg.hash(),
        "seed": seed,
    }
    outmod.write_report(os.path.join(outdir, "pressurize_report.json"),
                        payload)
    print(f"mode={report.mode} p_max={report.p_max:g} MPa "
          f"(analytic p_y={report.p_y_analytic:g})")
    for note in report.validity:
        print(f"validity: {note}")
    if strict and report.validity:
        return 4
    return 0


def cmd_rcurve(cfg, outdir, seed, strict):
    spec = cfgmod.build_rcurve_spec(cfg)
    bl = BoundaryLayer(spec)
    rows = bl.run()
    j0 = bl.initiation_j(rows)
    meta = _common_meta(cfg, seed)
    meta.append(f"C_bulk {spec.C_bulk:g} wppm")
    outmod.rcurve_csv(os.path.join(outdir, "rcurve.csv"), rows, meta=meta)
    payload = {
        "J0_N_per_mm": None if j0 is None else float(j0),
        "Gc0_N_per_mm": float(spec.material.fracture.Gc0),
        "Gc_at_C_bulk_N_per_mm": float(
            matmod.degraded_Gc(spec.C_bulk, spec.material.fracture)),
        "C_bulk_wppm": float(spec.C_bulk),
        "points": int(len(rows)),
        "validity": list(bl.validity),
        "config_hash": cfg.hash(),
    }
    outmod.write_report(os.path.join(outdir, "rcurve_report.json"), payload)
    if j0 is None:
        print("no crack initiation within the load ramp")
    else:
        print(f"J0={j0:g} N/mm over {len(rows)} load steps")
    for note in bl.validity:
        print(f"validity: {note}")
    if strict and bl.validity:
        return 4
    return 0


def cmd_screen(cfg, outdir, seed, strict):
    """Degradation curves and analytic yield pressures per grade."""
    C_max = cfg.getfloat("screen", "C_max", 2.0)
    n = cfg.getint("screen", "n_points", 200)
    C = np.linspace(0.0, C_max, n)
    cols = [("C_wppm", C)]
    py_cols = []
    for grade in sorted(matmod.TOUGHNESS_FITS):
        J0, Jmin, q1, q2 = matmod.TOUGHNESS_FITS[grade]
        fit = matmod.FractureProps(Gc0=J0, Gc_min=Jmin, q1=q1, q2=q2,
                                   sigma_hat=1.0, ell=1.0)
        cols.append((f"JIc_{grade}_N_per_mm", matmod.degraded_Gc(C, fit)))
        mat = matmod.get_material(f"{grade}_base")
        p_y = matmod.yield_pressure(mat.mech.sigma_y_at(20.0), 7.5, 110.0)
        py_cols.append((f"p_y_{grade}_MPa", np.full(n, round(p_y, 1))))
    cols.extend(py_cols)
    meta = _common_meta(cfg, seed)
    meta.append("p_y from sigma_y*b/R with b=7.5 mm, R=110 mm, "
                "rounded to 0.1 MPa")
    outmod.write_csv(os.path.join(outdir, "screen.csv"), cols, meta=meta)
    print(f"screen table -> {os.path.join(outdir, 'screen.csv')}")
    return 0


_COMMANDS = {
    "weld": cmd_weld,
    "pressurize": cmd_pressurize,
    "rcurve": cmd_rcurve,
    "genmesh": cmd_genmesh,
    "screen": cmd_screen,
}


def build_parser():
    ap = argparse.ArgumentParser(
        prog="pipeweld",
        description="Plane-strain weld residual stress and "
                    "hydrogen-assisted fracture toolkit")
    ap.add_argument("-v", "--verbose", action="count", default=0,
                    help="-v info, -vv debug")
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("config", help="INI configuration file")
        p.add_argument("--out", default=None,
                       help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (overrides [output] seed, default 0)")
        p.add_argument("--strict", action="store_true",
                       help="exit 4 when validity warnings were issued")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = (logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)]
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = cfgmod.load_config(args.config)
        outdir = args.out or cfg.get("output", "dir", "out")
        outmod.ensure_outdir(outdir)
        seed = args.seed if args.seed is not None else cfg.getint(
            "output", "seed", 0)
        return _COMMANDS[args.subcommand](cfg, outdir, seed, args.strict)
    except ValueError as exc:
        # ConfigError, MeshError, MaterialError and writer validation
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except _SOLVER_ERRORS as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
