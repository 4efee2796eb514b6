"""INI run configuration: parsing, validation, canonical hashing.

One flat INI file describes a run; each subcommand reads the sections
it needs and ignores the rest. Unknown keys are rejected so typos fail
loudly instead of silently using a default.
"""
from __future__ import annotations

import configparser
import hashlib
import logging
import os
from dataclasses import dataclass, field, replace

from . import materials as matmod
from .coupling import DefectSpec, PorositySpec, PressureSchedule, Scenario
from .mesh import Mesh2D, PipeSectionSpec, generate_pipe_section, load_mesh
from .rcurve import BoundaryLayerSpec
from .thermal import WeldPass, WeldSchedule

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


# Recognized keys per section, with defaults applied downstream.
_SCHEMA = {
    "geometry": {
        "mesh_file", "r", "b", "n_passes", "n_r", "n_groove",
        "groove_root", "groove_cap", "haz_width", "window_arc",
        "h_fine", "h_coarse", "grading",
    },
    "materials": {
        "grade", "ell_scale", "gc_scale", "alpha_scale",
        "hardness_map", "hardness_hv", "hardness_sigma_y",
        "hardness_gc0", "hardness_d0",
    },
    "schedule": {
        "torch_time", "dwell_time", "torch_temp", "cooldown_tol",
        "dt0_torch", "dtmax_torch", "dt0_dwell", "dtmax_dwell",
        "dt0_cool", "dtmax_cool", "growth", "max_halvings",
    },
    "scenario": {
        "residual_state", "state_file", "rate", "p_cap", "dp",
        "porosity_f_v", "porosity_d_v", "porosity_seed", "defects",
        "yield_tol", "phi_crack", "reequilibrate",
    },
    "screen": {"c_max", "n_points"},
    "rcurve": {
        "environment", "c_bulk", "transport", "r_bl", "h_over_ell",
        "band_over_ell", "n_steps", "j_max_over_gc", "k_rate", "da_max",
        "init_bands",
    },
    "solver": {"stagger_tol", "stagger_max"},
    "output": {"dir", "seed", "vtk_every", "probe_x", "probe_y"},
}


@dataclass
class RunConfig:
    """Parsed, schema-checked configuration plus its canonical hash."""
    path: str
    values: dict = field(default_factory=dict)   # {(section, key): str}

    def get(self, section, key, default=None):
        # configparser lowercases option names; accept either spelling
        return self.values.get((section, key.lower()), default)

    def getfloat(self, section, key, default=None):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(
                f"[{section}] {key} = {raw!r} is not a number") from None

    def getint(self, section, key, default=None):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(
                f"[{section}] {key} = {raw!r} is not an integer") from None

    def getbool(self, section, key, default=None):
        raw = self.get(section, key)
        if raw is None:
            return default
        low = raw.strip().lower()
        if low in ("1", "on", "true", "yes"):
            return True
        if low in ("0", "off", "false", "no"):
            return False
        raise ConfigError(f"[{section}] {key} = {raw!r} is not a boolean")

    def hash(self):
        """12-hex digest of the canonicalized content (sorted key=value)."""
        lines = [f"{s}.{k}={v.strip()}"
                 for (s, k), v in sorted(self.values.items())]
        blob = "\n".join(lines).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]


def load_config(path):
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as f:
            parser.read_file(f)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    cfg = RunConfig(path=path)
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(
                f"{path}: unknown section [{section}]; "
                f"expected one of {sorted(_SCHEMA)}")
        for key, value in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"{path}: unknown key {key!r} in [{section}]; "
                    f"expected one of {sorted(_SCHEMA[section])}")
            cfg.values[(section, key)] = value
    return cfg


# ---------------------------------------------------------------------------
# Builders: config sections to domain objects
# ---------------------------------------------------------------------------

def build_mesh(cfg: RunConfig) -> Mesh2D:
    mesh_file = cfg.get("geometry", "mesh_file")
    if mesh_file:
        if not os.path.isfile(mesh_file):
            raise ConfigError(f"mesh file not found: {mesh_file}")
        return load_mesh(mesh_file)
    kw = {}
    for key, cast in (("R", float), ("b", float), ("n_passes", int),
                      ("n_r", int), ("n_groove", int),
                      ("groove_root", float), ("groove_cap", float),
                      ("haz_width", float), ("window_arc", float),
                      ("h_fine", float), ("h_coarse", float),
                      ("grading", float)):
        raw = cfg.get("geometry", key.lower())
        if raw is not None:
            try:
                kw[key] = cast(raw)
            except ValueError:
                raise ConfigError(
                    f"[geometry] {key} = {raw!r} is not a number") from None
    try:
        return generate_pipe_section(PipeSectionSpec(**kw))
    except Exception as exc:
        raise ConfigError(f"geometry: {exc}") from None


def build_materials(cfg: RunConfig, mesh: Mesh2D):
    grade = cfg.get("materials", "grade", "X80")
    ell_scale = cfg.getfloat("materials", "ell_scale", 1.0)
    gc_scale = cfg.getfloat("materials", "gc_scale", 1.0)
    try:
        base = matmod.get_material(f"{grade}_base")
        weld = matmod.get_material(f"{grade}_weld")
    except matmod.MaterialError as exc:
        raise ConfigError(str(exc)) from None
    if ell_scale != 1.0 or gc_scale != 1.0:
        base = matmod.scale_fracture(base, ell_scale, gc_scale)
        weld = matmod.scale_fracture(weld, ell_scale, gc_scale)
    alpha_scale = cfg.getfloat("materials", "alpha_scale", 1.0)
    if alpha_scale != 1.0:
        base = _scale_alpha(base, alpha_scale)
        weld = _scale_alpha(weld, alpha_scale)
    return {r: (base if r == "base" else weld) for r in mesh.region_names}


def _scale_alpha(mat, scale):
    """Thermal-expansion override, mainly for diagnostics (alpha_scale=0
    must produce an all-zero residual stress state)."""
    tab = mat.thermal.alpha
    scaled = matmod.PropertyTable(tab.T, tab.values * scale, name=tab.name)
    return replace(mat, thermal=replace(mat.thermal, alpha=scaled))


def build_hardness(cfg: RunConfig):
    """Optional hardness raster with affine property calibration."""
    path = cfg.get("materials", "hardness_map")
    if not path:
        return None
    if not os.path.isfile(path):
        raise ConfigError(f"hardness map not found: {path}")

    def pair(key, default):
        raw = cfg.get("materials", key)
        if raw is None:
            return default
        parts = raw.split(",")
        if len(parts) != 2:
            raise ConfigError(f"[materials] {key} must be 'lo,hi'")
        return float(parts[0]), float(parts[1])

    hv = pair("hardness_hv", (160.0, 280.0))
    cal = matmod.HardnessCalibration(
        hv_min=hv[0], hv_max=hv[1],
        sigma_y=pair("hardness_sigma_y", (430.0, 726.0)),
        Gc0=pair("hardness_gc0", (60.0, 54.0)),
        D0=pair("hardness_d0", (4.5e-4, 3.0e-4)))
    return matmod.FieldMap.from_csv(path, cal)


def build_schedule(cfg: RunConfig, mesh: Mesh2D) -> WeldSchedule:
    """One torch+deposit pass per weld bead region present on the mesh."""
    beads = sorted(r for r in mesh.region_names if r.startswith("weld_pass_"))
    if not beads:
        raise ConfigError("mesh has no weld_pass_* regions to deposit")
    torch_time = cfg.getfloat("schedule", "torch_time", 5.0)
    dwell_time = cfg.getfloat("schedule", "dwell_time", 10.0)
    torch_temp = cfg.getfloat("schedule", "torch_temp", None)
    passes = []
    for k, region in enumerate(beads, start=1):
        nodeset = f"torch_pass_{k}"
        if nodeset not in mesh.nodesets:
            raise ConfigError(f"mesh lacks nodeset {nodeset!r} for {region!r}")
        passes.append(WeldPass(region=region, torch_nodeset=nodeset,
                               torch_temp=torch_temp, torch_time=torch_time,
                               dwell_time=dwell_time))
    kw = {}
    for key in ("cooldown_tol", "dt0_torch", "dtmax_torch", "dt0_dwell",
                "dtmax_dwell", "dt0_cool", "dtmax_cool", "growth"):
        val = cfg.getfloat("schedule", key, None)
        if val is not None:
            kw[key] = val
    halvings = cfg.getint("schedule", "max_halvings", None)
    if halvings is not None:
        kw["max_halvings"] = halvings
    return WeldSchedule(passes=passes, **kw)


def _parse_defects(raw):
    """'x,y,length,angle ; ...' to DefectSpec list."""
    out = []
    for chunk in raw.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        parts = [p.strip() for p in chunk.split(",")]
        if len(parts) != 4:
            raise ConfigError(
                f"defect {chunk!r}: expected 'x,y,length,angle'")
        try:
            x, y, length, angle = (float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"defect {chunk!r}: non-numeric field") from None
        out.append(DefectSpec(center=(x, y), length=length, angle=angle))
    return out


def build_scenario(cfg: RunConfig, seed: int) -> Scenario:
    sched_kw = {}
    for key in ("rate", "p_cap", "dp"):
        val = cfg.getfloat("scenario", key, None)
        if val is not None:
            sched_kw[key] = val
    f_v = cfg.getfloat("scenario", "porosity_f_v", 0.0)
    porosity = None
    if f_v > 0.0:
        porosity = PorositySpec(
            d_v=cfg.getfloat("scenario", "porosity_d_v", 7.0),
            f_v=f_v,
            seed=cfg.getint("scenario", "porosity_seed", seed))
    kw = dict(
        grade=cfg.get("materials", "grade", "X80"),
        residual_state=cfg.getbool("scenario", "residual_state", True),
        defects=_parse_defects(cfg.get("scenario", "defects", "")),
        porosity=porosity,
        hardness=build_hardness(cfg),
        schedule=PressureSchedule(**sched_kw),
        ell_scale=cfg.getfloat("materials", "ell_scale", 1.0),
        gc_scale=cfg.getfloat("materials", "gc_scale", 1.0),
        reequilibrate=cfg.getbool("scenario", "reequilibrate", True),
    )
    for key in ("yield_tol", "phi_crack"):
        val = cfg.getfloat("scenario", key, None)
        if val is not None:
            kw[key] = val
    tol = cfg.getfloat("solver", "stagger_tol", None)
    if tol is not None:
        kw["stagger_tol"] = tol
    smax = cfg.getint("solver", "stagger_max", None)
    if smax is not None:
        kw["stagger_max"] = smax
    try:
        return Scenario(**kw)
    except Exception as exc:
        raise ConfigError(f"scenario: {exc}") from None


def saturation_concentration(fracture: matmod.FractureProps):
    """Concentration driving the degradation fit to its floor (e^-40)."""
    return (40.0 / fracture.q1) ** (1.0 / fracture.q2)


def build_rcurve_spec(cfg: RunConfig) -> BoundaryLayerSpec:
    grade = cfg.get("materials", "grade", "X80")
    try:
        mat = matmod.get_material(f"{grade}_base")
    except matmod.MaterialError as exc:
        raise ConfigError(str(exc)) from None
    env = cfg.get("rcurve", "environment", "air").strip().lower()
    if env == "air":
        C_bulk = 0.0
    elif env == "saturated":
        C_bulk = saturation_concentration(mat.fracture)
    else:
        raise ConfigError(
            f"[rcurve] environment = {env!r}; expected air or saturated")
    override = cfg.getfloat("rcurve", "C_bulk", None)
    if override is not None:
        C_bulk = override
    kw = dict(material=mat, C_bulk=C_bulk)
    for key in ("R_bl", "h_over_ell", "band_over_ell", "J_max_over_Gc",
                "K_rate", "da_max", "init_bands"):
        val = cfg.getfloat("rcurve", key, None)
        if val is not None:
            kw[key] = val
    n = cfg.getint("rcurve", "n_steps", None)
    if n is not None:
        kw["n_steps"] = n
    transport = cfg.get("rcurve", "transport", None)
    if transport is not None:
        kw["transport"] = transport.strip()
    tol = cfg.getfloat("solver", "stagger_tol", None)
    if tol is not None:
        kw["stagger_tol"] = tol
    smax = cfg.getint("solver", "stagger_max", None)
    if smax is not None:
        kw["stagger_max"] = smax
    try:
        return BoundaryLayerSpec(**kw)
    except Exception as exc:
        raise ConfigError(f"rcurve: {exc}") from None
