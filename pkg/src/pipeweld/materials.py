"""Constitutive data and closed-form material laws.

Temperature-dependent property tables, power-law hardening, hydrogen
degradation of the fracture energy, Sievert uptake, the length-scale /
strength relation, and hardness-map property fields.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

logger = logging.getLogger(__name__)

# Fraction of the room-temperature value used as a floor for E(T) and
# sigma_y(T) near melting, so molten elements stay numerically benign.
_SOFT_FLOOR = 0.01


class MaterialError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Property tables
# ---------------------------------------------------------------------------

class PropertyTable:
    """Piecewise-linear property vs temperature.

    Out-of-domain temperatures clamp to the nearest knot; the first such
    query logs a warning. Exact at knots.
    """

    def __init__(self, T, values, name="property"):
        T = np.asarray(T, dtype=float)
        values = np.asarray(values, dtype=float)
        if T.ndim != 1 or T.shape != values.shape or T.size < 2:
            raise MaterialError(f"{name}: table needs >= 2 (T, value) rows")
        if not np.all(np.diff(T) > 0):
            raise MaterialError(f"{name}: table temperatures must be strictly increasing")
        self.T = T
        self.values = values
        self.name = name
        self._warned = False

    @classmethod
    def constant(cls, value, name="property", T_lo=-273.0, T_hi=3000.0):
        return cls([T_lo, T_hi], [value, value], name=name)

    @classmethod
    def from_csv(cls, path, name=None):
        """Read a `T,value` CSV (header row mandatory)."""
        rows = []
        with open(path, "r", encoding="utf-8") as f:
            header = f.readline().strip().lower().replace(" ", "")
            if header not in ("t,value", "t,v"):
                raise MaterialError(f"{path}: expected header 'T,value', got {header!r}")
            for ln, line in enumerate(f, start=2):
                line = line.split("#")[0].strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 2:
                    raise MaterialError(f"{path}:{ln}: expected two columns")
                rows.append((float(parts[0]), float(parts[1])))
        if len(rows) < 2:
            raise MaterialError(f"{path}: table needs >= 2 rows")
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1], name=name or path)

    def __call__(self, T):
        T = np.asarray(T, dtype=float)
        out_of_domain = (T < self.T[0]) | (T > self.T[-1])
        if np.any(out_of_domain) and not self._warned:
            logger.warning(
                "table %s: temperature outside [%g, %g], clamping",
                self.name, self.T[0], self.T[-1],
            )
            self._warned = True
        return np.interp(T, self.T, self.values)

    def domain(self):
        return self.T[0], self.T[-1]


# ---------------------------------------------------------------------------
# Property bundles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThermalProps:
    """Parameters of the heat problem, N-mm-s-mJ units (T in Celsius)."""
    rho: float                 # tonne/mm^3
    c: PropertyTable           # mJ/(tonne K)
    k: PropertyTable           # mW/(mm K)
    alpha: PropertyTable       # 1/K (secant CTE)
    h_c: float = 0.025         # mW/(mm^2 K)
    emissivity: float = 0.8
    sb_const: float = 5.69e-11  # mW/(mm^2 K^4)
    T0: float = 20.0           # ambient, Celsius
    T_melt: float = 1500.0
    T_abs: float = -273.0      # absolute zero offset

    def __post_init__(self):
        if self.rho <= 0:
            raise MaterialError("rho must be positive")
        if not (0.0 <= self.emissivity <= 1.0):
            raise MaterialError("emissivity must be in [0, 1]")
        for tab in (self.c, self.k):
            if np.any(tab.values <= 0):
                raise MaterialError(f"{tab.name}: values must be positive")
        for tab in (self.c, self.k, self.alpha):
            lo, hi = tab.domain()
            if lo > self.T0 or hi < self.T_melt:
                raise MaterialError(
                    f"{tab.name}: domain [{lo}, {hi}] must cover [T0, T_melt]"
                )


@dataclass(frozen=True)
class MechProps:
    """Elastoplastic parameters (power-law isotropic hardening)."""
    E: PropertyTable           # MPa
    nu: float
    sigma_y: PropertyTable     # MPa
    n_hard: float              # hardening exponent
    beta: float = 0.1          # Taylor-Quinney coefficient

    def __post_init__(self):
        if not (0.0 < self.nu < 0.5):
            raise MaterialError("nu must be in (0, 0.5)")
        if not (0.0 < self.n_hard <= 1.0):
            raise MaterialError("hardening exponent must be in (0, 1]")
        if not (0.0 <= self.beta <= 1.0):
            raise MaterialError("beta must be in [0, 1]")
        if np.any(self.E.values <= 0) or np.any(self.sigma_y.values <= 0):
            raise MaterialError("E and sigma_y tables must be positive")

    def E_at(self, T):
        """E(T) floored at 1% of the room-temperature value."""
        return np.maximum(self.E(T), _SOFT_FLOOR * self.E(20.0))

    def sigma_y_at(self, T):
        return np.maximum(self.sigma_y(T), _SOFT_FLOOR * self.sigma_y(20.0))


@dataclass(frozen=True)
class FractureProps:
    Gc0: float        # N/mm
    Gc_min: float     # N/mm, hydrogen-saturated floor
    q1: float
    q2: float
    sigma_hat: float  # MPa
    ell: float        # mm

    def __post_init__(self):
        if self.Gc_min > self.Gc0:
            raise MaterialError("Gc_min must not exceed Gc0")
        if self.ell <= 0:
            raise MaterialError("ell must be positive")


@dataclass(frozen=True)
class HydrogenProps:
    D0: float            # mm^2/s
    S: float             # wppm / sqrt(MPa)
    V_H: float = 2000.0  # mm^3/mol
    k_d: float = 1.0e4   # diffusivity amplification in broken material
    phi_th: float = 0.8
    T_diff: float = 293.15  # K, isothermal transport temperature

    def __post_init__(self):
        if self.D0 <= 0:
            raise MaterialError("D0 must be positive")
        if not (0.0 <= self.phi_th < 1.0):
            raise MaterialError("phi_th must be in [0, 1)")
        if self.k_d < 0:
            raise MaterialError("k_d must be non-negative")


@dataclass(frozen=True)
class Material:
    """Full per-region material bundle."""
    name: str
    thermal: ThermalProps
    mech: MechProps
    fracture: FractureProps
    hydrogen: HydrogenProps

    def __post_init__(self):
        # Consistency check on the regularization length (warn only).
        ell_ref = length_scale_from_strength(
            self.mech.E_at(20.0), self.fracture.Gc0, self.fracture.sigma_hat
        )
        if abs(ell_ref - self.fracture.ell) > 0.05 * ell_ref:
            warnings.warn(
                f"{self.name}: ell={self.fracture.ell} deviates more than 5% "
                f"from the strength-consistent value {ell_ref:.4g}",
                stacklevel=2,
            )


# ---------------------------------------------------------------------------
# Closed-form laws
# ---------------------------------------------------------------------------

def flow_stress(eps_p, T, m: MechProps):
    """Power-law flow stress sigma_y(T) * (1 + E(T) eps_p / sigma_y(T))^n."""
    eps_p = np.asarray(eps_p, dtype=float)
    if np.any(eps_p < 0):
        raise MaterialError("accumulated plastic strain must be non-negative")
    sy = m.sigma_y_at(T)
    E = m.E_at(T)
    return sy * (1.0 + E * eps_p / sy) ** m.n_hard


def flow_stress_deriv(eps_p, T, m: MechProps):
    """d sigma_f / d eps_p for the power law."""
    sy = m.sigma_y_at(T)
    E = m.E_at(T)
    return m.n_hard * E * (1.0 + E * np.asarray(eps_p, dtype=float) / sy) ** (m.n_hard - 1.0)


def plastic_energy(eps_p_acc, E, sigma_y, n_hard):
    """Stored plastic free energy, zeroed at eps_p = 0.

    Integral of the power-law flow stress, with the constant chosen so a
    virgin material carries no fracture driving energy.
    """
    x = 1.0 + E * np.asarray(eps_p_acc, dtype=float) / sigma_y
    return sigma_y ** 2 / (E * (n_hard + 1.0)) * (x ** (n_hard + 1.0) - 1.0)


def degraded_Gc(C, f: FractureProps):
    """Fracture energy at hydrogen concentration C [wppm].

    G_c(C) = [chi + (1 - chi) exp(-q1 C^q2)] G_c(0), chi = G_c^min/G_c(0).
    Monotone non-increasing, bounded in [G_c^min, G_c(0)].
    """
    C = np.asarray(C, dtype=float)
    if np.any(C < 0):
        raise MaterialError("concentration must be non-negative")
    chi = f.Gc_min / f.Gc0
    return (chi + (1.0 - chi) * np.exp(-f.q1 * C ** f.q2)) * f.Gc0


def sievert_concentration(p, S):
    """Equilibrium surface concentration C = S sqrt(p), p in MPa."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise MaterialError("pressure must be non-negative")
    return S * np.sqrt(p)


def length_scale_from_strength(E, Gc, sigma_hat):
    """Regularization length reproducing the strength: 27/256 E Gc / sigma^2."""
    if E <= 0 or Gc <= 0 or sigma_hat <= 0:
        raise MaterialError("E, Gc, sigma_hat must be positive")
    return 27.0 / 256.0 * E * Gc / sigma_hat ** 2


def strength_from_length_scale(E, Gc, ell):
    """Inverse relation: homogeneous AT2 peak stress (9/16) sqrt(E Gc / (3 ell))."""
    return 9.0 / 16.0 * np.sqrt(E * Gc / (3.0 * ell))


def yield_pressure(sigma_y, b, R):
    """Thin-wall estimate of the pressure at first yield, p_y = sigma_y b / R."""
    return sigma_y * b / R


def boundary_radial_displacement(p, R, b, E, nu):
    """Elastic inner-surface radial displacement equivalent to pressure p."""
    return p * R ** 2 / (b * E) * (1.0 - nu / 2.0)


# ---------------------------------------------------------------------------
# Hardness map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HardnessCalibration:
    """Affine HV -> property calibration over [hv_min, hv_max].

    sigma_y increases with hardness; Gc0 and D0 decrease. Values give the
    property at hv_min and hv_max respectively.
    """
    hv_min: float
    hv_max: float
    sigma_y: tuple[float, float]   # increasing
    Gc0: tuple[float, float]       # decreasing
    D0: tuple[float, float]        # decreasing
    strength_ratio: float = 4.0    # sigma_hat / sigma_y

    def __post_init__(self):
        if self.hv_max <= self.hv_min:
            raise MaterialError("hv_max must exceed hv_min")
        if self.sigma_y[1] < self.sigma_y[0]:
            raise MaterialError("sigma_y calibration must be non-decreasing in HV")
        if self.Gc0[1] > self.Gc0[0] or self.D0[1] > self.D0[0]:
            raise MaterialError("Gc0 and D0 calibrations must be non-increasing in HV")


@dataclass
class FieldMap:
    """Raster of Vickers hardness with bilinear interpolation."""
    x0: float
    y0: float
    dx: float
    dy: float
    values: np.ndarray  # (ny, nx), row-major in y
    calibration: HardnessCalibration

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise MaterialError("hardness raster must be 2D")
        if np.any(self.values <= 0):
            raise MaterialError("hardness values must be positive")
        self._warned = False

    @classmethod
    def from_csv(cls, path, calibration):
        """Read `nx,ny,x0,y0,dx,dy` header then row-major values."""
        with open(path, "r", encoding="utf-8") as f:
            head = f.readline().strip().split(",")
            if len(head) != 6:
                raise MaterialError(f"{path}: header must be nx,ny,x0,y0,dx,dy")
            nx, ny = int(head[0]), int(head[1])
            x0, y0, dx, dy = (float(v) for v in head[2:])
            flat = []
            for line in f:
                line = line.split("#")[0].strip()
                if line:
                    flat.extend(float(v) for v in line.replace(",", " ").split())
        if len(flat) != nx * ny:
            raise MaterialError(f"{path}: expected {nx * ny} values, got {len(flat)}")
        return cls(x0, y0, dx, dy, np.array(flat).reshape(ny, nx), calibration)

    def hardness(self, x, y):
        """Bilinear HV at (x, y); clamps outside the grid with a warning."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ny, nx = self.values.shape
        fx = (x - self.x0) / self.dx
        fy = (y - self.y0) / self.dy
        outside = (fx < 0) | (fx > nx - 1) | (fy < 0) | (fy > ny - 1)
        if np.any(outside) and not self._warned:
            logger.warning("hardness map: point outside raster, clamping to edge")
            self._warned = True
        fx = np.clip(fx, 0.0, nx - 1.0)
        fy = np.clip(fy, 0.0, ny - 1.0)
        i0 = np.minimum(fx.astype(int), nx - 2)
        j0 = np.minimum(fy.astype(int), ny - 2)
        tx = fx - i0
        ty = fy - j0
        v = self.values
        return ((1 - tx) * (1 - ty) * v[j0, i0] + tx * (1 - ty) * v[j0, i0 + 1]
                + (1 - tx) * ty * v[j0 + 1, i0] + tx * ty * v[j0 + 1, i0 + 1])


@dataclass(frozen=True)
class PointProps:
    sigma_y: float
    Gc0: float
    sigma_hat: float
    D0: float
    ell: float


def properties_from_hardness(fmap: FieldMap, point, E=187000.0):
    """Local (sigma_y, Gc0, sigma_hat, D0) from the hardness raster.

    Affine in HV over the calibrated range, sigma_hat at the fixed
    strength ratio, and ell recomputed from the rescaled strength so the
    regularization stays consistent.
    """
    cal = fmap.calibration
    hv = np.clip(fmap.hardness(point[0], point[1]), cal.hv_min, cal.hv_max)
    t = (hv - cal.hv_min) / (cal.hv_max - cal.hv_min)
    sy = cal.sigma_y[0] + t * (cal.sigma_y[1] - cal.sigma_y[0])
    gc = cal.Gc0[0] + t * (cal.Gc0[1] - cal.Gc0[0])
    d0 = cal.D0[0] + t * (cal.D0[1] - cal.D0[0])
    s_hat = cal.strength_ratio * sy
    if np.ndim(sy) == 0:
        ell = length_scale_from_strength(E, float(gc), float(s_hat))
        return PointProps(float(sy), float(gc), float(s_hat), float(d0), ell)
    ell = 27.0 / 256.0 * E * gc / s_hat ** 2
    return sy, gc, s_hat, d0, ell


# ---------------------------------------------------------------------------
# Default steel grades
# ---------------------------------------------------------------------------
# The temperature tables below are illustrative, reproducing the usual
# trends for pipeline steels (stiffness, yield and conductivity falling
# with temperature, expansion rising, heat capacity peaking near 700 C).
# Room-temperature anchors match the calibrated grade parameters. Real
# analyses should supply measured tables via CSV.

def _thermal_tables():
    c = PropertyTable(
        [20.0, 400.0, 700.0, 800.0, 1000.0, 1500.0],
        [4.50e8, 5.60e8, 9.50e8, 6.50e8, 6.50e8, 7.00e8],
        name="c(T)",
    )
    k = PropertyTable(
        [20.0, 400.0, 800.0, 1200.0, 1500.0],
        [45.0, 38.0, 27.0, 26.0, 26.0],
        name="k(T)",
    )
    alpha = PropertyTable(
        [20.0, 600.0, 1000.0, 1500.0],
        [1.15e-5, 1.35e-5, 1.50e-5, 1.60e-5],
        name="alpha(T)",
    )
    return c, k, alpha


def _mech_tables(E0, sy0):
    # Fractions of the room-temperature anchors vs temperature.
    T = [20.0, 200.0, 400.0, 600.0, 800.0, 1000.0, 1200.0, 1500.0]
    e_frac = [1.0, 0.95, 0.85, 0.65, 0.35, 0.12, 0.04, 0.01]
    y_frac = [1.0, 0.92, 0.80, 0.55, 0.25, 0.08, 0.03, 0.01]
    E = PropertyTable(T, [E0 * f for f in e_frac], name="E(T)")
    sy = PropertyTable(T, [sy0 * f for f in y_frac], name="sigma_y(T)")
    return E, sy


def _make_grade(name, E0, sy0, n_hard, Gc0, Gc_min, q1, q2, D0):
    c, k, alpha = _thermal_tables()
    E, sy = _mech_tables(E0, sy0)
    sigma_hat = 4.0 * sy0
    ell = length_scale_from_strength(E0, Gc0, sigma_hat)
    return Material(
        name=name,
        thermal=ThermalProps(rho=7.85e-9, c=c, k=k, alpha=alpha),
        mech=MechProps(E=E, nu=0.3, sigma_y=sy, n_hard=n_hard),
        fracture=FractureProps(Gc0=Gc0, Gc_min=Gc_min, q1=q1, q2=q2,
                               sigma_hat=sigma_hat, ell=ell),
        hydrogen=HydrogenProps(D0=D0, S=0.077),
    )


# Calibrated grade parameters: (E, sigma_y, n, Gc0, Gc_min, q1, q2, D0).
_GRADES = {
    "X80_base": ("X80_base", 187000.0, 660.0, 0.10, 60.0, 7.0, 9.0, 0.8, 4.5e-4),
    "X80_weld": ("X80_weld", 196350.0, 726.0, 0.05, 54.0, 6.3, 9.0, 0.8, 3.0e-4),
    "X52_base": ("X52_base", 187000.0, 430.0, 0.10, 60.0, 16.0, 25.0, 2.0, 4.5e-4),
    "X52_weld": ("X52_weld", 196350.0, 473.0, 0.05, 54.0, 14.4, 25.0, 2.0, 3.0e-4),
}

# Measured toughness-fit parameters per grade: J_Ic(0), J_min, q1, q2.
TOUGHNESS_FITS = {
    "X80": (289.0, 20.0, 9.0, 0.8),
    "X52": (400.0, 50.0, 25.0, 2.0),
}


def get_material(grade):
    """Material bundle for a named grade (X80_base, X80_weld, X52_base, X52_weld)."""
    try:
        args = _GRADES[grade]
    except KeyError:
        raise MaterialError(
            f"unknown grade {grade!r}; available: {sorted(_GRADES)}"
        ) from None
    return _make_grade(*args)


def scale_fracture(mat: Material, ell_scale=1.0, gc_scale=1.0):
    """Return a copy with ell and the fracture energies rescaled.

    Used by coarse-mesh suites; scaling ell and Gc together preserves the
    homogeneous strength (ell ~ E Gc / sigma^2), while scaling ell alone
    changes it.
    """
    f = mat.fracture
    newf = replace(
        f,
        ell=f.ell * ell_scale,
        Gc0=f.Gc0 * gc_scale,
        Gc_min=f.Gc_min * gc_scale,
        sigma_hat=strength_from_length_scale(
            mat.mech.E_at(20.0), f.Gc0 * gc_scale, f.ell * ell_scale
        ),
    )
    return replace(mat, fracture=newf)
