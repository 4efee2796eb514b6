"""Plane-strain FEM for weld residual stress and hydrogen-assisted fracture.

Two-stage workflow: a multi-pass seam weld simulation (transient heat
conduction + thermo-elastoplasticity with element birth) produces a
residual stress/strain state, which feeds a pressurization stage coupling
elastoplastic deformation, stress-driven hydrogen transport, and phase
field fracture. A boundary-layer R-curve harness is included for
calibration checks.

Unit system: N, mm, MPa, s, wppm, mJ (temperatures in Celsius for the
weld stage, Kelvin inside chemical-potential terms).
"""

__version__ = "0.1.0"

GAS_CONSTANT = 8314.0  # mJ/(mol K)
