"""Physical constants (SI units) shared across the solver and encoding."""

import math

C0 = 299792458.0  # speed of light in vacuum [m/s]
MU0 = 4.0 * math.pi * 1e-7  # vacuum permeability [H/m]
EPS0 = 1.0 / (MU0 * C0**2)  # vacuum permittivity [F/m]
ETA0 = math.sqrt(MU0 / EPS0)  # vacuum impedance [Ohm]
