"""Physical constants shared across the toolkit (SI units)."""

ELECTRON_CHARGE = 1.602e-19  # C
PLANCK = 6.626e-34  # J*s
BOLTZMANN = 1.380649e-23  # J/K
SPEED_OF_LIGHT = 2.99792458e8  # m/s, vacuum
