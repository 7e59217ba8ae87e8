"""Unit conventions.

Everything in this package is expressed in Hartree atomic units
(hbar = m_e = e = 1): lengths in bohr, energies in hartree, masses in
electron masses, time in atomic time units.  hbar is kept as a named
symbol so formulas read like the physics they implement.
"""

HBAR = 1.0
