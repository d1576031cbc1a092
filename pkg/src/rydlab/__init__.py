"""Desk-scale simulator and analysis toolkit for blockade-constrained Rydberg arrays.

Subpackage map:

- ``lattice``     geometries (chains, rings, hex plaquettes, kagome, honeycomb tori)
  and the kagome-site <-> honeycomb-bond dimer encoding
- ``hilbert``     blockade-constrained basis enumeration, reduced densities,
  local-unitary rotations
- ``dynamics``    time-dependent Hamiltonians and Schrodinger evolution in the
  constrained basis, snapshot sampling, disorder draws
- ``floquet``     periodic detuning drives, echo algebra, effective Hamiltonians
- ``probes``      Hamiltonian learning and Green's-function spectroscopy
- ``qdm``         dimer-model observables on snapshots and states
- ``wormmc``      worm-algorithm Monte Carlo over perfect dimer coverings
- ``correlators`` dimer-dimer / dimer-string / rectified correlators with bootstrap
- ``sweepopt``    preparation-sweep parameterization and closed-loop optimization
- ``cli``         batch front-end with scenario orchestration

Unit conventions: all frequencies are angular (rad/us) internally; configs and
CLI accept plain MHz and are converted once at the boundary (see ``units``).
Lengths are in um, times in us.
"""

__version__ = "0.1.0"
