"""Dimer-model observables: vertex census, plaquette energies, loops,
parity scans, subsystem statistics, and the nematic order parameter.

Snapshots are bond-occupation arrays over a honeycomb BondMap, one bit per
kagome site. Defects are allowed: a vertex may carry zero dimers (monomer)
or more than one (blockade violation). Analyses that assume perfect
coverings postselect them away and report how much survived.

State-based observables act on constrained-basis amplitude vectors and come
in two independent routes, a direct off-diagonal sum and a reduced-density
trace, kept separate so one can cross-check the other. Projection onto an
empty shell conditions the expectation on no dimer touching the hexagon (or
string) from outside and renormalizes by the surviving weight.

A subsystem is a w x h block of hexagons. Its bonds are listed in a
canonical order, sorted by their cell-and-slot offset from the anchor cell,
so configuration indices agree across anchors and a distribution can
aggregate over every translate of the block. The shell of a region is the
set of outside bonds touching its vertices. On a perfect covering, fixing
the number of occupied shell bonds fixes the number of internal dimers, and
conditioning on vertex perfection picks out the admissible internal
coverings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .hilbert import reduced_density
from .wormmc import (Estimate, PlaquetteFlip, flippable_plaquettes,
                     offdiagonal_estimate, plaquette_shells)

# Projected estimates built from fewer postselected rows than this are
# still returned, but flagged; bootstrap errors below ~200 rows wobble.
MIN_POSTSELECTED = 200

REGION_SHAPES = ((1, 1), (2, 1), (3, 1), (2, 2), (3, 2))

# Ring-bit patterns of the two alternating hexagon matchings, in the
# counter-clockwise bond order of plaquette_bonds (bit t = ring bond t).
RING_EVEN = 0b010101
RING_ODD = 0b101010

_SUBLATTICE_PHASE = np.exp(2j * np.pi / 3 * np.array([0.0, 1.0, -1.0]))


# ---------------------------------------------------------------------------
# vertex census
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VertexCensus:
    """Per-vertex fractions of snapshots by dimer count at the vertex."""

    monomer: np.ndarray
    dimer: np.ndarray
    double: np.ndarray
    triple: np.ndarray

    def means(self):
        return {
            "monomer": float(self.monomer.mean()),
            "dimer": float(self.dimer.mean()),
            "double": float(self.double.mean()),
            "triple": float(self.triple.mean()),
        }


def classify_vertices(occupations, bond_map):
    """Monomer / dimer / double / triple fractions per vertex.

    The four fractions partition the snapshots, so they sum to one at every
    vertex; a perfect covering is dimer fraction one everywhere.
    """
    occ = np.atleast_2d(np.asarray(occupations))
    sums = occ[:, bond_map.vertex_bonds].sum(axis=2)
    return VertexCensus(
        monomer=(sums == 0).mean(axis=0),
        dimer=(sums == 1).mean(axis=0),
        double=(sums == 2).mean(axis=0),
        triple=(sums >= 3).mean(axis=0),
    )


# ---------------------------------------------------------------------------
# plaquette energies
# ---------------------------------------------------------------------------

def potential_profile(occupations, bond_map):
    """Per-plaquette flippable fraction across snapshots."""
    occ = np.atleast_2d(np.asarray(occupations))
    return flippable_plaquettes(occ, bond_map).mean(axis=0)


def potential_energy(occupations, bond_map, plaquettes=None):
    """Pooled flippable fraction as an Estimate with a standard error."""
    occ = np.atleast_2d(np.asarray(occupations))
    return offdiagonal_estimate([occ], bond_map, PlaquetteFlip(plaquettes))


def projected_potential_energy(occupations, bond_map, plaquettes=None):
    """Flippable fraction conditioned on an empty shell, pooled over
    plaquettes (each plaquette postselects on its own shell)."""
    occ = np.atleast_2d(np.asarray(occupations))
    if plaquettes is None:
        plist = np.arange(bond_map.n_plaquettes)
    else:
        plist = np.atleast_1d(plaquettes)
    shells = plaquette_shells(bond_map)
    flip = flippable_plaquettes(occ, bond_map)
    vals = []
    for p in plist:
        keep = occ[:, shells[p]].sum(axis=1) == 0
        vals.append(flip[keep, p].astype(float))
    vals = np.concatenate(vals)
    n_total = occ.shape[0] * plist.size
    if vals.size == 0:
        raise ValueError("no snapshots with an empty shell")
    err = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return Estimate(float(vals.mean()), err, n_total, int(vals.size))


def potential_energy_state(state, bond_map, plaquettes=None):
    """Exact flippability expectation of a constrained-basis state."""
    occm = state.basis.occupation_matrix()
    flip = flippable_plaquettes(occm, bond_map)
    if plaquettes is not None:
        flip = flip[:, np.atleast_1d(plaquettes)]
    weights = np.abs(state.amps) ** 2
    return float(weights @ flip.mean(axis=1))


def hexagon_sites(bond_map, plaquette):
    """Ring and shell site tuples of one hexagon, ring in ccw bond order."""
    ring = tuple(int(b) for b in bond_map.plaquette_bonds[plaquette])
    shell = tuple(int(b) for b in plaquette_shells(bond_map)[plaquette])
    return ring, shell


def _flip_terms(state, ring, shell):
    """Configs holding one alternating ring matching, their flip partners,
    and the projector weight (1.0 when no shell is given)."""
    basis = state.basis
    states = basis.states
    even = sum(1 << int(s) for s in ring[0::2])
    odd = sum(1 << int(s) for s in ring[1::2])
    mask = np.uint64(even | odd)
    ring_bits = states & mask
    sel = ring_bits == np.uint64(even)
    weight = 1.0
    if shell is not None:
        shell_mask = np.uint64(sum(1 << int(s) for s in shell))
        open_shell = (states & shell_mask) == 0
        weight = float((np.abs(state.amps) ** 2)[open_shell].sum())
        sel &= open_shell
    idx = np.nonzero(sel)[0]
    partners = basis.ordinals(states[idx] ^ mask)
    ok = partners >= 0
    return idx[ok], partners[ok], weight


def kinetic_energy(state, ring, shell=None):
    """Hexagon-flip expectation, directly from the amplitude vector.

    The flip exchanges the two alternating matchings of the six ring sites
    and annihilates every other ring configuration, so the expectation is
    twice the real part of the overlap between one matching sector and the
    image of the other. With a shell the value is conditioned on no dimer
    touching the hexagon from outside.
    """
    idx, partners, weight = _flip_terms(state, ring, shell)
    if shell is not None and weight <= 1e-300:
        raise ValueError("zero projected weight")
    amps = state.amps
    total = 2.0 * float(np.real(np.conj(amps[partners]) @ amps[idx]))
    return total / weight


def kinetic_energy_reduced(state, ring, shell=None):
    """Same expectation routed through a reduced density block.

    The bare variant traces the flip against the 6-site reduced density of
    the ring; the projected variant reduces over ring plus shell and keeps
    the shell-empty block before tracing.
    """
    t6 = np.zeros((64, 64))
    t6[RING_EVEN, RING_ODD] = t6[RING_ODD, RING_EVEN] = 1.0
    if shell is None:
        rho = reduced_density(state.amps, state.basis, list(ring))
        return float(np.real(np.trace(rho @ t6)))
    rho = reduced_density(state.amps, state.basis, list(ring) + list(shell))
    block = rho[:64, :64]
    weight = float(np.real(np.trace(block)))
    if weight <= 1e-300:
        raise ValueError("zero projected weight")
    return float(np.real(np.trace(block @ t6))) / weight


# ---------------------------------------------------------------------------
# loops and strings
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LoopSpec:
    """A closed loop or open string of sites measured in one basis.

    sites are kagome site ids (honeycomb bonds) in path order; basis is
    "X" or "Z"; shell lists sites postselected (Z) or projected (X) onto
    zero occupation.
    """

    sites: tuple
    basis: str
    shell: tuple = ()
    closed: bool = True

    def __post_init__(self):
        if self.basis not in ("X", "Z"):
            raise ValueError("loop basis must be 'X' or 'Z'")
        if self.closed and len(self.sites) % 2:
            raise ValueError("closed loops have even length")
        if set(self.sites) & set(self.shell):
            raise ValueError("shell overlaps loop sites")


@dataclass(frozen=True)
class LoopEstimate:
    value: float
    error: float
    n_samples: int
    n_kept: int
    flagged: bool


def surrounding_shell(bond_map, sites):
    """All bonds sharing a vertex with the given sites, minus the sites.

    For a hexagon ring this is exactly the plaquette shell; for an open
    string it is the set projected away in the string observables.
    """
    sset = {int(s) for s in sites}
    out = {int(b) for s in sset for v in bond_map.bond_vertices[s]
           for b in bond_map.vertex_bonds[v]}
    return tuple(sorted(out - sset))


def loop_expectation(obj, spec, min_kept=MIN_POSTSELECTED):
    """Loop or string expectation on snapshots (Z) or a state (X).

    Z loops are products of (1 - 2 n) over the loop sites, averaged over
    snapshots; a shell postselects snapshots with the shell empty and the
    estimate is flagged when fewer than min_kept survive. X loops pair each
    configuration with its image under flipping the loop sites; the state
    route is exact, so its error is zero and n_kept counts contributing
    configurations.
    """
    if spec.basis == "Z":
        occ = np.atleast_2d(np.asarray(obj))
        n_total = occ.shape[0]
        if spec.shell:
            occ = occ[occ[:, list(spec.shell)].sum(axis=1) == 0]
        if occ.shape[0] == 0:
            raise ValueError("no snapshots survived the shell postselection")
        vals = (1.0 - 2.0 * occ[:, list(spec.sites)]).prod(axis=1)
        err = (float(vals.std(ddof=1) / np.sqrt(vals.size))
               if vals.size > 1 else 0.0)
        return LoopEstimate(float(vals.mean()), err, n_total,
                            int(vals.size), vals.size < min_kept)

    basis = obj.basis
    states = basis.states
    amps = obj.amps
    mask = np.uint64(sum(1 << int(s) for s in spec.sites))
    if spec.shell:
        shell_mask = np.uint64(sum(1 << int(s) for s in spec.shell))
        sel = (states & shell_mask) == 0
        weight = float((np.abs(amps) ** 2)[sel].sum())
        if weight <= 1e-300:
            raise ValueError("zero projected weight")
        idx = np.nonzero(sel)[0]
    else:
        weight = 1.0
        idx = np.arange(states.size)
    partners = basis.ordinals(states[idx] ^ mask)
    ok = partners >= 0
    value = float(np.real(np.conj(amps[partners[ok]]) @ amps[idx[ok]]))
    return LoopEstimate(value / weight, 0.0, len(basis),
                        int(ok.sum()), False)


# ---------------------------------------------------------------------------
# parity scans
# ---------------------------------------------------------------------------

def parity_scan(state, ring, thetas, alternating=None, shell=None):
    """Full-ring X expectation after a Z(theta) twist on alternating sites.

    Applies exp(i theta n) to the alternating sites (every other ring site
    by default), then evaluates the product of X over the whole ring. The
    twist enters each flip pair only through the occupation difference of
    the twisted sites, so the scan is a sum of a few cosines; a twist
    applied to all six sites drops out of the ring flip entirely, which is
    why the magnitude is insensitive to a global readout phase.
    """
    ring = [int(s) for s in ring]
    alt = ring[0::2] if alternating is None else [int(s) for s in alternating]
    basis = state.basis
    states = basis.states
    mask = np.uint64(sum(1 << s for s in ring))
    sel = np.ones(states.size, dtype=bool)
    weight = 1.0
    if shell is not None:
        shell_mask = np.uint64(sum(1 << int(s) for s in shell))
        sel = (states & shell_mask) == 0
        weight = float((np.abs(state.amps) ** 2)[sel].sum())
        if weight <= 1e-300:
            raise ValueError("zero projected weight")
    idx = np.nonzero(sel)[0]
    partners = basis.ordinals(states[idx] ^ mask)
    ok = partners >= 0
    idx, partners = idx[ok], partners[ok]

    n_alt = np.zeros(states.size, dtype=np.int64)
    for s in alt:
        n_alt += ((states >> np.uint64(s)) & np.uint64(1)).astype(np.int64)
    pair = np.conj(state.amps[partners]) * state.amps[idx]
    dn = n_alt[idx] - n_alt[partners]

    thetas = np.asarray(thetas, dtype=float)
    phase = np.exp(1j * np.outer(thetas, dn))
    return np.real(phase @ pair) / weight


def fit_parity_frequency(thetas, values):
    """Cosine fit A cos(f theta + phi) + c; returns (f, err) with f >= 0.

    The starting frequency comes from the discrete spectrum of the scan so
    the fit does not have to be told what to find.
    """
    thetas = np.asarray(thetas, dtype=float)
    values = np.asarray(values, dtype=float)
    if thetas.size < 8:
        raise ValueError("need at least 8 scan points")
    step = thetas[1] - thetas[0]
    spectrum = np.abs(np.fft.rfft(values - values.mean()))
    freqs = 2.0 * np.pi * np.fft.rfftfreq(values.size, d=step)
    f0 = freqs[int(np.argmax(spectrum))]
    amp0 = float(values.max() - values.min()) / 2.0

    def model(t, a, f, phi, c):
        return a * np.cos(f * t + phi) + c

    popt, pcov = optimize.curve_fit(
        model, thetas, values, p0=(amp0, max(f0, 1e-3), 0.0, values.mean()))
    freq = abs(float(popt[1]))
    return freq, float(np.sqrt(pcov[1, 1]))


# ---------------------------------------------------------------------------
# subsystems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Region:
    """A w x h hexagon block: bonds in canonical order, vertices, shell."""

    shape: tuple
    anchor: int
    bonds: np.ndarray
    vertices: np.ndarray
    shell: np.ndarray


def subsystem_region(bond_map, anchor, shape):
    """Cut one w x h block of hexagons out of the torus.

    Bonds are ordered by their (row, column, slot) offset from the anchor
    cell, which makes configuration bitstrings comparable across anchors.
    Raises when the block does not fit or when the torus is so small that
    the shell wraps onto the block itself.
    """
    if tuple(shape) not in REGION_SHAPES:
        raise ValueError(f"unsupported region shape {shape!r}")
    lx, ly = bond_map.cells
    w, h = shape
    if w >= lx or h >= ly:
        raise ValueError("region does not fit on this torus")
    p0, q0 = anchor % lx, anchor // lx
    plaqs = [((q0 + dj) % ly) * lx + (p0 + di) % lx
             for dj in range(h) for di in range(w)]
    bond_set = {int(b) for p in plaqs for b in bond_map.plaquette_bonds[p]}
    verts = sorted({int(v) for p in plaqs
                    for v in bond_map.plaquette_vertices[p]})

    def offset(b):
        c, s = b // 3, b % 3
        return ((c // lx - q0) % ly, (c % lx - p0) % lx, s)

    bonds = np.array(sorted(bond_set, key=offset), dtype=np.int64)
    vset = set(verts)
    shell = sorted({int(b) for v in verts for b in bond_map.vertex_bonds[v]}
                   - bond_set)
    for b in shell:
        ends = [int(v) for v in bond_map.bond_vertices[b]]
        if sum(v in vset for v in ends) != 1:
            raise ValueError("region shell wraps onto itself; torus too small")
    return Region(tuple(shape), int(anchor), bonds,
                  np.array(verts, dtype=np.int64),
                  np.array(shell, dtype=np.int64))


def subsystem_regions(bond_map, shape):
    """The region at every anchor cell of the torus."""
    return [subsystem_region(bond_map, a, shape)
            for a in range(bond_map.n_plaquettes)]


def region_coverings(bond_map, region, outer_dimers=0):
    """Enumerate internal configurations compatible with k outer dimers.

    A configuration occupies region bonds so that no vertex is covered
    twice, interior vertices are covered exactly once, and exactly k
    boundary vertices are left open for the outer dimers. Rows come back
    in canonical bond order, sorted lexicographically.
    """
    verts = region.vertices
    vpos = {int(v): t for t, v in enumerate(verts)}
    n = len(verts)
    incident = [[] for _ in range(n)]
    ends = []
    for bi, b in enumerate(region.bonds):
        uv = [vpos[int(x)] for x in bond_map.bond_vertices[b]]
        ends.append(uv)
        for u in uv:
            incident[u].append(bi)
    boundary = [len(incident[t]) < 3 for t in range(n)]
    out = []
    occ = [0] * len(region.bonds)
    state = [0] * n  # 0 free, 1 covered, 2 left open

    def rec(v, left):
        while v < n and state[v]:
            v += 1
        if v == n:
            if left == 0:
                out.append(tuple(occ))
            return
        if boundary[v] and left > 0:
            state[v] = 2
            rec(v + 1, left - 1)
            state[v] = 0
        for bi in incident[v]:
            u = ends[bi][0] + ends[bi][1] - v
            if state[u]:
                continue
            occ[bi] = 1
            state[v] = state[u] = 1
            rec(v + 1, left)
            occ[bi] = 0
            state[v] = state[u] = 0

    rec(0, int(outer_dimers))
    return np.array(sorted(out), dtype=np.uint8).reshape(len(out),
                                                         len(region.bonds))


@dataclass(frozen=True)
class SubsystemDistribution:
    """Probabilities over the internal coverings of one region shape,
    aggregated over all anchors, conditioned on k outer dimers."""

    shape: tuple
    outer_dimers: int
    coverings: np.ndarray
    counts: np.ndarray
    n_samples: int
    n_kept: int

    @property
    def probabilities(self):
        return self.counts / self.counts.sum()

    @property
    def kept_fraction(self):
        return self.n_kept / self.n_samples if self.n_samples else 0.0


def subsystem_distribution(occupations, bond_map, shape, outer_dimers=0):
    """Histogram the internal coverings seen across snapshots and anchors.

    A (snapshot, anchor) pair counts when every region vertex carries
    exactly one dimer (no monomers or double dimers, shell included) and
    the shell holds exactly outer_dimers dimers. Any pair passing that test
    lands on an enumerated covering.
    """
    occ = np.atleast_2d(np.asarray(occupations))
    regions = subsystem_regions(bond_map, shape)
    support = region_coverings(bond_map, regions[0], outer_dimers)
    if support.shape[0] == 0:
        raise ValueError("no admissible internal covering for this shape")
    powers = 1 << np.arange(support.shape[1], dtype=np.int64)
    support_keys = support @ powers
    order = np.argsort(support_keys)
    counts = np.zeros(support.shape[0], dtype=np.int64)
    n_kept = 0
    for region in regions:
        vsums = occ[:, bond_map.vertex_bonds[region.vertices]].sum(axis=2)
        keep = ((vsums == 1).all(axis=1)
                & (occ[:, region.shell].sum(axis=1) == outer_dimers))
        rows = occ[keep][:, region.bonds]
        if rows.shape[0] == 0:
            continue
        n_kept += rows.shape[0]
        keys = rows.astype(np.int64) @ powers
        pos = np.searchsorted(support_keys[order], keys)
        if (pos >= order.size).any() \
                or (support_keys[order][pos] != keys).any():
            raise RuntimeError("admissible row missing from the enumeration")
        counts += np.bincount(order[pos], minlength=counts.size)
    if n_kept == 0:
        raise ValueError("no admissible subsystem samples")
    return SubsystemDistribution(tuple(shape), int(outer_dimers), support,
                                 counts, int(occ.shape[0] * len(regions)),
                                 int(n_kept))


def subsystem_energies(bond_map, region, coverings, v0):
    """Internal vdW energy of each covering: pairwise v0 (a / r)^6 over
    occupied region bonds, couplings to outside bonds excluded."""
    lattice = bond_map.lattice
    nb = len(region.bonds)
    ii, jj = np.triu_indices(nb, k=1)
    r = lattice.pair_distances(region.bonds[ii], region.bonds[jj])
    w = v0 * (lattice.a / r) ** 6
    cov = np.atleast_2d(np.asarray(coverings)).astype(bool)
    return (cov[:, ii] & cov[:, jj]) @ w


@dataclass(frozen=True)
class ThermalFit:
    beta: float
    intercepts: np.ndarray
    residual: float
    flagged: bool


def thermal_fit(probabilities, energies):
    """Shared inverse temperature from ln p = -beta E + c per subsystem.

    Accepts one distribution or a list of (probabilities, energies) blocks;
    beta is shared, the intercept is per block. Zero-probability entries
    are dropped. When every energy is the same beta is undefined and the
    fit comes back flagged with beta = nan.
    """
    if isinstance(probabilities, (list, tuple)):
        blocks = list(zip(probabilities, energies))
    else:
        blocks = [(probabilities, energies)]
    rows, rhs = [], []
    for s, (probs, ens) in enumerate(blocks):
        probs = np.asarray(probs, dtype=float)
        ens = np.asarray(ens, dtype=float)
        keep = probs > 0
        for e, p in zip(ens[keep], probs[keep]):
            row = np.zeros(1 + len(blocks))
            row[0] = -e
            row[1 + s] = 1.0
            rows.append(row)
            rhs.append(np.log(p))
    design = np.array(rows)
    rhs = np.array(rhs)
    span = np.ptp(design[:, 0])
    if span < 1e-12 * max(1.0, np.abs(design[:, 0]).max()):
        return ThermalFit(float("nan"), np.full(len(blocks), np.nan),
                          float("nan"), True)
    sol, res, _, _ = np.linalg.lstsq(design, rhs, rcond=None)
    residual = float(res[0]) if res.size else 0.0
    return ThermalFit(float(sol[0]), sol[1:], residual, False)


# ---------------------------------------------------------------------------
# nematic order parameter
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NematicResult:
    """Per-snapshot complex order parameter and its angular histogram."""

    phi: np.ndarray
    n_vertices: int
    angle_edges: np.ndarray
    angle_hist: np.ndarray

    @property
    def mean_abs(self):
        return float(np.abs(self.phi).mean())


def nematic_phi(occupations, bond_map, exclude_boundary=True, bins=36):
    """Bond-orientation order parameter per snapshot.

    Each vertex contributes the sum of its three bond occupations weighted
    by the cube roots of unity assigned to the three kagome sublattices, so
    a covering locked to one orientation pushes every vertex onto the same
    phase while orientation-mixed coverings cancel. Vertices touching the
    open boundary are dropped when exclude_boundary is set.
    """
    occ = np.atleast_2d(np.asarray(occupations))
    verts = np.arange(bond_map.n_vertices)
    if exclude_boundary:
        verts = verts[~bond_map.vertex_boundary]
    vb = bond_map.vertex_bonds[verts]
    phase = _SUBLATTICE_PHASE[bond_map.bond_orientation[vb]]
    phi = (occ[:, vb] * phase).sum(axis=(1, 2))
    # balanced orientations sum to zero up to round-off; their angle is
    # undefined, so keep them out of the histogram
    keep = np.abs(phi) > 1e-9 * max(1, verts.size)
    hist, edges = np.histogram(np.angle(phi[keep]),
                               bins=bins, range=(-np.pi, np.pi))
    return NematicResult(phi, int(verts.size), edges, hist)
