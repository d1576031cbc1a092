"""Lattice geometries and the kagome-site <-> honeycomb-bond dimer encoding.

Supported kinds: 1D chains and rings, isolated hexagonal plaquettes, kagome
(open or periodic), and honeycomb tori.

Kagome conventions (used consistently by every downstream module):

- primitive vectors A1 = (2a, 0), A2 = (a, sqrt(3) a) for nearest-neighbor
  spacing a; cells indexed (p, q) with 0 <= p < Lx, 0 <= q < Ly;
- three sites per cell at offsets s0 = (0, 0), s1 = (a, 0),
  s2 = (a/2, sqrt(3) a / 2); sublattices A, B, C = s0, s1, s2;
- canonical site ordering is row-major: index = (q * Lx + p) * 3 + s.

Medial honeycomb: kagome sites sit at the midpoints of honeycomb bonds.
Honeycomb vertices are the kagome triangle centroids, up(c) = c + (a/2,
sqrt(3) a / 6) and down(c) = c + (3a/2, -sqrt(3) a / 6); the bond through
site s_l of cell c carries orientation label l and connects

    s0(c): up(c) -- down(c - A1)
    s1(c): up(c) -- down(c)
    s2(c): up(c) -- down(c + A2 - A1)

Hexagonal plaquette h(c) is centered at c + (3a/2, sqrt(3) a / 2) with bonds,
in counter-clockwise order, [s2(c+A1), s1(c+A2), s0(c+A2), s2(c), s1(c),
s0(c+A1)].  Plaquette sublattice labels (a, b, c) = (p + 2q) mod 3 exist
whenever 3 | Lx and 3 | Ly and properly 3-color the triangular plaquette
lattice.

Periodic distances use the minimum-image convention.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

SQRT3 = math.sqrt(3.0)

_KINDS = ("chain", "ring", "hex-plaquettes", "kagome", "honeycomb-torus")


# ---------------------------------------------------------------------------
# lattice spec
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatticeSpec:
    """Immutable geometry record.

    positions   : (N, 2) float array, um
    blockade_graph : (E, 2) int array of nearest-neighbor pairs (i < j)
    cells       : (Lx, Ly) for 2D kinds, None for 1D kinds
    site_cell   : (N, 3) int array of (p, q, s) for kagome, else None
    """

    kind: str
    dimensions: tuple
    a: float
    boundary: str
    positions: np.ndarray
    blockade_graph: np.ndarray
    cells: tuple | None = None
    site_cell: np.ndarray | None = None

    @property
    def n_sites(self):
        return self.positions.shape[0]

    def pair_distance(self, i, j):
        """Distance between sites i and j (minimum image when periodic)."""
        return float(self.pair_distances(np.asarray([i]), np.asarray([j]))[0])

    def pair_distances(self, ii, jj):
        """Vectorized minimum-image distances for index arrays ii, jj."""
        d = self.positions[jj] - self.positions[ii]
        if self.boundary == "periodic":
            d = _min_image(d, self._wrap_vectors())
        return np.linalg.norm(d, axis=1)

    def _wrap_vectors(self):
        if self.kind in ("chain", "ring"):
            n = self.dimensions if isinstance(self.dimensions, int) else self.dimensions[0]
            return [np.array([n * self.a, 0.0])]
        if self.kind in ("kagome", "honeycomb-torus"):
            lx, ly = self.cells
            a1 = np.array([2.0 * self.a, 0.0])
            a2 = np.array([self.a, SQRT3 * self.a])
            return [a1 * lx, a2 * ly]
        return []

    def to_json(self):
        doc = {
            "kind": self.kind,
            "dimensions": list(self.dimensions) if isinstance(self.dimensions, tuple) else self.dimensions,
            "a": self.a,
            "boundary": self.boundary,
            "positions": self.positions.tolist(),
            "blockade_graph": self.blockade_graph.tolist(),
            "cells": list(self.cells) if self.cells else None,
        }
        return json.dumps(doc, indent=1)

    @staticmethod
    def from_json(text):
        doc = json.loads(text)
        dims = doc["dimensions"]
        return build_lattice(
            doc["kind"],
            tuple(dims) if isinstance(dims, list) else dims,
            a=doc["a"],
            boundary=doc["boundary"],
        )


def build_lattice(kind, dimensions, a=1.0, boundary=None):
    """Construct a LatticeSpec with canonical site ordering.

    kind       : one of chain | ring | hex-plaquettes | kagome | honeycomb-torus
    dimensions : site count (1D kinds, plaquette count for hex-plaquettes)
                 or (Lx, Ly) unit cells (2D kinds)
    a          : nearest-neighbor spacing, um
    boundary   : open | periodic; defaults to the natural choice per kind
    """
    if kind not in _KINDS:
        raise ValueError(f"unsupported lattice kind {kind!r}; expected one of {_KINDS}")
    if a <= 0:
        raise ValueError("spacing a must be positive")

    if kind == "chain":
        boundary = boundary or "open"
        n = int(dimensions)
        if n < 1:
            raise ValueError("chain needs at least one site")
        return _build_1d(kind, n, a, boundary)

    if kind == "ring":
        if boundary not in (None, "periodic"):
            raise ValueError("ring is periodic by definition")
        n = int(dimensions)
        if n < 3:
            raise ValueError("ring needs at least three sites")
        return _build_1d(kind, n, a, "periodic")

    if kind == "hex-plaquettes":
        if boundary not in (None, "open"):
            raise ValueError("hex-plaquettes are open by definition")
        count = int(dimensions)
        if count < 1:
            raise ValueError("need at least one plaquette")
        return _build_hex_plaquettes(count, a)

    lx, ly = (int(dimensions[0]), int(dimensions[1]))
    if lx < 1 or ly < 1:
        raise ValueError("cell counts must be positive")
    if kind == "kagome":
        boundary = boundary or "periodic"
        if boundary not in ("open", "periodic"):
            raise ValueError(f"unsupported boundary {boundary!r}")
        return _build_kagome(lx, ly, a, boundary)

    # honeycomb-torus
    if boundary not in (None, "periodic"):
        raise ValueError("honeycomb-torus is periodic by definition")
    return _build_honeycomb_torus(lx, ly, a)


def _min_image(d, wrap_vectors):
    """Fold displacement rows into the minimum-image cell of the wraps."""
    if not wrap_vectors:
        return d
    d = np.atleast_2d(np.array(d, dtype=float, copy=True))
    basis = np.stack(wrap_vectors, axis=1)  # columns
    if basis.shape[0] == basis.shape[1]:
        frac = np.linalg.solve(basis, d.T).T
        d -= np.rint(frac) @ basis.T
    else:
        w = wrap_vectors[0]
        proj = d @ w / (w @ w)
        d -= np.rint(proj)[:, None] * w[None, :]
    # polish over neighboring images (exact for oblique cells)
    shifts = [np.zeros(d.shape[1])]
    for m in (-1, 0, 1):
        for n in (-1, 0, 1):
            if (m, n) == (0, 0):
                continue
            if len(wrap_vectors) == 2:
                shifts.append(m * wrap_vectors[0] + n * wrap_vectors[1])
            elif n == 0:
                shifts.append(m * wrap_vectors[0])
    cand = d[:, None, :] + np.asarray(shifts)[None, :, :]
    best = np.argmin((cand ** 2).sum(axis=2), axis=1)
    return cand[np.arange(d.shape[0]), best]


def _edges_from_positions(positions, a, wrap_vectors):
    """All pairs at distance a (within 1e-9 a), minimum image over wraps."""
    n = positions.shape[0]
    edges = []
    for i in range(n):
        d = _min_image(positions[i + 1:] - positions[i], wrap_vectors)
        dist = np.linalg.norm(d, axis=1)
        for k in np.nonzero(np.abs(dist - a) <= 1e-9 * a)[0]:
            edges.append((i, i + 1 + int(k)))
    return np.asarray(edges, dtype=np.int64).reshape(-1, 2)


def _build_1d(kind, n, a, boundary):
    positions = np.zeros((n, 2))
    positions[:, 0] = a * np.arange(n)
    edges = [(i, i + 1) for i in range(n - 1)]
    if boundary == "periodic" and n > 2:
        edges.append((0, n - 1))
    return LatticeSpec(kind, n, a, boundary, positions,
                       np.asarray(edges, dtype=np.int64).reshape(-1, 2))


def _build_hex_plaquettes(count, a):
    positions = []
    edges = []
    # regular hexagons with side a, spaced far enough that tails never couple
    pitch = 6.0 * a
    for k in range(count):
        base = 6 * k
        cx = pitch * k
        for j in range(6):
            ang = math.pi / 3.0 * j
            positions.append((cx + a * math.cos(ang), a * math.sin(ang)))
        edges.extend((base + j, base + (j + 1) % 6) for j in range(6))
    edges = np.asarray([(min(i, j), max(i, j)) for i, j in edges], dtype=np.int64)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    return LatticeSpec("hex-plaquettes", count, a, "open",
                       np.asarray(positions), edges[order])


def _kagome_positions(lx, ly, a):
    a1 = np.array([2.0 * a, 0.0])
    a2 = np.array([a, SQRT3 * a])
    offsets = np.array([[0.0, 0.0], [a, 0.0], [0.5 * a, 0.5 * SQRT3 * a]])
    positions = np.empty((3 * lx * ly, 2))
    site_cell = np.empty((3 * lx * ly, 3), dtype=np.int64)
    for q in range(ly):
        for p in range(lx):
            cell = q * lx + p
            origin = p * a1 + q * a2
            for s in range(3):
                idx = cell * 3 + s
                positions[idx] = origin + offsets[s]
                site_cell[idx] = (p, q, s)
    return positions, site_cell


def _build_kagome(lx, ly, a, boundary):
    positions, site_cell = _kagome_positions(lx, ly, a)
    if boundary == "periodic":
        wraps = [np.array([2.0 * a * lx, 0.0]), np.array([a * ly, SQRT3 * a * ly])]
    else:
        wraps = []
    edges = _edges_from_positions(positions, a, wraps)
    return LatticeSpec("kagome", (lx, ly), a, boundary, positions, edges,
                       cells=(lx, ly), site_cell=site_cell)


def _build_honeycomb_torus(lx, ly, a_nn):
    # scale so honeycomb bond length equals the requested spacing
    a = a_nn * SQRT3 / 2.0
    a1 = np.array([2.0 * a, 0.0])
    a2 = np.array([a, SQRT3 * a])
    up = np.array([0.5 * a, SQRT3 * a / 6.0])
    down = np.array([1.5 * a, -SQRT3 * a / 6.0])
    positions = np.empty((2 * lx * ly, 2))
    for q in range(ly):
        for p in range(lx):
            cell = q * lx + p
            origin = p * a1 + q * a2
            positions[cell] = origin + up
            positions[lx * ly + cell] = origin + down
    wraps = [a1 * lx, a2 * ly]
    edges = _edges_from_positions(positions, a_nn, wraps)
    spec = LatticeSpec("honeycomb-torus", (lx, ly), a_nn, "periodic",
                       positions, edges, cells=(lx, ly))
    return spec


# ---------------------------------------------------------------------------
# medial honeycomb bond map
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BondMap:
    """Kagome-site <-> honeycomb-bond incidence for a kagome lattice.

    Honeycomb vertices are indexed [up(0..C-1), down(0..C-1)] with cell
    c = q * Lx + p; bonds are indexed by kagome site.  Boundary entries are -1
    on open lattices.

    vertex_bonds       : (V, 3) bond through slot l in {0,1,2} (= site s_l)
    vertex_neighbors   : (V, 3) opposite vertex across slot l
    vertex_plaquettes  : (V, 3) the three touching hexagons
    opposite_plaquette : (V, 3) hexagon at the vertex NOT containing slot-l bond
    bond_vertices      : (B, 2) [up-side, down-side] endpoints
    bond_plaquettes    : (B, 2) the two hexagons containing the bond
    plaquette_bonds    : (P, 6) counter-clockwise bond ring
    plaquette_vertices : (P, 6) counter-clockwise corner ring
    plaquette_color    : (P,) labels in {0,1,2} or None when 3-coloring
                         does not close on the torus (Lx or Ly not divisible by 3)
    """

    lattice: LatticeSpec
    cells: tuple
    vertex_pos: np.ndarray
    vertex_bonds: np.ndarray
    vertex_neighbors: np.ndarray
    vertex_plaquettes: np.ndarray
    opposite_plaquette: np.ndarray
    vertex_parity: np.ndarray
    bond_vertices: np.ndarray
    bond_plaquettes: np.ndarray
    bond_orientation: np.ndarray
    kagome_sublattice: np.ndarray
    plaquette_bonds: np.ndarray
    plaquette_vertices: np.ndarray
    plaquette_center: np.ndarray
    plaquette_color: np.ndarray | None
    vertex_boundary: np.ndarray
    plaquette_boundary: np.ndarray

    @property
    def n_vertices(self):
        return self.vertex_bonds.shape[0]

    @property
    def n_bonds(self):
        return self.bond_vertices.shape[0]

    @property
    def n_plaquettes(self):
        return self.plaquette_bonds.shape[0]


def medial_honeycomb(kagome: LatticeSpec) -> BondMap:
    """Map a kagome lattice onto honeycomb vertices/bonds/plaquettes."""
    if kagome.kind != "kagome":
        raise ValueError("medial_honeycomb requires a kagome lattice")
    lx, ly = kagome.cells
    a = kagome.a
    periodic = kagome.boundary == "periodic"
    ncells = lx * ly

    def cell(p, q):
        if periodic:
            return (q % ly) * lx + (p % lx)
        if 0 <= p < lx and 0 <= q < ly:
            return q * lx + p
        return -1

    def site(p, q, s):
        c = cell(p, q)
        return -1 if c < 0 else 3 * c + s

    a1 = np.array([2.0 * a, 0.0])
    a2 = np.array([a, SQRT3 * a])
    up_off = np.array([0.5 * a, SQRT3 * a / 6.0])
    down_off = np.array([1.5 * a, -SQRT3 * a / 6.0])
    hex_off = np.array([1.5 * a, 0.5 * SQRT3 * a])

    nv = 2 * ncells
    vertex_pos = np.empty((nv, 2))
    vertex_bonds = np.full((nv, 3), -1, dtype=np.int64)
    vertex_neighbors = np.full((nv, 3), -1, dtype=np.int64)
    vertex_plaquettes = np.full((nv, 3), -1, dtype=np.int64)
    opposite_plaquette = np.full((nv, 3), -1, dtype=np.int64)
    vertex_parity = np.zeros(nv, dtype=np.int64)
    vertex_parity[ncells:] = 1

    nb = 3 * ncells
    bond_vertices = np.full((nb, 2), -1, dtype=np.int64)
    bond_plaquettes = np.full((nb, 2), -1, dtype=np.int64)
    bond_orientation = np.tile(np.arange(3, dtype=np.int64), ncells)
    kagome_sublattice = bond_orientation.copy()

    plaquette_bonds = np.full((ncells, 6), -1, dtype=np.int64)
    plaquette_vertices = np.full((ncells, 6), -1, dtype=np.int64)
    plaquette_center = np.empty((ncells, 2))

    for q in range(ly):
        for p in range(lx):
            c = q * lx + p
            origin = p * a1 + q * a2
            up, down = c, ncells + c
            vertex_pos[up] = origin + up_off
            vertex_pos[down] = origin + down_off
            plaquette_center[c] = origin + hex_off

            # bonds through up(c): slots l = site s_l(c)
            vertex_bonds[up] = (3 * c, 3 * c + 1, 3 * c + 2)
            dn0 = cell(p - 1, q)
            dn2 = cell(p - 1, q + 1)
            vertex_neighbors[up] = (
                -1 if dn0 < 0 else ncells + dn0,
                down,
                -1 if dn2 < 0 else ncells + dn2,
            )
            vertex_plaquettes[up] = (c, cell(p - 1, q), cell(p, q - 1))
            opposite_plaquette[up] = (c, cell(p - 1, q), cell(p, q - 1))

            # bonds through down(c): slots l = s0(c+A1), s1(c), s2(c+A1-A2)
            vertex_bonds[down] = (site(p + 1, q, 0), 3 * c + 1, site(p + 1, q - 1, 2))
            up0 = cell(p + 1, q)
            up2 = cell(p + 1, q - 1)
            vertex_neighbors[down] = (
                -1 if up0 < 0 else up0,
                up,
                -1 if up2 < 0 else up2,
            )
            vertex_plaquettes[down] = (c, cell(p, q - 1), cell(p + 1, q - 1))
            opposite_plaquette[down] = (cell(p, q - 1), cell(p + 1, q - 1), c)

            # bond endpoints and containing hexagons
            bond_vertices[3 * c + 0] = (up, -1 if dn0 < 0 else ncells + dn0)
            bond_vertices[3 * c + 1] = (up, down)
            bond_vertices[3 * c + 2] = (up, -1 if dn2 < 0 else ncells + dn2)
            bond_plaquettes[3 * c + 0] = (cell(p - 1, q), cell(p, q - 1))
            bond_plaquettes[3 * c + 1] = (c, cell(p, q - 1))
            bond_plaquettes[3 * c + 2] = (c, cell(p - 1, q))

            # hexagon h(c), counter-clockwise from angle 0
            plaquette_bonds[c] = (
                site(p + 1, q, 2), site(p, q + 1, 1), site(p, q + 1, 0),
                3 * c + 2, 3 * c + 1, site(p + 1, q, 0),
            )
            # corners ccw starting just below angle 0
            plaquette_vertices[c] = (
                -1 if cell(p + 1, q) < 0 else cell(p + 1, q),          # up(c+A1)
                -1 if cell(p, q + 1) < 0 else ncells + cell(p, q + 1),  # down(c+A2)
                -1 if cell(p, q + 1) < 0 else cell(p, q + 1),          # up(c+A2)
                -1 if cell(p - 1, q + 1) < 0 else ncells + cell(p - 1, q + 1),  # down(c+A2-A1)
                c,                                                      # up(c)
                ncells + c,                                             # down(c)
            )

    if periodic and lx % 3 == 0 and ly % 3 == 0:
        color = np.empty(ncells, dtype=np.int64)
        for q in range(ly):
            for p in range(lx):
                color[q * lx + p] = (p + 2 * q) % 3
    else:
        color = None

    vertex_boundary = (vertex_bonds < 0).any(axis=1) | (vertex_neighbors < 0).any(axis=1)
    plaquette_boundary = (plaquette_bonds < 0).any(axis=1) | (plaquette_vertices < 0).any(axis=1)

    return BondMap(
        lattice=kagome, cells=(lx, ly), vertex_pos=vertex_pos,
        vertex_bonds=vertex_bonds, vertex_neighbors=vertex_neighbors,
        vertex_plaquettes=vertex_plaquettes, opposite_plaquette=opposite_plaquette,
        vertex_parity=vertex_parity, bond_vertices=bond_vertices,
        bond_plaquettes=bond_plaquettes, bond_orientation=bond_orientation,
        kagome_sublattice=kagome_sublattice, plaquette_bonds=plaquette_bonds,
        plaquette_vertices=plaquette_vertices, plaquette_center=plaquette_center,
        plaquette_color=color, vertex_boundary=vertex_boundary,
        plaquette_boundary=plaquette_boundary,
    )


# ---------------------------------------------------------------------------
# interactions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InteractionTable:
    """Pairwise van der Waals couplings V_ij = V0 (a / r_ij)^6, angular units.

    pairs : (M, 2) int array; values : (M,) angular rad/us; symmetric by
    construction (each unordered pair stored once with i < j).
    """

    v0: float
    mode: str
    r_trunc: float | None
    pairs: np.ndarray
    values: np.ndarray

    def as_dict(self):
        return {(int(i), int(j)): float(v)
                for (i, j), v in zip(self.pairs, self.values)}


def interaction_table(lattice, v0, mode="full", r_trunc=None):
    """Tabulate vdW couplings for the requested mode.

    mode = full      : every site pair
    mode = pxp       : empty table (blockade handled by the basis)
    mode = pxp+tails : pairs with a < r <= R_trunc (default sqrt(7) a)
    """
    if v0 <= 0:
        raise ValueError("V0 must be positive")
    if mode not in ("full", "pxp", "pxp+tails"):
        raise ValueError(f"unsupported interaction mode {mode!r}")

    a = lattice.a
    if mode == "pxp":
        return InteractionTable(v0, mode, None, np.empty((0, 2), dtype=np.int64),
                                np.empty(0))
    if r_trunc is None:
        r_trunc = math.sqrt(7.0) * a

    n = lattice.n_sites
    ii, jj = np.triu_indices(n, k=1)
    dist = lattice.pair_distances(ii, jj)
    if mode == "pxp+tails":
        keep = (dist > a * (1 + 1e-9)) & (dist <= r_trunc * (1 + 1e-9))
    else:
        keep = np.ones(dist.shape, dtype=bool)
    pairs = np.stack([ii[keep], jj[keep]], axis=1).astype(np.int64)
    values = v0 * (a / dist[keep]) ** 6
    return InteractionTable(v0, mode, r_trunc if mode == "pxp+tails" else None,
                            pairs, values)


# ---------------------------------------------------------------------------
# non-contractible loops
# ---------------------------------------------------------------------------

def noncontractible_loops(bondmap: BondMap):
    """Two closed bond paths winding once around each torus direction.

    Returns (loop_x, loop_y) as bond-id lists.  loop_x alternates the s1/s0
    bonds of row q = 0; loop_y alternates the s2/s0 bonds of column p = 0.
    Both are zigzag vertex paths on the honeycomb; they overlap every hexagon
    an even number of times, so their dimer parities are conserved by any
    contractible loop flip.  The two canonical loops share exactly one bond
    (s0 of cell (0, 0)); on a cubic graph a fully bond-disjoint crossing pair
    does not exist.
    """
    if bondmap.lattice.boundary != "periodic":
        raise ValueError("non-contractible loops require a periodic lattice")
    lx, ly = bondmap.cells

    loop_x = []
    for k in range(lx):
        loop_x.append(3 * k + 1)                       # s1(k, 0)
        loop_x.append(3 * ((k + 1) % lx))              # s0(k+1, 0)
    loop_y = []
    for k in range(ly):
        loop_y.append(3 * (k * lx) + 2)                # s2(0, k)
        loop_y.append(3 * (((k + 1) % ly) * lx))       # s0(0, k+1)
    return np.asarray(loop_x, dtype=np.int64), np.asarray(loop_y, dtype=np.int64)


if __name__ == "__main__":
    spec = build_lattice("kagome", (3, 3), a=1.0, boundary="periodic")
    bm = medial_honeycomb(spec)
    print(f"kagome 3x3: {spec.n_sites} sites, {len(spec.blockade_graph)} edges")
    print(f"medial: {bm.n_vertices} vertices, {bm.n_bonds} bonds, {bm.n_plaquettes} plaquettes")
