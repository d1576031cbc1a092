"""Worm Monte Carlo over perfect dimer coverings of the honeycomb torus.

A covering assigns every vertex exactly one dimer on one of its three bonds.
Because the medial construction labels the three bonds at a vertex by the
global orientation of the underlying kagome site, the slot index of a bond is
the same seen from either endpoint, and a covering is equally a per-vertex
direction array or a bond occupation bitset.

The worm update removes the dimer at a uniformly random tail vertex and lets
the resulting monomer pair wander: at each visited vertex the head reinserts
a dimer in one of the two orientations different from the one it arrived
along (probability 1/2 each, immediate backtracking forbidden), displacing
that vertex's old dimer, until the inserted dimer lands on the tail. Every
intermediate state has exactly two defects, so the per-vertex constraint is
restored the moment the walk closes, and the symmetric proposal leaves the
uniform distribution over coverings stationary. The walk visits 2 l bonds
before closing; the minimal closed walk is the l = 3 hexagon flip, except on
cell grids of width 2 where the double x-wrap creates 4-cycles and l = 2.

Torus dimensions follow the dimer-count convention: a config with dimensions
(lx, ly) builds the kagome cell grid (lx, 3 ly), so every covering carries
exactly 3 lx ly dimers and x separations run to lx / 2. Columnar initial
coverings are the star states: the same alternating matching on every
hexagon of one color class. They maximize the number of flippable
plaquettes, which is two thirds of all plaquettes (each flippable hexagon
owns three dimers and each dimer feeds two hexagons, so F <= 2 P / 3, with
equality exactly on the three star states). Tori whose cell grid is not
3-colorable fall back to the all-one-orientation covering, which is valid
but has no flippable plaquette.

Topological sectors are the dimer parities along the two non-contractible
zigzag loops built by the lattice module. Those loops overlap every hexagon
in an even number of bonds, so contractible loop flips preserve both
parities and only walks with odd winding move between the four sectors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import (BondMap, build_lattice, medial_honeycomb,
                      noncontractible_loops)

# A worm on desk-scale tori closes after a few hundred steps on average;
# hitting this bound means the walk tables are corrupt, not bad luck.
MAX_WORM_DRAWS = 1_000_000

_OTHER_SLOTS = ((1, 2), (0, 2), (0, 1))
_RAND_CHUNK = 1 << 16
_ENUMERATION_CAP = 40

SNAPSHOT_MAGIC = "wormmc-snapshots v1"


@dataclass(frozen=True)
class WormChainConfig:
    """Sampling plan for one chain: torus size, length, seed, thinning."""

    lx: int
    ly: int
    samples: int
    seed: int = 0
    thin: int = 1
    init_variant: int = 0

    def __post_init__(self):
        if self.lx < 2 or self.ly < 1:
            raise ValueError("torus dimensions must be at least 2 x 1")
        if self.samples < 1 or self.thin < 1:
            raise ValueError("samples and thin must be positive")
        if self.init_variant not in (0, 1, 2):
            raise ValueError("init_variant must be 0, 1 or 2")


def torus_bond_map(lx, ly):
    """Bond map of the (lx, 3 ly)-cell honeycomb torus (3 lx ly dimers)."""
    lattice = build_lattice("kagome", (lx, 3 * ly), a=1.0, boundary="periodic")
    return medial_honeycomb(lattice)


@dataclass
class DimerCovering:
    """One perfect covering: bond occupation plus the per-vertex slot view."""

    bond_map: BondMap
    bonds: np.ndarray
    direction: np.ndarray

    def copy(self):
        return DimerCovering(self.bond_map, self.bonds.copy(),
                             self.direction.copy())

    def validate(self):
        bm = self.bond_map
        per_vertex = self.bonds[bm.vertex_bonds].sum(axis=1)
        if not (per_vertex == 1).all():
            raise ValueError("covering violates the one-dimer-per-vertex "
                             "constraint")
        rows = np.arange(bm.n_vertices)
        if not self.bonds[bm.vertex_bonds[rows, self.direction]].all():
            raise ValueError("direction view disagrees with bond view")

    @property
    def n_dimers(self):
        return int(self.bonds.sum())


def _directions_from_bonds(bond_map, bonds):
    hit = bonds[bond_map.vertex_bonds].astype(bool)
    if not (hit.sum(axis=1) == 1).all():
        raise ValueError("bond set is not a perfect covering")
    return np.argmax(hit, axis=1).astype(np.uint8)


def covering_from_bonds(bond_map, bonds):
    bonds = np.asarray(bonds, dtype=np.uint8).copy()
    return DimerCovering(bond_map, bonds, _directions_from_bonds(bond_map, bonds))


def columnar_init(bond_map, variant=0):
    """One of the three maximally flippable (star) coverings.

    variant selects which color class carries the alternating matchings; the
    flippable plaquettes are then the classes {variant, variant + 1 mod 3}.
    On tori without a closed 3-coloring the covering is all bonds of
    orientation ``variant`` instead.
    """
    if variant not in (0, 1, 2):
        raise ValueError("variant must be 0, 1 or 2")
    bonds = np.zeros(bond_map.n_bonds, dtype=np.uint8)
    if bond_map.plaquette_color is not None:
        for p in np.flatnonzero(bond_map.plaquette_color == variant):
            bonds[bond_map.plaquette_bonds[p, 0::2]] = 1
    else:
        bonds[variant::3] = 1
    return DimerCovering(bond_map, bonds,
                         _directions_from_bonds(bond_map, bonds))


def worm_update(covering, rng, validate=False):
    """Run one worm in place; returns the walk length in bonds (2 l).

    The reference scalar implementation of the update rule; chains that need
    throughput go through sample_chain or sample_blocks instead.
    """
    bm = covering.bond_map
    vb = bm.vertex_bonds
    vn = bm.vertex_neighbors
    occ = covering.bonds
    direction = covering.direction
    u0 = int(rng.integers(0, bm.n_vertices))
    l = int(direction[u0])
    occ[vb[u0, l]] = 0
    v = int(vn[u0, l])
    lin = l
    steps = 0
    while True:
        if steps >= MAX_WORM_DRAWS:
            raise RuntimeError("worm failed to close; walk tables corrupt")
        k = _OTHER_SLOTS[lin][int(rng.integers(0, 2))]
        u = int(vn[v, k])
        occ[vb[v, k]] = 1
        direction[v] = k
        steps += 1
        if u == u0:
            direction[u0] = k
            break
        m = int(direction[u])
        occ[vb[u, m]] = 0
        direction[u] = k
        v = int(vn[u, m])
        lin = m
    if validate:
        covering.validate()
    return 2 * steps


def sample_chain(config, bond_map=None):
    """Yield bond-occupation snapshots of one thinned chain.

    Deterministic under config.seed. The chain starts from the columnar
    covering of config.init_variant and emits a copy of the occupation
    after every config.thin worm updates.
    """
    bm = bond_map if bond_map is not None else torus_bond_map(config.lx,
                                                              config.ly)
    n_v = bm.n_vertices
    vb = [tuple(row) for row in bm.vertex_bonds.tolist()]
    vn = [tuple(row) for row in bm.vertex_neighbors.tolist()]
    start = columnar_init(bm, config.init_variant)
    occ = bytearray(start.bonds.tolist())
    direction = bytearray(start.direction.tolist())
    rng = np.random.default_rng(config.seed)
    bits = []
    bi = 0
    tails = []
    ti = 0
    emitted = 0
    while emitted < config.samples:
        for _ in range(config.thin):
            if ti == len(tails):
                tails = rng.integers(0, n_v, size=_RAND_CHUNK).tolist()
                ti = 0
            u0 = tails[ti]
            ti += 1
            l = direction[u0]
            occ[vb[u0][l]] = 0
            v = vn[u0][l]
            lin = l
            steps = 0
            while True:
                if bi == len(bits):
                    bits = rng.integers(0, 2, size=_RAND_CHUNK).tolist()
                    bi = 0
                k = _OTHER_SLOTS[lin][bits[bi]]
                bi += 1
                b = vb[v][k]
                u = vn[v][k]
                occ[b] = 1
                direction[v] = k
                steps += 1
                if u == u0:
                    direction[u0] = k
                    break
                if steps >= MAX_WORM_DRAWS:
                    raise RuntimeError("worm failed to close; walk tables "
                                       "corrupt")
                m = direction[u]
                occ[vb[u][m]] = 0
                direction[u] = k
                v = vn[u][m]
                lin = m
        yield np.frombuffer(bytes(occ), dtype=np.uint8)
        emitted += 1


def sample_blocks(config, chains=256, burn_in=0, bond_map=None,
                  block_size=4096):
    """Yield (k, n_bonds) occupation blocks from many interleaved chains.

    All chains share one seeded stream and advance one worm step per vector
    operation, so large runs cost numpy time instead of interpreter time.
    Each chain applies burn_in updates before its first emission and thins
    by config.thin independently; blocks concatenate whichever chains
    completed an emission, in step order, and the total row count over all
    blocks is exactly config.samples.
    """
    bm = bond_map if bond_map is not None else torus_bond_map(config.lx,
                                                              config.ly)
    n_v, n_b = bm.n_vertices, bm.n_bonds
    vbf = bm.vertex_bonds.astype(np.int64).ravel()
    vnf = bm.vertex_neighbors.astype(np.int64).ravel()
    others = np.array(_OTHER_SLOTS, dtype=np.int64)
    w = int(chains)
    if w < 1:
        raise ValueError("chains must be positive")
    rng = np.random.default_rng(config.seed)
    start = columnar_init(bm, config.init_variant)
    occ = np.tile(start.bonds, (w, 1))
    dirv = np.tile(start.direction.astype(np.int64), (w, 1))
    rows = np.arange(w)
    tail = rng.integers(0, n_v, w)
    l0 = dirv[rows, tail]
    occ[rows, vbf[tail * 3 + l0]] = 0
    head = vnf[tail * 3 + l0]
    lin = l0.copy()
    updates = np.zeros(w, dtype=np.int64)
    emitted = 0
    buffer = []
    buffered = 0
    while emitted < config.samples:
        bits = rng.integers(0, 2, w)
        k = others[lin, bits]
        idx = head * 3 + k
        u = vnf[idx]
        occ[rows, vbf[idx]] = 1
        dirv[rows, head] = k
        done = u == tail
        alive = ~done
        r_a = rows[alive]
        u_a = u[alive]
        m = dirv[r_a, u_a]
        occ[r_a, vbf[u_a * 3 + m]] = 0
        dirv[r_a, u_a] = k[alive]
        head[alive] = vnf[u_a * 3 + m]
        lin[alive] = m
        r_d = rows[done]
        if r_d.size:
            dirv[r_d, tail[done]] = k[done]
            updates[r_d] += 1
            ready = r_d[(updates[r_d] > burn_in)
                        & ((updates[r_d] - burn_in) % config.thin == 0)]
            if ready.size:
                buffer.append(occ[ready].copy())
                buffered += ready.size
            new_tail = rng.integers(0, n_v, r_d.size)
            l_new = dirv[r_d, new_tail]
            occ[r_d, vbf[new_tail * 3 + l_new]] = 0
            head[done] = vnf[new_tail * 3 + l_new]
            lin[done] = l_new
            tail[done] = new_tail
            if buffered >= block_size or buffered >= config.samples - emitted:
                out = np.concatenate(buffer)[:config.samples - emitted]
                emitted += out.shape[0]
                buffer = []
                buffered = 0
                yield out


def integrated_autocorrelation(series, window=6.0):
    """Integrated autocorrelation time by the self-consistent window rule.

    Sums the normalized autocorrelation out to the first lag w >= window *
    tau(w); for an AR(1) process with coefficient rho this converges to
    (1 + rho) / (1 - rho).
    """
    x = np.asarray(series, dtype=float)
    if x.size < 16:
        raise ValueError("series too short for an autocorrelation estimate")
    x = x - x.mean()
    norm = float(x @ x)
    if norm == 0.0:
        return 1.0
    acf = np.correlate(x, x, "full")[x.size - 1:] / norm
    tau = 1.0
    for w in range(1, x.size):
        tau = 1.0 + 2.0 * float(acf[1:w + 1].sum())
        if w >= window * tau:
            break
    return max(tau, 1e-12)


# ---------------------------------------------------------------------------
# topological sectors
# ---------------------------------------------------------------------------

def sector(covering, loops=None, bond_map=None):
    """Z-string parities (+-1, +-1) along the two non-contractible loops."""
    if isinstance(covering, DimerCovering):
        bm = covering.bond_map
        bonds = covering.bonds
    else:
        if bond_map is None:
            raise ValueError("raw occupations need an explicit bond_map")
        bm = bond_map
        bonds = np.asarray(covering)
    if bm.vertex_boundary.any():
        raise ValueError("open lattices have no winding sectors")
    loop_x, loop_y = loops if loops is not None else noncontractible_loops(bm)
    return (int(1 - 2 * (int(bonds[loop_x].sum()) % 2)),
            int(1 - 2 * (int(bonds[loop_y].sum()) % 2)))


def sector_labels(occupations, bond_map, loops=None):
    """Vectorized sector: (n, 2) array of +-1 for a block of snapshots."""
    if bond_map.vertex_boundary.any():
        raise ValueError("open lattices have no winding sectors")
    loop_x, loop_y = loops if loops is not None else noncontractible_loops(
        bond_map)
    occ = np.atleast_2d(np.asarray(occupations))
    out = np.empty((occ.shape[0], 2), dtype=np.int8)
    out[:, 0] = 1 - 2 * (occ[:, loop_x].sum(axis=1) % 2)
    out[:, 1] = 1 - 2 * (occ[:, loop_y].sum(axis=1) % 2)
    return out


# ---------------------------------------------------------------------------
# exhaustive enumeration (oracle-scale tori)
# ---------------------------------------------------------------------------

def enumerate_coverings(bond_map):
    """All perfect coverings as a (count, n_bonds) occupation array."""
    n_v = bond_map.n_vertices
    if n_v > _ENUMERATION_CAP:
        raise ValueError("enumeration is exponential; torus too large")
    vb = bond_map.vertex_bonds.tolist()
    vn = bond_map.vertex_neighbors.tolist()
    covered = [False] * n_v
    occ = [0] * bond_map.n_bonds
    found = []

    def descend(lowest):
        v = lowest
        while v < n_v and covered[v]:
            v += 1
        if v == n_v:
            found.append(tuple(occ))
            return
        covered[v] = True
        for l in range(3):
            u = vn[v][l]
            if not covered[u]:
                covered[u] = True
                occ[vb[v][l]] = 1
                descend(v + 1)
                covered[u] = False
                occ[vb[v][l]] = 0
        covered[v] = False

    descend(0)
    return np.array(found, dtype=np.uint8)


# ---------------------------------------------------------------------------
# plaquette observables and off-diagonal estimators
# ---------------------------------------------------------------------------

def flippable_plaquettes(occupations, bond_map):
    """Boolean (..., n_plaquettes): hexagons carrying an alternating matching."""
    occ = np.asarray(occupations)
    ring = occ[..., bond_map.plaquette_bonds].astype(bool)
    even = ring[..., 0::2].all(axis=-1) & ~ring[..., 1::2].any(axis=-1)
    odd = ring[..., 1::2].all(axis=-1) & ~ring[..., 0::2].any(axis=-1)
    return even | odd


def plaquette_shells(bond_map):
    """(n_plaquettes, 6) outward bonds: each corner's one bond off the ring."""
    shells = np.empty((bond_map.n_plaquettes, 6), dtype=np.int64)
    for p in range(bond_map.n_plaquettes):
        ring = set(bond_map.plaquette_bonds[p].tolist())
        for i, v in enumerate(bond_map.plaquette_vertices[p]):
            out = [b for b in bond_map.vertex_bonds[v].tolist()
                   if b not in ring]
            shells[p, i] = out[0]
    return shells


@dataclass(frozen=True)
class Estimate:
    value: float
    error: float
    n_samples: int
    n_kept: int

    @property
    def kept_fraction(self):
        return self.n_kept / self.n_samples if self.n_samples else 0.0


class PlaquetteFlip:
    """Row sums of the hexagon flip: sum_D' <D|T|D'> = 1 iff D is flippable.

    With several plaquettes the row sums average over them, giving the
    per-plaquette kinetic estimator.
    """

    def __init__(self, plaquettes=None):
        self.plaquettes = plaquettes

    def row_sum(self, occupations, bond_map):
        flip = flippable_plaquettes(occupations, bond_map)
        if self.plaquettes is not None:
            flip = flip[..., np.atleast_1d(self.plaquettes)]
        return flip.mean(axis=-1)


class DiagonalOperator:
    """Diagonal observable; the off-diagonal estimator reduces to its mean."""

    def __init__(self, fn):
        self.fn = fn

    def row_sum(self, occupations, bond_map):
        return np.asarray(self.fn(occupations, bond_map), dtype=float)


def empty_shell(bond_map, plaquette):
    """Postselector keeping snapshots with no dimer on the plaquette shell."""
    shell = plaquette_shells(bond_map)[plaquette]

    def keep(occupations, _bond_map):
        occ = np.asarray(occupations)
        return occ[..., shell].sum(axis=-1) == 0

    return keep


def offdiagonal_estimate(samples, bond_map, operator, postselect=None):
    """Chain average of the operator's dimer-basis row sums.

    samples is any iterable of occupation snapshots or blocks. postselect,
    when given, keeps only rows where it returns True and the estimate is
    conditioned on them. The error is the standard error of the kept rows,
    which is honest once the chain is thinned past its autocorrelation time.
    """
    if not hasattr(operator, "row_sum"):
        raise TypeError("operator must expose row_sum(occupations, bond_map)")
    values = []
    n_total = 0
    n_kept = 0
    for chunk in samples:
        block = np.atleast_2d(np.asarray(chunk))
        n_total += block.shape[0]
        if postselect is not None:
            mask = np.asarray(postselect(block, bond_map), dtype=bool)
            block = block[mask]
        if block.shape[0] == 0:
            continue
        n_kept += block.shape[0]
        values.append(np.asarray(operator.row_sum(block, bond_map),
                                 dtype=float))
    if n_kept == 0:
        raise ValueError("no samples survived postselection")
    vals = np.concatenate([np.atleast_1d(v) for v in values])
    err = float(vals.std(ddof=1) / np.sqrt(vals.size)) if vals.size > 1 else 0.0
    return Estimate(float(vals.mean()), err, n_total, n_kept)


# ---------------------------------------------------------------------------
# snapshot files
# ---------------------------------------------------------------------------

def write_snapshots(path, config, blocks, bond_map=None):
    """Stream coverings to a packed snapshot file.

    Layout: one ASCII header line with the chain parameters and bond count,
    then config.samples rows of ceil(n_bonds / 8) packed bytes each.
    """
    bm = bond_map if bond_map is not None else torus_bond_map(config.lx,
                                                              config.ly)
    header = (f"{SNAPSHOT_MAGIC} lx={config.lx} ly={config.ly} "
              f"seed={config.seed} thin={config.thin} "
              f"init_variant={config.init_variant} "
              f"samples={config.samples} bonds={bm.n_bonds}\n")
    written = 0
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        for chunk in blocks:
            block = np.atleast_2d(np.asarray(chunk, dtype=np.uint8))
            fh.write(np.packbits(block, axis=1).tobytes())
            written += block.shape[0]
    if written != config.samples:
        raise ValueError(f"wrote {written} snapshots, config promised "
                         f"{config.samples}")
    return path


def read_snapshots(path):
    """Read a snapshot file back into (config, (n, n_bonds) occupations)."""
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        payload = fh.read()
    if not header.startswith(SNAPSHOT_MAGIC):
        raise ValueError("not a snapshot file")
    fields = dict(part.split("=") for part in
                  header[len(SNAPSHOT_MAGIC):].split())
    n_bonds = int(fields.pop("bonds"))
    config = WormChainConfig(lx=int(fields["lx"]), ly=int(fields["ly"]),
                             samples=int(fields["samples"]),
                             seed=int(fields["seed"]),
                             thin=int(fields["thin"]),
                             init_variant=int(fields["init_variant"]))
    row_bytes = (n_bonds + 7) // 8
    raw = np.frombuffer(payload, dtype=np.uint8)
    if raw.size != config.samples * row_bytes:
        raise ValueError("snapshot payload truncated")
    rows = np.unpackbits(raw.reshape(config.samples, row_bytes),
                         axis=1)[:, :n_bonds]
    return config, rows
