"""Dimer correlators on torus snapshot ensembles.

Three families, all estimated from bond-occupation snapshots with bootstrap
errors over the sample axis:

- connected dimer-dimer correlators, pooled either along rows (column
  separation bins) or radially (euclidean-distance bins with an optional
  per-displacement-class sign table),
- string correlators between hexagon centers, built from a pair of
  inversion-related dual paths whose union is a closed loop; the loop
  expectation normalizes the signed geometric mean of the two open-string
  expectations, which suppresses isolated defects,
- phase-rectified combinations of both.  The vertex operator attaches a
  third-root-of-unity phase to each bond, set by the color its two hexagons
  are missing relative to the vertex's own cell; the string version sums the
  nine hexagon-pair strings with global color phases.  Both take the exact
  value 4 at zero separation on defect-free coverings, and their moduli
  expose the critical envelope with the crystalline winding removed.

Everything here assumes a periodic bond map: open boundaries have no dual
paths to wrap and no winding sectors to condition on.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .wormmc import columnar_init, sector_labels

N_BOOTSTRAP = 20
_OMEGA = np.exp(2j * np.pi / 3.0)
_CHUNK = 4096

# dual steps on the hexagon-center (triangular) lattice, as
# (dp, dq) -> (cell offset, slot) of the crossed bond
_DUAL_STEPS = {
    (1, 0): (1, 0, 2),
    (-1, 0): (0, 0, 2),
    (0, 1): (0, 1, 1),
    (0, -1): (0, 0, 1),
    (1, -1): (1, 0, 0),
    (-1, 1): (0, 1, 0),
}


@dataclass(frozen=True)
class CorrelatorEstimate:
    """Binned correlator with bootstrap errors.

    ``bins`` are column separations (cells) for row-restricted estimates and
    euclidean distances for radial ones.  ``flagged`` marks bins whose
    normalization broke down (value is nan there).
    """

    bins: np.ndarray
    values: np.ndarray
    errors: np.ndarray
    n_samples: int
    restriction: str
    normalization: str
    flagged: np.ndarray = field(default=None)

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=float)
        if bins.ndim != 1 or (np.diff(bins) <= 0).any():
            raise ValueError("bins must be strictly increasing")
        errs = np.asarray(self.errors, dtype=float)
        if (errs[np.isfinite(errs)] < 0).any():
            raise ValueError("errors must be nonnegative")
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "values", np.asarray(self.values))
        object.__setattr__(self, "errors", errs)
        if self.flagged is None:
            object.__setattr__(self, "flagged",
                               np.zeros(bins.size, dtype=bool))
        else:
            object.__setattr__(self, "flagged",
                               np.asarray(self.flagged, dtype=bool))


@dataclass(frozen=True)
class RectifiedOperators:
    """Phase tables for the rectified vertex and string operators.

    One row per up vertex (these sit on the triangular lattice of cells).
    ``bond_phases[v, k]`` multiplies the bond ``bonds[v, k]`` spin in the
    vertex operator; ``plaquette_phases[v, k]`` weights the string anchored
    at hexagon ``plaquettes[v, k]``.
    """

    bonds: np.ndarray
    bond_phases: np.ndarray
    plaquettes: np.ndarray
    plaquette_phases: np.ndarray
    omega: complex = _OMEGA


@dataclass(frozen=True)
class RatioCheck:
    """Per-bin ratio of log-magnitudes plus a single fitted slope."""

    bins: np.ndarray
    ratios: np.ndarray
    slope: float
    intercept: float
    window: tuple


@dataclass(frozen=True)
class ScalingFit:
    """Least-squares fit of a correlator tail.

    ``value`` is the exponent for the power model and the decay length for
    the exponential one.  ``delta_m`` is the scaling dimension implied by
    the decay length on a cylinder of circumference ``l_y``; ``lake_size``
    inverts the same relation for a given vortex charge (stiffness one);
    ``stiffness`` converts a power-law exponent back to the coupling.
    """

    model: str
    value: float
    error: float
    residual: float
    n_bins: int
    delta_m: float = None
    lake_size: float = None
    stiffness: float = None


# ---------------------------------------------------------------------------
# geometry helpers


def _require_torus(bond_map):
    if bond_map.vertex_boundary.any():
        raise ValueError("correlators need a periodic bond map")


def _cell_index(lx, ly, p, q):
    return (q % ly) * lx + (p % lx)


def _basis_vectors(bond_map):
    lx, ly = bond_map.cells
    pos = bond_map.lattice.positions
    a1 = pos[3 * _cell_index(lx, ly, 1, 0)] - pos[0]
    a2 = pos[3 * _cell_index(lx, ly, 0, 1)] - pos[0]
    return a1, a2


def _min_image_distance(disp, wrap_x, wrap_y):
    best = None
    for wp in (-1, 0, 1):
        for wq in (-1, 0, 1):
            r = float(np.hypot(*(disp + wp * wrap_x + wq * wrap_y)))
            if best is None or r < best:
                best = r
    return best


def _path_bonds(bond_map, p, q, steps):
    lx, ly = bond_map.cells
    out = []
    for dp, dq in steps:
        op, oq, s = _DUAL_STEPS[(dp, dq)]
        out.append(3 * _cell_index(lx, ly, p + op, q + oq) + s)
        p, q = p + dp, q + dq
    return out


def _steps_between(dp, dq):
    """Canonical dual path from (0,0) to (dp,dq).

    Row displacements zigzag above the row so the reversed step order gives
    a distinct inversion-related partner; the two paths then close into a
    lens-shaped loop.
    """
    if dq == 0:
        if dp == 0:
            return []
        if dp < 0:
            raise ValueError("row paths run in +p direction")
        return [(0, 1)] + [(1, -1), (0, 1)] * (dp - 1) + [(1, -1)]
    steps = []
    if dq > 0:
        steps += [(0, 1)] * dq
    else:
        steps += [(1, -1)] * (-dq)
        dp -= -dq
    steps += [(1, 0)] * dp if dp >= 0 else [(-1, 0)] * (-dp)
    return steps


def string_geometry(bond_map, anchor, displacement):
    """Bond index triple (path, partner, loop) for one hexagon pair.

    ``anchor`` is the (p, q) cell of the starting hexagon and
    ``displacement`` the (dp, dq) offset to the ending one.  The partner is
    the inversion image of the path (reversed step order); the loop is the
    symmetric difference of the two, with any shared bonds dropped since
    they square to the identity.
    """
    _require_torus(bond_map)
    steps = _steps_between(*displacement)
    b1 = _path_bonds(bond_map, anchor[0], anchor[1], steps)
    b2 = _path_bonds(bond_map, anchor[0], anchor[1], list(reversed(steps)))
    counts = Counter(b1) + Counter(b2)
    loop = sorted(b for b, k in counts.items() if k % 2 == 1)
    return np.asarray(b1, dtype=np.int64), np.asarray(b2, dtype=np.int64), \
        np.asarray(loop, dtype=np.int64)


# ---------------------------------------------------------------------------
# shared estimator plumbing


def _select_rows(occupations, bond_map, sector):
    occ = np.atleast_2d(np.asarray(occupations))
    if sector is not None:
        labels = sector_labels(occ, bond_map)
        keep = (labels[:, 0] == sector[0]) & (labels[:, 1] == sector[1])
        occ = occ[keep]
        if occ.shape[0] == 0:
            raise ValueError(f"no snapshots in sector {tuple(sector)}")
    return occ


def _bootstrap_weights(n, n_boot, seed):
    rng = np.random.default_rng(seed)
    return rng.multinomial(n, np.full(n, 1.0 / n),
                           size=n_boot).astype(np.float64)


def _parity_signs(occupations, masks):
    """(n, A) products of sigma_z over each mask row; empty masks give +1."""
    m = np.asarray(masks)
    if m.size == 0:
        return np.ones((occupations.shape[0], max(m.shape[0], 1)))
    cnt = occupations[:, m].sum(axis=2).astype(np.int64)
    return np.where((m.shape[1] - cnt) % 2 == 0, 1.0, -1.0)


def _cross_maps(fields_a, fields_b, ncells):
    fa = np.fft.fft2(fields_a)
    fb = fa if fields_b is fields_a else np.fft.fft2(fields_b)
    return np.fft.ifft2(np.conj(fa)[:, :, None] * fb[:, None]) / ncells


# ---------------------------------------------------------------------------
# dimer-dimer


def _dimer_class_cube(occupations, bond_map):
    """Connected correlator for every (s1, s2, dq, dp) displacement class."""
    lx, ly = bond_map.cells
    ncells = lx * ly
    n = occupations.shape[0]
    term1 = np.zeros((3, 3, ly, lx))
    mean_field = np.zeros((3, ly, lx))
    for lo in range(0, n, _CHUNK):
        chunk = occupations[lo:lo + _CHUNK]
        sz = (2.0 * chunk - 1.0).reshape(-1, ly, lx, 3).transpose(0, 3, 1, 2)
        term1 += _cross_maps(sz, sz, ncells).real.sum(axis=0)
        mean_field += sz.sum(axis=0)
    term1 /= n
    mean_field /= n
    m = np.fft.fft2(mean_field)
    term2 = np.fft.ifft2(np.conj(m)[:, None] * m[None]).real / ncells
    return term1 - term2


def _radial_bins(bond_map, include_zero=False):
    """Map displacement classes to distance bins.

    Returns (bins, index cube) where the cube is (3, 3, ly, lx) of bin ids,
    -1 for excluded classes.
    """
    lx, ly = bond_map.cells
    a1, a2 = _basis_vectors(bond_map)
    off = bond_map.lattice.positions[:3]
    wrap_x, wrap_y = lx * a1, ly * a2
    keys = np.empty((3, 3, ly, lx))
    for s1 in range(3):
        for s2 in range(3):
            for dq in range(ly):
                for dp in range(lx):
                    disp = off[s2] - off[s1] + dp * a1 + dq * a2
                    keys[s1, s2, dq, dp] = round(
                        _min_image_distance(disp, wrap_x, wrap_y), 5)
    bins = np.unique(keys)
    if not include_zero:
        bins = bins[bins > 1e-9]
    index = np.searchsorted(bins, keys)
    index[(index >= bins.size) | ~np.isclose(
        bins[np.minimum(index, bins.size - 1)], keys)] = -1
    return bins, index.astype(np.int64)


def rectification_signs(occupations, bond_map, sector=None):
    """Ideal-state sign per displacement class, from reference snapshots.

    Radial pooling of the connected dimer-dimer correlator mixes classes of
    opposite sign at equal distance; multiplying each class by the sign it
    takes in the defect-free ensemble makes the pooled magnitude meaningful.
    Keys are (s1, s2, dp, dq).
    """
    _require_torus(bond_map)
    occ = _select_rows(occupations, bond_map, sector)
    cube = _dimer_class_cube(occ, bond_map)
    lx, ly = bond_map.cells
    table = {}
    for s1 in range(3):
        for s2 in range(3):
            for dq in range(ly):
                for dp in range(lx):
                    v = cube[s1, s2, dq, dp]
                    table[(s1, s2, dp, dq)] = 1.0 if v >= 0 else -1.0
    return table


def dimer_dimer(occupations, bond_map, restriction="radial", signs=None,
                sector=None, n_boot=N_BOOTSTRAP, seed=0):
    """Connected dimer-dimer correlator, pooled into separation bins.

    ``restriction`` is "radial" (euclidean-distance bins over all site
    pairs, optionally sign-rectified through ``signs``) or "same-row"
    (column-separation bins over hexagon rows).  ``sector`` restricts to
    snapshots with the given pair of winding parities.
    """
    _require_torus(bond_map)
    if restriction not in ("radial", "same-row"):
        raise ValueError(f"unknown restriction {restriction!r}")
    occ = _select_rows(occupations, bond_map, sector).astype(np.float64)
    n = occ.shape[0]
    lx, ly = bond_map.cells
    ncells = lx * ly

    if restriction == "radial":
        bins, index = _radial_bins(bond_map)
    else:
        bins = np.arange(1, lx // 2 + 1, dtype=float)
        index = np.full((3, 3, ly, lx), -1, dtype=np.int64)
        for s1 in range(3):
            for s2 in range(3):
                for dp in range(1, lx):
                    index[s1, s2, 0, dp] = min(dp, lx - dp) - 1

    # per-class weights: sign / class count within the bin
    weight = np.zeros((3, 3, ly, lx))
    counts = np.bincount(index[index >= 0].ravel(), minlength=bins.size)
    for s1 in range(3):
        for s2 in range(3):
            for dq in range(ly):
                for dp in range(lx):
                    b = index[s1, s2, dq, dp]
                    if b < 0:
                        continue
                    sgn = 1.0
                    if signs is not None:
                        sgn = signs[(s1, s2, dp, dq)]
                    weight[s1, s2, dq, dp] = sgn / counts[b]

    # per-sample binned pair products, plus running mean fields for the
    # subtraction term
    xs = np.zeros((n, bins.size))
    onehot = np.zeros((9 * ncells, bins.size))
    flat_idx = index.reshape(-1)
    flat_w = weight.reshape(-1)
    ok = flat_idx >= 0
    onehot[np.flatnonzero(ok), flat_idx[ok]] = flat_w[ok]
    mean_field = np.zeros((3, ly, lx))
    for lo in range(0, n, _CHUNK):
        chunk = occ[lo:lo + _CHUNK]
        sz = (2.0 * chunk - 1.0).reshape(-1, ly, lx, 3).transpose(0, 3, 1, 2)
        cross = _cross_maps(sz, sz, ncells).real
        xs[lo:lo + chunk.shape[0]] = cross.reshape(
            chunk.shape[0], -1) @ onehot
        mean_field += sz.sum(axis=0)

    def term2_bins(field):
        m = np.fft.fft2(field)
        cross = (np.fft.ifft2(np.conj(m)[:, None] * m[None]).real / ncells)
        return cross.reshape(-1) @ onehot

    values = xs.mean(axis=0) - term2_bins(mean_field / n)

    weights = _bootstrap_weights(n, n_boot, seed)
    boots = np.empty((n_boot, bins.size))
    sz_flat = 2.0 * occ - 1.0
    for b in range(n_boot):
        w = weights[b]
        t1 = (w @ xs) / n
        mf = ((w @ sz_flat) / n).reshape(ly, lx, 3).transpose(2, 0, 1)
        boots[b] = t1 - term2_bins(mf)
    errors = boots.std(axis=0, ddof=1)

    tag = restriction if sector is None else f"{restriction}|sector"
    return CorrelatorEstimate(
        bins=bins, values=values, errors=errors, n_samples=n,
        restriction=tag,
        normalization="connected" + ("|rectified" if signs else ""))


# ---------------------------------------------------------------------------
# dimer-string


def _string_sums(occ, bond_map, displacement):
    """Per-sample anchor-pooled sums for (path, partner, loop).

    Also returns the loop parity on a reference covering: closed dual loops
    take a covering-independent value fixed by the enclosed vertex count,
    so one defect-free covering determines the ideal sign.
    """
    lx, ly = bond_map.cells
    n = occ.shape[0]
    ref = columnar_init(bond_map).bonds[None, :].astype(np.float64)
    sums = np.zeros((3, n))
    masks = [[], [], []]
    for q in range(ly):
        for p in range(lx):
            trio = string_geometry(bond_map, (p, q), displacement)
            for k in range(3):
                masks[k].append(trio[k])
    for k in range(3):
        sums[k] = _parity_signs(occ, np.asarray(masks[k])).sum(axis=1)
    ideal = np.unique(_parity_signs(ref, np.asarray(masks[2])))
    if ideal.size != 1:
        raise ValueError("loop parity is not translation invariant")
    return sums, float(ideal[0]), lx * ly


def _combine_string(m1, m2, ml):
    prod = m1 * m2
    if ml <= 0 or prod < 0:
        return np.nan, True
    return np.sign(m1) * np.sqrt(prod) / np.sqrt(ml), False


def dimer_string(occupations, bond_map, separations=None, sector=None,
                 n_boot=N_BOOTSTRAP, seed=0):
    """String correlator between same-row hexagons, loop normalized.

    For each column separation the two inversion-related dual paths are
    averaged over anchors and samples, combined as the signed geometric
    mean, and divided by the root of the closed-loop expectation.  Bins
    where the loop expectation is nonpositive (or the two path expectations
    disagree in sign) are flagged and set to nan.  Separations may exceed
    half the torus: the paths wrap, they are not min-imaged.
    """
    _require_torus(bond_map)
    occ = _select_rows(occupations, bond_map, sector).astype(np.float64)
    n = occ.shape[0]
    lx, _ = bond_map.cells
    if separations is None:
        separations = np.arange(0, lx)
    separations = np.asarray(separations, dtype=np.int64)
    if (np.diff(separations) <= 0).any():
        raise ValueError("separations must be strictly increasing")

    weights = _bootstrap_weights(n, n_boot, seed)
    values = np.empty(separations.size)
    errors = np.empty(separations.size)
    flagged = np.zeros(separations.size, dtype=bool)
    for j, r in enumerate(separations):
        sums, ideal, n_anchors = _string_sums(occ, bond_map, (int(r), 0))
        if ideal < 0:
            # inversion-symmetric lens loops enclose an even number of
            # vertices, so this only triggers on malformed geometry
            values[j], errors[j], flagged[j] = np.nan, np.nan, True
            continue
        scale = n * n_anchors
        values[j], flagged[j] = _combine_string(
            sums[0].sum() / scale, sums[1].sum() / scale,
            sums[2].sum() / scale)
        boots = np.empty(n_boot)
        for b in range(n_boot):
            w = weights[b]
            boots[b], bad = _combine_string(
                (w @ sums[0]) / scale, (w @ sums[1]) / scale,
                (w @ sums[2]) / scale)
            flagged[j] |= bad
        errors[j] = np.nan if flagged[j] else boots.std(ddof=1)

    tag = "same-row" if sector is None else "same-row|sector"
    return CorrelatorEstimate(
        bins=separations.astype(float), values=values, errors=errors,
        n_samples=n, restriction=tag, normalization="loop-normalized",
        flagged=flagged)


# ---------------------------------------------------------------------------
# rectified correlators


def rectified_operators(bond_map):
    """Phase tables for the rectified operators on up vertices.

    Each bond at an up vertex gets omega to the power of the hexagon color
    absent from its two hexagons, measured relative to the vertex's own
    cell color; this removes the crystalline winding so the correlator
    modulus decays monotonically.  Strings anchored at the three hexagons
    around a vertex carry the global color phases.
    """
    _require_torus(bond_map)
    color = bond_map.plaquette_color
    if color is None:
        raise ValueError("rectified operators need a 3-colorable torus")
    lx, ly = bond_map.cells
    ncells = lx * ly
    bonds = np.arange(3 * ncells, dtype=np.int64).reshape(ncells, 3)
    pair_colors = color[bond_map.bond_plaquettes]
    missing = (3 - pair_colors.sum(axis=1) % 3) % 3
    own = color[np.arange(ncells)]
    bond_phases = _OMEGA ** ((missing[bonds] - own[:, None]) % 3)
    plaquettes = bond_map.vertex_plaquettes[:ncells]
    plaquette_phases = _OMEGA ** color[plaquettes]
    return RectifiedOperators(bonds=bonds, bond_phases=bond_phases,
                              plaquettes=plaquettes,
                              plaquette_phases=plaquette_phases)


def _rectified_dimer(occ, bond_map, restriction, n_boot, seed):
    lx, ly = bond_map.cells
    ncells = lx * ly
    n = occ.shape[0]
    ops = rectified_operators(bond_map)

    if restriction == "radial":
        a1, a2 = _basis_vectors(bond_map)
        wrap_x, wrap_y = lx * a1, ly * a2
        keys = np.empty((ly, lx))
        for dq in range(ly):
            for dp in range(lx):
                keys[dq, dp] = round(_min_image_distance(
                    dp * a1 + dq * a2, wrap_x, wrap_y), 5)
        bins = np.unique(keys)
        index = np.searchsorted(bins, keys)
    else:
        bins = np.arange(0, lx // 2 + 1, dtype=float)
        index = np.full((ly, lx), -1, dtype=np.int64)
        index[0, :lx // 2 + 1] = np.arange(lx // 2 + 1)

    onehot = np.zeros((ncells, bins.size), dtype=complex)
    flat = index.reshape(-1)
    ok = flat >= 0
    counts = np.bincount(flat[ok], minlength=bins.size)
    onehot[np.flatnonzero(ok), flat[ok]] = 1.0 / counts[flat[ok]]

    xs = np.zeros((n, bins.size), dtype=complex)
    for lo in range(0, n, _CHUNK):
        chunk = occ[lo:lo + _CHUNK]
        sz = 2.0 * chunk - 1.0
        phi = (sz[:, ops.bonds] * ops.bond_phases).sum(axis=2)
        f = np.fft.fft2(phi.reshape(-1, ly, lx))
        cross = np.fft.ifft2(np.conj(f) * f) / ncells
        xs[lo:lo + chunk.shape[0]] = cross.reshape(
            chunk.shape[0], -1) @ onehot

    values = xs.mean(axis=0)
    weights = _bootstrap_weights(n, n_boot, seed)
    boots = (weights @ xs) / n
    errors = np.sqrt((np.abs(boots - values) ** 2).mean(axis=0))
    return bins, values, errors


def _rectified_string(occ, bond_map, separations, n_boot, seed):
    lx, ly = bond_map.cells
    n = occ.shape[0]
    ops = rectified_operators(bond_map)
    # hexagon offsets around an up vertex, in cell coordinates; the color
    # difference of any string endpoint pair is linear in the displacement,
    # so anchor pooling keeps a well-defined phase per class
    voff = ((0, 0), (-1, 0), (0, -1))
    weights = _bootstrap_weights(n, n_boot, seed)
    values = np.empty(separations.size, dtype=complex)
    errors = np.empty(separations.size)
    flagged = np.zeros(separations.size, dtype=bool)
    for j, r in enumerate(separations):
        total = 0.0 + 0.0j
        boots = np.zeros(n_boot, dtype=complex)
        for va in voff:
            for vb in voff:
                dp, dq = int(r) + vb[0] - va[0], vb[1] - va[1]
                phase = _OMEGA ** ((dp + 2 * dq) % 3)
                if dp == 0 and dq == 0:
                    total += phase
                    boots += phase
                    continue
                if dp < 0:
                    dp, dq = -dp, -dq
                sums, ideal, n_anchors = _string_sums(occ, bond_map,
                                                      (dp, dq))
                if ideal < 0:
                    flagged[j] = True
                    continue
                scale = n * n_anchors
                cs, bad = _combine_string(sums[0].sum() / scale,
                                          sums[1].sum() / scale,
                                          sums[2].sum() / scale)
                flagged[j] |= bad
                total += phase * (0.0 if bad else cs)
                for b in range(n_boot):
                    w = weights[b]
                    cb, bad_b = _combine_string((w @ sums[0]) / scale,
                                                (w @ sums[1]) / scale,
                                                (w @ sums[2]) / scale)
                    if not bad_b:
                        boots[b] += phase * cb
        values[j] = np.nan if flagged[j] else total
        errors[j] = np.nan if flagged[j] else np.sqrt(
            (np.abs(boots - total) ** 2).mean())
    return values, errors, flagged


def rectified(occupations, bond_map, kind="dimer-dimer",
              restriction="same-row", separations=None, sector=None,
              n_boot=N_BOOTSTRAP, seed=0):
    """Phase-rectified correlators; complex values, envelope in the modulus.

    ``kind`` selects the vertex operator ("dimer-dimer", fast Fourier
    pooling, radial or same-row) or the nine-string combination
    ("dimer-string", same-row only).  Radial bins pool complete displacement
    orbits, which cancels the imaginary part on symmetric tori; same-row
    bins keep the complex value per column separation.
    """
    _require_torus(bond_map)
    occ = _select_rows(occupations, bond_map, sector).astype(np.float64)
    n = occ.shape[0]
    lx, _ = bond_map.cells
    tag = restriction if sector is None else f"{restriction}|sector"

    if kind == "dimer-dimer":
        if restriction not in ("radial", "same-row"):
            raise ValueError(f"unknown restriction {restriction!r}")
        bins, values, errors = _rectified_dimer(occ, bond_map, restriction,
                                                n_boot, seed)
        return CorrelatorEstimate(
            bins=bins, values=values, errors=errors, n_samples=n,
            restriction=tag, normalization="phase-rectified")
    if kind == "dimer-string":
        if restriction != "same-row":
            raise ValueError("rectified strings are row-restricted")
        if separations is None:
            separations = np.arange(0, lx // 2 + 1)
        separations = np.asarray(separations, dtype=np.int64)
        if (np.diff(separations) <= 0).any():
            raise ValueError("separations must be strictly increasing")
        values, errors, flagged = _rectified_string(occ, bond_map,
                                                    separations, n_boot,
                                                    seed)
        return CorrelatorEstimate(
            bins=separations.astype(float), values=values, errors=errors,
            n_samples=n, restriction=tag,
            normalization="phase-rectified|loop-normalized",
            flagged=flagged)
    raise ValueError(f"unknown kind {kind!r}")


# ---------------------------------------------------------------------------
# scaling analysis


def ratio_check(numerator, denominator, window, norms=None):
    """Per-bin ratio of log magnitudes and a single log-log slope.

    Both estimates are normalized to their zero-separation bin (or to the
    explicit ``norms`` pair) so the logs are negative throughout the
    window.  For critical dimer states the vertex-vertex envelope falls
    four times faster, on log scale, than the string one.
    """
    num = np.asarray(numerator.values)
    den = np.asarray(denominator.values)
    if norms is None:
        zero_idx = [np.flatnonzero(np.isclose(e.bins, 0.0))
                    for e in (numerator, denominator)]
        if any(i.size == 0 for i in zero_idx):
            raise ValueError("zero-separation bin required for "
                             "self-normalization")
        norms = (abs(num[zero_idx[0][0]]), abs(den[zero_idx[1][0]]))

    lo, hi = window
    out_bins, ratios, xs, ys = [], [], [], []
    for i, r in enumerate(numerator.bins):
        if not (lo <= r <= hi):
            continue
        j = np.flatnonzero(np.isclose(denominator.bins, r))
        if j.size == 0:
            continue
        a = np.abs(num[i]) / norms[0]
        b = np.abs(den[j[0]]) / norms[1]
        if not (0 < a < 1 and 0 < b < 1):
            raise ValueError(
                f"normalized magnitudes must sit inside (0, 1); "
                f"bin {r} has {a:.3g} / {b:.3g}")
        out_bins.append(r)
        xs.append(np.log(b))
        ys.append(np.log(a))
        ratios.append(ys[-1] / xs[-1])
    if len(out_bins) < 2:
        raise ValueError("fewer than two overlapping bins in the window")
    design = np.stack([xs, np.ones(len(xs))], axis=1)
    coef, *_ = np.linalg.lstsq(design, np.asarray(ys), rcond=None)
    return RatioCheck(bins=np.asarray(out_bins, dtype=float),
                      ratios=np.asarray(ratios), slope=float(coef[0]),
                      intercept=float(coef[1]), window=(float(lo), float(hi)))


def scaling_fit(estimate, model, window=None, l_y=None, charge=None):
    """Fit |C(r)| to a power law or an exponential on log scale.

    Power model: log|C| = -p log r + c.  Exponential: log|C| = -r/xi + c.
    ``l_y`` (cylinder circumference, same units as the bins) converts a
    decay length to the implied scaling dimension; ``charge`` converts
    either model's result through dimension = charge^2 x stiffness.
    """
    if isinstance(estimate, CorrelatorEstimate):
        bins = estimate.bins
        mags = np.abs(np.asarray(estimate.values, dtype=complex))
        keep = ~estimate.flagged & np.isfinite(mags) & (mags > 0)
    else:
        bins, vals = estimate
        bins = np.asarray(bins, dtype=float)
        mags = np.abs(np.asarray(vals, dtype=complex))
        keep = np.isfinite(mags) & (mags > 0)
    keep &= bins > 0
    if window is not None:
        keep &= (bins >= window[0]) & (bins <= window[1])
    r, y = bins[keep], np.log(mags[keep])
    if r.size < 4:
        raise ValueError("need at least four usable bins")

    if model == "power":
        x = np.log(r)
    elif model == "exponential":
        x = r
    else:
        raise ValueError(f"unknown model {model!r}")
    design = np.stack([-x, np.ones_like(x)], axis=1)
    coef, res, *_ = np.linalg.lstsq(design, y, rcond=None)
    fitted = design @ coef
    residual = float(np.mean((y - fitted) ** 2))
    dof = max(r.size - 2, 1)
    cov = residual * r.size / dof * np.linalg.inv(design.T @ design)
    slope_err = float(np.sqrt(cov[0, 0]))

    if model == "power":
        p = float(coef[0])
        stiffness = p / (2.0 * charge ** 2) if charge is not None else None
        return ScalingFit(model=model, value=p, error=slope_err,
                          residual=residual, n_bins=int(r.size),
                          stiffness=stiffness)
    xi = float(1.0 / coef[0]) if coef[0] != 0 else np.inf
    xi_err = slope_err * xi ** 2 if np.isfinite(xi) else np.nan
    delta_m = float(l_y / (2.0 * np.pi * xi)) if l_y is not None else None
    lake = float(2.0 * np.pi * charge ** 2 * xi) if charge is not None \
        else None
    return ScalingFit(model=model, value=xi, error=xi_err,
                      residual=residual, n_bins=int(r.size),
                      delta_m=delta_m, lake_size=lake)
