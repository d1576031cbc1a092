"""Dimer-observable tests pinned to exact enumerations and closed forms."""

import itertools

import numpy as np
import pytest

from rydlab import qdm
from rydlab import wormmc as wm
from rydlab.dynamics import StateVector
from rydlab.hilbert import enumerate_basis, full_basis
from rydlab.lattice import build_lattice, medial_honeycomb


@pytest.fixture(scope="module")
def rk():
    """Uniform covering superposition on the 3x3-cell torus, dim 35368."""
    lattice = build_lattice("kagome", (3, 3), a=1.0)
    bm = medial_honeycomb(lattice)
    basis = enumerate_basis(lattice)
    coverings = wm.enumerate_coverings(bm)
    bits = coverings @ (np.uint64(1) << np.arange(bm.n_bonds, dtype=np.uint64))
    amps = np.zeros(len(basis))
    ords = basis.ordinals(bits)
    assert (ords >= 0).all()
    amps[ords] = 1.0 / np.sqrt(len(ords))
    return bm, basis, StateVector(amps, 0.0, basis), coverings


@pytest.fixture(scope="module")
def worm62():
    """Worm samples on the (6, 2) torus, thinned past the correlation time."""
    bm = wm.torus_bond_map(6, 2)
    config = wm.WormChainConfig(lx=6, ly=2, samples=30000, seed=3, thin=5)
    occ = np.concatenate(list(wm.sample_blocks(config, chains=256,
                                               burn_in=30, bond_map=bm)))
    return bm, occ


@pytest.fixture(scope="module")
def ghz6():
    basis = enumerate_basis(build_lattice("ring", 6, a=1.0))
    amps = np.zeros(len(basis), dtype=complex)
    amps[basis.ordinal(0b010101)] = 1 / np.sqrt(2)
    amps[basis.ordinal(0b101010)] = 1 / np.sqrt(2)
    return StateVector(amps, 0.0, basis)


def test_vertex_census_multinomial_oracle(worm62):
    bm, occ = worm62
    rng = np.random.default_rng(11)
    bits = (rng.random((40000, bm.n_bonds)) < 1 / 3).astype(np.uint8)
    census = qdm.classify_vertices(bits, bm)
    means = census.means()
    for key, expect in [("monomer", 8 / 27), ("dimer", 4 / 9),
                        ("double", 2 / 9), ("triple", 1 / 27)]:
        assert abs(means[key] - expect) < 0.01
    total = census.monomer + census.dimer + census.double + census.triple
    assert np.allclose(total, 1.0)
    empty = qdm.classify_vertices(np.zeros(bm.n_bonds, dtype=np.uint8), bm)
    assert empty.monomer.min() == 1.0
    perfect = qdm.classify_vertices(occ, bm)
    assert perfect.dimer.min() == 1.0


def test_potential_profile_resolves_the_columnar_sublattices():
    bm = wm.torus_bond_map(6, 2)
    cov = wm.columnar_init(bm, 0)
    profile = qdm.potential_profile(cov.bonds, bm)
    for color in range(3):
        level = profile[bm.plaquette_color == color]
        assert level.min() == level.max()
    by_color = sorted(float(profile[bm.plaquette_color == c][0])
                      for c in range(3))
    assert by_color == [0.0, 1.0, 1.0]
    assert qdm.potential_profile(np.zeros(bm.n_bonds, np.uint8), bm).max() == 0


def test_projected_potential_is_unity_on_perfect_coverings(worm62):
    bm, occ = worm62
    bare = qdm.potential_energy(occ, bm)
    proj = qdm.projected_potential_energy(occ, bm)
    assert 0.25 < bare.value < 0.30
    assert proj.value == 1.0 and proj.error == 0.0
    assert 0 < proj.n_kept < proj.n_samples
    assert proj.value / bare.value > 2.0
    with pytest.raises(ValueError):
        qdm.projected_potential_energy(np.ones((3, bm.n_bonds), np.uint8), bm)


def test_kinetic_routes_agree_on_the_covering_superposition(rk):
    bm, basis, state, coverings = rk
    ring, shell = qdm.hexagon_sites(bm, 0)
    bare = qdm.kinetic_energy(state, ring)
    proj = qdm.kinetic_energy(state, ring, shell)
    assert abs(bare - 4 / 21) < 1e-12
    assert abs(proj - 1.0) < 1e-12
    assert abs(bare - qdm.kinetic_energy_reduced(state, ring)) < 1e-8
    assert abs(proj - qdm.kinetic_energy_reduced(state, ring, shell)) < 1e-8
    # flippability expectation matches the flip expectation at this state
    assert abs(qdm.potential_energy_state(state, bm) - bare) < 1e-12


def test_kinetic_energy_limits(rk, ghz6):
    assert abs(qdm.kinetic_energy(ghz6, range(6)) - 1.0) < 1e-12
    basis = ghz6.basis
    one_hot = np.zeros(len(basis))
    one_hot[basis.ordinal(0b010101)] = 1.0
    assert qdm.kinetic_energy(StateVector(one_hot, 0.0, basis),
                              range(6)) == 0.0
    # a covering with a dimer on the shell has zero projected weight
    bm, big_basis, _, coverings = rk
    ring, shell = qdm.hexagon_sites(bm, 0)
    busy = coverings[coverings[:, shell].sum(axis=1) > 0][0]
    bits = int((busy * (np.uint64(1) << np.arange(bm.n_bonds,
                                                  dtype=np.uint64))).sum())
    amps = np.zeros(len(big_basis))
    amps[big_basis.ordinal(bits)] = 1.0
    with pytest.raises(ValueError):
        qdm.kinetic_energy(StateVector(amps, 0.0, big_basis), ring, shell)


def test_loop_spec_validation():
    with pytest.raises(ValueError):
        qdm.LoopSpec(sites=(0, 1, 2), basis="Z")
    with pytest.raises(ValueError):
        qdm.LoopSpec(sites=(0, 1), basis="Z", shell=(1, 5))
    with pytest.raises(ValueError):
        qdm.LoopSpec(sites=(0, 1), basis="Y")
    qdm.LoopSpec(sites=(0, 1, 2), basis="X", closed=False)


def test_z_loops_carry_the_dimer_parity(worm62):
    bm, occ = worm62
    loop = tuple(int(b) for b in bm.plaquette_bonds[0])
    spec = qdm.LoopSpec(sites=loop, basis="Z")
    one = qdm.loop_expectation(occ[:1], spec)
    parity = (-1.0) ** int(occ[0, list(loop)].sum())
    assert one.value == parity and one.flagged
    many = qdm.loop_expectation(occ, spec)
    assert abs(many.value) <= 1.0 and not many.flagged
    # postselecting all three bonds of a vertex empties every covering
    dead = qdm.LoopSpec(sites=loop, basis="Z",
                        shell=tuple(int(b) for b in bm.vertex_bonds[40]))
    with pytest.raises(ValueError):
        qdm.loop_expectation(occ, dead)


def test_x_loops_decay_with_perimeter_and_strings_vanish(rk):
    bm, basis, state, _ = rk
    ring, shell = qdm.hexagon_sites(bm, 0)
    ring0 = set(ring)
    partner = next(p for p in range(1, bm.n_plaquettes)
                   if len(ring0 & set(int(b)
                                      for b in bm.plaquette_bonds[p])) == 1)
    loop10 = tuple(sorted(ring0 ^ {int(b)
                                   for b in bm.plaquette_bonds[partner]}))
    assert len(loop10) == 10
    assert qdm.surrounding_shell(bm, ring) == tuple(sorted(shell))

    bare6 = qdm.loop_expectation(state, qdm.LoopSpec(ring, "X"))
    bare10 = qdm.loop_expectation(state, qdm.LoopSpec(loop10, "X"))
    proj10 = qdm.loop_expectation(
        state, qdm.LoopSpec(loop10, "X",
                            shell=qdm.surrounding_shell(bm, loop10)))
    assert abs(bare6.value - 4 / 21) < 1e-12
    assert abs(bare10.value - 1 / 21) < 1e-12
    assert bare10.value < bare6.value
    assert abs(proj10.value - 1.0) < 1e-12
    # open strings make end defects, so they vanish on perfect coverings
    for length in (2, 3, 4):
        est = qdm.loop_expectation(
            state, qdm.LoopSpec(ring[:length], "X", closed=False))
        assert est.value == 0.0
    # and the whole-ring X on a product state has no matching partner
    fb = full_basis(6)
    ones = np.zeros(len(fb))
    ones[fb.ordinal(0b111111)] = 1.0
    flat = qdm.loop_expectation(StateVector(ones, 0.0, fb),
                                qdm.LoopSpec(tuple(range(6)), "X"))
    assert flat.value == 0.0


def test_parity_scan_reads_out_the_threefold_phase(ghz6):
    thetas = np.linspace(0.0, 2.0 * np.pi, 61)
    scan = qdm.parity_scan(ghz6, list(range(6)), thetas)
    assert abs(scan[0] - 1.0) < 1e-12
    assert np.abs(scan - np.cos(3.0 * thetas)).max() < 1e-10
    freq, err = qdm.fit_parity_frequency(thetas, scan)
    assert abs(freq - 3.0) < 0.02 and err < 0.01
    # a readout phase on every site leaves the magnitude alone
    basis = ghz6.basis
    counts = np.array([bin(int(s)).count("1") for s in basis.states])
    twisted = StateVector(ghz6.amps * np.exp(0.7j * counts), 0.0, basis)
    scan_t = qdm.parity_scan(twisted, list(range(6)), thetas)
    assert np.abs(np.abs(scan_t) - np.abs(scan)).max() < 1e-10
    # product states scan flat at zero
    flat = np.zeros(len(basis))
    flat[basis.ordinal(0b010101)] = 1.0
    assert np.abs(qdm.parity_scan(StateVector(flat, 0.0, basis),
                                  list(range(6)), thetas)).max() == 0.0
    with pytest.raises(ValueError):
        qdm.fit_parity_frequency(thetas[:4], scan[:4])


def test_region_geometry(worm62):
    bm, _ = worm62
    sizes = {}
    for shape in qdm.REGION_SHAPES:
        region = qdm.subsystem_region(bm, 0, shape)
        assert len(set(region.bonds.tolist())) == len(region.bonds)
        sizes[shape] = (len(region.bonds), len(region.vertices),
                        len(region.shell))
    assert sizes == {(1, 1): (6, 6, 6), (2, 1): (11, 10, 8),
                     (3, 1): (16, 14, 10), (2, 2): (19, 16, 10),
                     (3, 2): (27, 22, 12)}
    with pytest.raises(ValueError):
        qdm.subsystem_region(bm, 0, (4, 1))
    with pytest.raises(ValueError):
        qdm.subsystem_region(wm.torus_bond_map(2, 2), 0, (2, 1))
    # a 3-wide block on a 4-wide torus leaves no room for the shell
    with pytest.raises(ValueError):
        qdm.subsystem_region(wm.torus_bond_map(4, 2), 0, (3, 2))


def brute_region_coverings(bm, region, k):
    vpos = {int(v): t for t, v in enumerate(region.vertices)}
    ends = [[vpos[int(x)] for x in bm.bond_vertices[b]] for b in region.bonds]
    degree = np.zeros(len(region.vertices), dtype=int)
    for uv in ends:
        degree[uv] += 1
    rows = []
    for pattern in itertools.product((0, 1), repeat=len(region.bonds)):
        sums = np.zeros(len(region.vertices), dtype=int)
        for bit, uv in zip(pattern, ends):
            if bit:
                sums[uv] += 1
        if sums.max() > 1:
            continue
        uncovered = np.flatnonzero(sums == 0)
        if len(uncovered) != k or (degree[uncovered] == 3).any():
            continue
        rows.append(pattern)
    return sorted(rows)


def test_region_covering_enumeration(worm62):
    bm, _ = worm62
    counts = {shape: qdm.region_coverings(
        bm, qdm.subsystem_region(bm, 0, shape), 0).shape[0]
        for shape in qdm.REGION_SHAPES}
    assert counts == {(1, 1): 2, (2, 1): 3, (3, 1): 4, (2, 2): 6, (3, 2): 10}

    one = qdm.subsystem_region(bm, 0, (1, 1))
    covs = qdm.region_coverings(bm, one, 0)
    assert [tuple(r) for r in covs] == brute_region_coverings(bm, one, 0)
    lifted = np.zeros((2, bm.n_bonds), dtype=np.uint8)
    lifted[:, one.bonds] = covs
    assert wm.flippable_plaquettes(lifted, bm)[:, 0].all()

    two = qdm.subsystem_region(bm, 0, (2, 1))
    for k in (0, 1, 2):
        fast = [tuple(r) for r in qdm.region_coverings(bm, two, k)]
        assert fast == brute_region_coverings(bm, two, k)
    assert qdm.region_coverings(bm, two, 1).shape[0] == 0

    # the canonical bond order makes configurations anchor independent
    reference = None
    for anchor in range(bm.n_plaquettes):
        region = qdm.subsystem_region(bm, anchor, (2, 1))
        rows = [tuple(r) for r in qdm.region_coverings(bm, region, 0)]
        reference = rows if reference is None else reference
        assert rows == reference


def test_subsystem_distribution_is_flat_without_outer_dimers(worm62):
    bm, occ = worm62
    dist = qdm.subsystem_distribution(occ, bm, (2, 1), outer_dimers=0)
    assert dist.coverings.shape[0] == 3
    probs = dist.probabilities
    assert abs(probs.sum() - 1.0) < 1e-12
    sigma = np.sqrt(probs * (1 - probs) / dist.n_kept)
    assert (np.abs(probs - 1 / 3) < 3 * sigma + 1e-9).all()
    assert 0.5 * np.abs(probs - 1 / 3).sum() < 0.02
    assert 0 < dist.kept_fraction < 1

    biased = qdm.subsystem_distribution(occ, bm, (2, 1), outer_dimers=2)
    assert biased.coverings.shape[0] == 22
    assert 0.5 * np.abs(biased.probabilities
                        - 1 / len(biased.counts)).sum() > 0.03


def test_subsystem_distribution_excludes_defects(worm62):
    bm, occ = worm62
    clean = qdm.subsystem_distribution(occ[:2000], bm, (1, 1), 0)
    spoiled = occ[:2000].copy()
    spoiled[:, spoiled[0].argmax()] = 0  # monomer pair somewhere
    fewer = qdm.subsystem_distribution(spoiled, bm, (1, 1), 0)
    assert fewer.n_kept < clean.n_kept
    with pytest.raises(ValueError):
        qdm.subsystem_distribution(np.zeros((5, bm.n_bonds), np.uint8),
                                   bm, (1, 1), 0)


def test_thermal_fit_closed_forms(worm62):
    bm, _ = worm62
    region = qdm.subsystem_region(bm, 0, (2, 1))
    coverings = qdm.region_coverings(bm, region, 0)
    energies = qdm.subsystem_energies(bm, region, coverings, v0=1.0)
    assert energies.shape == (3,)
    # the two mirror coverings are degenerate, the middle one is not
    assert abs(energies[0] - energies[2]) < 1e-12
    assert abs(energies[1] - energies[0]) > 1e-3

    beta = 9.0
    p = np.exp(-beta * energies)
    fit = qdm.thermal_fit(p / p.sum(), energies)
    assert abs(fit.beta - beta) / beta < 1e-10 and not fit.flagged

    uniform = qdm.thermal_fit(np.full(3, 1 / 3), energies)
    assert abs(uniform.beta) < 1e-10

    v0 = 2.0
    two_level = qdm.thermal_fit(np.array([np.e, 1.0]) / (np.e + 1.0),
                                np.array([0.0, v0]))
    assert abs(two_level.beta - 1.0 / v0) < 1e-12

    flat = qdm.thermal_fit(np.array([0.5, 0.5]), np.array([2.0, 2.0]))
    assert flat.flagged and np.isnan(flat.beta)

    other = qdm.subsystem_region(bm, 0, (1, 1))
    cov1 = qdm.region_coverings(bm, other, 0)
    en1 = qdm.subsystem_energies(bm, other, cov1, v0=1.0)
    p1 = np.exp(-beta * en1)
    shared = qdm.thermal_fit([p1 / p1.sum(), p / p.sum()], [en1, energies])
    assert abs(shared.beta - beta) / beta < 1e-10
    assert shared.intercepts.shape == (2,)


def test_nematic_order_parameter(rk):
    bm, _, _, coverings = rk
    # the three orientation-locked coverings sit at the three nematic angles
    angles = []
    for variant in range(3):
        occ = np.zeros(bm.n_bonds, dtype=np.uint8)
        occ[variant::3] = 1
        res = qdm.nematic_phi(occ, bm)
        assert abs(abs(res.phi[0]) - res.n_vertices) < 1e-9
        angles.append(np.angle(res.phi[0]))
    assert np.allclose(sorted(angles), [-2 * np.pi / 3, 0.0, 2 * np.pi / 3])

    # exact covering ensemble: zero mean, threefold-symmetric value multiset
    res = qdm.nematic_phi(coverings, bm, bins=12)
    assert abs(res.phi.mean()) < 1e-9
    nonzero = res.phi[np.abs(res.phi) > 1e-6]
    rotated = nonzero * np.exp(2j * np.pi / 3)

    def key(z):
        return (round(z.real, 6), round(z.imag, 6))

    assert sorted(map(key, nonzero)) == sorted(map(key, rotated))
    assert res.angle_hist.sum() == nonzero.size

    rng = np.random.default_rng(7)
    bits = (rng.random((20000, bm.n_bonds)) < 1 / 3).astype(np.uint8)
    rand = qdm.nematic_phi(bits, bm)
    scale = np.abs(rand.phi).std() / np.sqrt(len(rand.phi))
    assert abs(rand.phi.mean()) < 5 * scale

    open_bm = medial_honeycomb(build_lattice("kagome", (3, 3), a=1.0,
                                             boundary="open"))
    kept = qdm.nematic_phi(np.zeros(open_bm.n_bonds, np.uint8), open_bm)
    assert kept.n_vertices < open_bm.n_vertices
