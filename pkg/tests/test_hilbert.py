"""Constrained-basis tests against brute-force 2^N filter oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydlab.hilbert import (
    SY,
    apply_local_unitaries,
    block_reduction,
    enumerate_basis,
    full_basis,
    kron_chain,
    reduced_density,
)
from rydlab.lattice import build_lattice


def brute_force_states(n, edges):
    masks = []
    for bits in range(1 << n):
        ok = all(not ((bits >> i) & 1 and (bits >> j) & 1) for i, j in edges)
        if ok:
            masks.append(bits)
    return np.asarray(masks, dtype=np.uint64)


def random_state(basis, seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=len(basis)) + 1j * rng.normal(size=len(basis))
    return v / np.linalg.norm(v)


def test_single_site():
    basis = enumerate_basis(build_lattice("chain", 1))
    assert list(basis.states) == [0, 1]


def test_chain_4_and_ring_6_counts():
    assert len(enumerate_basis(build_lattice("chain", 4))) == 8
    assert len(enumerate_basis(build_lattice("ring", 6))) == 18


@settings(max_examples=20, deadline=None)
@given(st.integers(min_value=1, max_value=20))
def test_chain_matches_brute_force(n):
    lat = build_lattice("chain", n)
    basis = enumerate_basis(lat)
    assert np.array_equal(basis.states, brute_force_states(n, lat.blockade_graph))


def test_ring_matches_brute_force():
    for n in (3, 5, 8, 12, 16):
        lat = build_lattice("ring", n)
        basis = enumerate_basis(lat)
        assert np.array_equal(basis.states, brute_force_states(n, lat.blockade_graph))


def test_fibonacci_recurrence():
    sizes = [len(enumerate_basis(build_lattice("chain", n))) for n in range(1, 21)]
    assert sizes[0] == 2 and sizes[1] == 3
    for n in range(2, 20):
        assert sizes[n] == sizes[n - 1] + sizes[n - 2]


def test_ordinal_lookup_round_trip():
    basis = enumerate_basis(build_lattice("ring", 8))
    ords = basis.ordinals(basis.states)
    assert np.array_equal(ords, np.arange(len(basis)))
    assert basis.ordinals([np.uint64(0b11)])[0] == -1  # blockade-violating pair
    with pytest.raises(KeyError):
        basis.ordinal(0b11)


def test_memory_cap():
    with pytest.raises(MemoryError):
        enumerate_basis(build_lattice("chain", 12), cap=100)
    with pytest.raises(MemoryError):
        full_basis(24, cap=1 << 20)


def test_occupation_tables():
    lat = build_lattice("chain", 6)
    basis = enumerate_basis(lat)
    occ = basis.occupation_matrix()
    for m, bits in enumerate(basis.states):
        for s in range(6):
            assert occ[m, s] == (int(bits) >> s) & 1
    assert np.array_equal(basis.total_occupation(), occ.sum(axis=1))
    assert np.array_equal(basis.occupations(2), occ[:, 2])


def test_block_reduction_reconstructs_bits():
    basis = enumerate_basis(build_lattice("ring", 9))
    sites = (7, 2, 4)
    red = block_reduction(basis, sites)
    rest = [s for s in range(9) if s not in sites]
    for m in range(len(basis)):
        bits = 0
        for t, s in enumerate(sites):
            bits |= ((int(red.block_bits[m]) >> t) & 1) << s
        for t, s in enumerate(rest):
            bits |= ((int(red.env_bits[m]) >> t) & 1) << s
        assert bits == int(basis.states[m])


def test_block_reduction_errors():
    basis = enumerate_basis(build_lattice("chain", 16))
    with pytest.raises(ValueError):
        block_reduction(basis, range(15))  # beyond the block-size limit
    with pytest.raises(ValueError):
        block_reduction(basis, (1, 1))
    with pytest.raises(ValueError):
        block_reduction(basis, (16,))


def test_reduced_density_product_state():
    basis = enumerate_basis(build_lattice("chain", 7))
    psi = np.zeros(len(basis))
    psi[basis.ordinal(0)] = 1.0  # every atom in |1>
    rho = reduced_density(psi, basis, (1, 3, 5))
    expect = np.zeros((8, 8))
    expect[0, 0] = 1.0
    assert np.allclose(rho, expect)


def test_reduced_density_single_site_superposition():
    basis = enumerate_basis(build_lattice("chain", 1))
    psi = np.array([1.0, 1.0]) / np.sqrt(2.0)
    rho = reduced_density(psi, basis, (0,))
    assert np.allclose(rho, 0.5 * np.ones((2, 2)))


def test_reduced_density_trace_and_hermiticity():
    basis = enumerate_basis(build_lattice("ring", 10))
    psi = random_state(basis, seed=5)
    rho = reduced_density(psi, basis, (0, 3, 6, 9))
    assert abs(np.trace(rho) - 1.0) < 1e-12
    assert np.allclose(rho, rho.conj().T)
    assert np.linalg.eigvalsh(rho).min() > -1e-12


def test_reduced_density_matches_full_space_partial_trace():
    # independent route: embed into 2^N and trace environment axes
    lat = build_lattice("ring", 6)
    basis = enumerate_basis(lat)
    psi = random_state(basis, seed=11)
    sites = (4, 1)  # non-contiguous, order matters
    rho = reduced_density(psi, basis, sites)

    full = np.zeros(1 << 6, dtype=complex)
    full[basis.states.astype(np.int64)] = psi
    tensor = full.reshape([2] * 6)  # axis k = site 5 - k (numpy order)
    axes_block = [5 - s for s in sites]
    axes_env = [ax for ax in range(6) if ax not in axes_block]
    moved = np.moveaxis(tensor, axes_block, range(len(sites)))
    mat = moved.reshape(1 << len(sites), -1)
    expected = mat @ mat.conj().T
    # axis order within the block is sites[t] at position t, bit t is index
    # (t=0 is the fastest bit, so reverse the axis order before flattening)
    perm = np.moveaxis(
        expected.reshape([2] * (2 * len(sites))),
        list(range(2 * len(sites))),
        [1, 0, 3, 2],
    ).reshape(1 << len(sites), 1 << len(sites))
    assert np.allclose(rho, perm)


def test_reduced_density_diagonal_is_marginal():
    basis = enumerate_basis(build_lattice("chain", 9))
    psi = random_state(basis, seed=3)
    sites = (2, 5, 8)
    rho = reduced_density(psi, basis, sites)
    red = block_reduction(basis, sites)
    marg = np.zeros(8)
    np.add.at(marg, red.block_bits.astype(np.int64), np.abs(psi) ** 2)
    assert np.allclose(np.real(np.diag(rho)), marg)


def test_apply_identity_is_noop():
    rng = np.random.default_rng(0)
    rho = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    rho = rho @ rho.conj().T
    rho /= np.trace(rho)
    out = apply_local_unitaries(rho, [np.eye(2)] * 3)
    assert np.allclose(out, rho)


def test_half_y_rotation_balances_populations():
    u = np.array([[1.0, -1.0], [1.0, 1.0]]) / np.sqrt(2.0)
    psi = np.array([1.0, 0.0], dtype=complex)
    out = apply_local_unitaries(psi, [u])
    assert np.allclose(np.abs(out) ** 2, [0.5, 0.5])


def test_rotation_preserves_trace_and_rejects_nonunitary():
    rng = np.random.default_rng(7)
    rho = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = rho @ rho.conj().T
    rho /= np.trace(rho)
    from scipy.linalg import expm

    u = expm(-1j * (np.pi / 4) * SY)
    out = apply_local_unitaries(rho, [u, u])
    assert abs(np.trace(out) - 1.0) < 1e-10
    with pytest.raises(ValueError):
        apply_local_unitaries(rho, [u, 2.0 * np.eye(2)])


def test_block_rotation_matches_full_space_computation():
    # pi/4 sigma-y rotation of an 8-site block, cross-checked at N=8 where
    # the block is the entire lattice and the full-space route is exact
    from scipy.linalg import expm

    lat = build_lattice("chain", 8)
    basis = enumerate_basis(lat)
    psi = random_state(basis, seed=21)
    sites = tuple(range(8))
    rho = reduced_density(psi, basis, sites)
    u1 = expm(-1j * (np.pi / 4) * SY)
    rotated = apply_local_unitaries(rho, [u1] * 8)

    full = np.zeros(1 << 8, dtype=complex)
    full[basis.states.astype(np.int64)] = psi
    big_u = kron_chain([u1] * 8)
    full_rot = big_u @ full
    expected = np.outer(full_rot, full_rot.conj())
    assert np.allclose(rotated, expected, atol=1e-12)
    assert abs(np.trace(rotated) - 1.0) < 1e-10
