"""Blockade-constrained configuration space and local reductions.

A configuration is a bitmask over sites (bit i set = site i in the Rydberg
state). The constrained basis holds every independent set of the blockade
graph exactly once, sorted ascending, so ordinal lookup is a binary search.
The unconstrained 2^N space is the special case of an empty constraint graph
and shares the same container.

Reduced density matrices are produced by grouping constrained ordinals by the
environment configuration, never by embedding into the full 2^N space, so a
14-site block of a 27-site lattice stays cheap. Block configurations use bit t
for the t-th site of the requested block, in the order given by the caller.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import reduce

import numpy as np

from .lattice import LatticeSpec

DEFAULT_BASIS_CAP = 1 << 27
_CAP_ENV_VAR = "RYDLAB_BASIS_CAP"

# Local operators in the (|1>, |r>) index ordering used by packed
# configurations: index 0 = ground, index 1 = Rydberg, sigma_z = 2n - 1.
SX = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SY = np.array([[0.0, 1.0j], [-1.0j, 0.0]], dtype=complex)
SZ = np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex)
NOCC = np.array([[0.0, 0.0], [0.0, 1.0]], dtype=complex)


def basis_cap() -> int:
    """Largest basis size this process will enumerate (env-var overridable)."""
    raw = os.environ.get(_CAP_ENV_VAR)
    return int(raw) if raw else DEFAULT_BASIS_CAP


@dataclass(frozen=True)
class ConstrainedBasis:
    """Sorted configuration bitmasks plus the lattice they were built from."""

    n_sites: int
    states: np.ndarray  # (M,) uint64, strictly ascending
    lattice: LatticeSpec | None = None

    def __len__(self) -> int:
        return len(self.states)

    def ordinals(self, bits) -> np.ndarray:
        """Map configuration bitmasks to basis ordinals (-1 if absent)."""
        bits = np.atleast_1d(np.asarray(bits, dtype=np.uint64))
        pos = np.searchsorted(self.states, bits)
        pos = np.minimum(pos, len(self.states) - 1)
        hit = self.states[pos] == bits
        return np.where(hit, pos, -1)

    def ordinal(self, bits: int) -> int:
        ordn = int(self.ordinals([bits])[0])
        if ordn < 0:
            raise KeyError(f"configuration {bits:#x} not in basis")
        return ordn

    def occupations(self, site: int) -> np.ndarray:
        """0/1 occupation of one site across the whole basis."""
        return ((self.states >> np.uint64(site)) & np.uint64(1)).astype(np.int8)

    def occupation_matrix(self) -> np.ndarray:
        """(M, n_sites) int8 occupation table."""
        shifts = np.arange(self.n_sites, dtype=np.uint64)
        return ((self.states[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.int8)

    def total_occupation(self) -> np.ndarray:
        """Number of excited sites per basis state."""
        return self.occupation_matrix().sum(axis=1).astype(np.int64)


def neighbor_masks(n_sites: int, edges) -> list[int]:
    masks = [0] * n_sites
    for i, j in edges:
        masks[int(i)] |= 1 << int(j)
        masks[int(j)] |= 1 << int(i)
    return masks


def enumerate_basis(lattice: LatticeSpec, cap: int | None = None) -> ConstrainedBasis:
    """All independent sets of the blockade graph, ascending bitmask order.

    Enumeration walks sites in index order and branches on occupied/empty,
    pruning by the forbidden-neighbor mask, so the cost is proportional to
    the number of admissible configurations rather than 2^N.
    """
    cap = basis_cap() if cap is None else cap
    n = lattice.n_sites
    masks = neighbor_masks(n, lattice.blockade_graph)
    states: list[int] = []

    # iterative DFS; stack entries are (next site, bits so far, forbidden mask)
    stack = [(0, 0, 0)]
    while stack:
        site, bits, forbidden = stack.pop()
        while site < n:
            if not (forbidden >> site) & 1:
                stack.append((site + 1, bits | (1 << site), forbidden | masks[site]))
            site += 1
        states.append(bits)
        if len(states) > cap:
            raise MemoryError(
                f"constrained basis exceeds cap of {cap} states "
                f"(set {_CAP_ENV_VAR} to raise it)"
            )
    states.sort()
    return ConstrainedBasis(n_sites=n, states=np.asarray(states, dtype=np.uint64), lattice=lattice)


def full_basis(n_sites: int, cap: int | None = None) -> ConstrainedBasis:
    """The unconstrained 2^N configuration space."""
    cap = basis_cap() if cap is None else cap
    if 1 << n_sites > cap:
        raise MemoryError(
            f"full basis of {n_sites} sites exceeds cap of {cap} states "
            f"(set {_CAP_ENV_VAR} to raise it)"
        )
    return ConstrainedBasis(n_sites=n_sites, states=np.arange(1 << n_sites, dtype=np.uint64))


# ---------------------------------------------------------------------------
# block reductions
# ---------------------------------------------------------------------------

MAX_BLOCK_SITES = 14


@dataclass(frozen=True)
class BlockReduction:
    """Split of every basis configuration into (block, environment) bits.

    block_bits[m] packs the occupations of `sites` (bit t = sites[t]) for
    basis ordinal m; env_bits[m] packs the remaining sites in ascending site
    order. Together they reconstruct the original bitmask exactly.
    """

    basis: ConstrainedBasis
    sites: tuple[int, ...]
    block_bits: np.ndarray
    env_bits: np.ndarray


def block_reduction(basis: ConstrainedBasis, sites) -> BlockReduction:
    sites = tuple(int(s) for s in sites)
    if len(set(sites)) != len(sites):
        raise ValueError("block sites must be distinct")
    if any(s < 0 or s >= basis.n_sites for s in sites):
        raise ValueError("block site index out of range")
    if len(sites) > MAX_BLOCK_SITES:
        raise ValueError(f"block of {len(sites)} sites exceeds limit {MAX_BLOCK_SITES}")
    states = basis.states
    block = np.zeros(len(states), dtype=np.uint64)
    for t, s in enumerate(sites):
        block |= ((states >> np.uint64(s)) & np.uint64(1)) << np.uint64(t)
    env = np.zeros(len(states), dtype=np.uint64)
    t = 0
    for s in range(basis.n_sites):
        if s in sites:
            continue
        env |= ((states >> np.uint64(s)) & np.uint64(1)) << np.uint64(t)
        t += 1
    return BlockReduction(basis=basis, sites=sites, block_bits=block, env_bits=env)


def reduced_density(state: np.ndarray, basis: ConstrainedBasis, sites) -> np.ndarray:
    """Density matrix of a site block, traced over the rest of the lattice.

    Returns a (2^k, 2^k) Hermitian matrix in the full local basis of the
    block (constraint violations simply carry zero weight).
    """
    state = np.asarray(state, dtype=complex)
    if state.shape != (len(basis),):
        raise ValueError("state length does not match basis size")
    red = block_reduction(basis, sites)
    k = len(red.sites)
    dim = 1 << k
    rho = np.zeros((dim, dim), dtype=complex)

    order = np.argsort(red.env_bits, kind="stable")
    env_sorted = red.env_bits[order]
    block_sorted = red.block_bits[order]
    amp_sorted = state[order]
    cuts = np.flatnonzero(np.diff(env_sorted)) + 1
    for seg_idx, seg_amp in zip(
        np.split(block_sorted, cuts), np.split(amp_sorted, cuts)
    ):
        idx = seg_idx.astype(np.int64)
        rho[np.ix_(idx, idx)] += np.outer(seg_amp, seg_amp.conj())
    return rho


# ---------------------------------------------------------------------------
# local rotations
# ---------------------------------------------------------------------------

def _check_unitary(u: np.ndarray) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        raise ValueError("per-site rotations must be 2x2")
    if np.max(np.abs(u.conj().T @ u - np.eye(2))) > 1e-10:
        raise ValueError("per-site rotation is not unitary")
    return u


def kron_chain(unitaries) -> np.ndarray:
    """Tensor product acting on packed block configurations (bit t = factor t)."""
    ops = [_check_unitary(u) for u in unitaries]
    return reduce(np.kron, reversed(ops))


def apply_local_unitaries(obj: np.ndarray, unitaries) -> np.ndarray:
    """Rotate a block state vector or density matrix by per-site unitaries.

    `obj` lives in the full local space of k sites: either a (2^k,) vector or
    a (2^k, 2^k) matrix, with bit t of the index addressing the t-th site of
    the block (the `reduced_density` convention).
    """
    u = kron_chain(unitaries)
    obj = np.asarray(obj, dtype=complex)
    if obj.ndim == 1:
        if obj.shape[0] != u.shape[0]:
            raise ValueError("state length does not match rotation size")
        return u @ obj
    if obj.ndim == 2 and obj.shape[0] == obj.shape[1]:
        if obj.shape[0] != u.shape[0]:
            raise ValueError("density matrix size does not match rotation size")
        return u @ obj @ u.conj().T
    raise ValueError("expected a vector or a square matrix")


if __name__ == "__main__":
    from .lattice import build_lattice

    for kind, size in [("chain", 4), ("ring", 6), ("chain", 13), ("ring", 12)]:
        b = enumerate_basis(build_lattice(kind, size))
        print(kind, size, len(b))
