"""Time-dependent Hamiltonians in the constrained basis and their dynamics.

The Hamiltonian acting on packed configurations is

    H(t) = Omega(t) * H_flip + diag(-Delta(t) * N + sum_i delta_i n_i + vdW)

with H_flip = sum_i (|1><r| + |r><1|)_i / 2 restricted to the basis (in a
blockade-constrained basis this restriction is exactly the P...P projection),
N the total-occupation diagonal, and the van der Waals diagonal taken from an
InteractionTable. All frequencies are angular (rad/us), times in us.

Integration uses a piecewise-constant propagator: schedules are sampled at
step midpoints and each step is applied with a Krylov matrix exponential.
The base step is halved globally until the final amplitudes stop moving.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

from .hilbert import ConstrainedBasis, enumerate_basis, full_basis
from .lattice import InteractionTable, LatticeSpec, _min_image, interaction_table

Schedule = Callable[[float], float]

BASE_STEP = 1e-3  # 1 ns, in us


def constant(value: float) -> Schedule:
    return lambda t: value


# ---------------------------------------------------------------------------
# operator construction
# ---------------------------------------------------------------------------

def _site_range_check(basis: ConstrainedBasis, site: int) -> None:
    if site < 0 or site >= basis.n_sites:
        raise ValueError(f"site {site} outside lattice of {basis.n_sites} sites")


def occupation_diag(basis: ConstrainedBasis, site: int) -> np.ndarray:
    _site_range_check(basis, site)
    return basis.occupations(site).astype(float)


def total_occupation_diag(basis: ConstrainedBasis) -> np.ndarray:
    return basis.total_occupation().astype(float)


def sigma_x(basis: ConstrainedBasis, site: int) -> sp.csr_matrix:
    """Single-site |1><r| + |r><1|, restricted to the basis."""
    _site_range_check(basis, site)
    partners = basis.states ^ np.uint64(1 << site)
    cols = basis.ordinals(partners)
    keep = np.flatnonzero(cols >= 0)
    rows = keep
    data = np.ones(len(keep))
    m = len(basis)
    return sp.csr_matrix((data, (rows, cols[keep])), shape=(m, m))


def sigma_y(basis: ConstrainedBasis, site: int) -> sp.csr_matrix:
    """Single-site i|1><r| - i|r><1|, restricted to the basis."""
    _site_range_check(basis, site)
    bit = np.uint64(1 << site)
    partners = basis.states ^ bit
    cols = basis.ordinals(partners)
    keep = np.flatnonzero(cols >= 0)
    had_bit = (basis.states[keep] & bit) != 0
    # row = target ordinal, column = source: <less|sy|more> = i
    data = np.where(had_bit, -1.0j, 1.0j)
    m = len(basis)
    return sp.csr_matrix((data, (keep, cols[keep])), shape=(m, m))


def drive_operator(basis: ConstrainedBasis) -> sp.csr_matrix:
    """H_flip = sum_i sigma_x_i / 2 within the basis."""
    m = len(basis)
    rows = []
    cols = []
    for site in range(basis.n_sites):
        partners = basis.states ^ np.uint64(1 << site)
        ords = basis.ordinals(partners)
        keep = np.flatnonzero(ords >= 0)
        rows.append(keep)
        cols.append(ords[keep])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sp.csr_matrix((np.full(len(rows), 0.5), (rows, cols)), shape=(m, m))


def vdw_diag(basis: ConstrainedBasis, interactions: InteractionTable) -> np.ndarray:
    diag = np.zeros(len(basis))
    if len(interactions.pairs) == 0:
        return diag
    occ = basis.occupation_matrix()
    for (i, j), v in zip(interactions.pairs, interactions.values):
        diag += v * occ[:, i] * occ[:, j]
    return diag


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HamiltonianConfig:
    """Drive schedules plus the static problem definition.

    delta_site holds per-site detuning offsets (boundary compensation,
    disorder shifts); they enter the diagonal with a +delta_i n_i sign, i.e.
    as the site-resolved correction term of the detuning sum.
    """

    lattice: LatticeSpec
    basis: ConstrainedBasis
    omega: Schedule
    delta: Schedule
    delta_site: np.ndarray
    interactions: InteractionTable
    mode: str = "pxp"

    def __post_init__(self):
        if len(self.delta_site) != self.lattice.n_sites:
            raise ValueError("delta_site length does not match lattice")
        if not np.all(np.isfinite(self.delta_site)):
            raise ValueError("delta_site entries must be finite")


def make_config(
    lattice: LatticeSpec,
    omega: Schedule | float,
    delta: Schedule | float,
    mode: str = "pxp",
    v0: float = 0.0,
    delta_site: np.ndarray | None = None,
    interactions: InteractionTable | None = None,
    basis: ConstrainedBasis | None = None,
) -> HamiltonianConfig:
    """Assemble a HamiltonianConfig, enumerating the basis for the mode."""
    if mode not in ("full", "pxp", "pxp+tails"):
        raise ValueError(f"unknown mode {mode!r}")
    if basis is None:
        basis = full_basis(lattice.n_sites) if mode == "full" else enumerate_basis(lattice)
    if interactions is None:
        if mode == "pxp":
            interactions = InteractionTable(
                v0=0.0, mode="pxp", r_trunc=None,
                pairs=np.zeros((0, 2), dtype=np.int64), values=np.zeros(0),
            )
        else:
            interactions = interaction_table(lattice, v0=v0, mode=mode)
    if delta_site is None:
        delta_site = np.zeros(lattice.n_sites)
    if not callable(omega):
        omega = constant(float(omega))
    if not callable(delta):
        delta = constant(float(delta))
    return HamiltonianConfig(
        lattice=lattice,
        basis=basis,
        omega=omega,
        delta=delta,
        delta_site=np.asarray(delta_site, dtype=float),
        interactions=interactions,
        mode=mode,
    )


class HamiltonianTerms:
    """Cached pieces of H(t) for one config: flip matrix and diagonals."""

    def __init__(self, config: HamiltonianConfig):
        self.config = config
        basis = config.basis
        self.flip = drive_operator(basis)
        self.n_diag = total_occupation_diag(basis)
        static = vdw_diag(basis, config.interactions)
        if np.any(config.delta_site):
            occ = basis.occupation_matrix()
            static = static + occ.astype(float) @ config.delta_site
        self.static_diag = static

    def matrix(self, t: float) -> sp.csr_matrix:
        diag = -self.config.delta(t) * self.n_diag + self.static_diag
        h = self.config.omega(t) * self.flip
        h = h + sp.diags(diag)
        return h.tocsr()

    def expectation_energy(self, t: float, psi: np.ndarray) -> float:
        return float(np.real(np.vdot(psi, self.matrix(t) @ psi)))


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------

@dataclass
class StateVector:
    amps: np.ndarray
    time: float
    basis: ConstrainedBasis

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))


def _step_edges(t0, t1, base_step, step_limit, factor):
    edges = [t0]
    t = t0
    while t < t1 - 1e-15:
        dt = base_step
        if step_limit is not None:
            dt = min(dt, float(step_limit(t)))
        dt = max(dt / factor, 1e-9)
        t = min(t + dt, t1)
        edges.append(t)
    return edges


def _integrate(terms: HamiltonianTerms, psi, t0, t1, base_step, step_limit, factor):
    edges = _step_edges(t0, t1, base_step, step_limit, factor)
    for a, b in zip(edges[:-1], edges[1:]):
        h = terms.matrix(0.5 * (a + b))
        psi = expm_multiply(-1j * (b - a) * h, psi)
    return psi


def evolve(
    state: np.ndarray | StateVector,
    config: HamiltonianConfig,
    t0: float,
    t1: float,
    base_step: float = BASE_STEP,
    step_limit: Schedule | None = None,
    tol: float = 1e-6,
    max_refinements: int = 6,
    refine: bool = True,
    terms: HamiltonianTerms | None = None,
) -> StateVector:
    """Integrate the Schroedinger equation from t0 to t1.

    step_limit, when given, caps the step near narrow drive features (the
    drives expose one returning w/8 inside their Gaussian windows). With
    refine=True the whole interval is re-run at half the step until the
    final amplitudes move by less than tol in max norm.
    """
    if t1 < t0:
        raise ValueError("t1 must be >= t0")
    psi0 = state.amps if isinstance(state, StateVector) else np.asarray(state, dtype=complex)
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-9:
        raise ValueError("initial state is not normalized")
    if terms is None:
        terms = HamiltonianTerms(config)
    if t1 == t0:
        return StateVector(amps=psi0.copy(), time=t1, basis=config.basis)

    factor = 1
    psi = _integrate(terms, psi0, t0, t1, base_step, step_limit, factor)
    if refine:
        for _ in range(max_refinements):
            factor *= 2
            finer = _integrate(terms, psi0, t0, t1, base_step, step_limit, factor)
            delta = np.max(np.abs(finer - psi))
            psi = finer
            if delta < tol:
                break
        else:
            raise RuntimeError(
                f"step halving did not converge below {tol} after "
                f"{max_refinements} refinements"
            )
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > 1e-9:
        raise RuntimeError(f"norm drifted to {norm}")
    return StateVector(amps=psi, time=t1, basis=config.basis)


def expectation(operator, state) -> complex | float:
    """<psi|O|psi> for a sparse/dense matrix or a diagonal given as 1D array."""
    psi = state.amps if isinstance(state, StateVector) else np.asarray(state)
    op = operator
    if isinstance(op, np.ndarray) and op.ndim == 1:
        value = np.vdot(psi, op * psi)
    else:
        value = np.vdot(psi, op @ psi)
    if abs(value.imag) < 1e-10 * max(1.0, abs(value.real)):
        return float(value.real)
    return complex(value)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SnapshotSet:
    """Z-basis readout shots: packed configuration per shot."""

    bits: np.ndarray  # (count,) uint64
    n_sites: int
    seed: int

    def __len__(self) -> int:
        return len(self.bits)

    def bitstrings(self) -> list[str]:
        return [
            "".join("1" if (int(b) >> s) & 1 else "0" for s in range(self.n_sites))
            for b in self.bits
        ]

    def occupation_matrix(self) -> np.ndarray:
        shifts = np.arange(self.n_sites, dtype=np.uint64)
        return ((self.bits[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.int8)


def sample_z_snapshots(state, count: int, seed: int) -> SnapshotSet:
    psi = state.amps if isinstance(state, StateVector) else np.asarray(state)
    basis = state.basis if isinstance(state, StateVector) else None
    if basis is None:
        raise ValueError("sampling needs a StateVector carrying its basis")
    p = np.abs(psi) ** 2
    p = p / p.sum()
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(psi), size=count, p=p)
    return SnapshotSet(bits=basis.states[picks], n_sites=basis.n_sites, seed=seed)


def hamming_histogram(snapshots: SnapshotSet, reference: int, window) -> np.ndarray:
    """Distribution over Hamming distance to the reference inside the window."""
    window = list(window)
    if any(s < 0 or s >= snapshots.n_sites for s in window):
        raise ValueError("window site outside lattice")
    mask = np.uint64(sum(1 << s for s in window))
    diff = (snapshots.bits ^ np.uint64(reference)) & mask
    dist = np.bitwise_count(diff).astype(np.int64)
    hist = np.bincount(dist, minlength=len(window) + 1).astype(float)
    return hist / hist.sum()


# ---------------------------------------------------------------------------
# small analytic utilities
# ---------------------------------------------------------------------------

def neel_order(obj, lattice: LatticeSpec) -> float | np.ndarray:
    """Staggered occupation, +1 for the perfect alternating reference.

    Normalization is by the even-site count, so |rgrg...r> maps to exactly 1
    and the all-ground state to 0 for any chain length.
    """
    if lattice.kind != "chain":
        raise ValueError("staggered order is defined for chains")
    n = lattice.n_sites
    signs = np.array([1.0 if s % 2 == 0 else -1.0 for s in range(n)])
    norm = float(np.sum(signs > 0))
    if isinstance(obj, SnapshotSet):
        return (obj.occupation_matrix().astype(float) @ signs) / norm
    if isinstance(obj, StateVector):
        occ = obj.basis.occupation_matrix().astype(float)
        site_means = np.abs(obj.amps) ** 2 @ occ
        return float(site_means @ signs / norm)
    raise TypeError("expected a SnapshotSet or StateVector")


def ramsey_contrast(e_vdw: float, t: float, n_neighbors: int) -> float:
    """Interaction-induced Ramsey contrast cos^N(E t / 2)."""
    if n_neighbors < 0:
        raise ValueError("neighbor count must be >= 0")
    return float(np.cos(0.5 * e_vdw * t) ** n_neighbors)


def t1_envelope(mean_occupation: float, t: float, t1: float) -> float:
    """Empirical decay factor exp(-<n> t / T1) for reported observables."""
    return float(np.exp(-mean_occupation * t / t1))


# ---------------------------------------------------------------------------
# disorder
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DisorderWidths:
    """Standard deviations of the sampled imperfections.

    Detuning widths are angular frequencies; displacement widths are in
    units of the lattice spacing.
    """

    site_detuning: float = 2.0 * np.pi * 0.043
    global_detuning: float = 2.0 * np.pi * 0.2
    inplane: float = 0.02
    outplane: float = 0.08


@dataclass(frozen=True)
class DisorderSample:
    site_detuning: np.ndarray  # (N,)
    global_detuning: float
    inplane: np.ndarray  # (N, 2), absolute lengths
    outplane: np.ndarray  # (N,)


def sample_disorder(
    lattice: LatticeSpec, widths: DisorderWidths, seed: int
) -> DisorderSample:
    rng = np.random.default_rng(seed)
    n = lattice.n_sites
    return DisorderSample(
        site_detuning=rng.normal(0.0, widths.site_detuning, size=n),
        global_detuning=float(rng.normal(0.0, widths.global_detuning)),
        inplane=rng.normal(0.0, widths.inplane * lattice.a, size=(n, 2)),
        outplane=rng.normal(0.0, widths.outplane * lattice.a, size=n),
    )


def displaced_interactions(
    lattice: LatticeSpec, table: InteractionTable, sample: DisorderSample
) -> InteractionTable:
    """Recompute pair couplings from displaced 3D coordinates."""
    if len(table.pairs) == 0:
        return table
    wraps = lattice._wrap_vectors()
    ii = table.pairs[:, 0]
    jj = table.pairs[:, 1]
    d = lattice.positions[jj] - lattice.positions[ii]
    if wraps:
        d = _min_image(d, wraps)
    d = d + sample.inplane[jj] - sample.inplane[ii]
    dz = sample.outplane[jj] - sample.outplane[ii]
    r = np.sqrt(np.sum(d * d, axis=1) + dz * dz)
    values = table.v0 * (lattice.a / r) ** 6
    return InteractionTable(
        v0=table.v0, mode=table.mode, r_trunc=table.r_trunc,
        pairs=table.pairs, values=values,
    )


def apply_disorder(config: HamiltonianConfig, sample: DisorderSample) -> HamiltonianConfig:
    """Return a config with disorder shifts folded into detunings and vdW."""
    delta_site = config.delta_site + sample.site_detuning - sample.global_detuning
    interactions = displaced_interactions(config.lattice, config.interactions, sample)
    return replace(config, delta_site=delta_site, interactions=interactions)
