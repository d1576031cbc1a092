"""Periodic detuning drives and the effective Hamiltonians they engineer.

Drive profiles are sums of unit-integral Gaussians g(t|c,w) = exp(-((t-c)/w)^2)
/ (w sqrt(pi)) repeated with the drive period, a constant offset, and (for the
ring family) a cosine. Values are clipped to the hardware window of
+-2pi x 20 MHz. The echo backbone is a pair of -pi-area pulses per period at
t_e and t_e + tau/2; between ideal pulses the accumulated drive phase advances
and rewinds the bare dynamics, which is captured by the sawtooth

    t_eff(t) = t              for 0 <= t < t_e
               -t + 2 t_e     for t_e <= t < t_e + tau/2
               t - tau        for t_e + tau/2 <= t < tau

extended periodically (continuous, |slope| = 1, zero at every n tau).

The leading effective Hamiltonian over one period is the drive-weighted
average of the time-conjugated total-occupation operator,

    H0 = -(1/tau) [ Int_0^tau dt Delta(t) N(t_eff(t))
                    + pi sum_c N(t_eff(c)) ]    (c over backbone centers)

where the pi terms subtract the ideal-pulse backbone so only the deviation
from a perfect echo contributes, and N(s) = e^{i s Hd} N e^{-i s Hd} with
Hd = (Omega/2) sum_i P sigma_x_i P. Expanding N(s) to second order in s gives
the coefficient map used by short_time_coeffs:

    N(s) = N + (Omega s / 2) H_PYP
             + (Omega s / 2)^2 (-H_PXYP + H_ZIZ / 4 - 3 N) + O(s^3).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from numpy.polynomial.legendre import leggauss

from .dynamics import (
    BASE_STEP,
    HamiltonianTerms,
    StateVector,
    evolve,
    make_config,
    sigma_x,
    sigma_y,
    total_occupation_diag,
)
from .hilbert import ConstrainedBasis, enumerate_basis
from .lattice import LatticeSpec, build_lattice

TWO_PI = 2.0 * np.pi
CLIP = TWO_PI * 20.0  # detuning actuator window, rad/us
GAUSS_CUTOFF = 8.0  # pulses ignored beyond this many widths


def gaussian_pulse(t, center, w):
    """Unit-time-integral Gaussian."""
    x = (np.asarray(t, dtype=float) - center) / w
    return np.exp(-x * x) / (w * np.sqrt(np.pi))


def pulse_comb(t, period, center, w):
    """Sum of unit Gaussians at center + m*period over all integers m."""
    t = np.asarray(t, dtype=float)
    m_lo = int(np.floor((np.min(t) - center - GAUSS_CUTOFF * w) / period))
    m_hi = int(np.ceil((np.max(t) - center + GAUSS_CUTOFF * w) / period))
    out = np.zeros_like(t)
    for m in range(m_lo, m_hi + 1):
        c = center + m * period
        near = np.abs(t - c) <= GAUSS_CUTOFF * w
        if np.any(near):
            out[near] += gaussian_pulse(t[near], c, w)
    return out


def t_eff(t, t_e: float, tau: float):
    """Echo-conjugated time: piecewise linear, periodic, zero at n*tau."""
    s = np.mod(t, tau)
    return np.where(s < t_e, s, np.where(s < t_e + tau / 2.0, 2.0 * t_e - s, s - tau))


def conjugated_time(drive, t):
    """Effective evolution time under the drive's echo backbone.

    Drives that reparametrize their backbone supply effective_time; the
    others use the standard sawtooth.
    """
    custom = getattr(drive, "effective_time", None)
    if custom is not None:
        return custom(t)
    return t_eff(t, drive.t_e, drive.tau)


# ---------------------------------------------------------------------------
# drive families
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EchoDrive:
    """Bare echo: two -pi pulses per period, nothing else."""

    tau: float
    t_e: float
    w_e: float

    def __post_init__(self):
        if not (0.0 < self.t_e <= self.tau / 2.0):
            raise ValueError("first pulse center must satisfy 0 < t_e <= tau/2")

    def pulse_centers(self) -> tuple[float, float]:
        return (self.t_e, self.t_e + self.tau / 2.0)

    def pulse_widths(self) -> tuple[tuple[float, float], ...]:
        return ((self.t_e, self.w_e), (self.t_e + self.tau / 2.0, self.w_e))

    def delta(self, t):
        # not clipped: the pulse areas must stay exactly -pi
        return -np.pi * pulse_comb(t, self.tau / 2.0, self.t_e, self.w_e)


@dataclass(frozen=True)
class HoppingDrive:
    """Echo backbone at t_e = tau/4 plus excitation-number-tuned pulses.

    Delta(t)/2pi = (epsilon - 1/2) sum_n g(t | tau/4 + n tau/2, w_e)
                 + (gamma - theta) sum_n g(t | n tau, w_p)
                 + theta sum_n g(t | tau/2 + n tau, w_p)
                 + delta0/2pi.
    """

    epsilon: float
    gamma: float
    theta: float = 0.0
    delta0: float = 0.0  # rad/us
    tau: float = 0.36
    w_e: float = 0.016
    w_p: float = 0.008

    @property
    def t_e(self) -> float:
        return self.tau / 4.0

    def pulse_centers(self) -> tuple[float, float]:
        return (self.tau / 4.0, 3.0 * self.tau / 4.0)

    def pulse_widths(self) -> tuple[tuple[float, float], ...]:
        return (
            (self.tau / 4.0, self.w_e),
            (3.0 * self.tau / 4.0, self.w_e),
            (0.0, self.w_p),
            (self.tau / 2.0, self.w_p),
        )

    def delta(self, t):
        out = TWO_PI * (
            (self.epsilon - 0.5) * pulse_comb(t, self.tau / 2.0, self.tau / 4.0, self.w_e)
            + (self.gamma - self.theta) * pulse_comb(t, self.tau, 0.0, self.w_p)
            + self.theta * pulse_comb(t, self.tau, self.tau / 2.0, self.w_p)
        )
        out = out + self.delta0
        return np.clip(out, -CLIP, CLIP)


@dataclass(frozen=True)
class SymmetrizedDrive:
    """Recast of a hopping drive with part of its gamma pulse moved into the
    echo backbone.

    Splitting a -pi area off the pulse at n tau (gamma -> gamma + 1/2 in
    amplitude units) leaves the waveform untouched but adds a backbone
    reversal there, so the effective time becomes antisymmetric over a
    doubled period: s(t + tau) = -s(t). Odd powers of s then average to
    zero and the leading spin-flip term cancels.
    """

    base: HoppingDrive

    @property
    def tau(self) -> float:
        return 2.0 * self.base.tau

    def delta(self, t):
        return self.base.delta(t)

    def pulse_centers(self) -> tuple[float, ...]:
        b = self.base.tau
        return (0.0, b / 4.0, 3.0 * b / 4.0, b, 5.0 * b / 4.0, 7.0 * b / 4.0)

    def pulse_widths(self) -> tuple[tuple[float, float], ...]:
        b = self.base.tau
        eps = tuple((b / 4.0 + m * b / 2.0, self.base.w_e) for m in range(4))
        gam = tuple((m * b / 2.0, self.base.w_p) for m in range(4))
        return eps + gam

    def effective_time(self, t):
        b = self.base.tau
        u = np.mod(t, 2.0 * b)
        return np.where(
            u < 0.25 * b, u,
            np.where(u < 0.75 * b, 0.5 * b - u,
            np.where(u < b, u - b,
            np.where(u < 1.25 * b, b - u,
            np.where(u < 1.75 * b, u - 1.5 * b, 2.0 * b - u)))),
        )


@dataclass(frozen=True)
class RingDrive:
    """Echo backbone at t_e = 0 plus a cosine and unbalanced pulse areas.

    Delta(t)/2pi = (eps0 - 1/2) sum_n g(t | n tau, w_e)
                 + (eps1 - 1/2) sum_n g(t | tau/2 + n tau, w_e)
                 + a_cos * cos(2 pi t / tau) + delta0/2pi.
    """

    eps0: float
    eps1: float
    a_cos: float  # cosine amplitude in MHz (multiplied by 2pi below)
    delta0: float = 0.0  # rad/us
    tau: float = 0.30
    w_e: float = 0.020

    @property
    def t_e(self) -> float:
        return 0.0

    def pulse_centers(self) -> tuple[float, float]:
        return (0.0, self.tau / 2.0)

    def pulse_widths(self) -> tuple[tuple[float, float], ...]:
        return ((0.0, self.w_e), (self.tau / 2.0, self.w_e))

    def delta(self, t):
        out = TWO_PI * (
            (self.eps0 - 0.5) * pulse_comb(t, self.tau, 0.0, self.w_e)
            + (self.eps1 - 0.5) * pulse_comb(t, self.tau, self.tau / 2.0, self.w_e)
            + self.a_cos * np.cos(TWO_PI * np.asarray(t, dtype=float) / self.tau)
        )
        out = out + self.delta0
        return np.clip(out, -CLIP, CLIP)


def delta_of_t(drive, t):
    """Drive detuning Delta(t) in rad/us (periodic, clipped)."""
    return drive.delta(t)


def step_limit_for(drive):
    """Step cap for the integrator: w/8 inside any pulse window."""
    windows = []
    for center, w in set(drive.pulse_widths()):
        windows.append((center, w))

    def limit(t):
        s = float(np.mod(t, drive.tau))
        cap = BASE_STEP
        for center, w in windows:
            for image in (center - drive.tau, center, center + drive.tau):
                if abs(s - image) <= GAUSS_CUTOFF * w:
                    cap = min(cap, w / 8.0)
        return cap

    return limit


# ---------------------------------------------------------------------------
# ansatz operators
# ---------------------------------------------------------------------------

def _neighbor_pairs(lattice: LatticeSpec, offset: int) -> list[tuple[int, int]]:
    n = lattice.n_sites
    if lattice.kind == "ring":
        return [(i, (i + offset) % n) for i in range(n)]
    if lattice.kind == "chain":
        return [(i, i + offset) for i in range(n - offset)]
    raise ValueError("ansatz operators are defined on chains and rings")


def h_pxp(basis: ConstrainedBasis) -> sp.csr_matrix:
    h = sigma_x(basis, 0)
    for site in range(1, basis.n_sites):
        h = h + sigma_x(basis, site)
    return h.tocsr()


def h_pyp(basis: ConstrainedBasis) -> sp.csr_matrix:
    h = sigma_y(basis, 0)
    for site in range(1, basis.n_sites):
        h = h + sigma_y(basis, site)
    return h.tocsr()


def h_pxyp(basis: ConstrainedBasis, lattice: LatticeSpec) -> sp.csr_matrix:
    """Nearest-neighbor hopping: (1/2) sum_i P (xx + yy on i, i+1) P."""
    m = len(basis)
    rows, cols = [], []
    states = basis.states
    for i, j in _neighbor_pairs(lattice, 1):
        bi, bj = np.uint64(1 << i), np.uint64(1 << j)
        one_set = ((states & bi) != 0) ^ ((states & bj) != 0)
        src = np.flatnonzero(one_set)
        partners = states[src] ^ (bi | bj)
        ords = basis.ordinals(partners)
        keep = ords >= 0
        rows.append(src[keep])
        cols.append(ords[keep])
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(m, m))


def h_ziz_diag(basis: ConstrainedBasis, lattice: LatticeSpec) -> np.ndarray:
    """sum_i sigma_z_i sigma_z_{i+2} as a diagonal over the basis."""
    occ = basis.occupation_matrix().astype(float)
    z = 2.0 * occ - 1.0
    diag = np.zeros(len(basis))
    for i, j in _neighbor_pairs(lattice, 2):
        diag += z[:, i] * z[:, j]
    return diag


def h_yyy(basis: ConstrainedBasis, lattice: LatticeSpec) -> sp.csr_matrix:
    """Three-site flip sum_i P sigma_y_i sigma_y_{i+1} sigma_y_{i+2} P."""
    m = len(basis)
    states = basis.states
    rows, cols, vals = [], [], []
    for i in range(lattice.n_sites) if lattice.kind == "ring" else range(lattice.n_sites - 2):
        n = lattice.n_sites
        trip = (i, (i + 1) % n, (i + 2) % n)
        mask = np.uint64(sum(1 << s for s in trip))
        partners = states ^ mask
        ords = basis.ordinals(partners)
        src = np.flatnonzero(ords >= 0)
        # sigma_y maps |1> -> -i|r> and |r> -> +i|1>, one factor per site
        phase = np.ones(len(src), dtype=complex)
        for s in trip:
            bit = np.uint64(1 << s)
            had = (states[src] & bit) != 0
            phase = phase * np.where(had, 1.0j, -1.0j)
        rows.append(src)
        cols.append(ords[src])
        vals.append(phase)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    return sp.csr_matrix((vals, (cols, rows)), shape=(m, m))


@dataclass(frozen=True)
class EffectiveCoeffs:
    """Coefficients of H_F = -mu N + U H_ZIZ - J H_PXYP - gx H_PXP - gy H_PYP."""

    mu: float
    u: float
    j: float
    g_x: float
    g_y: float
    g3: float | None = None
    g6: float | None = None

    def as_array(self) -> np.ndarray:
        return np.array([self.j, self.mu, self.u, self.g_x, self.g_y])


def build_hf(basis: ConstrainedBasis, lattice: LatticeSpec, coeffs: EffectiveCoeffs) -> sp.csr_matrix:
    h = sp.diags(-coeffs.mu * total_occupation_diag(basis) + coeffs.u * h_ziz_diag(basis, lattice))
    h = h - coeffs.j * h_pxyp(basis, lattice)
    if coeffs.g_x:
        h = h - coeffs.g_x * h_pxp(basis)
    if coeffs.g_y:
        h = h - coeffs.g_y * h_pyp(basis)
    if coeffs.g3:
        h = h + coeffs.g3 * h_yyy(basis, lattice)
    return sp.csr_matrix(h)


# ---------------------------------------------------------------------------
# leading-order effective Hamiltonian by quadrature
# ---------------------------------------------------------------------------

def _clip_crossings(drive, samples: int = 8192) -> list[float]:
    """Times where the clipped profile enters/leaves the actuator limit."""
    ts = np.linspace(0.0, drive.tau, samples + 1)
    flat = np.abs(np.abs(drive.delta(ts)) - CLIP) < 1e-9 * CLIP
    edges = []
    for i in range(samples):
        if flat[i] == flat[i + 1]:
            continue
        lo, hi = ts[i], ts[i + 1]
        lo_flat = bool(flat[i])
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            mid_flat = abs(abs(float(drive.delta(mid))) - CLIP) < 1e-9 * CLIP
            if mid_flat == lo_flat:
                lo = mid
            else:
                hi = mid
        edges.append(0.5 * (lo + hi))
    return edges


def _quadrature_panels(drive, doublings: int) -> np.ndarray:
    """Panel edges over [0, tau]: pulse windows, t_eff kinks, clip kinks."""
    tau = drive.tau
    edges = {0.0, tau}
    for c in drive.pulse_centers():
        edges.add(float(np.mod(c, tau)))
    for center, w in drive.pulse_widths():
        for k in (1.0, 2.0, 4.0, GAUSS_CUTOFF):
            for img in (center - tau, center, center + tau):
                for x in (img - k * w, img + k * w):
                    if 0.0 < x < tau:
                        edges.add(x)
    edges.update(_clip_crossings(drive))
    panels = np.array(sorted(edges))
    for _ in range(doublings):
        mids = 0.5 * (panels[:-1] + panels[1:])
        panels = np.sort(np.concatenate([panels, mids]))
    return panels


def _gauss_nodes(panels: np.ndarray, order: int):
    x, w = leggauss(order)
    a = panels[:-1]
    b = panels[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


class _ConjugatedNumber:
    """N(s) = e^{i s Hd} N e^{-i s Hd} via the dense eigenbasis of Hd."""

    def __init__(self, basis: ConstrainedBasis, omega: float):
        hd = 0.5 * omega * h_pxp(basis).toarray().real
        self.evals, self.evecs = np.linalg.eigh(hd)
        n_diag = total_occupation_diag(basis)
        self.n_tilde = self.evecs.T @ (n_diag[:, None] * self.evecs)
        self.gaps = self.evals[:, None] - self.evals[None, :]

    def weighted_sum(self, s_values, weights) -> np.ndarray:
        """sum_k weights[k] * N(s_k), returned in the configuration basis."""
        acc = np.zeros_like(self.gaps, dtype=complex)
        for s, wt in zip(s_values, weights):
            acc += wt * np.exp(1j * s * self.gaps)
        m = self.n_tilde * acc
        return self.evecs @ m @ self.evecs.conj().T


def effective_h_leading(
    drive,
    lattice: LatticeSpec,
    omega: float,
    order: int = 12,
    tol: float = 1e-6,
    max_doublings: int = 8,
    basis: ConstrainedBasis | None = None,
) -> np.ndarray:
    """Leading effective Hamiltonian of the drive over one period.

    Composite Gauss-Legendre quadrature on pulse-aware panels; the panel set
    is halved until the Frobenius norm moves by less than tol relative.
    """
    if basis is None:
        basis = enumerate_basis(lattice)
    if len(basis) > 5000:
        raise ValueError("dense eigenbasis route is limited to ~5000 states")
    conj = _ConjugatedNumber(basis, omega)
    tau = drive.tau
    centers = drive.pulse_centers()
    pulse_term = conj.weighted_sum(
        [float(conjugated_time(drive, c)) for c in centers], [np.pi] * len(centers)
    )

    previous = None
    for doublings in range(max_doublings + 1):
        nodes, weights = _gauss_nodes(_quadrature_panels(drive, doublings), order)
        dvals = drive.delta(nodes)
        svals = conjugated_time(drive, nodes)
        integral = conj.weighted_sum(svals, weights * dvals)
        h = -(integral + pulse_term) / tau
        h = 0.5 * (h + h.conj().T)
        if previous is not None:
            # the floor keeps the zero matrix (ideal echo) convergent
            scale = max(np.linalg.norm(h), 1.0)
            if np.linalg.norm(h - previous) < tol * scale:
                return h
        previous = h
    raise RuntimeError("effective-Hamiltonian quadrature did not converge")


def fit_operator_coefficients(
    h: np.ndarray,
    basis: ConstrainedBasis,
    lattice: LatticeSpec,
    include_three_body: bool = False,
):
    """Least-squares projection of a matrix onto the ansatz operators.

    Returns (EffectiveCoeffs, relative residual Frobenius norm). Signs follow
    the H_F convention, so e.g. a -J H_PXYP content reports J.
    """
    ops = {
        "mu": -np.diag(total_occupation_diag(basis)),
        "u": np.diag(h_ziz_diag(basis, lattice)),
        "j": -h_pxyp(basis, lattice).toarray(),
        "g_x": -h_pxp(basis).toarray(),
        "g_y": -h_pyp(basis).toarray().astype(complex),
    }
    if include_three_body:
        ops["g3"] = h_yyy(basis, lattice).toarray()
    names = list(ops)
    mats = [np.asarray(ops[k], dtype=complex) for k in names]
    gram = np.array([[np.vdot(a, b).real for b in mats] for a in mats])
    rhs = np.array([np.vdot(a, h).real for a in mats])
    coeff = np.linalg.solve(gram, rhs)
    fitted = sum(c * m for c, m in zip(coeff, mats))
    residual = np.linalg.norm(h - fitted) / max(np.linalg.norm(h), 1e-30)
    values = dict(zip(names, coeff))
    return (
        EffectiveCoeffs(
            mu=values["mu"], u=values["u"], j=values["j"],
            g_x=values["g_x"], g_y=values["g_y"],
            g3=values.get("g3"),
        ),
        residual,
    )


# ---------------------------------------------------------------------------
# short-time coefficient prediction
# ---------------------------------------------------------------------------

def drive_moments(drive, k_max: int = 2, order: int = 12, doublings: int = 3) -> np.ndarray:
    """I_k = (1/tau)[Int Delta(t) t_eff^k dt + pi sum_pulses t_eff(center)^k]."""
    tau = drive.tau
    nodes, weights = _gauss_nodes(_quadrature_panels(drive, doublings), order)
    dvals = drive.delta(nodes)
    svals = conjugated_time(drive, nodes)
    out = np.zeros(k_max + 1)
    for k in range(k_max + 1):
        total = np.sum(weights * dvals * svals**k)
        for c in drive.pulse_centers():
            total += np.pi * float(conjugated_time(drive, c)) ** k
        out[k] = total / tau
    return out


def short_time_coeffs(drive, omega: float) -> EffectiveCoeffs:
    """Effective coefficients from the quadratic expansion of N(t_eff).

    Valid while Omega tau stays small; the mapping is
        mu  = I0 - (3/4) Omega^2 I2
        g_y = (Omega/2) I1
        J   = -(Omega^2/4) I2
        U   = -(Omega^2/16) I2
        g_x = 0.
    """
    ratio = omega * drive.tau / (8.0 * np.pi)
    if ratio > 0.25:
        warnings.warn(
            f"Omega*tau/(8 pi) = {ratio:.3f} exceeds the short-time window",
            stacklevel=2,
        )
    i0, i1, i2 = drive_moments(drive, k_max=2)
    return EffectiveCoeffs(
        mu=i0 - 0.75 * omega**2 * i2,
        u=-(omega**2) * i2 / 16.0,
        j=-(omega**2) * i2 / 4.0,
        g_x=0.0,
        g_y=0.5 * omega * i1,
    )


# ---------------------------------------------------------------------------
# stroboscopic evolution
# ---------------------------------------------------------------------------

def stroboscopic_evolve(
    drive,
    lattice: LatticeSpec,
    state0: np.ndarray,
    n_periods: int,
    omega: float,
    mode: str = "pxp",
    v0: float = 0.0,
    base_step: float = BASE_STEP,
    refine: bool = False,
):
    """Evolve under the drive, recording the state at every multiple of tau.

    Returns (states, n_mean, n_var): states[k] is the state at t = k tau
    (k = 0 included), and the arrays report <N> and Var(N) per period.
    """
    cfg = make_config(lattice, omega, drive.delta, mode=mode, v0=v0)
    terms = HamiltonianTerms(cfg)
    n_diag = total_occupation_diag(cfg.basis)
    limit = step_limit_for(drive)

    psi = np.asarray(state0, dtype=complex)
    states = [StateVector(amps=psi.copy(), time=0.0, basis=cfg.basis)]
    for k in range(1, n_periods + 1):
        out = evolve(
            states[-1].amps, cfg, (k - 1) * drive.tau, k * drive.tau,
            base_step=base_step, step_limit=limit, refine=refine, terms=terms,
        )
        states.append(out)
    probs = np.array([np.abs(s.amps) ** 2 for s in states])
    n_mean = probs @ n_diag
    n_var = probs @ n_diag**2 - n_mean**2
    return states, n_mean, n_var


# ---------------------------------------------------------------------------
# ring exchange
# ---------------------------------------------------------------------------

def ring_exchange_estimate(g3: float, mu: float) -> float:
    """Effective six-site ring-exchange rate from the (g3, mu)-only model.

    Diagonalizes H = -mu N + g3 sum P yyy P on the 6-ring. The two
    alternating-occupation configurations hybridize through virtual
    three-site flips into a near-degenerate pair split by 2 g6, so a full
    swap cycle between the patterns lasts pi / g6. The pair is located by
    its weight on the two patterns, which stays well separated from the
    rest of the spectrum as long as mu detunes the intermediate states.
    """
    if g3 == 0.0:
        return 0.0
    if mu == 0.0:
        raise ValueError("mu = 0 leaves the exchange pathway degenerate")
    lattice = build_lattice("ring", 6)
    basis = enumerate_basis(lattice)
    h = build_hf(basis, lattice, EffectiveCoeffs(mu=mu, u=0.0, j=0.0, g_x=0.0, g_y=0.0, g3=g3))
    evals, evecs = np.linalg.eigh(h.toarray())
    a = basis.ordinal(0b010101)
    b = basis.ordinal(0b101010)
    weight = np.abs(evecs[a, :]) ** 2 + np.abs(evecs[b, :]) ** 2
    lo, hi = np.argsort(weight)[-2:]
    return 0.5 * abs(float(evals[hi] - evals[lo]))


def neel_exchange_time(imbalance: np.ndarray, tau: float) -> float:
    """Time for a staggered pattern to hand over to its complement.

    Takes the per-period sublattice-occupation difference from a
    stroboscopic run started in one alternating pattern, over a window
    covering roughly one exchange. A three-period moving average removes
    the fast micromotion; the refined position of the deepest minimum is
    where the opposite pattern peaks.
    """
    y = np.asarray(imbalance, dtype=float)
    if len(y) < 5:
        raise ValueError("need at least five stroboscopic samples")
    smooth = np.convolve(y, np.ones(3) / 3.0, mode="valid")
    k = int(np.argmin(smooth))
    center = k + 1  # smooth[k] covers periods k .. k+2
    if 0 < k < len(smooth) - 1:
        denom = smooth[k - 1] - 2.0 * smooth[k] + smooth[k + 1]
        if denom != 0.0:
            center += 0.5 * (smooth[k - 1] - smooth[k + 1]) / denom
    return float(center * tau)
