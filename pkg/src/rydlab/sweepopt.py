"""Closed-loop optimization of state-preparation detuning sweeps.

A sweep is a cubic interpolant through five control points pinned by seven
numbers, driven alongside a constant Rabi frequency with a short linear
turn-off. Trials evolve the empty state through the sweep on a periodic
kagome cell and score the final state on four objectives: plaquette kinetic
and potential energy, mean excitation density, and a defect density standing
in for atom loss. A small multi-objective loop mixes uniform proposals with
coordinate refinement around the running Pareto front; a user-supplied
proposer can be plugged into the same slot.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, replace

import numpy as np
from scipy.interpolate import CubicSpline

from . import dynamics
from .hilbert import enumerate_basis, full_basis
from .lattice import build_lattice, interaction_table, medial_honeycomb
from .qdm import hexagon_sites, kinetic_energy, potential_energy_state
from .units import mhz, to_mhz

DELTA_CLIP = mhz(20.0)   # detuning window the modulators can cover
OMEGA_TURNOFF = 0.020    # linear Rabi turn-off, us

# Defaults for the trial geometry: blockade-to-spacing ratio 1.32 at the
# 6.0 um spacing pins the nearest-neighbour interaction and the Rabi drive.
DEFAULT_V0 = mhz(18.1)
DEFAULT_OMEGA = DEFAULT_V0 / 1.32**6
TRIAL_CELLS = (3, 3)

OBJECTIVE_NAMES = ("t_energy", "v_energy", "density", "defect")

TRIAL_SCHEMA = "sweep-trial/1"
PARETO_SCHEMA = "pareto/1"


# ---------------------------------------------------------------------------
# sweep profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepProfile:
    """Eight-parameter drive description.

    The detuning passes through (0, delta_min), (t_inf -/+ t_slope,
    delta_inf -/+ slope*t_slope) and (total_time, delta_max); the middle
    three points force an inflection of the given slope at t_inf. Evaluated
    detunings are clipped at +-2pi x 20 MHz. The Rabi drive is constant and
    ramps linearly to zero over the final 20 ns.

    All frequencies are angular (rad/us), times in us; slope is rad/us^2.
    """

    omega: float
    total_time: float
    delta_min: float
    delta_max: float
    delta_inf: float
    t_inf: float
    slope: float
    t_slope: float

    def __post_init__(self):
        if self.omega < 0:
            raise ValueError("omega must be nonnegative")
        if not self.delta_min < 0:
            raise ValueError("sweep must start at negative detuning")
        if not self.delta_max > 0:
            raise ValueError("sweep must end at positive detuning")
        if np.any(np.diff(self.control_times()) <= 0):
            raise ValueError("control points are not monotone in time")

    def control_times(self):
        return np.array([0.0, self.t_inf - self.t_slope, self.t_inf,
                         self.t_inf + self.t_slope, self.total_time])

    def control_values(self):
        reach = self.slope * self.t_slope
        return np.array([self.delta_min, self.delta_inf - reach,
                         self.delta_inf, self.delta_inf + reach,
                         self.delta_max])

    def _spline(self):
        return CubicSpline(self.control_times(), self.control_values())


# Calibrated ED-scale exemplar: a quasi-adiabatic leg down to the inflection
# just below zero detuning, then a faster final leg through the ordering
# crossover up to delta_max inside the clip window.
DEFAULT_PROFILE = SweepProfile(
    omega=DEFAULT_OMEGA,
    total_time=0.8,
    delta_min=-mhz(8.0),
    delta_max=mhz(10.0),
    delta_inf=-mhz(1.0),
    t_inf=0.30,
    slope=mhz(30.0),
    t_slope=0.08,
)


def sweep_delta(profile, t):
    """Clipped detuning at time(s) t in [0, total_time]."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > profile.total_time):
        raise ValueError("sweep time outside [0, total_time]")
    values = np.clip(profile._spline()(t), -DELTA_CLIP, DELTA_CLIP)
    return float(values) if values.ndim == 0 else values


def sweep_omega(profile, t):
    """Rabi drive at time(s) t: constant with the linear turn-off."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > profile.total_time):
        raise ValueError("sweep time outside [0, total_time]")
    ramp = (profile.total_time - t) / OMEGA_TURNOFF
    values = profile.omega * np.clip(ramp, 0.0, 1.0)
    return float(values) if values.ndim == 0 else values


def inflection_rate(profile):
    """Detuning slope at the inflection point, from the spline derivative."""
    return float(profile._spline()(profile.t_inf, 1))


def _drive_functions(profile, rate_factor=1.0):
    """Schedule pair and end time, with the post-inflection segment
    time-compressed by rate_factor (the pre-inflection leg is untouched)."""
    spline = profile._spline()
    t_inf, total = profile.t_inf, profile.total_time
    t_end = t_inf + (total - t_inf) / rate_factor
    amplitude = profile.omega

    def delta(t):
        warped = t if t <= t_inf else t_inf + (t - t_inf) * rate_factor
        warped = min(max(warped, 0.0), total)
        return float(np.clip(spline(warped), -DELTA_CLIP, DELTA_CLIP))

    def omega(t):
        if t >= t_end:
            return 0.0
        if t >= t_end - OMEGA_TURNOFF:
            return amplitude * (t_end - t) / OMEGA_TURNOFF
        return amplitude

    return delta, omega, t_end


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrialRecord:
    """One evaluated sweep: profile, objectives and bookkeeping.

    All four objectives refer to the final state; defect is the monomer
    fraction per vertex, plus the blockade-violation count per vertex when
    the simulation mode allows violations. objectives() returns the
    maximization vector used by the Pareto logic (defect negated).
    """

    profile: SweepProfile
    mode: str
    rate_factor: float
    t_energy: float
    v_energy: float
    density: float
    defect: float
    seed: int | None = None
    wall_time: float = 0.0
    settings: dict | None = None
    trace: tuple | None = None

    def __post_init__(self):
        for name in OBJECTIVE_NAMES:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"objective {name} is not finite")
        if self.density < -1e-9 or self.density > 1.0 + 1e-9:
            raise ValueError("density outside the physical range")

    def objectives(self):
        return np.array([self.t_energy, self.v_energy,
                         self.density, -self.defect])


class _TrialEngine:
    """Basis, Hamiltonian pieces and measurement tables for one geometry."""

    def __init__(self, lattice, mode, v0):
        self.lattice = lattice
        self.mode = mode
        if mode == "full":
            basis = full_basis(lattice.n_sites)
        else:
            basis = enumerate_basis(lattice)
        self.basis = basis
        self.config = dynamics.make_config(
            lattice, 0.0, 0.0, mode=mode, v0=v0, basis=basis)
        self.terms = dynamics.HamiltonianTerms(self.config)
        self.bond_map = medial_honeycomb(lattice)
        self.rings = [hexagon_sites(self.bond_map, p)[0]
                      for p in range(self.bond_map.n_plaquettes)]
        self.n_diag = dynamics.total_occupation_diag(basis)

        occm = basis.occupation_matrix()
        vertex_sums = occm[:, self.bond_map.vertex_bonds].sum(axis=2)
        self.monomer_frac = (vertex_sums == 0).mean(axis=1)
        self.violations = None
        if mode == "full":
            edges = lattice.blockade_graph
            counts = (occm[:, edges[:, 0]] & occm[:, edges[:, 1]]).sum(axis=1)
            self.violations = counts / self.bond_map.n_vertices

        start = int(basis.ordinals(np.array([0], dtype=np.uint64))[0])
        if start < 0:
            raise ValueError("empty configuration missing from the basis")
        psi0 = np.zeros(len(basis), dtype=complex)
        psi0[start] = 1.0
        self.psi0 = psi0

    def evolve(self, state, delta, omega, t0, t1, base_step, tol):
        config = replace(self.config, omega=omega, delta=delta)
        self.terms.config = config
        return dynamics.evolve(state, config, t0, t1, base_step=base_step,
                               tol=tol, terms=self.terms)

    def measure(self, state):
        weights = np.abs(state.amps) ** 2
        v_energy = potential_energy_state(state, self.bond_map)
        t_energy = float(np.mean([kinetic_energy(state, ring)
                                  for ring in self.rings]))
        density = float(weights @ self.n_diag) / self.lattice.n_sites
        defect = float(weights @ self.monomer_frac)
        if self.violations is not None:
            defect += float(weights @ self.violations)
        return t_energy, v_energy, density, defect

    def density_of(self, state):
        weights = np.abs(state.amps) ** 2
        return float(weights @ self.n_diag) / self.lattice.n_sites


_ENGINES = {}


def _engine_for(lattice, mode, v0):
    if lattice is None:
        lattice = build_lattice("kagome", TRIAL_CELLS, a=1.0,
                                boundary="periodic")
    key = (lattice.kind, tuple(np.ravel(lattice.dimensions)), lattice.a,
           lattice.boundary, mode, round(float(v0), 12))
    engine = _ENGINES.get(key)
    if engine is None:
        engine = _TrialEngine(lattice, mode, v0)
        _ENGINES[key] = engine
    return engine


def run_trial(profile, lattice=None, mode="pxp", v0=DEFAULT_V0,
              rate_factor=1.0, base_step=2e-3, tol=1e-4, n_trace=0,
              seed=None):
    """Evolve the empty state through one sweep and score the final state.

    The integration always breaks at the inflection time, so a trial with a
    rate factor shares its pre-inflection segment with the base trial
    bit-for-bit. n_trace > 0 additionally records the mean density at that
    many evenly spaced times (returned as the trace field); the extra
    breakpoints perturb the integrator, so traced and untraced trials agree
    only to the integration tolerance.
    """
    if rate_factor <= 0:
        raise ValueError("rate factor must be positive")
    engine = _engine_for(lattice, mode, v0)
    delta, omega, t_end = _drive_functions(profile, rate_factor)

    start = time.time()
    checkpoints = [min(profile.t_inf, t_end), t_end]
    trace_times = None
    if n_trace > 0:
        trace_times = np.linspace(0.0, t_end, n_trace)
        checkpoints = sorted(set(checkpoints) | set(trace_times.tolist()))

    state = dynamics.StateVector(amps=engine.psi0.copy(), time=0.0,
                                 basis=engine.basis)
    densities = {0.0: engine.density_of(state)}
    t_prev = 0.0
    for t_next in checkpoints:
        if t_next <= t_prev:
            continue
        state = engine.evolve(state, delta, omega, t_prev, t_next,
                              base_step, tol)
        densities[t_next] = engine.density_of(state)
        t_prev = t_next

    t_energy, v_energy, density, defect = engine.measure(state)
    trace = None
    if trace_times is not None:
        trace = (trace_times,
                 np.array([densities[t] for t in trace_times]))
    settings = {
        "lattice": f"{engine.lattice.kind}-"
                   f"{'x'.join(str(d) for d in np.ravel(engine.lattice.dimensions))}"
                   f"-{engine.lattice.boundary}",
        "dim": len(engine.basis),
        "mode": mode,
        "v0": float(v0),
        "base_step": base_step,
        "tol": tol,
    }
    return TrialRecord(
        profile=profile, mode=mode, rate_factor=rate_factor,
        t_energy=t_energy, v_energy=v_energy, density=density, defect=defect,
        seed=seed, wall_time=time.time() - start, settings=settings,
        trace=trace)


def rate_factor_scan(profile, factors, lattice=None, mode="pxp",
                     v0=DEFAULT_V0, base_step=2e-3, tol=1e-4):
    """Rerun one sweep with the post-inflection leg compressed or stretched.

    Only the segment after t_inf is rescaled; factor 1 reproduces the base
    trial exactly. Returns one TrialRecord per factor, in the given order.
    """
    factors = [float(f) for f in np.atleast_1d(factors)]
    if any(f <= 0 for f in factors):
        raise ValueError("rate factors must be positive")
    engine = _engine_for(lattice, mode, v0)

    base_delta, base_omega, _ = _drive_functions(profile, 1.0)
    pre = None
    records = []
    for factor in factors:
        delta, omega, t_end = _drive_functions(profile, factor)
        start = time.time()
        if t_end - profile.t_inf >= OMEGA_TURNOFF:
            # the pre-inflection leg is factor-independent as long as the
            # turn-off window stays beyond t_inf, so it is shared
            if pre is None:
                state = dynamics.StateVector(amps=engine.psi0.copy(),
                                             time=0.0, basis=engine.basis)
                pre = engine.evolve(state, base_delta, base_omega, 0.0,
                                    profile.t_inf, base_step, tol)
            state = pre
        else:
            state = dynamics.StateVector(amps=engine.psi0.copy(), time=0.0,
                                         basis=engine.basis)
            state = engine.evolve(state, delta, omega, 0.0, profile.t_inf,
                                  base_step, tol)
        state = engine.evolve(state, delta, omega, profile.t_inf, t_end,
                              base_step, tol)
        t_energy, v_energy, density, defect = engine.measure(state)
        records.append(TrialRecord(
            profile=profile, mode=mode, rate_factor=factor,
            t_energy=t_energy, v_energy=v_energy, density=density,
            defect=defect, wall_time=time.time() - start,
            settings={"mode": mode, "v0": float(v0),
                      "base_step": base_step, "tol": tol}))
    return records


# ---------------------------------------------------------------------------
# Pareto bookkeeping
# ---------------------------------------------------------------------------

def dominates(a, b):
    """True when maximization vector a is at least b everywhere and better
    somewhere."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return bool(np.all(a >= b) and np.any(a > b))


def pareto_indices(trials):
    """Indices of non-dominated trials, by exhaustive pairwise comparison."""
    vectors = [t.objectives() for t in trials]
    front = []
    for i, vi in enumerate(vectors):
        if not any(dominates(vj, vi) for j, vj in enumerate(vectors) if j != i):
            front.append(i)
    return front


def hypervolume(points, reference):
    """Exact dominated volume between a reference point and a maximization
    point set, by recursive slab slicing along the last axis."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    reference = np.asarray(reference, dtype=float)
    if points.shape[1] != reference.size:
        raise ValueError("reference dimension does not match the points")
    gains = points - reference[None, :]
    gains = gains[np.all(gains > 0.0, axis=1)]
    if gains.size == 0:
        return 0.0
    return _box_union_volume(gains)


def _box_union_volume(gains):
    if gains.shape[1] == 1:
        return float(gains.max())
    if gains.shape[1] == 2:
        order = np.argsort(gains[:, 0])
        xs = gains[order, 0]
        tallest = np.maximum.accumulate(gains[order, 1][::-1])[::-1]
        widths = np.diff(np.concatenate([[0.0], xs]))
        return float(widths @ tallest)
    total = 0.0
    previous = 0.0
    for level in np.unique(gains[:, -1]):
        active = gains[gains[:, -1] >= level, :-1]
        total += _box_union_volume(active) * (level - previous)
        previous = level
    return total


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Trial history plus the running front and proposal bookkeeping.

    Proposal randomness is seeded per trial index, so a resumed run
    reproduces the same proposal stream as an uninterrupted one.
    """

    trials: list
    front: list
    strategy: str
    seed: int
    bounds: dict
    base_profile: SweepProfile

    def proposal_rng(self, index):
        return np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=(index,)))

    def pareto_trials(self):
        return [self.trials[i] for i in self.front]

    def best_per_objective(self):
        """Trial index maximizing each objective (defect: minimizing)."""
        best = {}
        for position, name in enumerate(OBJECTIVE_NAMES):
            values = [t.objectives()[position] for t in self.trials]
            best[name] = int(np.argmax(values))
        return best


def _draw_uniform(rng, bounds, base):
    for _ in range(200):
        params = {key: float(rng.uniform(lo, hi))
                  for key, (lo, hi) in bounds.items()}
        try:
            return replace(base, **params)
        except ValueError:
            continue
    raise RuntimeError("bounds do not admit a valid control-point profile")


def _refine_near_front(rng, state):
    bounds = state.bounds
    anchor = state.trials[state.front[int(rng.integers(len(state.front)))]]
    keys = list(bounds)
    for _ in range(200):
        key = keys[int(rng.integers(len(keys)))]
        lo, hi = bounds[key]
        step = rng.normal(0.0, 0.15 * (hi - lo))
        value = float(np.clip(getattr(anchor.profile, key) + step, lo, hi))
        try:
            return replace(anchor.profile, **{key: value})
        except ValueError:
            continue
    return _draw_uniform(rng, bounds, state.base_profile)


def optimize(bounds, budget, strategy="random+refine", base_profile=None,
             evaluate=None, seed=0, ledger=None, n_random=None,
             **trial_kwargs):
    """Propose, run and record trials until the budget is spent.

    bounds maps SweepProfile field names to (lo, hi) boxes; unbounded fields
    stay at their base_profile values. strategy is "random",
    "random+refine" (uniform for the first n_random trials, then mostly
    coordinate steps around Pareto members), or a callable
    (state, rng) -> SweepProfile filling the same slot, e.g. a surrogate
    model. evaluate(profile, seed=...) -> TrialRecord defaults to run_trial
    with trial_kwargs; passing a stub makes the loop itself cheap to test.
    A ledger path makes the trial stream append-only JSON lines; an
    existing ledger is loaded and the run resumes at its tail.
    """
    if budget < 10:
        raise ValueError("budget below the minimum of 10 trials")
    if base_profile is None:
        base_profile = DEFAULT_PROFILE
    unknown = set(bounds) - {f for f in SweepProfile.__dataclass_fields__}
    if unknown:
        raise ValueError(f"bounds name unknown profile fields: {sorted(unknown)}")
    for key, (lo, hi) in bounds.items():
        if not lo < hi:
            raise ValueError(f"empty bound for {key}")
    if not (callable(strategy) or strategy in ("random", "random+refine")):
        raise ValueError(f"unknown strategy {strategy!r}")
    if evaluate is None:
        def evaluate(profile, seed=None):
            return run_trial(profile, seed=seed, **trial_kwargs)
    if n_random is None:
        n_random = max(5, budget // 5)

    state = OptimizerState(trials=[], front=[], strategy=
                           strategy if isinstance(strategy, str) else "callable",
                           seed=seed, bounds=dict(bounds),
                           base_profile=base_profile)
    if ledger is not None and os.path.exists(ledger):
        state.trials = read_trials(ledger)
        state.front = pareto_indices(state.trials)

    while len(state.trials) < budget:
        index = len(state.trials)
        rng = state.proposal_rng(index)
        if callable(strategy):
            profile = strategy(state, rng)
        elif (strategy == "random" or index < n_random or not state.front
              or rng.random() < 0.25):
            profile = _draw_uniform(rng, bounds, base_profile)
        else:
            profile = _refine_near_front(rng, state)
        record = evaluate(profile, seed=index)
        if ledger is not None:
            append_trial(ledger, record)
        state.trials.append(record)
        state.front = pareto_indices(state.trials)
    return state


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def trial_to_dict(record):
    doc = {"schema": TRIAL_SCHEMA}
    for key in SweepProfile.__dataclass_fields__:
        doc[key] = float(getattr(record.profile, key))
    doc.update(
        mode=record.mode,
        rate_factor=float(record.rate_factor),
        t_energy=float(record.t_energy),
        v_energy=float(record.v_energy),
        density=float(record.density),
        defect=float(record.defect),
        seed=record.seed,
        wall_time=float(record.wall_time),
        settings=record.settings,
    )
    return doc


def trial_from_dict(doc):
    if doc.get("schema") != TRIAL_SCHEMA:
        raise ValueError(f"unexpected trial schema {doc.get('schema')!r}")
    profile = SweepProfile(**{key: doc[key]
                              for key in SweepProfile.__dataclass_fields__})
    return TrialRecord(
        profile=profile, mode=doc["mode"], rate_factor=doc["rate_factor"],
        t_energy=doc["t_energy"], v_energy=doc["v_energy"],
        density=doc["density"], defect=doc["defect"], seed=doc["seed"],
        wall_time=doc["wall_time"], settings=doc.get("settings"))


def append_trial(path, record):
    """Append one trial to the JSON-lines ledger (the trace is not kept)."""
    with open(path, "a") as handle:
        handle.write(json.dumps(trial_to_dict(record), sort_keys=True) + "\n")


def read_trials(path):
    records = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(trial_from_dict(json.loads(line)))
    return records


def write_pareto_csv(state, path):
    """Write the Pareto front as CSV (frequencies in MHz), atomically."""
    frequency_keys = ("omega", "delta_min", "delta_max", "delta_inf", "slope")
    header = ["trial"] + [
        key + ("_mhz" if key in frequency_keys else "_us")
        for key in SweepProfile.__dataclass_fields__
    ] + ["mode", "rate_factor"] + list(OBJECTIVE_NAMES)
    lines = [f"# schema={PARETO_SCHEMA}", ",".join(header)]
    for index in state.front:
        record = state.trials[index]
        row = [str(index)]
        for key in SweepProfile.__dataclass_fields__:
            value = getattr(record.profile, key)
            row.append(f"{to_mhz(value) if key in frequency_keys else value:.9g}")
        row.append(record.mode)
        row.append(f"{record.rate_factor:.9g}")
        row.extend(f"{getattr(record, name):.9g}" for name in OBJECTIVE_NAMES)
        lines.append(",".join(row))
    tmp = str(path) + ".tmp"
    with open(tmp, "w") as handle:
        handle.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
