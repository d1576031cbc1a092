"""Batch front-end: config files, named scenario pipelines, run manifests.

Configs are flat ``key = value`` text with ``#`` comments. Every frequency
key carries an explicit ``_mhz`` suffix (slopes ``_mhz_per_us``, times
``_us``) and is converted to angular units exactly once, where the value
enters a physics call. CSV artifacts start with a ``# schema=name/version``
comment line; a scenario writes its artifacts atomically and finishes with
a JSON manifest naming every file, its size and hash, so a figure can be
rebuilt from config + seed alone.

Basis enumeration respects the RYDLAB_BASIS_CAP environment variable (see
``hilbert``), which is the memory backstop for oversized requests.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field

import matplotlib
import numpy as np
from scipy.linalg import expm

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from . import __version__, qdm, wormmc
from .correlators import ratio_check, rectified
from .dynamics import occupation_diag
from .floquet import (EchoDrive, EffectiveCoeffs, HoppingDrive, RingDrive,
                      SymmetrizedDrive, build_hf, effective_h_leading,
                      fit_operator_coefficients, short_time_coeffs)
from .hilbert import enumerate_basis
from .lattice import build_lattice
from .probes import (dft_and_fit, greens_function, initial_state,
                     sample_dataset, simulate_learning_dataset, spectral_grid)
from .probes import learn as learn_coeffs
from .sweepopt import (DEFAULT_PROFILE, SweepProfile, optimize,
                       rate_factor_scan, run_trial, write_pareto_csv)
from .units import mhz, to_mhz


class UsageError(Exception):
    """Bad invocation or config: reported on stderr, exit status 2."""


class PipelineError(Exception):
    """A scenario step failed downstream: reported with context, exit 1."""


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines into a dict (ints, floats, strings)."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, _, rhs = line.partition("=")
        key = key.strip()
        rhs = rhs.strip()
        if not key or not rhs:
            raise UsageError(f"config line {lineno}: empty key or value")
        if key in values:
            raise UsageError(f"config line {lineno}: duplicate key {key!r}")
        values[key] = _parse_scalar(rhs)
    return values


def _parse_scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            continue
    return text


def read_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc


@dataclass(frozen=True)
class _Key:
    """One config key: default, inclusive bounds, and a one-line meaning."""

    default: object
    lo: float | None = None
    hi: float | None = None
    help: str = ""


def _profile_mhz(profile: SweepProfile) -> dict:
    return {
        "omega_mhz": to_mhz(profile.omega),
        "total_time_us": profile.total_time,
        "delta_min_mhz": to_mhz(profile.delta_min),
        "delta_max_mhz": to_mhz(profile.delta_max),
        "delta_inf_mhz": to_mhz(profile.delta_inf),
        "t_inf_us": profile.t_inf,
        "slope_mhz_per_us": to_mhz(profile.slope),
        "t_slope_us": profile.t_slope,
    }


_DP = _profile_mhz(DEFAULT_PROFILE)

CONFIG_KEYS: dict[str, _Key] = {
    # effective-Hamiltonian coefficients (walk, spectroscopy, learning)
    "n_sites": _Key(12, 3, 23, "chain length"),
    "n_periods": _Key(24, 2, 512, "stroboscopic periods to record"),
    "tau_us": _Key(0.36, 0.01, 10.0, "drive period"),
    "mu_mhz": _Key(-0.143, -20.0, 20.0, "chemical potential"),
    "u_mhz": _Key(0.023, -20.0, 20.0, "nearest-neighbour ZIZ weight"),
    "j_mhz": _Key(0.411, -20.0, 20.0, "constrained hopping"),
    "gx_mhz": _Key(0.0, -20.0, 20.0, "residual PXP weight"),
    "gy_mhz": _Key(0.021, -20.0, 20.0, "residual PYP weight"),
    "n_omega": _Key(1024, 64, 1 << 16, "frequency grid points"),
    "shots": _Key(0, 0, 10_000_000, "finite-shot resampling (0 = exact tables)"),
    # dimer sampling (subsystems, ratio)
    "cells_x": _Key(6, 2, 64, "lattice cells along x"),
    "cells_y": _Key(2, 1, 64, "lattice cells along y"),
    "samples": _Key(30_000, 100, 10_000_000, "snapshots to keep"),
    "thin": _Key(5, 1, 1000, "worm updates between kept snapshots"),
    "burn_in": _Key(30, 0, 100_000, "discarded leading updates per chain"),
    "chains": _Key(256, 1, 4096, "interleaved worm chains"),
    "v0_mhz": _Key(18.1, 0.0, 1000.0, "nearest-neighbour interaction"),
    "shapes": _Key("1x1,2x1,2x2", None, None, "subsystem shapes, comma separated"),
    "window_lo": _Key(2.0, 0.0, 64.0, "smallest separation in the ratio fit"),
    "window_hi": _Key(6.0, 0.0, 64.0, "largest separation in the ratio fit"),
    # preparation sweeps (rate scan)
    "omega_mhz": _Key(round(_DP["omega_mhz"], 6), 0.0, 20.0, "Rabi frequency"),
    "total_time_us": _Key(_DP["total_time_us"], 0.05, 20.0, "sweep duration"),
    "delta_min_mhz": _Key(_DP["delta_min_mhz"], None, None, "initial detuning"),
    "delta_max_mhz": _Key(_DP["delta_max_mhz"], None, None, "final detuning"),
    "delta_inf_mhz": _Key(_DP["delta_inf_mhz"], None, None, "inflection detuning"),
    "t_inf_us": _Key(_DP["t_inf_us"], 0.0, 20.0, "inflection time"),
    "slope_mhz_per_us": _Key(_DP["slope_mhz_per_us"], None, None, "inflection slope"),
    "t_slope_us": _Key(_DP["t_slope_us"], 0.001, 10.0, "slope control-point offset"),
    "factors": _Key("4,2,1,0.5", None, None, "rate factors, comma separated"),
    "modes": _Key("pxp,pxp+tails", None, None, "interaction modes, comma separated"),
    "base_step_us": _Key(2e-3, 1e-5, 0.1, "integrator base step"),
    "tol": _Key(1e-4, 1e-12, 1e-1, "integrator refinement tolerance"),
}

# Detuning-like keys are actuator-clipped at +-20 MHz rather than rejected.
_CLIPPED_KEYS = ("delta_min_mhz", "delta_max_mhz", "delta_inf_mhz")
_CLIP_MHZ = 20.0

_UNIT_SUFFIXES = ("_mhz_per_us", "_mhz", "_us")


@dataclass
class ConfigReport:
    """validate_config outcome: problems found plus the effective defaults."""

    path: str
    values: dict = field(default_factory=dict)
    unknown: list = field(default_factory=list)
    unit_mismatches: list = field(default_factory=list)
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not (self.unknown or self.unit_mismatches or self.violations)

    def defaults(self) -> dict:
        return {name: spec.default for name, spec in CONFIG_KEYS.items()}

    def format(self) -> str:
        out = [f"config {self.path}: {len(self.values)} keys"]
        for label, entries in (("unknown key", self.unknown),
                               ("unit mismatch", self.unit_mismatches),
                               ("bound violation", self.violations),
                               ("warning", self.warnings)):
            out.extend(f"  {label}: {entry}" for entry in entries)
        if not self.values:
            out.append("  empty config, scenario defaults apply:")
            out.extend(f"    {name} = {value}"
                       for name, value in sorted(self.defaults().items()))
        elif self.ok and not self.warnings:
            out.append("  ok")
        return "\n".join(out)


def _strip_units(key: str) -> str:
    for suffix in _UNIT_SUFFIXES:
        if key.endswith(suffix):
            return key[: -len(suffix)]
    return key


def _check_values(values: dict, keys=None) -> ConfigReport:
    report = ConfigReport(path="<dict>", values=dict(values))
    known = CONFIG_KEYS if keys is None else {k: CONFIG_KEYS[k] for k in keys}
    stems = {_strip_units(name): name for name in known}
    for key, value in values.items():
        if key not in known:
            stem = _strip_units(key)
            if stem in stems and stems[stem] != key:
                report.unit_mismatches.append(
                    f"{key}: values are plain MHz / us here, use {stems[stem]}")
            else:
                report.unknown.append(key)
            continue
        spec = known[key]
        if isinstance(spec.default, str):
            if not isinstance(value, str):
                report.violations.append(f"{key} = {value}: expected text")
            continue
        if isinstance(value, str):
            report.violations.append(f"{key} = {value!r}: expected a number")
            continue
        if key in _CLIPPED_KEYS:
            if abs(value) > _CLIP_MHZ:
                report.warnings.append(
                    f"{key} = {value}: beyond the +-{_CLIP_MHZ:.0f} MHz actuator"
                    " clip, the waveform will saturate there")
            continue
        if spec.lo is not None and value < spec.lo:
            report.violations.append(f"{key} = {value}: below minimum {spec.lo}")
        elif spec.hi is not None and value > spec.hi:
            report.violations.append(f"{key} = {value}: above maximum {spec.hi}")
    return report


def validate_config(path) -> ConfigReport:
    """Check a config file against the key registry without running anything."""
    report = _check_values(read_config(path))
    report.path = str(path)
    return report


def _merged(config: dict | None, keys, presets: dict | None = None) -> dict:
    """Scenario view of a config: defaults, then presets, then the file."""
    values = dict(config or {})
    report = _check_values(values, keys)
    if not report.ok:
        problems = report.unknown + report.unit_mismatches + report.violations
        raise UsageError("config rejected: " + "; ".join(problems))
    merged = {k: CONFIG_KEYS[k].default for k in keys}
    merged.update(presets or {})
    merged.update(values)
    return merged


def _floats(text) -> tuple[float, ...]:
    try:
        return tuple(float(part) for part in str(text).split(",") if part.strip())
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


# ---------------------------------------------------------------------------
# artifacts and manifests
# ---------------------------------------------------------------------------

def config_hash(config: dict) -> str:
    """Order-independent hash of a config dict."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


@dataclass(frozen=True)
class RunManifest:
    """What a scenario produced and from which inputs."""

    scenario: str
    config_hash: str
    seed: int
    versions: dict
    wall_time: float
    outputs: tuple

    def to_json(self) -> str:
        body = {"schema": "run-manifest/1", "scenario": self.scenario,
                "config_hash": self.config_hash, "seed": self.seed,
                "versions": self.versions, "wall_time_s": self.wall_time,
                "outputs": list(self.outputs)}
        return json.dumps(body, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        body = json.loads(text)
        if body.get("schema") != "run-manifest/1":
            raise ValueError(f"unexpected manifest schema {body.get('schema')!r}")
        return cls(scenario=body["scenario"], config_hash=body["config_hash"],
                   seed=body["seed"], versions=body["versions"],
                   wall_time=body["wall_time_s"],
                   outputs=tuple(body["outputs"]))


def _versions() -> dict:
    import scipy

    return {"rydlab": __version__, "numpy": np.__version__,
            "scipy": scipy.__version__, "matplotlib": matplotlib.__version__,
            "python": ".".join(map(str, sys.version_info[:3]))}


def _write_atomic(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


class Emitter:
    """Collects scenario artifacts: atomic writes plus an inventory."""

    def __init__(self, outdir):
        self.outdir = str(outdir)
        self.outputs = []
        os.makedirs(self.outdir, exist_ok=True)

    def _record(self, name: str, data: bytes) -> None:
        _write_atomic(os.path.join(self.outdir, name), data)
        self.outputs.append({"name": name, "bytes": len(data),
                             "sha256": hashlib.sha256(data).hexdigest()})

    def csv(self, name: str, schema: str, header, rows) -> None:
        buf = io.StringIO()
        buf.write(f"# schema={schema}\n")
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(_cell(value) for value in row) + "\n")
        self._record(name, buf.getvalue().encode())

    def figure(self, name: str, fig) -> None:
        buf = io.BytesIO()
        fig.savefig(buf, format="png", dpi=150)
        plt.close(fig)
        self._record(name, buf.getvalue())


def _cell(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def read_csv(path):
    """Read one of our CSVs back: (schema, header, ndarray-of-object rows)."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema="):
            raise ValueError(f"{path} has no schema comment line")
        schema = first.split("=", 1)[1]
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return schema, header, rows


# ---------------------------------------------------------------------------
# scenario pipelines
# ---------------------------------------------------------------------------

def _coeffs_from(cfg: dict) -> EffectiveCoeffs:
    return EffectiveCoeffs(mu=mhz(cfg["mu_mhz"]), u=mhz(cfg["u_mhz"]),
                           j=mhz(cfg["j_mhz"]), g_x=mhz(cfg["gx_mhz"]),
                           g_y=mhz(cfg["gy_mhz"]))


def _scn_quantum_walk(cfg: dict, emit: Emitter, seed: int) -> None:
    """Single-excitation walk under the engineered Hamiltonian, per period."""
    lattice = build_lattice("ring", int(cfg["n_sites"]), a=1.0)
    basis = enumerate_basis(lattice)
    h = build_hf(basis, lattice, _coeffs_from(cfg)).toarray()
    tau = cfg["tau_us"]
    u = expm(-1j * tau * h)
    center = lattice.n_sites // 2
    psi = initial_state(basis, "exc", center)
    number = np.stack([occupation_diag(basis, s) for s in range(lattice.n_sites)])
    rows = []
    for n in range(int(cfg["n_periods"])):
        dens = number @ np.abs(psi) ** 2
        rows.extend((n, n * tau, site, site - center, float(d))
                    for site, d in enumerate(dens))
        psi = u @ psi
    emit.csv("quantum-walk.csv", "quantum-walk/1",
             ("period", "time_us", "site", "offset", "density"), rows)

    dens = np.array([r[4] for r in rows]).reshape(int(cfg["n_periods"]),
                                                  lattice.n_sites)
    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    mesh = ax.pcolormesh(np.arange(lattice.n_sites) - center,
                         np.arange(int(cfg["n_periods"])) * tau, dens,
                         cmap="magma", shading="nearest")
    fig.colorbar(mesh, ax=ax, label="density")
    ax.set_xlabel("site offset")
    ax.set_ylabel("time (us)")
    emit.figure("quantum-walk.png", fig)


def _scn_spectral(cfg: dict, emit: Emitter, seed: int) -> None:
    """Excitation Green's function, its transform, and the dispersion fit."""
    n = int(cfg["n_sites"])
    if n % 2 == 0:
        raise UsageError("spectroscopy needs an odd site count")
    lattice = build_lattice("chain", n, a=1.0, boundary="open")
    model = _coeffs_from(cfg)
    data = greens_function(model, lattice, int(cfg["n_periods"]), tau=cfg["tau_us"])
    grid = spectral_grid(data, n_omega=int(cfg["n_omega"]))
    fit = dft_and_fit(data, n_omega=int(cfg["n_omega"]))

    rows = []
    for i, k in enumerate(grid.k):
        rows.extend((float(k), to_mhz(w), float(grid.g_kw[i, j].imag))
                    for j, w in enumerate(grid.omega))
    emit.csv("spectral.csv", "spectral/1", ("k", "omega_mhz", "im_g"), rows)
    emit.csv("dispersion.csv", "dispersion/1",
             ("k", "peak_omega_mhz", "model_omega_mhz", "c0_mhz", "c1_mhz"),
             [(float(k), to_mhz(w), to_mhz(fit.c0 + fit.c1 * np.cos(k)),
               to_mhz(fit.c0), to_mhz(fit.c1))
              for k, w in zip(fit.k, fit.peak_omega)])

    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    mesh = ax.pcolormesh(grid.k, to_mhz(grid.omega), grid.g_kw.imag.T,
                         cmap="viridis", shading="nearest")
    fig.colorbar(mesh, ax=ax, label="Im G(k, w)")
    ks = np.linspace(grid.k.min(), grid.k.max(), 256)
    ax.plot(ks, to_mhz(fit.c0 + fit.c1 * np.cos(ks)), "w--", lw=1.0)
    ax.set_xlabel("k (1/a)")
    ax.set_ylabel("omega (MHz)")
    emit.figure("spectral.png", fig)


def _parse_shapes(text) -> list[tuple[int, int]]:
    shapes = []
    for part in str(text).split(","):
        part = part.strip()
        try:
            a, b = part.split("x")
            shapes.append((int(a), int(b)))
        except ValueError:
            raise UsageError(f"bad subsystem shape {part!r}, expected like 2x1") from None
    return shapes


def _worm_samples(cfg: dict, seed: int):
    bm = wormmc.torus_bond_map(int(cfg["cells_x"]), int(cfg["cells_y"]))
    plan = wormmc.WormChainConfig(lx=int(cfg["cells_x"]), ly=int(cfg["cells_y"]),
                                  samples=int(cfg["samples"]), seed=seed,
                                  thin=int(cfg["thin"]))
    blocks = wormmc.sample_blocks(plan, chains=int(cfg["chains"]),
                                  burn_in=int(cfg["burn_in"]), bond_map=bm)
    return bm, np.concatenate(list(blocks))


def _scn_subsystems(cfg: dict, emit: Emitter, seed: int) -> None:
    """Internal-covering statistics of small regions cut from torus samples."""
    bm, occ = _worm_samples(cfg, seed)
    v0 = mhz(cfg["v0_mhz"])
    rows, blocks = [], []
    for shape in _parse_shapes(cfg["shapes"]):
        dist = qdm.subsystem_distribution(occ, bm, shape, outer_dimers=0)
        region = qdm.subsystem_regions(bm, shape)[0]
        energies = qdm.subsystem_energies(bm, region, dist.coverings, v0)
        probs = dist.probabilities
        label = f"{shape[0]}x{shape[1]}"
        rows.extend((label, i, to_mhz(e), float(p), int(c))
                    for i, (e, p, c) in enumerate(zip(energies, probs, dist.counts)))
        blocks.append((probs, energies))
    fit = qdm.thermal_fit([b[0] for b in blocks], [b[1] for b in blocks])
    emit.csv("subsystems.csv", "subsystems/1",
             ("shape", "covering", "energy_mhz", "probability", "count"), rows)
    emit.csv("subsystem-fit.csv", "subsystem-fit/1",
             ("beta_times_v0", "residual", "flagged"),
             [(float(fit.beta * v0), fit.residual, int(fit.flagged))])

    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for (probs, energies), shape in zip(blocks, _parse_shapes(cfg["shapes"])):
        ax.semilogy(to_mhz(energies), probs, "o", ms=4,
                    label=f"{shape[0]}x{shape[1]}")
    ax.set_xlabel("internal energy (MHz)")
    ax.set_ylabel("probability")
    ax.legend(frameon=False)
    emit.figure("subsystems.png", fig)


def _scn_ratio(cfg: dict, emit: Emitter, seed: int) -> None:
    """Rectified correlator decays and their universal log-log ratio."""
    bm, occ = _worm_samples(cfg, seed)
    dimer = rectified(occ, bm, kind="dimer-dimer", restriction="same-row",
                      seed=seed)
    string = rectified(occ, bm, kind="dimer-string", seed=seed)
    window = (cfg["window_lo"], cfg["window_hi"])
    check = ratio_check(dimer, string, window=window)

    rows = []
    for est, kind in ((dimer, "dimer-dimer"), (string, "dimer-string")):
        rows.extend((kind, float(r), float(abs(v)), float(e), int(f))
                    for r, v, e, f in zip(est.bins, est.values, est.errors,
                                          est.flagged))
    emit.csv("correlators.csv", "correlators/1",
             ("kind", "separation", "abs_value", "error", "flagged"), rows)
    emit.csv("ratio.csv", "ratio/1",
             ("separation", "log_ratio", "slope", "intercept",
              "window_lo", "window_hi"),
             [(float(r), float(q), check.slope, check.intercept,
               window[0], window[1])
              for r, q in zip(check.bins, check.ratios)])

    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for est, label in ((dimer, "vertex"), (string, "string")):
        keep = ~est.flagged & (est.bins > 0)
        ax.loglog(est.bins[keep], np.abs(est.values[keep]), "o-", ms=4,
                  label=label)
    keep = ~string.flagged & (string.bins > 0)
    ref = np.abs(string.values[keep])
    ax.loglog(string.bins[keep], ref ** 4 / ref[0] ** 3, "k--", lw=1.0,
              label="string^4 guide")
    ax.set_xlabel("separation (cells)")
    ax.set_ylabel("|rectified correlator|")
    ax.legend(frameon=False)
    emit.figure("ratio.png", fig)


def _profile_from(cfg: dict) -> SweepProfile:
    return SweepProfile(omega=mhz(cfg["omega_mhz"]),
                        total_time=cfg["total_time_us"],
                        delta_min=mhz(cfg["delta_min_mhz"]),
                        delta_max=mhz(cfg["delta_max_mhz"]),
                        delta_inf=mhz(cfg["delta_inf_mhz"]),
                        t_inf=cfg["t_inf_us"],
                        slope=mhz(cfg["slope_mhz_per_us"]),
                        t_slope=cfg["t_slope_us"])


def _scn_rate_scan(cfg: dict, emit: Emitter, seed: int) -> None:
    """Sweep-rate scan of the preparation profile in each interaction mode."""
    profile = _profile_from(cfg)
    lattice = build_lattice("kagome", (int(cfg["cells_x"]), int(cfg["cells_y"])),
                            a=1.0, boundary="periodic")
    factors = _floats(cfg["factors"])
    modes = [m.strip() for m in str(cfg["modes"]).split(",") if m.strip()]
    rows = []
    curves = {}
    for mode in modes:
        records = rate_factor_scan(profile, factors, lattice=lattice, mode=mode,
                                   v0=mhz(cfg["v0_mhz"]),
                                   base_step=cfg["base_step_us"], tol=cfg["tol"])
        rows.extend((mode, rec.rate_factor, rec.t_energy, rec.v_energy,
                     rec.density, rec.defect) for rec in records)
        curves[mode] = records
    emit.csv("rate-scan.csv", "rate-scan/1",
             ("mode", "rate_factor", "t_energy", "v_energy", "density",
              "defect"), rows)

    fig, ax = plt.subplots(figsize=(5.0, 4.0))
    for mode, records in curves.items():
        f = [r.rate_factor for r in records]
        ax.semilogx(f, [r.t_energy for r in records], "o-", ms=4,
                    label=f"{mode} T")
        ax.semilogx(f, [r.v_energy for r in records], "s--", ms=4,
                    label=f"{mode} V")
    ax.axhline(4.0 / 21.0, color="0.6", lw=0.8)
    ax.set_xlabel("rate factor")
    ax.set_ylabel("per-plaquette energy")
    ax.legend(frameon=False, fontsize=8)
    emit.figure("rate-scan.png", fig)


@dataclass(frozen=True)
class _Scenario:
    func: object
    keys: tuple
    description: str
    presets: tuple = ()


_COEFF_KEYS = ("n_sites", "n_periods", "tau_us", "mu_mhz", "u_mhz", "j_mhz",
               "gx_mhz", "gy_mhz")
_WORM_KEYS = ("cells_x", "cells_y", "samples", "thin", "burn_in", "chains")
_PROFILE_KEYS = ("omega_mhz", "total_time_us", "delta_min_mhz", "delta_max_mhz",
                 "delta_inf_mhz", "t_inf_us", "slope_mhz_per_us", "t_slope_us")

SCENARIOS: dict[str, _Scenario] = {
    "fig2e-quantum-walk": _Scenario(
        _scn_quantum_walk, _COEFF_KEYS,
        "single-excitation walk under the engineered Hamiltonian"),
    "fig3d-spectral": _Scenario(
        _scn_spectral, _COEFF_KEYS + ("n_omega",),
        "spectral function with cosine-band dispersion fit"),
    "fig5a-subsystems": _Scenario(
        _scn_subsystems, _WORM_KEYS + ("v0_mhz", "shapes"),
        "subsystem covering statistics with a thermal fit"),
    "fig6e-ratio": _Scenario(
        _scn_ratio, _WORM_KEYS + ("window_lo", "window_hi"),
        "rectified correlator decays and the log-magnitude ratio",
        presets=(("cells_x", 36), ("thin", 17))),
    "edfig6-rate-scan": _Scenario(
        _scn_rate_scan, _PROFILE_KEYS + ("cells_x", "cells_y", "v0_mhz",
                                         "factors", "modes", "base_step_us",
                                         "tol"),
        "rate-factor scan of the preparation sweep per mode",
        presets=(("cells_x", 3), ("cells_y", 3))),
}


def run_scenario(name: str, config: dict | None = None, outdir=".",
                 seed: int = 0) -> RunManifest:
    """Run one named pipeline; artifacts land in outdir, manifest last."""
    if name not in SCENARIOS:
        known = ", ".join(sorted(SCENARIOS))
        raise UsageError(f"unknown scenario {name!r}; known scenarios: {known}")
    scenario = SCENARIOS[name]
    cfg = _merged(config, scenario.keys, dict(scenario.presets))
    emit = Emitter(outdir)
    start = time.perf_counter()
    try:
        scenario.func(cfg, emit, seed)
    except UsageError:
        raise
    except Exception as exc:
        raise PipelineError(f"scenario {name}: {exc}") from exc
    manifest = RunManifest(scenario=name, config_hash=config_hash(cfg),
                           seed=seed, versions=_versions(),
                           wall_time=time.perf_counter() - start,
                           outputs=tuple(emit.outputs))
    _write_atomic(os.path.join(emit.outdir, f"{name}-manifest.json"),
                  manifest.to_json().encode())
    return manifest


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cells_arg(values) -> tuple:
    return (values[0], values[1]) if len(values) == 2 else (values[0],)


def _cmd_lattice(args) -> int:
    dims = _cells_arg(args.cells)
    spec = build_lattice(args.kind, dims if len(dims) > 1 else dims[0],
                         a=args.spacing, boundary=args.boundary)
    path = os.path.join(args.out, "lattice.json")
    os.makedirs(args.out, exist_ok=True)
    _write_atomic(path, spec.to_json().encode())
    print(f"{spec.kind} {spec.dimensions}: {spec.n_sites} sites, "
          f"{spec.blockade_graph.shape[0] if spec.blockade_graph is not None else 0}"
          f" blockade pairs -> {path}")
    return 0


def _cmd_evolve(args) -> int:
    cfg = _merged(read_config(args.config) if args.config else None,
                  _PROFILE_KEYS + ("cells_x", "cells_y", "v0_mhz",
                                   "base_step_us", "tol"),
                  {"cells_x": 3, "cells_y": 3})
    lattice = build_lattice("kagome", (int(cfg["cells_x"]), int(cfg["cells_y"])),
                            a=1.0, boundary="periodic")
    record = run_trial(_profile_from(cfg), lattice=lattice, mode=args.mode,
                       v0=mhz(cfg["v0_mhz"]), rate_factor=args.factor,
                       base_step=cfg["base_step_us"], tol=cfg["tol"],
                       n_trace=args.trace, seed=args.seed)
    print(f"T={record.t_energy:.4f} V={record.v_energy:.4f} "
          f"density={record.density:.4f} defect={record.defect:.4f} "
          f"({record.wall_time:.1f}s)")
    if args.trace:
        emit = Emitter(args.out)
        times, densities = record.trace
        emit.csv("evolve-trace.csv", "evolve-trace/1", ("time_us", "density"),
                 list(zip(times, densities)))
        print(f"trace -> {os.path.join(args.out, 'evolve-trace.csv')}")
    return 0


_DRIVES = {
    "echo": lambda a: EchoDrive(tau=a.tau, t_e=a.tau / 4.0, w_e=a.we),
    "hopping": lambda a: HoppingDrive(epsilon=a.epsilon, gamma=a.gamma,
                                      theta=a.theta, tau=a.tau, w_e=a.we,
                                      w_p=a.wp),
    "symmetrized": lambda a: SymmetrizedDrive(
        HoppingDrive(epsilon=a.epsilon, gamma=a.gamma, theta=a.theta,
                     tau=a.tau, w_e=a.we, w_p=a.wp)),
    "ring": lambda a: RingDrive(eps0=a.eps0, eps1=a.eps1, a_cos=a.acos,
                                tau=a.tau, w_e=a.we),
}


def _cmd_floquet(args) -> int:
    drive = _DRIVES[args.drive](args)
    omega = mhz(args.omega_mhz)
    short = short_time_coeffs(drive, omega)
    names = ("mu", "u", "j", "g_x", "g_y")
    rows = {name: [to_mhz(getattr(short, name))] for name in names}
    header = ["coefficient", "short_time_mhz"]
    if args.exact_sites:
        lattice = build_lattice("chain", args.exact_sites, a=1.0,
                                boundary="periodic")
        basis = enumerate_basis(lattice)
        h = effective_h_leading(drive, lattice, omega, basis=basis)
        fitted, residual = fit_operator_coefficients(h, basis, lattice)
        for name in names:
            rows[name].append(to_mhz(getattr(fitted, name)))
        header.append("operator_fit_mhz")
        print(f"operator fit residual: {residual:.2e}")
    emit = Emitter(args.out)
    emit.csv("floquet-coeffs.csv", "floquet-coeffs/1", header,
             [(name, *vals) for name, vals in rows.items()])
    for name, vals in rows.items():
        print(f"{name:>4}: " + "  ".join(f"{v:+.4f} MHz" for v in vals))
    return 0


def _cmd_learn(args) -> int:
    cfg = _merged(read_config(args.config) if args.config else None,
                  _COEFF_KEYS + ("shots",))
    lattice = build_lattice("ring", int(cfg["n_sites"]), a=1.0)
    truth = _coeffs_from(cfg)
    dataset = simulate_learning_dataset(truth, lattice, int(cfg["n_periods"]),
                                        tau=cfg["tau_us"])
    if int(cfg["shots"]) > 0:
        dataset = sample_dataset(dataset, int(cfg["shots"]), seed=args.seed)
    result = learn_coeffs(dataset)
    emit = Emitter(args.out)
    names = ("mu", "u", "j", "g_x", "g_y")
    emit.csv("learned-coeffs.csv", "learned-coeffs/1",
             ("coefficient", "true_mhz", "learned_mhz"),
             [(n, to_mhz(getattr(truth, n)), to_mhz(getattr(result.coeffs, n)))
              for n in names])
    print(f"cost={result.cost:.3e} converged={result.converged}")
    for n in names:
        print(f"{n:>4}: true {to_mhz(getattr(truth, n)):+.4f}  "
              f"learned {to_mhz(getattr(result.coeffs, n)):+.4f} MHz")
    return 0


def _cmd_spectro(args) -> int:
    cfg = _merged(read_config(args.config) if args.config else None,
                  SCENARIOS["fig3d-spectral"].keys)
    emit = Emitter(args.out)
    _scn_spectral(cfg, emit, args.seed)
    print(f"{len(emit.outputs)} artifacts -> {args.out}")
    return 0


def _cmd_worm(args) -> int:
    plan = wormmc.WormChainConfig(lx=args.cells[0], ly=args.cells[1],
                                  samples=args.samples, seed=args.seed,
                                  thin=args.thin)
    bm = wormmc.torus_bond_map(plan.lx, plan.ly)
    blocks = wormmc.sample_blocks(plan, chains=args.chains,
                                  burn_in=args.burn_in, bond_map=bm)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, args.file)
    wormmc.write_snapshots(path, plan, blocks, bond_map=bm)
    print(f"{args.samples} coverings on the {plan.lx}x{3 * plan.ly} torus -> {path}")
    return 0


def _cmd_correlate(args) -> int:
    plan, occ = wormmc.read_snapshots(args.snapshots)
    bm = wormmc.torus_bond_map(plan.lx, plan.ly)
    cfg = {"window_lo": args.window[0], "window_hi": args.window[1]}
    emit = Emitter(args.out)
    dimer = rectified(occ, bm, kind="dimer-dimer", restriction="same-row",
                      seed=args.seed)
    string = rectified(occ, bm, kind="dimer-string", seed=args.seed)
    rows = []
    for est, kind in ((dimer, "dimer-dimer"), (string, "dimer-string")):
        rows.extend((kind, float(r), float(abs(v)), float(e), int(f))
                    for r, v, e, f in zip(est.bins, est.values, est.errors,
                                          est.flagged))
    emit.csv("correlators.csv", "correlators/1",
             ("kind", "separation", "abs_value", "error", "flagged"), rows)
    check = ratio_check(dimer, string, window=(cfg["window_lo"], cfg["window_hi"]))
    emit.csv("ratio.csv", "ratio/1",
             ("separation", "log_ratio", "slope", "intercept",
              "window_lo", "window_hi"),
             [(float(r), float(q), check.slope, check.intercept,
               cfg["window_lo"], cfg["window_hi"])
              for r, q in zip(check.bins, check.ratios)])
    print(f"log-log slope {check.slope:.3f}; per-bin ratios "
          + " ".join(f"{q:.2f}" for q in check.ratios))
    return 0


def _cmd_qdm(args) -> int:
    plan, occ = wormmc.read_snapshots(args.snapshots)
    bm = wormmc.torus_bond_map(plan.lx, plan.ly)
    census = qdm.classify_vertices(occ, bm)
    v = qdm.potential_energy(occ, bm)
    emit = Emitter(args.out)
    emit.csv("qdm-census.csv", "qdm-census/1", ("quantity", "value"),
             [("samples", occ.shape[0]),
              ("monomer_fraction", float(census.monomer.mean())),
              ("double_dimer_fraction", float(census.double.mean())),
              ("potential_per_plaquette", v.value),
              ("potential_error", v.error)])
    print(f"{occ.shape[0]} snapshots: V/plaquette = {v.value:.4f}"
          f" +- {v.error:.4f}, monomers = {census.monomer.mean():.4f}")
    return 0


def _cmd_optimize(args) -> int:
    bounds = {}
    for name, lo, hi in args.bound or []:
        key = name if name in CONFIG_KEYS else None
        if key is None or key not in _PROFILE_KEYS:
            raise UsageError(f"unknown bound key {name!r}; profile keys: "
                             + ", ".join(_PROFILE_KEYS))
        field_name = _strip_units(key)
        scale = mhz(1.0) if key.endswith(("_mhz", "_mhz_per_us")) else 1.0
        bounds[field_name] = (float(lo) * scale, float(hi) * scale)
    if not bounds:
        bounds = {"delta_max": (mhz(6.0), mhz(14.0)),
                  "delta_inf": (-mhz(4.0), mhz(4.0)),
                  "t_inf": (0.15, 0.6),
                  "slope": (mhz(5.0), mhz(60.0))}
    os.makedirs(args.out, exist_ok=True)
    ledger = os.path.join(args.out, "trials.jsonl")
    state = optimize(bounds, budget=args.budget, strategy=args.strategy,
                     seed=args.seed, ledger=ledger, mode=args.mode)
    write_pareto_csv(state, os.path.join(args.out, "pareto.csv"))
    best = state.best_per_objective()
    print(f"{len(state.trials)} trials, {len(state.front)} on the front")
    for objective, index in best.items():
        print(f"best {objective}: trial {index}")
    return 0


def _cmd_scenario(args) -> int:
    if args.list:
        for name, scenario in sorted(SCENARIOS.items()):
            print(f"{name:>20}  {scenario.description}")
        return 0
    if not args.name:
        raise UsageError("scenario name required (or use --list)")
    config = read_config(args.config) if args.config else None
    manifest = run_scenario(args.name, config, outdir=args.out, seed=args.seed)
    names = ", ".join(o["name"] for o in manifest.outputs)
    print(f"{manifest.scenario}: {names} ({manifest.wall_time:.1f}s) -> {args.out}")
    return 0


def _cmd_validate(args) -> int:
    report = validate_config(args.path)
    print(report.format())
    return 0 if report.ok else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rydlab",
        description="Blockade-constrained simulation pipelines.",
        epilog="RYDLAB_BASIS_CAP caps constrained-basis enumeration (memory "
               "backstop). Set --threads to pin BLAS thread pools.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=".", help="artifact directory")
    parser.add_argument("--threads", type=int, default=0,
                        help="BLAS/OpenMP threads (0 = leave alone)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lattice", help="build a geometry and dump it as JSON")
    p.add_argument("--kind", default="kagome",
                   choices=["chain", "ring", "hex-plaquettes", "kagome",
                            "honeycomb-torus"])
    p.add_argument("--cells", type=int, nargs="+", default=[3, 3])
    p.add_argument("--spacing", type=float, default=1.0)
    p.add_argument("--boundary", choices=["open", "periodic"], default=None)
    p.set_defaults(func=_cmd_lattice)

    p = sub.add_parser("evolve", help="run one preparation sweep trial")
    p.add_argument("--config", help="profile config file")
    p.add_argument("--mode", default="pxp",
                   choices=["pxp", "pxp+tails", "full"])
    p.add_argument("--factor", type=float, default=1.0)
    p.add_argument("--trace", type=int, default=0,
                   help="density checkpoints to record")
    p.set_defaults(func=_cmd_evolve)

    p = sub.add_parser("floquet", help="effective coefficients of a drive")
    p.add_argument("--drive", choices=sorted(_DRIVES), default="hopping")
    p.add_argument("--omega-mhz", type=float, default=2.3)
    p.add_argument("--tau", type=float, default=0.36)
    p.add_argument("--we", type=float, default=0.016)
    p.add_argument("--wp", type=float, default=0.008)
    p.add_argument("--epsilon", type=float, default=0.31)
    p.add_argument("--gamma", type=float, default=0.30)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--eps0", type=float, default=0.025)
    p.add_argument("--eps1", type=float, default=0.13)
    p.add_argument("--acos", type=float, default=-1.75)
    p.add_argument("--exact-sites", type=int, default=0,
                   help="also fit the exact leading-order H on this chain")
    p.set_defaults(func=_cmd_floquet)

    p = sub.add_parser("learn", help="recover coefficients from walk tables")
    p.add_argument("--config", help="coefficient config file")
    p.set_defaults(func=_cmd_learn)

    p = sub.add_parser("spectro", help="Green's function and dispersion fit")
    p.add_argument("--config", help="coefficient config file")
    p.set_defaults(func=_cmd_spectro)

    p = sub.add_parser("worm", help="sample dimer coverings on a torus")
    p.add_argument("--cells", type=int, nargs=2, default=[6, 2],
                   metavar=("LX", "LY"))
    p.add_argument("--samples", type=int, default=30_000)
    p.add_argument("--thin", type=int, default=5)
    p.add_argument("--burn-in", type=int, default=30)
    p.add_argument("--chains", type=int, default=256)
    p.add_argument("--file", default="snapshots.npz")
    p.set_defaults(func=_cmd_worm)

    p = sub.add_parser("correlate", help="rectified correlators from snapshots")
    p.add_argument("snapshots")
    p.add_argument("--window", type=float, nargs=2, default=[2.0, 6.0])
    p.set_defaults(func=_cmd_correlate)

    p = sub.add_parser("qdm", help="dimer census of snapshot files")
    p.add_argument("snapshots")
    p.set_defaults(func=_cmd_qdm)

    p = sub.add_parser("optimize", help="closed-loop sweep optimization")
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--strategy", default="random+refine",
                   choices=["random", "random+refine"])
    p.add_argument("--mode", default="pxp", choices=["pxp", "pxp+tails", "full"])
    p.add_argument("--bound", nargs=3, action="append",
                   metavar=("KEY", "LO", "HI"),
                   help="search box for one profile key, e.g. delta_max_mhz 6 14")
    p.set_defaults(func=_cmd_optimize)

    p = sub.add_parser("scenario", help="run a named figure pipeline")
    p.add_argument("name", nargs="?", default=None)
    p.add_argument("--config", help="scenario config file")
    p.add_argument("--list", action="store_true", help="list scenarios")
    p.set_defaults(func=_cmd_scenario)

    p = sub.add_parser("validate", help="check a config file, print defaults")
    p.add_argument("path")
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"rydlab: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"rydlab: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
