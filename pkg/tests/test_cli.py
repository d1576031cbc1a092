"""Config handling, scenario orchestration, manifests and subcommands."""

import hashlib
import json
import os

import numpy as np
import pytest

from rydlab import cli
from rydlab.cli import (
    ConfigReport,
    RunManifest,
    UsageError,
    PipelineError,
    config_hash,
    parse_config,
    read_csv,
    run_scenario,
    validate_config,
)


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

def test_parse_config_types_and_comments():
    text = """
    # drive block
    n_sites = 10
    tau_us = 0.36       # trailing comment
    modes = pxp,pxp+tails

    shots = 0
    """
    values = parse_config(text)
    assert values == {"n_sites": 10, "tau_us": 0.36,
                      "modes": "pxp,pxp+tails", "shots": 0}
    assert isinstance(values["n_sites"], int)
    assert isinstance(values["tau_us"], float)


@pytest.mark.parametrize("bad", ["just words", "= 3", "key =", "a = 1\na = 2"])
def test_parse_config_rejects(bad):
    with pytest.raises(UsageError):
        parse_config(bad)


def test_read_config_missing_file(tmp_path):
    with pytest.raises(UsageError, match="cannot read"):
        cli.read_config(tmp_path / "absent.cfg")


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def test_empty_config_reports_defaults(tmp_path):
    path = tmp_path / "empty.cfg"
    path.write_text("# nothing here\n")
    report = validate_config(path)
    assert report.ok
    assert report.values == {}
    text = report.format()
    assert "defaults" in text
    assert "omega_mhz" in text and "samples" in text


def test_unknown_key_flagged(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("banana = 3\n")
    report = validate_config(path)
    assert not report.ok
    assert report.unknown == ["banana"]


def test_unit_mismatch_suggests_suffixed_key(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("omega = 3.4\nt_inf = 0.3\n")
    report = validate_config(path)
    assert len(report.unit_mismatches) == 2
    assert any("omega_mhz" in entry for entry in report.unit_mismatches)
    assert any("t_inf_us" in entry for entry in report.unit_mismatches)
    assert not report.unknown


def test_detuning_clip_is_warning_not_error(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("delta_max_mhz = 25.0\n")
    report = validate_config(path)
    assert report.ok
    assert len(report.warnings) == 1
    assert "20 MHz" in report.warnings[0]


def test_negative_rabi_frequency_is_error(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("omega_mhz = -1.0\n")
    report = validate_config(path)
    assert not report.ok
    assert "omega_mhz" in report.violations[0]


def test_text_where_number_expected(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("samples = lots\n")
    report = validate_config(path)
    assert not report.ok
    assert "samples" in report.violations[0]


def test_config_hash_ignores_key_order():
    a = {"x": 1, "y": 2.5, "z": "pxp"}
    b = {"z": "pxp", "y": 2.5, "x": 1}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({**a, "x": 2})


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------

def test_unknown_scenario_lists_known_names():
    with pytest.raises(UsageError) as err:
        run_scenario("fig0-made-up")
    for name in cli.SCENARIOS:
        assert name in str(err.value)


def test_bad_config_rejected_before_running(tmp_path):
    with pytest.raises(UsageError, match="n_sites"):
        run_scenario("fig2e-quantum-walk", {"n_sites": 50}, outdir=tmp_path)


WALK_CONFIG = {"n_sites": 8, "n_periods": 6}


def test_quantum_walk_outputs_and_manifest(tmp_path):
    manifest = run_scenario("fig2e-quantum-walk", WALK_CONFIG,
                            outdir=tmp_path, seed=3)
    names = [entry["name"] for entry in manifest.outputs]
    assert names == ["quantum-walk.csv", "quantum-walk.png"]
    for entry in manifest.outputs:
        blob = (tmp_path / entry["name"]).read_bytes()
        assert len(blob) == entry["bytes"]
        assert hashlib.sha256(blob).hexdigest() == entry["sha256"]
    assert not list(tmp_path.glob("*.tmp"))

    schema, header, rows = read_csv(tmp_path / "quantum-walk.csv")
    assert schema == "quantum-walk/1"
    assert header == ["period", "time_us", "site", "offset", "density"]
    assert len(rows) == 8 * 6
    dens = np.array([float(r[4]) for r in rows]).reshape(6, 8)
    assert dens[0].argmax() == 4  # excitation starts on the center site
    assert dens[0].sum() == pytest.approx(1.0, abs=1e-9)
    assert dens[-1, 4] < 0.9  # the excitation spreads off the center
    assert (dens >= -1e-12).all() and (dens <= 1.0 + 1e-12).all()

    saved = RunManifest.from_json(
        (tmp_path / "fig2e-quantum-walk-manifest.json").read_text())
    assert saved.scenario == "fig2e-quantum-walk"
    assert saved.seed == 3
    assert saved.config_hash == manifest.config_hash
    assert saved.versions["rydlab"]


def test_fixed_seed_reruns_are_byte_identical(tmp_path):
    dirs = (tmp_path / "a", tmp_path / "b")
    worm_cfg = {"cells_x": 3, "cells_y": 1, "samples": 1500, "thin": 2,
                "burn_in": 10, "chains": 32, "shapes": "1x1,2x1"}
    for d in dirs:
        run_scenario("fig2e-quantum-walk", WALK_CONFIG, outdir=d, seed=7)
        run_scenario("fig5a-subsystems", worm_cfg, outdir=d, seed=7)
    for name in ("quantum-walk.csv", "subsystems.csv", "subsystem-fit.csv"):
        blobs = [(d / name).read_bytes() for d in dirs]
        assert blobs[0] == blobs[1], name


def test_ratio_scenario_round_trip(tmp_path):
    config = {"cells_x": 6, "cells_y": 2, "samples": 6000, "thin": 3,
              "burn_in": 20, "window_lo": 0.9, "window_hi": 3.2}
    manifest = run_scenario("fig6e-ratio", config, outdir=tmp_path, seed=11)
    names = {entry["name"] for entry in manifest.outputs}
    assert {"correlators.csv", "ratio.csv", "ratio.png"} <= names

    schema, header, rows = read_csv(tmp_path / "ratio.csv")
    assert schema == "ratio/1"
    assert header[:2] == ["separation", "log_ratio"]
    assert rows, "ratio table came back empty"
    slopes = {row[2] for row in rows}
    assert len(slopes) == 1  # one fitted slope, repeated per row
    for row in rows:
        float(row[0]), float(row[1])  # parse cleanly

    schema, header, rows = read_csv(tmp_path / "correlators.csv")
    assert schema == "correlators/1"
    kinds = {row[0] for row in rows}
    assert kinds == {"dimer-dimer", "dimer-string"}


def test_rate_scan_scenario_small_geometry(tmp_path):
    config = {"cells_x": 2, "cells_y": 2, "total_time_us": 0.3,
              "delta_min_mhz": -6.0, "delta_max_mhz": 8.0,
              "delta_inf_mhz": -1.0, "t_inf_us": 0.12,
              "slope_mhz_per_us": 40.0, "t_slope_us": 0.04,
              "factors": "2,1", "modes": "pxp"}
    run_scenario("edfig6-rate-scan", config, outdir=tmp_path, seed=0)
    schema, header, rows = read_csv(tmp_path / "rate-scan.csv")
    assert schema == "rate-scan/1"
    assert header[0] == "mode"
    assert [row[0] for row in rows] == ["pxp", "pxp"]
    assert [float(row[1]) for row in rows] == [2.0, 1.0]
    for row in rows:
        assert 0.0 <= float(row[4]) <= 1.0  # density is physical


def test_downstream_error_carries_scenario_context(tmp_path):
    # too few periods for the dispersion fit: fails inside the pipeline
    config = {"n_sites": 9, "n_periods": 8}
    with pytest.raises(PipelineError, match="fig3d-spectral"):
        run_scenario("fig3d-spectral", config, outdir=tmp_path)
    assert not (tmp_path / "fig3d-spectral-manifest.json").exists()


def test_manifest_json_schema_guard():
    with pytest.raises(ValueError, match="manifest schema"):
        RunManifest.from_json(json.dumps({"schema": "other/9"}))


def test_read_csv_requires_schema_line(tmp_path):
    path = tmp_path / "plain.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError, match="schema"):
        read_csv(path)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def test_main_unknown_scenario_exits_2(capsys):
    assert cli.main(["scenario", "fig9-nothing"]) == 2
    err = capsys.readouterr().err
    assert "fig9-nothing" in err and "fig6e-ratio" in err


def test_main_scenario_list(capsys):
    assert cli.main(["scenario", "--list"]) == 0
    out = capsys.readouterr().out
    for name in cli.SCENARIOS:
        assert name in out


def test_main_validate_exit_codes(tmp_path, capsys):
    good = tmp_path / "good.cfg"
    good.write_text("omega_mhz = 3.4\n")
    bad = tmp_path / "bad.cfg"
    bad.write_text("omega_mhz = -2\n")
    assert cli.main(["validate", str(good)]) == 0
    assert cli.main(["validate", str(bad)]) == 1
    capsys.readouterr()


def test_main_lattice_writes_json(tmp_path, capsys):
    out = tmp_path / "artifacts"
    code = cli.main(["--out", str(out), "lattice", "--kind", "chain",
                     "--cells", "8", "--boundary", "open"])
    assert code == 0
    assert "8 sites" in capsys.readouterr().out
    assert (out / "lattice.json").exists()


def test_main_floquet_coefficient_table(tmp_path, capsys):
    code = cli.main(["--out", str(tmp_path), "floquet", "--drive", "hopping",
                     "--omega-mhz", "2.3"])
    assert code == 0
    schema, header, rows = read_csv(tmp_path / "floquet-coeffs.csv")
    assert schema == "floquet-coeffs/1"
    assert header == ["coefficient", "short_time_mhz"]
    assert [row[0] for row in rows] == ["mu", "u", "j", "g_x", "g_y"]
    capsys.readouterr()


def test_main_worm_correlate_qdm_pipeline(tmp_path, capsys):
    out = str(tmp_path)
    code = cli.main(["--seed", "5", "--out", out, "worm", "--cells", "6", "2",
                     "--samples", "4000", "--thin", "3", "--burn-in", "20"])
    assert code == 0
    snapshots = os.path.join(out, "snapshots.npz")
    assert os.path.exists(snapshots)

    code = cli.main(["--out", out, "correlate", snapshots,
                     "--window", "0.9", "3.2"])
    assert code == 0
    assert os.path.exists(os.path.join(out, "ratio.csv"))

    code = cli.main(["--out", out, "qdm", snapshots])
    assert code == 0
    schema, header, rows = read_csv(os.path.join(out, "qdm-census.csv"))
    assert schema == "qdm-census/1"
    values = dict((row[0], float(row[1])) for row in rows)
    assert values["monomer_fraction"] == 0.0  # perfect coverings only
    assert values["double_dimer_fraction"] == 0.0
    assert 0.0 < values["potential_per_plaquette"] < 1.0
    capsys.readouterr()


def test_main_optimize_rejects_unknown_bound(capsys):
    code = cli.main(["optimize", "--budget", "12",
                     "--bound", "delta_best_mhz", "1", "2"])
    assert code == 2
    assert "delta_best_mhz" in capsys.readouterr().err
