"""Command line: exit codes, artifacts, precedence, determinism."""

import os

import numpy as np
import pytest

from atmotomo.cli import main
from atmotomo.io_utils import load_data, load_stack, read_manifest, save_stack

BASE = """\
[geometry]
aperture_radius_m = 1.0
layer_heights_m = 1000 4000
layer_weights = 0.6 0.4
direction_arcsec = 120 0
direction_arcsec = -120 0
{align}

[grids]
pupil_nodes = 17

[turbulence]
fried_parameter_m = 0.15
outer_scale_m = 10
layer_strengths = 0.6 0.4
subharmonic_levels = 3

[noise]
enabled = {noise}
n_photons = 10000

[solver]
method = tikhonov-cg
alpha = 1e-4
max_iter = 300
tol = 1e-8

[nullspace]
guide_index = 0
target_ratio = 0.1
smooth_margin = 0.3

[experiment]
num_seeds = 2

[run]
seed = 3
output_dir = {outdir}
"""


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv("ATMOTOMO_OUTDIR", raising=False)


def _write_cfg(tmp_path, name="exp.cfg", align=False, noise=False,
               outdir="runs/default", extra=""):
    text = BASE.format(align="align_to_grid = true" if align else "",
                       noise="true" if noise else "false",
                       outdir=outdir) + extra
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_usage_errors_exit_validation(capsys):
    with pytest.raises(SystemExit) as info:
        main(["no-such-command"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["overlap"])  # missing --config
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["reconstruct", "-c", "x.cfg", "--method", "magic"])
    assert info.value.code == 1
    capsys.readouterr()


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert "atmotomo" in capsys.readouterr().out


def test_missing_config_exits_validation(tmp_path, capsys):
    rc = main(["overlap", "-c", str(tmp_path / "absent.cfg")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_malformed_config_exits_validation(tmp_path, capsys):
    path = tmp_path / "bad.cfg"
    path.write_text("[geometry]\nnonsense = 1\n")
    rc = main(["overlap", "-c", str(path)])
    assert rc == 1
    assert "unknown key" in capsys.readouterr().err


def test_overlap_artifacts(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    out = tmp_path / "out"
    rc = main(["overlap", "-c", cfg, "-o", str(out)])
    assert rc == 0
    for name in ("overlap_l0.pgm", "overlap_l0.csv", "overlap_l1.pgm",
                 "overlap_strata.csv", "single_overlap_balls.csv",
                 "manifest.txt"):
        assert (out / name).exists(), name
    man = read_manifest(str(out / "manifest.txt"))
    assert man["command"] == "overlap"
    assert float(man["disjoint_height_m"]) > 0
    stdout = capsys.readouterr().out
    assert "disjoint height" in stdout


def test_overlap_layer_out_of_range(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    rc = main(["overlap", "-c", cfg, "-o", str(tmp_path / "o"),
               "--layer", "9"])
    assert rc == 1
    assert "out of range" in capsys.readouterr().err


def test_forward_reconstruct_round_trip(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    fwd = tmp_path / "fwd"
    rc = main(["forward", "-c", cfg, "-o", str(fwd)])
    assert rc == 0
    assert (fwd / "atmosphere.fld").exists()
    assert (fwd / "data.fld").exists()
    assert not (fwd / "data_noisy.fld").exists()
    assert (fwd / "layer_l0.pgm").exists()
    assert (fwd / "data_g1.pgm").exists()

    rec = tmp_path / "rec"
    rc = main(["reconstruct", "-c", cfg, "-o", str(rec),
               "--data", str(fwd / "data.fld")])
    assert rc == 0
    assert (rec / "recon.fld").exists()
    assert (rec / "history.csv").exists()
    assert not (rec / "truth.fld").exists()  # no synthesis with --data
    man = read_manifest(str(rec / "manifest.txt"))
    assert man["method"] == "tikhonov-cg"
    assert man["converged"] == "True"

    # the reconstruction actually fits the stored data
    from atmotomo.config import load_config
    from atmotomo.operator import TomoOperator
    from atmotomo.field import norm_data
    conf = load_config(cfg)
    op = TomoOperator(conf.geometry, conf.pupil_nodes)
    data = load_data(str(fwd / "data.fld"))
    recon = load_stack(str(rec / "recon.fld"))
    res = data.add_scaled(op.forward(recon), -1.0)
    assert norm_data(res) <= 1e-3 * norm_data(data)
    capsys.readouterr()


def test_forward_with_noise_writes_noisy_data(tmp_path):
    cfg = _write_cfg(tmp_path, noise=True)
    out = tmp_path / "out"
    assert main(["forward", "-c", cfg, "-o", str(out)]) == 0
    assert (out / "data_noisy.fld").exists()
    clean = load_data(str(out / "data.fld"))
    noisy = load_data(str(out / "data_noisy.fld"))
    delta = noisy.values - clean.values
    assert np.any(delta != 0.0)
    man = read_manifest(str(out / "manifest.txt"))
    assert float(man["noise_sigma"]) == pytest.approx(0.01)


def test_forward_from_stored_atmosphere(tmp_path):
    cfg = _write_cfg(tmp_path)
    a = tmp_path / "a"
    b = tmp_path / "b"
    assert main(["forward", "-c", cfg, "-o", str(a)]) == 0
    assert main(["forward", "-c", cfg, "-o", str(b),
                 "--atmosphere", str(a / "atmosphere.fld")]) == 0
    assert (a / "data.fld").read_bytes() == (b / "data.fld").read_bytes()


def test_forward_is_deterministic_per_seed(tmp_path):
    cfg = _write_cfg(tmp_path)
    a, b, c = (tmp_path / x for x in "abc")
    assert main(["forward", "-c", cfg, "-o", str(a)]) == 0
    assert main(["forward", "-c", cfg, "-o", str(b)]) == 0
    assert (a / "atmosphere.fld").read_bytes() \
        == (b / "atmosphere.fld").read_bytes()
    assert (a / "manifest.txt").read_bytes() \
        == (b / "manifest.txt").read_bytes()
    assert main(["forward", "-c", cfg, "-o", str(c), "--seed", "4"]) == 0
    assert (a / "atmosphere.fld").read_bytes() \
        != (c / "atmosphere.fld").read_bytes()


def test_reconstruct_synthesizes_and_reports(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    out = tmp_path / "out"
    rc = main(["reconstruct", "-c", cfg, "-o", str(out)])
    assert rc == 0
    for name in ("recon.fld", "truth.fld", "history.csv", "errors.csv",
                 "strehl.csv", "invariants.csv", "recon_l0.pgm"):
        assert (out / name).exists(), name
    stdout = capsys.readouterr().out
    assert "relative error" in stdout
    assert "stratum omega=1" in stdout


def test_reconstruct_method_override(tmp_path):
    cfg = _write_cfg(tmp_path)
    out = tmp_path / "out"
    rc = main(["reconstruct", "-c", cfg, "-o", str(out),
               "--method", "landweber"])
    assert rc == 0
    assert read_manifest(str(out / "manifest.txt"))["method"] == "landweber"


def test_reconstruct_divergence_exits_numerical(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    # rewrite the solver section with a destructive step size
    text = open(cfg).read().replace(
        "method = tikhonov-cg\nalpha = 1e-4",
        "method = landweber\nbeta = 1e6\nalpha = 1e-4")
    path = tmp_path / "diverge.cfg"
    path.write_text(text)
    rc = main(["reconstruct", "-c", str(path),
               "-o", str(tmp_path / "out")])
    assert rc == 2
    assert "diverged" in capsys.readouterr().err


def test_commands_requiring_turbulence(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    text = open(cfg).read()
    start = text.index("[turbulence]")
    end = text.index("[noise]")
    stripped = tmp_path / "noturb.cfg"
    stripped.write_text(text[:start] + text[end:])
    rc = main(["forward", "-c", str(stripped), "-o", str(tmp_path / "o")])
    assert rc == 1
    assert "turbulence" in capsys.readouterr().err


def test_nullspace_aligned_witness(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, align=True)
    out = tmp_path / "out"
    rc = main(["nullspace", "-c", cfg, "-o", str(out)])
    assert rc == 0
    for name in ("witness_original.fld", "witness_modified.fld",
                 "witness_data_original.fld", "witness_data_modified.fld",
                 "witness_delta_l0.pgm", "witness_delta_l1.pgm"):
        assert (out / name).exists(), name
    man = read_manifest(str(out / "manifest.txt"))
    assert float(man["rel_data_discrepancy"]) <= 1e-10
    assert float(man["rel_layer_distance"]) == pytest.approx(0.1,
                                                             rel=1e-9)
    stdout = capsys.readouterr().out
    assert "nullspace: guide 0" in stdout


def test_nullspace_nonaligned_still_passes_distance_check(tmp_path):
    cfg = _write_cfg(tmp_path)
    out = tmp_path / "out"
    assert main(["nullspace", "-c", cfg, "-o", str(out)]) == 0


def test_nullspace_without_usable_ball_exits_numerical(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    text = open(cfg).read().replace("layer_heights_m = 1000 4000",
                                    "layer_heights_m = 0 4000")
    path = tmp_path / "flat.cfg"
    path.write_text(text)
    rc = main(["nullspace", "-c", str(path), "-o", str(tmp_path / "o")])
    assert rc == 2
    assert "single-overlap" in capsys.readouterr().err


def test_project_experiment(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    out = tmp_path / "out"
    rc = main(["project-experiment", "-c", cfg, "-o", str(out),
               "--num-seeds", "2"])
    assert rc == 0
    lines = (out / "projection.csv").read_text().splitlines()
    assert lines[0] == ("seed,arm,stratum,relative_error,"
                        "relative_error_truth_norm")
    seeds = {line.split(",")[0] for line in lines[1:]}
    arms = {line.split(",")[1] for line in lines[1:]}
    assert seeds == {"3", "4"}
    assert arms == {"original", "projected"}
    stdout = capsys.readouterr().out
    assert "projection experiment over 2 seeds" in stdout


def test_report_aggregates_run_dir(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    run = tmp_path / "run"
    assert main(["reconstruct", "-c", cfg, "-o", str(run)]) == 0
    out = tmp_path / "summary"
    rc = main(["report", "-c", cfg, "-o", str(out), "--run", str(run)])
    assert rc == 0
    text = (out / "summary.md").read_text()
    assert text.startswith("# Reconstruction report")
    assert "omega=1" in text
    assert "ball-pair checks passed" in text
    assert (out / "errors.csv").exists()
    capsys.readouterr()


def test_report_missing_inputs_exits_validation(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    rc = main(["report", "-c", cfg, "-o", str(tmp_path / "s"),
               "--run", str(tmp_path / "empty")])
    assert rc == 1
    assert "lacks" in capsys.readouterr().err


def test_report_flags_undefined_strata(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, align=True)
    run = tmp_path / "run"
    assert main(["reconstruct", "-c", cfg, "-o", str(run)]) == 0
    # zero out the reconstruction: every stratum denominator vanishes
    recon = load_stack(str(run / "recon.fld"))
    for v in recon.values:
        v[:] = 0.0
    save_stack(str(run / "recon.fld"), recon)
    rc = main(["report", "-c", cfg, "-o", str(tmp_path / "s"),
               "--run", str(run)])
    assert rc == 2
    assert "undefined" in capsys.readouterr().err


def test_outdir_precedence(tmp_path, monkeypatch, capsys):
    cfg = _write_cfg(tmp_path, outdir=str(tmp_path / "from_config"))
    # config fallback
    assert main(["overlap", "-c", cfg]) == 0
    assert (tmp_path / "from_config" / "manifest.txt").exists()
    # environment beats config
    monkeypatch.setenv("ATMOTOMO_OUTDIR", str(tmp_path / "from_env"))
    assert main(["overlap", "-c", cfg]) == 0
    assert (tmp_path / "from_env" / "manifest.txt").exists()
    # flag beats environment
    assert main(["overlap", "-c", cfg, "-o",
                 str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "manifest.txt").exists()
    capsys.readouterr()
