"""Command line experiments.

Every command takes a configuration file, writes its artifacts plus a
manifest (config digest, seed, command, version) into an output
directory, and prints a short summary. Exit codes: 0 on success, 1 on
validation errors (flags, config, inputs), 2 on numerical failures
(solver divergence, undefined error strata, failed witness checks).

The output directory is, in order of precedence: the -o flag, the
ATMOTOMO_OUTDIR environment variable, the [run] output_dir key.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from typing import Optional

import numpy as np

from . import __version__
from .analysis import (build_nullspace_witness, build_recon_report,
                       ring_directions, run_projection_experiment)
from .config import ConfigError, RunConfig, load_config
from .field import norm_data, norm_layers
from .geometry import (NoSingleOverlapRegion, disjoint_height,
                       find_single_overlap_ball)
from .io_utils import (config_digest, field_csv, load_data, load_stack,
                       save_data, save_stack, write_csv, write_manifest,
                       write_pgm)
from .kernels import BACKEND
from .operator import TomoOperator
from .reconstruct import solve
from .turbulence import generate_atmosphere

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


def _outdir(cfg: RunConfig, override: Optional[str]) -> str:
    path = override or os.environ.get("ATMOTOMO_OUTDIR") or cfg.output_dir
    os.makedirs(path, exist_ok=True)
    return path


def _manifest(cfg: RunConfig, outdir: str, command: str, extra=None):
    entries = {
        "command": command,
        "config": cfg.path,
        "config_sha256": config_digest(cfg.text),
        "seed": cfg.seed,
        "version": __version__,
        "kernels": BACKEND,
    }
    if extra:
        entries.update(extra)
    write_manifest(os.path.join(outdir, "manifest.txt"), entries)


def _operator(cfg: RunConfig) -> TomoOperator:
    return TomoOperator(cfg.geometry, cfg.pupil_nodes)


def _atmosphere(cfg: RunConfig, op: TomoOperator, seed=None):
    if cfg.turbulence is None:
        raise ConfigError("this command needs a [turbulence] section",
                          cfg.path)
    tspec = cfg.turbulence
    if seed is not None:
        tspec = replace(tspec, seed=int(seed))
    return generate_atmosphere(tspec, op.spec, op.layer_grids,
                               op.layer_masks)


def _eval_directions(cfg: RunConfig):
    dirs = cfg.geometry.directions_rad
    max_r = float(np.max(np.hypot(dirs[:, 0], dirs[:, 1])))
    ev = cfg.evaluation
    return ring_directions(max_r, ev.ring_radii_rel, ev.ring_counts,
                           ev.include_center)


# ---------------------------------------------------------------------------
# commands


def cmd_overlap(cfg: RunConfig, outdir: str,
                layer: Optional[int] = None) -> int:
    """Overlap maps, single-overlap balls, and the disjointness height."""
    op = _operator(cfg)
    spec = op.spec
    G = spec.num_directions
    if layer is not None and not 0 <= layer < spec.num_layers:
        raise ConfigError(f"--layer {layer} out of range for "
                          f"{spec.num_layers} layers", cfg.path)
    layers = range(spec.num_layers) if layer is None else [layer]
    summary_rows = []
    for l in layers:
        omap = op.overlap_maps()[l]
        write_pgm(os.path.join(outdir, f"overlap_l{l}.pgm"), omap.values,
                  vmin=0.0, vmax=float(G))
        field_csv(os.path.join(outdir, f"overlap_l{l}.csv"), omap.grid,
                  omap.values, op.layer_masks[l])
        area = omap.grid.spacing ** 2
        for w in range(0, G + 1):
            count = int(np.sum(omap.values == w))
            summary_rows.append((l, w, count, count * area))
    write_csv(os.path.join(outdir, "overlap_strata.csv"),
              ("layer", "omega", "node_count", "area_m2"), summary_rows)

    ball_rows = []
    for g in range(G):
        for l in layers:
            try:
                ball = find_single_overlap_ball(op.overlap_maps()[l], g)
            except NoSingleOverlapRegion:
                continue
            ball_rows.append((g, ball.layer_index, ball.center[0],
                              ball.center[1], ball.radius))
    write_csv(os.path.join(outdir, "single_overlap_balls.csv"),
              ("guide", "layer", "center_x_m", "center_y_m", "radius_m"),
              ball_rows)

    h_disj = disjoint_height(spec) if G > 1 else float("inf")
    _manifest(cfg, outdir, "overlap",
              {"disjoint_height_m": h_disj, "aligned": op.aligned})
    print(f"overlap: {spec.num_layers} layers, {G} directions, "
          f"aligned={op.aligned}")
    for l in layers:
        counts = {w: int(np.sum(op.overlap_maps()[l].values == w))
                  for w in range(1, G + 1)}
        pretty = ", ".join(f"omega={w}: {n}" for w, n in counts.items()
                           if n)
        print(f"  layer {l} (h={spec.layer_heights_m[l]:g} m): {pretty}")
    print(f"  single-overlap balls found: {len(ball_rows)}")
    print(f"  disjoint height: {h_disj:g} m")
    return EXIT_OK


def cmd_forward(cfg: RunConfig, outdir: str, seed=None,
                atmosphere_path: Optional[str] = None) -> int:
    """Apply the forward operator to a synthesized or stored atmosphere."""
    op = _operator(cfg)
    if atmosphere_path is not None:
        stack = load_stack(atmosphere_path)
        op._check_stack(stack)
    else:
        stack = _atmosphere(cfg, op, seed)
    data = op.forward(stack)
    save_stack(os.path.join(outdir, "atmosphere.fld"), stack)
    save_data(os.path.join(outdir, "data.fld"), data)
    for l, vals in enumerate(stack.values):
        write_pgm(os.path.join(outdir, f"layer_l{l}.pgm"), vals)
    for g in range(data.num_directions):
        write_pgm(os.path.join(outdir, f"data_g{g}.pgm"), data.values[g])
    extra = {"atmosphere_norm": norm_layers(stack),
             "data_norm": norm_data(data)}
    if cfg.noise is not None:
        noisy = cfg.noise.add_noise(data)
        save_data(os.path.join(outdir, "data_noisy.fld"), noisy)
        extra["noise_sigma"] = cfg.noise.sigma
    _manifest(cfg, outdir, "forward", extra)
    print(f"forward: |atmosphere| = {extra['atmosphere_norm']:.6g}, "
          f"|data| = {extra['data_norm']:.6g}")
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig, outdir: str, seed=None,
                    data_path: Optional[str] = None,
                    method: Optional[str] = None) -> int:
    """Invert measured data with the configured solver.

    Without --data, a truth atmosphere is synthesized, pushed through the
    forward operator (plus configured noise), reconstructed, and compared
    against; with --data, only the reconstruction runs.
    """
    op = _operator(cfg)
    solver_cfg = cfg.solver if method is None \
        else replace(cfg.solver, method=method)
    truth = None
    if data_path is not None:
        data = load_data(data_path)
        op._check_data(data)
    else:
        truth = _atmosphere(cfg, op, seed)
        data = op.forward(truth)
        if cfg.noise is not None:
            data = cfg.noise.add_noise(data)
    recon, history = solve(op, data, solver_cfg)
    save_stack(os.path.join(outdir, "recon.fld"), recon)
    write_csv(os.path.join(outdir, "history.csv"), history.columns,
              history.rows)
    for l, vals in enumerate(recon.values):
        write_pgm(os.path.join(outdir, f"recon_l{l}.pgm"), vals)
    extra = {
        "method": history.method,
        "iterations": len(history.rows),
        "converged": history.converged,
        "diverged": history.diverged,
    }
    undefined = ()
    if truth is not None:
        save_stack(os.path.join(outdir, "truth.fld"), truth)
        report = build_recon_report(op, truth, recon,
                                    _eval_directions(cfg),
                                    cfg.evaluation.strehl_wavelength_m)
        _write_report_csv(outdir, report)
        strat = report.stratified
        undefined = strat.undefined
        extra["relative_error"] = strat.global_error
        print(f"reconstruct: method={history.method} "
              f"converged={history.converged} "
              f"diverged={history.diverged}")
        print("  relative error (recon-normalized): "
              f"{strat.global_error:.4g}")
        for w, err in sorted(strat.per_omega.items()):
            if w in strat.empty:
                continue
            label = "undefined" if err is None else f"{err:.4g}"
            print(f"  stratum omega={w}: {label}")
    else:
        print(f"reconstruct: method={history.method} "
              f"converged={history.converged} "
              f"diverged={history.diverged}")
    _manifest(cfg, outdir, "reconstruct", extra)
    if history.diverged:
        print("error: solver diverged", file=sys.stderr)
        return EXIT_NUMERICAL
    if undefined:
        print(f"error: undefined error strata {list(undefined)}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def _write_report_csv(outdir: str, report) -> None:
    strat = report.stratified
    rows = [("global", strat.global_error, strat.global_error_truth_norm)]
    for w in sorted(strat.per_omega):
        rows.append((f"omega_{w}", _blank(strat.per_omega[w]),
                     _blank(strat.per_omega_truth_norm[w])))
    write_csv(os.path.join(outdir, "errors.csv"),
              ("stratum", "relative_error", "relative_error_truth_norm"),
              rows)
    srows = [(p.direction_rad[0], p.direction_rad[1], p.radius_rad,
              p.stratum, _blank(p.strehl))
             for p in report.strehl_points]
    write_csv(os.path.join(outdir, "strehl.csv"),
              ("dir_x_rad", "dir_y_rad", "radius_rad", "stratum",
               "strehl"), srows)
    irows = [(c.guide_index, c.layer_a, c.layer_b, c.num_nodes,
              c.max_abs_diff, c.tolerance, int(c.passed), int(c.skipped))
             for c in report.invariant_checks]
    write_csv(os.path.join(outdir, "invariants.csv"),
              ("guide", "layer_a", "layer_b", "nodes", "max_abs_diff",
               "tolerance", "passed", "skipped"), irows)


def cmd_nullspace(cfg: RunConfig, outdir: str) -> int:
    """Constructive non-uniqueness: same data, visibly different layers."""
    op = _operator(cfg)
    truth = _atmosphere(cfg, op)
    ns = cfg.nullspace
    witness = build_nullspace_witness(
        op, truth, ns.guide_index, target_ratio=ns.target_ratio,
        smooth_margin=ns.smooth_margin)
    save_stack(os.path.join(outdir, "witness_original.fld"),
               witness.original)
    save_stack(os.path.join(outdir, "witness_modified.fld"),
               witness.modified)
    save_data(os.path.join(outdir, "witness_data_original.fld"),
              witness.data_original)
    save_data(os.path.join(outdir, "witness_data_modified.fld"),
              witness.data_modified)
    delta = witness.modified.add_scaled(witness.original, -1.0)
    for l, vals in enumerate(delta.values):
        write_pgm(os.path.join(outdir, f"witness_delta_l{l}.pgm"), vals)
    _manifest(cfg, outdir, "nullspace", {
        "guide_index": witness.guide_index,
        "base_layer": witness.base_layer,
        "amplitude": witness.amplitude,
        "rel_layer_distance": witness.rel_layer_distance,
        "rel_data_discrepancy": witness.rel_data_discrepancy,
        "max_data_discrepancy": witness.max_data_discrepancy,
    })
    print(f"nullspace: guide {witness.guide_index}, ball on layer "
          f"{witness.base_layer}, perturbed layers "
          f"{list(witness.perturbed_layers)}")
    print(f"  |modified - original| / |original| = "
          f"{witness.rel_layer_distance:.6g}")
    print(f"  |A modified - A original| / |A original| = "
          f"{witness.rel_data_discrepancy:.3e}")
    ok = witness.rel_layer_distance >= 0.5 * ns.target_ratio
    if op.aligned:
        ok = ok and witness.rel_data_discrepancy <= 1e-10
    if not ok:
        print("error: witness check failed", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_project_experiment(cfg: RunConfig, outdir: str,
                           num_seeds=None) -> int:
    """Two-arm reconstruction experiment: raw truth versus its projection
    onto the range of the adjoint."""
    op = _operator(cfg)
    if cfg.turbulence is None:
        raise ConfigError("this command needs a [turbulence] section",
                          cfg.path)
    n = int(num_seeds) if num_seeds is not None else cfg.num_seeds
    seeds = [cfg.seed + i for i in range(n)]
    results = run_projection_experiment(op, cfg.turbulence, cfg.solver,
                                        seeds)
    rows = []
    for res in results:
        for arm, err in (("original", res.error_original),
                         ("projected", res.error_projected)):
            rows.append((res.seed, arm, "global", err.global_error,
                         err.global_error_truth_norm))
            for w in sorted(err.per_omega):
                if w in err.empty:
                    continue
                rows.append((res.seed, arm, f"omega_{w}",
                             _blank(err.per_omega[w]),
                             _blank(err.per_omega_truth_norm[w])))
    write_csv(os.path.join(outdir, "projection.csv"),
              ("seed", "arm", "stratum", "relative_error",
               "relative_error_truth_norm"), rows)
    _manifest(cfg, outdir, "project-experiment", {"num_seeds": n})

    print(f"projection experiment over {n} seeds "
          "(mean relative error per stratum):")
    G = op.num_directions
    for arm in ("original", "projected"):
        errs = [getattr(r, f"error_{arm}") for r in results]
        parts = []
        for w in range(1, G + 1):
            vals = [e.per_omega[w] for e in errs
                    if e.per_omega[w] is not None]
            if vals:
                parts.append(f"omega={w}: {np.mean(vals):.4g}")
        print(f"  {arm:9s} " + "  ".join(parts))
    return EXIT_OK


def _blank(v):
    return "" if v is None else v


def _markdown_summary(report, history_rows) -> str:
    strat = report.stratified
    lines = ["# Reconstruction report", "", "## Relative errors", "",
             "| stratum | error (recon-norm) | error (truth-norm) |",
             "| --- | --- | --- |",
             f"| global | {strat.global_error:.6g} | "
             f"{strat.global_error_truth_norm:.6g} |"]
    for w in sorted(strat.per_omega):
        if w in strat.empty:
            continue
        e1 = strat.per_omega[w]
        e2 = strat.per_omega_truth_norm[w]
        lines.append(f"| omega={w} | "
                     f"{'undefined' if e1 is None else format(e1, '.6g')} | "
                     f"{'undefined' if e2 is None else format(e2, '.6g')} |")
    lines += ["", "## Strehl by overlap stratum", "",
              "| stratum | mean SR | var SR | directions |",
              "| --- | --- | --- | --- |"]
    for w, (mean, var, count) in sorted(report.strehl_stats.items()):
        lines.append(f"| omega={w} | {mean:.4f} | {var:.3e} | {count} |")
    checks = [c for c in report.invariant_checks if not c.skipped]
    passed = sum(c.passed for c in checks)
    lines += ["", "## Range-of-adjoint invariant", "",
              f"{passed} of {len(checks)} ball-pair checks passed "
              f"({len(report.invariant_checks) - len(checks)} skipped).",
              "", f"Solver iterations recorded: {history_rows}", ""]
    return "\n".join(lines)


def cmd_report(cfg: RunConfig, outdir: str, run_dir: str) -> int:
    """Aggregate a reconstruct run directory into one summary."""
    truth_path = os.path.join(run_dir, "truth.fld")
    recon_path = os.path.join(run_dir, "recon.fld")
    for path in (truth_path, recon_path):
        if not os.path.exists(path):
            raise ConfigError(f"run directory lacks {os.path.basename(path)}",
                              run_dir)
    op = _operator(cfg)
    truth = load_stack(truth_path)
    recon = load_stack(recon_path)
    op._check_stack(truth)
    op._check_stack(recon)
    report = build_recon_report(op, truth, recon, _eval_directions(cfg),
                                cfg.evaluation.strehl_wavelength_m)
    _write_report_csv(outdir, report)
    history_fmt = "none"
    hist_path = os.path.join(run_dir, "history.csv")
    if os.path.exists(hist_path):
        with open(hist_path, "r", encoding="utf-8") as fh:
            history_fmt = str(max(0, sum(1 for _ in fh) - 1))
    from .io_utils import atomic_write_text
    atomic_write_text(os.path.join(outdir, "summary.md"),
                      _markdown_summary(report, history_fmt))
    _manifest(cfg, outdir, "report",
              {"run": run_dir,
               "relative_error": report.stratified.global_error})
    print(f"report: relative error {report.stratified.global_error:.4g} "
          f"({len(report.strehl_points)} Strehl directions)")
    failed = [c for c in report.invariant_checks
              if not c.skipped and not c.passed]
    if report.stratified.undefined:
        print("error: undefined error strata "
              f"{list(report.stratified.undefined)}", file=sys.stderr)
        return EXIT_NUMERICAL
    if failed:
        print(f"error: {len(failed)} scaling-invariant checks failed",
              file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_bench() -> int:
    from .kernels.bench import main as bench_main
    bench_main()
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the validation code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="atmotomo",
        description="Layered atmospheric tomography experiments.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", required=True,
                       help="configuration file")
        p.add_argument("-o", "--output-dir", default=None,
                       help="output directory (overrides ATMOTOMO_OUTDIR "
                            "and the config)")

    p = sub.add_parser("overlap", help="overlap maps and single-overlap "
                                       "balls")
    common(p)
    p.add_argument("--layer", type=int, default=None,
                   help="restrict to one layer index")
    p = sub.add_parser("forward", help="apply the forward operator")
    common(p)
    p.add_argument("--seed", type=int, default=None,
                   help="override the [run] seed for synthesis")
    p.add_argument("--atmosphere", default=None,
                   help="stored layer stack to use instead of synthesis")
    p = sub.add_parser("reconstruct", help="invert measured data")
    common(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data", default=None,
                   help="stored data vector to invert (skips synthesis "
                        "and the truth comparison)")
    p.add_argument("--method", default=None,
                   choices=("landweber", "kaczmarz", "tikhonov-cg"),
                   help="override the configured solver")
    p = sub.add_parser("nullspace", help="constructive non-uniqueness "
                                         "witness")
    common(p)
    p = sub.add_parser("project-experiment",
                       help="reconstruction with and without projecting "
                            "the truth onto the range of the adjoint")
    common(p)
    p.add_argument("--num-seeds", type=int, default=None)
    p = sub.add_parser("report", help="summarize a reconstruct run "
                                      "directory")
    common(p)
    p.add_argument("--run", required=True, help="reconstruct output "
                                                "directory")
    sub.add_parser("bench", help="compare kernel backends")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "bench":
        return cmd_bench()
    try:
        cfg = load_config(args.config)
        outdir = _outdir(cfg, args.output_dir)
        if args.command == "overlap":
            return cmd_overlap(cfg, outdir, args.layer)
        if args.command == "forward":
            return cmd_forward(cfg, outdir, args.seed, args.atmosphere)
        if args.command == "reconstruct":
            return cmd_reconstruct(cfg, outdir, args.seed, args.data,
                                   args.method)
        if args.command == "nullspace":
            return cmd_nullspace(cfg, outdir)
        if args.command == "project-experiment":
            return cmd_project_experiment(cfg, outdir, args.num_seeds)
        if args.command == "report":
            return cmd_report(cfg, outdir, args.run)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except NoSingleOverlapRegion as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
