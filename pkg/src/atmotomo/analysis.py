"""Experiment-level analyses: constructive non-uniqueness, range-of-adjoint
structure, overlap-stratified errors, and Strehl maps.

The non-uniqueness witness perturbs the atmosphere on single-overlap balls
of one guide direction and compensates on the top layer so that the
direction's data is restored; the result is a visibly different atmosphere
producing (numerically) identical measurements.

The scaling-invariant check verifies the fingerprint of the discrete range
of A*: on the translated single-overlap balls, layer fields divided by
their gamma weights agree node for node.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .field import (DataVector, LayerStack, norm_data, norm_layers,
                    sample_field)
from .geometry import (BallRegion, NoSingleOverlapRegion, OverlapMap, Region,
                       aperture_trace, find_single_overlap_ball,
                       overlap_counts, shifted_region)
from .operator import TomoOperator
from .reconstruct import SolveConfig, solve
from .turbulence import TurbulenceSpec, generate_atmosphere

# ---------------------------------------------------------------------------
# non-uniqueness witness


@dataclass
class NullspaceWitness:
    """A pair of atmospheres with (numerically) identical data.

    ``regions[l]`` is the single-overlap ball translated to layer l;
    layers in ``perturbed_layers`` received the perturbation, the top
    layer carries the compensation.
    """

    original: LayerStack
    modified: LayerStack
    data_original: DataVector
    data_modified: DataVector
    regions: tuple[Region, ...]
    guide_index: int
    base_layer: int
    perturbed_layers: tuple[int, ...]
    amplitude: float
    max_data_discrepancy: float
    rel_data_discrepancy: float
    layer_distance: float
    rel_layer_distance: float


def _taper(q: NDArray, margin: float) -> NDArray:
    """Radial taper: 1 on the inner (1 - margin) sub-ball, smooth cosine
    falloff to 0 at the ball boundary, 0 outside."""
    t = np.ones_like(q)
    t[q > 1.0] = 0.0
    if margin > 0.0:
        edge = (q > 1.0 - margin) & (q <= 1.0)
        u = (q[edge] - (1.0 - margin)) / margin
        t[edge] = 0.5 * (1.0 + np.cos(np.pi * u))
    return t


def _region_nodes(grid, region: Region):
    """Flat indices and coordinates of grid nodes inside a disk region."""
    pts = grid.node_points()
    inside = region.contains(pts)
    return np.flatnonzero(inside), pts[inside]


def lowest_ball_layer(op: TomoOperator, g: int) -> tuple[int, BallRegion]:
    """Lowest layer admitting a single-overlap ball for direction g."""
    last_err = None
    for l in range(op.num_layers):
        try:
            return l, find_single_overlap_ball(op.overlap_maps()[l], g)
        except NoSingleOverlapRegion as err:
            last_err = err
    raise NoSingleOverlapRegion(
        f"direction {g} has no single-overlap ball on any layer "
        f"({last_err})")


def build_nullspace_witness(op: TomoOperator, stack: LayerStack, g: int,
                            perturbation: Optional[Callable] = None,
                            amplitude: Optional[float] = None,
                            target_ratio: Optional[float] = None,
                            smooth_margin: float = 0.3) -> NullspaceWitness:
    """Modify ``stack`` on the translated single-overlap balls of direction
    g without changing its data.

    Layers from the lowest ball-admitting layer up to L-2 receive the
    perturbation (a callable of (n, 2) offsets from the ball center,
    constant 1 by default, times a radial taper controlled by
    ``smooth_margin``); the top layer receives minus the sum of the
    perturbations, which restores phi_g exactly in the aligned-shift case
    and up to interpolation error otherwise.

    The perturbation magnitude is ``amplitude`` if given, else scaled so
    that the relative layer-space distance equals ``target_ratio`` (default
    1 when neither is given).
    """
    op._check_stack(stack)
    if not 0.0 <= smooth_margin < 1.0:
        raise ValueError("smooth_margin must be in [0, 1)")
    L = op.num_layers
    l0, ball = lowest_ball_layer(op, g)
    if l0 >= L - 1:
        raise NoSingleOverlapRegion(
            f"direction {g} has single-overlap balls only on the top "
            "layer; the witness needs one below it to compensate above")
    regions = tuple(shifted_region(ball, op.spec, l) for l in range(L))
    perturbed = tuple(range(l0, L - 1))
    base = perturbation if perturbation is not None \
        else (lambda xi: np.ones(xi.shape[0]))

    def p_values(points, center):
        xi = points - np.asarray(center)
        q = np.hypot(xi[:, 0], xi[:, 1]) / ball.radius
        return np.asarray(base(xi), dtype=float) * _taper(q, smooth_margin)

    omaps = op.overlap_maps()
    delta = [np.zeros(grid.shape) for grid in op.layer_grids]
    for l in list(perturbed) + [L - 1]:
        flat, pts = _region_nodes(op.layer_grids[l], regions[l])
        if flat.size == 0:
            raise NoSingleOverlapRegion(
                f"translated ball on layer {l} contains no grid node")
        if not np.all(omaps[l].values.ravel()[flat] == 1):
            raise NoSingleOverlapRegion(
                f"translated ball on layer {l} leaves the single-overlap "
                "region")
        if not np.all(op.layer_masks[l].ravel()[flat]):
            raise NoSingleOverlapRegion(
                f"translated ball on layer {l} leaves the layer support")
        vals = p_values(pts, regions[l].center)
        if l == L - 1:
            vals = -float(len(perturbed)) * vals
        delta[l].ravel()[flat] = vals

    delta_stack = LayerStack(op.layer_grids, delta, op.layer_masks,
                             op.weights)
    K = norm_layers(delta_stack)
    if K == 0.0:
        raise ValueError("perturbation vanishes on every ball node")
    if amplitude is not None:
        c = float(amplitude)
    elif target_ratio is not None:
        base_norm = norm_layers(stack)
        c = float(target_ratio) * base_norm / K if base_norm > 0 else 1.0
    else:
        c = 1.0

    modified = stack.add_scaled(delta_stack, c)
    data_orig = op.forward(stack)
    data_mod = op.forward(modified)
    diff = data_mod.add_scaled(data_orig, -1.0)
    max_disc = float(np.max(np.abs(diff.values)))
    denom = norm_data(data_orig)
    rel_disc = norm_data(diff) / denom if denom > 0 else (
        math.inf if max_disc > 0 else 0.0)
    dist = norm_layers(modified.add_scaled(stack, -1.0))
    base_norm = norm_layers(stack)
    rel_dist = dist / base_norm if base_norm > 0 else (
        math.inf if dist > 0 else 0.0)
    return NullspaceWitness(
        original=stack, modified=modified, data_original=data_orig,
        data_modified=data_mod, regions=regions, guide_index=g,
        base_layer=l0, perturbed_layers=perturbed, amplitude=c,
        max_data_discrepancy=max_disc, rel_data_discrepancy=float(rel_disc),
        layer_distance=dist, rel_layer_distance=float(rel_dist))


def project_to_range_of_adjoint(op: TomoOperator, stack: LayerStack
                                ) -> LayerStack:
    """The projected atmosphere A* A Phi.

    This is an element of the range of A*, not an orthogonal projection;
    the construction is deliberately kept in this raw form.
    """
    return op.normal_apply(stack)


# ---------------------------------------------------------------------------
# stratified errors


@dataclass
class StratifiedError:
    """Relative squared errors, globally and per overlap count.

    ``global_error`` and ``per_omega`` use the printed normalization
    ||Phi - Phi_rec||^2 / ||Phi_rec||^2; the ``*_truth_norm`` variants
    normalize by the true field instead. Strata holding nodes but with a
    vanishing denominator are None and listed in ``undefined`` (a
    numerical failure); strata with no nodes at all are None and listed
    in ``empty`` (a property of the geometry, not a failure).
    """

    global_error: float
    global_error_truth_norm: float
    per_omega: dict[int, Optional[float]]
    per_omega_truth_norm: dict[int, Optional[float]]
    undefined: tuple[int, ...]
    empty: tuple[int, ...]


def relative_error(truth: LayerStack, recon: LayerStack,
                   strata: Sequence[OverlapMap]) -> StratifiedError:
    """The relative L2 error of a reconstruction, per overlap stratum.

    Strata pool nodes with the same overlap count across layers, using the
    (1/gamma_l) s^2 measure of the layer inner product. The overlap maps
    must live on the stacks' grids.
    """
    if truth.grids != recon.grids:
        raise ValueError("stacks live on different grids")
    if len(strata) != truth.num_layers:
        raise ValueError("one overlap map per layer is required")
    for omap, grid in zip(strata, truth.grids):
        if omap.grid != grid:
            raise ValueError("overlap maps must live on the stack grids")
    G = strata[0].spec.num_directions
    omegas = range(1, G + 1)
    num = {w: 0.0 for w in omegas}
    den_rec = {w: 0.0 for w in omegas}
    den_tru = {w: 0.0 for w in omegas}
    nodes = {w: 0 for w in omegas}
    for omap, grid, gamma, t, r in zip(strata, truth.grids, truth.weights,
                                       truth.values, recon.values):
        meas = grid.spacing ** 2 / gamma
        for w in omegas:
            sel = omap.values == w
            count = int(sel.sum())
            if count == 0:
                continue
            nodes[w] += count
            d = t[sel] - r[sel]
            num[w] += meas * float(d @ d)
            den_rec[w] += meas * float(r[sel] @ r[sel])
            den_tru[w] += meas * float(t[sel] @ t[sel])

    def ratio(n, d):
        return n / d if d > 0 else None

    per = {w: ratio(num[w], den_rec[w]) for w in omegas}
    per_t = {w: ratio(num[w], den_tru[w]) for w in omegas}
    tot_n = sum(num.values())
    tot_r = sum(den_rec.values())
    tot_t = sum(den_tru.values())
    empty = tuple(w for w in omegas if nodes[w] == 0)
    undefined = tuple(w for w in omegas
                      if per[w] is None and nodes[w] > 0)
    return StratifiedError(
        global_error=ratio(tot_n, tot_r) if tot_r > 0 else math.nan,
        global_error_truth_norm=ratio(tot_n, tot_t) if tot_t > 0
        else math.nan,
        per_omega=per, per_omega_truth_norm=per_t, undefined=undefined,
        empty=empty)


# ---------------------------------------------------------------------------
# Strehl evaluation


@dataclass(frozen=True)
class StrehlPoint:
    """Extended-Marechal Strehl ratio along one evaluation direction."""

    direction_rad: tuple[float, float]
    radius_rad: float
    stratum: int
    strehl: Optional[float]  # None when the footprint leaves the grids


def ring_directions(max_radius_rad: float,
                    ring_radii_rel: Sequence[float] = (1 / 3, 2 / 3, 1.0),
                    counts: Sequence[int] = (6, 12, 18),
                    include_center: bool = True) -> NDArray[np.float64]:
    """Concentric evaluation directions: optional center plus rings."""
    if len(ring_radii_rel) != len(counts):
        raise ValueError("one direction count per ring is required")
    dirs = [(0.0, 0.0)] if include_center else []
    for rel, cnt in zip(ring_radii_rel, counts):
        r = rel * max_radius_rad
        for j in range(int(cnt)):
            ang = 2.0 * np.pi * j / int(cnt)
            dirs.append((r * np.cos(ang), r * np.sin(ang)))
    return np.asarray(dirs, dtype=float)


def strehl_map(op: TomoOperator, truth: LayerStack, recon: LayerStack,
               eval_directions, wavelength_m: float = 589e-9
               ) -> list[StrehlPoint]:
    """Strehl ratio of the residual wavefront per evaluation direction.

    For each direction the residual A_d(Phi_true - Phi_rec) is formed on
    the pupil, piston is removed, and SR = exp(-var) of the residual in
    phase radians at ``wavelength_m`` (extended Marechal approximation).
    Directions whose footprint leaves the layer grids get strehl = None.
    Each direction is tagged with the overlap count at its top-layer
    footprint center.
    """
    if not wavelength_m > 0:
        raise ValueError("wavelength must be positive")
    residual = truth.add_scaled(recon, -1.0)
    mask = op.pupil_mask
    to_phase = 2.0 * np.pi / wavelength_m
    top = op.num_layers - 1
    points = []
    for d in np.asarray(eval_directions, dtype=float).reshape(-1, 2):
        fld, covered = op.forward_direction(d, residual)
        stratum = int(overlap_counts(
            op.spec, top, (op.spec.layer_heights_m[top] * d)[None, :])[0])
        if not covered:
            sr = None
        else:
            vals = fld.values[mask]
            vals = vals - vals.mean()
            var_phase = float(np.mean(vals ** 2)) * to_phase ** 2
            sr = float(np.exp(-var_phase))
        points.append(StrehlPoint((float(d[0]), float(d[1])),
                                  float(np.hypot(d[0], d[1])), stratum, sr))
    return points


def strehl_by_stratum(points: Sequence[StrehlPoint]
                      ) -> dict[int, tuple[float, float, int]]:
    """Mean, variance, and count of defined Strehl values per stratum."""
    out = {}
    for stratum in sorted({p.stratum for p in points}):
        vals = np.array([p.strehl for p in points
                         if p.stratum == stratum and p.strehl is not None])
        if vals.size:
            out[stratum] = (float(vals.mean()), float(vals.var()),
                            int(vals.size))
    return out


# ---------------------------------------------------------------------------
# range-of-adjoint scaling invariant


@dataclass(frozen=True)
class InvariantCheck:
    """One ball-pair comparison of the range-of-adjoint fingerprint."""

    guide_index: int
    layer_a: int
    layer_b: int
    num_nodes: int
    max_abs_diff: float
    tolerance: float
    scale: float
    aligned: bool
    passed: bool
    skipped: bool = False


def _trace_patch(op: TomoOperator, trace: Region):
    """Pupil-lattice patch covering the trace disk plus one ring; returns
    node coordinates (ny, nx, 2), the in-disk mask, and the eroded mask of
    nodes whose 4-neighborhood stays inside the disk."""
    p = op.pupil
    s = p.spacing
    cx, cy = trace.center
    rho = trace.radius
    ix0 = max(int(math.floor((cx - rho - p.origin_x) / s)) - 1, 0)
    ix1 = min(int(math.ceil((cx + rho - p.origin_x) / s)) + 1, p.nx - 1)
    iy0 = max(int(math.floor((cy - rho - p.origin_y) / s)) - 1, 0)
    iy1 = min(int(math.ceil((cy + rho - p.origin_y) / s)) + 1, p.ny - 1)
    if ix1 < ix0 or iy1 < iy0:
        return None
    xs = p.origin_x + s * np.arange(ix0, ix1 + 1)
    ys = p.origin_y + s * np.arange(iy0, iy1 + 1)
    X, Y = np.meshgrid(xs, ys)
    pts = np.stack([X, Y], axis=-1)
    in_disk = (X - cx) ** 2 + (Y - cy) ** 2 <= rho ** 2
    eroded = np.zeros_like(in_disk)
    if in_disk.shape[0] > 2 and in_disk.shape[1] > 2:
        eroded[1:-1, 1:-1] = (in_disk[1:-1, 1:-1] & in_disk[:-2, 1:-1]
                              & in_disk[2:, 1:-1] & in_disk[1:-1, :-2]
                              & in_disk[1:-1, 2:])
    return pts, in_disk, eroded


def _laplacian_bound(u: NDArray, eroded: NDArray) -> float:
    """Max five-point second difference over the eroded interior; gauges
    the bilinear interpolation error of the sampled field."""
    if not eroded[1:-1, 1:-1].any():
        return math.nan
    lap = (u[:-2, 1:-1] + u[2:, 1:-1] + u[1:-1, :-2] + u[1:-1, 2:]
           - 4.0 * u[1:-1, 1:-1])
    return float(np.max(np.abs(lap[eroded[1:-1, 1:-1]])))


def check_scaling_invariant(op: TomoOperator, stack: LayerStack,
                            c_tol: float = 2.0) -> list[InvariantCheck]:
    """Verify the range-of-adjoint structure of a layer stack.

    For each direction g with a single-overlap ball on some layer l0, the
    fields Phi^(l)/gamma_l sampled on the translated balls must agree node
    for node across all layers l, k >= l0. Aligned shifts are compared at
    1e-8 relative; otherwise the tolerance is self-scaling,
    c_tol * (est_l + est_k) with est the max five-point second difference
    of the sampled field (a bound on the bilinear interpolation error).
    Pairs without enough interior nodes are reported as skipped.
    """
    op._check_stack(stack)
    aligned = op.aligned
    checks: list[InvariantCheck] = []
    for g in range(op.num_directions):
        try:
            l0, ball = lowest_ball_layer(op, g)
        except NoSingleOverlapRegion:
            continue
        patch = _trace_patch(op, aperture_trace(ball, op.spec))
        if patch is None:
            continue
        pts, in_disk, eroded = patch
        if not in_disk.any():
            continue
        flat_pts = pts.reshape(-1, 2)
        samples = {}
        ests = {}
        for l in range(l0, op.num_layers):
            shifted = flat_pts + op.spec.shift(g, l)
            u = sample_field(op.layer_grids[l], stack.values[l], shifted)
            u = (u / op.weights[l]).reshape(pts.shape[:2])
            samples[l] = u
            ests[l] = _laplacian_bound(u, eroded)
        for l in range(l0, op.num_layers):
            for k in range(l + 1, op.num_layers):
                ul, uk = samples[l], samples[k]
                diff = float(np.max(np.abs((ul - uk)[in_disk])))
                scale = float(max(np.max(np.abs(ul[in_disk])),
                                  np.max(np.abs(uk[in_disk]))))
                if aligned:
                    tol = 1e-8 * scale
                    skipped = False
                else:
                    est = ests[l] + ests[k]
                    if math.isnan(est):
                        checks.append(InvariantCheck(
                            g, l, k, int(in_disk.sum()), diff, math.nan,
                            scale, aligned, passed=False, skipped=True))
                        continue
                    tol = c_tol * est + 1e-12 * scale
                    skipped = False
                passed = bool(diff <= tol) or scale == 0.0
                checks.append(InvariantCheck(
                    g, l, k, int(in_disk.sum()), diff, tol, scale,
                    aligned, passed, skipped))
    return checks


# ---------------------------------------------------------------------------
# projection experiment and reports


@dataclass
class ProjectionResult:
    """Stratified errors of the two-arm reconstruction experiment for one
    seed: reconstructing Phi versus reconstructing Phi_hat = A*A Phi."""

    seed: int
    error_original: StratifiedError
    error_projected: StratifiedError


def run_projection_experiment(op: TomoOperator, tspec: TurbulenceSpec,
                              cfg: SolveConfig, seeds: Sequence[int]
                              ) -> list[ProjectionResult]:
    """Reconstruct Phi and Phi_hat = A*A Phi from their own exact data,
    with the same solver settings, for each seed."""
    omaps = op.overlap_maps()
    results = []
    for seed in seeds:
        ts = replace(tspec, seed=int(seed))
        truth = generate_atmosphere(ts, op.spec, op.layer_grids,
                                    op.layer_masks)
        rec, _ = solve(op, op.forward(truth), cfg)
        err_a = relative_error(truth, rec, omaps)
        projected = project_to_range_of_adjoint(op, truth)
        rec2, _ = solve(op, op.forward(projected), cfg)
        err_b = relative_error(projected, rec2, omaps)
        results.append(ProjectionResult(int(seed), err_a, err_b))
    return results


@dataclass
class ReconReport:
    """Bundle of reconstruction quality measures for one solve."""

    stratified: StratifiedError
    strehl_points: list[StrehlPoint]
    strehl_stats: dict[int, tuple[float, float, int]]
    invariant_checks: list[InvariantCheck]


def build_recon_report(op: TomoOperator, truth: LayerStack,
                       recon: LayerStack, eval_directions=None,
                       wavelength_m: float = 589e-9) -> ReconReport:
    """Stratified errors, Strehl map, and invariant checks in one bundle."""
    if eval_directions is None:
        max_r = float(np.max(np.hypot(op.spec.directions_rad[:, 0],
                                      op.spec.directions_rad[:, 1])))
        eval_directions = ring_directions(max_r)
    stratified = relative_error(truth, recon, op.overlap_maps())
    points = strehl_map(op, truth, recon, eval_directions, wavelength_m)
    return ReconReport(stratified, points, strehl_by_stratum(points),
                       check_scaling_invariant(op, recon))
