"""Overlap geometry: counts, maps, disjoint height, single-overlap balls."""

import numpy as np
import pytest

from atmotomo.field import Grid2D
from atmotomo.geometry import (
    ARCSEC_TO_RAD,
    GeometrySpec,
    NoSingleOverlapRegion,
    aperture_trace,
    disjoint_height,
    find_single_overlap_ball,
    layer_bounding_square,
    overlap_counts,
    overlap_map,
    overlap_map_on_grid,
    shifted_aperture,
    shifted_region,
)

from helpers import generic_spec, three_star_aligned_spec
from oracles import brute_overlap


def test_spec_validation():
    with pytest.raises(ValueError):  # non-increasing heights
        GeometrySpec(1.0, [(1e-4, 0.0)], [1000.0, 1000.0], [0.5, 0.5])
    with pytest.raises(ValueError):  # negative height
        GeometrySpec(1.0, [(1e-4, 0.0)], [-1.0], [1.0])
    with pytest.raises(ValueError):  # weight count mismatch
        GeometrySpec(1.0, [(1e-4, 0.0)], [0.0, 100.0], [1.0])
    with pytest.raises(ValueError):  # nonpositive weight
        GeometrySpec(1.0, [(1e-4, 0.0)], [0.0], [0.0])
    with pytest.raises(ValueError):  # duplicate directions
        GeometrySpec(1.0, [(1e-4, 0.0), (1e-4, 0.0)], [0.0], [1.0])
    with pytest.raises(ValueError):  # angle ordering violated
        GeometrySpec(1.0, [(0.0, 1e-4), (1e-4, 0.0)], [0.0], [1.0])
    with pytest.raises(ValueError):  # bad aperture
        GeometrySpec(-1.0, [(1e-4, 0.0)], [0.0], [1.0])


def test_angle_ties_broken_by_radius():
    # two stars on the same ray are fine when sorted by radius
    spec = GeometrySpec(1.0, [(1e-4, 0.0), (2e-4, 0.0)], [0.0], [1.0])
    assert spec.num_directions == 2


def test_from_arcsec_and_shift():
    spec = GeometrySpec.from_arcsec(10.0, [(30.0, 0.0), (0.0, 45.0)],
                                    [0.0, 10000.0], [0.5, 0.5])
    assert np.allclose(spec.directions_rad[0],
                       (30.0 * ARCSEC_TO_RAD, 0.0))
    assert np.allclose(spec.shift(1, 1), (0.0, 10000.0 * 45.0
                                          * ARCSEC_TO_RAD))
    assert np.allclose(spec.shift(1, 0), (0.0, 0.0))


def test_overlap_counts_match_brute_force():
    spec = generic_spec()
    rng = np.random.default_rng(11)
    for l in range(spec.num_layers):
        cx, cy, half = layer_bounding_square(spec, l)
        pts = np.column_stack([
            rng.uniform(cx - 1.2 * half, cx + 1.2 * half, 400),
            rng.uniform(cy - 1.2 * half, cy + 1.2 * half, 400)])
        assert np.array_equal(overlap_counts(spec, l, pts),
                              brute_overlap(spec, l, pts))


def test_overlap_map_grids_cover_layer():
    spec = generic_spec()
    for l in range(spec.num_layers):
        omap = overlap_map(spec, l, 101)
        # every shifted aperture center sits inside the map grid
        for g in range(spec.num_directions):
            cx, cy = spec.shift(g, l)
            fx = (cx - omap.grid.origin_x) / omap.grid.spacing
            fy = (cy - omap.grid.origin_y) / omap.grid.spacing
            assert -1e-9 <= fx <= omap.grid.nx - 1 + 1e-9
            assert -1e-9 <= fy <= omap.grid.ny - 1 + 1e-9
        # counts on the grid agree with the analytic membership test,
        # away from exact circle boundaries where the two membership
        # formulas can round differently at the last ulp
        pts = omap.grid.node_points()
        clearance = np.full(pts.shape[0], np.inf)
        for g in range(spec.num_directions):
            cx, cy = spec.shift(g, l)
            d = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
            clearance = np.minimum(clearance,
                                   np.abs(d - spec.aperture_radius_m))
        off = clearance > 1e-9 * spec.aperture_radius_m
        assert np.array_equal(omap.values.ravel()[off],
                              brute_overlap(spec, l, pts[off]))
        assert off.mean() > 0.99


def test_overlap_map_on_existing_grid():
    spec = generic_spec()
    grid = Grid2D(-2.0, -2.0, 0.25, 17, 17)
    omap = overlap_map_on_grid(spec, 0, grid)
    assert omap.grid is grid
    assert omap.values.shape == grid.shape
    with pytest.raises(IndexError):
        overlap_map_on_grid(spec, 5, grid)


def test_layer_zero_counts_everywhere_G_inside():
    # all shifted apertures coincide at h = 0
    spec = generic_spec(heights=(0.0, 2500.0, 8000.0))
    omap = overlap_map(spec, 0, 51)
    inside = omap.values > 0
    assert np.all(omap.values[inside] == spec.num_directions)


def test_disjoint_height_formula_and_meaning():
    spec = generic_spec(T=1.0)
    dirs = spec.directions_rad
    dmin = min(np.hypot(*(dirs[i] - dirs[j]))
               for i in range(3) for j in range(i + 1, 3))
    h = disjoint_height(spec)
    assert h == pytest.approx(2.0 * spec.aperture_radius_m / dmin)

    # slightly above h_disj no point overlaps two apertures
    probe = GeometrySpec(spec.aperture_radius_m, spec.directions_rad,
                         [h * 1.01], spec.layer_weights[:1] * 0 + 1.0)
    omap = overlap_map(probe, 0, 201)
    assert omap.values.max() == 1

    # slightly below, the closest pair still overlaps somewhere
    probe = GeometrySpec(spec.aperture_radius_m, spec.directions_rad,
                         [h * 0.97], spec.layer_weights[:1] * 0 + 1.0)
    omap = overlap_map(probe, 0, 201)
    assert omap.values.max() >= 2


def test_disjoint_height_needs_two_directions():
    spec = GeometrySpec(1.0, [(1e-4, 0.0)], [0.0], [1.0])
    with pytest.raises(ValueError):
        disjoint_height(spec)


def test_pairwise_overlap_decays_with_height():
    spec = generic_spec()
    h_disj = disjoint_height(spec)
    fracs = []
    for f in (0.1, 0.4, 0.7, 0.95):
        probe = GeometrySpec(spec.aperture_radius_m, spec.directions_rad,
                             [f * h_disj], [1.0])
        omap = overlap_map(probe, 0, 201)
        fracs.append(float(np.mean(omap.values >= 2)))
    assert all(a > b for a, b in zip(fracs, fracs[1:]))
    assert fracs[-1] > 0.0


def _check_ball(spec, ball, factor=4):
    """Re-verify ball invariants against analytic counts on a lattice
    ``factor`` times finer than the map that produced it."""
    l, g = ball.layer_index, ball.guide_index
    r = ball.radius
    assert r > 0
    n = 2 * factor * 16 + 1
    s = 2.0 * r / (n - 1)
    fine = Grid2D(ball.center[0] - r, ball.center[1] - r, s, n, n)
    pts = fine.node_points()
    inside = ball.disk().contains(pts)
    counts = overlap_counts(spec, l, pts[inside])
    assert np.all(counts == 1)
    assert np.all(shifted_aperture(spec, g, l).contains(pts[inside]))


def test_single_overlap_balls_on_all_layers():
    spec = three_star_aligned_spec()
    for l in range(spec.num_layers):
        omap = overlap_map(spec, l, 129)
        for g in range(spec.num_directions):
            ball = find_single_overlap_ball(omap, g)
            assert ball.layer_index == l and ball.guide_index == g
            _check_ball(spec, ball)


def test_no_single_overlap_at_ground_layer():
    spec = generic_spec(heights=(0.0, 2500.0, 8000.0))
    omap = overlap_map(spec, 0, 101)
    with pytest.raises(NoSingleOverlapRegion):
        find_single_overlap_ball(omap, 0)


def test_ball_search_is_deterministic():
    spec = three_star_aligned_spec()
    omap = overlap_map(spec, 2, 129)
    a = find_single_overlap_ball(omap, 1)
    b = find_single_overlap_ball(omap, 1)
    assert a == b


def test_shifted_region_and_aperture_trace():
    spec = three_star_aligned_spec()
    omap = overlap_map(spec, 1, 129)
    ball = find_single_overlap_ball(omap, 0)
    h = spec.layer_heights_m
    alpha = spec.directions_rad[0]

    trace = aperture_trace(ball, spec)
    assert trace.radius == ball.radius
    assert np.allclose(trace.center,
                       np.array(ball.center) - h[1] * alpha)
    # the trace lies inside the aperture disk
    d = np.hypot(*trace.center)
    assert d + trace.radius <= spec.aperture_radius_m + 1e-12

    back = shifted_region(ball, spec, ball.layer_index)
    assert np.allclose(back.center, ball.center)
    up = shifted_region(ball, spec, 2)
    assert np.allclose(up.center,
                       np.array(ball.center) + (h[2] - h[1]) * alpha)


def test_region_contains_disk_and_mask():
    from atmotomo.geometry import Region
    disk = Region("disk", (1.0, 0.0), 0.5)
    assert disk.contains([(1.2, 0.0)])[0]
    assert not disk.contains([(1.6, 0.0)])[0]

    grid = Grid2D(0.0, 0.0, 1.0, 3, 3)
    field = np.zeros(grid.shape, bool)
    field[1, 2] = True
    mask = Region("mask", grid=grid, field=field)
    assert mask.contains([(2.0, 1.0)])[0]
    assert not mask.contains([(0.0, 0.0)])[0]
    assert not mask.contains([(10.0, 10.0)])[0]
