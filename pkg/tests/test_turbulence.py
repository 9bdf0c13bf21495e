"""Von Karman screen synthesis: determinism, scaling laws, statistics."""

from dataclasses import replace

import numpy as np
import pytest

from atmotomo.geometry import overlap_counts
from atmotomo.turbulence import (
    TurbulenceSpec,
    generate_atmosphere,
    vonkarman_screen,
)

from helpers import generic_spec, make_operator
from oracles import kolmogorov_structure, measured_structure


def _tspec(**kw):
    base = dict(fried_parameter_m=0.15, outer_scale_m=25.0,
                layer_strengths=(0.6, 0.25, 0.15), seed=0)
    base.update(kw)
    return TurbulenceSpec(**base)


def test_spec_validation():
    with pytest.raises(ValueError):
        _tspec(fried_parameter_m=0.0)
    with pytest.raises(ValueError):
        _tspec(outer_scale_m=-1.0)
    with pytest.raises(ValueError):
        _tspec(layer_strengths=(0.5, 0.6, 0.1))
    with pytest.raises(ValueError):
        _tspec(layer_strengths=(-0.1, 1.0, 0.1))
    with pytest.raises(ValueError):
        _tspec(reference_wavelength_m=0.0)
    with pytest.raises(ValueError):
        _tspec(subharmonic_levels=-1)


def test_atmosphere_is_deterministic():
    spec = generic_spec()
    op = make_operator(spec, 33)
    a = generate_atmosphere(_tspec(), spec, op.layer_grids, op.layer_masks)
    b = generate_atmosphere(_tspec(), spec, op.layer_grids, op.layer_masks)
    for va, vb in zip(a.values, b.values):
        assert np.array_equal(va, vb)
    c = generate_atmosphere(_tspec(seed=1), spec, op.layer_grids,
                            op.layer_masks)
    assert not np.array_equal(a.values[0], c.values[0])


def test_layers_draw_independent_streams():
    # a layer's screen shape is unaffected by the other layers' strengths;
    # its own strength only rescales it by c_l^(1/2)
    spec = generic_spec()
    op = make_operator(spec, 33)
    a = generate_atmosphere(_tspec(layer_strengths=(0.6, 0.25, 0.15)),
                            spec, op.layer_grids, op.layer_masks)
    b = generate_atmosphere(_tspec(layer_strengths=(0.15, 0.25, 0.6)),
                            spec, op.layer_grids, op.layer_masks)
    ratio = np.sqrt(0.15 / 0.6)
    assert np.allclose(b.values[0], a.values[0] * ratio, atol=1e-12)
    assert np.array_equal(b.values[1], a.values[1])


def test_zero_strength_layer_is_flat():
    spec = generic_spec()
    op = make_operator(spec, 33)
    atmo = generate_atmosphere(_tspec(layer_strengths=(0.7, 0.0, 0.3)),
                               spec, op.layer_grids, op.layer_masks)
    assert np.all(atmo.values[1] == 0.0)
    assert np.any(atmo.values[0] != 0.0)


def test_piston_removed_over_each_mask():
    spec = generic_spec()
    op = make_operator(spec, 33)
    atmo = generate_atmosphere(_tspec(), spec, op.layer_grids,
                               op.layer_masks)
    for l in range(atmo.num_layers):
        vals = atmo.values[l][atmo.masks[l]]
        assert abs(vals.mean()) <= 1e-12 * vals.std()


def test_default_masks_cover_shifted_apertures():
    spec = generic_spec()
    op = make_operator(spec, 33)
    atmo = generate_atmosphere(_tspec(), spec, op.layer_grids)
    for l, grid in enumerate(op.layer_grids):
        expect = (overlap_counts(spec, l, grid.node_points()) >= 1)
        assert np.array_equal(atmo.masks[l].ravel(), expect)


def test_grid_and_strength_count_checked():
    spec = generic_spec()
    op = make_operator(spec, 33)
    with pytest.raises(ValueError):
        generate_atmosphere(_tspec(), spec, op.layer_grids[:2])
    with pytest.raises(ValueError):
        generate_atmosphere(_tspec(layer_strengths=(0.5, 0.5)), spec,
                            op.layer_grids)


def test_opl_proportional_to_reference_wavelength():
    spec = generic_spec()
    op = make_operator(spec, 33)
    a = generate_atmosphere(_tspec(), spec, op.layer_grids, op.layer_masks)
    b = generate_atmosphere(_tspec(reference_wavelength_m=1000e-9), spec,
                            op.layer_grids, op.layer_masks)
    assert np.allclose(b.values[0], 2.0 * a.values[0], atol=1e-18)


def test_screen_amplitude_scales_with_fried_parameter():
    # the synthesis is pointwise proportional to r0^(-5/6) for fixed draws
    rng_a = np.random.default_rng(3)
    rng_b = np.random.default_rng(3)
    a = vonkarman_screen(64, 64, 0.02, 0.1, 1000.0, rng_a)
    b = vonkarman_screen(64, 64, 0.02, 0.05, 1000.0, rng_b)
    assert np.allclose(b, a * 2.0 ** (5.0 / 6.0), rtol=1e-12)


def test_structure_function_near_kolmogorov():
    # well below the outer scale the sample structure function tracks
    # 6.88 (d/r0)^(5/3); a light version of the full statistical gate
    spacing, r0, L0 = 0.02, 0.1, 1000.0
    lags = [2, 3, 4, 6]
    screens = []
    for seed in range(25):
        rng = np.random.default_rng(seed)
        screens.append(vonkarman_screen(96, 96, spacing, r0, L0, rng))
    measured = measured_structure(screens, lags)
    expect = kolmogorov_structure(spacing * np.array(lags), r0)
    rel = np.abs(measured - expect) / expect
    assert np.all(rel < 0.2), rel
