"""Benchmark the compiled stencil kernels against the numpy fallback.

Times the gather/scatter pair on the stencil tables of a 6-star, 3-layer
operator (the shape of the hot loop inside every solver iteration) at a few
pupil resolutions. Run with ``python -m atmotomo.kernels.bench``.
"""

import time

import numpy as np

from . import _fallback

try:
    from . import _core
except ImportError:
    _core = None


def _operator_tables(n):
    from ..geometry import GeometrySpec
    from ..operator import TomoOperator

    spec = GeometrySpec.from_arcsec(
        aperture_radius_m=21.0,
        directions_arcsec=[
            (60.0, 0.0), (30.0, 51.9615), (-30.0, 51.9615),
            (-60.0, 0.0), (-30.0, -51.9615), (30.0, -51.9615),
        ],
        layer_heights_m=[0.0, 4000.0, 12700.0],
        layer_weights=[0.75, 0.15, 0.1],
    )
    op = TomoOperator(spec, pupil_nodes=n)
    return op


def _time_pass(impl, op, layers, repeats):
    # one forward + one adjoint sweep over all (direction, layer) tables
    npts = op.pupil_index.size
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        for g in range(len(op.spec.directions_rad)):
            acc = np.zeros(npts)
            for l, (idx, w) in enumerate(op.tables[g]):
                impl.gather_add(acc, layers[l], idx, w)
            for l, (idx, w) in enumerate(op.tables[g]):
                impl.scatter_add(layers[l], acc, idx, w, 0.0)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    impls = [("python", _fallback)]
    if _core is not None:
        impls.append(("compiled", _core))
    else:
        print("compiled kernels not built; timing the fallback only")

    print(f"{'pupil':>6} {'backend':>9} {'pass ms':>9} {'Mpt/s':>8} "
          f"{'speedup':>8}")
    for n in (64, 128, 256):
        op = _operator_tables(n)
        layers = [np.random.default_rng(0).standard_normal(g.nx * g.ny)
                  for g in op.layer_grids]
        work = sum(idx.shape[0] * 2 for tabs in op.tables for idx, _ in tabs)
        base = None
        for name, impl in impls:
            dt = _time_pass(impl, op, layers, repeats=5)
            rate = work / dt / 1e6
            speedup = "" if base is None else f"{base / dt:7.2f}x"
            if base is None:
                base = dt
            print(f"{n:>6} {name:>9} {dt * 1e3:9.3f} {rate:8.1f} {speedup:>8}")


if __name__ == "__main__":
    main()
