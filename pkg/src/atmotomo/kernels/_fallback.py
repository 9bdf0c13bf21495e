"""Pure numpy implementation of the stencil kernels.

Semantics are identical to the compiled extension in ``_core``; this module
is the reference implementation and the fallback when the extension is not
built.
"""

import numpy as np


def gather_add(out, src, idx, w):
    """Accumulate bilinear samples: out[i] += sum_j src[idx[i, j]] * w[i, j].

    Parameters
    ----------
    out : (n,) float64 array, modified in place
    src : (m,) float64 array, flattened source field
    idx : (n, 4) int64 array of flat node indices
    w : (n, 4) float64 array of stencil weights
    """
    if len(idx):
        out += np.einsum("ij,ij->i", src[idx], w)


def scatter_add(dst, vals, idx, w, scale=1.0):
    """Transpose of gather_add: dst[idx[i, j]] += scale * vals[i] * w[i, j].

    Parameters
    ----------
    dst : (m,) float64 array, modified in place
    vals : (n,) float64 array of values to spread
    idx : (n, 4) int64 array of flat node indices
    w : (n, 4) float64 array of stencil weights
    scale : float, common factor applied to every contribution
    """
    if len(idx):
        contrib = (scale * vals)[:, None] * w
        dst += np.bincount(idx.ravel(), weights=contrib.ravel(),
                           minlength=dst.size)
