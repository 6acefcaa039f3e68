"""Pure numpy versions of the hot loops in ``_ckernels.pyx``.

Both backends accumulate in the same order (offset-major, one product and
one addition per term) so they agree bit-for-bit.
"""

import numpy as np

_CHUNK = 1 << 20


def scatter_offsets(out, src_row, src_col, src_val, dr, dc, w):
    """out[r + dr[k], c + dc[k]] += w[k] * val for every source and offset k."""
    nrows, ncols = out.shape
    nsrc = src_row.shape[0]
    if nsrc == 0 or dr.shape[0] == 0:
        return out
    flat = out.reshape(-1)
    step = max(1, _CHUNK // nsrc)
    for k0 in range(0, dr.shape[0], step):
        k1 = min(k0 + step, dr.shape[0])
        tr = src_row[None, :] + dr[k0:k1, None]
        tc = src_col[None, :] + dc[k0:k1, None]
        ok = (tr >= 0) & (tr < nrows) & (tc >= 0) & (tc < ncols)
        contrib = w[k0:k1, None] * src_val[None, :]
        np.add.at(flat, (tr * ncols + tc)[ok], contrib[ok])
    return out


def best_cell(base, occ, ncols, origin_col, origin_row, delta, cell_size, want_occupied, u):
    """Flat index of the highest-utility candidate cell, or -1 if none.

    Candidates are cells other than the origin with ``occ >= 1`` (when
    ``want_occupied``) or ``occ == 0``. Utility is ``base + delta * d`` with d
    the Euclidean centroid distance to the origin. Exact ties are resolved by
    taking maximiser number ``floor(u * k)`` in row-major order.
    """
    n = base.shape[0]
    idx = np.arange(n)
    rows, cols = np.divmod(idx, ncols)
    dx = cols - origin_col
    dy = rows - origin_row
    d = cell_size * np.sqrt((dx * dx + dy * dy).astype(np.float64))
    util = base + delta * d
    mask = occ >= 1 if want_occupied else occ == 0
    mask[origin_row * ncols + origin_col] = False
    if not mask.any():
        return -1
    util = np.where(mask, util, -np.inf)
    ties = np.flatnonzero(util == util.max())
    return int(ties[int(u * ties.shape[0])])
