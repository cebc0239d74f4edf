"""Distance transform and seeded priority-flood watershed.

The watershed here is the classic marker-driven flavour: every seed
starts a basin, pixels are flooded in order of increasing cost (we flood
``-relief`` so that *high* relief values — e.g. blob interiors under a
distance transform — are claimed first), and exact cost ties are won by
whichever basin reached the pixel earlier (insertion order), which makes
the labeling fully deterministic.

Two details depart from textbook presentations and are relied on by the
split-boundary code:

* neighbourhoods are 8-connected, matching blob connectivity, so a
  connected domain is always fully flooded from any seed inside it;
* domain pixels unreachable from every seed (possible when the domain
  itself is disconnected) are assigned to the nearest seed by squared
  euclidean distance (ties: lowest seed index) instead of being left
  unlabeled, so the output always partitions the domain.
"""

from __future__ import annotations

import numpy as np

from . import kernels


def distance_transform(mask) -> np.ndarray:
    """Exact euclidean distance from each True pixel to the nearest False one.

    False pixels map to 0.  The image border is not treated as
    background: a mask with no False pixels at all comes back saturated
    at ``H + W`` everywhere.
    """
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-d, got shape {mask.shape}")
    sq = kernels.edt_squared(np.ascontiguousarray(mask, dtype=np.uint8))
    return np.sqrt(np.asarray(sq))


def _as_seed_array(seeds) -> np.ndarray:
    arr = np.array(list(seeds), dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"seeds must be (row, col) pairs, got shape {arr.shape}")
    return arr


def seeded_watershed(relief, seeds, domain) -> np.ndarray:
    """Label every domain pixel with the basin of one seed.

    Seeds are (row, col) pairs; seed k (0-based) floods label k+1.
    Returns an int32 grid: 0 outside the domain, 1..n_seeds inside.
    Raises ValueError for seeds outside the domain, duplicate seed
    pixels, or non-finite relief values on the domain.
    """
    relief = np.asarray(relief, dtype=np.float64)
    domain = np.asarray(domain, dtype=bool)
    if relief.ndim != 2 or relief.shape != domain.shape:
        raise ValueError(
            f"relief {relief.shape} and domain {domain.shape} must be matching 2-d grids"
        )
    seeds = _as_seed_array(seeds)
    h, w = relief.shape
    if len(seeds) == 0:
        raise ValueError("at least one seed is required")
    if len(seeds):
        r, c = seeds[:, 0], seeds[:, 1]
        if r.min() < 0 or r.max() >= h or c.min() < 0 or c.max() >= w:
            raise ValueError("seed coordinates fall outside the image")
        if not domain[r, c].all():
            bad = seeds[~domain[r, c]][0]
            raise ValueError(f"seed {tuple(bad)} lies outside the domain")
        if len(np.unique(r * w + c)) != len(seeds):
            raise ValueError("duplicate seed pixels are not allowed")
    if not np.all(np.isfinite(relief[domain])):
        raise ValueError("relief contains non-finite values on the domain")

    cost = np.ascontiguousarray(-relief)
    labels = np.asarray(kernels.watershed_flood(
        cost,
        np.ascontiguousarray(domain, dtype=np.uint8),
        np.ascontiguousarray(seeds[:, 0]),
        np.ascontiguousarray(seeds[:, 1]),
    ))

    # domain components that contain no seed are never reached by the
    # flood; hand them to the nearest seed so the result is a partition
    unreached = domain & (labels == 0)
    if unreached.any() and len(seeds):
        rows, cols = np.nonzero(unreached)
        d2 = (rows[:, None] - seeds[None, :, 0]) ** 2 + (cols[:, None] - seeds[None, :, 1]) ** 2
        labels[rows, cols] = np.argmin(d2, axis=1) + 1
    return labels


def ridge_pixels(labels, domain, connectivity: int = 4) -> np.ndarray:
    """Boolean mask of domain pixels adjacent to a different in-domain label.

    A pixel is a ridge pixel when some neighbour (4- or 8-connected)
    inside the domain carries a different watershed label.  Out-of-domain
    neighbours never count.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    labels = np.asarray(labels)
    domain = np.asarray(domain, dtype=bool)
    ridge = np.zeros(labels.shape, dtype=bool)
    if connectivity == 4:
        offsets = ((-1, 0), (0, -1), (0, 1), (1, 0))
    else:
        offsets = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))
    h, w = labels.shape

    def shifted(arr, dr, dc, fill):
        out = np.full(arr.shape, fill, dtype=arr.dtype)
        rs = slice(max(dr, 0), h + min(dr, 0))
        rd = slice(max(-dr, 0), h + min(-dr, 0))
        cs = slice(max(dc, 0), w + min(dc, 0))
        cd = slice(max(-dc, 0), w + min(-dc, 0))
        out[rd, cd] = arr[rs, cs]
        return out

    for dr, dc in offsets:
        nl = shifted(labels, dr, dc, 0)
        nd = shifted(domain.astype(np.uint8), dr, dc, 0).astype(bool)
        ridge |= domain & nd & (nl != labels)
    return ridge
