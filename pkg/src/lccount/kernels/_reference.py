"""Pure numpy/python reference implementations of the hot kernels.

Every function here has a numba twin in ``_jit``; the two backends must
agree (up to floating-point summation order for the convolutions, and
bit-exactly for the integer-valued kernels).  This module is the
fallback used when numba is unavailable or when
``LCCOUNT_KERNELS=numpy`` is set, and it doubles as the cross-check
implementation for the backend agreement tests.

Array conventions
-----------------
* feature maps are ``(channels, height, width)`` float64
* conv weights are ``(out_channels, in_channels, kh, kw)`` float64
* masks are ``(height, width)`` uint8/bool; label images are int32
"""

from __future__ import annotations

import heapq
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


def conv2d_forward(x, w, b, stride, pad):
    """Cross-correlation of ``x`` with ``w`` plus bias.

    Output spatial size is ``(H + 2*pad - kh) // stride + 1`` per axis.
    """
    cout, cin, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    y = np.einsum("ihwkl,oikl->ohw", win, w, optimize=True)
    return y + b[:, None, None]


def conv2d_input_grad(gy, w, stride, pad, height, width):
    """Gradient of the conv output w.r.t. its input (`full` correlation)."""
    cout, cin, kh, kw = w.shape
    oh, ow = gy.shape[1], gy.shape[2]
    gxp = np.zeros((cin, height + 2 * pad, width + 2 * pad))
    contrib = np.einsum("ohw,oikl->ihwkl", gy, w, optimize=True)
    for ky in range(kh):
        ys = slice(ky, ky + stride * (oh - 1) + 1, stride)
        for kx in range(kw):
            xs = slice(kx, kx + stride * (ow - 1) + 1, stride)
            gxp[:, ys, xs] += contrib[:, :, :, ky, kx]
    return gxp[:, pad:pad + height, pad:pad + width]


def conv2d_param_grad(x, gy, kh, kw, stride, pad):
    """Gradients of the conv output w.r.t. weights and bias."""
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    gw = np.einsum("ohw,ihwkl->oikl", gy, win, optimize=True)
    gb = gy.sum(axis=(1, 2))
    return gw, gb


# ---------------------------------------------------------------------------
# bilinear 2x upsampling (half-pixel centers, clamped borders)
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _upsample_matrix(n):
    """(2n, n) matrix mapping a length-n signal to its 2x upsampling.

    Output sample ``o`` reads the source at coordinate ``o/2 - 0.25``
    (align the pixel centers of both grids), linearly interpolating
    between the two nearest source samples with index clamping at the
    borders.
    """
    u = np.zeros((2 * n, n))
    for o in range(2 * n):
        src = 0.5 * o - 0.25
        i0 = int(np.floor(src))
        w1 = src - i0
        lo = min(max(i0, 0), n - 1)
        hi = min(max(i0 + 1, 0), n - 1)
        u[o, lo] += 1.0 - w1
        u[o, hi] += w1
    return u


def upsample2x(x):
    """Bilinear 2x upsampling of a (C, H, W) feature map."""
    _, h, w = x.shape
    uh = _upsample_matrix(h)
    uw = _upsample_matrix(w)
    return np.einsum("ai,cij,bj->cab", uh, x, uw, optimize=True)


def upsample2x_grad(gy):
    """Adjoint of :func:`upsample2x`: scatter a (C, 2H, 2W) gradient back."""
    _, h2, w2 = gy.shape
    uh = _upsample_matrix(h2 // 2)
    uw = _upsample_matrix(w2 // 2)
    return np.einsum("ai,cab,bj->cij", uh, gy, uw, optimize=True)


# ---------------------------------------------------------------------------
# connected components (8-connectivity, two-pass union-find)
# ---------------------------------------------------------------------------


def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:  # path compression
        parent[i], i = root, parent[i]
    return root


def label_components(mask):
    """Label 8-connected components of a binary mask.

    Returns ``(labels, count)`` where labels are dense ints ``1..count``
    ordered by first appearance in row-major scan order; background is 0.
    """
    mask = np.asarray(mask)
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent = [0]
    nxt = 1
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            neigh = []
            if c > 0 and mask[r, c - 1]:
                neigh.append(labels[r, c - 1])
            if r > 0:
                if mask[r - 1, c]:
                    neigh.append(labels[r - 1, c])
                if c > 0 and mask[r - 1, c - 1]:
                    neigh.append(labels[r - 1, c - 1])
                if c + 1 < w and mask[r - 1, c + 1]:
                    neigh.append(labels[r - 1, c + 1])
            if not neigh:
                parent.append(nxt)
                labels[r, c] = nxt
                nxt += 1
            else:
                roots = [_find(parent, int(n)) for n in neigh]
                m = min(roots)
                labels[r, c] = m
                for rt in roots:
                    parent[rt] = m
    remap = {}
    for r in range(h):
        for c in range(w):
            if labels[r, c]:
                root = _find(parent, int(labels[r, c]))
                if root not in remap:
                    remap[root] = len(remap) + 1
                labels[r, c] = remap[root]
    return labels, len(remap)


# ---------------------------------------------------------------------------
# exact squared euclidean distance transform
# ---------------------------------------------------------------------------


def _edt_1d(f, cap):
    """Lower-envelope pass: d[q] = min_p (q - p)^2 + f[p]."""
    n = len(f)
    d = np.empty(n)
    v = np.zeros(n, dtype=np.int64)
    z = np.empty(n + 1)
    k = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
        if d[q] > cap:
            d[q] = cap
    return d


def edt_squared(mask):
    """Exact squared euclidean distance to the nearest False pixel.

    The image border is NOT treated as background: a mask with no False
    pixels yields the saturation value ``(H + W) ** 2`` everywhere.
    """
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    big = h + w
    cap = float(big * big)
    # vertical pass: distance (in rows) to the nearest False in each column
    dcol = np.full((h, w), big, dtype=np.int64)
    run = np.full(w, big, dtype=np.int64)
    for r in range(h):
        run = np.where(mask[r], np.minimum(run + 1, big), 0)
        dcol[r] = run
    run = np.full(w, big, dtype=np.int64)
    for r in range(h - 1, -1, -1):
        run = np.where(mask[r], np.minimum(run + 1, big), 0)
        dcol[r] = np.minimum(dcol[r], run)
    f = np.minimum(dcol.astype(np.float64) ** 2, cap)
    # horizontal pass: fold in column offsets via the lower envelope
    out = np.empty((h, w))
    for r in range(h):
        out[r] = _edt_1d(f[r], cap)
    return out


# ---------------------------------------------------------------------------
# seeded priority-flood watershed
# ---------------------------------------------------------------------------

# fixed row-major neighbour order shared by both backends
_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def watershed_flood(cost, domain, seed_rows, seed_cols):
    """Priority-flood region growing over ``domain`` pixels.

    Seeds get labels ``1..len(seed_rows)`` in argument order.  Pixels are
    popped in increasing ``cost`` order with FIFO (insertion age) used to
    break exact ties, and each pixel is labelled the moment it is pushed
    by its first (cheapest-so-far) claimant.  Unreached domain pixels
    keep label 0.
    """
    h, w = cost.shape
    labels = np.zeros((h, w), dtype=np.int32)
    heap = []
    age = 0
    for k in range(len(seed_rows)):
        r, c = int(seed_rows[k]), int(seed_cols[k])
        labels[r, c] = k + 1
        heapq.heappush(heap, (cost[r, c], age, r * w + c))
        age += 1
    while heap:
        _, _, flat = heapq.heappop(heap)
        r, c = divmod(flat, w)
        for dr, dc in _NEIGHBORS:
            nr, nc = r + dr, c + dc
            if 0 <= nr < h and 0 <= nc < w and domain[nr, nc] and labels[nr, nc] == 0:
                labels[nr, nc] = labels[r, c]
                heapq.heappush(heap, (cost[nr, nc], age, nr * w + nc))
                age += 1
    return labels
