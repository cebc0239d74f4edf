"""Numba-jitted implementations of the hot kernels.

Same contracts as ``_reference`` (see that module for the array
conventions); these versions are direct loops compiled with
``@njit(cache=True)`` so repeat runs skip compilation.  Importing this
module raises ImportError when numba is not installed — the dispatcher
in ``__init__`` falls back to the reference backend in that case.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------


@njit(cache=True, fastmath=True, nogil=True)
def conv2d_forward(x, w, b, stride, pad):
    cin, h, wid = x.shape
    cout, _, kh, kw = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wid + 2 * pad - kw) // stride + 1
    y = np.empty((cout, oh, ow))
    for co in range(cout):
        for oy in range(oh):
            for ox in range(ow):
                y[co, oy, ox] = b[co]
    for co in range(cout):
        for ci in range(cin):
            for ky in range(kh):
                for kx in range(kw):
                    wv = w[co, ci, ky, kx]
                    for oy in range(oh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ow):
                            ix = ox * stride + kx - pad
                            if 0 <= ix < wid:
                                y[co, oy, ox] += wv * x[ci, iy, ix]
    return y


@njit(cache=True, fastmath=True, nogil=True)
def conv2d_input_grad(gy, w, stride, pad, height, width):
    cout, cin, kh, kw = w.shape
    oh, ow = gy.shape[1], gy.shape[2]
    gx = np.zeros((cin, height, width))
    for co in range(cout):
        for ci in range(cin):
            for ky in range(kh):
                for kx in range(kw):
                    wv = w[co, ci, ky, kx]
                    for oy in range(oh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= height:
                            continue
                        for ox in range(ow):
                            ix = ox * stride + kx - pad
                            if 0 <= ix < width:
                                gx[ci, iy, ix] += wv * gy[co, oy, ox]
    return gx


@njit(cache=True, fastmath=True, nogil=True)
def conv2d_param_grad(x, gy, kh, kw, stride, pad):
    cin, h, wid = x.shape
    cout, oh, ow = gy.shape
    gw = np.zeros((cout, cin, kh, kw))
    gb = np.zeros(cout)
    for co in range(cout):
        acc = 0.0
        for oy in range(oh):
            for ox in range(ow):
                acc += gy[co, oy, ox]
        gb[co] = acc
    for co in range(cout):
        for ci in range(cin):
            for ky in range(kh):
                for kx in range(kw):
                    acc = 0.0
                    for oy in range(oh):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ow):
                            ix = ox * stride + kx - pad
                            if 0 <= ix < wid:
                                acc += gy[co, oy, ox] * x[ci, iy, ix]
                    gw[co, ci, ky, kx] = acc
    return gw, gb


# ---------------------------------------------------------------------------
# bilinear 2x upsampling (half-pixel centers, clamped borders)
# ---------------------------------------------------------------------------


@njit(cache=True, fastmath=True, nogil=True)
def upsample2x(x):
    c, h, w = x.shape
    y = np.empty((c, 2 * h, 2 * w))
    for ch in range(c):
        for oy in range(2 * h):
            sy = 0.5 * oy - 0.25
            iy0 = int(np.floor(sy))
            wy1 = sy - iy0
            y0 = min(max(iy0, 0), h - 1)
            y1 = min(max(iy0 + 1, 0), h - 1)
            for ox in range(2 * w):
                sx = 0.5 * ox - 0.25
                ix0 = int(np.floor(sx))
                wx1 = sx - ix0
                x0 = min(max(ix0, 0), w - 1)
                x1 = min(max(ix0 + 1, 0), w - 1)
                y[ch, oy, ox] = ((1.0 - wy1) * (1.0 - wx1) * x[ch, y0, x0]
                                 + (1.0 - wy1) * wx1 * x[ch, y0, x1]
                                 + wy1 * (1.0 - wx1) * x[ch, y1, x0]
                                 + wy1 * wx1 * x[ch, y1, x1])
    return y


@njit(cache=True, fastmath=True, nogil=True)
def upsample2x_grad(gy):
    c, h2, w2 = gy.shape
    h, w = h2 // 2, w2 // 2
    gx = np.zeros((c, h, w))
    for ch in range(c):
        for oy in range(h2):
            sy = 0.5 * oy - 0.25
            iy0 = int(np.floor(sy))
            wy1 = sy - iy0
            y0 = min(max(iy0, 0), h - 1)
            y1 = min(max(iy0 + 1, 0), h - 1)
            for ox in range(w2):
                sx = 0.5 * ox - 0.25
                ix0 = int(np.floor(sx))
                wx1 = sx - ix0
                x0 = min(max(ix0, 0), w - 1)
                x1 = min(max(ix0 + 1, 0), w - 1)
                g = gy[ch, oy, ox]
                gx[ch, y0, x0] += (1.0 - wy1) * (1.0 - wx1) * g
                gx[ch, y0, x1] += (1.0 - wy1) * wx1 * g
                gx[ch, y1, x0] += wy1 * (1.0 - wx1) * g
                gx[ch, y1, x1] += wy1 * wx1 * g
    return gx


# ---------------------------------------------------------------------------
# connected components (8-connectivity, two-pass union-find)
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@njit(cache=True, nogil=True)
def label_components(mask):
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    parent = np.zeros(h * w // 2 + 2, dtype=np.int32)
    neigh = np.empty(4, dtype=np.int32)
    nxt = 1
    for r in range(h):
        for c in range(w):
            if mask[r, c] == 0:
                continue
            nn = 0
            if c > 0 and mask[r, c - 1] != 0:
                neigh[nn] = labels[r, c - 1]
                nn += 1
            if r > 0:
                if mask[r - 1, c] != 0:
                    neigh[nn] = labels[r - 1, c]
                    nn += 1
                if c > 0 and mask[r - 1, c - 1] != 0:
                    neigh[nn] = labels[r - 1, c - 1]
                    nn += 1
                if c + 1 < w and mask[r - 1, c + 1] != 0:
                    neigh[nn] = labels[r - 1, c + 1]
                    nn += 1
            if nn == 0:
                parent[nxt] = nxt
                labels[r, c] = nxt
                nxt += 1
            else:
                m = _find(parent, neigh[0])
                for k in range(1, nn):
                    rt = _find(parent, neigh[k])
                    if rt < m:
                        m = rt
                labels[r, c] = m
                for k in range(nn):
                    rt = _find(parent, neigh[k])
                    parent[rt] = m
    remap = np.zeros(nxt, dtype=np.int32)
    count = 0
    for r in range(h):
        for c in range(w):
            if labels[r, c] != 0:
                root = _find(parent, labels[r, c])
                if remap[root] == 0:
                    count += 1
                    remap[root] = count
                labels[r, c] = remap[root]
    return labels, count


# ---------------------------------------------------------------------------
# exact squared euclidean distance transform
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def edt_squared(mask):
    h, w = mask.shape
    big = h + w
    cap = float(big * big)
    f = np.empty((h, w))
    # vertical pass: row distance to the nearest False in each column
    for c in range(w):
        run = big
        for r in range(h):
            run = min(run + 1, big) if mask[r, c] != 0 else 0
            f[r, c] = run
        run = big
        for r in range(h - 1, -1, -1):
            run = min(run + 1, big) if mask[r, c] != 0 else 0
            if run < f[r, c]:
                f[r, c] = run
    for r in range(h):
        for c in range(w):
            v = f[r, c] * f[r, c]
            f[r, c] = v if v < cap else cap
    # horizontal pass: lower envelope of parabolas per row
    out = np.empty((h, w))
    v = np.zeros(w, dtype=np.int64)
    z = np.empty(w + 1)
    for r in range(h):
        k = 0
        v[0] = 0
        z[0] = -np.inf
        z[1] = np.inf
        for q in range(1, w):
            s = ((f[r, q] + q * q) - (f[r, v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
            while s <= z[k]:
                k -= 1
                s = ((f[r, q] + q * q) - (f[r, v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = np.inf
        k = 0
        for q in range(w):
            while z[k + 1] < q:
                k += 1
            d = (q - v[k]) ** 2 + f[r, v[k]]
            out[r, q] = d if d < cap else cap
    return out


# ---------------------------------------------------------------------------
# seeded priority-flood watershed
# ---------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _heap_push(hp_cost, hp_age, hp_idx, size, cost, age, idx):
    i = size
    hp_cost[i] = cost
    hp_age[i] = age
    hp_idx[i] = idx
    while i > 0:
        p = (i - 1) >> 1
        if hp_cost[i] < hp_cost[p] or (hp_cost[i] == hp_cost[p] and hp_age[i] < hp_age[p]):
            hp_cost[i], hp_cost[p] = hp_cost[p], hp_cost[i]
            hp_age[i], hp_age[p] = hp_age[p], hp_age[i]
            hp_idx[i], hp_idx[p] = hp_idx[p], hp_idx[i]
            i = p
        else:
            break
    return size + 1


@njit(cache=True, nogil=True)
def _heap_pop(hp_cost, hp_age, hp_idx, size):
    top = hp_idx[0]
    size -= 1
    hp_cost[0] = hp_cost[size]
    hp_age[0] = hp_age[size]
    hp_idx[0] = hp_idx[size]
    i = 0
    while True:
        l = 2 * i + 1
        r = l + 1
        best = i
        if l < size and (hp_cost[l] < hp_cost[best]
                         or (hp_cost[l] == hp_cost[best] and hp_age[l] < hp_age[best])):
            best = l
        if r < size and (hp_cost[r] < hp_cost[best]
                         or (hp_cost[r] == hp_cost[best] and hp_age[r] < hp_age[best])):
            best = r
        if best == i:
            break
        hp_cost[i], hp_cost[best] = hp_cost[best], hp_cost[i]
        hp_age[i], hp_age[best] = hp_age[best], hp_age[i]
        hp_idx[i], hp_idx[best] = hp_idx[best], hp_idx[i]
        i = best
    return size, top


@njit(cache=True, nogil=True)
def watershed_flood(cost, domain, seed_rows, seed_cols):
    h, w = cost.shape
    labels = np.zeros((h, w), dtype=np.int32)
    cap = h * w + len(seed_rows) + 1
    hp_cost = np.empty(cap)
    hp_age = np.empty(cap, dtype=np.int64)
    hp_idx = np.empty(cap, dtype=np.int64)
    size = 0
    age = 0
    for k in range(len(seed_rows)):
        r, c = seed_rows[k], seed_cols[k]
        labels[r, c] = k + 1
        size = _heap_push(hp_cost, hp_age, hp_idx, size, cost[r, c], age, r * w + c)
        age += 1
    while size > 0:
        size, flat = _heap_pop(hp_cost, hp_age, hp_idx, size)
        r = flat // w
        c = flat % w
        lab = labels[r, c]
        for dr in range(-1, 2):
            for dc in range(-1, 2):
                if dr == 0 and dc == 0:
                    continue
                nr, nc = r + dr, c + dc
                if 0 <= nr < h and 0 <= nc < w and domain[nr, nc] != 0 and labels[nr, nc] == 0:
                    labels[nr, nc] = lab
                    size = _heap_push(hp_cost, hp_age, hp_idx, size,
                                      cost[nr, nc], age, nr * w + nc)
                    age += 1
    return labels
