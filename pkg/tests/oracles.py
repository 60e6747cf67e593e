"""Straight-line reference implementations used as test oracles.

Everything here is written pixel by pixel with dense matrices so that it
shares no code path with the package.
"""
import numpy as np

GRAY = (0.299, 0.587, 0.114)


def dense_operator(mask, alpha, partition=None):
    h, w = mask.shape
    pix = [(r, c) for r in range(h) for c in range(w) if mask[r, c]]
    where = {p: k for k, p in enumerate(pix)}
    a = np.zeros((len(pix), len(pix)))
    for k, (r, c) in enumerate(pix):
        a[k, k] = 1.0
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            q = (r + dr, c + dc)
            if q in where and (partition is None or partition[q] == partition[r, c]):
                a[k, k] += alpha
                a[k, where[q]] -= alpha
    return a, pix


def dense_solve(mask, alpha, rhs, partition=None):
    a, pix = dense_operator(mask, alpha, partition)
    b = np.array([rhs[:, r, c] for r, c in pix])
    x = np.linalg.inv(a) @ b
    out = np.zeros_like(rhs, dtype=float)
    for k, (r, c) in enumerate(pix):
        out[:, r, c] = x[k]
    return out


def gradient(u, mask):
    """Central / one-sided differences on in-region samples, looped per pixel."""
    h, w = mask.shape
    dx = np.zeros((h, w))
    dy = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            if not mask[r, c]:
                continue
            right = c + 1 < w and mask[r, c + 1]
            left = c - 1 >= 0 and mask[r, c - 1]
            down = r + 1 < h and mask[r + 1, c]
            up = r - 1 >= 0 and mask[r - 1, c]
            if right and left:
                dx[r, c] = (u[r, c + 1] - u[r, c - 1]) / 2
            elif right:
                dx[r, c] = u[r, c + 1] - u[r, c]
            elif left:
                dx[r, c] = u[r, c] - u[r, c - 1]
            if down and up:
                dy[r, c] = (u[r + 1, c] - u[r - 1, c]) / 2
            elif down:
                dy[r, c] = u[r + 1, c] - u[r, c]
            elif up:
                dy[r, c] = u[r, c] - u[r - 1, c]
    return dx, dy


def preprocess(image, mask, angles, scales):
    gray = sum(wt * image[k] for k, wt in enumerate(GRAY))
    base = np.concatenate([image, gray[None]])
    chans = []
    for alpha in scales:
        u = dense_solve(mask, alpha, base)
        chans.extend(u)
        dx, dy = gradient(u[3], mask)
        for theta in angles:
            chans.append(np.round(np.cos(theta), 15) * dx + np.round(np.sin(theta), 15) * dy)
    out = np.array(chans)
    out[:, ~mask] = 0
    return out


def forward(layers, layer_alpha, image, mask, angles, scales):
    y = preprocess(image, mask, angles, scales)
    for weight, bias in layers:
        t = dense_solve(mask, layer_alpha, y)
        z = np.einsum("oc,chw->ohw", weight, t) + bias[:, None, None]
        y = np.maximum(z, 0)
    e = np.exp(y - y.max(axis=0))
    s = e / e.sum(axis=0)
    s[:, ~mask] = 0
    return s


def rand_index(a, b):
    """All unordered pixel pairs, O(n^2)."""
    a, b = np.ravel(a), np.ravel(b)
    n = a.size
    agree = 0
    for i in range(n):
        for j in range(i + 1, n):
            agree += (a[i] == a[j]) == (b[i] == b[j])
    return agree / (n * (n - 1) / 2)


def gt_covering(seg, gt):
    total = gt.size
    cover = 0.0
    for g in np.unique(gt):
        rg = gt == g
        best = 0.0
        for s in np.unique(seg):
            rs = seg == s
            best = max(best, (rg & rs).sum() / (rg | rs).sum())
        cover += rg.sum() / total * best
    return cover
