"""Region and boundary scores for comparing two partitions of the same image."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .raster import as_labels, relabel

DEFAULT_BOUNDARY_TOL = 2.0


@dataclass(frozen=True)
class ScoreReport:
    gt_covering: float
    rand_index: float
    voi: float
    boundary_f: float

    def row(self) -> list[float]:
        return [self.gt_covering, self.rand_index, self.voi, self.boundary_f]


def _pair(seg, gt, valid=None):
    s = as_labels(seg)
    g = as_labels(gt)
    if s.shape != g.shape:
        raise ValueError(f"label maps differ in shape: {s.shape} vs {g.shape}")
    if valid is not None:
        v = np.asarray(valid, dtype=bool)
        if v.shape != s.shape:
            raise ValueError("valid mask shape differs from label maps")
        s, g = s[v], g[v]
    return relabel(s.ravel()), relabel(g.ravel())


def contingency(seg, gt, valid=None) -> np.ndarray:
    """Joint label histogram, rows indexed by `seg`, columns by `gt`."""
    s, g = _pair(seg, gt, valid)
    if s.size == 0:
        return np.zeros((0, 0))
    table = np.zeros((s.max() + 1, g.max() + 1))
    np.add.at(table, (s, g), 1.0)
    return table


def gt_covering(seg, gt, valid=None) -> float:
    """Area-weighted best IoU of every ground-truth region against `seg`."""
    c = contingency(seg, gt, valid)
    total = c.sum()
    if total == 0:
        return 1.0
    seg_area = c.sum(axis=1)[:, None]
    gt_area = c.sum(axis=0)[None, :]
    iou = c / (seg_area + gt_area - c)
    return float(np.sum(gt_area[0] / total * iou.max(axis=0)))


def _pairs(x):
    return x * (x - 1) / 2.0


def rand_index(seg, gt, valid=None) -> float:
    """Fraction of unordered pixel pairs on which both partitions agree."""
    c = contingency(seg, gt, valid)
    n = c.sum()
    if n < 2:
        return 1.0
    total = _pairs(n)
    same_both = _pairs(c).sum()
    same_seg = _pairs(c.sum(axis=1)).sum()
    same_gt = _pairs(c.sum(axis=0)).sum()
    agree = total + 2 * same_both - same_seg - same_gt
    return float(agree / total)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def variation_of_information(seg, gt, valid=None) -> float:
    """``H(seg | gt) + H(gt | seg)`` in nats."""
    c = contingency(seg, gt, valid)
    n = c.sum()
    if n == 0:
        return 0.0
    p = c / n
    joint = _entropy(p.ravel())
    return max(0.0, 2 * joint - _entropy(p.sum(axis=1)) - _entropy(p.sum(axis=0)))


def boundary_map(labels) -> np.ndarray:
    """Pixels whose right or lower neighbour carries a different label."""
    lab = as_labels(labels)
    b = np.zeros(lab.shape, bool)
    b[:, :-1] |= lab[:, 1:] != lab[:, :-1]
    b[:-1, :] |= lab[1:, :] != lab[:-1, :]
    return b


def _matched(source: np.ndarray, target: np.ndarray, tol: float) -> float:
    if not source.any():
        return 0.0
    if not target.any():
        return 0.0
    dist = ndimage.distance_transform_edt(~target)
    return float(np.mean(dist[source] <= tol + 1e-9))


def boundary_fmeasure(seg, gt, tol: float = DEFAULT_BOUNDARY_TOL) -> float:
    """F-measure of boundary pixels matched within `tol` pixels (Euclidean)."""
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    s, g = as_labels(seg), as_labels(gt)
    if s.shape != g.shape:
        raise ValueError(f"label maps differ in shape: {s.shape} vs {g.shape}")
    bs, bg = boundary_map(s), boundary_map(g)
    if not bs.any() and not bg.any():
        return 1.0
    precision = _matched(bs, bg, tol)
    recall = _matched(bg, bs, tol)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def score(seg, gt, tol: float = DEFAULT_BOUNDARY_TOL) -> ScoreReport:
    return ScoreReport(gt_covering(seg, gt), rand_index(seg, gt), variation_of_information(seg, gt),
                       boundary_fmeasure(seg, gt, tol))
