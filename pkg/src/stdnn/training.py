"""Region-consistency loss, exact gradients through the PDE layers, SGD."""
from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .descriptor import (DescriptorNet, ForwardTrace, LayerWeights, SystemCache, forward_vectors,
                         preprocess_vectors, _rgb)
from .poisson import TRAIN_TOL, SolverOptions
from .raster import as_field, as_labels, as_mask, downsample, downsample_labels, relabel

log = logging.getLogger(__name__)

TRAIN_SIZE = 32


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class LossBreakdown:
    consistency: float
    discrimination: float  # sum over ordered pairs i != j of |a_i - a_j|^2
    total: float
    region_means: np.ndarray  # (N, K)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.02
    epochs: int = 150
    downsample_factor: int | None = None  # None: smallest factor giving max(H, W) <= 32
    batch: int = 4
    seed: int = 0
    momentum: float = 0.0
    tolerance: float = TRAIN_TOL
    solver: str = "direct"
    threads: int = 1

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.downsample_factor is not None and self.downsample_factor < 1:
            raise ValueError("downsample_factor must be >= 1")


# loss ----------------------------------------------------------------------

def _region_ids(labels, mask):
    lab = as_labels(labels)
    m = np.ones(lab.shape, bool) if mask is None else as_mask(mask, lab.shape)
    return lab, m


def region_means(F, labels, mask=None) -> np.ndarray:
    """Per-region mean descriptor, one row per label ``0..N-1``."""
    f = as_field(F)
    lab, m = _region_ids(labels, mask)
    vecs = f.reshape(f.shape[0], -1)[:, m.ravel()].T
    return _means(vecs, lab[m])[0]


def _means(vecs: np.ndarray, ids: np.ndarray):
    n_regions = int(ids.max()) + 1 if ids.size else 0
    counts = np.bincount(ids, minlength=n_regions).astype(np.float64)
    if np.any(counts == 0):
        raise ValueError(f"empty region(s) {np.flatnonzero(counts == 0).tolist()}")
    sums = np.zeros((n_regions, vecs.shape[1]))
    np.add.at(sums, ids, vecs)
    return sums / counts[:, None], counts


def loss_vectors(vecs: np.ndarray, ids: np.ndarray) -> tuple[LossBreakdown, np.ndarray]:
    """Loss and its gradient with respect to each descriptor row."""
    a, counts = _means(vecs, ids)
    dev = vecs - a[ids]
    consistency = float(np.sum(np.sum(dev * dev, axis=1) / counts[ids]))
    n = a.shape[0]
    diff = a[:, None, :] - a[None, :, :]
    discrimination = float(np.sum(diff * diff))
    # d/da_i of sum_{i != j} |a_i - a_j|^2 is 4 sum_j (a_i - a_j)
    pull = 4.0 * (n * a - a.sum(axis=0))
    grad = (2.0 * dev - pull[ids]) / counts[ids][:, None]
    return LossBreakdown(consistency, discrimination, consistency - discrimination, a), grad


def loss(F, labels, mask=None) -> LossBreakdown:
    f = as_field(F)
    lab, m = _region_ids(labels, mask)
    vecs = f.reshape(f.shape[0], -1)[:, m.ravel()].T
    return loss_vectors(vecs, lab[m])[0]


# gradients ----------------------------------------------------------------------

@dataclass
class Sample:
    """One training image prepared for repeated gradient evaluation.

    The PDE domain is cut along ground-truth region boundaries, so every
    region is smoothed independently; weights never touch the features.
    """

    features: np.ndarray
    ids: np.ndarray
    systems: SystemCache
    layer_alpha: float

    @property
    def layer_system(self):
        return self.systems(self.layer_alpha)


def prepare(net: DescriptorNet, image, labels, mask=None, options: SolverOptions | None = None) -> Sample:
    img = _rgb(image)
    lab = as_labels(labels, img.shape[1:])
    m = np.ones(lab.shape, bool) if mask is None else as_mask(mask, lab.shape)
    ids = relabel(lab[m])
    part = np.zeros_like(lab)
    part[m] = ids
    options = options or SolverOptions(TRAIN_TOL, method="direct")
    systems = SystemCache(m, options, part)
    feats = preprocess_vectors(img, systems, net.preprocess)
    return Sample(feats, ids, systems, net.layer_alpha)


def _backward(net: DescriptorNet, trace: ForwardTrace, sample: Sample, g_out: np.ndarray):
    s = trace.output
    g = s * (g_out - np.sum(g_out * s, axis=1, keepdims=True))
    grads = [None] * len(net.layers)
    sys = sample.layer_system
    for k in range(len(net.layers) - 1, -1, -1):
        g_pre = g * (trace.preact[k] > 0)
        grads[k] = (g_pre.T @ trace.smoothed[k], g_pre.sum(axis=0))
        if k > 0:
            # cotangent of T[y_{k-1}] pulled through the symmetric solve
            g = sys.solve_vectors(g_pre @ net.layers[k].weight)
    return grads


def sample_gradients(net: DescriptorNet, sample: Sample):
    trace = forward_vectors(net, sample.features, sample.layer_system, keep=True)
    breakdown, g_out = loss_vectors(trace.output, sample.ids)
    return breakdown, _backward(net, trace, sample, g_out)


def gradients(net: DescriptorNet, image, mask, labels, options: SolverOptions | None = None):
    """Loss breakdown and ``[(dL/dW_k, dL/db_k), ...]`` for every layer."""
    return sample_gradients(net, prepare(net, image, labels, mask, options))


def vjp(net: DescriptorNet, sample: Sample, cotangent: np.ndarray):
    """Pull a cotangent on the descriptor rows ``(n, K)`` back to the weights."""
    trace = forward_vectors(net, sample.features, sample.layer_system, keep=True)
    return _backward(net, trace, sample, cotangent)


def jvp(net: DescriptorNet, sample: Sample, direction) -> tuple[np.ndarray, np.ndarray]:
    """Forward-mode derivative of the descriptor along a weight direction.

    `direction` is ``[(dW_k, db_k), ...]``.  Tangents are pushed through
    each smoothing layer by solving the PDE with the tangent as input.
    Returns ``(F, dF)`` on the region's unknowns.
    """
    sys = sample.layer_system
    y = sample.features
    dy = np.zeros_like(y)
    for layer, (dw, db) in zip(net.layers, direction):
        t = sys.solve_vectors(y)
        dt = sys.solve_vectors(dy)
        z = t @ layer.weight.T + layer.bias
        dz = dt @ layer.weight.T + t @ np.asarray(dw).T + np.asarray(db)
        active = z > 0
        y = np.where(active, z, 0.0)
        dy = np.where(active, dz, 0.0)
    e = np.exp(y - y.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)
    ds = s * (dy - np.sum(s * dy, axis=1, keepdims=True))
    return s, ds


def dot_product_test(net: DescriptorNet, sample: Sample, seed=0) -> float:
    """Relative mismatch of ``<J v, u>`` and ``<v, J^T u>`` for random `v`, `u`."""
    rng = np.random.default_rng(seed)
    v = [(rng.standard_normal(layer.weight.shape), rng.standard_normal(layer.bias.shape)) for layer in net.layers]
    s, ds = jvp(net, sample, v)
    u = rng.standard_normal(s.shape)
    lhs = float(np.sum(ds * u))
    rhs = float(flatten(v) @ flatten(vjp(net, sample, u)))
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)


def flatten(pairs) -> np.ndarray:
    return np.concatenate([np.concatenate([np.ravel(w), np.ravel(b)]) for w, b in pairs])


def unflatten(net: DescriptorNet, vec: np.ndarray):
    out, pos = [], 0
    for layer in net.layers:
        nw, nb = layer.weight.size, layer.bias.size
        out.append((vec[pos:pos + nw].reshape(layer.weight.shape), vec[pos + nw:pos + nw + nb]))
        pos += nw + nb
    return out


def net_from_vector(net: DescriptorNet, vec: np.ndarray) -> DescriptorNet:
    return net.with_layers(LayerWeights(w, b) for w, b in unflatten(net, vec))


def sample_loss(net: DescriptorNet, sample: Sample) -> LossBreakdown:
    trace = forward_vectors(net, sample.features, sample.layer_system)
    return loss_vectors(trace.output, sample.ids)[0]


@dataclass
class GradCheck:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray

    @property
    def max_rel_error(self) -> float:
        return float(self.rel_error.max()) if self.rel_error.size else 0.0


def finite_difference_check(net: DescriptorNet, sample: Sample, eps: float = 1e-5,
                            floor: float = 1e-10) -> GradCheck:
    """Compare reverse-mode gradients with central differences on every parameter."""
    _, grads = sample_gradients(net, sample)
    g = flatten(grads)
    theta = flatten((layer.weight, layer.bias) for layer in net.layers)
    fd = np.empty_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += eps
        tm[i] -= eps
        fd[i] = (sample_loss(net_from_vector(net, tp), sample).total
                 - sample_loss(net_from_vector(net, tm), sample).total) / (2 * eps)
    rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    return GradCheck(g, fd, rel)


# training loop -------------------------------------------------------------

def training_factor(shape, size: int = TRAIN_SIZE) -> int:
    return max(1, int(np.ceil(max(shape) / size)))


@dataclass
class TrainResult:
    net: DescriptorNet
    history: list = field(default_factory=list)  # (epoch, consistency, discrimination, total)
    downsample_factor: int = 1


def train(net: DescriptorNet, dataset, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Plain (optionally momentum) SGD on the mean batch loss.

    `dataset` is a sequence of ``(image, labels)`` pairs.  Images are
    block-mean downsampled so the larger side is at most 32 pixels unless
    ``cfg.downsample_factor`` is given.
    """
    dataset = list(dataset)
    if not dataset:
        raise ValueError("training needs at least one (image, labels) pair")
    opts = SolverOptions(cfg.tolerance, method=cfg.solver)
    factor = cfg.downsample_factor or training_factor(_rgb(dataset[0][0]).shape[1:])
    samples = []
    for image, labels in dataset:
        img = downsample(_rgb(image), factor)
        lab = downsample_labels(labels, factor)
        samples.append(prepare(net, img, lab, None, opts))

    rng = np.random.default_rng(cfg.seed)
    theta = flatten((layer.weight, layer.bias) for layer in net.layers)
    velocity = np.zeros_like(theta)
    history = []
    pool = ThreadPoolExecutor(cfg.threads) if cfg.threads > 1 else None
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(len(samples))
            totals = np.zeros(3)
            for start in range(0, len(order), cfg.batch):
                batch = [samples[i] for i in order[start:start + cfg.batch]]
                current = net_from_vector(net, theta)
                if pool is None:
                    results = [sample_gradients(current, s) for s in batch]
                else:
                    results = list(pool.map(lambda s: sample_gradients(current, s), batch))
                grad = np.zeros_like(theta)
                for breakdown, grads in results:
                    if not np.isfinite(breakdown.total):
                        raise TrainingDiverged(f"loss became {breakdown.total} at epoch {epoch}")
                    totals += (breakdown.consistency, breakdown.discrimination, breakdown.total)
                    grad += flatten(grads)
                grad /= len(batch)
                if not np.all(np.isfinite(grad)):
                    raise TrainingDiverged(f"non-finite gradient at epoch {epoch}")
                velocity = cfg.momentum * velocity - cfg.learning_rate * grad
                theta = theta + velocity
            mean = totals / len(samples)
            history.append((epoch, *map(float, mean)))
            if epoch == 1 or epoch % 50 == 0:
                log.info("epoch %d consistency %.5f discrimination %.5f total %.5f", epoch, *mean)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(net_from_vector(net, theta), history, factor)


def write_history(path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "consistency", "discrimination", "total"])
        for row in history:
            writer.writerow([row[0], *(repr(float(v)) for v in row[1:])])
