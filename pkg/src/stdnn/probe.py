"""Covariance and deformation-robustness probes for segmentation pipelines.

A *pipeline* is any deterministic callable ``image -> label map``.  A
*transform* acts on images (returning the transformed image and a mask of
pixels that have source data) and on label maps, so that::

    covariance_score = gt_covering(S[T image], T[S image])  on valid pixels
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .evalmetrics import gt_covering, rand_index
from .raster import as_field, as_labels, as_mask

DEFAULT_MODES = 10


# deformations -------------------------------------------------------------

@dataclass(frozen=True)
class DeformationField:
    """Truncated Fourier series displacement ``v(x) = sum_k a_k exp(2 pi i k.x)``.

    ``coefficients`` has shape ``(2, 2N+1, 2N+1)``: displacement component
    (x then y), then ``k_y`` and ``k_x`` from ``-N`` to ``N``.  ``x`` ranges
    over ``[0, 1)^2``; displacements are measured in pixels.
    """

    coefficients: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.coefficients, dtype=np.complex128)
        if a.ndim != 3 or a.shape[0] != 2 or a.shape[1] != a.shape[2] or a.shape[1] % 2 != 1:
            raise ValueError(f"bad coefficient array shape {a.shape}")
        object.__setattr__(self, "coefficients", a)

    @property
    def n_max(self) -> int:
        return (self.coefficients.shape[1] - 1) // 2

    @classmethod
    def zero(cls, n_max: int = DEFAULT_MODES) -> "DeformationField":
        return cls(np.zeros((2, 2 * n_max + 1, 2 * n_max + 1), complex))

    def is_real(self, tol: float = 1e-12) -> bool:
        a = self.coefficients
        return bool(np.allclose(a, np.conj(a[:, ::-1, ::-1]), atol=tol, rtol=0))

    def displacement(self, shape) -> np.ndarray:
        """``(2, H, W)`` array of (dx, dy) in pixels at ``x = (col / W, row / H)``."""
        h, w = shape
        k = np.arange(-self.n_max, self.n_max + 1)
        ex = np.exp(2j * np.pi * np.outer(k, np.arange(w) / w))  # (K, W)
        ey = np.exp(2j * np.pi * np.outer(np.arange(h) / h, k))  # (H, K)
        return np.real(np.einsum("hk,ckl,lw->chw", ey, self.coefficients, ex))

    def scaled(self, c: float) -> "DeformationField":
        return DeformationField(self.coefficients * c)


def _mode_weights(n_max: int) -> np.ndarray:
    k = np.arange(-n_max, n_max + 1)
    ksq = k[:, None] ** 2 + k[None, :] ** 2
    w = ksq.astype(np.float64)
    w[n_max, n_max] = 1.0
    return w


def sobolev_norm(d: DeformationField, squared: bool = True) -> float:
    """``|a_0|^2 + sum_{k != 0} |k|^2 |a_k|^2`` summed over both components."""
    val = float(np.sum(_mode_weights(d.n_max) * np.abs(d.coefficients) ** 2))
    return val if squared else float(np.sqrt(val))


def _norm_from_samples(d: DeformationField) -> float:
    """The same norm recovered from a sampled field through the DFT."""
    m = 4 * d.n_max + 4
    v = d.displacement((m, m))
    spec = np.fft.fftshift(np.fft.fft2(v), axes=(1, 2)) / (m * m)
    c = m // 2
    a = spec[:, c - d.n_max:c + d.n_max + 1, c - d.n_max:c + d.n_max + 1]
    return float(np.sum(_mode_weights(d.n_max) * np.abs(a) ** 2))


def random_deformation(target_norm: float, n_max: int = DEFAULT_MODES, seed=None) -> DeformationField:
    """Random smooth real deformation whose squared Sobolev norm equals `target_norm`.

    Coefficients are complex Gaussians damped by ``1 / (1 + |k|^2)`` and
    made conjugate-symmetric, then rescaled.
    """
    if target_norm < 0:
        raise ValueError("target norm must be nonnegative")
    if target_norm == 0:
        return DeformationField.zero(n_max)
    rng = np.random.default_rng(seed)
    size = 2 * n_max + 1
    raw = rng.standard_normal((2, size, size)) + 1j * rng.standard_normal((2, size, size))
    raw /= 1.0 + _mode_weights(n_max)
    sym = 0.5 * (raw + np.conj(raw[:, ::-1, ::-1]))
    d = DeformationField(sym)
    d = d.scaled(np.sqrt(target_norm / sobolev_norm(d)))
    parseval = _norm_from_samples(d)
    if abs(parseval - target_norm) > 1e-9 * max(1.0, target_norm):
        raise AssertionError(f"Parseval check failed: {parseval} vs {target_norm}")
    return d


def _sample(field: np.ndarray, rows: np.ndarray, cols: np.ndarray, order: int) -> np.ndarray:
    coords = np.stack([rows, cols])
    return np.stack([ndimage.map_coordinates(ch, coords, order=order, mode="nearest") for ch in field])


def warp(image, d: DeformationField) -> np.ndarray:
    """Backward warp ``out(x) = image(x + v(x))``; bilinear, border clamped."""
    f = as_field(image)
    return _warp(f, d, order=1)


def _warp(f: np.ndarray, d: DeformationField, order: int) -> np.ndarray:
    h, w = f.shape[1:]
    v = d.displacement((h, w))
    rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
    return _sample(f, rows + v[1], cols + v[0], order)


def _inside(rows, cols, shape) -> np.ndarray:
    h, w = shape
    return (rows >= 0) & (rows <= h - 1) & (cols >= 0) & (cols <= w - 1)


# transforms -------------------------------------------------------------

class Transform:
    """Acts on images and label maps in the same geometric way."""

    def image(self, image) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError

    def labels(self, labels) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Identity(Transform):
    def image(self, image):
        f = as_field(image)
        return f.copy(), np.ones(f.shape[1:], bool)

    def labels(self, labels):
        return as_labels(labels).copy()


@dataclass(frozen=True)
class QuarterTurn(Transform):
    """``np.rot90`` by `k` quarter turns; exact."""

    k: int = 1

    def image(self, image):
        f = np.rot90(as_field(image), self.k, axes=(1, 2)).copy()
        return f, np.ones(f.shape[1:], bool)

    def labels(self, labels):
        return np.rot90(as_labels(labels), self.k).copy()


def _shift2d(a: np.ndarray, dy: int, dx: int, fill) -> np.ndarray:
    out = np.full_like(a, fill)
    h, w = a.shape[-2:]
    src_r = slice(max(0, -dy), min(h, h - dy))
    src_c = slice(max(0, -dx), min(w, w - dx))
    dst_r = slice(max(0, dy), min(h, h + dy))
    dst_c = slice(max(0, dx), min(w, w + dx))
    out[..., dst_r, dst_c] = a[..., src_r, src_c]
    return out


@dataclass(frozen=True)
class Shift(Transform):
    """Integer translation; content moves by ``(dy, dx)``, vacated pixels are invalid."""

    dy: int = 0
    dx: int = 0

    def image(self, image):
        f = as_field(image)
        valid = _shift2d(np.ones(f.shape[1:], bool), self.dy, self.dx, False)
        return _shift2d(f, self.dy, self.dx, 0.0), valid

    def labels(self, labels):
        return _shift2d(as_labels(labels), self.dy, self.dx, 0)


@dataclass(frozen=True)
class Rotation(Transform):
    """Rotation about the image centre by `theta` (counter-clockwise on screen).

    Quarter turns of square images are delegated to :class:`QuarterTurn`;
    other angles are interpolated and lose pixels near the corners.
    """

    theta: float

    def _quarter(self, shape):
        k = self.theta / (np.pi / 2)
        if abs(k - round(k)) < 1e-12 and shape[0] == shape[1]:
            return QuarterTurn(int(round(k)) % 4)
        return None

    def _source(self, shape):
        h, w = shape
        cy, cx = (h - 1) / 2, (w - 1) / 2
        rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
        # screen coordinates have y pointing down
        x, y = cols - cx, cy - rows
        c, s = np.cos(self.theta), np.sin(self.theta)
        xs, ys = c * x + s * y, -s * x + c * y
        return cy - ys, cx + xs

    def image(self, image):
        f = as_field(image)
        q = self._quarter(f.shape[1:])
        if q is not None:
            return q.image(f)
        rows, cols = self._source(f.shape[1:])
        return _sample(f, rows, cols, 1), _inside(rows, cols, f.shape[1:])

    def labels(self, labels):
        lab = as_labels(labels)
        q = self._quarter(lab.shape)
        if q is not None:
            return q.labels(lab)
        rows, cols = self._source(lab.shape)
        return _sample(lab[None].astype(np.float64), rows, cols, 0)[0].round().astype(np.int64)


@dataclass(frozen=True)
class Deformation(Transform):
    field: DeformationField

    def _source(self, shape):
        h, w = shape
        v = self.field.displacement(shape)
        rows, cols = np.mgrid[0:h, 0:w].astype(np.float64)
        return rows + v[1], cols + v[0]

    def image(self, image):
        f = as_field(image)
        rows, cols = self._source(f.shape[1:])
        return _sample(f, rows, cols, 1), _inside(rows, cols, f.shape[1:])

    def labels(self, labels):
        lab = as_labels(labels)
        rows, cols = self._source(lab.shape)
        return _sample(lab[None].astype(np.float64), rows, cols, 0)[0].round().astype(np.int64)


@dataclass(frozen=True)
class Compose(Transform):
    """Apply `first`, then `second`."""

    first: Transform
    second: Transform

    def image(self, image):
        f, v1 = self.first.image(image)
        g, v2 = self.second.image(f)
        carried = self.second.labels(v1.astype(np.int64)).astype(bool)
        return g, v2 & carried

    def labels(self, labels):
        return self.second.labels(self.first.labels(labels))


def rotate_translate(image, mask, theta: float = 0.0, shift=(0, 0)):
    """Rotate (exactly for quarter turns) then translate an image and its mask.

    The returned mask is the transformed mask restricted to pixels that
    received source data.
    """
    f = as_field(image)
    m = as_mask(mask, f.shape[1:])
    t = Compose(Rotation(theta), Shift(*shift))
    out, valid = t.image(f)
    return out, valid & t.labels(m.astype(np.int64)).astype(bool)


# scores -------------------------------------------------------------

def covariance_score(pipeline, image, transform: Transform) -> float:
    """GT covering between ``S[T image]`` and ``T[S image]`` on valid pixels."""
    moved, valid = transform.image(image)
    seg_of_moved = pipeline(moved)
    moved_seg = transform.labels(pipeline(image))
    return gt_covering(seg_of_moved, moved_seg, valid)


@dataclass(frozen=True)
class SweepRow:
    norm: float
    seed: int
    gt_covering: float
    rand_index: float


def robustness_sweep(pipeline, image, norms, seeds, n_max: int = DEFAULT_MODES) -> list[SweepRow]:
    """Agreement between segmentations of the image and of random deformations of it."""
    base = pipeline(image)
    rows = []
    for norm in norms:
        for seed in seeds:
            t = Deformation(random_deformation(norm, n_max, seed))
            moved, valid = t.image(image)
            seg = pipeline(moved)
            ref = t.labels(base)
            rows.append(SweepRow(float(norm), int(seed), gt_covering(seg, ref, valid), rand_index(seg, ref, valid)))
    return rows


def write_sweep(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["norm", "seed", "gt_covering", "rand_index"])
        for r in rows:
            writer.writerow([r.norm, r.seed, repr(r.gt_covering), repr(r.rand_index)])


def write_gnuplot(path, rows) -> None:
    """Whitespace-separated ``norm mean_gt_covering mean_rand_index`` per norm."""
    norms = sorted({r.norm for r in rows})
    with open(path, "w") as fh:
        fh.write("# squared_sobolev_norm gt_covering rand_index\n")
        for n in norms:
            sel = [r for r in rows if r.norm == n]
            fh.write(f"{n} {np.mean([r.gt_covering for r in sel])} {np.mean([r.rand_index for r in sel])}\n")
