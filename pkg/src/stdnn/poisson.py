"""Region-masked screened Poisson smoothing.

Solves ``u - alpha * Lap(u) = I`` on a region ``R`` with Neumann boundary
conditions.  With the 4-neighbour stencil restricted to in-region
neighbours, the discrete system for pixel ``p`` reads::

    (1 + alpha * deg(p)) u(p) - alpha * sum_{q ~ p, q in R} u(q) = I(p)

The operator is symmetric positive definite, so the adjoint solve is the
forward solve and the directional derivative with respect to ``I`` is
again a solve.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .raster import as_field, as_mask, as_labels

# (drow, dcol) of the 4-neighbourhood
_OFFSETS = ((-1, 0), (1, 0), (0, -1), (0, 1))

TRAIN_TOL = 1e-10
INFER_TOL = 1e-8


class SolverError(RuntimeError):
    """Iterative solve failed to reach the requested residual."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverOptions:
    """How :func:`solve` treats a :class:`PoissonSystem`.

    ``method`` is ``"cg"`` (matrix-free Jacobi-preconditioned conjugate
    gradients) or ``"direct"`` (sparse LU factorisation, cached on the
    system).  ``max_iterations=None`` means ``10 * n_unknowns``.
    """

    tolerance: float = INFER_TOL
    max_iterations: int | None = None
    method: str = "cg"

    def __post_init__(self):
        if self.method not in ("cg", "direct"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if not self.tolerance > 0:
            raise ValueError("solver tolerance must be positive")


class PoissonSystem:
    """Assembled operator ``A_R`` for one (mask, alpha) pair.

    Treat instances as immutable; every attribute is fixed at assembly.

    Attributes
    ----------
    mask : (H, W) bool array
    alpha : float
    index : (n,) int array
        Flat raster index of each unknown, in row-major order.
    lookup : (H*W,) int array
        Unknown number of each pixel, ``-1`` outside the region.
    neighbors : (n, 4) int array
        In-region 4-neighbours of each unknown; missing ones point at the
        padding slot ``n``.
    degree : (n,) int array
    diagonal : (n,) float array
    options : SolverOptions
    """

    def __init__(self, mask, alpha: float, options: SolverOptions | None = None, partition=None):
        mask = as_mask(mask)
        if not mask.any():
            raise ValueError("cannot assemble a Poisson system on an empty mask")
        alpha = float(alpha)
        if not (alpha >= 0 and np.isfinite(alpha)):
            raise ValueError(f"alpha must be a finite nonnegative number, got {alpha}")
        h, w = mask.shape
        self.mask = mask.copy()
        self.mask.setflags(write=False)
        self.alpha = alpha
        self.options = options or SolverOptions()
        self.shape = (h, w)
        self.partition = None if partition is None else as_labels(partition, mask.shape).copy()

        self.index = np.flatnonzero(mask)
        n = self.index.size
        self.n = n
        self.lookup = np.full(h * w, -1, dtype=np.int64)
        self.lookup[self.index] = np.arange(n)
        rows, cols = np.divmod(self.index, w)
        part = None if self.partition is None else self.partition.ravel()

        nbrs = np.full((n, 4), n, dtype=np.int64)
        for k, (dr, dc) in enumerate(_OFFSETS):
            rr, cc = rows + dr, cols + dc
            inside = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
            flat = np.where(inside, rr * w + cc, 0)
            q = np.where(inside, self.lookup[flat], -1)
            if part is not None:
                q = np.where(part[flat] == part[self.index], q, -1)
            nbrs[:, k] = np.where(q >= 0, q, n)
        self.neighbors = nbrs
        self.degree = (nbrs < n).sum(axis=1)
        self.diagonal = 1.0 + alpha * self.degree
        for arr in (self.index, self.lookup, self.neighbors, self.degree, self.diagonal):
            arr.setflags(write=False)
        self._lu = None
        if self.options.method == "direct":
            self._lu = splu(self.matrix().tocsc())

    def with_options(self, options: SolverOptions) -> "PoissonSystem":
        return PoissonSystem(self.mask, self.alpha, options, self.partition)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Matrix-free product ``A_R @ x`` for ``x`` of shape ``(n,)`` or ``(n, k)``."""
        x = np.asarray(x, dtype=np.float64)
        vec = x.ndim == 1
        if vec:
            x = x[:, None]
        padded = np.concatenate([x, np.zeros((1, x.shape[1]))], axis=0)
        nb = padded[self.neighbors]  # (n, 4, k)
        y = self.diagonal[:, None] * x - self.alpha * nb.sum(axis=1)
        return y[:, 0] if vec else y

    def matrix(self) -> sp.csr_matrix:
        """Explicit sparse ``A_R`` (used by the direct path and for inspection)."""
        n = self.n
        r = np.repeat(np.arange(n), 4)
        c = self.neighbors.ravel()
        keep = c < n
        off = sp.csr_matrix((np.full(keep.sum(), -self.alpha), (r[keep], c[keep])), shape=(n, n))
        return (sp.diags(self.diagonal) + off).tocsr()

    def gather(self, field: np.ndarray) -> np.ndarray:
        """In-region values of a ``(C, H, W)`` field as an ``(n, C)`` array."""
        return field.reshape(field.shape[0], -1)[:, self.index].T

    def scatter(self, values: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`gather`; pixels outside the region are 0."""
        h, w = self.shape
        out = np.zeros((values.shape[1], h * w))
        out[:, self.index] = values.T
        return out.reshape(values.shape[1], h, w)

    def solve_vectors(self, b: np.ndarray) -> np.ndarray:
        """Solve ``A_R x = b`` for ``b`` of shape ``(n, k)``, column by column."""
        b = np.asarray(b, dtype=np.float64)
        if self.alpha == 0.0:
            return b.copy()
        if self._lu is not None:
            x = self._lu.solve(b)
            res = _relative_residual(self, x, b)
            if np.any(res > self.options.tolerance):
                raise SolverError("direct solve inaccurate", float(res.max()), 0)
            return x
        return _pcg(self, b)


def _relative_residual(sys: PoissonSystem, x: np.ndarray, b: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(sys.apply(x) - b, axis=0)
    nb = np.linalg.norm(b, axis=0)
    return np.where(nb > 0, r / np.where(nb > 0, nb, 1.0), r)


def _pcg(sys: PoissonSystem, b: np.ndarray) -> np.ndarray:
    tol = sys.options.tolerance
    maxit = sys.options.max_iterations or 10 * sys.n
    inv_d = 1.0 / sys.diagonal[:, None]
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b, axis=0)
    active = np.flatnonzero(bnorm > 0)
    if active.size == 0:
        return x
    r = b[:, active].copy()
    z = inv_d * r
    p = z.copy()
    rz = np.einsum("ij,ij->j", r, z)
    xa = np.zeros_like(r)
    target = tol * bnorm[active]
    it = 0
    while True:
        rnorm = np.linalg.norm(r, axis=0)
        done = rnorm <= target
        if np.any(done):
            x[:, active[done]] = xa[:, done]
            keep = ~done
            active, r, z, p, rz, xa, target = (
                active[keep], r[:, keep], z[:, keep], p[:, keep], rz[keep], xa[:, keep], target[keep])
        if active.size == 0:
            return x
        if it >= maxit:
            worst = float(np.max(rnorm[~done] / bnorm[active]))
            raise SolverError("conjugate gradients did not converge", worst, it)
        ap = sys.apply(p)
        step = rz / np.einsum("ij,ij->j", p, ap)
        xa += step * p
        r -= step * ap
        z = inv_d * r
        rz_new = np.einsum("ij,ij->j", r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1


def assemble(mask, alpha: float, options: SolverOptions | None = None, partition=None) -> PoissonSystem:
    """Build the Poisson system for `mask` at smoothing scale `alpha`.

    If `partition` (a label map) is given, stencil edges between pixels of
    different labels are dropped as well, which solves every labelled piece
    of the mask as its own independent region in one system.
    """
    return PoissonSystem(mask, alpha, options, partition)


def solve(sys: PoissonSystem, rhs) -> np.ndarray:
    """Smooth every channel of `rhs` within the region; zero outside it."""
    f = as_field(rhs)
    if f.shape[1:] != sys.shape:
        raise ValueError(f"rhs shape {f.shape[1:]} does not match system {sys.shape}")
    return sys.scatter(sys.solve_vectors(sys.gather(f)))


def solve_adjoint(sys: PoissonSystem, cotangent) -> np.ndarray:
    """Pull a cotangent back through :func:`solve`; ``A_R`` is symmetric."""
    return solve(sys, cotangent)


def solve_jvp(sys: PoissonSystem, perturbation) -> np.ndarray:
    """Directional derivative of :func:`solve` along an input perturbation."""
    return solve(sys, perturbation)


def _axis_derivative(u: np.ndarray, valid_f: np.ndarray, valid_b: np.ndarray, axis: int) -> np.ndarray:
    if axis == 2:
        fwd_u = np.pad(u, [(0, 0), (0, 0), (0, 1)])[:, :, 1:]
        bwd_u = np.pad(u, [(0, 0), (0, 0), (1, 0)])[:, :, :-1]
    else:
        fwd_u = np.pad(u, [(0, 0), (0, 1), (0, 0)])[:, 1:, :]
        bwd_u = np.pad(u, [(0, 0), (1, 0), (0, 0)])[:, :-1, :]
    d = np.zeros_like(u)
    both = valid_f & valid_b
    only_f = valid_f & ~valid_b
    only_b = valid_b & ~valid_f
    d[:, both] = 0.5 * (fwd_u[:, both] - bwd_u[:, both])
    d[:, only_f] = fwd_u[:, only_f] - u[:, only_f]
    d[:, only_b] = u[:, only_b] - bwd_u[:, only_b]
    return d


def _linked(mask: np.ndarray, partition, dr: int, dc: int) -> np.ndarray:
    """Pixels of `mask` whose (dr, dc) neighbour is in the same region."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    src = (slice(max(0, -dr), h - max(0, dr)), slice(max(0, -dc), w - max(0, dc)))
    dst = (slice(src[0].start + dr, src[0].stop + dr), slice(src[1].start + dc, src[1].stop + dc))
    link = mask[src] & mask[dst]
    if partition is not None:
        link &= partition[src] == partition[dst]
    out[src] = link
    return out


def region_gradient(u, mask, partition=None) -> tuple[np.ndarray, np.ndarray]:
    """``(du/dx, du/dy)`` using only in-region samples.

    Central differences where both neighbours are in the region, one-sided
    differences where one is missing, zero otherwise.  ``x`` runs along
    columns and ``y`` along rows.  With a `partition`, neighbours carrying a
    different label count as missing.
    """
    f = as_field(u)
    m = as_mask(mask, f.shape[1:])
    part = None if partition is None else as_labels(partition, m.shape)
    dx = _axis_derivative(f, _linked(m, part, 0, 1), _linked(m, part, 0, -1), 2)
    dy = _axis_derivative(f, _linked(m, part, 1, 0), _linked(m, part, -1, 0), 1)
    return dx, dy


def oriented_gradient(u, mask, theta: float, partition=None) -> np.ndarray:
    """``cos(theta) du/dx + sin(theta) du/dy`` inside the region, 0 outside."""
    dx, dy = region_gradient(u, mask, partition)
    c, s = np.cos(theta), np.sin(theta)
    # exact zeros for the axis-aligned angles keep rotated comparisons clean
    c = 0.0 if abs(c) < 1e-15 else c
    s = 0.0 if abs(s) < 1e-15 else s
    return c * dx + s * dy
