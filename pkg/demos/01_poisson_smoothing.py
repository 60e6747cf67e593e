"""
Smoothing inside a region
=========================

The screened Poisson equation u - alpha * Laplace(u) = I, solved only on
the pixels of a region, is a local average that never mixes values across
the region's boundary.
"""
import numpy as np

from stdnn import poisson

# a 1x3 strip with a spike in the middle, small enough to solve by hand
strip = np.ones((1, 3), bool)
sys = poisson.assemble(strip, 1.0)
print(sys.matrix().toarray())
print(poisson.solve(sys, np.array([[[0.0, 3.0, 0.0]]]))[0, 0])   # 0.75 1.5 0.75

# a step edge: left half dark, right half bright
img = np.zeros((1, 12, 12))
img[0, :, 6:] = 1.0

# smoothing over the whole image blurs the edge
full = np.ones((12, 12), bool)
blurred = poisson.solve(poisson.assemble(full, 10.0), img)
print("whole image, row 6:", np.round(blurred[0, 6], 2))

# cutting the stencil along the edge keeps it sharp
halves = (np.arange(12) >= 6).astype(int)[None, :].repeat(12, axis=0)
tailored = poisson.solve(poisson.assemble(full, 10.0, partition=halves), img)
print("two regions, row 6:", np.round(tailored[0, 6], 2))

# larger alpha means a wider average; mass is conserved regardless
rng = np.random.default_rng(0)
mask = rng.uniform(size=(20, 20)) < 0.7
noise = rng.uniform(size=(1, 20, 20))
for alpha in (0.5, 5.0, 50.0):
    u = poisson.solve(poisson.assemble(mask, alpha), noise)
    print(f"alpha {alpha:5.1f}: std {u[0][mask].std():.4f}, "
          f"mass change {abs(u[0][mask].sum() - noise[0][mask].sum()):.1e}")
