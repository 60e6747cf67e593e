"""
What a shape-tailored descriptor depends on
===========================================

The descriptor of a region is computed from that region's pixels alone,
and it moves with the region under quarter turns and integer shifts.
"""
from dataclasses import replace

import numpy as np

from stdnn import descriptor as D

net = D.DescriptorNet.initialize(seed=0)
print(net.describe())

rng = np.random.default_rng(1)
img = rng.uniform(size=(3, 24, 24))
mask = np.zeros((24, 24), bool)
mask[4:16, 5:18] = rng.uniform(size=(12, 13)) < 0.85

F = D.forward(net, img, mask)
print("output channels:", F.shape[0], " sums to one inside:", np.allclose(F.sum(0)[mask], 1))

# scribble over everything outside the region: nothing inside changes
other = img.copy()
other[:, ~mask] = rng.uniform(-10, 10, size=(3, (~mask).sum()))
print("bitwise equal inside:", np.array_equal(D.forward(net, other, mask)[:, mask], F[:, mask]))

# shifting image and region together shifts the descriptor
moved = D.forward(net, np.roll(img, (3, 4), axis=(1, 2)), np.roll(mask, (3, 4), axis=(0, 1)))
print("shift error:", np.abs(moved - np.roll(F, (3, 4), axis=(1, 2))).max())

# a quarter turn is exact once the gradient angles turn with the frame
turned = replace(net, preprocess=net.preprocess.rotated(1))
rot = D.forward(turned, np.rot90(img, axes=(1, 2)), np.rot90(mask))
print("quarter turn error (steered):", np.abs(rot - np.rot90(F, axes=(1, 2))).max())

# without steering, the 45 and 135 degree channels swap sign, a small effect
plain = D.forward(net, np.rot90(img, axes=(1, 2)), np.rot90(mask))
print("quarter turn error (fixed angles):", np.abs(plain - np.rot90(F, axes=(1, 2))).max())
