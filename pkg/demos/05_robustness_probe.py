"""
Covariance and deformation robustness of the whole pipeline
===========================================================

A segmentation pipeline S is covariant to a transform T when S[T image]
equals T[S image].  Quarter turns should be (nearly) exact; smooth random
deformations of growing Sobolev norm should degrade agreement gradually.
"""
import numpy as np

from stdnn import probe, segment, synthetic, training
from stdnn.descriptor import DescriptorNet

net = training.train(DescriptorNet.initialize(seed=0), synthetic.dataset(10, seed=0)).net
image, _ = synthetic.dataset(1, seed=1)[0]


def pipeline(x):
    return segment.segment(x, net, 2).labels


for t in (probe.QuarterTurn(1), probe.QuarterTurn(2), probe.Shift(3, -2), probe.Rotation(np.pi / 6)):
    print(f"{type(t).__name__:12s} covariance {probe.covariance_score(pipeline, image, t):.4f}")

# one deformation, measured two ways
d = probe.random_deformation(20.0, seed=0)
v = d.displacement(image.shape[1:])
print("norm^2:", probe.sobolev_norm(d), " largest displacement (px):", np.abs(v).max().round(2))

rows = probe.robustness_sweep(pipeline, image, [0, 10, 20, 40, 80], range(5))
for norm in (0, 10, 20, 40, 80):
    sel = [r.gt_covering for r in rows if r.norm == norm]
    print(f"norm^2 {norm:3d}: agreement {np.mean(sel):.4f} (min {min(sel):.4f})")
