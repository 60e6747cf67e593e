"""
Training on two textures, then segmenting a new image
=====================================================

Ten 32x32 images, each split by a random line into a horizontal and a
vertical grating with slightly different colours.  Training takes about
a minute on a laptop.
"""
import time

import numpy as np

from stdnn import evalmetrics, segment, synthetic, training
from stdnn.descriptor import DescriptorNet


def show(labels):
    for row in labels[::2]:
        print("".join(".#"[v] for v in row))


data = synthetic.dataset(10, seed=0)
start = time.perf_counter()
result = training.train(DescriptorNet.initialize(seed=0), data, training.TrainConfig())
print(f"trained in {time.perf_counter() - start:.0f} s")
for epoch, cons, disc, total in result.history[::30] + result.history[-1:]:
    print(f"epoch {epoch:3d}  consistency {cons:.2e}  discrimination {disc:.4f}  total {total:.4f}")

# a held-out image from a different seed
image, truth = synthetic.dataset(1, seed=1)[0]
seg = segment.segment(image, result.net, 2)
print(f"{seg.iterations} iterations, energies {np.round(seg.energies[:4], 2)} ...")

print("\nground truth")
show(truth)
# region ids are arbitrary; flip them to match the truth for display
labels = seg.labels if np.mean(seg.labels == truth) >= 0.5 else 1 - seg.labels
print("\nsegmentation")
show(labels)

s = evalmetrics.score(seg.labels, truth)
print(f"\nGT covering {s.gt_covering:.3f}  Rand {s.rand_index:.3f}  VOI {s.voi:.3f}  boundary F {s.boundary_f:.3f}")
