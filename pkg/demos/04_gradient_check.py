"""
Checking gradients through the PDE layers
=========================================

Every layer smooths its input by solving a linear system, so the backward
pass solves the same (symmetric) system with the cotangent.  Central
differences on a tiny net confirm it parameter by parameter.
"""
import numpy as np

from stdnn import training
from stdnn.descriptor import DescriptorNet, PreprocessSpec

net = DescriptorNet.initialize((6, 3), PreprocessSpec(scales=(5.0,)), seed=0)
print("input channels:", net.layers[0].in_channels, " parameters:", net.n_params)

rng = np.random.default_rng(0)
labels = np.zeros((8, 8), int)
labels[:, 4:] = 1
sample = training.prepare(net, rng.uniform(size=(3, 8, 8)), labels)

check = training.finite_difference_check(net, sample, eps=1e-5)
worst = np.argsort(check.rel_error)[-3:]
for i in worst:
    print(f"param {i:2d}: analytic {check.analytic[i]: .6e}  numeric {check.numeric[i]: .6e}  "
          f"rel {check.rel_error[i]:.1e}")
print("max relative error:", check.max_rel_error)

# forward-mode and reverse-mode derivatives must be adjoint to each other
print("dot-product test:", training.dot_product_test(net, sample, seed=1))
