"""Shape-tailored deep descriptors: region-masked Poisson smoothing layers,
training through the PDE solve, and joint region-evolution segmentation."""

__version__ = "0.1.0"
