"""
Aligning landmark frames
========================

Least-squares similarity and affine fits between two point sets, and the
landmark distance used to score reconstructions.
"""

import numpy as np

from avtok.geometry import (SimilarityTransform, apply_transform, fit_affine, fit_residual,
                            fit_similarity, lmd)
from avtok.landmarks import template_face

pts = template_face().reshape(-1, 2).astype(np.float64)

# a known transform is recovered exactly from noiseless points
true = SimilarityTransform(1.3, 0.4, 0.1, -0.2)
moved = apply_transform(pts, true)
fit = fit_similarity(pts, moved)
print("true", true.to_dict())
print("fit ", {k: round(v, 6) for k, v in fit.to_dict().items()})

# with noise the residual reflects the perturbation
rng = np.random.default_rng(0)
noisy = moved + rng.normal(scale=0.01, size=moved.shape)
print("similarity residual", fit_residual(pts, noisy, fit_similarity(pts, noisy)))
print("affine residual    ", fit_residual(pts, noisy, fit_affine(pts, noisy)))

# LMD between the clean and noisy frame, in coordinate units
print("lmd", lmd(moved.reshape(1, -1), noisy.reshape(1, -1)))
