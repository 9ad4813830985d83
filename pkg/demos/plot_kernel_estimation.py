"""
Blind kernel estimation
=======================

Estimate the blur kernel of a single image from its internal patch
statistics: a deep linear generator learns to make downscaled patches look
like patches of the blurred image, and the kernel is read off the learned
filter.

This takes a couple of minutes on a CPU. Pass a smaller iteration count as the
first argument for a quick look.
"""

import sys

import matplotlib.pyplot as plt
import numpy as np

from bikadeblur.degradation import convolve
from bikadeblur.estimator import EstimationConfig, estimate_kernel
from bikadeblur.kernels import delta_kernel, kernel_distance, make_anisotropic_gaussian, principal_angle
from bikadeblur.synthetic import dead_leaves

iters = int(sys.argv[1]) if len(sys.argv) > 1 else 1500

# a scale-invariant texture: its patches look alike at every scale
sharp = dead_leaves(512, seed=0)[150:406, 150:406]
truth = make_anisotropic_gaussian(17, 3.0, 1.0, np.pi / 6)
blurred = np.clip(convolve(sharp, truth), 0, 1)

est, report = estimate_kernel(blurred, EstimationConfig(iterations=iters), return_report=True)

d = kernel_distance(est, truth).shift_tolerant
d0 = kernel_distance(delta_kernel(17), truth).shift_tolerant
print(f"distance {d:.4f} (delta kernel: {d0:.4f})")
print(f"orientation {np.degrees(principal_angle(est)):.1f} deg, true 30.0")
print("final losses", report["final_losses"])

fig, axes = plt.subplots(1, 2, figsize=(6, 3))
axes[0].imshow(truth.values, cmap="magma")
axes[0].set_title("true")
axes[1].imshow(est.values, cmap="magma")
axes[1].set_title(f"estimated ({iters} it)")
for ax in axes:
    ax.axis("off")
fig.tight_layout()
fig.savefig("estimated_kernel.png", dpi=120)
