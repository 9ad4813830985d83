"""
PSNR and SSIM
=============

Both metrics on a ladder of blur strengths, plus a comparison of our SSIM with
scikit-image's on the same luma channel.
"""

import numpy as np
from skimage.metrics import structural_similarity

from bikadeblur.degradation import convolve
from bikadeblur.imageio import luma
from bikadeblur.kernels import make_isotropic_gaussian
from bikadeblur.metrics import psnr, ssim
from bikadeblur.synthetic import dead_leaves

sharp = dead_leaves(128, seed=1)
print(f"{'sigma':>5}  {'PSNR':>7}  {'SSIM':>6}")
for sigma in (0.5, 1, 2, 3, 4):
    b = convolve(sharp, make_isotropic_gaussian(17, sigma))
    print(f"{sigma:5.1f}  {psnr(b, sharp):7.2f}  {ssim(b, sharp):6.4f}")

print("identical images:", psnr(sharp, sharp), ssim(sharp, sharp))

b = convolve(sharp, make_isotropic_gaussian(17, 2))
ref = structural_similarity(
    luma(b), luma(sharp), data_range=1.0,
    gaussian_weights=True, sigma=1.5, use_sample_covariance=False,
)
print(f"ours {ssim(b, sharp):.8f}   scikit-image {ref:.8f}")
