"""Blind single-image deblurring: adversarial kernel estimation followed by a
kernel-conditioned restoration network."""

from .degradation import add_noise, convolve, generate_dataset, synthesize_blur, wiener_deconvolve
from .estimator import EstimationConfig, estimate_dataset_kernels, estimate_kernel, extract_kernel
from .kernels import (
    BlurKernel,
    BlurSpec,
    delta_kernel,
    kernel_distance,
    make_anisotropic_gaussian,
    make_default_bank,
    make_isotropic_gaussian,
)
from .metrics import psnr, ssim
from .motion import synthesize_motion_blur
from .network import BIKAnet, NetConfig, adain, reconstruction_loss

__version__ = "0.1.0"
