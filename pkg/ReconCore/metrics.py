"""
Image-quality and data-fidelity metrics.

PSNR and SSIM compare magnitudes |x⋆| and |x̂|; the peak M is the maximum
modulus of the ground truth. RDR needs no ground truth.
"""

import math

import numpy as np
from scipy.ndimage import gaussian_filter


def _magnitudes(gt, est):
    gt = np.abs(np.asarray(gt))
    est = np.abs(np.asarray(est))
    if gt.shape != est.shape:
        raise ValueError(f"image shapes differ: {gt.shape} vs {est.shape}")
    return gt, est


def psnr(gt, est):
    """
    Peak signal-to-noise ratio 10·log10(N·M² / ‖|x⋆| − |x̂|‖²) in dB.

    Returns ``math.inf`` when the magnitudes are identical.
    """
    gt, est = _magnitudes(gt, est)
    err = float(np.sum((gt - est) ** 2))
    if err == 0.0:
        return math.inf
    peak = float(gt.max())
    return 10.0 * math.log10(gt.size * peak ** 2 / err)


def ssim_global(gt, est):
    """
    Whole-image SSIM of the magnitudes.

    ((2μ⋆μ̂ + c₁)(2σ_c + c₂)) / ((μ⋆² + μ̂² + c₁)(σ⋆² + σ̂² + c₂)) with
    c₁ = (0.01·M)², c₂ = (0.03·M)².
    """
    gt, est = _magnitudes(gt, est)
    peak = float(gt.max())
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_gt, mu_est = gt.mean(), est.mean()
    var_gt, var_est = gt.var(), est.var()
    cov = np.mean((gt - mu_gt) * (est - mu_est))
    num = (2 * mu_gt * mu_est + c1) * (2 * cov + c2)
    den = (mu_gt ** 2 + mu_est ** 2 + c1) * (var_gt + var_est + c2)
    return float(num / den)


def ssim_windowed(gt, est, sigma=1.5):
    """Mean of the locally windowed SSIM map (Gaussian window); for cross-checking only."""
    gt, est = _magnitudes(gt, est)
    peak = float(gt.max())
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_gt = gaussian_filter(gt, sigma)
    mu_est = gaussian_filter(est, sigma)
    var_gt = gaussian_filter(gt * gt, sigma) - mu_gt ** 2
    var_est = gaussian_filter(est * est, sigma) - mu_est ** 2
    cov = gaussian_filter(gt * est, sigma) - mu_gt * mu_est
    ssim_map = ((2 * mu_gt * mu_est + c1) * (2 * cov + c2)) / (
        (mu_gt ** 2 + mu_est ** 2 + c1) * (var_gt + var_est + c2)
    )
    return float(ssim_map.mean())


def ssim(gt, est, windowed=False):
    return ssim_windowed(gt, est) if windowed else ssim_global(gt, est)


def rdr(x_b, r):
    """
    Residual data ratio ‖r‖₂ / ‖x_b‖₂.

    Raises:
        ValueError: If the back-projected image is zero.
    """
    norm_b = float(np.linalg.norm(np.asarray(x_b)))
    if norm_b == 0.0:
        raise ValueError("RDR is undefined for a zero back-projected image")
    return float(np.linalg.norm(np.asarray(r))) / norm_b
