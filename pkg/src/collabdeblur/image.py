"""Image and kernel primitives shared across the toolkit.

Images are float64 arrays of shape (H, W, C) with C in {1, 3} and a
nominal [0, 1] intensity range (degraded values may leave the range).
Blur kernels are odd-sized square float64 arrays with nonnegative taps
summing to one.
"""

import numpy as np
from scipy import ndimage
from scipy.signal import correlate2d

from .rng import make_rng

# PSNR is capped so zero-MSE comparisons stay finite in CSV reports.
PSNR_CAP_DB = 99.0

KERNEL_SUM_TOL = 1e-12

BOUNDARY_MODES = {"circular": "wrap", "replicate": "nearest"}


def as_image(data):
    """Coerce `data` to a valid (H, W, C) float64 image.

    2D input is promoted to a single channel. Raises ValueError on
    non-finite values or channel counts other than 1 and 3.
    """
    arr = np.array(data, dtype=np.float64, copy=True)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3:
        raise ValueError(f"image must be 2D or 3D, got shape {arr.shape}")
    if arr.shape[2] not in (1, 3):
        raise ValueError(f"image must have 1 or 3 channels, got {arr.shape[2]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def check_kernel(taps):
    """Validate kernel invariants: odd square support, taps >= 0, sum 1."""
    taps = np.asarray(taps, dtype=np.float64)
    if taps.ndim != 2 or taps.shape[0] != taps.shape[1]:
        raise ValueError(f"kernel must be square, got shape {taps.shape}")
    if taps.shape[0] % 2 == 0 or taps.shape[0] < 1:
        raise ValueError(f"kernel size must be odd and >= 1, got {taps.shape[0]}")
    if not np.all(np.isfinite(taps)):
        raise ValueError("kernel contains non-finite values")
    if np.any(taps < 0):
        raise ValueError("kernel has negative taps")
    if abs(taps.sum() - 1.0) > KERNEL_SUM_TOL:
        raise ValueError(f"kernel must sum to 1, got {taps.sum()!r}")
    return taps


def normalize_kernel(taps):
    """Divide nonnegative taps by their sum; raises on negative taps or zero mass."""
    taps = np.asarray(taps, dtype=np.float64)
    if taps.ndim != 2 or taps.shape[0] != taps.shape[1] or taps.shape[0] % 2 == 0:
        raise ValueError(f"kernel must be odd square, got shape {taps.shape}")
    if np.any(taps < 0):
        raise ValueError("kernel has negative taps; use project_kernel for raw estimates")
    total = taps.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValueError("kernel has non-positive total mass")
    return taps / total


def project_kernel(raw):
    """Project a raw estimate onto valid kernels: clamp negatives, renormalize."""
    raw = np.asarray(raw, dtype=np.float64)
    clipped = np.clip(raw, 0.0, None)
    total = clipped.sum()
    if total <= 0:
        raise ValueError("projected kernel has zero mass")
    return clipped / total


def delta_kernel(size=1):
    """Identity kernel of the given odd size."""
    if size % 2 == 0:
        raise ValueError("kernel size must be odd")
    k = np.zeros((size, size))
    k[size // 2, size // 2] = 1.0
    return k


def convolve(image, kernel, boundary):
    """Convolve each channel of `image` with `kernel`.

    boundary is "circular" (periodic; bit-compatible with the Fourier
    estimator model) or "replicate" (edge values extended). `kernel` is a
    single (S, S) array applied to all channels, or a (C, S, S) stack of
    per-channel kernels.
    """
    image = as_image(image)
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"boundary must be one of {sorted(BOUNDARY_MODES)}, got {boundary!r}")
    mode = BOUNDARY_MODES[boundary]
    kernel = np.asarray(kernel, dtype=np.float64)
    h, w, c = image.shape
    if kernel.ndim == 2:
        kernels = [kernel] * c
    elif kernel.ndim == 3 and kernel.shape[0] == c:
        kernels = list(kernel)
    else:
        raise ValueError(f"kernel must be (S, S) or ({c}, S, S), got {kernel.shape}")
    out = np.empty_like(image)
    for ch, k in enumerate(kernels):
        check_kernel(k)
        if k.shape[0] > h or k.shape[1] > w:
            raise ValueError("kernel exceeds image extent")
        out[:, :, ch] = ndimage.convolve(image[:, :, ch], k, mode=mode)
    return out


def add_gaussian_noise(image, sigma, seed):
    """Add i.i.d. N(0, sigma^2) noise per pixel per channel, deterministically."""
    image = as_image(image)
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    rng = make_rng(seed)
    return image + rng.normal(0.0, sigma, size=image.shape)


def psnr(reference, test, peak=1.0):
    """Peak signal-to-noise ratio in dB, capped at PSNR_CAP_DB for zero MSE."""
    reference = np.asarray(reference, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if reference.shape != test.shape:
        raise ValueError(f"shape mismatch: {reference.shape} vs {test.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be > 0, got {peak}")
    mse = np.mean((reference - test) ** 2)
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB)


def _pad_to_common(k1, k2):
    """Zero-pad the smaller kernel to the larger (odd) support, centered."""
    s = max(k1.shape[0], k2.shape[0])

    def pad(k):
        d = (s - k.shape[0]) // 2
        return np.pad(k, d)

    return pad(k1), pad(k2)


def kernel_similarity(k_true, k_est):
    """Maximum normalized cross-correlation over all integer 2D shifts.

    The two kernels are zero-padded to a common support; the search covers
    every shift where the supports overlap (up to +/- the full support).
    Returns a value in [0, 1]; 1 means identical up to an integer shift.

    Note: this metric is a reconstruction of the usual kernel-similarity
    score used in the blind-deblurring literature (the exact reference
    definition is not restated by its sources).
    """
    k1 = np.asarray(k_true, dtype=np.float64)
    k2 = np.asarray(k_est, dtype=np.float64)
    n1 = np.linalg.norm(k1)
    n2 = np.linalg.norm(k2)
    if n1 == 0 or n2 == 0:
        raise ValueError("kernel similarity undefined for zero-norm kernels")
    k1, k2 = _pad_to_common(k1, k2)
    corr = correlate2d(k1, k2, mode="full")
    return float(corr.max() / (n1 * n2))


def kernel_psnr(k_true, k_est):
    """PSNR between two kernels after aligning at the best cross-correlation shift.

    Peak is the largest tap of the true kernel. Used by the collaboration
    sweep to report support accuracy alongside the similarity score.
    """
    k1 = np.asarray(k_true, dtype=np.float64)
    k2 = np.asarray(k_est, dtype=np.float64)
    k1, k2 = _pad_to_common(k1, k2)
    corr = correlate2d(k1, k2, mode="full")
    s = k1.shape[0]
    di, dj = np.unravel_index(np.argmax(corr), corr.shape)
    # shift of k2 that maximizes overlap with k1
    shift = (di - (s - 1), dj - (s - 1))
    aligned = np.zeros_like(k2)
    src = np.roll(k2, shift, axis=(0, 1))
    aligned[:] = src
    # roll wraps; zero the wrapped-in region
    if shift[0] > 0:
        aligned[: shift[0], :] = 0
    elif shift[0] < 0:
        aligned[shift[0]:, :] = 0
    if shift[1] > 0:
        aligned[:, : shift[1]] = 0
    elif shift[1] < 0:
        aligned[:, shift[1]:] = 0
    return psnr(k1, aligned, peak=float(k1.max()))


def gamma_expand(image, gamma=2.2):
    """Gamma-encoded -> linear intensities (negative values are clipped)."""
    return np.clip(as_image(image), 0.0, None) ** gamma


def gamma_compress(image, gamma=2.2):
    """Linear -> gamma-encoded intensities (negative values are clipped)."""
    return np.clip(as_image(image), 0.0, None) ** (1.0 / gamma)
