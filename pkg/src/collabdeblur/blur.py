"""Blur synthesis: anisotropic Gaussian kernels, degradation stacks, kernel grids.

Follows the rotated-covariance Gaussian model with midpoint sampling at
integer offsets. Stacks share one kernel with independent noise per
element, which is exactly the degradation the collaborative estimator
and networks assume.
"""

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from .image import add_gaussian_noise, as_image, convolve, normalize_kernel
from .patches import PatchStack
from .rng import STREAM_KERNEL, STREAM_NOISE, STREAM_SAMPLER, make_rng


def min_support(sigma_major, sigma_minor):
    """Smallest odd support for a Gaussian pair of axis sigmas: >= 6*max(sigma)+1."""
    s = int(math.ceil(6.0 * max(sigma_major, sigma_minor) + 1.0))
    return s if s % 2 == 1 else s + 1


@dataclass(frozen=True)
class BlurConfig:
    sigma_major: float
    sigma_minor: float
    theta: float  # radians in [0, 2*pi)
    noise_sigma: float
    support: int

    def __post_init__(self):
        if self.sigma_major <= 0 or self.sigma_minor <= 0:
            raise ValueError("sigmas must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.support % 2 == 0 or self.support < 1:
            raise ValueError(f"support must be odd and >= 1, got {self.support}")


def gaussian_kernel(config):
    """Anisotropic Gaussian taps on the integer grid, normalized to sum 1.

    taps are proportional to exp(-0.5 u^T Sigma^-1 u) where Sigma is the
    diagonal covariance diag(sigma_major^2, sigma_minor^2) rotated by
    theta, evaluated at the offset midpoints (no pixel-area integration).
    """
    c, s = math.cos(config.theta), math.sin(config.theta)
    # Sigma^-1 = R diag(1/sa^2, 1/sb^2) R^T, expanded to quadratic form coefficients
    ia = 1.0 / config.sigma_major**2
    ib = 1.0 / config.sigma_minor**2
    qxx = c * c * ia + s * s * ib
    qyy = s * s * ia + c * c * ib
    qxy = c * s * (ia - ib)
    r = config.support // 2
    dy, dx = np.meshgrid(np.arange(-r, r + 1), np.arange(-r, r + 1), indexing="ij")
    quad = qxx * dx * dx + 2.0 * qxy * dx * dy + qyy * dy * dy
    taps = np.exp(-0.5 * quad)
    return normalize_kernel(taps)


def sample_blur_config(seed, sigma_range, noise_range):
    """Draw a BlurConfig uniformly: sigmas in sigma_range^2, theta in [0, 2pi), noise in noise_range."""
    lo, hi = sigma_range
    nlo, nhi = noise_range
    if lo > hi or nlo > nhi:
        raise ValueError("ranges must be (low, high) with low <= high")
    rng = make_rng(seed, STREAM_SAMPLER)
    sigma_major = rng.uniform(lo, hi)
    sigma_minor = rng.uniform(lo, hi)
    theta = rng.uniform(0.0, 2.0 * math.pi)
    noise = rng.uniform(nlo, nhi)
    return BlurConfig(
        sigma_major=sigma_major,
        sigma_minor=sigma_minor,
        theta=theta,
        noise_sigma=noise,
        support=min_support(sigma_major, sigma_minor),
    )


def make_stack(sharp, config, boundary, seed):
    """Blur every image with the SAME kernel, add independent noise per element.

    Returns (blurry, sharp) PatchStacks. All images must share one shape.
    """
    images = [as_image(im) for im in sharp]
    if not images:
        raise ValueError("need at least one sharp image")
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ValueError(f"stack images must share one shape, got {sorted(shapes)}")
    kernel = gaussian_kernel(config)
    blurry = []
    for n, im in enumerate(images):
        b = convolve(im, kernel, boundary)
        if config.noise_sigma > 0:
            rng = make_rng(seed, STREAM_NOISE, n)
            b = b + rng.normal(0.0, config.noise_sigma, size=b.shape)
        blurry.append(b)
    return PatchStack(np.stack(blurry)), PatchStack(np.stack(images))


@dataclass
class KernelGrid:
    """Field-of-view-indexed kernels with a declared optical center.

    A synthetic stand-in for calibrated lens point-spread functions:
    coords are (u, v) positions on the field of view, center is the
    optical axis location.
    """

    coords: np.ndarray  # (M, 2)
    kernels: List[np.ndarray]
    center: Tuple[float, float]

    def nearest(self, location):
        d = np.sum((self.coords - np.asarray(location, dtype=np.float64)) ** 2, axis=1)
        return self.kernels[int(np.argmin(d))]


def kernel_grid_sample_quadrants(grid, location):
    """Nearest grid kernel at a top-left-quadrant location and its three mirrors.

    Blur from optical aberrations is roughly centrally symmetric, so the
    kernels at the horizontally/vertically mirrored positions are close to
    the one at `location`. Order: top-left, top-right, bottom-left,
    bottom-right.
    """
    u, v = float(location[0]), float(location[1])
    cu, cv = grid.center
    if u > cu or v > cv:
        raise ValueError(f"location {location} outside the top-left quadrant of center {grid.center}")
    mirrors = [(u, v), (u, 2.0 * cv - v), (2.0 * cu - u, v), (2.0 * cu - u, 2.0 * cv - v)]
    return [grid.nearest(m) for m in mirrors]


def motion_kernel(seed, support=19, steps=40, smoothing=0.7):
    """Synthetic motion-like kernel: a smoothed random camera-shake trajectory.

    The trajectory is an auto-correlated random walk rasterized with
    bilinear splatting, then blurred slightly and normalized. Scaled to
    stay inside the requested odd support.
    """
    if support % 2 == 0 or support < 3:
        raise ValueError(f"support must be odd and >= 3, got {support}")
    rng = make_rng(seed, STREAM_KERNEL)
    r = support // 2
    pos = np.zeros(2)
    vel = rng.normal(0.0, 1.0, 2)
    traj = [pos.copy()]
    for _ in range(steps):
        vel = 0.85 * vel + rng.normal(0.0, 0.6, 2)
        pos = pos + 0.45 * vel
        traj.append(pos.copy())
    traj = np.array(traj)
    traj -= traj.mean(axis=0)
    extent = np.abs(traj).max()
    limit = r - 1.5
    if extent > limit and extent > 0:
        traj *= limit / extent
    taps = np.zeros((support, support))
    for p in traj:
        i, j = p[0] + r, p[1] + r
        i0, j0 = int(math.floor(i)), int(math.floor(j))
        fi, fj = i - i0, j - j0
        for di in (0, 1):
            for dj in (0, 1):
                wgt = (fi if di else 1.0 - fi) * (fj if dj else 1.0 - fj)
                if 0 <= i0 + di < support and 0 <= j0 + dj < support:
                    taps[i0 + di, j0 + dj] += wgt
    taps = ndimage.gaussian_filter(taps, smoothing)
    return normalize_kernel(taps)
