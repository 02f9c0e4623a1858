"""Patch extraction and windowed stitching.

A PatchStack is the unit the collaborative layers consume: N same-shaped
patches assumed to share (approximately) one blur. Stitching blends
overlapping patches back into a full image with a separable triangular
window so seams vanish.
"""

from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np

from .image import as_image

# Triangular windows hit zero at patch borders; the floor keeps border
# patches contributing at the image edge without changing the interior.
WINDOW_FLOOR = 1e-6


class Placement(NamedTuple):
    top: int
    left: int
    height: int
    width: int


@dataclass
class PatchStack:
    """N uniform patches plus (optionally) where they came from."""

    patches: np.ndarray  # (N, H, W, C) float64
    placements: Optional[List[Placement]] = None

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        if self.patches.ndim != 4:
            raise ValueError(f"patches must be (N, H, W, C), got {self.patches.shape}")
        if self.placements is not None and len(self.placements) != self.patches.shape[0]:
            raise ValueError("placements length must match patch count")

    @classmethod
    def from_images(cls, images, placements=None):
        imgs = [as_image(im) for im in images]
        shapes = {im.shape for im in imgs}
        if len(shapes) != 1:
            raise ValueError(f"patches must share one shape, got {sorted(shapes)}")
        return cls(np.stack(imgs), placements)

    @property
    def n(self):
        return self.patches.shape[0]

    @property
    def patch_shape(self):
        return self.patches.shape[1:]

    def __iter__(self):
        return iter(self.patches)


def _axis_positions(limit, patch, stride):
    positions = []
    p = 0
    while p + patch <= limit:
        positions.append(p)
        p += stride
    if positions[-1] + patch < limit:
        positions.append(limit - patch)  # snap the last tile to the border
    return positions


def tile_uniform(image, patch, overlap_frac):
    """Slice an image into a regular grid of overlapping square patches.

    stride = round(patch * (1 - overlap_frac)); the final row/column is
    snapped to the image border so every pixel is covered. Placements are
    recorded for stitching.
    """
    image = as_image(image)
    h, w, _ = image.shape
    if patch > min(h, w):
        raise ValueError(f"patch size {patch} exceeds image extent {h}x{w}")
    if not 0 <= overlap_frac < 1:
        raise ValueError(f"overlap_frac must be in [0, 1), got {overlap_frac}")
    stride = int(round(patch * (1.0 - overlap_frac)))
    if stride < 1:
        raise ValueError(f"overlap {overlap_frac} leaves a stride < 1 for patch {patch}")
    placements = [
        Placement(t, l, patch, patch)
        for t in _axis_positions(h, patch, stride)
        for l in _axis_positions(w, patch, stride)
    ]
    return extract_patches(image, placements)


def extract_patches(image, placements):
    image = as_image(image)
    h, w, _ = image.shape
    patches = []
    for p in placements:
        if p.top < 0 or p.left < 0 or p.top + p.height > h or p.left + p.width > w:
            raise ValueError(f"placement {p} does not fit inside {h}x{w} image")
        patches.append(image[p.top : p.top + p.height, p.left : p.left + p.width])
    return PatchStack(np.stack(patches), list(placements))


def quadrant_symmetric_placements(image_h, image_w, patch, location, center=None):
    """The given top-left-quadrant placement plus its three mirror images.

    `location` is the (top, left) corner of a patch lying entirely in the
    top-left quadrant relative to the optical `center` (row, col), which
    defaults to the image center. Mirrors are reflections about the
    center's horizontal and vertical axes, clamped to the image bounds.
    Order: top-left, top-right, bottom-left, bottom-right.
    """
    if center is None:
        center = (image_h / 2.0, image_w / 2.0)
    cu, cv = float(center[0]), float(center[1])
    top, left = int(location[0]), int(location[1])
    if top < 0 or left < 0 or top + patch > image_h or left + patch > image_w:
        raise ValueError(f"patch at {location} does not fit inside {image_h}x{image_w}")
    if top + patch > cu or left + patch > cv:
        raise ValueError("patch crosses the center lines")

    def clamp(v, hi):
        return int(min(max(v, 0), hi))

    mtop = clamp(round(2.0 * cu - top - patch), image_h - patch)
    mleft = clamp(round(2.0 * cv - left - patch), image_w - patch)
    return [
        Placement(top, left, patch, patch),
        Placement(top, mleft, patch, patch),
        Placement(mtop, left, patch, patch),
        Placement(mtop, mleft, patch, patch),
    ]


def bartlett_window(length):
    """Triangular weights over `length` samples, floored at WINDOW_FLOOR."""
    if length == 1:
        return np.ones(1)
    i = np.arange(length, dtype=np.float64)
    return np.maximum(1.0 - np.abs(2.0 * i / (length - 1) - 1.0), WINDOW_FLOOR)


def stitch(stack, out_h, out_w):
    """Blend a placed PatchStack back into a full (out_h, out_w) image.

    Overlap-add with a separable Bartlett window per patch, then pointwise
    division by the accumulated weight map. Every output pixel must be
    covered by at least one patch.
    """
    if stack.placements is None:
        raise ValueError("stitching requires placements")
    channels = stack.patches.shape[3]
    acc = np.zeros((out_h, out_w, channels))
    weight = np.zeros((out_h, out_w))
    for patch, p in zip(stack.patches, stack.placements):
        if p.top + p.height > out_h or p.left + p.width > out_w:
            raise ValueError(f"placement {p} exceeds output extent {out_h}x{out_w}")
        w2d = np.outer(bartlett_window(p.height), bartlett_window(p.width))
        acc[p.top : p.top + p.height, p.left : p.left + p.width] += patch * w2d[:, :, None]
        weight[p.top : p.top + p.height, p.left : p.left + p.width] += w2d
    if np.any(weight == 0.0):
        raise ValueError("uncovered pixel: placements do not cover the output")
    return acc / weight[:, :, None]
