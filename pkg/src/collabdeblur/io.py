"""File formats: PNG, plain-text images and kernels, placement sidecars.

The text formats are lossless float64 containers used wherever bit-exact
round trips matter (tile/stitch artifacts, kernels, reports). PNG export
quantizes to 8 or 16 bits and is meant for visual inspection.
"""

import os
import tempfile

import cv2
import numpy as np

from .image import as_image, gamma_compress, gamma_expand, normalize_kernel


def atomic_write_text(path, text):
    """Write text to `path` atomically (temp file in the same dir + rename)."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, payload):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# Text image format: header "H W C", then row-major float64 values.

def write_image_text(path, image):
    image = as_image(image)
    h, w, c = image.shape
    lines = [f"{h} {w} {c}"]
    flat = image.ravel()
    for i in range(0, flat.size, w * c):
        lines.append(" ".join(repr(float(v)) for v in flat[i : i + w * c]))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_image_text(path):
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: expected header 'H W C'")
        h, w, c = (int(v) for v in header)
        values = np.array(f.read().split(), dtype=np.float64)
    if values.size != h * w * c:
        raise ValueError(f"{path}: expected {h * w * c} values, got {values.size}")
    return as_image(values.reshape(h, w, c))


# Kernel text format: first line S, then S x S row-major floats; normalized on load.

def write_kernel_text(path, taps):
    taps = np.asarray(taps, dtype=np.float64)
    s = taps.shape[0]
    lines = [str(s)]
    for row in taps:
        lines.append(" ".join(repr(float(v)) for v in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_kernel_text(path):
    with open(path) as f:
        s = int(f.readline())
        values = np.array(f.read().split(), dtype=np.float64)
    if values.size != s * s:
        raise ValueError(f"{path}: expected {s * s} taps, got {values.size}")
    return normalize_kernel(values.reshape(s, s))


def write_png(path, image, bits=8, gamma_encode=False, gamma=2.2):
    """Quantize a [0, 1] image to an 8- or 16-bit PNG.

    With gamma_encode the linear image is gamma-compressed before
    quantization (values are clipped to [0, 1] either way).
    """
    image = as_image(image)
    if bits not in (8, 16):
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    if gamma_encode:
        image = gamma_compress(image, gamma)
    peak = 255 if bits == 8 else 65535
    dtype = np.uint8 if bits == 8 else np.uint16
    q = np.round(np.clip(image, 0.0, 1.0) * peak).astype(dtype)
    if q.shape[2] == 1:
        q = q[:, :, 0]
    else:
        q = q[:, :, ::-1]  # cv2 expects BGR
    ok, buf = cv2.imencode(".png", q)
    if not ok:
        raise IOError(f"failed to encode PNG for {path}")
    atomic_write_bytes(path, buf.tobytes())


def read_png(path, gamma_decode=False, gamma=2.2):
    """Load a PNG as a float64 image in [0, 1] (optionally gamma-expanded)."""
    raw = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise IOError(f"cannot read PNG: {path}")
    peak = 255.0 if raw.dtype == np.uint8 else 65535.0
    arr = raw.astype(np.float64) / peak
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[:, :, :3]
        arr = arr[:, :, ::-1]  # BGR -> RGB
    image = as_image(arr)
    if gamma_decode:
        image = gamma_expand(image, gamma)
    return image


def read_image(path):
    """Dispatch on extension: .png via read_png, anything else as text."""
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        return read_png(path)
    return read_image_text(path)


# Placement sidecar: one "top left height width" line per patch.

def write_placements(path, placements):
    lines = [f"{p.top} {p.left} {p.height} {p.width}" for p in placements]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_placements(path):
    from .patches import Placement

    placements = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            t, l, h, w = (int(v) for v in line.split())
            placements.append(Placement(t, l, h, w))
    return placements


# Kernel grid manifest: one "u v path" line per grid node; paths are
# relative to the manifest location.

def write_kernel_grid(manifest_path, coords, kernel_paths):
    lines = [f"{u!r} {v!r} {p}" for (u, v), p in zip(coords, kernel_paths)]
    atomic_write_text(manifest_path, "\n".join(lines) + "\n")


def read_kernel_grid(manifest_path, center=None):
    """Load a kernel grid manifest into a KernelGrid.

    center defaults to the midpoint of the coordinate bounding box.
    """
    from .blur import KernelGrid

    base = os.path.dirname(os.path.abspath(manifest_path))
    coords = []
    kernels = []
    with open(manifest_path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            u, v, rel = line.split(maxsplit=2)
            coords.append((float(u), float(v)))
            kernels.append(read_kernel_text(os.path.join(base, rel)))
    if not coords:
        raise ValueError(f"{manifest_path}: empty kernel grid manifest")
    coords = np.array(coords)
    if center is None:
        center = tuple((coords.min(axis=0) + coords.max(axis=0)) / 2.0)
    return KernelGrid(coords=coords, kernels=kernels, center=center)
