"""Stack-supervised training at toy scale.

Every patch of a stack is supervised individually with an L1 loss after
the collaborative forward pass. The protocol mirrors the synthetic
Gaussian-blur recipe: per stack, one image is chosen, N patches are
cropped from it, flipped/rotated, blurred with a single sampled kernel
and given independent noise. Validation stacks are pre-generated and
frozen per seed so collaborative and single-image models see identical
degradation instances.
"""

import csv
import io as _io
import math
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.signal import fftconvolve

from .blur import BlurConfig, gaussian_kernel, min_support
from .image import as_image, convolve, psnr
from .nn import autodiff as ad
from .nn.unet import build_unet, stack_to_tensor
from .rng import STREAM_EVAL, STREAM_TRAIN, STREAM_VAL, make_rng
from .textures import texture_pool

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 1  # stacks per step
    lr_init: float = 5e-5
    lr_decay: float = 0.5
    decay_every: int = 40000
    lr_floor: float = 1e-6
    stack_n: int = 8
    sigma_range: Tuple[float, float] = (0.3, 2.0)
    noise_range: Tuple[float, float] = (0.5 / 255.0, 2.0 / 255.0)
    seed: int = 0
    patch: int = 64
    boundary: str = "replicate"
    val_stacks: int = 8
    val_stack_size: int = 8  # independent of stack_n so N=1 and N=8 runs share stacks
    val_every: int = 1000
    log_every: int = 100

    def __post_init__(self):
        if not (self.lr_init >= self.lr_floor > 0):
            raise ValueError("need lr_init >= lr_floor > 0")
        if not 0 < self.lr_decay < 1:
            raise ValueError("lr_decay must be in (0, 1)")
        if self.steps < 0 or self.stack_n < 1 or self.batch_size < 1:
            raise ValueError("steps, stack_n and batch_size must be positive")


def stack_l1_loss(pred, target):
    """Mean absolute deviation over every slot and pixel of the stack."""
    target = target if isinstance(target, ad.Tensor) else ad.Tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"loss shape mismatch: {pred.shape} vs {target.shape}")
    return ad.absolute(pred - target).mean()


def lr_schedule(step, config):
    """lr_init * decay^floor(step / decay_every), clamped at lr_floor."""
    lr = config.lr_init * config.lr_decay ** (step // config.decay_every)
    return max(lr, config.lr_floor)


def adam_init(params):
    return {
        "t": 0,
        "m": {k: np.zeros_like(p) for k, p in params.items()},
        "v": {k: np.zeros_like(p) for k, p in params.items()},
    }


def adam_step(params, grads, state, lr, beta1=ADAM_BETA1, beta2=ADAM_BETA2, eps=ADAM_EPS):
    """Standard bias-corrected Adam update; mutates params and state in place."""
    state["t"] += 1
    t = state["t"]
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        m = state["m"][k]
        v = state["v"][k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


def dihedral(patch, code):
    """Apply one of the 8 flip/rot90 symmetries to an (H, W, C) patch."""
    out = np.rot90(patch, code % 4, axes=(0, 1))
    if code >= 4:
        out = out[:, ::-1, :]
    return np.ascontiguousarray(out)


def synthesize_stack(images, rng, patch, stack_n, sigma_range, noise_range, boundary):
    """One training stack: N augmented crops of one image under one blur.

    Returns (blurry, sharp) arrays of shape (N, H, W, C).
    """
    img = images[int(rng.integers(len(images)))]
    h, w, _ = img.shape
    if h < patch or w < patch:
        raise ValueError(f"corpus image {h}x{w} smaller than patch {patch}")
    sigma_major = rng.uniform(*sigma_range)
    sigma_minor = rng.uniform(*sigma_range)
    config = BlurConfig(
        sigma_major=sigma_major,
        sigma_minor=sigma_minor,
        theta=rng.uniform(0.0, 2.0 * math.pi),
        noise_sigma=rng.uniform(*noise_range),
        support=min_support(sigma_major, sigma_minor),
    )
    kernel = gaussian_kernel(config)
    sharp = np.empty((stack_n, patch, patch, img.shape[2]))
    for n in range(stack_n):
        top = int(rng.integers(h - patch + 1))
        left = int(rng.integers(w - patch + 1))
        sharp[n] = dihedral(img[top : top + patch, left : left + patch], int(rng.integers(8)))
    # one batched FFT convolution: the kernel has extent 1 on the stack and
    # channel axes, so patches stay independent; explicit edge/wrap padding
    # realizes the boundary mode
    r = config.support // 2
    pad_mode = {"replicate": "edge", "circular": "wrap"}[boundary]
    padded = np.pad(sharp, ((0, 0), (r, r), (r, r), (0, 0)), mode=pad_mode)
    blurry = fftconvolve(padded, kernel[None, :, :, None], mode="valid")
    if config.noise_sigma > 0:
        blurry += rng.normal(0.0, config.noise_sigma, size=blurry.shape)
    return blurry, sharp


def make_validation_stacks(config, corpus_channels, count=None):
    """Frozen validation set, fixed per seed.

    Stack size is `val_stack_size` regardless of the training stack size,
    so collaborative and single-image runs with the same seed score on
    identical patches and degradations.
    """
    count = count or config.val_stacks
    rng_pool = make_rng(config.seed, STREAM_VAL, 0)
    images = texture_pool(
        int(rng_pool.integers(1 << 31)), 4, height=160, width=160, channels=corpus_channels
    )
    stacks = []
    for i in range(count):
        rng = make_rng(config.seed, STREAM_VAL, 1 + i)
        stacks.append(
            synthesize_stack(
                images, rng, config.patch, config.val_stack_size,
                config.sigma_range, config.noise_range, config.boundary,
            )
        )
    return stacks


def validation_psnr(model, stacks, model_n):
    """Mean PSNR over all patches of the frozen stacks.

    Each stack is fed through the model in chunks of model_n patches
    (model_n = 1 means every patch goes through alone), so the scored
    degradation instances do not depend on model_n.
    """
    scores = []
    for blurry, sharp in stacks:
        total = blurry.shape[0]
        for start in range(0, total, model_n):
            chunk = slice(start, min(start + model_n, total))
            out = model(ad.Tensor(blurry[chunk]), n=chunk.stop - start)
            for i in range(chunk.stop - start):
                scores.append(psnr(sharp[chunk][i], out.data[i]))
    return float(np.mean(scores))


@dataclass
class MetricsRow:
    step: int
    loss: float
    val_psnr: Optional[float] = None


def metrics_to_csv(rows):
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["step", "loss", "val_psnr"])
    for r in rows:
        writer.writerow([r.step, repr(r.loss), "" if r.val_psnr is None else repr(r.val_psnr)])
    return buf.getvalue()


def load_corpus(corpus, channels=1, synthesize=16, size=160):
    """Accept a directory of images, a list of arrays, or None (procedural)."""
    if corpus is None:
        return texture_pool(0xC0FFEE, synthesize, height=size, width=size, channels=channels)
    if isinstance(corpus, (str, os.PathLike)):
        from .io import read_image

        paths = sorted(
            os.path.join(corpus, f)
            for f in os.listdir(corpus)
            if f.lower().endswith((".png", ".txt"))
        )
        if not paths:
            raise ValueError(f"no corpus images found in {corpus}")
        return [read_image(p) for p in paths]
    images = [as_image(im) for im in corpus]
    if not images:
        raise ValueError("empty corpus")
    return images


def train_toy(config, model_config, corpus=None):
    """Train a collaborative model on synthetic Gaussian-blur stacks.

    Returns (model, metrics rows). Deterministic for a fixed (config,
    model_config) pair; validation runs on frozen stacks every
    `val_every` steps and at the final step.
    """
    images = load_corpus(corpus, channels=model_config.in_channels)
    for im in images:
        if im.shape[2] != model_config.in_channels:
            raise ValueError("corpus channels do not match the model")
    model = build_unet(model_config, seed=config.seed)
    params = {k: p.data for k, p in model.named_parameters().items()}
    state = adam_init(params)
    val_stacks = make_validation_stacks(config, model_config.in_channels)
    metrics: List[MetricsRow] = []

    def run_validation(step, loss_value):
        score = validation_psnr(model, val_stacks, model_config.stack_n)
        metrics.append(MetricsRow(step, loss_value, score))

    for step in range(config.steps):
        rng = make_rng(config.seed, STREAM_TRAIN, step)
        batches = [
            synthesize_stack(
                images, rng, config.patch, config.stack_n,
                config.sigma_range, config.noise_range, config.boundary,
            )
            for _ in range(config.batch_size)
        ]
        blurry = np.concatenate([b for b, _ in batches])
        sharp = np.concatenate([s for _, s in batches])
        model.zero_grad()
        pred = model(ad.Tensor(blurry), n=config.stack_n)
        loss = stack_l1_loss(pred, ad.Tensor(sharp))
        loss.backward()
        named = model.named_parameters()
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in named.items()}
        adam_step(params, grads, state, lr_schedule(step, config))
        loss_value = float(loss.data)
        if step % config.log_every == 0:
            metrics.append(MetricsRow(step, loss_value))
        if config.val_every and (step + 1) % config.val_every == 0:
            run_validation(step + 1, loss_value)
    if config.steps == 0:
        metrics.append(
            MetricsRow(0, float("nan"), validation_psnr(model, val_stacks, model_config.stack_n))
        )
    elif metrics[-1].step != config.steps or metrics[-1].val_psnr is None:
        run_validation(config.steps, loss_value)
    return model, metrics


@dataclass(frozen=True)
class EvalSpec:
    """Evaluation protocol: per-sigma isotropic blur at a fixed noise level."""

    sigmas: Tuple[float, ...] = (1.0, 2.0, 3.0, 4.0)
    noise: float = 0.5 / 255.0
    n_images: int = 16
    stack_n: int = 8
    seed: int = 0
    patch: int = 64
    boundary: str = "replicate"


def evaluate(model, spec, corpus=None):
    """Mean restored PSNR per blur level plus the overall average.

    Sets of n_images patches are blurred with an isotropic Gaussian of
    each sigma plus noise, fed through the model in stacks of stack_n
    (remainders as smaller stacks), and scored against the sharp patches.
    Returns a list of (label, psnr) pairs ending with ("average", ...).
    """
    channels = model.config.in_channels
    images = load_corpus(corpus, channels=channels)
    rows = []
    for si, sigma in enumerate(spec.sigmas):
        config = BlurConfig(
            sigma_major=sigma, sigma_minor=sigma, theta=0.0,
            noise_sigma=spec.noise, support=min_support(sigma, sigma),
        )
        kernel = gaussian_kernel(config)
        rng = make_rng(spec.seed, STREAM_EVAL, si)
        sharp = np.empty((spec.n_images, spec.patch, spec.patch, channels))
        blurry = np.empty_like(sharp)
        for i in range(spec.n_images):
            img = images[int(rng.integers(len(images)))]
            h, w, _ = img.shape
            top = int(rng.integers(h - spec.patch + 1))
            left = int(rng.integers(w - spec.patch + 1))
            crop = img[top : top + spec.patch, left : left + spec.patch]
            sharp[i] = crop
            blurry[i] = convolve(crop, kernel, spec.boundary)
            if spec.noise > 0:
                blurry[i] += rng.normal(0.0, spec.noise, size=crop.shape)
        scores = []
        for start in range(0, spec.n_images, spec.stack_n):
            chunk = slice(start, min(start + spec.stack_n, spec.n_images))
            out = model(ad.Tensor(blurry[chunk]), n=chunk.stop - chunk.start)
            for i in range(chunk.stop - chunk.start):
                scores.append(psnr(sharp[chunk][i], out.data[i]))
        rows.append((f"sigma_{sigma:g}", float(np.mean(scores))))
    rows.append(("average", float(np.mean([v for _, v in rows]))))
    return rows


def eval_rows_to_csv(rows):
    """Wide CSV: one column per blur level plus the average (Table-style layout)."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([label for label, _ in rows])
    writer.writerow([repr(v) for _, v in rows])
    return buf.getvalue()
