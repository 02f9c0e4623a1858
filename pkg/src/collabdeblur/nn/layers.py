"""Network building blocks and the stack-pooling collaboration layers.

Feature stacks are laid out channels-last as (B*N, H, W, C): N patches
per batch item, flattened into the leading dimension. A pooling layer
summarizes the N feature maps of each stack into a global map of the
same shape, which a 1x1 merge convolution then folds back into every
slot.
"""

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class Module:
    """Tiny reflective module base: parameters discovered from attributes."""

    def named_parameters(self, prefix=""):
        params = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                params[key] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{key}.{i}."))
        return params

    def parameters(self):
        return list(self.named_parameters().values())

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def parameter_count(self):
        return sum(p.size for p in self.parameters())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def he_uniform(rng, shape, fan_in):
    limit = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, pad=None, bias=True):
        self.stride = stride
        self.pad = kernel_size // 2 if pad is None else pad
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = he_uniform(rng, (kernel_size, kernel_size, in_channels, out_channels), fan_in)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    def forward(self, x):
        return ad.conv2d(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class ConvTranspose2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=2, bias=True):
        self.stride = stride
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = he_uniform(rng, (kernel_size, kernel_size, in_channels, out_channels), fan_in)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True) if bias else None

    def forward(self, x):
        return ad.conv_transpose2d(x, self.weight, self.bias, stride=self.stride)


class LayerNorm(Module):
    """Normalize across the channel axis per sample and spatial location."""

    def __init__(self, in_channels, eps=1e-6):
        self.eps = eps
        self.weight = Tensor(np.ones(in_channels), requires_grad=True)
        self.bias = Tensor(np.zeros(in_channels), requires_grad=True)

    def forward(self, x):
        u = x.mean(axis=-1, keepdims=True)
        centered = x - u
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered / ad.sqrt(var + self.eps)
        return normed * self.weight + self.bias


class LayerScale(Module):
    """Per-channel multiplicative gate, initialized small."""

    def __init__(self, in_channels, init=0.1):
        self.init = init
        if init is not None:
            self.weight = Tensor(init * np.ones(in_channels), requires_grad=True)

    def forward(self, x):
        if self.init is None:
            return x
        return x * self.weight


def split_stack(x, n):
    """(B*N, H, W, C) -> (B, N, H, W, C); validates divisibility."""
    bn, h, w, c = x.shape
    if bn % n:
        raise ValueError(f"leading dim {bn} not divisible by stack size {n}")
    return x.reshape(bn // n, n, h, w, c)


def flatten_stack(x):
    b, n, h, w, c = x.shape
    return x.reshape(b * n, h, w, c)


def pool_max_stack(x, n):
    """Entrywise max over the stack axis, broadcast back to every slot.

    Backward routes the gradient to the first maximal slot on ties.
    """
    x5 = split_stack(x, n)
    pooled = ad.tmax(x5, axis=1, keepdims=True)
    return flatten_stack(ad.broadcast_to(pooled, x5.shape))


def pool_mean_stack(x, n):
    """Mean-over-stack alternative; reported to behave like max pooling."""
    x5 = split_stack(x, n)
    pooled = x5.mean(axis=1, keepdims=True)
    return flatten_stack(ad.broadcast_to(pooled, x5.shape))


class MaxStackPool(Module):
    def __init__(self, n):
        self.n = n

    def forward(self, x, n=None):
        return pool_max_stack(x, n or self.n)


class MeanStackPool(Module):
    def __init__(self, n):
        self.n = n

    def forward(self, x, n=None):
        return pool_mean_stack(x, n or self.n)


class LambdaStackPool(Module):
    """Lambda-layer pooling over the stack axis.

    Per pixel: queries with C channels and keys with k channels come from
    1x1 convs on the pre-normed input; keys are softmaxed over the stack
    axis; their outer contraction with the queries gives a k*C-channel
    stack summary, which is repeated to every slot, concatenated with the
    input and merged by a 1x1 conv, then layer-scaled.
    """

    def __init__(self, in_channels, n, rng, k=4, layerscale_init=0.1):
        self.n = n
        self.k = k
        self.prenorm = LayerNorm(in_channels)
        self.to_q = Conv2d(in_channels, in_channels, 1, rng)
        self.to_k = Conv2d(in_channels, k, 1, rng)
        self.merge_inner = Conv2d((k + 1) * in_channels, in_channels, 1, rng)
        self.layerscale = LayerScale(in_channels, init=layerscale_init)

    def forward(self, x, n=None):
        n = n or self.n
        bn, h, w, c = x.shape
        b = bn // n
        x_norm = self.prenorm(x)
        q = split_stack(self.to_q(x_norm), n)  # (B, N, H, W, C)
        keys = split_stack(self.to_k(x_norm), n)  # (B, N, H, W, k)
        keys = ad.softmax(keys, axis=1)
        summary = ad.einsum("bnijk,bnijc->bijkc", keys, q)  # (B, H, W, k, C)
        summary = summary.reshape(b, 1, h, w, self.k * c)
        summary = ad.broadcast_to(summary, (b, n, h, w, self.k * c)).reshape(bn, h, w, self.k * c)
        g = ad.concat([x, summary], axis=-1)
        return self.layerscale(self.merge_inner(g))


class InvertedBottleneckMlp(Module):
    """LayerNorm -> 1x1 conv to 4C -> GELU -> 1x1 conv to C -> LayerScale."""

    def __init__(self, in_channels, rng, layerscale_init=0.1):
        self.norm = LayerNorm(in_channels)
        self.expand = Conv2d(in_channels, 4 * in_channels, 1, rng)
        self.contract = Conv2d(4 * in_channels, in_channels, 1, rng)
        self.layerscale = LayerScale(in_channels, init=layerscale_init)

    def forward(self, x):
        return self.layerscale(self.contract(ad.gelu(self.expand(self.norm(x)))))


class SelfAttentionStackPool(Module):
    """Per-pixel multi-head self-attention over the stack axis.

    Attention weights compare the N slots of each stack at every spatial
    location and head; the attended values are added back through a
    layer-scaled residual, followed by an inverted-bottleneck MLP with its
    own residual.
    """

    def __init__(self, in_channels, n, rng, heads=None, layerscale_init=0.1):
        self.n = n
        self.heads = heads or max(in_channels // 32, 1)
        if in_channels % self.heads:
            raise ValueError(f"channels {in_channels} not divisible by heads {self.heads}")
        self.prenorm = LayerNorm(in_channels)
        self.to_qkv = Conv2d(in_channels, 3 * in_channels, 1, rng)
        self.layerscale = LayerScale(in_channels, init=layerscale_init)
        self.mlp = InvertedBottleneckMlp(in_channels, rng, layerscale_init)

    def forward(self, x, n=None):
        n = n or self.n
        bn, h, w, c = x.shape
        b = bn // n
        head_dim = c // self.heads
        qkv = self.to_qkv(self.prenorm(x))
        q = ad.narrow(qkv, 3, 0, c).reshape(b, n, h, w, self.heads, head_dim)
        k = ad.narrow(qkv, 3, c, c).reshape(b, n, h, w, self.heads, head_dim)
        v = ad.narrow(qkv, 3, 2 * c, c).reshape(b, n, h, w, self.heads, head_dim)
        scores = ad.einsum("bnijhd,bmijhd->bnmijh", q, k) * (1.0 / math.sqrt(head_dim))
        attn = ad.softmax(scores, axis=2)
        g = ad.einsum("bnmijh,bmijhd->bnijhd", attn, v).reshape(bn, h, w, c)
        g = x + self.layerscale(g)
        return g + self.mlp(g)

    def attention_matrix(self, x, n=None):
        """Forward up to the softmaxed attention weights (for diagnostics)."""
        n = n or self.n
        bn, h, w, c = x.shape
        b = bn // n
        head_dim = c // self.heads
        qkv = self.to_qkv(self.prenorm(x))
        q = ad.narrow(qkv, 3, 0, c).reshape(b, n, h, w, self.heads, head_dim)
        k = ad.narrow(qkv, 3, c, c).reshape(b, n, h, w, self.heads, head_dim)
        scores = ad.einsum("bnijhd,bmijhd->bnmijh", q, k) * (1.0 / math.sqrt(head_dim))
        return ad.softmax(scores, axis=2)


class GlobalMerge(Module):
    """Fold the stack summary back into each slot: concat + 1x1 conv to C."""

    def __init__(self, in_channels, rng):
        self.conv = Conv2d(2 * in_channels, in_channels, 1, rng)

    def forward(self, e, g):
        if e.shape != g.shape:
            raise ValueError(f"merge shape mismatch: {e.shape} vs {g.shape}")
        return self.conv(ad.concat([e, g], axis=-1))


def build_pooling(kind, in_channels, n, rng, lambda_k=4, sa_heads=None):
    if kind == "max":
        return MaxStackPool(n)
    if kind == "mean":
        return MeanStackPool(n)
    if kind == "lambda":
        return LambdaStackPool(in_channels, n, rng, k=lambda_k)
    if kind == "self_attention":
        return SelfAttentionStackPool(in_channels, n, rng, heads=sa_heads)
    raise ValueError(f"unknown pooling kind: {kind!r}")
