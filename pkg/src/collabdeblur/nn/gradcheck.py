"""Central finite-difference gradient checks for every differentiable op.

The checker is the independent oracle for the engine: it perturbs every
input element by +/- eps, rebuilds the forward pass, and compares the
numeric derivative against what backward() accumulated. Max-style ops are
fed inputs with enforced value gaps so the perturbation cannot cross an
argmax boundary.
"""

from typing import Callable, List, NamedTuple, Sequence

import numpy as np

from ..rng import make_rng
from . import autodiff as ad
from .autodiff import Tensor
from .layers import (
    GlobalMerge,
    LambdaStackPool,
    LayerNorm,
    LayerScale,
    SelfAttentionStackPool,
    pool_max_stack,
)

DEFAULT_EPS = 1e-5
DEFAULT_TOL = 1e-5


def relative_error(numeric, analytic, atol=1e-8):
    """Norm-based relative error; absolute when both gradients vanish.

    Some parameters have exactly-zero true gradients (e.g. a bias that a
    downstream softmax cancels), where both sides are pure rounding noise
    and a ratio would be meaningless.
    """
    diff = float(np.linalg.norm(numeric - analytic))
    scale = max(np.linalg.norm(numeric), np.linalg.norm(analytic))
    if scale < atol:
        return diff
    return diff / scale


def numeric_gradient(f, tensors, index, eps=DEFAULT_EPS):
    """Central-difference gradient of scalar f(*tensors) w.r.t. tensors[index]."""
    target = tensors[index]
    grad = np.zeros_like(target.data)
    flat = target.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        plus = float(f(*tensors).data)
        flat[i] = old - eps
        minus = float(f(*tensors).data)
        flat[i] = old
        gflat[i] = (plus - minus) / (2.0 * eps)
    return grad


def check_gradients(f, tensors, eps=DEFAULT_EPS):
    """Max relative error between analytic and numeric gradients over all inputs."""
    for t in tensors:
        t.grad = None
    out = f(*tensors)
    out.backward()
    worst = 0.0
    for i, t in enumerate(tensors):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_gradient(f, tensors, i, eps)
        worst = max(worst, relative_error(numeric, analytic))
    return worst


def _uniform(rng, shape, margin=0.0):
    """Uniform(-1, 1) draw; elements are pushed `margin` away from zero."""
    x = rng.uniform(-1.0, 1.0, size=shape)
    if margin:
        x = np.sign(x) * (np.abs(x) + margin)
    return x


def _gapped(rng, shape):
    """Values with pairwise gaps well above 4*eps, randomly arranged (for max ops).

    Distinct levels spaced 2/size apart with sub-spacing jitter, so a
    +/- eps perturbation can never move an argmax.
    """
    size = int(np.prod(shape))
    levels = (rng.permutation(size) + 1.0) / size
    jitter = rng.uniform(-0.2, 0.2, size=size) / size
    return (2.0 * (levels + jitter) - 1.0).reshape(shape)


def _projector(rng, shape):
    """Fixed random projection turning a tensor-valued op into a scalar."""
    r = rng.uniform(-1.0, 1.0, size=shape)

    def project(out):
        return (out * Tensor(r)).sum()

    return project


class CheckResult(NamedTuple):
    name: str
    error: float


def _op_cases(seed):
    """One (name, f, tensors) triple per differentiable operation."""
    cases = []

    def rngs(tag):
        return make_rng(seed, 101, tag)

    # conv2d, stride 1 with padding and stride 2 without
    rng = rngs(0)
    x = Tensor(_uniform(rng, (2, 5, 5, 3)), requires_grad=True)
    w = Tensor(0.5 * _uniform(rng, (3, 3, 3, 4)), requires_grad=True)
    b = Tensor(0.1 * _uniform(rng, (4,)), requires_grad=True)
    proj = _projector(rng, (2, 5, 5, 4))
    cases.append(("conv2d", lambda x, w, b, _p=proj: _p(ad.conv2d(x, w, b, stride=1, pad=1)), [x, w, b]))

    rng = rngs(1)
    x = Tensor(_uniform(rng, (2, 6, 6, 3)), requires_grad=True)
    w = Tensor(0.5 * _uniform(rng, (3, 3, 3, 2)), requires_grad=True)
    proj = _projector(rng, (2, 2, 2, 2))
    cases.append(("conv2d_stride2", lambda x, w, _p=proj: _p(ad.conv2d(x, w, None, stride=2, pad=0)), [x, w]))

    rng = rngs(2)
    x = Tensor(_uniform(rng, (2, 4, 4, 3)), requires_grad=True)
    w = Tensor(0.5 * _uniform(rng, (2, 2, 3, 2)), requires_grad=True)
    b = Tensor(0.1 * _uniform(rng, (2,)), requires_grad=True)
    proj = _projector(rng, (2, 8, 8, 2))
    cases.append(
        ("conv_transpose2d", lambda x, w, b, _p=proj: _p(ad.conv_transpose2d(x, w, b, stride=2)), [x, w, b])
    )

    rng = rngs(3)
    x = Tensor(_uniform(rng, (2, 4, 4, 3), margin=0.05), requires_grad=True)
    proj = _projector(rng, (2, 4, 4, 3))
    cases.append(("relu", lambda x, _p=proj: _p(ad.relu(x)), [x]))

    rng = rngs(4)
    x = Tensor(2.0 * _uniform(rng, (2, 4, 4, 3)), requires_grad=True)
    proj = _projector(rng, (2, 4, 4, 3))
    cases.append(("gelu", lambda x, _p=proj: _p(ad.gelu(x)), [x]))

    rng = rngs(5)
    ln = LayerNorm(6)
    ln.weight = Tensor(_uniform(rng, (6,)), requires_grad=True)
    ln.bias = Tensor(0.2 * _uniform(rng, (6,)), requires_grad=True)
    x = Tensor(_uniform(rng, (2, 3, 3, 6)), requires_grad=True)
    proj = _projector(rng, (2, 3, 3, 6))
    cases.append(("layer_norm", lambda x, w, b, _p=proj, _m=ln: _p(_m(x)), [x, ln.weight, ln.bias]))

    rng = rngs(6)
    ls = LayerScale(5)
    ls.weight = Tensor(_uniform(rng, (5,)), requires_grad=True)
    x = Tensor(_uniform(rng, (2, 3, 3, 5)), requires_grad=True)
    proj = _projector(rng, (2, 3, 3, 5))
    cases.append(("layer_scale", lambda x, w, _p=proj, _m=ls: _p(_m(x)), [x, ls.weight]))

    rng = rngs(7)
    merge = GlobalMerge(4, rng)
    e = Tensor(_uniform(rng, (3, 3, 3, 4)), requires_grad=True)
    g = Tensor(_uniform(rng, (3, 3, 3, 4)), requires_grad=True)
    proj = _projector(rng, (3, 3, 3, 4))
    inputs = [e, g, merge.conv.weight, merge.conv.bias]
    cases.append(("merge_global", lambda e, g, w, b, _p=proj, _m=merge: _p(_m(e, g)), inputs))

    rng = rngs(8)
    x = Tensor(_gapped(rng, (4, 2, 2, 3)), requires_grad=True)
    proj = _projector(rng, (4, 2, 2, 3))
    cases.append(("pool_max_stack", lambda x, _p=proj: _p(pool_max_stack(x, 4)), [x]))

    rng = rngs(9)
    lam = LambdaStackPool(8, 2, rng, k=4)
    x = Tensor(_uniform(rng, (2, 3, 3, 8)), requires_grad=True)
    proj = _projector(rng, (2, 3, 3, 8))
    inputs = [x] + list(lam.named_parameters().values())

    def lambda_case(x, *params, _p=proj, _m=lam):
        return _p(_m(x))

    cases.append(("pool_lambda", lambda_case, inputs))

    rng = rngs(10)
    sa = SelfAttentionStackPool(8, 2, rng, heads=2)
    x = Tensor(_uniform(rng, (2, 3, 3, 8)), requires_grad=True)
    proj = _projector(rng, (2, 3, 3, 8))
    inputs = [x] + list(sa.named_parameters().values())

    def sa_case(x, *params, _p=proj, _m=sa):
        return _p(_m(x))

    cases.append(("pool_self_attention", sa_case, inputs))

    rng = rngs(11)
    pred = Tensor(_uniform(rng, (4, 4, 4, 3)), requires_grad=True)
    target = Tensor(_uniform(rng, (4, 4, 4, 3)))
    # keep |pred - target| away from the L1 kink
    diff = pred.data - target.data
    pred.data = target.data + np.sign(diff) * (np.abs(diff) + 0.05)
    cases.append(("stack_l1", lambda p, t: ad.absolute(p - t).mean(), [pred, target]))

    rng = rngs(12)
    x = Tensor(_uniform(rng, (2, 5, 3)), requires_grad=True)
    proj = _projector(rng, (2, 5, 3))
    cases.append(("softmax", lambda x, _p=proj: _p(ad.softmax(x, axis=1)), [x]))

    rng = rngs(13)
    x = Tensor(_gapped(rng, (2, 4, 4, 3)), requires_grad=True)
    proj = _projector(rng, (2, 2, 2, 3))
    cases.append(("max_pool2d", lambda x, _p=proj: _p(ad.max_pool2d(x, 2)), [x]))

    return cases


def gradcheck_all(seed=0, eps=DEFAULT_EPS):
    """Run the finite-difference suite once; returns per-op worst errors."""
    results = []
    for name, f, tensors in _op_cases(seed):
        results.append(CheckResult(name, check_gradients(f, tensors, eps)))
    return results
