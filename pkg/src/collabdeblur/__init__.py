"""Collaborative blind deblurring toolkit.

Classical side: a multi-image Fourier kernel estimator with a dense
spatial oracle and a collaboration sweep. Neural side: a small float64
reverse-mode engine, stack-pooling layers (max, lambda, self-attention)
and a parametric UNet family, trained at toy scale on synthetic
Gaussian-blur stacks. Patch tiling/stitching connects the two to whole
images.
"""

__version__ = "0.1.0"

from .blur import (
    BlurConfig,
    KernelGrid,
    gaussian_kernel,
    kernel_grid_sample_quadrants,
    make_stack,
    min_support,
    motion_kernel,
    sample_blur_config,
)
from .estimate import (
    PairSet,
    SweepReport,
    estimate_kernel_fourier,
    estimate_kernel_spatial_oracle,
    run_collaboration_sweep,
)
from .image import (
    add_gaussian_noise,
    as_image,
    convolve,
    delta_kernel,
    gamma_compress,
    gamma_expand,
    kernel_psnr,
    kernel_similarity,
    normalize_kernel,
    project_kernel,
    psnr,
)
from .nn.gradcheck import check_gradients, gradcheck_all
from .nn.unet import (
    CollabUNet,
    ModelConfig,
    build_unet,
    forward_collaborative,
    load_checkpoint,
    save_checkpoint,
)
from .patches import (
    PatchStack,
    Placement,
    quadrant_symmetric_placements,
    stitch,
    tile_uniform,
)
from .rng import make_rng
from .textures import sharp_texture, texture_pool
from .train import (
    EvalSpec,
    TrainConfig,
    adam_step,
    evaluate,
    lr_schedule,
    stack_l1_loss,
    train_toy,
)
