"""Sparse over-complete feature learning by reconstruction-cost ICA.

Four learner modes share one objective: plain (``rica``), kernelized
(``krica``), and their class-discriminative extensions (``d_rica``,
``d_krica``).  The package also ships the surrounding experiment machinery:
PCA/KPCA whitening, a fixed-point/gradient-descent solver, a patch-based
image classification pipeline, portable serialization, and a CLI.
"""

from .kernels import (
    DIFFERENTIABLE_KINDS,
    KERNEL_KINDS,
    KernelSpec,
    gram,
    kernel_eval,
    kernel_grad_wrt_first,
)
from .whitening import (
    WhitenTransform,
    apply_whitener,
    fit_kpca_whitener,
    fit_pca_whitener,
    identity_whitener,
)
from .objective import (
    MODES,
    BasisModel,
    PoolingMatrix,
    Selectors,
    default_pooling,
    discrimination_term,
    encode,
    full_gradient,
    full_objective,
    grid3x3_pooling,
    hessian_of_d,
    homogeneous_energy_ratio,
    identity_pooling,
    make_selectors,
    pooling_penalty,
    reconstruction_cost,
)
from .solver import (
    Hyperparams,
    SolveConfig,
    SolveReport,
    fixed_point_residuals,
    fixed_point_step,
    grad_check,
    kmeans_init,
    train,
)
from .pipeline import (
    LinearClassifier,
    accuracy,
    encode_dataset,
    encode_image,
    extract_patches,
    predict,
    similarity_matrix,
    similarity_render,
    train_classifier,
    within_between_distances,
)
from .dataio import (
    KmxBadMagic,
    KmxError,
    KmxOverflow,
    KmxTrailingBytes,
    KmxTruncated,
    load_cifar10_binary,
    load_classifier,
    load_image_dir,
    load_model,
    read_kmx,
    save_classifier,
    save_model,
    write_kmx,
    write_pgm,
    write_pnm_image,
)

__version__ = "0.1.0"
