"""Residual-aware dual-scale binarization: decomposition, training, analysis.

The top level re-exports the numpy-only core. The bit-packed kernel
(`resbin.kernel`), the container format (`resbin.container`), figure helpers
(`resbin.plots`), and the CLI (`resbin.cli`) import on demand because they pull
in numba or matplotlib.
"""

from .analysis import (
    MseDecomposition,
    REFERENCE_DECOMPOSITION_ROWS,
    ToyMlp,
    build_toy_mlp,
    decompose_mse,
    layerwise_report,
    pearson,
    verify_reference_rows,
    write_decomposition_csv,
)
from .binarize import BinaryPath, ResidualStack, effective_weight, reconstruct, sign, svid
from .initialization import (
    CalibProfile,
    InitReport,
    calibrated_init,
    collect_calib_profile,
    greedy_svid_init,
    init_report,
    iterative_residual_svid,
    precondition,
    toy_calib_profile,
    unprecondition_scales,
)
from .losses import kl_distill, mse_distill, softmax_columns, total_distill_grad, total_distill_loss
from .matrix import Rank1Factor, ShapeError, rank1_svd
from .qat import (
    CoupledLayer,
    FrozenMask,
    GradientBundle,
    StandardLayer,
    TrainConfig,
    TrainTrace,
    TrainingDivergedError,
    VARIANTS,
    backward,
    coupled_forward,
    derive_paths,
    freeze,
    inner_product_drift,
    iterative_direction_cosine,
    read_trace_csv,
    sgd_step,
    standard_qat_forward,
    train_toy,
    trainable_matrix_count,
    variant_mask,
    write_trace_csv,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryPath",
    "CalibProfile",
    "CoupledLayer",
    "FrozenMask",
    "GradientBundle",
    "InitReport",
    "MseDecomposition",
    "REFERENCE_DECOMPOSITION_ROWS",
    "Rank1Factor",
    "ResidualStack",
    "ShapeError",
    "StandardLayer",
    "ToyMlp",
    "TrainConfig",
    "TrainTrace",
    "TrainingDivergedError",
    "VARIANTS",
    "backward",
    "build_toy_mlp",
    "calibrated_init",
    "collect_calib_profile",
    "coupled_forward",
    "decompose_mse",
    "derive_paths",
    "effective_weight",
    "freeze",
    "greedy_svid_init",
    "init_report",
    "inner_product_drift",
    "iterative_direction_cosine",
    "iterative_residual_svid",
    "kl_distill",
    "layerwise_report",
    "mse_distill",
    "pearson",
    "precondition",
    "rank1_svd",
    "read_trace_csv",
    "reconstruct",
    "sgd_step",
    "sign",
    "softmax_columns",
    "standard_qat_forward",
    "svid",
    "toy_calib_profile",
    "total_distill_grad",
    "total_distill_loss",
    "train_toy",
    "trainable_matrix_count",
    "unprecondition_scales",
    "variant_mask",
    "verify_reference_rows",
    "write_decomposition_csv",
    "write_trace_csv",
    "__version__",
]
