"""Factorized spatial-spectral convolution schemes with rank audits,
a singular-value diversity regularizer, and a toy denoiser training loop."""

from .errors import (
    BackwardWithoutForward,
    ConfigError,
    DegenerateKernel,
    InvalidKernel,
    NonFiniteLoss,
    NotJointlyRepresentable,
    NumericError,
    RessetError,
    ShapeError,
    WindowTooLarge,
)
from .hsdata import (
    HSCube,
    MetricsReport,
    NoiseKind,
    NoiseSpec,
    add_noise,
    cube_to_feature,
    feature_to_cube,
    metrics_report,
    mpsnr,
    mssim,
    sam,
    synth_cube,
)
from .network import Network
from .rank import (
    RankAudit,
    Spectrum,
    audit_kernel_rank,
    feature_spectrum,
    rank_upper_bound,
    tail_mass,
)
from .regularizer import (
    DiversityHook,
    RegResult,
    attach_last_layer,
    da_reg,
    da_reg_grad,
    da_reg_value,
)
from .schemes import (
    KernelScheme,
    KernelSet,
    SchemeVariant,
    build_kernel_matrix,
    compression_param_count,
    conv_forward,
    load_kernel_set,
    param_count,
    parse_scheme_token,
    random_kernel_set,
    res3_block_forward,
    save_kernel_set,
    valid_column_count,
    zero_kernel_set,
)
from .tensor import (
    FeatureMap,
    Shape4,
    SVDResult,
    UnfoldedMatrix,
    fold_channels,
    matmul,
    numeric_rank,
    read_tensor,
    svd,
    unfold_channels,
    unfold_patches,
    write_tensor,
)
from .train import (
    AdamState,
    TrainConfig,
    TrainingData,
    TrainReport,
    adam_step,
    loss_denoise,
    train_denoiser,
)

__version__ = "0.1.0"
