"""Grouped spherical quantization: codebook lookup, training, metrics and tooling."""

from .analysis import (
    PUBLISHED_SCALING_FIT,
    DistanceStatsReport,
    ScalingFit,
    distance_stats,
    exact_moments,
    fit_scaling,
    predicted_moments,
    scaling_eval,
)
from .errors import (
    ChecksumMismatch,
    CorruptFile,
    DegenerateDim,
    DegenerateFit,
    DegenerateVector,
    DimensionMismatch,
    FixedCodebook,
    GSQError,
    IndexOutOfRange,
    InsufficientData,
    InvalidConfig,
    InvalidPreset,
    PatchTooLarge,
    UnreadableImage,
    VersionMismatch,
)
from .metrics import UsageHistogram, mse, perplexity, perplexity_per_group_mean, psnr, ssim, usage_percent
from .objectives import (
    LOSS_WEIGHTS,
    LogitBatch,
    entropy_loss,
    entropy_terms,
    hinge_discr_loss,
    hinge_gen_loss,
    non_saturate_discr_loss,
    non_saturate_gen_loss,
    vanilla_discr_loss,
    vanilla_gen_loss,
    weighted_total,
)
from .persistence import (
    PatchCorpusSpec,
    extract_patches,
    ingest_patches,
    load_codebook,
    read_indices,
    read_tensor,
    reassemble,
    save_codebook,
    write_indices,
    write_tensor,
)
from .quantizer import (
    CodeAssignment,
    Codebook,
    CompressionGeometry,
    QuantizerConfig,
    dequantize,
    effective_vocab_bits,
    init_codebook,
    l2_normalize,
    quantize,
)
from .training import EmaState, TrainReport, commitment_loss, ema_step, evaluate, train
from .zoo import PRESET_NAMES, FiniteLevelRule, ZooPreset, preset

__version__ = "0.1.0"
