"""Semi-supervised image classification with full unlabeled-data utilization.

Threshold-based pseudo-labeling (self-adaptive class-specific thresholds)
combined with a masked-autoencoder reconstruction objective over every
image and a mixup-synthesized auxiliary loss, implemented as a pure
numpy/scipy library with its own reverse-mode autodiff tape.
"""

import os

# the model's gemms are small; on the 1-2 core desk targets this package is
# built for, BLAS thread handoff costs more than it buys
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

from .augment import (  # noqa: E402
    AugmentationPolicy,
    patchify,
    strong_augment,
    unpatchify,
    weak_augment,
)
from .data import (  # noqa: E402
    DatasetPools,
    DatasetSpec,
    LabeledBatch,
    UnlabeledBatch,
    batch_iterator,
    generate_synthetic_dataset,
    load_dataset,
)
from .losses import (  # noqa: E402
    LossBundle,
    cross_entropy,
    supervised_loss,
    total_loss,
    unsupervised_loss,
)
from .mae import MaskingPlan, mae_forward, mae_loss, make_masking_plan, normalize_patch  # noqa: E402
from .model import ModelConfig, classify, decode_full, encode_visible, init_params  # noqa: E402
from .sdt import (  # noqa: E402
    CleanSet,
    SyntheticBatch,
    build_synthetic_batch,
    draw_mix_coefficient,
    mix_pair,
    sdt_loss,
    select_clean_set,
)
from .thresholds import (  # noqa: E402
    ThresholdState,
    class_thresholds,
    init_state,
    selection_mask,
    update_state,
)
from .trainer import (  # noqa: E402
    TrainerConfig,
    UtilizationRecord,
    compute_utilization,
    evaluate,
    run_training,
    train_step,
)

__version__ = "0.1.0"
