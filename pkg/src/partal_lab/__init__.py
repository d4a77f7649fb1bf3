"""Desk-scale laboratory for multi-task active learning with partial labels."""

from .acquisition import (
    AcquisitionBatch,
    STRATEGY_NAMES,
    kcenter_greedy,
    select_coreset,
    select_learning_loss,
    select_partal,
    select_random_full,
    select_random_partial,
    select_rbal,
)
from .alcore import (
    ALConfig,
    ALRunRecord,
    LabelState,
    Oracle,
    delta_gap,
    evaluate_model,
    hardest_examples_probe,
    partial_inference_probe,
    run_al,
    run_full_supervision,
    train_initial_model,
    write_results_csv,
)
from .config import ConfigError, ExperimentConfig, load_config, parse_config, serialize_config
from .data import (
    DatasetBundle,
    GeneratorConfig,
    ModalitySpec,
    SampleRecord,
    default_modalities,
    generate_dataset,
    load_dataset,
    normals_from_depth,
    save_dataset,
)
from .metrics import MetricsReport, delta_mtl, mean_angle_error, miou, rmse
from .model import (
    LabelInjection,
    MultiTaskNet,
    NetConfig,
    TrainConfig,
    aux_loss_head_forward,
    encoder_features,
    forward,
    make_pool,
    masked_loss,
    predict,
    train,
)
from .numerics import AdamState, SeededRng, adam_step, dropout_mask, poly_lr, softmax
from .uncertainty import (
    McSummary,
    NormalizationParams,
    UncertaintyMatrix,
    apply_normalization,
    discretized_shannon,
    fit_normalization,
    gaussian_entropy_map,
    image_uncertainty,
    mc_predict,
    pool_uncertainties,
    shannon_entropy_map,
)

__version__ = "0.1.0"
