"""meshseg: client-side volumetric brain MRI segmentation."""

from .volume import BoundingBox, Volume3D, conform, crop, embed, mask_bbox, robust_rescale
from .nifti import parse_header, read_volume, write_volume
from .model import (
    LayerSpec,
    ModelSpec,
    count_parameters,
    exact_halo,
    load_model,
    load_model_dir,
    receptive_field,
    save_model_dir,
)
from .engine import (
    FeatureMap,
    MemoryBudget,
    argmax_labels,
    batchnorm_eval,
    conv3d_fast,
    conv3d_ref,
    dropout_eval,
    relu,
    run_model,
    volume_to_feature,
)
from .tiling import SubvolumeGrid, divide, infer_tiled, merge_labels
from .components import ComponentLabeling, keep_largest, label_components
from .training import Batch, TrainState, backward, fit, macro_dice, make_batches, softmax_ce, train_step
from .pipeline import PipelineConfig, TelemetryRecord, append_telemetry, run_pipeline
from .stats import ContingencyTable, chi_square, success_rates

__version__ = "0.1.0"
