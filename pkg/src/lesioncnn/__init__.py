"""From-scratch CNN pipeline for seven-class skin-lesion image
classification: layers with backpropagation, preprocessing, stratified
data handling, a declarative architecture builder, training with Adam
and class-weighted cross-entropy, and a full metrics battery.
"""

__version__ = "0.1.0"

from .architecture import (
    ArchConfig,
    LayerSpec,
    declared_shape_warnings,
    infer_shapes,
    reference_cnn_config,
    vgg16_config,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    CLASS_CODES,
    ArrayDataset,
    ClassCatalog,
    LesionDataset,
    SampleRecord,
    SplitSpec,
    batch_iter,
    class_weights,
    encode_label,
    load_metadata,
    stratified_split,
    synth_dataset,
    write_synth_dataset,
)
from .estimator import CNNClassifier
from .exceptions import (
    CheckpointError,
    ClassMismatchError,
    DataError,
    LesionCnnError,
    MetadataError,
    NumericsError,
    ShapeError,
    TrainingDiverged,
)
from .image import Image, load_image, read_netpbm, write_netpbm
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    aggregate_metrics,
    confusion_matrix,
    per_class_metrics,
    render_report,
)
from .model import (
    ModelState,
    freeze_layers,
    init_params,
    predict_indices,
    predict_proba,
    replace_head,
    run_backward,
    run_forward,
)
from .preprocessing import (
    AugmentParams,
    AugmentRanges,
    augment,
    histogram_equalize,
    normalize,
    resize,
)
from .training import (
    AdamState,
    TrainConfig,
    TrainHistory,
    adam_step,
    train,
    weighted_cce,
)
