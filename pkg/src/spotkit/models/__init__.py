"""Model zoo: pooling classifiers, context-aware segmentation/spotting,
and the end-to-end video model, all behind a string-keyed registry."""

from .base import (
    ModelConfig,
    SpottingModel,
    build_model,
    predict_video,
    register_model,
    registered_models,
    seeded_generator,
)
from .calf import (
    CalfModel,
    CalfSegmentationNeck,
    CalfSpottingHead,
    calf_context_loss,
    calf_spotting_loss,
    match_candidates,
    signed_distance_grid,
)
from .checkpoint import (
    Checkpoint,
    checkpoint_from_model,
    load_checkpoint,
    load_into_model,
    model_tensors,
    save_checkpoint,
)
from .heads import LinearClassHead, classification_head
from .pooling import (
    AvgPoolNeck,
    ClusterPoolNeck,
    MaxPoolNeck,
    PoolingClassifier,
    TemporallyAwareNeck,
    make_neck,
    netrvlad,
    netvlad,
    pool_avg,
    pool_max,
    temporally_aware_pool,
)
from .pts import GatedRecurrentLayer, PtsBackbone, PtsHead, PtsModel, temporal_shift

_POOL_KINDS = ("max", "avg", "netvlad", "netrvlad")

for _kind in _POOL_KINDS:
    register_model(
        f"pool:{_kind}",
        lambda config, kind=_kind: PoolingClassifier(config, kind, temporally_aware=False))
    register_model(
        f"pool:{_kind}++",
        lambda config, kind=_kind: PoolingClassifier(config, kind, temporally_aware=True))

register_model("calf", CalfModel)
register_model("pts", PtsModel)

__all__ = [
    "ModelConfig", "SpottingModel", "build_model", "predict_video",
    "register_model", "registered_models", "seeded_generator",
    "CalfModel", "CalfSegmentationNeck", "CalfSpottingHead",
    "calf_context_loss", "calf_spotting_loss", "match_candidates",
    "signed_distance_grid",
    "Checkpoint", "checkpoint_from_model", "load_checkpoint",
    "load_into_model", "model_tensors", "save_checkpoint",
    "LinearClassHead", "classification_head",
    "AvgPoolNeck", "ClusterPoolNeck", "MaxPoolNeck", "PoolingClassifier",
    "TemporallyAwareNeck", "make_neck", "netrvlad", "netvlad",
    "pool_avg", "pool_max", "temporally_aware_pool",
    "GatedRecurrentLayer", "PtsBackbone", "PtsHead", "PtsModel", "temporal_shift",
]
