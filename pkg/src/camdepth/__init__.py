"""Camera-aware single-image depth estimation on synthetic box scenes."""

from .camera import (
    CameraIntrinsics,
    FocalNormalization,
    preset_camera,
    crop_intrinsics,
    resize_intrinsics,
    backproject,
    project,
)
from .camconv import ChannelStack, make_cc, make_fov, make_nc, make_stack
from .depthmap import (
    DepthMap,
    InverseDepthMap,
    NormalMap,
    make_depth_map,
    to_inverse,
    to_depth,
    normalize_inverse_depth,
    denormalize_inverse_depth,
    confidence_target,
    normals_from_depth,
)
from .losses import LossWeights, MetricReport, evaluate, aggregate_metrics
from .synth import (
    CameraRule,
    DatasetSpec,
    Sample,
    Scene,
    build_dataset,
    derive_view,
    generate_scene,
    load_dataset,
    render,
    render_sample,
    sample_pose,
)
from .network import (
    ModelParams,
    NetConfig,
    TrainConfig,
    build,
    count_parameters,
    forward,
    load_model,
    predict_depth,
    save_model,
    train,
)
from .harness import (
    ExperimentSpec,
    OrderingSpec,
    RunReport,
    VariantSpec,
    assert_orderings,
    generalization_experiment_spec,
    overfitting_experiment_spec,
    run_experiment,
)

__all__ = [
    "CameraIntrinsics",
    "FocalNormalization",
    "preset_camera",
    "crop_intrinsics",
    "resize_intrinsics",
    "backproject",
    "project",
    "ChannelStack",
    "make_cc",
    "make_fov",
    "make_nc",
    "make_stack",
    "DepthMap",
    "InverseDepthMap",
    "NormalMap",
    "make_depth_map",
    "to_inverse",
    "to_depth",
    "normalize_inverse_depth",
    "denormalize_inverse_depth",
    "confidence_target",
    "normals_from_depth",
    "LossWeights",
    "MetricReport",
    "evaluate",
    "aggregate_metrics",
    "CameraRule",
    "DatasetSpec",
    "Sample",
    "Scene",
    "build_dataset",
    "derive_view",
    "generate_scene",
    "load_dataset",
    "render",
    "render_sample",
    "sample_pose",
    "ModelParams",
    "NetConfig",
    "TrainConfig",
    "build",
    "count_parameters",
    "forward",
    "load_model",
    "predict_depth",
    "save_model",
    "train",
    "ExperimentSpec",
    "OrderingSpec",
    "RunReport",
    "VariantSpec",
    "assert_orderings",
    "generalization_experiment_spec",
    "overfitting_experiment_spec",
    "run_experiment",
]
