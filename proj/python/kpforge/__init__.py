"""kpforge: real-time 2D tool landmark detection toolkit (C++ core)."""

from ._kpforge import (
    BBox,
    CompositeSpec,
    Detection,
    Keypoint,
    KeypointSchema,
    Model,
    PCKResult,
    SampleAnnotation,
    alpha_blend,
    build_model,
    compose_sample,
    decode_heatmaps,
    generate_dataset,
    laplacian_blend,
    load_manifest,
    pck,
    pck_curve,
    poisson_blend,
    render_pyramid,
    render_targets,
    split_dataset,
)

__all__ = [
    "BBox",
    "CompositeSpec",
    "Detection",
    "Keypoint",
    "KeypointSchema",
    "Model",
    "PCKResult",
    "SampleAnnotation",
    "alpha_blend",
    "build_model",
    "compose_sample",
    "decode_heatmaps",
    "generate_dataset",
    "laplacian_blend",
    "load_manifest",
    "pck",
    "pck_curve",
    "poisson_blend",
    "render_pyramid",
    "render_targets",
    "split_dataset",
]
