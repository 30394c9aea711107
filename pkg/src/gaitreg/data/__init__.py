from .dataset import (
    DatasetError,
    DatasetIndex,
    GaitSequence,
    PersonSample,
    format_name,
    generate_synthetic_dataset,
    ingest_directory,
    parse_name,
    write_dataset,
)
from .preprocess import GAIT_SIZE, body_color_jitter, preprocess_mask, preprocess_masks
from .sampler import PKSampler, pk_sample
from .walker import Camera, camera_transform, identity_params, outfit_palette, render_walker_frame

__all__ = [
    "DatasetError", "DatasetIndex", "GaitSequence", "PersonSample", "format_name",
    "generate_synthetic_dataset", "ingest_directory", "parse_name", "write_dataset",
    "GAIT_SIZE", "body_color_jitter", "preprocess_mask", "preprocess_masks",
    "PKSampler", "pk_sample", "Camera", "camera_transform", "identity_params",
    "outfit_palette", "render_walker_frame",
]
