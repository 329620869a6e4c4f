from .dataset_io import StoredDataset, load_image, read_dataset, write_dataset
from .partition import (
    PartitionedDataset,
    PartitionKey,
    PartitionPair,
    Sample,
    TupleBatch,
    batch_tuples,
    build_partitions,
    discretize_factor,
    pair_set,
)
from .synthetic import (
    CALIBRATION_SPLIT,
    TRAIN_SPLIT,
    evaluation_split,
    generate_synthetic,
    render_sample,
    scene_pattern,
)

__all__ = [
    "CALIBRATION_SPLIT",
    "PartitionKey",
    "PartitionPair",
    "PartitionedDataset",
    "Sample",
    "StoredDataset",
    "TRAIN_SPLIT",
    "TupleBatch",
    "batch_tuples",
    "build_partitions",
    "discretize_factor",
    "evaluation_split",
    "generate_synthetic",
    "load_image",
    "pair_set",
    "read_dataset",
    "render_sample",
    "scene_pattern",
    "write_dataset",
]
