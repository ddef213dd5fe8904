# Database module - dataset files and directories
from .formats import read_heatmap, read_mask, write_heatmap, write_mask
from .records import (
    read_params,
    read_predictions,
    read_records,
    write_params,
    write_predictions,
    write_records,
)
from .db import Dataset, DatasetManifest, dataset_writer, open_dataset, read_manifest

__all__ = [
    "read_mask", "write_mask", "read_heatmap", "write_heatmap",
    "read_records", "write_records", "read_predictions", "write_predictions",
    "read_params", "write_params",
    "Dataset", "DatasetManifest", "dataset_writer", "open_dataset", "read_manifest",
]
