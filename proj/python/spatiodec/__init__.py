"""Python bindings for the spatiodec 4D convolutional decoder."""

from ._core import (
    Error,
    Model,
    conv3d,
    conv4d,
    conv4d_oracle,
    grad_suite,
    phantom_generate,
    read_manifest,
    read_volume,
    spearman,
    temporal_flatten,
    write_volume,
)

__all__ = [
    "Error",
    "Model",
    "conv3d",
    "conv4d",
    "conv4d_oracle",
    "grad_suite",
    "phantom_generate",
    "read_manifest",
    "read_volume",
    "spearman",
    "temporal_flatten",
    "write_volume",
]
