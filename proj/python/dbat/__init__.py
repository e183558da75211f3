"""Cross-resolution attention segmentation testbed (C++ core)."""

from ._dbat import (
    IGNORE_LABEL,
    ArgumentError,
    CheckpointError,
    ConfigError,
    DegenerateError,
    DimensionError,
    Model,
    __version__,
    cka,
    generate_scene,
    hsic1,
    lr_at,
    metrics,
    train,
)

__all__ = [
    "IGNORE_LABEL",
    "ArgumentError",
    "CheckpointError",
    "ConfigError",
    "DegenerateError",
    "DimensionError",
    "Model",
    "__version__",
    "cka",
    "generate_scene",
    "hsic1",
    "lr_at",
    "metrics",
    "train",
]
