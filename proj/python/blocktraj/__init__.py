"""Topology-aware block-diffusion trajectory generation."""

from blocktraj._core import (
    DataError,
    IntegrityError,
    Network,
    NumericalError,
    Sampler,
    UsageError,
    dtw,
    edr,
    evaluate,
    gen_city,
    gen_data,
    grad_check,
    hausdorff,
    jsd_of_samples,
    radius_of_gyration,
    sample,
    train,
)

__all__ = [
    "DataError",
    "IntegrityError",
    "Network",
    "NumericalError",
    "Sampler",
    "UsageError",
    "dtw",
    "edr",
    "evaluate",
    "gen_city",
    "gen_data",
    "grad_check",
    "hausdorff",
    "jsd_of_samples",
    "radius_of_gyration",
    "sample",
    "train",
]
