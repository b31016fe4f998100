"""Distilled opinion-update surrogate."""

from socsim.surrogate.backend import SurrogateBackend, serve_as_backend
from socsim.surrogate.distill import DistillDataset, generate_distill_data
from socsim.surrogate.features import N_FEATURES, encode, encode_batch
from socsim.surrogate.model import SurrogateModel, TrainReport, train

__all__ = ["DistillDataset", "N_FEATURES", "SurrogateBackend", "SurrogateModel", "TrainReport",
           "encode", "encode_batch", "generate_distill_data", "serve_as_backend", "train"]
