"""Multi-hypothesis non-rigid structure from motion in plain numpy."""

from .dataio import Frame, SynthConfig, center_frames, generate_synthetic, load_dataset, save_dataset
from .errors import (
    ConfigError,
    DegeneracyError,
    DimensionError,
    MetricUnavailableError,
    NRSfMError,
    NumericError,
    ParseError,
    SchemaError,
    UsageError,
)
from .geometry import Camera, procrustean_distances, procrustes_rotation, project, rodrigues
from .losses import LossWeights, SelectionStrategy
from .metrics import EvalReport, evaluate, mpjpe, normalized_error
from .model import ModelParams, init_params, reconstruct, reconstruct_batch
from .trainer import TrainConfig, fit, load_checkpoint, save_checkpoint

__version__ = "0.1.0"
