"""Multimodal dialogue emotion recognition on weighted multi-relational graphs.

A from-scratch numpy implementation: a small reverse-mode autodiff tape,
BiGRU sequence encoders, cross-modal attention fusion, speaker and event
relation graphs, a masked graph autoencoder, cross-relation attention and
an imbalance-aware classification objective.
"""

from .config import TrainConfig, variant_config
from .data import Dataset, SynthSpec, gen_synthetic, load_dataset, save_dataset
from .errors import DerGcnError
from .graph import Dialogue, MultiRelGraph, Utterance
from .metrics import MetricsReport
from .numerics import Tensor, backward, finite_diff_check
from .training import Checkpoint, ablate, evaluate, train

__all__ = [
    "Checkpoint", "Dataset", "DerGcnError", "Dialogue", "MetricsReport", "MultiRelGraph",
    "SynthSpec", "Tensor", "TrainConfig", "Utterance", "ablate", "backward", "evaluate",
    "finite_diff_check", "gen_synthetic", "load_dataset", "save_dataset", "train",
    "variant_config",
]

__version__ = "0.1.0"
