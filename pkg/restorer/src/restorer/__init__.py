"""Spatial-adaptive restoration network for aberration correction.

Trains on the aligned (degraded, clean, fov) triples written by the
imaging-simulation toolkit, consuming only its on-disk dataset layout.
"""

from .data import PairsDataset, decode_fov
from .model import NetworkConfig, RestorationNet, build_fov_map
from .train import infer, load_checkpoint, save_checkpoint, train

__version__ = "0.1.0"
