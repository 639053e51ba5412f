"""Unpaired point cloud completion via latent-space cycle transformations.

Two point-cloud autoencoders learn latent spaces for incomplete and complete
shapes; two transfer networks map between them in both directions, with a
missing-region code letting one complete shape correspond to many partial
views; critics with a gradient penalty align the transferred distributions.
Everything runs on a small float64 reverse-mode tape engine.
"""

from . import autodiff, chamfer, losses, networks, pointcloud_io, shapes, training
from .autodiff import Parameter, ParamGroup, Tensor, backward, forward_op
from .chamfer import eval_metric, full_chamfer, partial_chamfer
from .networks import ModelDims, NetworkBundle, sample_missing_code
from .shapes import CATEGORIES, DatasetSpec, build_dataset, generate_complete, make_partial
from .training import LossReport, TrainConfig, Trainer, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "autodiff", "chamfer", "losses", "networks", "pointcloud_io", "shapes", "training",
    "Parameter", "ParamGroup", "Tensor", "backward", "forward_op",
    "eval_metric", "full_chamfer", "partial_chamfer",
    "ModelDims", "NetworkBundle", "sample_missing_code",
    "CATEGORIES", "DatasetSpec", "build_dataset", "generate_complete", "make_partial",
    "LossReport", "TrainConfig", "Trainer", "load_checkpoint", "save_checkpoint",
    "__version__",
]
