"""Desk-scale 6-DOF camera pose regression on synthetic underwater scenes.

The package is organized as a pipeline:

- :mod:`uwpose.autodiff` — float64 tensors with tape-based reverse-mode
  differentiation and the op set the models need
- :mod:`uwpose.geometry` — quaternion/pose algebra and the stereo transform
- :mod:`uwpose.imgio` / :mod:`uwpose.dataset` — image formats, manifests,
  preprocessing, normalization, stereo augmentation
- :mod:`uwpose.model` — plain/residual CNN backbones, four-direction LSTM
  reducer, affine regressor head
- :mod:`uwpose.losses` — composite position+orientation loss and metrics
- :mod:`uwpose.synthgen` — ray-cast scene renderer and trajectory generator
- :mod:`uwpose.trainer` — deterministic training loop and checkpoints
- :mod:`uwpose.cli` — the ``uwpose`` command
"""

__version__ = "0.1.0"

from . import autodiff, dataset, geometry, imgio, losses, model, synthgen, trainer  # noqa: F401
from .dataset import NormalizationState, SampleRecord  # noqa: F401
from .losses import EvalReport, LossConfig, composite_loss, evaluate  # noqa: F401
from .model import ModelConfig, PoseNet  # noqa: F401
from .synthgen import CameraConfig, SceneConfig, TrajectorySpec  # noqa: F401
from .trainer import Checkpoint, TrainConfig, train  # noqa: F401
