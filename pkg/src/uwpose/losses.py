"""Composite pose loss and evaluation metrics.

The training loss is L_p + beta * L_q where L_p and L_q are the batch-mean
Euclidean norms of the position and quaternion residuals, taken in the
normalized coordinates the network actually regresses. beta defaults to 30,
trading 1 unit of position residual against 1/30 unit of quaternion residual.

Reported metrics live in physical units instead: meters after position
denormalization, degrees of geodesic rotation angle after normalizing the
predicted quaternion. The target quaternion is kept on the canonical
hemisphere so the two-to-one quaternion covering cannot inflate the loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import geometry
from .autodiff import Tensor
from .errors import DivergenceError, InvalidConfigError
from .model import PoseOutput


@dataclass
class LossConfig:
    beta: float = 30.0

    def __post_init__(self):
        self.beta = float(self.beta)
        if not self.beta > 0:
            raise InvalidConfigError(f"beta must be positive, got {self.beta}")


def _batch_mean_row_norm(diff: Tensor) -> Tensor:
    n = diff.data.shape[0]
    norms = ad.sqrt(ad.sum_axis(ad.mul(diff, diff), 1))
    return ad.scale(ad.sum_all(norms), 1.0 / n)


def composite_loss(pred: PoseOutput, target, cfg: LossConfig) -> Tensor:
    """Differentiable L_p + beta * L_q over a batch of normalized targets."""
    if not (np.all(np.isfinite(pred.p_hat.data)) and np.all(np.isfinite(pred.q_hat.data))):
        raise DivergenceError("non-finite prediction entering the loss")
    t = target if isinstance(target, Tensor) else ad.constant(target)
    if t.data.ndim != 2 or t.data.shape[1] != 7 or t.data.shape[0] != pred.p_hat.data.shape[0]:
        raise InvalidConfigError(
            f"loss target must be [N,7] matching prediction, got {t.data.shape}"
        )
    loss_p = _batch_mean_row_norm(ad.sub(pred.p_hat, ad.slice_axis(t, 1, 0, 3)))
    loss_q = _batch_mean_row_norm(ad.sub(pred.q_hat, ad.slice_axis(t, 1, 3, 7)))
    return ad.add(loss_p, ad.scale(loss_q, cfg.beta))


def position_error_m(pred_position, true_position) -> float:
    """Euclidean distance between denormalized positions, in meters."""
    d = np.asarray(pred_position, dtype=np.float64) - np.asarray(true_position, dtype=np.float64)
    return float(np.linalg.norm(d))


def orientation_error_deg(pred_quaternion, true_quaternion) -> float:
    """Geodesic angle between the normalized prediction and the true rotation."""
    q = geometry.normalize(pred_quaternion)
    return float(geometry.angle_between_deg(q, np.asarray(true_quaternion, dtype=np.float64)))


@dataclass
class EvalReport:
    count: int
    pos_errors_m: np.ndarray
    ori_errors_deg: np.ndarray
    mean_pos_m: float
    mean_ori_deg: float

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean_pos_m": self.mean_pos_m,
            "mean_ori_deg": self.mean_ori_deg,
            "per_sample": [
                {"pos_err_m": float(p), "ori_err_deg": float(o)}
                for p, o in zip(self.pos_errors_m, self.ori_errors_deg)
            ],
        }


def evaluate(net, images, true_positions, true_quaternions, state, batch_size: int = 32) -> EvalReport:
    """Run the network over a test set and report physical-unit errors.

    ``images`` are preprocessed [N,3,S,S]; ``true_positions`` are raw meters
    (not normalized) and ``true_quaternions`` unit canonical.
    """
    images = np.asarray(images, dtype=np.float64)
    true_positions = np.asarray(true_positions, dtype=np.float64).reshape(-1, 3)
    true_quaternions = np.asarray(true_quaternions, dtype=np.float64).reshape(-1, 4)
    n = images.shape[0]
    if n == 0:
        raise ValueError("cannot evaluate on an empty sample set")
    pos_errors = np.empty(n)
    ori_errors = np.empty(n)
    for lo in range(0, n, batch_size):
        hi = min(lo + batch_size, n)
        out = net.forward(images[lo:hi])
        if not (np.all(np.isfinite(out.p_hat.data)) and np.all(np.isfinite(out.q_hat.data))):
            raise DivergenceError("non-finite prediction during evaluation")
        pred_pos = state.denormalize_positions(out.p_hat.data)
        pred_quat = geometry.normalize(out.q_hat.data)
        pos_errors[lo:hi] = np.linalg.norm(pred_pos - true_positions[lo:hi], axis=1)
        ori_errors[lo:hi] = geometry.angle_between_deg(pred_quat, true_quaternions[lo:hi])
    return EvalReport(
        count=n,
        pos_errors_m=pos_errors,
        ori_errors_deg=ori_errors,
        mean_pos_m=float(pos_errors.mean()),
        mean_ori_deg=float(ori_errors.mean()),
    )
