"""Mini-batch training loop, optimizers, and the versioned checkpoint format.

Training is deterministic end to end: the parameter init, the per-epoch
shuffle (seeded by (seed, epoch)), the batch reduction order, and the
optimizer arithmetic are all fixed, so one seed yields one loss history,
bit for bit.

Checkpoints are single self-describing files::

    magic  b"UWPC"
    u32    format version (little endian)
    u64    JSON header length
    bytes  JSON header: configs, normalization state, epoch, last loss,
           and a tensor table of {name, shape, offset, count}
    bytes  raw little-endian float64 tensor payloads, at the declared offsets

Loading a checkpoint reproduces every tensor bit-exactly or fails with
CheckpointError; there is no partial salvage.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dataset
from .dataset import NormalizationState
from .errors import CheckpointError, DivergenceError, InvalidConfigError, ManifestError
from .losses import LossConfig, composite_loss, evaluate
from .model import ModelConfig, PoseNet

CHECKPOINT_MAGIC = b"UWPC"
CHECKPOINT_VERSION = 1

HISTORY_COLUMNS = ("epoch", "mean_loss", "mean_pos_err_m", "mean_ori_err_deg")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 8
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta: float = 30.0
    seed: int = 0
    checkpoint_every: int = 0  # 0 disables periodic snapshots

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidConfigError(
                f"epochs and batch_size must be >= 1, got {self.epochs}, {self.batch_size}"
            )
        # 0 is allowed so the no-op training identity can be expressed
        if self.learning_rate < 0:
            raise InvalidConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise InvalidConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.checkpoint_every < 0:
            raise InvalidConfigError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        LossConfig(beta=self.beta)  # validates beta

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "beta": self.beta,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


class Adam:
    """Standard Adam recursion with bias correction; t starts at 1."""

    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = float(beta1), float(beta2), float(eps)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m[...] = self.beta1 * m + (1.0 - self.beta1) * g
            v[...] = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class SGDMomentum:
    def __init__(self, params, lr, momentum=0.9):
        self.params = list(params)
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        for p, v in zip(self.params, self.v):
            g = p.grad
            if g is None:
                continue
            v[...] = self.momentum * v + g
            p.data -= self.lr * v


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return Adam(params, cfg.learning_rate)
    return SGDMomentum(params, cfg.learning_rate)


@dataclass
class Checkpoint:
    """Everything needed to evaluate or resume: nothing external required."""

    model_config: ModelConfig
    params: dict
    normalization: NormalizationState
    train_config: TrainConfig
    epoch: int
    last_loss: float

    def build_net(self) -> PoseNet:
        tensors = {name: ad.parameter(arr.copy()) for name, arr in self.params.items()}
        return PoseNet(self.model_config, tensors)

    def save(self, path) -> None:
        table = []
        payload = bytearray()
        for name, arr in self.params.items():
            arr = np.ascontiguousarray(arr, dtype="<f8")
            table.append(
                {
                    "name": name,
                    "shape": list(arr.shape),
                    "offset": len(payload),
                    "count": int(arr.size),
                }
            )
            payload += arr.tobytes()
        header = json.dumps(
            {
                "model_config": self.model_config.to_dict(),
                "train_config": self.train_config.to_dict(),
                "normalization": self.normalization.to_dict(),
                "epoch": self.epoch,
                "last_loss": self.last_loss,
                "tensors": table,
            }
        ).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<I", CHECKPOINT_VERSION))
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            fh.write(bytes(payload))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
        fixed = len(CHECKPOINT_MAGIC) + 4 + 8
        if len(blob) < fixed or blob[:4] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version} (supported: {CHECKPOINT_VERSION})"
            )
        (header_len,) = struct.unpack_from("<Q", blob, 8)
        if len(blob) < fixed + header_len:
            raise CheckpointError(f"{path}: truncated header")
        try:
            header = json.loads(blob[fixed : fixed + header_len].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: corrupt header ({exc})") from None
        payload = blob[fixed + header_len :]
        params = {}
        try:
            for entry in header["tensors"]:
                start = entry["offset"]
                end = start + entry["count"] * 8
                if end > len(payload):
                    raise CheckpointError(
                        f"{path}: truncated payload for tensor {entry['name']!r}"
                    )
                arr = np.frombuffer(payload[start:end], dtype="<f8").reshape(entry["shape"])
                params[entry["name"]] = arr.astype(np.float64).copy()
            return cls(
                model_config=ModelConfig.from_dict(header["model_config"]),
                params=params,
                normalization=NormalizationState.from_dict(header["normalization"]),
                train_config=TrainConfig.from_dict(header["train_config"]),
                epoch=int(header["epoch"]),
                last_loss=float(header["last_loss"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: malformed header ({exc})") from None


def write_history(path, rows) -> None:
    """Loss-history CSV; floats via repr so rewrites are byte-identical."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for epoch, loss, pos, ori in rows:
            fh.write(f"{int(epoch)},{repr(float(loss))},{repr(float(pos))},{repr(float(ori))}\n")


def _periodic_path(path, epoch: int) -> str:
    root, ext = os.path.splitext(str(path))
    return f"{root}.epoch{epoch}{ext}"


def train(
    model_config: ModelConfig,
    train_records,
    eval_records,
    train_config: TrainConfig,
    checkpoint_path=None,
    history_path=None,
    log=None,
):
    """Fit a model; returns (Checkpoint, history rows).

    Normalization state is fit on ``train_records`` only. Every epoch ends
    with an evaluation pass over ``eval_records``; history rows are
    (epoch, mean training loss, mean position error m, mean orientation
    error deg). A non-finite loss aborts with the epoch and step named.
    """
    if not train_records:
        raise ManifestError("training set is empty")
    if not eval_records:
        raise ManifestError("evaluation set is empty")
    size = model_config.input_size
    geom = dataset.load_geometry_images(train_records, size)
    state = dataset.fit_normalization(geom, [r.position for r in train_records])
    x_train = dataset.whiten_geometry_images(geom, state)
    y_train = dataset.pose_targets(train_records, state)
    del geom
    x_eval, _ = dataset.prepare_arrays(eval_records, state, size)
    eval_pos = np.stack([r.position for r in eval_records])
    eval_quat = np.stack([r.quaternion for r in eval_records])

    net = PoseNet(model_config)
    opt = make_optimizer(net.parameters(), train_config)
    loss_cfg = LossConfig(beta=train_config.beta)
    n = x_train.shape[0]
    history = []
    mean_loss = float("nan")
    for epoch in range(1, train_config.epochs + 1):
        perm = np.random.default_rng((train_config.seed, epoch)).permutation(n)
        batch_losses = []
        for step, lo in enumerate(range(0, n, train_config.batch_size)):
            idx = perm[lo : lo + train_config.batch_size]
            out = net.forward(x_train[idx])
            try:
                loss = composite_loss(out, y_train[idx], loss_cfg)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch}, step {step}: {exc}") from None
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(f"epoch {epoch}, step {step}: loss is {value}")
            for p in net.parameters():
                p.grad = None
            ad.backward(loss)
            opt.step()
            batch_losses.append(value)
        mean_loss = float(np.mean(batch_losses))
        try:
            report = evaluate(net, x_eval, eval_pos, eval_quat, state)
        except DivergenceError as exc:
            raise DivergenceError(f"epoch {epoch}, evaluation: {exc}") from None
        history.append((epoch, mean_loss, report.mean_pos_m, report.mean_ori_deg))
        if log is not None:
            log(
                f"epoch {epoch}/{train_config.epochs}: loss {mean_loss:.6f}, "
                f"pos {report.mean_pos_m:.4f} m, ori {report.mean_ori_deg:.3f} deg"
            )
        if (
            checkpoint_path is not None
            and train_config.checkpoint_every
            and epoch % train_config.checkpoint_every == 0
            and epoch < train_config.epochs
        ):
            _snapshot(net, state, train_config, epoch, mean_loss).save(
                _periodic_path(checkpoint_path, epoch)
            )
    ckpt = _snapshot(net, state, train_config, train_config.epochs, mean_loss)
    if checkpoint_path is not None:
        ckpt.save(checkpoint_path)
    if history_path is not None:
        write_history(history_path, history)
    return ckpt, history


def _snapshot(net: PoseNet, state, train_config, epoch, last_loss) -> Checkpoint:
    return Checkpoint(
        model_config=net.config,
        params={name: p.data.copy() for name, p in net.params.items()},
        normalization=state,
        train_config=train_config,
        epoch=epoch,
        last_loss=last_loss,
    )
