"""Pose regression networks: plain CNN, residual CNN, and a four-direction
LSTM reducer, all ending in a shared affine regressor head.

The backbone is a stack of stride-2 3x3 conv+relu stages that halves the
spatial grid until it is at most 7x7 (224 -> 7 in five stages). The residual
variant follows every stage with a two-conv identity-skip block, so zeroing
those block weights reproduces the plain network exactly.

The reducer runs four independent LSTMs over the final feature grid, one
starting from each corner, and concatenates their final hidden states:

    scan 0: row-major from the top-left
    scan 1: rows scanned right-to-left, from the top-right
    scan 2: up each column, columns left-to-right, from the bottom-left
    scan 3: fully reversed row-major, from the bottom-right

Every scan consumes the full H*W sequence of C-dim cell vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidConfigError, InvalidShapeError

CONV_KERNEL = 3
CONV_STRIDE = 2
CONV_PAD = 1


def _stage_out(size: int) -> int:
    return (size + 2 * CONV_PAD - CONV_KERNEL) // CONV_STRIDE + 1


def default_conv_channels(input_size: int) -> tuple:
    """One stride-2 stage per halving until the grid is at most 7x7."""
    n = 0
    s = int(input_size)
    while s > 7:
        s = _stage_out(s)
        n += 1
    if n == 0:
        n = 1
    return (16,) + (32,) * (n - 1)


@dataclass
class ModelConfig:
    backbone: str = "plain"
    conv_channels: tuple = ()
    use_lstm_reducer: bool = False
    lstm_hidden: int = 32
    regressor_hidden: int = 128
    input_size: int = 224
    seed: int = 0

    def __post_init__(self):
        if not self.conv_channels:
            self.conv_channels = default_conv_channels(self.input_size)
        self.conv_channels = tuple(int(c) for c in self.conv_channels)
        self.validate()

    def validate(self) -> None:
        if self.backbone not in ("plain", "residual"):
            raise InvalidConfigError(f"unknown backbone {self.backbone!r}")
        if self.input_size < 1:
            raise InvalidConfigError(f"input_size must be positive, got {self.input_size}")
        if not self.conv_channels or any(c < 1 for c in self.conv_channels):
            raise InvalidConfigError(f"conv_channels must be positive, got {self.conv_channels}")
        if self.lstm_hidden < 1 or self.regressor_hidden < 1:
            raise InvalidConfigError(
                f"hidden sizes must be positive, got lstm_hidden={self.lstm_hidden}, "
                f"regressor_hidden={self.regressor_hidden}"
            )
        c, h, w = self.feature_grid
        if h < 1 or w < 1:
            raise InvalidConfigError(
                f"conv stack collapses a {self.input_size}x{self.input_size} input to {h}x{w}"
            )

    @property
    def feature_grid(self) -> tuple:
        """(C, H, W) of the backbone output, from the conv stack arithmetic."""
        s = self.input_size
        for _ in self.conv_channels:
            s = _stage_out(s)
        return (self.conv_channels[-1], s, s)

    @property
    def regressor_input_dim(self) -> int:
        c, h, w = self.feature_grid
        return 4 * self.lstm_hidden if self.use_lstm_reducer else c * h * w

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone,
            "conv_channels": list(self.conv_channels),
            "use_lstm_reducer": self.use_lstm_reducer,
            "lstm_hidden": self.lstm_hidden,
            "regressor_hidden": self.regressor_hidden,
            "input_size": self.input_size,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            backbone=d["backbone"],
            conv_channels=tuple(d["conv_channels"]),
            use_lstm_reducer=d["use_lstm_reducer"],
            lstm_hidden=d["lstm_hidden"],
            regressor_hidden=d["regressor_hidden"],
            input_size=d["input_size"],
            seed=d["seed"],
        )


@dataclass
class PoseOutput:
    """Network output: normalized-coordinate position and raw quaternion."""

    p_hat: Tensor
    q_hat: Tensor


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_params(config: ModelConfig) -> dict:
    """Seeded parameter dict; creation order is fixed so draws are reproducible."""
    rng = np.random.default_rng(config.seed)
    params = {}
    c_in = 3
    for i, c_out in enumerate(config.conv_channels):
        params[f"stem{i}.k"] = ad.parameter(
            _he_uniform(rng, (c_out, c_in, CONV_KERNEL, CONV_KERNEL), c_in * CONV_KERNEL * CONV_KERNEL)
        )
        params[f"stem{i}.b"] = ad.parameter(np.zeros(c_out))
        if config.backbone == "residual":
            for j in (1, 2):
                params[f"res{i}.c{j}.k"] = ad.parameter(
                    _he_uniform(
                        rng, (c_out, c_out, CONV_KERNEL, CONV_KERNEL), c_out * CONV_KERNEL * CONV_KERNEL
                    )
                )
                params[f"res{i}.c{j}.b"] = ad.parameter(np.zeros(c_out))
        c_in = c_out
    if config.use_lstm_reducer:
        c = config.feature_grid[0]
        dh = config.lstm_hidden
        limit = 1.0 / np.sqrt(dh)
        for d in range(4):
            params[f"lstm{d}.wx"] = ad.parameter(rng.uniform(-limit, limit, size=(c, 4 * dh)))
            params[f"lstm{d}.wh"] = ad.parameter(rng.uniform(-limit, limit, size=(dh, 4 * dh)))
            bias = np.zeros(4 * dh)
            bias[dh : 2 * dh] = 1.0  # open forget gates at the start of training
            params[f"lstm{d}.b"] = ad.parameter(bias)
    d_in = config.regressor_input_dim
    params["fc.w"] = ad.parameter(_he_uniform(rng, (d_in, config.regressor_hidden), d_in))
    params["fc.b"] = ad.parameter(np.zeros(config.regressor_hidden))
    params["head_p.w"] = ad.parameter(
        _he_uniform(rng, (config.regressor_hidden, 3), config.regressor_hidden)
    )
    params["head_p.b"] = ad.parameter(np.zeros(3))
    params["head_q.w"] = ad.parameter(
        _he_uniform(rng, (config.regressor_hidden, 4), config.regressor_hidden)
    )
    params["head_q.b"] = ad.parameter(np.zeros(4))
    return params


def backbone_forward(x: Tensor, config: ModelConfig, params: dict) -> Tensor:
    t = x
    for i in range(len(config.conv_channels)):
        t = ad.relu(
            ad.conv2d(t, params[f"stem{i}.k"], params[f"stem{i}.b"], CONV_STRIDE, CONV_PAD)
        )
        if config.backbone == "residual":
            y = ad.relu(ad.conv2d(t, params[f"res{i}.c1.k"], params[f"res{i}.c1.b"], 1, CONV_PAD))
            y = ad.conv2d(y, params[f"res{i}.c2.k"], params[f"res{i}.c2.b"], 1, CONV_PAD)
            t = ad.relu(ad.add(t, y))
    return t


def scan_orders(h: int, w: int) -> list:
    """Flat cell visit orders for the four corner scans (see module docstring)."""
    idx = np.arange(h * w).reshape(h, w)
    return [
        idx.reshape(-1),
        idx[:, ::-1].reshape(-1),
        idx[::-1, :].T.reshape(-1),
        idx[::-1, ::-1].reshape(-1),
    ]


def lstm_reduce(feat: Tensor, config: ModelConfig, params: dict) -> Tensor:
    n, c, h, w = feat.data.shape
    dh = config.lstm_hidden
    seq = ad.transpose(ad.reshape(feat, (n, c, h * w)), (0, 2, 1))
    finals = []
    for d, order in enumerate(scan_orders(h, w)):
        wx, wh, b = params[f"lstm{d}.wx"], params[f"lstm{d}.wh"], params[f"lstm{d}.b"]
        ordered = ad.take(seq, order, axis=1)
        h_t = ad.constant(np.zeros((n, dh)))
        c_t = ad.constant(np.zeros((n, dh)))
        for step in range(h * w):
            x_t = ad.reshape(ad.slice_axis(ordered, 1, step, step + 1), (n, c))
            h_t, c_t = ad.lstm_cell(x_t, h_t, c_t, wx, wh, b)
        finals.append(h_t)
    return ad.concat(finals, axis=1)


def regress(features: Tensor, config: ModelConfig, params: dict) -> PoseOutput:
    z = ad.relu(ad.dense(features, params["fc.w"], params["fc.b"]))
    p = ad.dense(z, params["head_p.w"], params["head_p.b"])
    q = ad.dense(z, params["head_q.w"], params["head_q.b"])
    return PoseOutput(p_hat=p, q_hat=q)


def forward(x: Tensor, config: ModelConfig, params: dict) -> PoseOutput:
    feat = backbone_forward(x, config, params)
    if config.use_lstm_reducer:
        reduced = lstm_reduce(feat, config, params)
    else:
        n = feat.data.shape[0]
        reduced = ad.reshape(feat, (n, int(np.prod(feat.data.shape[1:]))))
    return regress(reduced, config, params)


class PoseNet:
    """Config + parameters bundled with a forward pass over image batches."""

    def __init__(self, config: ModelConfig, params: Optional[dict] = None):
        config.validate()
        self.config = config
        self.params = init_params(config) if params is None else params

    def forward(self, images) -> PoseOutput:
        x = images if isinstance(images, Tensor) else ad.constant(images)
        n = x.data.shape[0] if x.data.ndim == 4 else -1
        expect = (n, 3, self.config.input_size, self.config.input_size)
        if x.data.ndim != 4 or x.data.shape != expect:
            raise InvalidShapeError(
                f"forward expects [N,3,{self.config.input_size},{self.config.input_size}], "
                f"got {x.data.shape}"
            )
        return forward(x, self.config, self.params)

    def parameters(self) -> list:
        return list(self.params.values())

    @property
    def param_count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))
