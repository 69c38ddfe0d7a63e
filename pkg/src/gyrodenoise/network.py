"""Gyro correction model: a dilated causal CNN plus a static 3x3 calibration.

The corrected rate is  w_hat_n = C_omega_hat @ w_imu_n + w_tilde_n  where
w_tilde is the network output computed from a past-only window of 6-channel
IMU data. At initialization C_omega_hat = I and the final layer is zeroed,
so the corrected gyro equals the raw gyro exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import so3

CHECKPOINT_VERSION = 1


@dataclass
class NetConfig:
    kernel_sizes: tuple = (7, 7, 7, 7, 1)
    dilations: tuple = (1, 4, 16, 64, 1)
    channels: tuple = (6, 16, 32, 64, 128, 3)
    dropout: float = 0.1
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        if len(self.kernel_sizes) != len(self.dilations):
            raise ValueError("kernel_sizes and dilations length mismatch")
        if len(self.channels) != len(self.kernel_sizes) + 1:
            raise ValueError("channels must have one more entry than layers")

    @property
    def n_layers(self):
        return len(self.kernel_sizes)

    @property
    def receptive_field(self):
        """Number of past samples feeding one output.

        The causal stack consumes sum((K-1) * dilation) past samples; for
        the default configuration that is 510.
        """
        return sum((k - 1) * d
                   for k, d in zip(self.kernel_sizes, self.dilations))

    def to_dict(self):
        return {
            "kernel_sizes": list(self.kernel_sizes),
            "dilations": list(self.dilations),
            "channels": list(self.channels),
            "dropout": self.dropout,
            "bn_momentum": self.bn_momentum,
            "bn_eps": self.bn_eps,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kernel_sizes=tuple(d["kernel_sizes"]),
            dilations=tuple(d["dilations"]),
            channels=tuple(d["channels"]),
            dropout=d["dropout"],
            bn_momentum=d["bn_momentum"],
            bn_eps=d["bn_eps"],
        )


class ModelParams:
    """All trainable state plus the frozen input standardization stats."""

    def __init__(self, config: NetConfig = None, seed=0):
        self.config = config or NetConfig()
        cfg = self.config
        rng = np.random.default_rng(seed)
        self.conv_w = []
        self.conv_b = []
        for i in range(cfg.n_layers):
            c_in, c_out, k = cfg.channels[i], cfg.channels[i + 1], cfg.kernel_sizes[i]
            if i == cfg.n_layers - 1:
                # zeroed final layer: network correction is 0 before training
                w = np.zeros((c_out, c_in, k))
                b = np.zeros(c_out)
            else:
                bound = 1.0 / np.sqrt(c_in * k)
                w = rng.uniform(-bound, bound, size=(c_out, c_in, k))
                b = rng.uniform(-bound, bound, size=c_out)
            self.conv_w.append(ad.Tensor(w, requires_grad=True))
            self.conv_b.append(ad.Tensor(b, requires_grad=True))
        self.bn_gamma = []
        self.bn_beta = []
        self.bn_state = []
        for i in range(cfg.n_layers - 1):
            c = cfg.channels[i + 1]
            self.bn_gamma.append(ad.Tensor(np.ones(c), requires_grad=True))
            self.bn_beta.append(ad.Tensor(np.zeros(c), requires_grad=True))
            self.bn_state.append(ad.BatchNormState(c))
        self.c_omega = ad.Tensor(np.eye(3), requires_grad=True)
        # per-channel standardization of the network input (train-set stats)
        self.input_mean = np.zeros(6)
        self.input_std = np.ones(6)

    def trainable(self):
        """Named trainable tensors, in a fixed order."""
        out = []
        for i, (w, b) in enumerate(zip(self.conv_w, self.conv_b)):
            out.append((f"conv{i}.w", w))
            out.append((f"conv{i}.b", b))
        for i, (g, b) in enumerate(zip(self.bn_gamma, self.bn_beta)):
            out.append((f"bn{i}.gamma", g))
            out.append((f"bn{i}.beta", b))
        out.append(("c_omega", self.c_omega))
        return out

    def zero_grad(self):
        for _, t in self.trainable():
            t.zero_grad()

    def copy(self):
        """Deep copy of all parameters and running statistics."""
        out = ModelParams(self.config)
        src = dict(self.trainable())
        for name, t in out.trainable():
            t.data = src[name].data.copy()
        for dst, s in zip(out.bn_state, self.bn_state):
            dst.mean = s.mean.copy()
            dst.var = s.var.copy()
            dst.initialized = s.initialized
        out.input_mean = self.input_mean.copy()
        out.input_std = self.input_std.copy()
        return out

    def set_input_stats(self, mean, std):
        self.input_mean = np.asarray(mean, dtype=float)
        self.input_std = np.maximum(np.asarray(std, dtype=float), 1e-12)


def count_params(params: ModelParams):
    return sum(t.data.size for _, t in params.trainable())


def count_breakdown(params: ModelParams):
    conv = sum(w.data.size + b.data.size
               for w, b in zip(params.conv_w, params.conv_b))
    bn = sum(g.data.size + b.data.size
             for g, b in zip(params.bn_gamma, params.bn_beta))
    return {"conv": conv, "batchnorm": bn, "calibration": params.c_omega.data.size}


def forward(params: ModelParams, x, training=False, rng=None,
            zero_input=False, pad=False):
    """Corrected gyro from a raw 6-channel window.

    x: (B, 6, T) array or Tensor with gyro in channels 0..2 (rad/s) and
    accelerometer in channels 3..5 (m/s^2). Returns a Tensor (B, 3, T')
    with T' = T - receptive_field, or T' = T when pad=True (left zero
    padding; the first receptive_field outputs then depend on the padding).

    zero_input forces the network input to zeros, collapsing the model to
    the 12-parameter static calibration (C_omega_hat plus a constant
    correction).
    """
    cfg = params.config
    rf = cfg.receptive_field
    if isinstance(x, ad.Tensor):
        x = x.data
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    bsz, c, t = x.shape
    if c != 6:
        raise ValueError(f"expected 6 input channels, got {c}")
    if not pad and t < rf + 1:
        raise ValueError(f"window too short: {t} < receptive field + 1 = {rf + 1}")

    gyro_raw = x[:, :3, :]
    if zero_input:
        # constant-in-time correction: a single valid output column suffices
        h = ad.Tensor(np.zeros((bsz, 6, rf + 1)))
    else:
        xs = (x - params.input_mean[None, :, None]) / params.input_std[None, :, None]
        if pad:
            xs = np.concatenate([np.zeros((bsz, 6, rf)), xs], axis=2)
        h = ad.Tensor(xs)

    for i in range(cfg.n_layers):
        h = ad.conv1d_dilated(h, params.conv_w[i], params.conv_b[i],
                              cfg.dilations[i])
        if i < cfg.n_layers - 1:
            h = ad.batchnorm1d(h, params.bn_gamma[i], params.bn_beta[i],
                               params.bn_state[i], training,
                               momentum=cfg.bn_momentum, eps=cfg.bn_eps)
            h = ad.gelu(h)
            if training and cfg.dropout > 0:
                h = ad.dropout(h, cfg.dropout, training=True, rng=rng)

    gyro_out = gyro_raw if pad else gyro_raw[:, :, rf:]
    corrected = ad.channel_affine(params.c_omega, ad.Tensor(gyro_out)) + h
    return corrected


def integrate_corrected(params: ModelParams, imu_seq, r0, dt=None,
                        zero_input=False):
    """Open-loop attitude from corrected rates (eval mode, padded forward).

    imu_seq is a data.ImuSequence (or a dict with gyro/acc arrays); returns
    an (M+1, 3, 3) rotation stack starting at r0.
    """
    gyro = np.asarray(imu_seq.gyro, dtype=float)
    acc = np.asarray(imu_seq.acc, dtype=float)
    if dt is None:
        dt = imu_seq.dt
    x = np.concatenate([gyro.T, acc.T], axis=0)[None]
    w_hat = forward(params, x, training=False, zero_input=zero_input,
                    pad=True).data[0].T
    return so3.integrate_increments(r0, w_hat, dt)


def corrected_rates(params: ModelParams, imu_seq, zero_input=False):
    """Corrected gyro (M, 3) for a full sequence (eval mode, padded)."""
    x = np.concatenate([np.asarray(imu_seq.gyro).T,
                        np.asarray(imu_seq.acc).T], axis=0)[None]
    return forward(params, x, training=False, zero_input=zero_input,
                   pad=True).data[0].T


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(path, params: ModelParams, extra=None):
    payload = {
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "input_mean": params.input_mean.tolist(),
        "input_std": params.input_std.tolist(),
        "tensors": {
            name: {"shape": list(t.data.shape), "data": t.data.ravel().tolist()}
            for name, t in params.trainable()
        },
        "bn_running": [
            {"mean": s.mean.tolist(), "var": s.var.tolist(),
             "initialized": s.initialized}
            for s in params.bn_state
        ],
        "extra": extra or {},
    }
    with open(path, "w") as f:
        json.dump(payload, f)


def load_checkpoint(path):
    with open(path) as f:
        payload = json.load(f)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    params = ModelParams(NetConfig.from_dict(payload["config"]))
    named = dict(params.trainable())
    for name, spec in payload["tensors"].items():
        if name not in named:
            raise ValueError(f"unknown tensor {name!r} in checkpoint")
        arr = np.array(spec["data"], dtype=float).reshape(spec["shape"])
        if arr.shape != named[name].data.shape:
            raise ValueError(f"shape mismatch for {name!r}")
        named[name].data = arr
    for state, saved in zip(params.bn_state, payload["bn_running"]):
        state.mean = np.array(saved["mean"], dtype=float)
        state.var = np.array(saved["var"], dtype=float)
        state.initialized = bool(saved["initialized"])
    params.set_input_stats(payload["input_mean"], payload["input_std"])
    return params, payload.get("extra", {})
