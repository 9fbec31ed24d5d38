"""SE-ResNet-18 with hand-written forward and backward passes."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass

import numpy as np

from . import layers as L


@dataclass(frozen=True)
class ArchConfig:
    in_channels: int = 1
    widths: tuple = (64, 128, 256, 512)
    blocks: tuple = (2, 2, 2, 2)
    se_ratio: int = 16
    n_classes: int = 2
    stem_kernel: int = 7
    maxpool: bool = True

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "blocks", tuple(int(b) for b in self.blocks))
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if len(self.widths) != len(self.blocks):
            raise ValueError("widths and blocks must have equal length")
        for w in self.widths:
            if self.se_ratio < 1 or w % self.se_ratio:
                raise ValueError(f"SE ratio {self.se_ratio} does not divide width {w}")

    @classmethod
    def full(cls, in_channels: int = 1) -> "ArchConfig":
        return cls(in_channels=in_channels)

    @classmethod
    def width_scaled(cls, in_channels: int = 1) -> "ArchConfig":
        """Same topology with widths 8/16/32/64, for tests and desk-scale runs."""
        return cls(in_channels=in_channels, widths=(8, 16, 32, 64), se_ratio=4)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["blocks"] = list(self.blocks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        return cls(**d)

    def block_names(self):
        """Yield ``(name, in_width, out_width, stride)`` for every residual block."""
        cin = self.widths[0]
        for s, (width, n) in enumerate(zip(self.widths, self.blocks)):
            for b in range(n):
                stride = 2 if (b == 0 and s > 0) else 1
                yield f"layer{s + 1}.{b}", cin, width, stride
                cin = width


def _kaiming(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def init_params(config: ArchConfig, seed: int = 0, dtype=np.float32):
    """Fresh parameters and normalisation buffers for ``config``."""
    rng = np.random.default_rng(seed)
    params, buffers = {}, {}

    def conv(name, cout, cin, k):
        params[name] = _kaiming(rng, (cout, cin, k, k), cin * k * k, dtype)

    def norm(name, c):
        params[f"{name}.gamma"] = np.ones(c, dtype)
        params[f"{name}.beta"] = np.zeros(c, dtype)
        buffers[f"{name}.mean"] = np.zeros(c, dtype)
        buffers[f"{name}.var"] = np.ones(c, dtype)

    k = config.stem_kernel
    conv("stem.conv.w", config.widths[0], config.in_channels, k)
    norm("stem.bn", config.widths[0])
    for name, cin, cout, stride in config.block_names():
        conv(f"{name}.conv1.w", cout, cin, 3)
        norm(f"{name}.bn1", cout)
        conv(f"{name}.conv2.w", cout, cout, 3)
        norm(f"{name}.bn2", cout)
        hidden = cout // config.se_ratio
        params[f"{name}.se.w1"] = _kaiming(rng, (cout, hidden), cout, dtype)
        params[f"{name}.se.b1"] = np.zeros(hidden, dtype)
        params[f"{name}.se.w2"] = _kaiming(rng, (hidden, cout), hidden, dtype)
        params[f"{name}.se.b2"] = np.zeros(cout, dtype)
        if stride != 1 or cin != cout:
            conv(f"{name}.down.conv.w", cout, cin, 1)
            norm(f"{name}.down.bn", cout)
    width = config.widths[-1]
    params["fc.w"] = (rng.standard_normal((width, config.n_classes)) / np.sqrt(width)).astype(dtype)
    params["fc.b"] = np.zeros(config.n_classes, dtype)
    return params, buffers


class SEResNet:
    """SE-ResNet classifier over ``N x C x H x W`` spectrogram stacks.

    ``forward(x, training=True)`` keeps the intermediate values needed by
    ``backward``; normalisation layers then use batch statistics and update
    their running averages.
    """

    def __init__(self, config: ArchConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params, self.buffers = init_params(config, seed, self.dtype)
        self._tape = None

    # -- state --------------------------------------------------------------
    def state(self):
        return copy.deepcopy(self.params), copy.deepcopy(self.buffers)

    def load_state(self, params, buffers):
        self.params = {k: np.array(v, dtype=self.dtype) for k, v in params.items()}
        self.buffers = {k: np.array(v, dtype=self.dtype) for k, v in buffers.items()}

    def copy(self) -> "SEResNet":
        other = SEResNet.__new__(SEResNet)
        other.config, other.dtype = self.config, self.dtype
        other.params, other.buffers = self.state()
        other._tape = None
        return other

    # -- forward ------------------------------------------------------------
    def _bn(self, name, x, training, tape):
        p = self.params
        out, cache, (mean, var) = L.batchnorm_forward(
            x, p[f"{name}.gamma"], p[f"{name}.beta"],
            self.buffers[f"{name}.mean"], self.buffers[f"{name}.var"], training)
        if training:
            self.buffers[f"{name}.mean"] = mean.astype(self.dtype)
            self.buffers[f"{name}.var"] = var.astype(self.dtype)
        tape.append(("bn", name, cache))
        return out

    def _conv(self, name, x, stride, pad, tape):
        out, cache = L.conv2d_forward(x, self.params[f"{name}.w"], stride, pad)
        tape.append(("conv", name, cache))
        return out

    def _relu(self, x, tape):
        out, mask = L.relu_forward(x)
        tape.append(("relu", None, mask))
        return out

    def forward(self, x, training: bool = False) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.in_channels:
            raise ValueError(f"expected input N x {cfg.in_channels} x H x W, got {x.shape}")
        tape = []
        k = cfg.stem_kernel
        h = self._conv("stem.conv", x, 2, k // 2, tape)
        h = self._bn("stem.bn", h, training, tape)
        h = self._relu(h, tape)
        if cfg.maxpool:
            h, cache = L.maxpool_forward(h)
            tape.append(("maxpool", None, cache))
        _check_finite(h, "stem")
        for name, cin, cout, stride in cfg.block_names():
            h = self._block(name, h, cin, cout, stride, training, tape)
            _check_finite(h, name)
        pooled, shape = L.gap_forward(h)
        tape.append(("gap", None, shape))
        logits, cache = L.dense_forward(pooled, self.params["fc.w"], self.params["fc.b"])
        tape.append(("dense", "fc", cache))
        _check_finite(logits, "fc")
        self._tape = tape if training else None
        return logits

    def _block(self, name, x, cin, cout, stride, training, tape):
        tape.append(("block_begin", name, None))
        h = self._conv(f"{name}.conv1", x, stride, 1, tape)
        h = self._bn(f"{name}.bn1", h, training, tape)
        h = self._relu(h, tape)
        h = self._conv(f"{name}.conv2", h, 1, 1, tape)
        h = self._bn(f"{name}.bn2", h, training, tape)
        p = self.params
        h, cache = L.se_forward(h, p[f"{name}.se.w1"], p[f"{name}.se.b1"],
                                p[f"{name}.se.w2"], p[f"{name}.se.b2"])
        tape.append(("se", name, cache))
        if stride != 1 or cin != cout:
            tape.append(("shortcut_begin", name, None))
            sc = self._conv(f"{name}.down.conv", x, stride, 0, tape)
            sc = self._bn(f"{name}.down.bn", sc, training, tape)
        else:
            tape.append(("shortcut_begin", name, None))
            sc = x
        tape.append(("add", name, None))
        return self._relu(h + sc, tape)

    def predict_proba(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x)
        out = [L.softmax(self.forward(x[i:i + batch_size]).astype(np.float64))
               for i in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.zeros((0, self.config.n_classes))

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        return self.predict_proba(x, batch_size).argmax(axis=1)

    # -- backward -----------------------------------------------------------
    def backward(self, dlogits, frozen=()) -> dict:
        """Gradients of every parameter given dLoss/dLogits from the last training forward."""
        if self._tape is None:
            raise RuntimeError("backward needs a preceding forward(..., training=True)")
        grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        g = np.asarray(dlogits, dtype=self.dtype)
        # residual bookkeeping: gradient reaching each block output, and the
        # gradient flowing into the shortcut branch
        pending_skip = []
        for kind, name, cache in reversed(self._tape):
            if kind == "dense":
                g, grads["fc.w"], grads["fc.b"] = L.dense_backward(g, cache)
            elif kind == "gap":
                g = L.gap_backward(g, cache)
            elif kind == "relu":
                g = L.relu_backward(g, cache)
            elif kind == "add":
                # both branches receive the same gradient; walk the shortcut first
                pending_skip.append(g)
            elif kind == "shortcut_begin":
                # the shortcut branch entries were processed already (they sit
                # after this marker on the tape); g holds d(shortcut input)
                skip_dx = g
                g = pending_skip.pop()
                pending_skip.append(("dx", skip_dx))
            elif kind == "block_begin":
                tag, skip_dx = pending_skip.pop()
                g = g + skip_dx
            elif kind == "se":
                g, grads[f"{name}.se.w1"], grads[f"{name}.se.b1"], \
                    grads[f"{name}.se.w2"], grads[f"{name}.se.b2"] = L.se_backward(g, cache)
            elif kind == "bn":
                g, grads[f"{name}.gamma"], grads[f"{name}.beta"] = L.batchnorm_backward(g, cache)
            elif kind == "conv":
                g, grads[f"{name}.w"] = L.conv2d_backward(g, cache)
            elif kind == "maxpool":
                g = L.maxpool_backward(g, cache)
        for name in frozen:
            grads[name] = np.zeros_like(self.params[name])
        for name, value in grads.items():
            if not np.all(np.isfinite(value)):
                raise FloatingPointError(f"non-finite gradient for {name}")
        return grads


def _check_finite(x, where):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite activations after {where}")
