"""Small layer-spec network builder on top of torch.

Networks are declared as a list of layer descriptors and an input shape
(channels, time, width) or (features,). Images follow the 256x2x1 sample layout
as (C=1, H=256, W=2); convolutions pad along time only and slide with stride
(s, 1), so the width axis is never strided.

torch supplies autograd and the optimizers; this module fixes the layer set,
shape checking, weight init, the training loop, and the ORNN parameter format.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, NonFiniteLoss, ShapeError, SpecHashMismatch, TrainingDiverged

log = logging.getLogger(__name__)

CLAMP = 1e-7


# ---------------------------------------------------------------- layer specs


@dataclass(frozen=True)
class Dense:
    out: int


@dataclass(frozen=True)
class Conv2D:
    filters: int
    kernel: tuple[int, int] = (3, 1)
    stride: tuple[int, int] = (1, 1)


@dataclass(frozen=True)
class ConvT2D:
    filters: int
    kernel: tuple[int, int] = (3, 1)
    stride: tuple[int, int] = (1, 1)


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Sigmoid:
    pass


@dataclass(frozen=True)
class Softmax:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Reshape:
    shape: tuple[int, ...]


@dataclass(frozen=True)
class ResidualBlock:
    filters: int


@dataclass(frozen=True)
class BatchNormFree:
    """Marker: the network deliberately has no normalization layers. No-op."""


LAYER_KINDS = (Dense, Conv2D, ConvT2D, ReLU, Sigmoid, Softmax, Flatten, Reshape, ResidualBlock, BatchNormFree)


def feature_extractor_spec(filters: int = 32, hidden: int = 128) -> list:
    """Residual feature extractor shared by the OvA classifier and the judge."""
    return [
        BatchNormFree(),
        Conv2D(filters, (3, 2), (1, 1)),
        ReLU(),
        ResidualBlock(filters),
        Conv2D(filters, (3, 1), (2, 1)),
        ReLU(),
        ResidualBlock(filters),
        Flatten(),
        Dense(hidden),
        ReLU(),
    ]


# -------------------------------------------------------------- torch modules


def _he_uniform(t: torch.Tensor, fan_in: int, gen: torch.Generator):
    bound = math.sqrt(6.0 / fan_in)
    with torch.no_grad():
        t.uniform_(-bound, bound, generator=gen)


class _Dense(nn.Module):
    def __init__(self, n_in, n_out, gen):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n_out, n_in))
        self.bias = nn.Parameter(torch.zeros(n_out))
        _he_uniform(self.weight, n_in, gen)

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class _Conv(nn.Module):
    def __init__(self, c_in, spec: Conv2D, gen):
        super().__init__()
        kh, kw = spec.kernel
        self.weight = nn.Parameter(torch.empty(spec.filters, c_in, kh, kw))
        self.bias = nn.Parameter(torch.zeros(spec.filters))
        self.stride = spec.stride[0]
        self.pad = kh // 2
        _he_uniform(self.weight, c_in * kh * kw, gen)

    def forward(self, x):
        n, c, h, w = x.shape
        f, _, kh, kw = self.weight.shape
        if w == kw:
            # width collapses to 1: same arithmetic as a 1-D conv over (C*W) channels, and faster
            x1 = x.transpose(2, 3).reshape(n, c * w, h)
            w1 = self.weight.transpose(2, 3).reshape(f, c * kw, kh)
            return F.conv1d(x1, w1, self.bias, stride=self.stride, padding=self.pad).unsqueeze(-1)
        return F.conv2d(x, self.weight, self.bias, stride=(self.stride, 1), padding=(self.pad, 0))


class _ConvT(nn.Module):
    def __init__(self, c_in, spec: ConvT2D, gen):
        super().__init__()
        kh, kw = spec.kernel
        self.weight = nn.Parameter(torch.empty(c_in, spec.filters, kh, kw))
        self.bias = nn.Parameter(torch.zeros(spec.filters))
        self.stride = spec.stride[0]
        self.pad = kh // 2
        _he_uniform(self.weight, c_in * kh * kw, gen)

    def forward(self, x):
        n, c, h, w = x.shape
        _, f, kh, kw = self.weight.shape
        op = self.stride - 1
        if w == 1:
            w1 = self.weight.transpose(2, 3).reshape(c, f * kw, kh)
            b1 = self.bias.repeat_interleave(kw)
            y = F.conv_transpose1d(x.squeeze(-1), w1, b1, stride=self.stride, padding=self.pad, output_padding=op)
            return y.reshape(n, f, kw, -1).transpose(2, 3)
        return F.conv_transpose2d(
            x, self.weight, self.bias, stride=(self.stride, 1), padding=(self.pad, 0), output_padding=(op, 0)
        )


class _Residual(nn.Module):
    def __init__(self, f, gen):
        super().__init__()
        self.c1 = _Conv(f, Conv2D(f, (3, 1)), gen)
        self.c2 = _Conv(f, Conv2D(f, (3, 1)), gen)

    def forward(self, x):
        return torch.relu(self.c2(torch.relu(self.c1(x))) + x)


class _Reshape(nn.Module):
    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x):
        return x.reshape(x.shape[0], *self.shape)


def _conv_out(h, w, spec: Conv2D):
    kh, kw = spec.kernel
    s = spec.stride[0]
    return (h + 2 * (kh // 2) - kh) // s + 1, w - kw + 1


def _convt_out(h, w, spec: ConvT2D):
    kh, kw = spec.kernel
    s = spec.stride[0]
    return (h - 1) * s - 2 * (kh // 2) + kh + (s - 1), w - 1 + kw


class Network(nn.Module):
    """Sequential network built from layer descriptors, with static shape checking."""

    def __init__(self, layers: Sequence, input_shape: Sequence[int], seed: int = 0):
        super().__init__()
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        gen = torch.Generator().manual_seed(int(seed))
        mods = []
        shape = self.input_shape
        self.shapes = [shape]
        for i, layer in enumerate(self.layers):
            mod, shape = self._build(i, layer, shape, gen)
            mods.append(mod)
            self.shapes.append(shape)
        self.body = nn.ModuleList(mods)
        self.output_shape = shape

    @staticmethod
    def _build(i, layer, shape, gen):
        if not isinstance(layer, LAYER_KINDS):
            raise ShapeError(i, f"unknown layer {layer!r}")
        if isinstance(layer, (Conv2D, ConvT2D)):
            if len(shape) != 3:
                raise ShapeError(i, f"{type(layer).__name__} needs (C, H, W) input, got {shape}")
            if layer.stride[1] != 1:
                raise ShapeError(i, "stride along the width axis must be 1")
            c, h, w = shape
            if isinstance(layer, Conv2D):
                if layer.kernel[1] > w:
                    raise ShapeError(i, f"kernel width {layer.kernel[1]} exceeds input width {w}")
                oh, ow = _conv_out(h, w, layer)
                return _Conv(c, layer, gen), (layer.filters, oh, ow)
            oh, ow = _convt_out(h, w, layer)
            return _ConvT(c, layer, gen), (layer.filters, oh, ow)
        if isinstance(layer, ResidualBlock):
            if len(shape) != 3 or shape[0] != layer.filters:
                raise ShapeError(i, f"ResidualBlock({layer.filters}) needs {layer.filters} input channels, got {shape}")
            return _Residual(layer.filters, gen), shape
        if isinstance(layer, Dense):
            if len(shape) != 1:
                raise ShapeError(i, f"Dense needs flat input, got {shape}")
            return _Dense(shape[0], layer.out, gen), (layer.out,)
        if isinstance(layer, Flatten):
            return nn.Flatten(), (int(np.prod(shape)),)
        if isinstance(layer, Reshape):
            if int(np.prod(layer.shape)) != int(np.prod(shape)):
                raise ShapeError(i, f"cannot reshape {shape} to {layer.shape}")
            return _Reshape(layer.shape), tuple(layer.shape)
        if isinstance(layer, Softmax):
            if len(shape) != 1:
                raise ShapeError(i, f"Softmax needs flat input, got {shape}")
            return nn.Softmax(dim=1), shape
        if isinstance(layer, ReLU):
            return nn.ReLU(), shape
        if isinstance(layer, Sigmoid):
            return nn.Sigmoid(), shape
        return nn.Identity(), shape  # BatchNormFree

    def forward(self, x):
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(0, f"expected input (N, {', '.join(map(str, self.input_shape))}), got {tuple(x.shape)}")
        for mod in self.body:
            x = mod(x)
        return x

    def describe(self) -> list:
        return [{"layer": type(l).__name__, **asdict(l)} for l in self.layers]

    def spec_hash(self) -> int:
        return spec_hash({"input": list(self.input_shape), "layers": self.describe()})

    def n_params(self) -> int:
        return sum(p.numel() for p in self.parameters())


def spec_hash(obj) -> int:
    blob = json.dumps(obj, sort_keys=True, default=list).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:8], "little")


# --------------------------------------------------------------------- losses


def _check_finite(*ts):
    for t in ts:
        if not torch.all(torch.isfinite(t)):
            raise NonFiniteLoss()


def mse(pred, target):
    _check_finite(pred, target)
    return torch.mean((pred - target) ** 2)


def bce(pred, target, logits=False):
    _check_finite(pred, target)
    if logits:
        return F.binary_cross_entropy_with_logits(pred, target)
    p = pred.clamp(CLAMP, 1 - CLAMP)
    return -torch.mean(target * torch.log(p) + (1 - target) * torch.log(1 - p))


def cross_entropy(pred, target, logits=False):
    """Mean over rows of -sum(target * log p). ``target`` is a probability (one-hot) matrix."""
    _check_finite(pred, target)
    logp = F.log_softmax(pred, dim=1) if logits else torch.log(pred.clamp(CLAMP, 1.0))
    return -torch.mean(torch.sum(target * logp, dim=1))


def gaussian_kl(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dims, averaged over rows."""
    _check_finite(mu, logvar)
    return torch.mean(-0.5 * torch.sum(1 + logvar - mu**2 - torch.exp(logvar), dim=1))


LOSSES = {"mse": mse, "bce": bce, "cross_entropy": cross_entropy, "gaussian_kl": gaussian_kl}


def loss(kind: str, prediction, target):
    """Scalar loss. For ``gaussian_kl`` pass (mu, logvar) as (prediction, target)."""
    try:
        fn = LOSSES[kind]
    except KeyError:
        raise ConfigError(f"unknown loss {kind!r}") from None
    return fn(torch.as_tensor(prediction), torch.as_tensor(target))


# ------------------------------------------------------ forward / backward API


def as_tensor(x, dtype=torch.float32) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x if dtype is None else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def as_image(iq) -> torch.Tensor:
    """(N, 256, 2) samples -> (N, 1, 256, 2) tensor."""
    return as_tensor(iq).unsqueeze(1)


def _dtype(net: nn.Module):
    # parameter-free networks keep the input's precision
    p = next(net.parameters(), None)
    return None if p is None else p.dtype


def forward(net: Network, x) -> torch.Tensor:
    with torch.no_grad():
        return net(as_tensor(x, _dtype(net)))


def backward(net: Network, x, loss_fn: Callable[[torch.Tensor], torch.Tensor]):
    """Gradients of ``loss_fn(net(x))`` w.r.t. every parameter and the input."""
    xt = as_tensor(x, _dtype(net)).clone().requires_grad_(True)
    params = dict(net.named_parameters())
    out = loss_fn(net(xt))
    grads = torch.autograd.grad(out, [xt, *params.values()], allow_unused=True)
    gx, gp = grads[0], grads[1:]
    param_grads = {k: (torch.zeros_like(p) if g is None else g) for (k, p), g in zip(params.items(), gp)}
    return param_grads, gx


# ------------------------------------------------------------------- training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 20
    seed: int = 0
    optimizer: str = "adam_like"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.optimizer not in ("adam_like", "sgd_momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainHistory:
    train: list[float] = field(default_factory=list)
    val: list[float] = field(default_factory=list)
    best_epoch: int = -1


def make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam_like":
        return torch.optim.Adam(params, lr=cfg.learning_rate, betas=(0.9, 0.999), eps=1e-8)
    return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=0.9)


def fit(
    module: nn.Module,
    n: int,
    batch_loss: Callable[[np.ndarray], torch.Tensor],
    cfg: TrainConfig,
    val_loss: Callable[[], float] | None = None,
    patience: int | None = None,
) -> TrainHistory:
    """Minibatch loop over ``n`` samples; ``batch_loss(idx)`` returns the mean loss of a batch.

    With ``val_loss`` the parameters of the best validation epoch are restored at
    the end; ``patience`` stops after that many epochs without improvement.
    """
    if n < 1:
        raise ConfigError("training data is empty")
    rng = np.random.default_rng(cfg.seed)
    opt = make_optimizer(module.parameters(), cfg)
    hist = TrainHistory()
    best, best_state, stale = math.inf, None, 0
    for epoch in range(cfg.epochs):
        module.train()
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            opt.zero_grad()
            try:
                l = batch_loss(idx)
            except NonFiniteLoss:
                raise TrainingDiverged(epoch) from None
            if not torch.isfinite(l):
                raise TrainingDiverged(epoch)
            l.backward()
            opt.step()
            total += float(l.detach()) * len(idx)
        hist.train.append(total / n)
        if not math.isfinite(hist.train[-1]):
            raise TrainingDiverged(epoch)
        if val_loss is not None:
            module.eval()
            with torch.no_grad():
                v = float(val_loss())
            hist.val.append(v)
            if v < best:
                best, best_state, stale = v, copy.deepcopy(module.state_dict()), 0
                hist.best_epoch = epoch
            else:
                stale += 1
                if patience is not None and stale >= patience:
                    break
    if best_state is not None:
        module.load_state_dict(best_state)
    else:
        hist.best_epoch = len(hist.train) - 1
    module.eval()
    return hist


def train(net: Network, data, targets, loss_fn, cfg: TrainConfig):
    """Fit ``net`` so that ``loss_fn(net(data), targets)`` decreases; returns (params, loss_curve)."""
    dtype = next(net.parameters()).dtype
    x, y = as_tensor(data, dtype), as_tensor(targets, dtype)
    if isinstance(loss_fn, str):
        loss_fn = LOSSES[loss_fn]
    hist = fit(net, len(x), lambda idx: loss_fn(net(x[idx]), y[idx]), cfg)
    params = {k: v.detach().clone() for k, v in net.named_parameters()}
    return params, hist.train


def predict_batched(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor, batch: int = 1024) -> torch.Tensor:
    with torch.no_grad():
        return torch.cat([fn(x[i : i + batch]) for i in range(0, len(x), batch)]) if len(x) else fn(x)


# -------------------------------------------------------------- ORNN format

_ORNN = struct.Struct("<4sQQ")


def save_params(path, module: nn.Module, hash_: int) -> None:
    flat = torch.cat([p.detach().reshape(-1).float() for p in module.parameters()]).numpy().astype("<f4")
    with open(path, "wb") as f:
        f.write(_ORNN.pack(b"ORNN", hash_, flat.size))
        f.write(flat.tobytes())


def load_params(path, module: nn.Module, hash_: int) -> None:
    raw = Path(path).read_bytes()
    magic, found, count = _ORNN.unpack_from(raw)
    if magic != b"ORNN":
        raise ConfigError(f"{path}: not an ORNN parameter file")
    if found != hash_:
        raise SpecHashMismatch(hash_, found)
    params = list(module.parameters())
    expected = sum(p.numel() for p in params)
    if count != expected or len(raw) != _ORNN.size + 4 * count:
        raise ConfigError(f"{path}: parameter count {count} does not match network ({expected})")
    flat = torch.from_numpy(np.frombuffer(raw, dtype="<f4", offset=_ORNN.size).copy())
    with torch.no_grad():
        i = 0
        for p in params:
            p.copy_(flat[i : i + p.numel()].view_as(p))
            i += p.numel()
