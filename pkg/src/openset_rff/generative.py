"""VAE, conditional VAE and plain autoencoder over 256x2 signal samples."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import nn_core
from .errors import ConfigError, LabelOutOfRange
from .nn_core import ConvT2D, Conv2D, Dense, Flatten, Network, ReLU, Reshape, TrainConfig

log = logging.getLogger(__name__)

LATENT_DIM = 32
GENERATION_BUDGET = 7500
# at 40 epochs prior draws decode off-manifold (about half the signal power of real samples)
VAE_CFG = TrainConfig(epochs=100, batch_size=64)
AE_CFG = TrainConfig(epochs=40, batch_size=64)
_SIG = (256, 2)


def encoder_spec(latent_out: int) -> list:
    return [
        nn_core.BatchNormFree(),
        Conv2D(16, (5, 2), (2, 1)),
        ReLU(),
        Conv2D(32, (5, 1), (2, 1)),
        ReLU(),
        Flatten(),
        Dense(latent_out),
    ]


def decoder_spec() -> list:
    return [
        nn_core.BatchNormFree(),
        Dense(32 * 64),
        ReLU(),
        Reshape((32, 64, 1)),
        ConvT2D(32, (5, 1), (2, 1)),
        ReLU(),
        ConvT2D(16, (5, 2), (2, 1)),
        ReLU(),
        ConvT2D(1, (1, 1), (1, 1)),
    ]


class _EncoderDecoder(nn.Module):
    kind = "ae"
    variational = False

    def __init__(self, latent_dim: int = LATENT_DIM, num_classes: int = 0, seed: int = 0):
        super().__init__()
        if latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        self.latent_dim = latent_dim
        self.num_classes = num_classes
        enc_out = 2 * latent_dim if self.variational else latent_dim
        self.encoder = Network(encoder_spec(enc_out), (1 + num_classes, *_SIG), seed=seed)
        self.decoder = Network(decoder_spec(), (latent_dim + num_classes,), seed=seed + 1)
        if num_classes:
            self._neutral_condition(enc_out, seed)
        self.history: nn_core.TrainHistory | None = None
        self.final_loss = float("nan")

    def _neutral_condition(self, enc_out, seed):
        """Start from the unconditional model's weights with zero weight on the one-hot inputs,
        so conditioning begins as a no-op."""
        ref_enc = Network(encoder_spec(enc_out), (1, *_SIG), seed=seed)
        ref_dec = Network(decoder_spec(), (self.latent_dim,), seed=seed + 1)
        with torch.no_grad():
            for net, ref in ((self.encoder, ref_enc), (self.decoder, ref_dec)):
                for p, q in zip(net.parameters(), ref.parameters()):
                    if p.shape == q.shape:
                        p.copy_(q)
                    else:  # first weight: signal slice from the reference, condition slice zero
                        p.zero_()
                        p[tuple(slice(0, n) for n in q.shape)] = q

    # onehot is None for unconditional models
    def _onehot(self, labels, n):
        if self.num_classes == 0:
            return None
        labels = torch.as_tensor(np.asarray(labels), dtype=torch.long).reshape(-1)
        if len(labels) != n:
            raise ConfigError("one label per sample is required")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            bad = int(labels[(labels < 0) | (labels >= self.num_classes)][0])
            raise LabelOutOfRange(bad, self.num_classes)
        return torch.nn.functional.one_hot(labels, self.num_classes).to(next(self.parameters()).dtype)

    def encode_raw(self, x: torch.Tensor, onehot=None) -> torch.Tensor:
        if onehot is not None:
            planes = onehot[:, :, None, None].expand(-1, -1, *x.shape[2:])
            x = torch.cat([x, planes], dim=1)
        return self.encoder(x)

    def decode_raw(self, z: torch.Tensor, onehot=None) -> torch.Tensor:
        if onehot is not None:
            z = torch.cat([z, onehot], dim=1)
        return self.decoder(z)

    def spec_hash(self) -> int:
        return nn_core.spec_hash(
            {
                "kind": self.kind,
                "latent_dim": self.latent_dim,
                "num_classes": self.num_classes,
                "encoder": self.encoder.describe(),
                "decoder": self.decoder.describe(),
            }
        )


class AEModel(_EncoderDecoder):
    kind = "ae"

    def __init__(self, latent_dim: int = LATENT_DIM, seed: int = 0):
        super().__init__(latent_dim, 0, seed)


class VAEModel(_EncoderDecoder):
    kind = "vae"
    variational = True

    def __init__(self, latent_dim: int = LATENT_DIM, seed: int = 0):
        super().__init__(latent_dim, 0, seed)


class CVAEModel(_EncoderDecoder):
    kind = "cvae"
    variational = True

    def __init__(self, latent_dim: int = LATENT_DIM, num_classes: int = 1, seed: int = 0):
        if num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        super().__init__(latent_dim, num_classes, seed)


MODEL_KINDS = {"ae": AEModel, "vae": VAEModel, "cvae": CVAEModel}


def _img(samples) -> torch.Tensor:
    x = nn_core.as_image(samples)
    if tuple(x.shape[1:]) != (1, *_SIG):
        raise ConfigError(f"samples must have shape (N, 256, 2), got {tuple(x.shape[:1]) + tuple(x.shape[2:])}")
    return x


def _sig(y: torch.Tensor) -> np.ndarray:
    return y.detach().squeeze(1).numpy().astype(np.float32)


def reconstruction_error(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    """Sum of squared errors per sample, averaged over the batch."""
    return nn_core.mse(x_hat, x) * x[0].numel()


def _train_variational(m: _EncoderDecoder, x, labels, cfg: TrainConfig, beta: float):
    onehot = m._onehot(labels, len(x)) if m.num_classes else None
    gen = torch.Generator().manual_seed(cfg.seed + 1)
    batches = []  # (batch size, recon, kl)

    def batch_loss(idx):
        xb = x[idx]
        oh = None if onehot is None else onehot[idx]
        h = m.encode_raw(xb, oh)
        mu, logvar = h[:, : m.latent_dim], h[:, m.latent_dim :]
        eta = torch.randn(mu.shape, generator=gen, dtype=mu.dtype)
        z = mu + torch.exp(0.5 * logvar) * eta
        rec = reconstruction_error(xb, m.decode_raw(z, oh))
        kl = nn_core.gaussian_kl(mu, logvar)
        batches.append((len(idx), float(rec.detach()), float(kl.detach())))
        return rec + beta * kl

    m.history = nn_core.fit(m, len(x), batch_loss, cfg)
    per_epoch = -(-len(x) // cfg.batch_size)
    rec_curve, kl_curve = [], []
    for e in range(0, len(batches), per_epoch):
        b = np.array(batches[e : e + per_epoch])
        rec_curve.append(float(np.sum(b[:, 0] * b[:, 1]) / np.sum(b[:, 0])))
        kl_curve.append(float(np.sum(b[:, 0] * b[:, 2]) / np.sum(b[:, 0])))
    m.history.components = {"recon": rec_curve, "kl": kl_curve}
    m.final_loss = m.history.train[-1]
    m.beta = beta
    return m


def train_vae(samples, latent_dim: int = LATENT_DIM, cfg: TrainConfig = VAE_CFG, beta: float = 1.0) -> VAEModel:
    """Fit a VAE (reconstruction SSE + beta * KL, reparameterized sampling)."""
    x = _img(samples)
    if len(x) < 50:
        raise ConfigError(f"train_vae needs >= 50 samples, got {len(x)}")
    m = VAEModel(latent_dim, seed=cfg.seed)
    return _train_variational(m, x, None, cfg, beta)


def train_cvae(
    samples,
    labels,
    num_classes: int | None = None,
    latent_dim: int = LATENT_DIM,
    cfg: TrainConfig = VAE_CFG,
    beta: float = 1.0,
) -> CVAEModel:
    """Fit a conditional VAE; the one-hot class feeds both encoder and decoder."""
    x = _img(samples)
    labels = np.asarray(labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    m = CVAEModel(latent_dim, num_classes, seed=cfg.seed)
    m._onehot(labels, len(x))  # range check before the count check
    counts = np.bincount(labels, minlength=num_classes)
    if counts.min() < 10:
        raise ConfigError(f"every class needs >= 10 samples, class {int(counts.argmin())} has {int(counts.min())}")
    return _train_variational(m, x, labels, cfg, beta)


def train_autoencoder(samples, latent_dim: int = LATENT_DIM, cfg: TrainConfig = AE_CFG) -> AEModel:
    x = _img(samples)
    m = AEModel(latent_dim, seed=cfg.seed)
    m.history = nn_core.fit(m, len(x), lambda idx: nn_core.mse(m.decode_raw(m.encode_raw(x[idx])), x[idx]), cfg)
    m.final_loss = m.history.train[-1]
    return m


def encode(m: _EncoderDecoder, x, labels=None) -> np.ndarray:
    """Latent code per sample; the posterior mean for variational models."""
    xt = _img(x)
    m.eval()
    oh = m._onehot(labels, len(xt)) if m.num_classes else None
    with torch.no_grad():
        h = torch.cat([m.encode_raw(xt[i : i + 1024], None if oh is None else oh[i : i + 1024]) for i in range(0, len(xt), 1024)]) if len(xt) else torch.zeros(0, m.latent_dim)
    return h[:, : m.latent_dim].numpy().astype(np.float64)


def decode(m: _EncoderDecoder, z, labels=None) -> np.ndarray:
    zt = nn_core.as_tensor(np.atleast_2d(np.asarray(z, dtype=np.float64)))
    if zt.shape[1] != m.latent_dim:
        raise ConfigError(f"latent codes must have {m.latent_dim} columns")
    m.eval()
    oh = m._onehot(labels, len(zt)) if m.num_classes else None
    out = []
    with torch.no_grad():
        for i in range(0, len(zt), 1024):
            out.append(_sig(m.decode_raw(zt[i : i + 1024], None if oh is None else oh[i : i + 1024])))
    return np.concatenate(out) if out else np.zeros((0, *_SIG), dtype=np.float32)


def sample_vae(m: VAEModel, count: int, seed: int) -> np.ndarray:
    if count < 1:
        raise ConfigError("count must be >= 1")
    z = np.random.default_rng(seed).standard_normal((count, m.latent_dim))
    return decode(m, z)


def class_partition(total: int, num_classes: int) -> list[int]:
    """floor(total / k) per class, remainder to the lowest class ids."""
    base, rem = divmod(total, num_classes)
    return [base + (1 if c < rem else 0) for c in range(num_classes)]


def sample_cvae(m: CVAEModel, total: int = GENERATION_BUDGET, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Class-proportional generation; returns (samples, class labels)."""
    if total < m.num_classes:
        raise ConfigError(f"total {total} < num_classes {m.num_classes}")
    counts = class_partition(total, m.num_classes)
    labels = np.repeat(np.arange(m.num_classes), counts)
    z = np.random.default_rng(seed).standard_normal((total, m.latent_dim))
    return decode(m, z, labels), labels


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_model(m: _EncoderDecoder, path) -> None:
    nn_core.save_params(path, m, m.spec_hash())
    meta = {"kind": m.kind, "latent_dim": m.latent_dim, "num_classes": m.num_classes, "spec_hash": f"{m.spec_hash():016x}"}
    if hasattr(m, "class_ids"):
        meta["class_ids"] = list(m.class_ids)
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_model(path) -> _EncoderDecoder:
    meta = json.loads(sidecar_path(path).read_text())
    cls = MODEL_KINDS[meta["kind"]]
    if meta["kind"] == "cvae":
        m = cls(meta["latent_dim"], meta["num_classes"])
    else:
        m = cls(meta["latent_dim"])
    nn_core.load_params(path, m, m.spec_hash())
    if "class_ids" in meta:
        m.class_ids = meta["class_ids"]
    m.eval()
    return m
