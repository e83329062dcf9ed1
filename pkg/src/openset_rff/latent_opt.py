"""Blind outlier generation by latent-space optimization against an |A|+1-class judge.

For an authorized sample x, gradient descent on the latent code z minimizes

    ||E(x) - z||_2 + lam * CE(onehot(|A|), C(D(z)))

so that D(z) stays close to x in latent space while the judge C calls it an
outlier. ``run_algorithm1`` alternates that search over the authorized set
with warm-started judge retraining on X plus the generated outliers.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import nn_core
from .errors import Algorithm1Unstable, ConfigError, NonFiniteObjective
from .generative import GENERATION_BUDGET, _EncoderDecoder, decode
from .nn_core import Dense, Network, TrainConfig

log = logging.getLogger(__name__)


class JudgeClassifier(nn.Module):
    """Feature extractor + Dense(|A|+1). ``forward`` returns softmax probabilities;
    index |A| is the outlier class."""

    def __init__(self, num_authorized: int, seed: int = 0):
        super().__init__()
        if num_authorized < 2:
            raise ConfigError("the judge needs >= 2 authorized classes")
        self.num_authorized = num_authorized
        self.net = Network(nn_core.feature_extractor_spec() + [Dense(num_authorized + 1)], (1, 256, 2), seed=seed)

    @property
    def outlier_index(self) -> int:
        return self.num_authorized

    def logits(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)

    def forward(self, x):
        return torch.softmax(self.net(x), dim=1)

    def predict_proba(self, iq) -> np.ndarray:
        self.eval()
        x = nn_core.as_image(iq)
        return nn_core.predict_batched(self.forward, x).numpy()


@dataclass(frozen=True)
class OptConfig:
    inner_steps: int = 200
    inner_lr: float = 0.05
    outer_iters: int = 3
    lam: float = 1.0
    init_noise_std: float = 0.01
    retrain_epochs: int = 5
    batch: int = 500

    def __post_init__(self):
        if self.inner_steps < 1 or self.outer_iters < 1:
            raise ConfigError("inner_steps and outer_iters must be >= 1")
        if self.lam < 0 or self.init_noise_std < 0 or self.inner_lr <= 0:
            raise ConfigError("lam and init_noise_std must be >= 0, inner_lr > 0")


JUDGE_CFG = TrainConfig(learning_rate=1e-3, batch_size=64, epochs=15, seed=0)


def _judge_targets(labels, k):
    return torch.nn.functional.one_hot(torch.as_tensor(labels, dtype=torch.long), k + 1).float()


def train_judge(X, labels, num_authorized: int, cfg: TrainConfig = JUDGE_CFG, judge: JudgeClassifier | None = None) -> JudgeClassifier:
    """Cross-entropy training over |A|+1 classes; labels == num_authorized mark outliers.

    Passing ``judge`` warm-starts from its current parameters.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() > num_authorized):
        raise ConfigError("judge labels must lie in [0, |A|]")
    if judge is None:
        judge = JudgeClassifier(num_authorized, seed=cfg.seed)
    x = nn_core.as_image(X)
    y = _judge_targets(labels, num_authorized)
    judge.history = nn_core.fit(judge, len(x), lambda idx: nn_core.cross_entropy(judge.logits(x[idx]), y[idx], logits=True), cfg)
    return judge


def _safe_norm(d: torch.Tensor) -> torch.Tensor:
    # subgradient 0 at d == 0 instead of NaN
    sq = torch.sum(d * d, dim=1)
    pos = sq > 0
    return torch.where(pos, torch.sqrt(torch.where(pos, sq, torch.ones_like(sq))), torch.zeros_like(sq))


def objective_terms(z: torch.Tensor, ex: torch.Tensor, ae: _EncoderDecoder, judge: JudgeClassifier, lam: float):
    """Per-sample (proximity, judge cross-entropy) for latent batch z anchored at ex = E(x)."""
    prox = _safe_norm(ex - z)
    logits = judge.logits(ae.decode_raw(z))
    ce = -torch.log_softmax(logits, dim=1)[:, judge.outlier_index]
    return prox, ce


def outlier_objective(z, x, ae: _EncoderDecoder, judge: JudgeClassifier, lam: float = 1.0):
    """||E(x) - z|| + lam * CE(onehot(|A|), C(D(z))) for one sample or a batch."""
    single = np.ndim(z) == 1
    zt = nn_core.as_tensor(np.atleast_2d(z), next(ae.parameters()).dtype)
    xt = nn_core.as_image(np.asarray(x).reshape(-1, 256, 2)).to(zt.dtype)
    with torch.no_grad():
        ex = ae.encode_raw(xt)[:, : ae.latent_dim]
        prox, ce = objective_terms(zt, ex, ae, judge, lam)
        val = (prox + lam * ce).numpy()
    if not np.all(np.isfinite(val)):
        raise NonFiniteObjective()
    return float(val[0]) if single else val


@dataclass
class LatentResult:
    z: np.ndarray
    initial_objective: np.ndarray
    best_objective: np.ndarray
    aborted: np.ndarray


def optimize_latent(x, ae: _EncoderDecoder, judge: JudgeClassifier, cfg: OptConfig = OptConfig(), seed=0) -> LatentResult:
    """Gradient descent on z from E(x) + noise; keeps the best iterate per sample.

    Samples whose objective turns non-finite are marked ``aborted`` and keep
    their best finite iterate.
    """
    rng = np.random.default_rng(seed)
    xt = nn_core.as_image(np.asarray(x).reshape(-1, 256, 2))
    ae.eval()
    judge.eval()
    params = [p for p in list(ae.parameters()) + list(judge.parameters())]
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        zs, z0s, bests, aborts = [], [], [], []
        for s in range(0, len(xt), cfg.batch):
            with torch.no_grad():
                ex = ae.encode_raw(xt[s : s + cfg.batch])[:, : ae.latent_dim]
            noise = torch.as_tensor(rng.standard_normal(tuple(ex.shape)) * cfg.init_noise_std, dtype=ex.dtype)
            r = _descend(ex, ex + noise, ae, judge, cfg)
            zs.append(r[0]), z0s.append(r[1]), bests.append(r[2]), aborts.append(r[3])
    finally:
        for p, f in zip(params, flags):
            p.requires_grad_(f)
    cat = lambda a: np.concatenate(a) if a else np.zeros(0)
    return LatentResult(
        np.concatenate(zs) if zs else np.zeros((0, ae.latent_dim)), cat(z0s), cat(bests), cat(aborts).astype(bool)
    )


def _descend(ex, z0, ae, judge, cfg: OptConfig):
    z = z0.clone()
    best_z = z0.clone()
    best = torch.full((len(z),), float("inf"), dtype=z.dtype)
    initial = None
    aborted = torch.zeros(len(z), dtype=torch.bool)
    for step in range(cfg.inner_steps + 1):
        z.requires_grad_(True)
        prox, ce = objective_terms(z, ex, ae, judge, cfg.lam)
        obj = prox + cfg.lam * ce
        (g,) = torch.autograd.grad(obj.sum(), z)
        with torch.no_grad():
            val = obj.detach()
            bad = ~torch.isfinite(val) | ~torch.all(torch.isfinite(g), dim=1)
            if initial is None:
                initial = val.clone()
            aborted |= bad
            better = (val < best) & ~aborted
            best = torch.where(better, val, best)
            best_z[better] = z.detach()[better]
            if step == cfg.inner_steps:
                break
            g[aborted] = 0.0
            z = z.detach() - cfg.inner_lr * g
    return best_z.numpy(), initial.numpy(), best.numpy(), aborted.numpy()


@dataclass
class Algorithm1Result:
    samples: np.ndarray
    judge: JudgeClassifier
    latent: np.ndarray
    initial_objective: np.ndarray
    best_objective: np.ndarray
    aborted_per_iter: list[int] = field(default_factory=list)
    seconds: float = 0.0


def run_algorithm1(
    X,
    labels,
    num_authorized: int,
    ae: _EncoderDecoder,
    cfg: OptConfig = OptConfig(),
    count: int = GENERATION_BUDGET,
    seed: int = 0,
    judge: JudgeClassifier | None = None,
    judge_cfg: TrainConfig = JUDGE_CFG,
) -> Algorithm1Result:
    """Iterative judge-guided outlier generation.

    Each outer iteration optimizes one latent code per authorized sample, cycling
    through X until ``count`` outliers exist, then (except after the last
    iteration) warm-retrains the judge on X labeled by class plus the outliers
    labeled |A|. Returns the last iteration's outliers and the judge that
    produced them.
    """
    t0 = time.perf_counter()
    X = np.asarray(X, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    if judge is None:
        judge = train_judge(X, labels, num_authorized, judge_cfg)
    aborted_hist = []
    for it in range(cfg.outer_iters):
        order = rng.permutation(len(X))
        zs, init, best = [], [], []
        n_done = n_abort = 0
        pos = 0
        while n_done < count:
            want = count - n_done
            idx = order[(pos + np.arange(want)) % len(X)]
            pos += want
            r = optimize_latent(X[idx], ae, judge, cfg, seed=rng)
            keep = ~r.aborted
            n_abort += int(r.aborted.sum())
            attempted = n_done + int(keep.sum()) + n_abort
            if n_abort > 0.5 * attempted:
                raise Algorithm1Unstable(it, n_abort, attempted)
            zs.append(r.z[keep])
            init.append(r.initial_objective[keep])
            best.append(r.best_objective[keep])
            n_done += int(keep.sum())
        if n_abort:
            log.warning("algorithm1 iteration %d: %d latent optimizations aborted", it, n_abort)
        aborted_hist.append(n_abort)
        z = np.concatenate(zs)
        outliers = decode(ae, z)
        log.info("algorithm1 iteration %d: generated %d outliers", it, len(outliers))
        if it < cfg.outer_iters - 1:
            retrain = TrainConfig(
                learning_rate=judge_cfg.learning_rate,
                batch_size=judge_cfg.batch_size,
                epochs=cfg.retrain_epochs,
                seed=judge_cfg.seed + it + 1,
                optimizer=judge_cfg.optimizer,
            )
            Xr = np.concatenate([X, outliers])
            yr = np.concatenate([labels, np.full(len(outliers), num_authorized)])
            judge = train_judge(Xr, yr, num_authorized, retrain, judge=judge)
    return Algorithm1Result(
        samples=outliers,
        judge=judge,
        latent=z,
        initial_objective=np.concatenate(init),
        best_objective=np.concatenate(best),
        aborted_per_iter=aborted_hist,
        seconds=time.perf_counter() - t0,
    )
