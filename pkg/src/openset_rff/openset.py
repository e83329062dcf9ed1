"""Open-set evaluation: split protocol, One-vs-All classifier, accuracy."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import nn_core
from .errors import ConfigError, EmptyTestSet, InvalidSplitSpec
from .fingerprint_sim import Corpus
from .nn_core import Dense, Network, TrainConfig

log = logging.getLogger(__name__)

OUTLIER = -1
TRAINVAL_FRACTION = (7, 10)
TRAIN_FRACTION = (8, 10)
DEFAULT_TAU = 0.5
PATIENCE = 10
OVA_CFG = TrainConfig(learning_rate=1e-3, batch_size=128, epochs=15, seed=0)


@dataclass(frozen=True)
class SplitSpec:
    authorized: tuple[int, ...]
    known_outliers: tuple[int, ...] = ()
    test_outliers: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self):
        a, k, o = set(self.authorized), set(self.known_outliers), set(self.test_outliers)
        if len(a) != len(self.authorized) or len(k) != len(self.known_outliers) or len(o) != len(self.test_outliers):
            raise InvalidSplitSpec("duplicate transmitter ids")
        if len(a) < 2:
            raise InvalidSplitSpec("need at least 2 authorized transmitters")
        if a & k or a & o or k & o:
            raise InvalidSplitSpec(f"A, K and O must be pairwise disjoint (overlap {sorted((a & k) | (a & o) | (k & o))})")


@dataclass
class LabeledSet:
    """Samples with open-set labels: authorized class index, or OUTLIER (-1)."""

    iq: np.ndarray
    labels: np.ndarray
    tx_ids: np.ndarray
    index: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.labels)

    def where(self, mask) -> "LabeledSet":
        return LabeledSet(self.iq[mask], self.labels[mask], self.tx_ids[mask], self.index[mask] if len(self.index) else self.index)

    @property
    def outlier_mask(self) -> np.ndarray:
        return self.labels == OUTLIER


def _frac(n, num_den):
    num, den = num_den
    return (num * n + den // 2) // den


def make_split(corpus: Corpus, spec: SplitSpec) -> tuple[LabeledSet, LabeledSet, LabeledSet]:
    """Per authorized transmitter 70% to train+val and 30% to test; all K samples
    join train+val, which is shuffled and split 80/20; O samples go to test."""
    present = set(corpus.transmitters)
    missing = [t for t in (*spec.authorized, *spec.known_outliers, *spec.test_outliers) if t not in present]
    if missing:
        raise InvalidSplitSpec(f"transmitters not in corpus: {missing}")
    rng = np.random.default_rng(spec.seed)
    pool, test = [], []
    for t in spec.authorized:
        idx = rng.permutation(np.flatnonzero(corpus.tx_ids == t))
        k = _frac(len(idx), TRAINVAL_FRACTION)
        pool.append(idx[:k])
        test.append(idx[k:])
    for t in spec.known_outliers:
        pool.append(np.flatnonzero(corpus.tx_ids == t))
    for t in spec.test_outliers:
        test.append(np.flatnonzero(corpus.tx_ids == t))
    pool = rng.permutation(np.concatenate(pool))
    n_train = _frac(len(pool), TRAIN_FRACTION)
    label_of = {t: i for i, t in enumerate(spec.authorized)}

    def build(idx):
        idx = np.asarray(idx, dtype=np.int64)
        tx = corpus.tx_ids[idx].astype(np.int64)
        labels = np.array([label_of.get(int(t), OUTLIER) for t in tx], dtype=np.int64)
        return LabeledSet(corpus.iq[idx], labels, tx, idx)

    return build(pool[:n_train]), build(pool[n_train:]), build(np.concatenate(test))


def split_hash(*sets: LabeledSet) -> str:
    h = hashlib.sha256()
    for s in sets:
        h.update(np.asarray(s.index, dtype="<i8").tobytes())
        h.update(b"|")
    return h.hexdigest()[:16]


class OvAModel(nn.Module):
    """Feature extractor + |A| parallel sigmoid heads; rejects when every head is below tau."""

    def __init__(self, num_authorized: int, tau: float = DEFAULT_TAU, seed: int = 0):
        super().__init__()
        if num_authorized < 1:
            raise ConfigError("num_authorized must be >= 1")
        if not 0.0 < tau < 1.0:
            raise ConfigError("tau must lie in (0, 1)")
        self.num_authorized = num_authorized
        self.tau = tau
        self.net = Network(nn_core.feature_extractor_spec() + [Dense(num_authorized)], (1, 256, 2), seed=seed)

    def logits(self, x):
        return self.net(x)

    def forward(self, x):
        return torch.sigmoid(self.net(x))

    def scores(self, iq) -> np.ndarray:
        self.eval()
        return nn_core.predict_batched(self.forward, nn_core.as_image(iq)).numpy()


def ova_targets(labels, num_authorized: int) -> np.ndarray:
    """Authorized class i -> one-hot row i; OUTLIER -> all zeros."""
    labels = np.asarray(labels, dtype=np.int64)
    t = np.zeros((len(labels), num_authorized), dtype=np.float32)
    pos = labels != OUTLIER
    t[np.flatnonzero(pos), labels[pos]] = 1.0
    return t


def train_ova(
    train: LabeledSet,
    val: LabeledSet | None,
    num_authorized: int,
    cfg: TrainConfig = OVA_CFG,
    augmentation: np.ndarray | None = None,
    tau: float = DEFAULT_TAU,
    patience: int = PATIENCE,
) -> OvAModel:
    """Per-head BCE; generated outliers are appended to the training set with all-zero targets.
    Keeps the parameters of the epoch with the lowest validation loss."""
    if len(train) == 0:
        raise ConfigError("training set is empty")
    if np.any(train.labels >= num_authorized):
        raise ConfigError("training labels exceed num_authorized")
    iq, labels = train.iq, train.labels
    if augmentation is not None and len(augmentation):
        iq = np.concatenate([iq, np.asarray(augmentation, dtype=np.float32)])
        labels = np.concatenate([labels, np.full(len(augmentation), OUTLIER)])
    m = OvAModel(num_authorized, tau, seed=cfg.seed)
    x = nn_core.as_image(iq)
    y = torch.from_numpy(ova_targets(labels, num_authorized))
    val_fn = None
    if val is not None and len(val):
        xv = nn_core.as_image(val.iq)
        yv = torch.from_numpy(ova_targets(val.labels, num_authorized))
        val_fn = lambda: float(nn_core.bce(nn_core.predict_batched(m.logits, xv), yv, logits=True))
    m.history = nn_core.fit(m, len(x), lambda idx: nn_core.bce(m.logits(x[idx]), y[idx], logits=True), cfg, val_fn, patience)
    return m


def decide(scores, tau: float = DEFAULT_TAU) -> np.ndarray:
    """OUTLIER when the best head is below tau, else the argmax head (lowest index on ties)."""
    scores = np.atleast_2d(np.asarray(scores))
    best = np.argmax(scores, axis=1)
    return np.where(scores[np.arange(len(scores)), best] < tau, OUTLIER, best)


def predict(m: OvAModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float32).reshape(-1, 256, 2)
    return decide(m.scores(x), m.tau)


def accuracy(predicted, truth) -> float:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if len(truth) == 0:
        raise EmptyTestSet()
    return float(np.mean(predicted == truth))


def evaluate(m: OvAModel, test: LabeledSet) -> float:
    """Accuracy of the (|A|+1)-way decision over the test set."""
    if len(test) == 0:
        raise EmptyTestSet()
    return accuracy(predict(m, test.iq), test.labels)
