"""Experiment sweeps: paired augmented / non-augmented OvA runs over seeded A/K/O draws.

Each cell (one |K| or |A| value, one seed) fixes a split, trains the
non-augmented OvA once, then one augmented OvA per generation method on the
same split with the same seed. Cells are independent and may run in worker
processes; results are ordered by cell key, so output never depends on
scheduling.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import generative, latent_opt, mvee, openset
from .errors import ConfigError, OrffError, PopulationTooSmall
from .fingerprint_sim import Corpus
from .nn_core import TrainConfig

log = logging.getLogger(__name__)

SUPERVISED_METHODS = ("vae", "cvae")
BLIND_METHODS = ("ellipsoid", "latent_opt")
CSV_COLUMNS = ("method", "num_authorized", "num_known", "delta", "seed", "arm", "accuracy", "train_seconds", "gen_seconds", "status")
DELTA_COLUMNS = ("delta", "num_authorized", "seed", "accuracy")


@dataclass(frozen=True)
class SweepConfig:
    num_authorized: int = 10
    known_sizes: tuple[int, ...] = (5, 10, 15, 20, 25)
    authorized_sizes: tuple[int, ...] = (5, 10, 15, 20, 25)
    num_test_outliers: int = 10
    seeds: tuple[int, ...] = (0, 1, 2)
    count: int = generative.GENERATION_BUDGET
    delta_grid: tuple[float, ...] = mvee.DELTA_GRID
    delta: float | None = None
    tuning_size: int | None = None  # smallest |A| of the sweep when unset
    tuning_seed: int = 1000
    tau: float = openset.DEFAULT_TAU
    ova_cfg: TrainConfig = openset.OVA_CFG
    vae_cfg: TrainConfig = generative.VAE_CFG
    ae_cfg: TrainConfig = generative.AE_CFG
    judge_cfg: TrainConfig = latent_opt.JUDGE_CFG
    opt_cfg: latent_opt.OptConfig = latent_opt.OptConfig()
    timings: bool = False

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if not self.known_sizes or not self.authorized_sizes:
            raise ConfigError("size lists must be non-empty")
        if self.count < 0:
            raise ConfigError("count must be >= 0")
        if self.delta is not None:
            mvee.ShellConfig(self.delta, 0)
        for d in self.delta_grid:
            mvee.ShellConfig(d, 0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExperimentResult:
    """One (cell, method) outcome: both arms of a paired comparison."""

    method: str
    num_authorized: int
    num_known: int
    seed: int
    delta: float | None = None
    accuracy_nonaug: float | None = None
    accuracy_aug: float | None = None
    train_seconds: dict = field(default_factory=dict)
    gen_seconds: float | None = None
    split_hash: str = ""
    status: str = "ok"
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def __post_init__(self):
        for a in (self.accuracy_nonaug, self.accuracy_aug):
            if a is not None and not 0.0 <= a <= 1.0:
                raise ValueError(f"accuracy {a} outside [0, 1]")


# ------------------------------------------------------------ transmitter draws


def _seeded(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)


def supervised_draw(transmitters, num_authorized, num_known, num_test_outliers, seed):
    """A and O depend only on the seed, so every |K| shares them; K comes from the rest."""
    tx = np.asarray(sorted(transmitters))
    need = num_authorized + num_test_outliers + num_known
    if need > len(tx):
        raise PopulationTooSmall(need, len(tx))
    perm = np.random.default_rng(seed).permutation(tx)
    a = perm[:num_authorized]
    o = perm[num_authorized : num_authorized + num_test_outliers]
    pool = perm[num_authorized + num_test_outliers :]
    k = np.random.default_rng([seed, num_known]).choice(pool, num_known, replace=False)
    return openset.SplitSpec(tuple(int(t) for t in a), tuple(sorted(int(t) for t in k)), tuple(sorted(int(t) for t in o)), seed)


def blind_draw(transmitters, num_authorized, num_test_outliers, seed):
    """O is drawn first so it is fixed across |A|; A sets are nested in |A|."""
    tx = np.asarray(sorted(transmitters))
    need = num_authorized + num_test_outliers
    if need > len(tx):
        raise PopulationTooSmall(need, len(tx))
    perm = np.random.default_rng(seed).permutation(tx)
    o = perm[:num_test_outliers]
    a = perm[num_test_outliers : num_test_outliers + num_authorized]
    return openset.SplitSpec(tuple(int(t) for t in a), (), tuple(sorted(int(t) for t in o)), seed)


# ------------------------------------------------------------------ the arms


def _train_arm(train, val, test, num_authorized, cfg: SweepConfig, seed, augmentation=None):
    t0 = time.perf_counter()
    m = openset.train_ova(train, val, num_authorized, _seeded(cfg.ova_cfg, seed), augmentation=augmentation, tau=cfg.tau)
    seconds = time.perf_counter() - t0
    return openset.evaluate(m, test), seconds


def supervised_generate(method, train: openset.LabeledSet, cfg: SweepConfig, seed) -> tuple[np.ndarray, dict[int, int]]:
    """Fit the generator on the real known outliers in ``train``; return ``cfg.count`` samples and
    the number drawn per known transmitter (one ``-1`` entry for the unconditional VAE)."""
    Y = train.where(train.outlier_mask)
    vcfg = _seeded(cfg.vae_cfg, seed)
    if method == "vae":
        m = generative.train_vae(Y.iq, cfg=vcfg)
        return (generative.sample_vae(m, cfg.count, seed) if cfg.count else Y.iq[:0]), {-1: cfg.count}
    if method == "cvae":
        ids = np.unique(Y.tx_ids)
        m = generative.train_cvae(Y.iq, np.searchsorted(ids, Y.tx_ids), len(ids), cfg=vcfg)
        if not cfg.count:
            return Y.iq[:0], {int(t): 0 for t in ids}
        samples, labels = generative.sample_cvae(m, cfg.count, seed)
        return samples, {int(t): int(n) for t, n in zip(ids, np.bincount(labels, minlength=len(ids)))}
    raise ConfigError(f"unknown supervised method {method!r}")


def supervised_cell(corpus: Corpus, cfg: SweepConfig, methods, num_known, seed) -> list[ExperimentResult]:
    spec = supervised_draw(corpus.transmitters, cfg.num_authorized, num_known, cfg.num_test_outliers, seed)
    train, val, test = openset.make_split(corpus, spec)
    h = openset.split_hash(train, val, test)
    base = dict(num_authorized=cfg.num_authorized, num_known=num_known, seed=seed, split_hash=h)
    try:
        acc_non, t_non = _train_arm(train, val, test, cfg.num_authorized, cfg, seed)
    except OrffError as e:
        return [ExperimentResult(m, status=f"failed: {e}", **base) for m in methods]
    out = []
    for method in methods:
        r = ExperimentResult(method, accuracy_nonaug=acc_non, train_seconds={"nonaug": t_non}, **base)
        try:
            t0 = time.perf_counter()
            aug, per_class = supervised_generate(method, train, cfg, seed)
            r.gen_seconds = time.perf_counter() - t0
            r.extra["generated"] = len(aug)
            r.extra["per_class"] = per_class
            r.accuracy_aug, r.train_seconds["aug"] = _train_arm(train, val, test, cfg.num_authorized, cfg, seed, aug)
        except OrffError as e:
            r.status = f"failed: {e}"
        log.info("supervised %s |K|=%d seed=%d: %s -> %s", method, num_known, seed, acc_non, r.accuracy_aug)
        out.append(r)
    return out


def blind_cell(corpus: Corpus, cfg: SweepConfig, methods, num_authorized, seed, delta=None) -> list[ExperimentResult]:
    spec = blind_draw(corpus.transmitters, num_authorized, cfg.num_test_outliers, seed)
    train, val, test = openset.make_split(corpus, spec)
    h = openset.split_hash(train, val, test)
    base = dict(num_authorized=num_authorized, num_known=0, seed=seed, split_hash=h)
    try:
        acc_non, t_non = _train_arm(train, val, test, num_authorized, cfg, seed)
        t0 = time.perf_counter()
        ae = generative.train_autoencoder(train.iq, cfg=_seeded(cfg.ae_cfg, seed))
        ae_seconds = time.perf_counter() - t0
    except OrffError as e:
        return [ExperimentResult(m, status=f"failed: {e}", **base) for m in methods]
    out = []
    for method in methods:
        r = ExperimentResult(method, accuracy_nonaug=acc_non, train_seconds={"nonaug": t_non}, **base)
        r.extra["ae_seconds"] = ae_seconds
        try:
            t0 = time.perf_counter()
            if method == "ellipsoid":
                if delta is None:
                    raise ConfigError("ellipsoid arm needs a delta")
                r.delta = delta
                aug = mvee.generate_ellipsoidal_outliers(ae, train.iq, delta, cfg.count, seed).samples
            elif method == "latent_opt":
                res = latent_opt.run_algorithm1(
                    train.iq, train.labels, num_authorized, ae, cfg.opt_cfg, cfg.count, seed, judge_cfg=_seeded(cfg.judge_cfg, seed)
                )
                aug = res.samples
                r.extra["aborted_per_iter"] = res.aborted_per_iter
                # self-consistency: the judge that shaped the outliers should call them outliers
                verdict = res.judge.predict_proba(aug).argmax(axis=1) if len(aug) else np.zeros(0)
                r.extra["judge_outlier_rate"] = float(np.mean(verdict == num_authorized)) if len(aug) else 1.0
                r.extra["max_best_minus_initial"] = float(np.max(res.best_objective - res.initial_objective, initial=-np.inf))
            else:
                raise ConfigError(f"unknown blind method {method!r}")
            r.gen_seconds = time.perf_counter() - t0
            r.extra["generated"] = len(aug)
            r.accuracy_aug, r.train_seconds["aug"] = _train_arm(train, val, test, num_authorized, cfg, seed, aug)
        except OrffError as e:
            r.status = f"failed: {e}"
        log.info("blind %s |A|=%d seed=%d: %s -> %s", method, num_authorized, seed, acc_non, r.accuracy_aug)
        out.append(r)
    return out


def tune_delta(corpus: Corpus, cfg: SweepConfig) -> tuple[float, list[dict]]:
    """Grid search of the shell thickness on a dedicated draw (``cfg.tuning_seed``) at the smallest |A|.

    Blind validation sets hold no outliers, so each delta is scored by the
    open-set accuracy of the tuning draw's own test set; that draw is never
    reused for reporting. Ties go to the smaller delta.
    """
    seed = cfg.tuning_seed
    size = cfg.tuning_size if cfg.tuning_size is not None else min(cfg.authorized_sizes)
    spec = blind_draw(corpus.transmitters, size, cfg.num_test_outliers, seed)
    train, val, test = openset.make_split(corpus, spec)
    ae = generative.train_autoencoder(train.iq, cfg=_seeded(cfg.ae_cfg, seed))
    ZX = generative.encode(ae, train.iq)
    e = mvee.fit_mvee(ZX)
    table = []
    for d in cfg.delta_grid:
        z = mvee.sample_shell(e, mvee.ShellConfig(d, cfg.count), seed)
        aug = generative.decode(ae, z)
        acc, _ = _train_arm(train, val, test, size, cfg, seed, aug)
        table.append({"delta": d, "num_authorized": size, "seed": seed, "accuracy": acc})
        log.info("delta %.3g: accuracy %.4f", d, acc)
    best = max(table, key=lambda row: (row["accuracy"], -row["delta"]))
    return best["delta"], table


# --------------------------------------------------------------- sweep drivers


def _run_cells(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_worker_init) as ex:
        return list(ex.map(fn, *zip(*tasks)))


def _worker_init():
    import torch

    torch.set_num_threads(1)


def run_supervised_sweep(corpus: Corpus, cfg: SweepConfig = SweepConfig(), methods=("cvae",), jobs: int = 1) -> list[ExperimentResult]:
    methods = tuple(methods)
    for m in methods:
        if m not in SUPERVISED_METHODS:
            raise ConfigError(f"unknown supervised method {m!r}")
    need = cfg.num_authorized + cfg.num_test_outliers + max(cfg.known_sizes)
    if need > len(corpus.transmitters):
        raise PopulationTooSmall(need, len(corpus.transmitters))
    tasks = [(corpus, cfg, methods, k, s) for k in cfg.known_sizes for s in cfg.seeds]
    cells = _run_cells(supervised_cell, tasks, jobs)
    return [r for cell in cells for r in cell]


def run_blind_sweep(
    corpus: Corpus, cfg: SweepConfig = SweepConfig(), methods=BLIND_METHODS, jobs: int = 1
) -> tuple[list[ExperimentResult], list[dict]]:
    """Returns (results, delta table); the table is empty when delta is fixed or ellipsoid is not run."""
    methods = tuple(methods)
    for m in methods:
        if m not in BLIND_METHODS:
            raise ConfigError(f"unknown blind method {m!r}")
    need = max(cfg.authorized_sizes) + cfg.num_test_outliers
    if need > len(corpus.transmitters):
        raise PopulationTooSmall(need, len(corpus.transmitters))
    delta, table = cfg.delta, []
    if "ellipsoid" in methods and delta is None:
        delta, table = tune_delta(corpus, cfg)
    tasks = [(corpus, cfg, methods, a, s, delta) for a in cfg.authorized_sizes for s in cfg.seeds]
    cells = _run_cells(blind_cell, tasks, jobs)
    return [r for cell in cells for r in cell], table


# ---------------------------------------------------------------------- output


def _fmt(x, spec=".6f"):
    return "" if x is None else format(x, spec)


def result_rows(results, timings: bool = False) -> list[dict]:
    """Two rows per result (nonaug, aug). Timing columns stay empty unless ``timings``."""
    rows = []
    for r in results:
        for arm, acc in (("nonaug", r.accuracy_nonaug), ("aug", r.accuracy_aug)):
            rows.append(
                {
                    "method": r.method,
                    "num_authorized": r.num_authorized,
                    "num_known": r.num_known,
                    "delta": _fmt(r.delta if arm == "aug" else None, "g"),
                    "seed": r.seed,
                    "arm": arm,
                    "accuracy": _fmt(acc),
                    "train_seconds": _fmt(r.train_seconds.get(arm), ".3f") if timings else "",
                    "gen_seconds": _fmt(r.gen_seconds, ".3f") if timings and arm == "aug" else "",
                    "status": r.status,
                }
            )
    return rows


def to_csv(rows, columns=CSV_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({c: (format(row[c], ".6f") if isinstance(row[c], float) else row[c]) for c in columns})
    return buf.getvalue()


def summarize(results) -> list[dict]:
    """Mean accuracy per (method, |A|, |K|) over seeds, for both arms."""
    groups: dict[tuple, list[ExperimentResult]] = {}
    for r in results:
        if r.ok:
            groups.setdefault((r.method, r.num_authorized, r.num_known), []).append(r)
    out = []
    for (method, a, k), rs in sorted(groups.items()):
        out.append(
            {
                "method": method,
                "num_authorized": a,
                "num_known": k,
                "seeds": [r.seed for r in rs],
                "nonaug": float(np.mean([r.accuracy_nonaug for r in rs])),
                "aug": float(np.mean([r.accuracy_aug for r in rs])),
                "gen_seconds": float(np.mean([r.gen_seconds for r in rs])),
            }
        )
    return out
