"""Command-line front end: ``orff <subcommand> [options]``.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime failure.
Every subcommand accepts ``--seed``, ``--out-dir``, ``--jobs``, ``--paper-scale``
and ``--config FILE.json``; keys in the JSON file replace defaults and
explicit flags win over the file.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import fingerprint_sim as fs
from . import generative, latent_opt, mvee, openset, sweeps
from .errors import ConfigError, OrffError
from .nn_core import TrainConfig

log = logging.getLogger("openset_rff")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

# desk scale versus the original capture's population
DESK = {"tx": 40, "packets": (100, 300), "test_outliers": 10}
FULL = {"tx": 71, "packets": (200, 1500), "test_outliers": 30}

METHODS = ("vae", "cvae", "ellipsoid", "latent-opt")


def _ints(v) -> tuple[int, ...]:
    if v is None:
        return ()
    if isinstance(v, str):
        return tuple(int(x) for x in v.split(",") if x.strip())
    if isinstance(v, int):
        return (v,)
    return tuple(int(x) for x in v)


def _floats(v) -> tuple[float, ...]:
    if isinstance(v, str):
        return tuple(float(x) for x in v.split(",") if x.strip())
    if isinstance(v, (int, float)):
        return (float(v),)
    return tuple(float(x) for x in v)


def _names(v) -> tuple[str, ...]:
    if isinstance(v, str):
        v = v.split(",")
    return tuple(x.strip() for x in v if x.strip())


def _scale(a) -> dict:
    return FULL if a.paper_scale else DESK


def _out(a, given, default: str) -> Path:
    p = Path(given) if given else Path(default)
    if not p.is_absolute():
        p = Path(a.out_dir) / p
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _args_record(a) -> dict:
    """JSON-safe copy of the parsed arguments, for manifests."""
    skip = {"func", "verbose"}
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(a).items()) if k not in skip}


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _load_corpus(path) -> fs.Corpus:
    if path is None:
        raise ConfigError("--corpus is required")
    if not Path(path).exists():
        raise ConfigError(f"corpus file not found: {path}")
    return fs.load_corpus(path)


def _select(corpus: fs.Corpus, tx) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Samples of the requested transmitters (all when ``tx`` is empty) with labels 0..k-1 in sorted-id order."""
    if corpus.manifest.get("kind") == "generated":
        raise ConfigError("input corpus holds generated outliers, not transmitter-labeled samples")
    ids = sorted(set(_ints(tx))) or corpus.transmitters
    missing = sorted(set(ids) - set(corpus.transmitters))
    if missing:
        raise ConfigError(f"transmitters {missing} not in corpus")
    mask = np.isin(corpus.tx_ids, ids)
    labels = np.searchsorted(ids, corpus.tx_ids[mask]).astype(np.int64)
    return corpus.iq[mask], labels, ids


def _train_cfg(epochs, base: TrainConfig, seed: int) -> TrainConfig:
    return replace(base, seed=seed, epochs=epochs if epochs is not None else base.epochs)


# ----------------------------------------------------------------- simulate


def cmd_simulate(a) -> int:
    sc = _scale(a)
    n = a.tx if a.tx is not None else sc["tx"]
    pmin = a.packets_min if a.packets_min is not None else sc["packets"][0]
    pmax = a.packets_max if a.packets_max is not None else sc["packets"][1]
    ch = fs.ChannelConfig(a.channel, a.snr_db, a.rician_k_db)
    profiles = fs.synth_population(n, a.seed)
    try:
        corpus = fs.generate_corpus(profiles, pmin, pmax, ch, a.seed)
    except ConfigError:
        raise
    except (OrffError, ArithmeticError) as e:
        raise RuntimeError(f"generation failed: {e}") from e
    out = _out(a, a.output, "corpus.orff")
    fs.save_corpus(corpus, out)
    for tx, c in corpus.counts().items():
        print(f"tx {tx:3d}: {c} samples")
    print(f"wrote {len(corpus)} samples from {n} transmitters to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- train-gen


def cmd_train_gen(a) -> int:
    corpus = _load_corpus(a.corpus)
    iq, labels, ids = _select(corpus, a.tx)
    base = generative.AE_CFG if a.kind == "ae" else generative.VAE_CFG
    cfg = _train_cfg(a.epochs, base, a.seed)
    if a.kind == "vae":
        m = generative.train_vae(iq, cfg=cfg)
    elif a.kind == "cvae":
        m = generative.train_cvae(iq, labels, len(ids), cfg=cfg)
        m.class_ids = list(ids)
    else:
        m = generative.train_autoencoder(iq, cfg=cfg)
    out = _out(a, a.output, f"{a.kind}.ornn")
    generative.save_model(m, out)
    _write_json(
        out.with_name(out.name + ".run.json"),
        {"command": "train-gen", "args": _args_record(a), "transmitters": ids, "samples": len(iq), "train_loss": m.history.train},
    )
    print(f"trained {a.kind} on {len(iq)} samples from {len(ids)} transmitters; final loss {m.final_loss:.4f}; wrote {out}")
    return EXIT_OK


# ----------------------------------------------------------------- generate


def _generator(a, kind, iq, labels, ids):
    """Load ``--model`` when given (checking it fits the method), else train one on the selected samples."""
    if a.model:
        if not Path(a.model).exists():
            raise ConfigError(f"model file not found: {a.model}")
        m = generative.load_model(a.model)
        if m.kind != kind:
            raise ConfigError(f"--method {a.method} needs a {kind} model, {a.model} holds kind {m.kind}")
        if kind == "cvae" and m.num_classes != len(ids):
            raise ConfigError(f"cvae model has {m.num_classes} classes but {len(ids)} transmitters were selected")
        return m
    base = generative.AE_CFG if kind == "ae" else generative.VAE_CFG
    cfg = _train_cfg(a.gen_epochs, base, a.seed)
    if kind == "vae":
        return generative.train_vae(iq, cfg=cfg)
    if kind == "cvae":
        return generative.train_cvae(iq, labels, len(ids), cfg=cfg)
    return generative.train_autoencoder(iq, cfg=cfg)


def cmd_generate(a) -> int:
    if a.count < 0:
        raise ConfigError("--count must be >= 0")
    if a.method == "ellipsoid" and a.delta is None:
        raise ConfigError("--method ellipsoid needs --delta; run `orff sweep --methods ellipsoid` to tune it over the grid")
    opt = None
    if a.method == "latent-opt":
        opt = latent_opt.OptConfig(inner_steps=a.inner_steps, inner_lr=a.inner_lr, outer_iters=a.outer_iters, lam=a.lam)
    corpus = _load_corpus(a.corpus)
    iq, labels, ids = _select(corpus, a.tx)
    manifest = {"method": a.method, "count": a.count, "seed": a.seed, "source": str(a.corpus), "input_transmitters": ids, "args": _args_record(a)}

    t0 = time.perf_counter()
    if a.method == "vae":
        m = _generator(a, "vae", iq, labels, ids)
        out_iq = generative.sample_vae(m, a.count, a.seed) if a.count else iq[:0]
        manifest["per_class_counts"] = {"all": a.count}
    elif a.method == "cvae":
        m = _generator(a, "cvae", iq, labels, ids)
        if a.count < len(ids):
            raise ConfigError(f"--count {a.count} is smaller than the {len(ids)} known-outlier classes")
        out_iq, cls = generative.sample_cvae(m, a.count, a.seed)
        counts = np.bincount(cls, minlength=len(ids))
        manifest["per_class_counts"] = {str(t): int(c) for t, c in zip(ids, counts)}
    elif a.method == "ellipsoid":
        ae = _generator(a, "ae", iq, labels, ids)
        res = mvee.generate_ellipsoidal_outliers(ae, iq, a.delta, a.count, a.seed)
        out_iq = res.samples
        manifest["delta"] = a.delta
        manifest["per_class_counts"] = {"all": a.count}
    else:
        if len(ids) < 2:
            raise ConfigError("latent-opt needs at least two authorized transmitters")
        ae = _generator(a, "ae", iq, labels, ids)
        judge_cfg = _train_cfg(a.judge_epochs, latent_opt.JUDGE_CFG, a.seed)
        res = latent_opt.run_algorithm1(iq, labels, len(ids), ae, opt, a.count, a.seed, judge_cfg=judge_cfg)
        out_iq = res.samples
        manifest.update(N=opt.outer_iters, inner_steps=opt.inner_steps, inner_lr=opt.inner_lr, lam=opt.lam, aborted_per_iter=res.aborted_per_iter)
        manifest["per_class_counts"] = {"all": a.count}
    seconds = time.perf_counter() - t0

    out = _out(a, a.output, f"outliers_{a.method}.orff")
    fs.save_corpus(fs.outlier_corpus(out_iq, manifest), out)
    print(f"generated {len(out_iq)} {a.method} outliers in {seconds:.1f}s; wrote {out}")
    return EXIT_OK


# ----------------------------------------------------------------- evaluate


def cmd_evaluate(a) -> int:
    corpus = _load_corpus(a.corpus)
    spec = openset.SplitSpec(_ints(a.authorized), _ints(a.known), _ints(a.test_outliers), a.seed)
    train, val, test = openset.make_split(corpus, spec)
    aug = []
    for p in a.augment or ():
        g = _load_corpus(p)
        if g.manifest.get("kind") != "generated":
            raise ConfigError(f"{p} is not a generated-outlier corpus")
        aug.append(g.iq)
    aug_iq = np.concatenate(aug) if aug else None
    cfg = _train_cfg(a.epochs, openset.OVA_CFG, a.seed)
    m = openset.train_ova(train, val, len(spec.authorized), cfg, augmentation=aug_iq, tau=a.tau)
    acc = openset.evaluate(m, test)
    doc = {
        "accuracy": acc,
        "split_hash": openset.split_hash(train, val, test),
        "sizes": {"train": len(train), "val": len(val), "test": len(test), "generated": 0 if aug_iq is None else len(aug_iq)},
        "best_epoch": m.history.best_epoch,
        "args": _args_record(a),
    }
    out = _out(a, a.output, "evaluate.json")
    _write_json(out, doc)
    print(f"accuracy {acc:.4f} on {len(test)} test samples; wrote {out}")
    return EXIT_OK


# -------------------------------------------------------------------- sweep


def _fit_sizes(sizes, fixed, n_tx, label):
    fit = tuple(s for s in sizes if s + fixed <= n_tx)
    dropped = tuple(s for s in sizes if s + fixed > n_tx)
    if dropped:
        log.warning("dropping %s sizes %s: corpus has %d transmitters", label, list(dropped), n_tx)
    if not fit:
        raise ConfigError(f"population too small: no {label} size fits {n_tx} transmitters")
    return fit, dropped


def sweep_config(a) -> sweeps.SweepConfig:
    seeds = _ints(a.seeds) if a.seeds else (a.seed, a.seed + 1, a.seed + 2)
    opt = latent_opt.OptConfig(inner_steps=a.inner_steps, inner_lr=a.inner_lr, outer_iters=a.outer_iters, lam=a.lam)
    return sweeps.SweepConfig(
        num_authorized=a.num_authorized,
        known_sizes=_ints(a.k_sizes),
        authorized_sizes=_ints(a.a_sizes),
        num_test_outliers=a.test_outliers if a.test_outliers is not None else _scale(a)["test_outliers"],
        seeds=seeds,
        count=a.count,
        delta_grid=_floats(a.delta_grid),
        delta=a.delta,
        tau=a.tau,
        ova_cfg=_train_cfg(a.epochs, openset.OVA_CFG, 0),
        vae_cfg=_train_cfg(a.gen_epochs, generative.VAE_CFG, 0),
        ae_cfg=_train_cfg(a.ae_epochs, generative.AE_CFG, 0),
        judge_cfg=_train_cfg(a.judge_epochs, latent_opt.JUDGE_CFG, 0),
        opt_cfg=opt,
        timings=a.timings,
    )


def cmd_sweep(a) -> int:
    methods = tuple(m.replace("-", "_") for m in _names(a.methods))
    bad = [m for m in methods if m not in sweeps.SUPERVISED_METHODS + sweeps.BLIND_METHODS]
    if bad or not methods:
        raise ConfigError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
    cfg = sweep_config(a)
    corpus = _load_corpus(a.corpus)
    n_tx = len(corpus.transmitters)
    out_dir = Path(a.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"command": "sweep", "corpus": str(a.corpus), "methods": list(methods), "args": _args_record(a)}
    results = []
    t_start = time.perf_counter()

    sup = tuple(m for m in methods if m in sweeps.SUPERVISED_METHODS)
    if sup:
        ks, dropped = _fit_sizes(cfg.known_sizes, cfg.num_authorized + cfg.num_test_outliers, n_tx, "|K|")
        scfg = replace(cfg, known_sizes=ks)
        t0 = time.perf_counter()
        res = sweeps.run_supervised_sweep(corpus, scfg, sup, a.jobs)
        (out_dir / "supervised.csv").write_text(sweeps.to_csv(sweeps.result_rows(res, cfg.timings)))
        manifest["supervised"] = {"config": scfg.to_dict(), "dropped_known_sizes": list(dropped), "seconds": time.perf_counter() - t0}
        results += res

    blind = tuple(m for m in methods if m in sweeps.BLIND_METHODS)
    if blind:
        As, dropped = _fit_sizes(cfg.authorized_sizes, cfg.num_test_outliers, n_tx, "|A|")
        bcfg = replace(cfg, authorized_sizes=As)
        t0 = time.perf_counter()
        res, table = sweeps.run_blind_sweep(corpus, bcfg, blind, a.jobs)
        (out_dir / "blind.csv").write_text(sweeps.to_csv(sweeps.result_rows(res, cfg.timings)))
        if table:
            (out_dir / "delta_sweep.csv").write_text(sweeps.to_csv(table, sweeps.DELTA_COLUMNS))
        delta = next((r.delta for r in res if r.delta is not None), cfg.delta)
        manifest["blind"] = {"config": bcfg.to_dict(), "dropped_authorized_sizes": list(dropped), "delta": delta, "seconds": time.perf_counter() - t0}
        results += res

    gen = {}
    for m in methods:
        secs = [r.gen_seconds for r in results if r.method == m and r.gen_seconds is not None]
        if secs:
            gen[m] = float(np.mean(secs))
    manifest["mean_gen_seconds"] = gen
    if "ellipsoid" in gen and "latent_opt" in gen and gen["ellipsoid"] > 0:
        manifest["latent_opt_over_ellipsoid_gen_time"] = gen["latent_opt"] / gen["ellipsoid"]
    manifest["cells"] = [
        {"method": r.method, "num_authorized": r.num_authorized, "num_known": r.num_known, "seed": r.seed, "split_hash": r.split_hash, "status": r.status, **{k: r.extra[k] for k in ("generated", "per_class", "aborted_per_iter") if k in r.extra}}
        for r in results
    ]
    failed = [c for c in manifest["cells"] if c["status"] != "ok"]
    manifest["failed_cells"] = len(failed)
    manifest["seconds"] = time.perf_counter() - t_start
    _write_json(out_dir / "sweep_manifest.json", manifest)
    if not a.no_plots:
        write_report(out_dir)
    for row in sweeps.summarize(results):
        print(
            f"{row['method']:>10} |A|={row['num_authorized']:<3d} |K|={row['num_known']:<3d} "
            f"nonaug {row['nonaug']:.4f}  aug {row['aug']:.4f}"
        )
    if "latent_opt_over_ellipsoid_gen_time" in manifest:
        print(f"latent-opt / ellipsoid generation time: {manifest['latent_opt_over_ellipsoid_gen_time']:.1f}x")
    if failed:
        print(f"{len(failed)} cell(s) failed; see status column", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# ------------------------------------------------------------------- report


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _mean_curves(rows, x_key):
    """{(method, arm): ([x...], [mean accuracy...])} over rows with an accuracy."""
    acc: dict[tuple, dict[int, list[float]]] = {}
    for r in rows:
        if r.get("accuracy"):
            acc.setdefault((r["method"], r["arm"]), {}).setdefault(int(r[x_key]), []).append(float(r["accuracy"]))
    return {k: (sorted(v), [float(np.mean(v[x])) for x in sorted(v)]) for k, v in acc.items()}


def _plot(path: Path, curves: dict, xlabel: str, title: str) -> None:
    import matplotlib

    from matplotlib.figure import Figure

    with matplotlib.rc_context({"svg.hashsalt": "openset-rff", "svg.fonttype": "none"}):
        fig = Figure(figsize=(5.5, 3.8))
        ax = fig.subplots()
        for label, (xs, ys) in curves.items():
            ax.plot(xs, ys, marker="o", label=label)
        ax.set_xlabel(xlabel)
        ax.set_ylabel("test accuracy")
        ax.set_title(title)
        ax.grid(alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})


def write_report(results_dir: Path) -> list[Path]:
    """SVG line plots for whichever sweep CSVs exist in ``results_dir``."""
    results_dir = Path(results_dir)
    written = []
    for name, x_key, xlabel in (("supervised", "num_known", "|K| (known outliers)"), ("blind", "num_authorized", "|A| (authorized)")):
        path = results_dir / f"{name}.csv"
        if not path.exists():
            continue
        curves = _mean_curves(_read_csv(path), x_key)
        for method in sorted({m for m, _ in curves}):
            sel = {f"{arm}": curves[(method, arm)] for arm in ("nonaug", "aug") if (method, arm) in curves}
            out = results_dir / f"{name}_{method}.svg"
            _plot(out, sel, xlabel, f"{method}: augmented vs non-augmented")
            written.append(out)
    path = results_dir / "delta_sweep.csv"
    if path.exists():
        rows = _read_csv(path)
        xs = [float(r["delta"]) for r in rows]
        ys = [float(r["accuracy"]) for r in rows]
        out = results_dir / "delta_sweep.svg"
        _plot(out, {f"|A|={rows[0]['num_authorized']}": (xs, ys)}, "shell thickness delta", "ellipsoid delta sweep")
        written.append(out)
    return written


def cmd_report(a) -> int:
    d = Path(a.results) if a.results else Path(a.out_dir)
    if not d.is_dir():
        raise ConfigError(f"results directory not found: {d}")
    written = write_report(d)
    if not written:
        raise ConfigError(f"no sweep CSVs in {d}")
    for p in written:
        print(f"wrote {p}")
    return EXIT_OK


# ------------------------------------------------------------------- parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    g.add_argument("--out-dir", default=".", help="directory for outputs; relative -o paths resolve against it")
    g.add_argument("--jobs", type=int, default=1, help="parallel sweep cells (sweep only)")
    g.add_argument("--paper-scale", action="store_true", help="71 transmitters, 200-1500 packets, 30 test outliers")
    g.add_argument("--config", help="JSON file of option defaults; flags win")
    g.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _opt_flags(p):
    p.add_argument("--inner-steps", type=int, default=latent_opt.OptConfig.inner_steps)
    p.add_argument("--inner-lr", type=float, default=latent_opt.OptConfig.inner_lr)
    p.add_argument("--outer-iters", type=int, default=latent_opt.OptConfig.outer_iters, help="N, judge rounds of Algorithm 1")
    p.add_argument("--lam", type=float, default=latent_opt.OptConfig.lam, help="weight of the judge term")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orff", description="Generative outlier augmentation for open-set RF fingerprinting.")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("simulate", parents=[common], help="simulate a transmitter corpus")
    p.add_argument("--tx", type=int, help="number of transmitters (desk 40)")
    p.add_argument("--packets-min", type=int)
    p.add_argument("--packets-max", type=int)
    p.add_argument("--channel", default="awgn", choices=("awgn", "rayleigh_block", "rician_block"))
    p.add_argument("--snr-db", type=float, default=25.0)
    p.add_argument("--rician-k-db", type=float, default=10.0)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-gen", parents=[common], help="train a VAE, CVAE or autoencoder")
    p.add_argument("--corpus")
    p.add_argument("--kind", choices=("vae", "cvae", "ae"), default="vae")
    p.add_argument("--tx", help="comma-separated transmitter ids (default: all)")
    p.add_argument("--epochs", type=int)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_train_gen)

    p = sub.add_parser("generate", parents=[common], help="generate synthetic outliers")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--corpus")
    p.add_argument("--tx", help="known outliers (vae/cvae) or authorized transmitters (blind); default all")
    p.add_argument("--model", help="trained generator (.ornn); trained on the fly when omitted")
    p.add_argument("--count", type=int, default=generative.GENERATION_BUDGET)
    p.add_argument("--delta", type=float, help="shell thickness (ellipsoid)")
    p.add_argument("--gen-epochs", type=int)
    p.add_argument("--judge-epochs", type=int)
    _opt_flags(p)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common], help="train and score an OvA classifier on one split")
    p.add_argument("--corpus")
    p.add_argument("--authorized", required=True)
    p.add_argument("--known", default="")
    p.add_argument("--test-outliers", default="")
    p.add_argument("--augment", action="append", help="generated-outlier corpus; repeatable")
    p.add_argument("--epochs", type=int)
    p.add_argument("--tau", type=float, default=openset.DEFAULT_TAU)
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", parents=[common], help="paired augmented / non-augmented sweeps")
    p.add_argument("--corpus")
    p.add_argument("--methods", default="cvae,vae,ellipsoid,latent-opt")
    p.add_argument("--seeds", help="comma-separated seeds (default: seed, seed+1, seed+2)")
    p.add_argument("--num-authorized", type=int, default=10, help="|A| of the supervised sweep")
    p.add_argument("--k-sizes", default="5,10,15,20,25")
    p.add_argument("--a-sizes", default="5,10,15,20,25")
    p.add_argument("--test-outliers", type=int, help="|O| (desk 10)")
    p.add_argument("--count", type=int, default=generative.GENERATION_BUDGET)
    p.add_argument("--delta", type=float, help="fixed shell thickness; tuned over --delta-grid when omitted")
    p.add_argument("--delta-grid", default=",".join(str(d) for d in mvee.DELTA_GRID))
    p.add_argument("--tau", type=float, default=openset.DEFAULT_TAU)
    p.add_argument("--epochs", type=int, help="OvA epochs")
    p.add_argument("--gen-epochs", type=int, help="VAE/CVAE epochs")
    p.add_argument("--ae-epochs", type=int)
    p.add_argument("--judge-epochs", type=int)
    _opt_flags(p)
    p.add_argument("--timings", action="store_true", help="fill the timing CSV columns (breaks byte-identical reruns)")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", parents=[common], help="plot sweep CSVs as SVG")
    p.add_argument("--results", help="directory holding sweep CSVs (default: --out-dir)")
    p.set_defaults(func=cmd_report)
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    """Parse, then re-parse with the ``--config`` file's keys as defaults so explicit flags still win."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.config:
        return args
    try:
        doc = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {args.config}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    doc = {k.replace("-", "_"): v for k, v in doc.items()}
    known = set(vars(args)) - {"func", "command", "config"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config keys for {args.command}: {unknown}")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**doc)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as e:
        print(f"orff: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as e:  # argparse usage errors
        return int(e.code) if isinstance(e.code, int) else EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    import torch

    torch.set_num_threads(1)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"orff: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (OrffError, RuntimeError, OSError, ArithmeticError) as e:
        print(f"orff: failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
