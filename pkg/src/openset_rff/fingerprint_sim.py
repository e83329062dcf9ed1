"""Synthetic RF-fingerprint corpus: transmitter impairments, channel, and the ORFF file format.

Each simulated transmitter applies a fixed hardware-impairment chain to a common
preamble (IQ imbalance -> PA nonlinearity -> CFO -> phase noise -> DC offset),
then a block-fading channel adds gain and AWGN. A corpus keeps the first 256
complex samples of every packet as a 256x2 float32 (I, Q) matrix.
"""

from __future__ import annotations

import json
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, CorruptCorpus, EmptyPopulation, ImpairmentOverflow, ManifestMismatch

log = logging.getLogger(__name__)

N_SAMPLES = 256
PERIOD = 16
OUTLIER_ID = 65535
NOISELESS_SNR_DB = 200.0

MAGIC = b"ORFF"
VERSION = 1
_HEADER = struct.Struct("<4sHIH")
RECORD_DTYPE = np.dtype([("tx_id", "<u2"), ("iq", "<f4", (N_SAMPLES, 2))])

# Parameter ranges drawn by synth_population.
RANGES = {
    "iq_gain_imbalance": (-0.15, 0.15),
    "iq_phase_imbalance": (-0.15, 0.15),
    "cfo": (-0.003, 0.003),
    "phase_noise_std": (0.0, 0.02),
    "pa_a1": (0.9, 1.1),
    "pa_a3": (-0.08, 0.0),
    "dc_radius": 0.03,
}

_PREAMBLE_SEED = 0x5EED


@dataclass(frozen=True)
class TransmitterProfile:
    tx_id: int
    iq_gain_imbalance: float = 0.0
    iq_phase_imbalance: float = 0.0
    cfo: float = 0.0
    phase_noise_std: float = 0.0
    pa_a1: float = 1.0
    pa_a3: float = 0.0
    dc_offset: complex = 0j

    def __post_init__(self):
        if self.tx_id < 0:
            raise ConfigError(f"tx_id must be >= 0, got {self.tx_id}")
        if not (abs(self.iq_gain_imbalance) < 0.5 and abs(self.iq_phase_imbalance) < 0.5):
            raise ConfigError("IQ imbalance out of range (|eps|, |phi| < 0.5)")
        if not abs(self.cfo) < 0.01:
            raise ConfigError("cfo out of range (|cfo| < 0.01 cycles/sample)")
        if not 0.0 <= self.phase_noise_std < 0.1:
            raise ConfigError("phase_noise_std out of range [0, 0.1)")
        if not self.pa_a1 > 0:
            raise ConfigError("pa_a1 must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dc_offset"] = [self.dc_offset.real, self.dc_offset.imag]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TransmitterProfile":
        d = dict(d)
        re, im = d.pop("dc_offset")
        return cls(dc_offset=complex(re, im), **d)


@dataclass(frozen=True)
class ChannelConfig:
    model: str = "awgn"
    snr_db: float = 25.0
    rician_k_db: float = 10.0

    def __post_init__(self):
        if self.model not in ("awgn", "rayleigh_block", "rician_block"):
            raise ConfigError(f"unknown channel model {self.model!r}")
        # snr_db >= 200 is the noiseless sentinel
        if not (-10.0 <= self.snr_db <= 60.0 or self.snr_db >= NOISELESS_SNR_DB):
            raise ConfigError(f"snr_db {self.snr_db} outside [-10, 60]")


@dataclass
class Corpus:
    """Labeled signal samples. ``iq`` is (N, 256, 2) float32, ``tx_ids`` is (N,) uint16."""

    iq: np.ndarray
    tx_ids: np.ndarray
    profiles: list[TransmitterProfile] = field(default_factory=list)
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        self.iq = np.asarray(self.iq, dtype=np.float32).reshape(-1, N_SAMPLES, 2)
        self.tx_ids = np.asarray(self.tx_ids, dtype=np.uint16).reshape(-1)
        if len(self.iq) != len(self.tx_ids):
            raise ValueError("iq and tx_ids lengths differ")

    def __len__(self):
        return len(self.tx_ids)

    def __eq__(self, other):
        if not isinstance(other, Corpus):
            return NotImplemented
        return (
            np.array_equal(self.iq, other.iq)
            and np.array_equal(self.tx_ids, other.tx_ids)
            and self.profiles == other.profiles
            and self.manifest == other.manifest
        )

    @property
    def transmitters(self) -> list[int]:
        return sorted(int(t) for t in np.unique(self.tx_ids))

    def counts(self) -> dict[int, int]:
        ids, n = np.unique(self.tx_ids, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, n)}

    def select(self, tx_id: int) -> np.ndarray:
        return self.iq[self.tx_ids == tx_id]


def gen_base_preamble() -> np.ndarray:
    """Fixed 256-sample short-training-style preamble with unit peak amplitude.

    A 16-symbol QPSK sequence (fixed seed) is taken as a frequency-domain pattern,
    transformed to one 16-sample period and tiled 16 times.
    """
    rng = np.random.default_rng(_PREAMBLE_SEED)
    bits = rng.integers(0, 2, size=(PERIOD, 2))
    qpsk = ((2 * bits[:, 0] - 1) + 1j * (2 * bits[:, 1] - 1)) / np.sqrt(2)
    period = np.fft.ifft(qpsk)
    v = np.tile(period, N_SAMPLES // PERIOD)
    return v / np.max(np.abs(v))


def apply_impairments(x, p: TransmitterProfile, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    n = np.arange(len(x))

    eps, phi = p.iq_gain_imbalance, p.iq_phase_imbalance
    i_branch = (1 + eps) * x.real
    q_branch = (1 - eps) * (x.imag * np.cos(phi) - x.real * np.sin(phi))
    y = i_branch + 1j * q_branch

    y = p.pa_a1 * y + p.pa_a3 * y * np.abs(y) ** 2
    y = y * np.exp(2j * np.pi * p.cfo * n)

    steps = rng.normal(0.0, 1.0, size=max(len(x) - 1, 0)) * p.phase_noise_std
    theta = np.concatenate([[0.0], np.cumsum(steps)])[: len(x)]
    y = y * np.exp(1j * theta)

    y = y + p.dc_offset
    if not np.all(np.isfinite(y)):
        raise ImpairmentOverflow(p.tx_id)
    return y


def apply_channel(x, ch: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.complex128)
    if ch.model == "awgn":
        h = 1.0 + 0j
    else:
        scatter = (rng.normal() + 1j * rng.normal()) / np.sqrt(2)
        if ch.model == "rayleigh_block":
            h = scatter
        else:
            k = 10 ** (ch.rician_k_db / 10)
            h = np.sqrt(k / (k + 1)) + np.sqrt(1 / (k + 1)) * scatter
    y = h * x
    if ch.snr_db >= NOISELESS_SNR_DB:
        return y
    noise_power = np.mean(np.abs(y) ** 2) / 10 ** (ch.snr_db / 10)
    noise = rng.normal(size=len(y)) + 1j * rng.normal(size=len(y))
    return y + np.sqrt(noise_power / 2) * noise


def synth_population(n: int, seed: int) -> list[TransmitterProfile]:
    if n < 1:
        raise EmptyPopulation()
    rng = np.random.default_rng(seed)
    out = []
    for tx in range(n):
        u = {k: rng.uniform(*v) for k, v in RANGES.items() if k != "dc_radius"}
        # uniform on the disk
        r = RANGES["dc_radius"] * np.sqrt(rng.uniform())
        a = rng.uniform(0, 2 * np.pi)
        out.append(TransmitterProfile(tx_id=tx, dc_offset=complex(r * np.cos(a), r * np.sin(a)), **u))
    return out


def _tx_stream(seed: int, tx_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, tx_id]))


def _gen_transmitter(p, packets_min, packets_max, ch, seed):
    rng = _tx_stream(seed, p.tx_id)
    count = int(rng.integers(packets_min, packets_max + 1))
    base = gen_base_preamble()
    out = np.empty((count, N_SAMPLES), dtype=np.complex128)
    for k in range(count):
        out[k] = apply_channel(apply_impairments(base, p, rng), ch, rng)
    return out


def to_iq(x: np.ndarray) -> np.ndarray:
    """Complex (..., 256) -> real (..., 256, 2)."""
    return np.stack([x.real, x.imag], axis=-1)


def generate_corpus(
    profiles: list[TransmitterProfile],
    packets_min: int,
    packets_max: int,
    ch: ChannelConfig,
    seed: int,
    jobs: int = 1,
) -> Corpus:
    """Simulate every transmitter and normalize the corpus to unit peak entry.

    Each transmitter draws from its own substream keyed by (seed, tx_id), so the
    result does not depend on ``jobs``.
    """
    if not 1 <= packets_min <= packets_max:
        raise ConfigError(f"need 1 <= packets_min <= packets_max, got [{packets_min}, {packets_max}]")
    if not profiles:
        raise EmptyPopulation()
    ids = [p.tx_id for p in profiles]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate tx_id in population")

    def work(p):
        return _gen_transmitter(p, packets_min, packets_max, ch, seed)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            blocks = list(pool.map(work, profiles))
    else:
        blocks = [work(p) for p in profiles]

    iq = to_iq(np.concatenate(blocks))
    iq = iq / np.max(np.abs(iq))
    tx_ids = np.concatenate([np.full(len(b), p.tx_id) for b, p in zip(blocks, profiles)])
    counts = {str(p.tx_id): len(b) for b, p in zip(blocks, profiles)}
    manifest = {
        "kind": "simulated",
        "seed": int(seed),
        "config": {
            "packets_min": packets_min,
            "packets_max": packets_max,
            "channel": asdict(ch),
            "n_transmitters": len(profiles),
        },
        "counts": counts,
        "sample_count": int(len(tx_ids)),
    }
    log.info("generated corpus: %d transmitters, %d samples", len(profiles), len(tx_ids))
    return Corpus(iq=iq, tx_ids=tx_ids, profiles=list(profiles), manifest=manifest)


def outlier_corpus(iq: np.ndarray, manifest: dict) -> Corpus:
    """Wrap generated samples as a corpus labeled with the reserved OUTLIER id."""
    iq = np.asarray(iq, dtype=np.float32)
    m = dict(manifest)
    m.setdefault("kind", "generated")
    m["counts"] = {str(OUTLIER_ID): len(iq)} if len(iq) else {}
    m["sample_count"] = len(iq)
    return Corpus(iq=iq, tx_ids=np.full(len(iq), OUTLIER_ID), manifest=m)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def save_corpus(c: Corpus, path) -> None:
    path = Path(path)
    n_tx = len(np.unique(c.tx_ids))
    rec = np.empty(len(c), dtype=RECORD_DTYPE)
    rec["tx_id"] = c.tx_ids
    rec["iq"] = c.iq
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, len(c), n_tx))
        f.write(rec.tobytes())
    doc = dict(c.manifest)
    doc["profiles"] = [p.to_dict() for p in c.profiles]
    manifest_path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_corpus(path) -> Corpus:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise CorruptCorpus("truncated header", len(raw))
    magic, version, n, n_tx = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CorruptCorpus(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise CorruptCorpus(f"unsupported version {version}", 4)
    body = len(raw) - _HEADER.size
    if body != n * RECORD_DTYPE.itemsize:
        full = body // RECORD_DTYPE.itemsize
        offset = _HEADER.size + min(full, n) * RECORD_DTYPE.itemsize
        raise CorruptCorpus(f"expected {n} records, body holds {body} bytes", offset)
    rec = np.frombuffer(raw, dtype=RECORD_DTYPE, offset=_HEADER.size, count=n)
    if len(np.unique(rec["tx_id"])) != n_tx:
        raise CorruptCorpus("transmitter count in header disagrees with records", 10)
    if not np.all(np.isfinite(rec["iq"])):
        bad = int(np.flatnonzero(~np.isfinite(rec["iq"]).all(axis=(1, 2)))[0])
        raise CorruptCorpus("non-finite sample", _HEADER.size + bad * RECORD_DTYPE.itemsize)

    mpath = manifest_path(path)
    try:
        doc = json.loads(mpath.read_text())
    except FileNotFoundError:
        raise ManifestMismatch(f"missing manifest {mpath.name}") from None
    except json.JSONDecodeError as e:
        raise ManifestMismatch(f"unreadable manifest: {e}") from None
    profiles = [TransmitterProfile.from_dict(d) for d in doc.pop("profiles", [])]

    if doc.get("sample_count") != n:
        raise ManifestMismatch(f"manifest sample_count {doc.get('sample_count')} != file count {n}")
    ids, cnt = np.unique(rec["tx_id"], return_counts=True)
    actual = {str(int(i)): int(c) for i, c in zip(ids, cnt)}
    if "counts" in doc and {str(k): int(v) for k, v in doc["counts"].items()} != actual:
        raise ManifestMismatch("per-transmitter counts differ from file contents")
    known = {p.tx_id for p in profiles} | {OUTLIER_ID}
    if profiles and not set(int(i) for i in ids) <= known:
        raise ManifestMismatch("samples reference transmitters missing from profiles")

    return Corpus(iq=rec["iq"].copy(), tx_ids=rec["tx_id"].copy(), profiles=profiles, manifest=doc)
