"""Synthetic multi-domain hypnogram-like sequences.

Each epoch of class ``c`` carries a tone at ``(c + 1) * 2`` cycles per
epoch (optionally jittered) plus weaker harmonics.  A domain is a fixed
acquisition transform: channel mixing, per-channel gain and offset, and an
additive Gaussian noise floor.  Stage sequences follow a sticky Markov
chain.

Dataset file layout (all integers little-endian)::

    magic       4 bytes   b"NLDG"
    version     u16       FORMAT_VERSION
    header_len  u32
    header      header_len bytes of UTF-8 JSON (dims, domains, seeds, noise)
    records     n_records fixed-size records:
        sample_id    u64
        domain_idx   u16   index into header["domain_table"]
        has_noisy    u8
        y_clean      T x i32
        y_noisy      T x i32   (zeros when has_noisy == 0)
        x            T*channels*epoch_len x f64, row-major
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import ConfigError, ContractError, ParseError, VersionError
from .model import ModelDims
from .noise import DEFAULT_ADJACENCY, STAGES, make_rng, resolve_adjacency

MAGIC = b"NLDG"
FORMAT_VERSION = 1
DOMAIN_NAMES = ("I", "II", "III", "IV", "V")
ID_STRIDE = 1_000_000
PHASE_SPREAD = 1.0


def tone_frequency(c):
    """Base tone of class ``c`` in cycles per epoch."""
    return (c + 1) * 2


@dataclass
class DomainSpec:
    domain_id: str
    gain: list = field(default_factory=lambda: [1.0, 1.0])
    dc_offset: list = field(default_factory=lambda: [0.0, 0.0])
    noise_floor_std: float = 0.0
    channel_mix: list = field(default_factory=lambda: [[1.0, 0.0], [0.0, 1.0]])
    class_freq_jitter: float = 0.0

    def __post_init__(self):
        gain = np.asarray(self.gain, dtype=float)
        mix = np.asarray(self.channel_mix, dtype=float)
        if np.any(gain <= 0):
            raise ContractError(f"domain {self.domain_id}: gain must be positive")
        if self.noise_floor_std < 0:
            raise ContractError(f"domain {self.domain_id}: noise_floor_std must be >= 0")
        if mix.ndim != 2 or mix.shape[0] != mix.shape[1] or mix.shape[0] != gain.size:
            raise ContractError(f"domain {self.domain_id}: channel_mix must be {gain.size}x{gain.size}")
        if abs(np.linalg.det(mix)) <= 1e-6:
            raise ContractError(f"domain {self.domain_id}: channel_mix is not invertible")
        if len(self.dc_offset) != gain.size:
            raise ContractError(f"domain {self.domain_id}: dc_offset needs {gain.size} entries")
        if not 0 <= self.class_freq_jitter < 0.5:
            raise ContractError(f"domain {self.domain_id}: class_freq_jitter must lie in [0, 0.5)")

    @property
    def channels(self):
        return len(self.gain)

    def to_dict(self):
        return asdict(self)


@dataclass
class StageMarkov:
    initial: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=float)
        self.transition = np.asarray(self.transition, dtype=float)
        C = self.initial.size
        if self.transition.shape != (C, C):
            raise ContractError(f"transition must be {C}x{C}, got {self.transition.shape}")
        if np.any(self.transition < 0) or np.any(np.abs(self.transition.sum(axis=1) - 1) > 1e-12):
            raise ContractError("transition rows must be probability vectors")
        if np.any(self.initial < 0) or abs(self.initial.sum() - 1) > 1e-12:
            raise ContractError("initial distribution must be a probability vector")

    @classmethod
    def default(cls, n_classes=5, stay=0.7, near_share=0.75, adjacency=None):
        """Sticky chain: ``stay`` on the diagonal, the rest biased to adjacent stages."""
        if adjacency is None and n_classes == len(STAGES):
            adjacency = DEFAULT_ADJACENCY
        if adjacency is not None:
            adj = resolve_adjacency(adjacency, n_classes)
        else:
            adj = [[j for j in (i - 1, i + 1) if 0 <= j < n_classes] for i in range(n_classes)]
        t = np.zeros((n_classes, n_classes))
        for i in range(n_classes):
            near = sorted(set(adj[i]))
            far = [j for j in range(n_classes) if j != i and j not in near]
            share = near_share if far else 1.0
            t[i, near] = (1 - stay) * share / len(near)
            if far:
                t[i, far] = (1 - stay) * (1 - share) / len(far)
            t[i, i] = stay
            t[i] /= t[i].sum()
        return cls(np.full(n_classes, 1.0 / n_classes), t)

    def sample(self, rng, n_seq, T):
        C = self.initial.size
        out = np.empty((n_seq, T), dtype=np.int64)
        cdf0 = np.cumsum(self.initial)
        cdf = np.cumsum(self.transition, axis=1)
        u = rng.random((n_seq, T))
        out[:, 0] = np.minimum(np.searchsorted(cdf0, u[:, 0], side="right"), C - 1)
        for t in range(1, T):
            rows = cdf[out[:, t - 1]]
            out[:, t] = np.minimum((u[:, t, None] >= rows).sum(axis=1), C - 1)
        return out


class SequenceRecord:
    """One labelled sequence; ``x`` and ``y_clean`` are read-only."""

    __slots__ = ("sample_id", "domain_id", "x", "y_clean", "_y_noisy")

    def __init__(self, sample_id, domain_id, x, y_clean, y_noisy=None):
        self.sample_id = int(sample_id)
        self.domain_id = domain_id
        self.x = np.array(x, dtype=np.float64)
        self.y_clean = np.array(y_clean, dtype=np.int64)
        self.x.flags.writeable = False
        self.y_clean.flags.writeable = False
        self._y_noisy = None
        if y_noisy is not None:
            self.set_noisy(y_noisy)

    @property
    def y_noisy(self):
        return self._y_noisy

    @property
    def labels(self):
        """Training labels: the noisy ones once injected, else the clean ones."""
        return self.y_clean if self._y_noisy is None else self._y_noisy

    def set_noisy(self, labels):
        if self._y_noisy is not None:
            raise ContractError(f"record {self.sample_id}: noisy labels already set")
        y = np.array(labels, dtype=np.int64)
        if y.shape != self.y_clean.shape:
            raise ContractError(f"record {self.sample_id}: noisy labels have shape {y.shape}")
        y.flags.writeable = False
        self._y_noisy = y

    def __eq__(self, other):
        if not isinstance(other, SequenceRecord):
            return NotImplemented
        noisy_eq = (self._y_noisy is None and other._y_noisy is None) or (
            self._y_noisy is not None and other._y_noisy is not None
            and np.array_equal(self._y_noisy, other._y_noisy)
        )
        return (self.sample_id == other.sample_id and self.domain_id == other.domain_id
                and np.array_equal(self.x, other.x) and np.array_equal(self.y_clean, other.y_clean)
                and noisy_eq)

    def __repr__(self):
        return f"SequenceRecord(sample_id={self.sample_id}, domain_id={self.domain_id!r}, T={len(self.y_clean)})"


def default_domains():
    """Five domains with shift severity growing from I to V."""
    return [
        DomainSpec("I", [1.0, 1.0], [0.0, 0.0], 0.20, [[1.0, 0.0], [0.0, 1.0]], 0.15),
        DomainSpec("II", [1.2, 0.9], [0.15, -0.1], 0.25, [[1.0, 0.15], [0.1, 1.0]], 0.15),
        DomainSpec("III", [0.85, 1.15], [-0.2, 0.1], 0.30, [[1.0, -0.2], [0.2, 0.95]], 0.2),
        DomainSpec("IV", [1.3, 0.8], [0.25, 0.2], 0.30, [[0.9, 0.3], [-0.2, 1.0]], 0.2),
        DomainSpec("V", [0.7, 1.4], [-0.3, 0.35], 0.40, [[0.8, 0.45], [0.35, 0.9]], 0.25),
    ]


def clean_sources(labels, dims, rng, jitter=0.0, phase_spread=np.pi):
    """Domain-free source signals ``(n, T, channels, epoch_len)`` for ``labels``.

    Phases are drawn uniformly from ``[-phase_spread, phase_spread]``.
    """
    n, T = labels.shape
    L = dims.epoch_len
    t = np.arange(L) / L
    freq = np.array([tone_frequency(c) for c in range(dims.C)], dtype=float)[labels]
    if jitter > 0:
        freq = freq + rng.uniform(-jitter, jitter, size=freq.shape)
    amp = rng.uniform(0.8, 1.2, size=(n, T, dims.channels))
    phase = rng.uniform(-phase_spread, phase_spread, size=(n, T, dims.channels, 2))
    base = 2 * np.pi * freq[..., None, None] * t
    # fundamental plus one harmonic whose order alternates with the channel
    harmonic = np.array([2.0 + (ch % 2) for ch in range(dims.channels)])[:, None]
    h_amp = np.array([0.3 if ch % 2 == 0 else 0.2 for ch in range(dims.channels)])[:, None]
    fundamental = np.sin(base + phase[..., 0, None])
    overtone = h_amp * np.sin(harmonic * base + phase[..., 1, None])
    return amp[..., None] * (fundamental + overtone)


def apply_domain(sources, spec, rng):
    mix = np.asarray(spec.channel_mix, dtype=float)
    gain = np.asarray(spec.gain, dtype=float)[:, None]
    dc = np.asarray(spec.dc_offset, dtype=float)[:, None]
    x = np.einsum("ij,ntjl->ntil", mix, sources) * gain + dc
    if spec.noise_floor_std > 0:
        x = x + rng.normal(0.0, spec.noise_floor_std, size=x.shape)
    return x


def generate_domain(spec, n_seq, dims, markov=None, seed=0, domain_index=None, phase_spread=PHASE_SPREAD):
    """Generate ``n_seq`` records for one domain; deterministic per ``(spec, seed)``."""
    if spec.channels != dims.channels:
        raise ContractError(f"domain {spec.domain_id} has {spec.channels} channels, dims expect {dims.channels}")
    markov = markov or StageMarkov.default(dims.C)
    if markov.initial.size != dims.C:
        raise ContractError("Markov chain class count does not match dims.C")
    if domain_index is None:
        domain_index = DOMAIN_NAMES.index(spec.domain_id) if spec.domain_id in DOMAIN_NAMES else 0
    rng = make_rng(seed)
    labels = markov.sample(rng, n_seq, dims.T)
    x = apply_domain(clean_sources(labels, dims, rng, spec.class_freq_jitter, phase_spread), spec, rng)
    base = (domain_index + 1) * ID_STRIDE
    return [SequenceRecord(base + i, spec.domain_id, x[i], labels[i]) for i in range(n_seq)]


def generate_benchmark(dims=None, n_seq=200, seed=0, specs=None, markov=None, phase_spread=PHASE_SPREAD):
    """All default domains keyed by domain id."""
    dims = dims or ModelDims()
    specs = specs or default_domains()
    out = {}
    for k, spec in enumerate(specs):
        out[spec.domain_id] = generate_domain(spec, n_seq, dims, markov, seed=seed * 1000 + k, domain_index=k,
                                             phase_spread=phase_spread)
    return out


def oracle_predict(x, n_classes=5):
    """Classify epochs by the dominant rFFT bin summed over channels."""
    x = np.asarray(x, dtype=float)
    mags = np.abs(np.fft.rfft(x - x.mean(axis=-1, keepdims=True), axis=-1)).sum(axis=-2)
    mags[..., 0] = 0.0
    peak = mags.argmax(axis=-1)
    return np.clip(np.rint(peak / 2.0).astype(int) - 1, 0, n_classes - 1)


def stack_records(records, dims=None):
    """Arrays ``(x, labels, y_clean, sample_ids, domain_ids)`` for a record list."""
    if not records:
        if dims is None:
            raise ContractError("cannot stack an empty record list without dims")
        return (np.zeros((0, dims.T, dims.channels, dims.epoch_len)), np.zeros((0, dims.T), int),
                np.zeros((0, dims.T), int), np.zeros(0, np.int64), np.zeros(0, object))
    x = np.stack([r.x for r in records])
    labels = np.stack([r.labels for r in records])
    clean = np.stack([r.y_clean for r in records])
    ids = np.array([r.sample_id for r in records], dtype=np.int64)
    doms = np.array([r.domain_id for r in records], dtype=object)
    return x, labels, clean, ids, doms


def lodo_split(datasets, target):
    """Leave-one-domain-out: ``target`` is the test set, the rest train."""
    if target not in datasets:
        raise ConfigError(f"target domain {target!r} not among {sorted(datasets)}")
    sources = [d for d in datasets if d != target]
    if len(sources) < 2:
        raise ConfigError(f"need at least 2 source domains besides {target!r}, got {len(sources)}")
    train = [r for d in sources for r in datasets[d]]
    return train, list(datasets[target])


# -- binary dataset file -------------------------------------------------------

_HEAD = struct.Struct("<4sHI")
_REC_HEAD = struct.Struct("<QHB")


def _record_size(T, n_values):
    return _REC_HEAD.size + 8 * T + 8 * n_values


def write_dataset(records, path, dims=None, meta=None):
    records = list(records)
    if dims is None:
        if not records:
            raise ContractError("dims are required to write an empty dataset")
        T, ch, L = records[0].x.shape
        dims = {"T": T, "channels": ch, "epoch_len": L}
    elif isinstance(dims, ModelDims):
        dims = asdict(dims)
    table = []
    for r in records:
        if r.domain_id not in table:
            table.append(r.domain_id)
    header = {"dims": dims, "domain_table": table, "n_records": len(records), "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    T = int(dims["T"])
    shape = (T, int(dims["channels"]), int(dims["epoch_len"]))
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for r in records:
            if r.x.shape != shape:
                raise ContractError(f"record {r.sample_id} has shape {r.x.shape}, expected {shape}")
            has_noisy = r.y_noisy is not None
            fh.write(_REC_HEAD.pack(r.sample_id, table.index(r.domain_id), int(has_noisy)))
            fh.write(r.y_clean.astype("<i4").tobytes())
            fh.write((r.y_noisy if has_noisy else np.zeros(T)).astype("<i4").tobytes())
            fh.write(np.ascontiguousarray(r.x, dtype="<f8").tobytes())


def read_header(buf):
    if len(buf) < _HEAD.size:
        raise ParseError("file too short for header", len(buf))
    magic, version, hlen = _HEAD.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported dataset version {version} (expected {FORMAT_VERSION})")
    end = _HEAD.size + hlen
    if len(buf) < end:
        raise ParseError("truncated JSON header", len(buf))
    try:
        header = json.loads(buf[_HEAD.size:end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"malformed JSON header: {exc}", _HEAD.size) from exc
    return header, end


def read_dataset(path, with_header=False):
    """Read every record; raises before returning anything if the file is damaged."""
    with open(path, "rb") as fh:
        buf = fh.read()
    header, offset = read_header(buf)
    try:
        dims = header["dims"]
        T, ch, L = int(dims["T"]), int(dims["channels"]), int(dims["epoch_len"])
        n_records, table = int(header["n_records"]), header["domain_table"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"header missing field: {exc}", _HEAD.size) from exc
    n_values = T * ch * L
    size = _record_size(T, n_values)
    records = []
    for k in range(n_records):
        if offset + size > len(buf):
            raise ParseError(f"truncated record {k} of {n_records}", offset)
        sid, didx, has_noisy = _REC_HEAD.unpack_from(buf, offset)
        if didx >= len(table):
            raise ParseError(f"record {k}: domain index {didx} out of range", offset)
        pos = offset + _REC_HEAD.size
        y_clean = np.frombuffer(buf, "<i4", T, pos).astype(np.int64)
        y_noisy = np.frombuffer(buf, "<i4", T, pos + 4 * T).astype(np.int64)
        x = np.frombuffer(buf, "<f8", n_values, pos + 8 * T).reshape(T, ch, L)
        records.append(SequenceRecord(sid, table[didx], x, y_clean, y_noisy if has_noisy else None))
        offset += size
    if offset != len(buf):
        raise ParseError(f"{len(buf) - offset} trailing bytes after last record", offset)
    return (records, header) if with_header else records


def records_by_domain(records):
    out = {}
    for r in records:
        out.setdefault(r.domain_id, []).append(r)
    return out


__all__ = [
    "DOMAIN_NAMES", "STAGES", "DomainSpec", "StageMarkov", "SequenceRecord", "default_domains",
    "generate_domain", "generate_benchmark", "oracle_predict", "stack_records", "lodo_split",
    "write_dataset", "read_dataset", "read_header", "records_by_domain", "tone_frequency",
]
