"""Run configuration: validated fields, noise-rate keyed defaults, hashing."""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .data import DOMAIN_NAMES, PHASE_SPREAD
from .exceptions import ConfigError
from .model import ModelDims

# Loss-weight defaults keyed by noise rate.  Rate 0.4 takes the midpoint of
# the IM weight range; rates in between snap to the nearest key.
RATE_DEFAULTS = {
    0.2: dict(lambda_ce=1.0, lambda_im=0.02, lambda_elr=0.12, m_elr=0.92, lambda_f=0.08, m_f=0.9,
              warmup_start=20, warmup_end=25),
    0.4: dict(lambda_ce=1.0, lambda_im=0.11, lambda_elr=0.12, m_elr=0.92, lambda_f=0.08, m_f=0.9,
              warmup_start=20, warmup_end=30),
    0.6: dict(lambda_ce=1.1, lambda_im=0.2, lambda_elr=0.1, m_elr=0.9, lambda_f=0.1, m_f=0.9,
              warmup_start=20, warmup_end=35),
}
KEYED = tuple(RATE_DEFAULTS[0.2])
NOISE_TYPES = ("none", "sym", "asym")


def rate_defaults(rate):
    key = min(RATE_DEFAULTS, key=lambda k: (abs(k - rate), k))
    return dict(RATE_DEFAULTS[key])


@dataclass
class NoiseConfig:
    type: str = "none"
    rate: float = 0.0
    adjacency: dict = None

    def validate(self):
        if self.type not in NOISE_TYPES:
            raise ConfigError(f"noise.type must be one of {NOISE_TYPES}, got {self.type!r}")
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"noise.rate must lie in [0, 1), got {self.rate}")
        if self.type == "none" and self.rate != 0:
            raise ConfigError("noise.rate must be 0 when noise.type is 'none'")
        if self.adjacency is not None and not isinstance(self.adjacency, dict):
            raise ConfigError("noise.adjacency must map a stage to its list of plausible stages")


@dataclass
class TrainConfig:
    # model / data
    channels: int = 2
    epoch_len: int = 64
    T: int = 8
    D: int = 32
    hidden: int = 64
    n_classes: int = 5
    n_seq: int = 200
    data_seed: int = 0
    phase_spread: float = PHASE_SPREAD
    dataset: str = None
    # optimisation
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1.2e-3
    weight_decay: float = 1e-4
    dropout: float = 0.1
    domains_per_batch: int = 2
    val_fraction: float = 0.1
    # objective; None means "take the default for the noise rate"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    lambda_ce: float = None
    lambda_im: float = None
    lambda_elr: float = None
    m_elr: float = None
    lambda_f: float = None
    m_f: float = None
    warmup_start: float = None
    warmup_end: float = None
    lambda_rec: float = 0.5
    lambda_ep: float = 0.5
    lambda_seq: float = 0.5
    fourier_variant: str = "linear"
    fourier_eps: float = 1e-4
    # ablation switches
    time_elr: bool = True
    fourier_elr: bool = True
    ff_cdr: bool = True
    # protocol
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    target_domain: str = "I"

    def __post_init__(self):
        if isinstance(self.noise, dict):
            self.noise = NoiseConfig(**self.noise)
        keyed = rate_defaults(self.noise.rate)
        for name in KEYED:
            if getattr(self, name) is None:
                setattr(self, name, keyed[name])
        self.seeds = [int(s) for s in self.seeds]
        self.validate()

    def validate(self):
        self.noise.validate()
        try:
            self.dims
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        positive = ("epochs", "batch_size", "n_seq")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must lie in [0, 1), got {self.val_fraction}")
        if self.domains_per_batch is not None and self.domains_per_batch < 2:
            raise ConfigError("domains_per_batch must be >= 2 (or null for even interleaving)")
        for name in ("lambda_ce", "lambda_im", "lambda_elr", "lambda_f", "lambda_rec", "lambda_ep", "lambda_seq"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        for name in ("m_elr", "m_f"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if not self.warmup_start < self.warmup_end:
            raise ConfigError(f"warm-up needs warmup_start < warmup_end, got {self.warmup_start}, {self.warmup_end}")
        if self.fourier_variant not in ("linear", "log"):
            raise ConfigError(f"fourier_variant must be 'linear' or 'log', got {self.fourier_variant!r}")
        if not 0 < self.fourier_eps < 1:
            raise ConfigError(f"fourier_eps must lie in (0, 1), got {self.fourier_eps}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds) or min(self.seeds) < 0:
            raise ConfigError(f"seeds must be distinct non-negative integers, got {self.seeds}")
        if self.dataset is None and self.target_domain not in DOMAIN_NAMES:
            raise ConfigError(f"target_domain must be one of {DOMAIN_NAMES}, got {self.target_domain!r}")
        if self.phase_spread < 0:
            raise ConfigError(f"phase_spread must be >= 0, got {self.phase_spread}")

    @property
    def dims(self):
        return ModelDims(channels=self.channels, epoch_len=self.epoch_len, T=self.T, D=self.D,
                         C=self.n_classes, hidden=self.hidden)

    def effective_weights(self):
        """Loss weights after the ablation switches are applied."""
        return {
            "lambda_ce": self.lambda_ce,
            "lambda_im": self.lambda_im if self.ff_cdr else 0.0,
            "lambda_elr": self.lambda_elr if self.time_elr else 0.0,
            "m_elr": self.m_elr,
            "lambda_f": self.lambda_f if self.fourier_elr else 0.0,
            "m_f": self.m_f,
            "lambda_rec": self.lambda_rec,
            "lambda_ep": self.lambda_ep,
            "lambda_seq": self.lambda_seq,
            "warmup_start": self.warmup_start,
            "warmup_end": self.warmup_end,
            "fourier_variant": self.fourier_variant,
            "fourier_eps": self.fourier_eps,
        }

    def estimator_params(self, seed):
        return dict(n_classes=self.n_classes, feature_dim=self.D, hidden_dim=self.hidden, epochs=self.epochs,
                    batch_size=self.batch_size, lr=self.lr, weight_decay=self.weight_decay,
                    dropout=self.dropout, domains_per_batch=self.domains_per_batch, random_state=int(seed),
                    **self.effective_weights())

    def to_dict(self):
        return asdict(self)

    def run_hash(self, seed=None):
        """Digest of every field that influences training (plus ``seed`` if given)."""
        d = self.to_dict()
        if seed is not None:
            d["seeds"] = [int(seed)]
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **overrides):
        return from_dict(merge(self.to_dict(), overrides))


def merge(base, overrides):
    """Nested dict merge; ``None`` override values are ignored."""
    out = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out


def from_dict(d):
    known = {f.name for f in fields(TrainConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
    noise = d.get("noise", {})
    if not isinstance(noise, dict):
        raise ConfigError("noise must be an object")
    bad = sorted(set(noise) - {f.name for f in fields(NoiseConfig)})
    if bad:
        raise ConfigError(f"unknown noise field(s): {', '.join(bad)}")
    try:
        return TrainConfig(**d)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path, overrides=None):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return from_dict(merge(d, overrides or {}))


def config_diff(a, b, prefix=""):
    """``[(field, a_value, b_value)]`` for every differing (nested) field."""
    out = []
    for key in sorted(set(a) | set(b)):
        va, vb = a.get(key), b.get(key)
        if isinstance(va, dict) and isinstance(vb, dict):
            out.extend(config_diff(va, vb, f"{prefix}{key}."))
        elif va != vb:
            out.append((prefix + key, va, vb))
    return out


def ablation_configs(base):
    """The 8 on/off combinations of the three regularizers, all-off first."""
    rows = []
    for code in range(8):
        flags = dict(time_elr=bool(code & 1), fourier_elr=bool(code & 2), ff_cdr=bool(code & 4))
        rows.append((flags, replace(base, **flags)))
    return rows
