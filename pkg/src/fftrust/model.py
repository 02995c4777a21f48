"""Compact sequence encoder / decoder / classifier.

Per epoch, the raw ``channels x epoch_len`` window is flattened and passed
through a two-layer tanh MLP to a ``D``-wide embedding.  A learned ``T x T``
matrix then mixes embeddings across the sequence, followed by a pointwise
affine map and a residual connection, giving the sequence features ``F``.
The decoder mirrors the encoder MLP; the classifier is a per-epoch linear
head producing logits.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .exceptions import ContractError, DimensionError, ParseError
from .noise import make_rng

PARAM_ORDER = (
    "enc_w1", "enc_b1", "enc_w2", "enc_b2",
    "mix_t", "mix_w", "mix_b",
    "dec_w1", "dec_b1", "dec_w2", "dec_b2",
    "cls_w", "cls_b",
)


@dataclass(frozen=True)
class ModelDims:
    channels: int = 2
    epoch_len: int = 64
    T: int = 8
    D: int = 32
    C: int = 5
    hidden: int = 64

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ContractError(f"ModelDims.{name} must be a positive integer, got {value!r}")
        if self.C < 2:
            raise ContractError(f"ModelDims.C must be >= 2, got {self.C}")
        if self.T < 2:
            raise ContractError(f"ModelDims.T must be >= 2, got {self.T}")

    @property
    def input_dim(self):
        return self.channels * self.epoch_len


class ModelParams:
    """Named collection of trainable tensors."""

    def __init__(self, dims, tensors):
        self.dims = dims
        self.tensors = dict(tensors)
        expected = param_shapes(dims)
        for name, shape in expected.items():
            if name not in self.tensors:
                raise ContractError(f"missing parameter {name!r}")
            if self.tensors[name].shape != shape:
                raise DimensionError(f"parameter {name!r} has shape {self.tensors[name].shape}, expected {shape}")

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return (self.tensors[name] for name in PARAM_ORDER)

    def items(self):
        return ((name, self.tensors[name]) for name in PARAM_ORDER)

    @property
    def n_parameters(self):
        return int(sum(t.size for t in self))

    def zero_grad(self):
        for t in self:
            t.zero_grad()

    def copy(self):
        return ModelParams(
            self.dims, {n: Tensor(t.data.copy(), requires_grad=True) for n, t in self.items()}
        )

    def state(self):
        return {name: t.data for name, t in self.items()}


def param_shapes(dims):
    H, D, T, C, In = dims.hidden, dims.D, dims.T, dims.C, dims.input_dim
    return {
        "enc_w1": (In, H), "enc_b1": (H,), "enc_w2": (H, D), "enc_b2": (D,),
        "mix_t": (T, T), "mix_w": (D, D), "mix_b": (D,),
        "dec_w1": (D, H), "dec_b1": (H,), "dec_w2": (H, In), "dec_b2": (In,),
        "cls_w": (D, C), "cls_b": (C,),
    }


def init_bound(shape):
    """Xavier-uniform half-width ``sqrt(6 / (fan_in + fan_out))``."""
    fan_in, fan_out = shape
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def init_params(dims, seed):
    rng = make_rng(seed)
    tensors = {}
    for name, shape in param_shapes(dims).items():
        if len(shape) == 1:
            data = np.zeros(shape)
        else:
            bound = init_bound(shape)
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(dims, tensors)


def _check_input(x, dims):
    expected = (dims.T, dims.channels, dims.epoch_len)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise DimensionError(f"encode: expected input shape (B, {', '.join(map(str, expected))}), got {x.shape}")


def encode(x, params, dropout_rate=0.0, training=False, rng_seed=None):
    """Sequence features ``F`` of shape ``(B, T, D)``."""
    dims = params.dims
    x = ad.constant(x)
    _check_input(x, dims)
    if not 0.0 <= dropout_rate < 1.0:
        raise ContractError(f"dropout_rate must lie in [0, 1), got {dropout_rate}")
    B, T = x.shape[0], dims.T

    flat = x.reshape(B * T, dims.input_dim)
    h = ad.tanh(flat @ params["enc_w1"] + params["enc_b1"])
    if training and dropout_rate > 0:
        rng = make_rng(0 if rng_seed is None else rng_seed)
        keep = rng.random(h.shape) >= dropout_rate
        h = h * (keep / (1.0 - dropout_rate))
    e = ad.tanh(h @ params["enc_w2"] + params["enc_b2"]).reshape(B, T, dims.D)

    # temporal mixing: mixed[b] = mix_t @ e[b]
    mixed = (e.transpose(0, 2, 1) @ params["mix_t"].T).transpose(0, 2, 1)
    ctx = ad.tanh(mixed.reshape(B * T, dims.D) @ params["mix_w"] + params["mix_b"])
    return e + ctx.reshape(B, T, dims.D)


def _check_features(F, dims, op):
    if F.ndim != 3 or F.shape[1:] != (dims.T, dims.D):
        raise DimensionError(f"{op}: expected features of shape (B, {dims.T}, {dims.D}), got {F.shape}")


def decode(F, params):
    """Reconstruction ``x_hat`` of shape ``(B, T, channels, epoch_len)``."""
    dims = params.dims
    F = ad.constant(F)
    _check_features(F, dims, "decode")
    B = F.shape[0]
    flat = F.reshape(B * dims.T, dims.D)
    h = ad.tanh(flat @ params["dec_w1"] + params["dec_b1"])
    out = h @ params["dec_w2"] + params["dec_b2"]
    return out.reshape(B, dims.T, dims.channels, dims.epoch_len)


def classify(F, params):
    """Per-epoch logits of shape ``(B, T, C)``."""
    dims = params.dims
    F = ad.constant(F)
    _check_features(F, dims, "classify")
    B = F.shape[0]
    z = F.reshape(B * dims.T, dims.D) @ params["cls_w"] + params["cls_b"]
    return z.reshape(B, dims.T, dims.C)


# -- checkpoint: flat little-endian f64 blob + JSON manifest --------------------

def pack_arrays(arrays):
    """Concatenate named arrays into ``(manifest entries, bytes)``."""
    entries, chunks, offset = [], [], 0
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    return entries, b"".join(chunks)


def unpack_arrays(entries, blob):
    total = len(blob) // 8
    if len(blob) % 8:
        raise ParseError("payload length is not a multiple of 8 bytes", len(blob))
    values = np.frombuffer(blob, dtype="<f8")
    out = {}
    for entry in entries:
        start, count = entry["offset"], entry["count"]
        if start + count > total:
            raise ParseError(f"array {entry['name']!r} runs past end of payload", 8 * total)
        out[entry["name"]] = values[start:start + count].reshape(entry["shape"]).astype(np.float64)
    return out


def save_params(params, prefix):
    """Write ``<prefix>.bin`` (raw f64) and ``<prefix>.json`` (manifest)."""
    entries, blob = pack_arrays((n, t.data) for n, t in params.items())
    with open(f"{prefix}.bin", "wb") as fh:
        fh.write(blob)
    manifest = {"format": "fftrust-params", "version": 1, "dims": asdict(params.dims), "arrays": entries}
    with open(f"{prefix}.json", "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_params(prefix):
    with open(f"{prefix}.json") as fh:
        manifest = json.load(fh)
    with open(f"{prefix}.bin", "rb") as fh:
        blob = fh.read()
    dims = ModelDims(**manifest["dims"])
    arrays = unpack_arrays(manifest["arrays"], blob)
    return ModelParams(dims, {n: Tensor(a, requires_grad=True) for n, a in arrays.items()})
