"""The 4-stage DCGAN-style discriminator and its checkpoint format.

Layer stack for a 128x128 input::

    conv1 4x4/s2/p1 -> lrelu                 128 -> 64
    conv2 4x4/s2/p1 -> bn2 -> lrelu           64 -> 32   (no conv bias under BN)
    conv3 4x4/s2/p1 -> bn3 -> lrelu           32 -> 16
    conv4 4x4/s2/p1 -> bn4 -> lrelu           16 -> 8
    head  8x8/s1/p0 -> one logit               8 -> 1

The head kernel is ``input_size // 16`` so it always collapses the last map.

Checkpoint layout (all integers little-endian)::

    b"GFCK" | u32 version | u64 total length
    u32 len | config JSON
    u32 len | metadata JSON
    u32 tensor count, then per tensor:
        u16 len | name | u8 ndim | u32 dims... | float32 LE data
    32-byte SHA-256 of everything above

Tensors are written in :meth:`Discriminator.param_names` order, followed by
optional Adam moments named ``adam.m/<param>`` and ``adam.v/<param>``.
"""

import hashlib
import json
import struct
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import nncore
from .errors import (
    CheckpointDigestError,
    CheckpointError,
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
    ShapeError,
)

MAGIC = b"GFCK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")
_DIGEST_LEN = 32


@dataclass(frozen=True)
class DiscriminatorConfig:
    input_size: int = 128
    in_channels: int = 3
    widths: tuple = (64, 128, 256, 512)
    batchnorm: tuple = (False, True, True, True)
    leaky_slope: float = nncore.LEAKY_SLOPE
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "batchnorm", tuple(bool(b) for b in self.batchnorm))
        if len(self.widths) != 4 or any(w < 1 for w in self.widths):
            raise ConfigError(f"need exactly 4 positive conv widths, got {self.widths}", "config.architecture")
        if self.batchnorm != (False, True, True, True):
            raise ConfigError(
                f"batch norm must be on stages 2-4 only, got {self.batchnorm}", "config.architecture"
            )
        if self.input_size < 16 or self.input_size % 16:
            raise ConfigError(f"input_size must be a positive multiple of 16, got {self.input_size}")
        if not 0 <= self.leaky_slope < 1:
            raise ConfigError(f"leaky_slope must be in [0, 1), got {self.leaky_slope}")

    @property
    def head_kernel(self):
        return self.input_size // 16

    def spatial_trace(self):
        sizes = [self.input_size]
        for _ in range(4):
            sizes.append(nncore.conv_output_size(sizes[-1], 4, 2, 1))
        sizes.append(nncore.conv_output_size(sizes[-1], self.head_kernel, 1, 0))
        return sizes

    def to_dict(self):
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["batchnorm"] = list(self.batchnorm)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def parameter_count(config):
    """Closed-form number of trainable parameters (running stats excluded)."""
    total, c_in = 0, config.in_channels
    for c_out, bn in zip(config.widths, config.batchnorm):
        total += c_in * c_out * 16 + (2 * c_out if bn else c_out)
        c_in = c_out
    return total + c_in * config.head_kernel**2 + 1


@dataclass
class ForwardCache:
    stages: list = field(default_factory=list)
    head_input: np.ndarray = None
    head_cols: np.ndarray = None


class Discriminator:
    """Parameters plus forward/backward for the forensic classifier.

    Train-mode :meth:`forward` stores the activations needed by
    :meth:`backward` on the instance and updates batch-norm running
    statistics; infer-mode forward touches nothing.
    """

    def __init__(self, config, params, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.params = OrderedDict((k, np.asarray(params[k], dtype=self.dtype)) for k in self.param_names(config))
        self.cache = None
        self.input_grad = None

    @staticmethod
    def param_names(config, trainable_only=False):
        names = []
        for i, bn in enumerate(config.batchnorm, start=1):
            names.append(f"conv{i}.weight")
            if not bn:
                names.append(f"conv{i}.bias")
            else:
                names += [f"bn{i}.gamma", f"bn{i}.beta"]
                if not trainable_only:
                    names += [f"bn{i}.running_mean", f"bn{i}.running_var"]
        return names + ["head.weight", "head.bias"]

    def trainable(self):
        return OrderedDict((k, self.params[k]) for k in self.param_names(self.config, trainable_only=True))

    def parameter_shapes(self):
        return {k: v.shape for k, v in self.params.items()}

    def _conv(self, i):
        return nncore.ConvParams(self.params[f"conv{i}.weight"], self.params.get(f"conv{i}.bias"), 2, 1)

    def _head(self):
        return nncore.ConvParams(self.params["head.weight"], self.params["head.bias"], 1, 0)

    def _bn(self, i):
        p = self.params
        return nncore.BatchNormParams(
            p[f"bn{i}.gamma"], p[f"bn{i}.beta"], p[f"bn{i}.running_mean"], p[f"bn{i}.running_var"],
            eps=self.config.bn_eps, momentum=self.config.bn_momentum,
        )

    def forward(self, x, mode="infer"):
        """Logits of shape (N,) for input (N, C, S, S). ``score = sigmoid(logit)``."""
        cfg = self.config
        expected = (cfg.in_channels, cfg.input_size, cfg.input_size)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise ShapeError(f"model expects input (N, {', '.join(map(str, expected))}), got {x.shape}")
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        train = mode == "train"
        if train and x.shape[0] < 2:
            raise ShapeError(f"train-mode forward needs a batch of at least 2, got {x.shape[0]}")
        x = x.astype(self.dtype, copy=False)
        cache = ForwardCache()
        slope = cfg.leaky_slope
        for i, bn in enumerate(cfg.batchnorm, start=1):
            conv = self._conv(i)
            h, cols = nncore.conv2d_forward(x, conv, return_cols=True)
            bn_cache = None
            if bn:
                h, updated, bn_cache = nncore.batchnorm_forward(h, self._bn(i), mode)
                if train:
                    self.params[f"bn{i}.running_mean"] = updated.running_mean
                    self.params[f"bn{i}.running_var"] = updated.running_var
            cache.stages.append((x, cols, bn_cache, h))
            x = nncore.leaky_relu(h, slope)
        logits, cols = nncore.conv2d_forward(x, self._head(), return_cols=True)
        if train:
            cache.head_input, cache.head_cols = x, cols
            self.cache = cache
        return logits.reshape(-1)

    def backward(self, grad_logits):
        """Gradients for every trainable parameter, keyed like :attr:`params`."""
        cache = self.cache
        if cache is None:
            raise ShapeError("backward needs a preceding train-mode forward")
        n = cache.head_input.shape[0]
        grad_logits = np.asarray(grad_logits, dtype=self.dtype)
        if grad_logits.shape != (n,):
            raise ShapeError(f"grad_logits shape {grad_logits.shape} does not match batch size {n}")
        grads = {}
        g, grads["head.weight"], grads["head.bias"] = nncore.conv2d_backward(
            cache.head_input, self._head(), grad_logits.reshape(n, 1, 1, 1), cols=cache.head_cols
        )
        for i in range(4, 0, -1):
            x, cols, bn_cache, pre = cache.stages[i - 1]
            g = nncore.leaky_relu_backward(pre, g, self.config.leaky_slope)
            if bn_cache is not None:
                g, grads[f"bn{i}.gamma"], grads[f"bn{i}.beta"] = nncore.batchnorm_backward(g, bn_cache)
            g, grads[f"conv{i}.weight"], gb = nncore.conv2d_backward(x, self._conv(i), g, cols=cols)
            if gb is not None:
                grads[f"conv{i}.bias"] = gb
        self.input_grad = g
        return OrderedDict((k, grads[k]) for k in self.param_names(self.config, trainable_only=True))

    def score(self, x):
        return nncore.sigmoid(self.forward(x, "infer"))

    def copy(self, dtype=None):
        return Discriminator(self.config, {k: v.copy() for k, v in self.params.items()}, dtype or self.dtype)


def build(config=None, init_seed=0, dtype=np.float32):
    """Fresh discriminator: conv weights ~ N(0, 0.02), biases 0, BN gamma ~ N(1, 0.02).

    Convs followed by batch norm carry no bias: BN's mean subtraction makes
    such a bias a dead parameter with an identically zero gradient.
    """
    config = config or DiscriminatorConfig()
    rng = np.random.default_rng(init_seed)
    params = {}
    c_in = config.in_channels
    for i, (c_out, bn) in enumerate(zip(config.widths, config.batchnorm), start=1):
        params[f"conv{i}.weight"] = rng.normal(0.0, 0.02, (c_out, c_in, 4, 4))
        if not bn:
            params[f"conv{i}.bias"] = np.zeros(c_out)
        else:
            params[f"bn{i}.gamma"] = rng.normal(1.0, 0.02, c_out)
            params[f"bn{i}.beta"] = np.zeros(c_out)
            params[f"bn{i}.running_mean"] = np.zeros(c_out)
            params[f"bn{i}.running_var"] = np.ones(c_out)
        c_in = c_out
    k = config.head_kernel
    params["head.weight"] = rng.normal(0.0, 0.02, (1, c_in, k, k))
    params["head.bias"] = np.zeros(1)
    return Discriminator(config, params, dtype)


# -- checkpoints -------------------------------------------------------------


@dataclass
class Checkpoint:
    model: Discriminator
    metadata: dict = field(default_factory=dict)
    optimizer: object = None  # optim.AdamState or None


def _json_bytes(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _pack_tensor(name, arr):
    raw = name.encode("utf-8")
    arr = np.ascontiguousarray(arr, dtype="<f4")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def to_bytes(model, metadata=None, optimizer=None):
    meta = dict(metadata or {})
    tensors = list(model.params.items())
    if optimizer is not None:
        meta["optimizer"] = optimizer.describe()
        for k in model.param_names(model.config, trainable_only=True):
            tensors.append((f"adam.m/{k}", optimizer.m[k]))
        for k in model.param_names(model.config, trainable_only=True):
            tensors.append((f"adam.v/{k}", optimizer.v[k]))
    body = bytearray()
    for blob in (_json_bytes(model.config.to_dict()), _json_bytes(meta)):
        body += struct.pack("<I", len(blob)) + blob
    body += struct.pack("<I", len(tensors))
    for name, arr in tensors:
        body += _pack_tensor(name, arr)
    total = _HEADER.size + len(body) + _DIGEST_LEN
    data = _HEADER.pack(MAGIC, FORMAT_VERSION, total) + bytes(body)
    return data + hashlib.sha256(data).digest()


class _Reader:
    def __init__(self, data, pos):
        self.data, self.pos = data, pos

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint body is shorter than its own field lengths")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def from_bytes(data, source=None):
    data = bytes(data)
    if len(data) < _HEADER.size:
        raise CheckpointTruncatedError(_HEADER.size, len(data), source)
    magic, version, total = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError(f"not a discriminator checkpoint (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
    if len(data) < total:
        raise CheckpointTruncatedError(total, len(data), source)
    if len(data) > total:
        raise CheckpointFormatError(f"checkpoint has {len(data) - total} trailing bytes")
    payload, digest = data[:-_DIGEST_LEN], data[-_DIGEST_LEN:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointDigestError("checkpoint digest mismatch (file corrupted)")

    r = _Reader(payload, _HEADER.size)
    (n,) = r.unpack("<I")
    config = DiscriminatorConfig.from_dict(json.loads(r.take(n)))
    (n,) = r.unpack("<I")
    meta = json.loads(r.take(n))
    (count,) = r.unpack("<I")
    tensors = OrderedDict()
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        tensors[name] = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)

    names = Discriminator.param_names(config)
    missing = [k for k in names if k not in tensors]
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors {missing}")
    model = Discriminator(config, {k: tensors[k] for k in names})
    for k in names:
        expected = build_shapes(config)[k]
        if model.params[k].shape != expected:
            raise CheckpointError(f"tensor {k} has shape {model.params[k].shape}, expected {expected}")

    optimizer = None
    if "optimizer" in meta:
        from .optim import AdamState

        trainable = Discriminator.param_names(config, trainable_only=True)
        optimizer = AdamState.from_description(
            meta.pop("optimizer"),
            OrderedDict((k, tensors[f"adam.m/{k}"]) for k in trainable),
            OrderedDict((k, tensors[f"adam.v/{k}"]) for k in trainable),
        )
    return Checkpoint(model, meta, optimizer)


def build_shapes(config):
    shapes, c_in = {}, config.in_channels
    for i, (c_out, bn) in enumerate(zip(config.widths, config.batchnorm), start=1):
        shapes[f"conv{i}.weight"] = (c_out, c_in, 4, 4)
        if not bn:
            shapes[f"conv{i}.bias"] = (c_out,)
        else:
            for s in ("gamma", "beta", "running_mean", "running_var"):
                shapes[f"bn{i}.{s}"] = (c_out,)
        c_in = c_out
    shapes["head.weight"] = (1, c_in, config.head_kernel, config.head_kernel)
    shapes["head.bias"] = (1,)
    return shapes


def save_checkpoint(path, model, metadata=None, optimizer=None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(to_bytes(model, metadata, optimizer))
    return path


def load_checkpoint(path):
    path = Path(path)
    try:
        data = path.read_bytes()
    except FileNotFoundError as exc:
        raise CheckpointError(f"checkpoint not found: {path}", "io.checkpoint_missing") from exc
    return from_bytes(data, source=str(path))


def save(model, path):
    return save_checkpoint(path, model)


def load(path):
    return load_checkpoint(path).model
