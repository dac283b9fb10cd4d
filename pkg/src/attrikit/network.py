"""Residual feature extractors with a joint multi-attribute head.

Layout: 3x3 stride-1 stem conv -> BN -> ReLU, then stages of basic blocks
(conv3x3-BN-ReLU-conv3x3-BN, merged with the shortcut, then ReLU), global
average pooling, and a head emitting one pre-sigmoid logit per attribute.
The first block of every stage after the first halves the resolution and
uses a 1x1 stride-2 conv + BN projection shortcut. Convolutions feeding a
batch norm carry no bias (the norm's shift subsumes it).

Checkpoints are little-endian binary::

    b"ATRK" | u32 version | u32 len | config text (utf-8)
    | u32 tensor count | per tensor: u32 name len, name, u32 rank,
      rank x u64 dims, raw float32 data
"""

from __future__ import annotations

import io
import struct
from collections import OrderedDict
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from attrikit import ops
from attrikit.errors import CheckpointFormatError, ConfigError, ShapeError
from attrikit.tensor import DTYPE, Tensor

MAGIC = b"ATRK"
FORMAT_VERSION = 1

HEAD_KINDS = ("logistic", "dense")


@dataclass
class NetworkConfig:
    stem_channels: int = 16
    stage_blocks: list[int] = field(default_factory=lambda: [1, 1, 1, 1])
    stage_channels: list[int] = field(default_factory=lambda: [16, 32, 64, 128])
    num_attributes: int = 8
    head_kind: str = "logistic"
    dense_hidden: int = 128
    dropout_rate: float = 0.5
    in_channels: int = 3

    def validate(self) -> "NetworkConfig":
        if self.stem_channels < 1 or self.in_channels < 1:
            raise ConfigError("stem_channels and in_channels must be positive")
        if not self.stage_blocks or len(self.stage_blocks) != len(self.stage_channels):
            raise ConfigError("stage_blocks and stage_channels need equal, nonzero length")
        if any(b < 1 for b in self.stage_blocks) or any(c < 1 for c in self.stage_channels):
            raise ConfigError("stage block and channel counts must be positive")
        if self.num_attributes < 1:
            raise ConfigError("num_attributes must be >= 1")
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"head_kind must be one of {HEAD_KINDS}, got {self.head_kind!r}")
        if self.dense_hidden < 1:
            raise ConfigError("dense_hidden must be positive")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        return self

    @property
    def min_input_size(self) -> int:
        return 2 ** (len(self.stage_blocks) - 1)

    def weighted_layers(self) -> int:
        """Conv/affine layers on the main path (stem, block convs, head).

        Projection shortcuts are not counted, following the usual ResNet
        naming, so ``[2, 2, 2, 2]`` gives 18 and ``[3, 4, 6, 3]`` gives 34.
        """
        head = 1 if self.head_kind == "logistic" else 2
        return 1 + 2 * sum(self.stage_blocks) + head

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, list):
                v = ",".join(str(i) for i in v)
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NetworkConfig":
        kw = {}
        types = {f.name: f for f in fields(cls)}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep or key not in types:
                raise ConfigError(f"bad network config line: {line!r}")
            value = value.strip()
            default = getattr(cls(), key)
            if isinstance(default, list):
                kw[key] = [int(v) for v in value.split(",") if v.strip()]
            elif isinstance(default, bool):
                kw[key] = value.lower() in ("1", "true", "yes")
            else:
                kw[key] = type(default)(value)
        return cls(**kw).validate()


def preset(name: str, num_attributes: int, width: int = 16) -> NetworkConfig:
    """Named depth presets; ``width`` is the first stage's channel count."""
    blocks = {
        "resnet10": [1, 1, 1, 1],
        "resnet18": [2, 2, 2, 2],
        "resnet34": [3, 4, 6, 3],
    }
    if name not in blocks:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(blocks)}")
    return NetworkConfig(
        stem_channels=width,
        stage_blocks=blocks[name],
        stage_channels=[width * 2**i for i in range(4)],
        num_attributes=num_attributes,
    ).validate()


class Conv2d:
    def __init__(self, cin, cout, k, stride, padding, rng, name, bias=False):
        fan_in = cin * k * k
        self.weight = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), (cout, cin, k, k)), True, f"{name}.weight")
        self.bias = Tensor(np.zeros(cout), True, f"{name}.bias") if bias else None
        self.stride = stride
        self.padding = padding

    def params(self):
        return [self.weight] if self.bias is None else [self.weight, self.bias]

    def __call__(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d:
    def __init__(self, c, name, momentum=0.9, eps=1e-5):
        self.scale = Tensor(np.ones(c), True, f"{name}.scale")
        self.shift = Tensor(np.zeros(c), True, f"{name}.shift")
        self.running_mean = np.zeros(c, dtype=DTYPE)
        self.running_var = np.ones(c, dtype=DTYPE)
        self.momentum = momentum
        self.eps = eps
        self.name = name

    def params(self):
        return [self.scale, self.shift]

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean, f"{self.name}.running_var": self.running_var}

    def __call__(self, x, training):
        return ops.batch_norm2d(
            x, self.scale, self.shift, training, self.running_mean, self.running_var, self.momentum, self.eps
        )


class Linear:
    def __init__(self, fin, fout, rng, name, gain=1.0):
        self.weight = Tensor(rng.normal(0.0, np.sqrt(gain / fin), (fin, fout)), True, f"{name}.weight")
        self.bias = Tensor(np.zeros(fout), True, f"{name}.bias")

    def params(self):
        return [self.weight, self.bias]

    def __call__(self, x):
        return ops.affine(x, self.weight, self.bias)


class BasicBlock:
    def __init__(self, cin, cout, stride, rng, name):
        self.conv1 = Conv2d(cin, cout, 3, stride, 1, rng, f"{name}.conv1")
        self.bn1 = BatchNorm2d(cout, f"{name}.bn1")
        self.conv2 = Conv2d(cout, cout, 3, 1, 1, rng, f"{name}.conv2")
        self.bn2 = BatchNorm2d(cout, f"{name}.bn2")
        self.proj: Optional[Conv2d] = None
        self.proj_bn: Optional[BatchNorm2d] = None
        if stride != 1 or cin != cout:
            self.proj = Conv2d(cin, cout, 1, stride, 0, rng, f"{name}.proj")
            self.proj_bn = BatchNorm2d(cout, f"{name}.proj_bn")

    def layers(self):
        return [l for l in (self.conv1, self.bn1, self.conv2, self.bn2, self.proj, self.proj_bn) if l is not None]

    def __call__(self, x, training):
        out = ops.relu(self.bn1(self.conv1(x), training))
        out = self.bn2(self.conv2(out), training)
        shortcut = x if self.proj is None else self.proj_bn(self.proj(x), training)
        return ops.relu(ops.residual_add(out, shortcut))


class Network:
    """A built residual network. Construct through :func:`build`."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config.validate()
        rng = np.random.default_rng(seed)
        self.dropout_rng = np.random.default_rng([seed, 1])
        self.stem = Conv2d(config.in_channels, config.stem_channels, 3, 1, 1, rng, "stem.conv")
        self.stem_bn = BatchNorm2d(config.stem_channels, "stem.bn")
        self.blocks: list[BasicBlock] = []
        cin = config.stem_channels
        for s, (nblocks, cout) in enumerate(zip(config.stage_blocks, config.stage_channels)):
            for b in range(nblocks):
                stride = 2 if (b == 0 and s > 0) else 1
                self.blocks.append(BasicBlock(cin, cout, stride, rng, f"stage{s}.block{b}"))
                cin = cout
        self.feature_dim = cin
        if config.head_kind == "logistic":
            self.head = [Linear(cin, config.num_attributes, rng, "head.fc")]
        else:
            self.head = [
                Linear(cin, config.dense_hidden, rng, "head.fc1", gain=2.0),
                Linear(config.dense_hidden, config.num_attributes, rng, "head.fc2"),
            ]
        self.features: Optional[Tensor] = None

    def _layers(self):
        out = [self.stem, self.stem_bn]
        for blk in self.blocks:
            out.extend(blk.layers())
        out.extend(self.head)
        return out

    def parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((p.name, p) for layer in self._layers() for p in layer.params())

    def buffers(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for layer in self._layers():
            if isinstance(layer, BatchNorm2d):
                out.update(layer.buffers())
        return out

    def state(self) -> "OrderedDict[str, np.ndarray]":
        """All persistent arrays (parameters then running statistics)."""
        st = OrderedDict((k, p.data) for k, p in self.parameters().items())
        st.update(self.buffers())
        return st

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters().values()))

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def forward(self, batch, training: bool = False, retain_features: bool = False) -> Tensor:
        """Logits (N x M) for an NCHW batch; keeps final-stage maps in ``self.features``."""
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        if x.data.ndim != 4 or x.dims[1] != self.config.in_channels:
            raise ShapeError(f"expected N x {self.config.in_channels} x H x W input, got {x.dims}")
        m = self.config.min_input_size
        if x.dims[2] < m or x.dims[3] < m:
            raise ShapeError(f"input {x.dims[2]}x{x.dims[3]} is smaller than the network minimum {m}x{m}")
        h = ops.relu(self.stem_bn(self.stem(x), training))
        for blk in self.blocks:
            h = blk(h, training)
        if retain_features:
            h.retain_grad = True
        self.features = h
        z = ops.global_average_pool(h)
        if self.config.head_kind == "logistic":
            return self.head[0](z)
        z = ops.relu(self.head[0](z))
        z = ops.dropout(z, self.config.dropout_rate, training, self.dropout_rng)
        return self.head[1](z)

    __call__ = forward


def build(config: NetworkConfig, seed: int = 0) -> Network:
    return Network(config, seed)


def forward_logits(net: Network, batch, training: bool = False, retain_features: bool = False):
    """Return ``(logits, final_feature_maps)``."""
    logits = net.forward(batch, training=training, retain_features=retain_features)
    return logits, net.features


def save_checkpoint(net: Network, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    cfg = net.config.to_text().encode("utf-8")
    buf.write(struct.pack("<I", len(cfg)))
    buf.write(cfg)
    state = net.state()
    buf.write(struct.pack("<I", len(state)))
    for name, arr in state.items():
        nb = name.encode("utf-8")
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise CheckpointFormatError(f"checkpoint truncated at byte {self.pos} (wanted {n} more)")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> Network:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: not an attrikit checkpoint (bad magic)")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported format version {version}")
    try:
        config = NetworkConfig.from_text(r.take(r.u32()).decode("utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise CheckpointFormatError(f"{path}: unreadable config record: {exc}") from exc
    net = Network(config)
    params = net.parameters()
    buffers = net.buffers()
    count = r.u32()
    if count != len(params) + len(buffers):
        raise CheckpointFormatError(f"{path}: {count} tensors, config implies {len(params) + len(buffers)}")
    for _ in range(count):
        name = r.take(r.u32()).decode("utf-8", errors="replace")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}Q", r.take(8 * rank))
        data = np.frombuffer(r.take(4 * int(np.prod(dims, dtype=np.int64))), dtype="<f4").astype(DTYPE).reshape(dims)
        if name in params:
            target = params[name].data
        elif name in buffers:
            target = buffers[name]
        else:
            raise CheckpointFormatError(f"{path}: unexpected tensor {name!r}")
        if target.shape != data.shape:
            raise CheckpointFormatError(f"{path}: tensor {name!r} has dims {data.shape}, config implies {target.shape}")
        target[...] = data
    if r.pos != len(r.raw):
        raise CheckpointFormatError(f"{path}: {len(r.raw) - r.pos} trailing bytes")
    return net
