"""The two encoder-decoder networks and their serialization.

Both flavors share one topology: a pseudo-1D stem (1x1 spatial kernel
mixing the stacked time channels), encoder blocks of two 3x3 convs with
batchnorm and leaky ReLU followed by 2x2 max-pool, and decoder blocks of
a stride-2 transposed conv plus two 3x3 convs.  The segmentation flavor
concatenates each decoder level with the matching encoder pre-pool
activation; the reconstruction flavor omits the skips.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .bev import BevSequence, sequence_to_array
from .errors import ConfigError, FormatError, ShapeError
from .tensor import (
    BatchNormState,
    _node,
    ConvSpec,
    Tensor,
    activation_map,
    batchnorm2d,
    concat_channels,
    conv2d,
    conv_transpose2d,
    leaky_relu,
    maxpool2d,
)

LEAKY_SLOPE = 0.1
ACTIVATION_CODES = {"sigmoid": 0, "tanh": 1}


@dataclass(frozen=True)
class NetworkConfig:
    t_in: int = 16
    base_channels: int = 16
    depth: int = 3
    out_channels: int = 1
    output_activation: str = "sigmoid"
    skips: bool = True

    def __post_init__(self):
        if self.t_in < 1 or self.depth < 1 or self.out_channels < 1 or self.base_channels < 1:
            raise ConfigError(f"invalid network config {self}")
        if self.output_activation not in ACTIVATION_CODES:
            raise ConfigError(f"unknown output activation {self.output_activation!r}")

    def check_spatial(self, h, w):
        d = 2 ** self.depth
        if h % d or w % d:
            raise ConfigError(f"spatial dims {h}x{w} not divisible by {d}")


class ConvLayer:
    """One parameterized conv or transposed conv."""

    def __init__(self, spec: ConvSpec, rng, dtype, transpose=False):
        self.spec = spec
        self.transpose = transpose
        if transpose:
            wshape = (spec.in_channels, spec.out_channels, spec.kernel_h, spec.kernel_w)
        else:
            wshape = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        limit = 1.0 / np.sqrt(fan_in)
        self.weights = Tensor(rng.uniform(-limit, limit, wshape).astype(dtype),
                              requires_grad=True)
        self.bias = Tensor(rng.uniform(-limit, limit, spec.out_channels).astype(dtype),
                           requires_grad=True)

    def __call__(self, x):
        if self.transpose:
            return conv_transpose2d(x, self.spec, self.weights, self.bias)
        return conv2d(x, self.spec, self.weights, self.bias)

    @property
    def params(self):
        return [self.weights, self.bias]


class BNLayer:
    def __init__(self, channels, dtype):
        self.state = BatchNormState.create(channels, dtype=dtype)

    def __call__(self, x):
        return batchnorm2d(x, self.state)

    @property
    def params(self):
        return [self.state.gamma, self.state.beta_shift]


class Network:
    """Realized forward graph; exclusively owned by one worker at a time."""

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c = config.base_channels
        self.stem = ConvLayer(ConvSpec(config.t_in, c, 1, 1), rng, self.dtype)
        self.encoder = []  # per block: (conv1, bn1, conv2, bn2)
        ch = c
        for _ in range(config.depth):
            nxt = ch * 2
            self.encoder.append((
                ConvLayer(ConvSpec(ch, nxt, 3, 3, padding=1), rng, self.dtype),
                BNLayer(nxt, self.dtype),
                ConvLayer(ConvSpec(nxt, nxt, 3, 3, padding=1), rng, self.dtype),
                BNLayer(nxt, self.dtype),
            ))
            ch = nxt
        self.decoder = []  # per block: (up, conv1, bn1, conv2, bn2)
        for i in range(config.depth):
            half = ch // 2
            tap_ch = ch if config.skips else 0  # matching encoder pre-pool channels
            conv_in = half + tap_ch
            self.decoder.append((
                ConvLayer(ConvSpec(ch, half, 2, 2, stride=2), rng, self.dtype,
                          transpose=True),
                ConvLayer(ConvSpec(conv_in, half, 3, 3, padding=1), rng, self.dtype),
                BNLayer(half, self.dtype),
                ConvLayer(ConvSpec(half, half, 3, 3, padding=1), rng, self.dtype),
                BNLayer(half, self.dtype),
            ))
            ch = half
        self.head = ConvLayer(ConvSpec(ch, config.out_channels, 1, 1), rng, self.dtype)

    def layers(self):
        yield self.stem
        for block in self.encoder:
            yield from block
        for block in self.decoder:
            yield from block
        yield self.head

    def parameters(self):
        out = []
        for layer in self.layers():
            out.extend(layer.params)
        return out

    @property
    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def set_mode(self, mode: str):
        if mode not in ("training", "inference"):
            raise ConfigError(f"unknown mode {mode!r}")
        for layer in self.layers():
            if isinstance(layer, BNLayer):
                layer.state.mode = mode

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


def build_network(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> Network:
    return Network(config, seed=seed, dtype=dtype)


def forward(net: Network, x: Tensor) -> Tensor:
    """Run the full graph; output spatial dims equal input dims."""
    if x.data.ndim != 3 or x.shape[0] != net.config.t_in:
        raise ShapeError(
            f"input must be ({net.config.t_in}, H, W), got {x.shape}"
        )
    net.config.check_spatial(x.shape[1], x.shape[2])
    if x.data.dtype != net.dtype:
        src_dtype = x.data.dtype
        x = _node(x.data.astype(net.dtype), (x,),
                  lambda g: (g.astype(src_dtype),))
    h = net.stem(x)
    taps = []
    for conv1, bn1, conv2, bn2 in net.encoder:
        h = leaky_relu(bn1(conv1(h)), LEAKY_SLOPE)
        h = leaky_relu(bn2(conv2(h)), LEAKY_SLOPE)
        taps.append(h)  # pre-pool skip tap
        h, _ = maxpool2d(h)
    for i, (up, conv1, bn1, conv2, bn2) in enumerate(net.decoder):
        h = up(h)
        if net.config.skips:
            h = concat_channels(h, taps[len(taps) - 1 - i])
        h = leaky_relu(bn1(conv1(h)), LEAKY_SLOPE)
        h = leaky_relu(bn2(conv2(h)), LEAKY_SLOPE)
    return activation_map(net.head(h), net.config.output_activation)


def segment_sequence(net: Network, seq: BevSequence) -> Tensor:
    """Stack the sequence into time channels (oldest first) and run forward."""
    if seq.t_len != net.config.t_in:
        raise ShapeError(f"sequence length {seq.t_len} != network t_in {net.config.t_in}")
    return forward(net, Tensor(sequence_to_array(seq, dtype=net.dtype)))


def render_rgb(net3: Network, pair: BevSequence) -> np.ndarray:
    """Run the 2-frame tanh variant and rescale (-1, 1) to bytes, (H, W, 3)."""
    if net3.config.out_channels != 3 or net3.config.output_activation != "tanh":
        raise ShapeError("render_rgb needs a 3-channel tanh network")
    if net3.config.t_in != 2 or pair.t_len != 2:
        raise ShapeError(f"expected a 2-frame pair, got t_in={net3.config.t_in}, "
                         f"t_len={pair.t_len}")
    out = segment_sequence(net3, pair).data
    bytes_ = np.floor((out + 1.0) / 2.0 * 255.0 + 0.5)  # round half up
    return np.clip(bytes_, 0, 255).astype(np.uint8).transpose(1, 2, 0)


MAGIC = b"PPN1"


def _net_arrays(net: Network):
    """All persistent arrays in construction order: parameters plus batchnorm
    running statistics (needed to reproduce inference-mode forwards)."""
    for layer in net.layers():
        if isinstance(layer, ConvLayer):
            yield layer.weights.data
            yield layer.bias.data
        else:
            st = layer.state
            yield st.gamma.data
            yield st.beta_shift.data
            yield st.running_mean
            yield st.running_var


def save_model(net: Network, path):
    """Magic, 7 u32 config ints, then per-array shape headers + f32 payloads."""
    cfg = net.config
    header = struct.pack(
        "<7I", cfg.t_in, cfg.base_channels, cfg.depth, cfg.out_channels,
        ACTIVATION_CODES[cfg.output_activation], int(cfg.skips), 0,
    )
    chunks = [MAGIC, header]
    for arr in _net_arrays(net):
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.astype("<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_model(path) -> Network:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 4 + 28:
        raise FormatError("truncated header")
    t_in, base, depth, out_ch, act, skips, _ = struct.unpack_from("<7I", blob, 4)
    codes = {v: k for k, v in ACTIVATION_CODES.items()}
    if act not in codes:
        raise FormatError(f"unknown activation code {act}")
    config = NetworkConfig(t_in=t_in, base_channels=base, depth=depth,
                           out_channels=out_ch, output_activation=codes[act],
                           skips=bool(skips))
    net = Network(config, seed=0, dtype=np.float32)
    off = 32
    for arr in _net_arrays(net):
        if off + 4 > len(blob):
            raise FormatError("truncated shape header")
        (ndim,) = struct.unpack_from("<I", blob, off)
        off += 4
        if off + 4 * ndim > len(blob):
            raise FormatError("truncated shape header")
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        if shape != arr.shape:
            raise FormatError(f"stored shape {shape} != expected {arr.shape}")
        nbytes = 4 * int(np.prod(shape))
        if off + nbytes > len(blob):
            raise FormatError("truncated parameter payload")
        arr[...] = np.frombuffer(blob, dtype="<f4", count=int(np.prod(shape)),
                                 offset=off).reshape(shape)
        off += nbytes
    if off != len(blob):
        raise FormatError(f"trailing bytes: file length {len(blob)}, expected {off}")
    return net
