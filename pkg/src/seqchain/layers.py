"""Parameterized layers on top of the autodiff core.

Everything is channels-last: waveforms are (T,), feature maps are
(frames, channels).  Parameters are plain dataclasses of Tensors so the
trainer can walk them generically; initialization is uniform in
+-1/sqrt(fan-in), with the LSTM forget-gate bias lifted to +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, is_dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


# ---------------------------------------------------------------------------
# parameter containers


@dataclass
class Linear:
    W: Tensor  # (din, dout)
    b: Optional[Tensor] = None


@dataclass
class Conv1dParams:
    kernels: Tensor  # (L, cin, cout) or the squeezed variants conv1d accepts
    stride: int = 1
    dilation: int = 1
    b: Optional[Tensor] = None


@dataclass
class ConvTranspose1dParams:
    kernels: Tensor
    stride: int = 1
    b: Optional[Tensor] = None


@dataclass
class LSTMParams:
    Wx: Tensor  # (din, 4H), gate order i, f, g, o
    Wh: Tensor  # (H, 4H)
    b: Tensor  # (4H,)

    @property
    def hidden(self) -> int:
        return self.Wh.shape[0]


@dataclass
class Embedding:
    table: Tensor  # (vocab, dim)


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(max(1, fan_in))
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def init_linear(rng, din, dout, bias=True, dtype=np.float64) -> Linear:
    W = _uniform(rng, (din, dout), din, dtype)
    b = _uniform(rng, (dout,), din, dtype) if bias else None
    return Linear(W=W, b=b)


def init_conv1d(rng, length, cin, cout, stride=1, dilation=1, bias=True, dtype=np.float64) -> Conv1dParams:
    fan_in = length * cin
    shape = (length, cin, cout)
    k = _uniform(rng, shape, fan_in, dtype)
    b = _uniform(rng, (cout,), fan_in, dtype) if bias else None
    return Conv1dParams(kernels=k, stride=stride, dilation=dilation, b=b)


def init_wave_encoder(rng, length, basis, stride, dtype=np.float64) -> Conv1dParams:
    # rank-2 kernels (L, basis): one analysis filter bank over a rank-1 wave
    k = _uniform(rng, (length, basis), length, dtype)
    return Conv1dParams(kernels=k, stride=stride)


def init_conv_transpose1d(rng, length, cin, stride=1, bias=False, dtype=np.float64) -> ConvTranspose1dParams:
    # single output channel: kernels (L, cin) decode features back to a wave
    fan_in = length * cin
    k = _uniform(rng, (length, cin), fan_in, dtype)
    b = _uniform(rng, (1,), fan_in, dtype) if bias else None
    return ConvTranspose1dParams(kernels=k, stride=stride, b=b)


def init_lstm(rng, din, hidden, dtype=np.float64) -> LSTMParams:
    Wx = _uniform(rng, (din, 4 * hidden), din, dtype)
    Wh = _uniform(rng, (hidden, 4 * hidden), hidden, dtype)
    bias = np.zeros(4 * hidden, dtype=dtype)
    bias[hidden : 2 * hidden] = 1.0  # open the forget gate at the start
    return LSTMParams(Wx=Wx, Wh=Wh, b=Tensor(bias, requires_grad=True))


def init_embedding(rng, vocab, dim, dtype=np.float64) -> Embedding:
    return Embedding(table=_uniform(rng, (vocab, dim), dim, dtype))


def named_parameters(obj, prefix: str = "") -> dict:
    """Walk dataclasses/lists/dicts and collect every Tensor by dotted path."""
    out: dict[str, Tensor] = {}
    if isinstance(obj, Tensor):
        out[prefix or "param"] = obj
    elif is_dataclass(obj):
        for f in fields(obj):
            val = getattr(obj, f.name)
            key = f"{prefix}.{f.name}" if prefix else f.name
            out.update(named_parameters(val, key))
    elif isinstance(obj, (list, tuple)):
        for i, val in enumerate(obj):
            out.update(named_parameters(val, f"{prefix}.{i}" if prefix else str(i)))
    elif isinstance(obj, dict):
        for k, val in obj.items():
            out.update(named_parameters(val, f"{prefix}.{k}" if prefix else str(k)))
    return out


def parameters(obj) -> list:
    return list(named_parameters(obj).values())


# ---------------------------------------------------------------------------
# forward functions


def linear(x: Tensor, p: Linear) -> Tensor:
    out = ad.matmul(x, p.W)
    if p.b is not None:
        out = ad.add(out, p.b)
    return out


def conv_layer(x: Tensor, p: Conv1dParams) -> Tensor:
    out = ad.conv1d(x, p.kernels, stride=p.stride, dilation=p.dilation)
    if p.b is not None:
        out = ad.add(out, p.b)
    return out


def conv_transpose_layer(x: Tensor, p: ConvTranspose1dParams) -> Tensor:
    out = ad.conv_transpose1d(x, p.kernels, stride=p.stride)
    if p.b is not None:
        out = ad.add(out, p.b)
    return out


def lstm_step(x: Tensor, h: Tensor, c: Tensor, p: LSTMParams):
    """One LSTM update. Rows of ``x``/``h``/``c`` are independent lanes
    sharing parameters; rank-1 inputs work too."""
    if x.shape[-1] != p.Wx.shape[0] or h.shape[-1] != p.hidden or c.shape[-1] != p.hidden:
        raise ShapeError(
            f"lstm_step dims: x{x.shape} h{h.shape} c{c.shape} vs "
            f"Wx{p.Wx.shape} Wh{p.Wh.shape}"
        )
    H = p.hidden
    gates = ad.add(ad.add(ad.matmul(x, p.Wx), ad.matmul(h, p.Wh)), p.b)
    i = ad.sigmoid(ad.slice_axis(gates, axis=-1, start=0, stop=H))
    f = ad.sigmoid(ad.slice_axis(gates, axis=-1, start=H, stop=2 * H))
    g = ad.tanh(ad.slice_axis(gates, axis=-1, start=2 * H, stop=3 * H))
    o = ad.sigmoid(ad.slice_axis(gates, axis=-1, start=3 * H, stop=4 * H))
    c_new = ad.add(ad.mul(f, c), ad.mul(i, g))
    h_new = ad.mul(o, ad.tanh(c_new))
    return h_new, c_new


def waveform_encoder(wave: Tensor, p: Conv1dParams) -> Tensor:
    """Strided linear convolution from a wave (T,) to features (frames, basis).

    Purely linear (no bias, no nonlinearity), so a zero wave encodes to zero
    features and superposition holds exactly.
    """
    if wave.ndim != 1:
        raise ShapeError("waveform_encoder expects a rank-1 wave")
    if wave.shape[0] < p.kernels.shape[0]:
        raise ShapeError("wave shorter than one encoder kernel")
    return ad.conv1d(wave, p.kernels, stride=p.stride)


def waveform_decoder(hidden: Tensor, p: ConvTranspose1dParams) -> Tensor:
    """Linear overlap-add transposed convolution back to a wave."""
    return ad.conv_transpose1d(hidden, p.kernels, stride=p.stride)


def embed_tokens(token_ids, emb: Embedding) -> Tensor:
    """Rows of the table, one per id, realized as a one-hot matmul so the
    table gradient flows through the standard primitives."""
    ids = np.asarray(token_ids, dtype=np.int64)
    vocab, _ = emb.table.shape
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise ShapeError(f"token id outside [0, {vocab})")
    onehot = np.zeros((ids.size, vocab), dtype=emb.table.dtype)
    onehot[np.arange(ids.size), ids] = 1.0
    return ad.matmul(Tensor(onehot), emb.table)


# ---------------------------------------------------------------------------
# separator stack


@dataclass
class SeparatorParams:
    in_proj: Conv1dParams  # 1x1, encoder basis -> channel width
    convs: list = field(default_factory=list)  # dilated conv per layer
    alphas: list = field(default_factory=list)  # parametric-relu slopes


def init_separator(rng, basis, channels, blocks, layers, kernel, dtype=np.float64) -> SeparatorParams:
    if kernel % 2 != 1:
        raise ConfigError("separator kernel must be odd for symmetric padding")
    in_proj = init_conv1d(rng, 1, basis, channels, dtype=dtype)
    convs, alphas = [], []
    for _ in range(blocks):
        for d in (2**j for j in range(layers)):
            convs.append(init_conv1d(rng, kernel, channels, channels, dilation=d, dtype=dtype))
            alphas.append(Tensor(np.full(channels, 0.25, dtype=dtype), requires_grad=True))
    return SeparatorParams(in_proj=in_proj, convs=convs, alphas=alphas)


def separator(features: Tensor, p: SeparatorParams) -> Tensor:
    """Dilated temporal-conv stack with residual connections.

    Frame count is preserved by symmetric zero padding, so the output can be
    fused frame-by-frame with per-step condition features.
    """
    x = conv_layer(features, p.in_proj)
    for conv, alpha in zip(p.convs, p.alphas):
        half = (conv.kernels.shape[0] - 1) * conv.dilation // 2
        y = ad.pad(x, axis=0, before=half, after=half)
        y = conv_layer(y, conv)
        y = ad.parametric_relu(y, alpha)
        x = ad.add(x, y)
    return x


# ---------------------------------------------------------------------------
# model configuration


@dataclass(frozen=True)
class ModelConfig:
    """Sizes for the encoder/separator/chain stack.

    ``desk`` is the CPU-trainable default; ``paper-tasnet`` records the
    full-size configuration for documentation and is not meant for the test
    machines.
    """

    basis: int = 64  # encoder basis filters
    kernel: int = 16  # encoder kernel length (samples)
    stride: int = 8
    sep_channels: int = 64
    sep_blocks: int = 2
    sep_layers: int = 4
    sep_kernel: int = 3
    chain_hidden: int = 64
    vocab: int = 9  # 8 tokens + blank
    sample_rate: int = 8000
    preset: str = "desk"

    def __post_init__(self):
        for name in (
            "basis",
            "kernel",
            "stride",
            "sep_channels",
            "sep_blocks",
            "sep_layers",
            "sep_kernel",
            "chain_hidden",
            "vocab",
            "sample_rate",
        ):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"model config {name} must be >= 1")
        if self.stride > self.kernel:
            raise ConfigError("stride must not exceed the encoder kernel length")

    def frames_for(self, num_samples: int) -> int:
        if num_samples < self.kernel:
            raise ShapeError("wave shorter than one encoder kernel")
        return (num_samples - self.kernel) // self.stride + 1


_PRESETS = {
    "desk": dict(
        basis=64,
        kernel=16,
        stride=8,
        sep_channels=64,
        sep_blocks=2,
        sep_layers=4,
        sep_kernel=3,
        chain_hidden=64,
    ),
    "paper-tasnet": dict(
        basis=256,
        kernel=20,
        stride=10,
        sep_channels=256,
        sep_blocks=4,
        sep_layers=8,
        sep_kernel=3,
        chain_hidden=512,
    ),
}


def preset_config(name: str = "desk", **overrides) -> ModelConfig:
    if name not in _PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choices: {sorted(_PRESETS)}")
    kw = dict(_PRESETS[name])
    kw.update(overrides)
    kw.setdefault("preset", name)
    return ModelConfig(**kw)
