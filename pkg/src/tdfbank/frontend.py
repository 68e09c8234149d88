"""Differentiable time-domain filterbank front-ends.

Two pipelines share the same skeleton::

    waveform -> sequence norm -> [pre-emphasis] -> conv (stride 1)
             -> nonlinearity -> low-pass + decimation -> log -> [instance norm]

*scattering*: 80 real filters (40 complex pairs), squared L2 pooling over each
pair, squared-Hanning low-pass (fixed or learnt), ``log(1 + |x|)``.

*gammatone*: 40 real filters, ReLU, max-pooling or squared-Hanning low-pass,
``log(0.01 + |x|)``.

Every layer comes as a forward function and a backward function; backward
functions return the gradient w.r.t. their input and add parameter gradients
into the :class:`~tdfbank.tensor_core.Param` buffers they were given.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
from numpy.lib.stride_tricks import sliding_window_view

from . import filter_init
from .filter_init import _read_container, _write_container
from .signal_io import NORM_EPS, Waveform
from .tensor_core import ContractError, InputTooShortError, Param, as_matrix

FEATURE_DUMP_MAGIC = b"TDFT"

VARIANTS = ("scattering", "gammatone")
INITS = ("gamm", "scatt", "rand")
LOWPASS_MODES = ("han_fixed", "han_learnt", "max_pool")
DEFAULT_LOG_OFFSET = {"scattering": 1.0, "gammatone": 0.01}


# --------------------------------------------------------------------------
# layers

def preemphasis_forward(x, kernel) -> np.ndarray:
    """Valid 2-tap convolution, ``y[n] = k[1] x[n+1] + k[0] x[n]``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ContractError(f"pre-emphasis needs at least 2 samples, got {x.size}")
    k = _value(kernel).reshape(-1)
    return k[1] * x[1:] + k[0] * x[:-1]


def preemphasis_backward(grad, x, kernel: Param) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    k = kernel.value.reshape(-1)
    kernel.accumulate([grad @ x[:-1], grad @ x[1:]])
    gx = np.zeros_like(x)
    gx[:-1] += k[0] * grad
    gx[1:] += k[1] * grad
    return gx


def _fft_len(n):
    return sfft.next_fast_len(n, real=True)


def conv1d_forward(x, filters) -> np.ndarray:
    """Valid stride-1 cross-correlation of `x` with every filter row.

    ``out[c, n] = sum_w filters[c, w] * x[n + w]``; no padding, no bias.
    """
    x = np.asarray(x, dtype=np.float64)
    f = _value(filters)
    width = f.shape[1]
    if x.size < width:
        raise InputTooShortError(x.size, width, "conv input")
    n = _fft_len(x.size)
    spec = sfft.rfft(x, n) * sfft.rfft(f[:, ::-1], n, axis=1)
    return sfft.irfft(spec, n, axis=1)[:, width - 1:x.size]


def conv1d_backward(grad, x, filters: Param, need_input_grad: bool = True):
    """Accumulate the filter gradient; return the input gradient (or None)."""
    x = np.asarray(x, dtype=np.float64)
    f = filters.value
    width = f.shape[1]
    n = _fft_len(x.size)
    g_spec = sfft.rfft(grad, n, axis=1)
    if filters.trainable:
        corr = sfft.irfft(np.conj(g_spec) * sfft.rfft(x, n), n, axis=1)
        filters.accumulate(corr[:, :width])
    if not need_input_grad:
        return None
    full = sfft.irfft((g_spec * sfft.rfft(f, n, axis=1)).sum(0), n)
    return full[:x.size]


def squared_l2_pool(features) -> np.ndarray:
    """``out[k] = features[2k]^2 + features[2k+1]^2``."""
    a = as_matrix(features, "features")
    if a.shape[0] % 2:
        raise ContractError(f"squared L2 pooling needs an even row count, got {a.shape[0]}")
    return a[0::2] ** 2 + a[1::2] ** 2


def squared_l2_pool_backward(grad, features) -> np.ndarray:
    a = as_matrix(features, "features")
    g = np.empty_like(a)
    g[0::2] = 2 * a[0::2] * grad
    g[1::2] = 2 * a[1::2] * grad
    return g


def relu(features) -> np.ndarray:
    return np.maximum(np.asarray(features, dtype=np.float64), 0.0)


def relu_backward(grad, features) -> np.ndarray:
    return np.where(np.asarray(features) > 0, grad, 0.0)


def n_frames(length: int, width: int = 400, stride: int = 160) -> int:
    """Number of complete windows of `width` at multiples of `stride`."""
    if length < width:
        return 0
    return (length - width) // stride + 1


def _windows(a, width, stride):
    if a.shape[1] < width:
        raise InputTooShortError(a.shape[1], width, "low-pass input")
    return sliding_window_view(a, width, axis=1)[:, ::stride, :]


def lowpass_window(features, weights, stride: int = 160) -> np.ndarray:
    """Depthwise decimating filter; one weight vector shared by all channels.

    ``out[c, m] = sum_w weights[w] * features[c, stride*m + w]``.
    """
    a = as_matrix(features, "features")
    w = _value(weights).reshape(-1)
    return _windows(a, w.size, stride) @ w


def lowpass_window_backward(grad, features, weights: Param, stride: int = 160) -> np.ndarray:
    a = as_matrix(features, "features")
    w = weights.value.reshape(-1)
    width = w.size
    if weights.trainable:
        weights.accumulate(np.einsum("cm,cmw->w", grad, _windows(a, width, stride)))
    g = np.zeros_like(a)
    for m in range(grad.shape[1]):
        g[:, stride * m:stride * m + width] += grad[:, m:m + 1] * w
    return g


def lowpass_maxpool(features, width: int = 400, stride: int = 160) -> np.ndarray:
    """Windowed max; ties resolve to the lowest index (see backward)."""
    a = as_matrix(features, "features")
    return _windows(a, width, stride).max(axis=2)


def lowpass_maxpool_backward(grad, features, width: int = 400, stride: int = 160) -> np.ndarray:
    a = as_matrix(features, "features")
    arg = _windows(a, width, stride).argmax(axis=2)  # first maximum
    pos = arg + stride * np.arange(arg.shape[1])
    g = np.zeros_like(a)
    rows = np.broadcast_to(np.arange(a.shape[0])[:, None], pos.shape)
    np.add.at(g, (rows, pos), grad)
    return g


def log_compress(features, offset: float) -> np.ndarray:
    if not offset > 0:
        raise ContractError(f"log offset must be positive, got {offset}")
    return np.log(offset + np.abs(features))


def log_compress_backward(grad, features, offset: float) -> np.ndarray:
    a = np.asarray(features, dtype=np.float64)
    return grad * np.sign(a) / (offset + np.abs(a))


def instance_norm(features, eps: float = NORM_EPS) -> np.ndarray:
    """Per-row standardization with population variance, no affine terms."""
    a = as_matrix(features, "features")
    if a.shape[1] < 2:
        raise ContractError(f"instance norm needs at least 2 frames, got {a.shape[1]}")
    mu = a.mean(axis=1, keepdims=True)
    var = ((a - mu) ** 2).mean(axis=1, keepdims=True)
    return (a - mu) / np.sqrt(var + eps)


def instance_norm_backward(grad, features, eps: float = NORM_EPS) -> np.ndarray:
    a = as_matrix(features, "features")
    mu = a.mean(axis=1, keepdims=True)
    s = np.sqrt(((a - mu) ** 2).mean(axis=1, keepdims=True) + eps)
    y = (a - mu) / s
    g = as_matrix(grad, "grad")
    return (g - g.mean(axis=1, keepdims=True) - y * (g * y).mean(axis=1, keepdims=True)) / s


def _value(p):
    return p.value if isinstance(p, Param) else as_matrix(p)


# --------------------------------------------------------------------------
# pipeline

@dataclass(frozen=True)
class FrontendConfig:
    variant: str = "scattering"
    init: str = "scatt"
    lowpass: str = "han_fixed"
    log_offset: float | None = None
    use_pre_emphasis: bool = False
    use_instance_norm: bool = True
    conv_width: int = 400
    lowpass_width: int = 400
    hop: int = 160
    n_channels: int = 40
    sample_rate: int = 16000

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.init not in INITS:
            raise ContractError(f"init must be one of {INITS}, got {self.init!r}")
        if self.lowpass not in LOWPASS_MODES:
            raise ContractError(f"lowpass must be one of {LOWPASS_MODES}, got {self.lowpass!r}")
        if self.variant == "scattering" and self.lowpass == "max_pool":
            raise ContractError("scattering front-end uses a Hanning low-pass, not max_pool")
        if self.variant == "gammatone" and self.lowpass == "han_learnt":
            raise ContractError("gammatone front-end uses han_fixed or max_pool")
        if (self.variant, self.init) in {("scattering", "gamm"), ("gammatone", "scatt")}:
            raise ContractError(f"init {self.init!r} does not fit the {self.variant} variant")
        if self.log_offset is None:
            object.__setattr__(self, "log_offset", DEFAULT_LOG_OFFSET[self.variant])
        if not self.log_offset > 0:
            raise ContractError(f"log_offset must be positive, got {self.log_offset}")

    @property
    def conv_rows(self) -> int:
        return 2 * self.n_channels if self.variant == "scattering" else self.n_channels

    def min_length(self) -> int:
        """Shortest waveform that yields a valid feature map."""
        frames = 2 if self.use_instance_norm else 1
        need = self.lowpass_width + self.hop * (frames - 1) + self.conv_width - 1
        return need + (1 if self.use_pre_emphasis else 0)

    def frames_for(self, length: int) -> int:
        conv_out = length - int(self.use_pre_emphasis) - self.conv_width + 1
        return n_frames(conv_out, self.lowpass_width, self.hop)


@dataclass
class FilterParams:
    pre_emphasis: Param
    conv: Param
    lowpass_weights: Param | None = None

    def all(self) -> list[Param]:
        return [p for p in (self.pre_emphasis, self.conv, self.lowpass_weights) if p is not None]

    def trainable(self) -> list[Param]:
        return [p for p in self.all() if p.trainable]

    def zero_grad(self):
        for p in self.all():
            p.zero_grad()

    def copy(self) -> "FilterParams":
        lw = self.lowpass_weights.copy() if self.lowpass_weights is not None else None
        return FilterParams(self.pre_emphasis.copy(), self.conv.copy(), lw)


def init_params(config: FrontendConfig, seed: int = 0) -> FilterParams:
    """Build the initial parameters for `config` (random init uses `seed`)."""
    if config.init == "rand":
        conv = filter_init.init_random(config.conv_rows, config.conv_width, seed).filters
    else:
        grid = filter_init.mel_grid(config.n_channels, 0.0, config.sample_rate / 2,
                                    config.sample_rate)
        make = filter_init.init_gabor if config.init == "scatt" else filter_init.init_gammatone
        conv = make(grid, config.conv_width, config.sample_rate).filters
    lowpass = None
    if config.lowpass != "max_pool":
        lowpass = Param(filter_init.squared_hanning(config.lowpass_width)[None, :],
                        trainable=config.lowpass == "han_learnt", name="lowpass_weights")
    return FilterParams(
        pre_emphasis=Param(filter_init.pre_emphasis_init()[None, :],
                           trainable=config.use_pre_emphasis, name="pre_emphasis"),
        conv=Param(conv, name="conv"),
        lowpass_weights=lowpass,
    )


@dataclass
class FeatureMap:
    values: np.ndarray  # [channels, frames]

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def frames(self) -> int:
        return self.values.shape[1]


@dataclass
class FrontendCache:
    config: FrontendConfig
    params: FilterParams
    raw: np.ndarray
    stages: dict = field(default_factory=dict)
    out_shape: tuple = ()


def frontend_forward(wave: Waveform, params: FilterParams, config: FrontendConfig):
    """Run the front-end on one utterance.

    Returns
    -------
    FeatureMap, FrontendCache
        ``[n_channels, frames]`` features and the intermediates that
        :func:`frontend_backward` needs.
    """
    raw = np.asarray(wave.samples if isinstance(wave, Waveform) else wave, dtype=np.float64)
    need = config.min_length()
    if raw.size < need:
        raise InputTooShortError(raw.size, need, "waveform")
    if params.conv.shape[0] != config.conv_rows:
        raise ContractError(
            f"conv has {params.conv.shape[0]} rows, {config.variant} needs {config.conv_rows}")

    st = {}
    x = instance_norm(raw[None, :])[0]
    st["norm"] = x
    if config.use_pre_emphasis:
        x = preemphasis_forward(x, params.pre_emphasis)
    st["conv_in"] = x
    z = conv1d_forward(x, params.conv)
    st["conv_out"] = z
    a = squared_l2_pool(z) if config.variant == "scattering" else relu(z)
    st["nonlin"] = a
    if config.lowpass == "max_pool":
        p = lowpass_maxpool(a, config.lowpass_width, config.hop)
    else:
        p = lowpass_window(a, params.lowpass_weights, config.hop)
    st["lowpass"] = p
    out = log_compress(p, config.log_offset)
    if config.use_instance_norm:
        st["log"] = out
        out = instance_norm(out)
    cache = FrontendCache(config, params, raw, st, out.shape)
    return FeatureMap(out), cache


def frontend_backward(grad_out, cache: FrontendCache, input_grad: bool = True):
    """Backpropagate `grad_out` through the cached forward pass.

    Parameter gradients are added into the trainable params; the return
    value is the gradient w.r.t. the raw waveform samples, or None when
    `input_grad` is false (training has no use for it).
    """
    g = as_matrix(grad_out, "grad_out")
    if g.shape != cache.out_shape:
        raise ContractError(f"grad_out shape {g.shape} does not match output {cache.out_shape}")
    cfg, params, st = cache.config, cache.params, cache.stages

    if cfg.use_instance_norm:
        g = instance_norm_backward(g, st["log"])
    g = log_compress_backward(g, st["lowpass"], cfg.log_offset)
    if cfg.lowpass == "max_pool":
        g = lowpass_maxpool_backward(g, st["nonlin"], cfg.lowpass_width, cfg.hop)
    else:
        g = lowpass_window_backward(g, st["nonlin"], params.lowpass_weights, cfg.hop)
    if cfg.variant == "scattering":
        g = squared_l2_pool_backward(g, st["conv_out"])
    else:
        g = relu_backward(g, st["conv_out"])
    g = conv1d_backward(g, st["conv_in"], params.conv,
                        need_input_grad=input_grad or cfg.use_pre_emphasis)
    if cfg.use_pre_emphasis:
        g = preemphasis_backward(g, st["norm"], params.pre_emphasis)
    if not input_grad:
        return None
    return instance_norm_backward(g[None, :], cache.raw[None, :])[0]


def write_feature_dump(features, path, csv_path=None) -> None:
    """Write a ``TDFT`` container (magic, u8 version, u32 channels, u32 frames, f32 data).

    The optional CSV has one row per frame.
    """
    a = features.values if isinstance(features, FeatureMap) else np.asarray(features)
    _write_container(FEATURE_DUMP_MAGIC, np.asarray(a, dtype=np.float64), path)
    if csv_path is not None:
        np.savetxt(csv_path, a.T.astype(np.float32), fmt="%.6g", delimiter=",")


def read_feature_dump(path) -> np.ndarray:
    return _read_container(FEATURE_DUMP_MAGIC, path)
