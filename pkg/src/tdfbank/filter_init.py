"""Initial weights for the time-domain filterbanks.

Gammatone and Gabor banks are centred on a mel-spaced grid so that, before
any training, the front-ends behave like a 40-channel mel filterbank.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor_core import ContractError

PRE_EMPHASIS_ALPHA = 0.97

FILTER_DUMP_MAGIC = b"TDFB"
DUMP_VERSION = 1


def hz_to_mel(f):
    """HTK mel scale, ``2595 log10(1 + f / 700)``."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise ContractError("frequency must be non-negative")
    m = 2595.0 * np.log10(1.0 + f / 700.0)
    return float(m) if m.ndim == 0 else m


def mel_to_hz(m):
    m = np.asarray(m, dtype=np.float64)
    f = 700.0 * (10.0 ** (m / 2595.0) - 1.0)
    return float(f) if f.ndim == 0 else f


def erb(f):
    """Glasberg & Moore equivalent rectangular bandwidth in Hz."""
    return 24.7 + np.asarray(f, dtype=np.float64) / 9.265


@dataclass
class MelScaleGrid:
    n_filters: int
    f_min: float
    f_max: float
    points: np.ndarray  # n_filters + 2 mel-equispaced frequencies, Hz

    @property
    def band_edges(self) -> np.ndarray:
        """``[n_filters, 3]`` array of (left, center, right) in Hz."""
        p = self.points
        return np.stack([p[:-2], p[1:-1], p[2:]], axis=1)

    @property
    def center_freqs(self) -> np.ndarray:
        return self.points[1:-1]


def mel_grid(n_filters: int = 40, f_min: float = 0.0, f_max: float = 8000.0,
             sample_rate: int = 16000) -> MelScaleGrid:
    if n_filters < 1:
        raise ContractError(f"n_filters must be >= 1, got {n_filters}")
    if f_max > sample_rate / 2:
        raise ContractError(f"f_max {f_max} exceeds Nyquist {sample_rate / 2}")
    if not 0 <= f_min < f_max:
        raise ContractError(f"need 0 <= f_min < f_max, got {f_min}, {f_max}")
    mels = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 2)
    return MelScaleGrid(n_filters, float(f_min), float(f_max), mel_to_hz(mels))


@dataclass
class FilterBankInit:
    """Initial convolution weights.

    For ``kind == "gabor"`` rows ``2k`` and ``2k + 1`` are the real and
    imaginary parts of complex filter ``k``.
    """
    kind: str
    filters: np.ndarray
    center_freqs: np.ndarray | None = None


def init_gammatone(grid: MelScaleGrid, width: int = 400,
                   sample_rate: int = 16000) -> FilterBankInit:
    """4th-order gammatone impulse responses, one per grid center, unit L2 norm."""
    if width < 2:
        raise ContractError(f"width must be >= 2, got {width}")
    t = np.arange(width) / sample_rate
    fc = grid.center_freqs[:, None]
    b = 1.019 * erb(fc)
    g = t ** 3 * np.exp(-2 * np.pi * b * t) * np.cos(2 * np.pi * fc * t)
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return FilterBankInit("gammatone", g, grid.center_freqs.copy())


def gabor_sigma(fwhm_hz, sample_rate: int = 16000):
    """Gaussian width in samples whose Gabor atom has a power response of
    full width at half maximum `fwhm_hz`.

    The squared response of a Gabor atom is ``exp(-4 pi^2 s^2 (f - fc)^2)``
    with ``s`` in seconds, which halves at ``|f - fc| = sqrt(ln 2) / (2 pi s)``.
    """
    sigma_sec = np.sqrt(np.log(2.0)) / (np.pi * np.asarray(fwhm_hz, dtype=np.float64))
    return sigma_sec * sample_rate


def init_gabor(grid: MelScaleGrid, width: int = 400,
               sample_rate: int = 16000) -> FilterBankInit:
    """Complex Gabor atoms matched to the mel triangles, as interleaved cos/sin rows.

    Atom ``k`` is a Gaussian of width ``gabor_sigma(fwhm_k)`` centred at
    sample ``(width - 1) / 2`` times ``exp(i 2 pi f_k tau)``. Its power
    response peaks at the triangle's center and has the triangle's
    half-maximum width (half its base). Each complex atom is scaled to unit
    L2 norm, like the gammatone rows, so that all initializations start with
    comparable filter norms.
    """
    if width < 2:
        raise ContractError(f"width must be >= 2, got {width}")
    env = gabor_envelope(grid, width, sample_rate)
    tau = np.arange(width) - (width - 1) / 2.0
    phase = 2 * np.pi * grid.center_freqs[:, None] / sample_rate * tau
    out = np.empty((2 * grid.n_filters, width))
    out[0::2] = env * np.cos(phase)
    out[1::2] = env * np.sin(phase)
    return FilterBankInit("gabor", out, grid.center_freqs.copy())


def gabor_envelope(grid: MelScaleGrid, width: int = 400, sample_rate: int = 16000) -> np.ndarray:
    """Gaussian windows of :func:`init_gabor`, unit L2 norm, one row per complex atom."""
    edges = grid.band_edges
    sigma = gabor_sigma((edges[:, 2] - edges[:, 0]) / 2.0, sample_rate)[:, None]
    tau = np.arange(width) - (width - 1) / 2.0
    env = np.exp(-tau ** 2 / (2 * sigma ** 2))
    return env / np.linalg.norm(env, axis=1, keepdims=True)


def init_random(n_rows: int, width: int = 400, seed: int = 0) -> FilterBankInit:
    bound = 1.0 / np.sqrt(width)
    rng = np.random.default_rng(seed)
    return FilterBankInit("random", rng.uniform(-bound, bound, (n_rows, width)))


def squared_hanning(width: int = 400) -> np.ndarray:
    """Symmetric Hanning window squared, ``(0.5 - 0.5 cos(2 pi n / (width - 1)))^2``."""
    if width < 2:
        raise ContractError(f"width must be >= 2, got {width}")
    n = np.arange(width)
    return (0.5 - 0.5 * np.cos(2 * np.pi * n / (width - 1))) ** 2


def pre_emphasis_init() -> np.ndarray:
    """Two-tap kernel ``[-alpha, 1]``; see ``frontend.preemphasis_forward``."""
    return np.array([-PRE_EMPHASIS_ALPHA, 1.0])


def write_filter_dump(filters, path, csv_path=None) -> None:
    """Write a ``TDFB`` container: magic, u8 version, u32 rows, u32 cols, f32 data.

    All integers and floats are little-endian, data row-major.
    """
    a = np.asarray(filters, dtype=np.float64)
    if a.ndim != 2:
        raise ContractError(f"filters must be 2-D, got shape {a.shape}")
    _write_container(FILTER_DUMP_MAGIC, a, path)
    if csv_path is not None:
        np.savetxt(csv_path, a.astype(np.float32), fmt="%.6g", delimiter=",")


def read_filter_dump(path) -> np.ndarray:
    return _read_container(FILTER_DUMP_MAGIC, path)


def _write_container(magic: bytes, a: np.ndarray, path) -> None:
    rows, cols = a.shape
    head = magic + struct.pack("<BII", DUMP_VERSION, rows, cols)
    Path(path).write_bytes(head + a.astype("<f4").tobytes())


def _read_container(magic: bytes, path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < 13 or buf[:4] != magic:
        raise ValueError(f"{path}: not a {magic.decode()} file")
    version, rows, cols = struct.unpack_from("<BII", buf, 4)
    if version != DUMP_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    need = 13 + 4 * rows * cols
    if len(buf) != need:
        raise ValueError(f"{path}: expected {need} bytes, got {len(buf)}")
    return np.frombuffer(buf, dtype="<f4", offset=13).reshape(rows, cols).astype(np.float32)
