"""WAV reading and writing, per-sequence normalization, toy signals."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor_core import ContractError

SAMPLE_RATE = 16000
NORM_EPS = 1e-8

# class index -> (low Hz, high Hz) band whose tone complex is gated
TOY_BANDS = ((200.0, 500.0), (700.0, 1200.0), (1800.0, 2600.0), (3500.0, 5000.0))
N_TOY_CLASSES = len(TOY_BANDS)
TOY_SNR_DB = 20.0


class WavFormatError(ValueError):
    """The file is a valid RIFF/WAVE but not PCM16 mono 16 kHz."""


class WavParseError(ValueError):
    """The file is truncated or not a RIFF/WAVE container."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.samples.size < 1:
            raise ContractError("waveform must contain at least one sample")

    def __len__(self):
        return self.samples.size


@dataclass
class ToyExample:
    wave: Waveform
    label: int


def _need(buf: bytes, offset: int, n: int, what: str):
    if offset + n > len(buf):
        raise WavParseError(
            f"truncated file: {what} needs {n} bytes at byte offset {offset}, "
            f"file has {len(buf)}")


def load_wav(path) -> Waveform:
    """Read a PCM16 mono 16 kHz RIFF/WAVE file into ``[-1, 1)`` floats."""
    buf = Path(path).read_bytes()
    _need(buf, 0, 12, "RIFF header")
    riff, _, wave_id = struct.unpack_from("<4sI4s", buf, 0)
    if riff != b"RIFF" or wave_id != b"WAVE":
        raise WavParseError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    data = None
    pos = 12
    while pos < len(buf):
        _need(buf, pos, 8, "chunk header")
        cid, size = struct.unpack_from("<4sI", buf, pos)
        body = pos + 8
        if cid == b"fmt ":
            _need(buf, body, 16, "fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", buf, body)
        elif cid == b"data":
            _need(buf, body, size, "data chunk")
            data = buf[body:body + size]
        pos = body + size + (size & 1)
        if fmt is not None and data is not None:
            break

    if fmt is None:
        raise WavParseError(f"{path}: missing fmt chunk")
    if data is None:
        raise WavParseError(f"{path}: missing data chunk")

    tag, channels, rate, _, _, bits = fmt
    if tag != 1:
        raise WavFormatError(f"format tag: expected 1 (PCM), got {tag}")
    if channels != 1:
        raise WavFormatError(f"channels: expected 1, got {channels}")
    if bits != 16:
        raise WavFormatError(f"bits per sample: expected 16, got {bits}")
    if rate != SAMPLE_RATE:
        raise WavFormatError(f"sample rate: expected {SAMPLE_RATE}, got {rate}")
    if len(data) % 2:
        raise WavParseError(f"{path}: odd data chunk length {len(data)}")

    ints = np.frombuffer(data, dtype="<i2")
    return Waveform(ints.astype(np.float64) / 32768.0, rate)


def save_wav(wave: Waveform, path) -> None:
    """Write `wave` as PCM16 mono, clamping to ``[-1, 1 - 1/32768]``."""
    x = np.asarray(wave.samples, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ContractError("cannot save non-finite samples")
    q = np.round(np.clip(x, -1.0, 1.0 - 1.0 / 32768.0) * 32768.0)
    payload = q.astype("<i2").tobytes()
    rate = int(wave.sample_rate)
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 1, 1, rate, rate * 2, 2, 16,
        b"data", len(payload))
    try:
        Path(path).write_bytes(header + payload)
    except OSError as e:
        raise OSError(f"failed to write {path}: {e}") from e


def normalize_sequence(wave: Waveform) -> Waveform:
    """Zero-mean, unit (population) variance copy of `wave`."""
    x = wave.samples
    if x.size < 2:
        raise ContractError(f"normalization needs at least 2 samples, got {x.size}")
    mu = x.mean()
    var = np.mean((x - mu) ** 2)
    return Waveform((x - mu) / np.sqrt(var + NORM_EPS), wave.sample_rate)


def synth_toy_example(cls: int, seed: int, duration: float = 1.0) -> ToyExample:
    """One labelled toy utterance.

    Every band of ``TOY_BANDS`` carries three sinusoids (random frequency in
    the band, random phase, amplitude in [0.5, 1]). The label is the band
    whose tone complex is switched on only for a random segment of the
    utterance (10 ms raised-cosine ramps); the other bands play throughout.
    White noise sits 20 dB below the total tone power.

    The label is therefore carried by *which frequency region changes over
    time*, which survives per-channel, per-utterance normalization.
    """
    if not 0 <= cls < N_TOY_CLASSES:
        raise ContractError(f"class must be in [0, {N_TOY_CLASSES}), got {cls}")
    rng = np.random.default_rng([int(seed), int(cls)])
    n = int(round(duration * SAMPLE_RATE))
    t = np.arange(n) / SAMPLE_RATE

    onset = rng.uniform(0.1, 0.4) * duration
    length = rng.uniform(0.3, 0.5) * duration
    gate = toy_gate(t, onset, length)

    x = np.zeros(n)
    tone_power = 0.0
    for band, (lo, hi) in enumerate(TOY_BANDS):
        freqs = rng.uniform(lo, hi, 3)
        phases = rng.uniform(0.0, 2 * np.pi, 3)
        amps = rng.uniform(0.5, 1.0, 3)
        tones = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t + phases[:, None])).sum(0)
        x += gate * tones if band == cls else tones
        tone_power += 0.5 * np.sum(amps ** 2)

    noise_std = np.sqrt(tone_power / 10 ** (TOY_SNR_DB / 10))
    x += rng.standard_normal(n) * noise_std
    return ToyExample(Waveform(0.1 * x, SAMPLE_RATE), int(cls))


def toy_gate(t, onset: float, length: float, ramp: float = 0.010) -> np.ndarray:
    """0/1 envelope over ``[onset, onset + length]`` with raised-cosine edges."""
    g = np.clip(np.minimum(t - onset, onset + length - t) / ramp, 0.0, 1.0)
    return 0.5 - 0.5 * np.cos(np.pi * g)


def toy_dataset(n: int, seed: int) -> list[ToyExample]:
    """`n` examples with labels cycling through the classes.

    Example ``i`` is ``synth_toy_example(i % 4, seed * 1_000_003 + i)``, so
    datasets built from different seeds do not share utterances.
    """
    return [synth_toy_example(i % N_TOY_CLASSES, seed * 1_000_003 + i) for i in range(n)]
