"""WAV file I/O (16-bit PCM mono) and sample-rate ingestion.

Quantization happens exactly once, at write time; reading back returns the
written samples bit-exactly. 48 kHz material is decimated to 16 kHz with a
64-tap windowed-sinc lowpass.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np

TARGET_RATE = 16000
SINC_TAPS = 64


class AudioError(ValueError):
    """Unreadable or unsupported audio input."""


@dataclass
class Waveform:
    samples: np.ndarray         # float64 in [-1, 1)
    sample_rate: int

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


def write_wav(path, samples: np.ndarray, sample_rate: int = TARGET_RATE) -> None:
    samples = np.asarray(samples, dtype=np.float64)
    q = np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(sample_rate)
        fh.writeframes(q.tobytes())


def read_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            width = fh.getsampwidth()
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError, struct.error, OSError) as exc:
        raise AudioError(f"{path}: cannot read WAV ({exc})") from exc
    if channels != 1:
        raise AudioError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise AudioError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples=samples, sample_rate=rate)


def sinc_decimate(samples: np.ndarray, factor: int, taps: int = SINC_TAPS) -> np.ndarray:
    """Windowed-sinc anti-alias lowpass followed by keep-every-``factor``."""
    if factor < 1:
        raise ValueError("decimation factor must be >= 1")
    if factor == 1:
        return np.asarray(samples, dtype=np.float64)
    n = np.arange(taps) - (taps - 1) / 2.0
    cutoff = 0.45 / factor            # slightly inside Nyquist of the target rate
    kernel = 2.0 * cutoff * np.sinc(2.0 * cutoff * n)
    kernel *= np.hanning(taps)
    kernel /= kernel.sum()
    filtered = np.convolve(np.asarray(samples, dtype=np.float64), kernel, mode="same")
    return filtered[::factor]


def load_audio(path, target_rate: int = TARGET_RATE) -> np.ndarray:
    """Read a WAV and deliver samples at the target rate (resampling 48 kHz,
    rejecting rates that are not integer multiples)."""
    wav = read_wav(path)
    if wav.sample_rate == target_rate:
        return wav.samples
    if wav.sample_rate % target_rate == 0:
        return sinc_decimate(wav.samples, wav.sample_rate // target_rate)
    raise AudioError(
        f"{path}: sample rate {wav.sample_rate} is not {target_rate} or an "
        f"integer multiple of it")
